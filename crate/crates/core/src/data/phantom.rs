use crate::data::image::Image;
use crate::measure::{FnField, Field};
use crate::prelude::*;
use crate::rng;
use crate::{Result, Tensor};

/// Rotated ellipse with additive intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Sum of ellipse indicators clamped to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub ellipses: Vec<Ellipse>,
}

impl Phantom {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// Grayscale raster sampled at pixel centers.
    pub fn raster(&self, size: usize) -> Image {
        Image::from_field(size, size, self).expect("phantom raster")
    }
}

impl Field for Phantom {
    fn channels(&self) -> usize {
        1
    }

    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        FnField(|p: &[f64]| self.value(p[0], p[1])).eval(x)
    }
}

/// Head-like phantoms: one large bright ellipse near the origin with 3–7
/// smaller ellipses of either sign inside it. Returns the phantoms and
/// their `size × size` rasters.
pub fn gen_phantoms(count: usize, size: usize, seed: u64) -> (Vec<Phantom>, Vec<Image>) {
    let mut r = rng::seeded(seed);
    let mut phantoms = Vec::with_capacity(count);
    for _ in 0..count {
        let mut ellipses = vec![Ellipse {
            cx: rng::uniform(&mut r, -0.05, 0.05),
            cy: rng::uniform(&mut r, -0.05, 0.05),
            a: rng::uniform(&mut r, 0.6, 0.85),
            b: rng::uniform(&mut r, 0.6, 0.85),
            theta: rng::uniform(&mut r, -0.3, 0.3),
            intensity: rng::uniform(&mut r, 0.6, 0.9),
        }];
        let inner = rng::int_inclusive(&mut r, 3, 7);
        for _ in 0..inner {
            let sign = if rng::uniform(&mut r, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
            ellipses.push(Ellipse {
                cx: rng::uniform(&mut r, -0.45, 0.45),
                cy: rng::uniform(&mut r, -0.45, 0.45),
                a: rng::uniform(&mut r, 0.08, 0.35),
                b: rng::uniform(&mut r, 0.08, 0.35),
                theta: rng::uniform(&mut r, 0.0, core::f64::consts::PI),
                intensity: sign * rng::uniform(&mut r, 0.1, 0.35),
            });
        }
        phantoms.push(Phantom { ellipses });
    }
    let rasters = phantoms.iter().map(|p| p.raster(size)).collect();
    (phantoms, rasters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::image::grid_coords;

    #[test]
    fn seeded_clamped_and_consistent() {
        let (p, imgs) = gen_phantoms(5, 16, 2);
        let (q, _) = gen_phantoms(5, 16, 2);
        assert_eq!(p, q);
        for (ph, img) in p.iter().zip(&imgs) {
            assert!((4..=8).contains(&ph.ellipses.len()));
            assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
            let g = grid_coords(16, 16);
            for (i, xy) in g.data().chunks(2).enumerate() {
                assert_eq!(img.data[i], ph.value(xy[0], xy[1]));
            }
        }
    }
}
