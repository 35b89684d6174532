use crate::data::image::{grid_coords, Image};
use crate::prelude::*;
use crate::rng::{self, Rng};

/// One RGB image: 3–6 rotated anisotropic Gaussian bumps with random tints,
/// clamped to `[0, 1]`.
pub fn gen_blob_image(size: usize, rng: &mut Rng) -> Image {
    let coords = grid_coords(size, size);
    let mut data = vec![0.0; size * size * 3];
    let count = rng::int_inclusive(rng, 3, 6);
    for _ in 0..count {
        let cx = rng::uniform(rng, -0.8, 0.8);
        let cy = rng::uniform(rng, -0.8, 0.8);
        let sx = rng::uniform(rng, 0.25, 0.6);
        let sy = rng::uniform(rng, 0.25, 0.6);
        let theta = rng::uniform(rng, 0.0, core::f64::consts::PI);
        let tint = [
            rng::uniform(rng, 0.0, 1.0),
            rng::uniform(rng, 0.0, 1.0),
            rng::uniform(rng, 0.0, 1.0),
        ];
        let amp = rng::uniform(rng, 0.3, 0.6);
        let (ct, st) = (theta.cos(), theta.sin());
        for (p, xy) in coords.data().chunks(2).enumerate() {
            let (dx, dy) = (xy[0] - cx, xy[1] - cy);
            let u = ct * dx + st * dy;
            let v = -st * dx + ct * dy;
            let g = (-0.5 * (u * u / (sx * sx) + v * v / (sy * sy))).exp();
            for ch in 0..3 {
                data[p * 3 + ch] += amp * g * tint[ch];
            }
        }
    }
    Image::new(size, size, 3, data).expect("blob shape").clamped()
}

/// `count` blob images of `size × size`.
pub fn gen_blob_images(count: usize, size: usize, seed: u64) -> Vec<Image> {
    let mut rng = rng::seeded(seed);
    (0..count).map(|_| gen_blob_image(size, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_in_range() {
        let a = gen_blob_images(4, 16, 3);
        assert_eq!(a, gen_blob_images(4, 16, 3));
        assert!(a.iter().all(|i| i.data.iter().all(|v| (0.0..=1.0).contains(v))));
        let b = gen_blob_images(4, 16, 4);
        assert!(a.iter().zip(&b).any(|(x, y)| x.data != y.data));
    }
}
