use crate::measure::{Field, FnField, SdfSample};
use crate::prelude::*;
use crate::rng::{self, Rng};
use crate::{Result, Tensor};

/// Convex polygon with counter-clockwise vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexPolygon {
    pub vertices: Vec<[f64; 2]>,
}

/// Supervision drawn from a polygon: surface points with outward normals and
/// off-surface points with exact signed distances.
#[derive(Clone, Debug, PartialEq)]
pub struct PolygonSamples {
    pub on: Vec<SdfSample>,
    pub normals: Vec<[f64; 2]>,
    pub off: Vec<SdfSample>,
}

impl ConvexPolygon {
    fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Exact signed distance; negative inside.
    pub fn sdf(&self, p: [f64; 2]) -> f64 {
        let mut dist = f64::INFINITY;
        let mut inside = true;
        for (a, b) in self.edges() {
            let e = [b[0] - a[0], b[1] - a[1]];
            let w = [p[0] - a[0], p[1] - a[1]];
            let len2 = e[0] * e[0] + e[1] * e[1];
            let t = ((w[0] * e[0] + w[1] * e[1]) / len2).clamp(0.0, 1.0);
            let d = [w[0] - t * e[0], w[1] - t * e[1]];
            dist = dist.min((d[0] * d[0] + d[1] * d[1]).sqrt());
            // counter-clockwise: interior is to the left of every edge
            if e[0] * w[1] - e[1] * w[0] < 0.0 {
                inside = false;
            }
        }
        if inside {
            -dist
        } else {
            dist
        }
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.vertices.len() as f64;
        let s = self
            .vertices
            .iter()
            .fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        [s[0] / n, s[1] / n]
    }

    pub fn perimeter(&self) -> f64 {
        self.edges()
            .map(|(a, b)| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt())
            .sum()
    }

    /// `count` points evenly spaced in arc length, with outward normals.
    pub fn boundary_points(&self, count: usize) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        let total = self.perimeter();
        let mut pts = Vec::with_capacity(count);
        let mut normals = Vec::with_capacity(count);
        let edges: Vec<_> = self.edges().collect();
        let mut edge = 0;
        let mut start = 0.0;
        for k in 0..count {
            let s = (k as f64 + 0.5) * total / count as f64;
            loop {
                let (a, b) = edges[edge];
                let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                if s <= start + len || edge + 1 == edges.len() {
                    let t = ((s - start) / len).clamp(0.0, 1.0);
                    pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
                    normals.push([(b[1] - a[1]) / len, -(b[0] - a[0]) / len]);
                    break;
                }
                start += len;
                edge += 1;
            }
        }
        (pts, normals)
    }

    /// Random surface points and off-surface points: half uniform in
    /// `[-1, 1]²`, half within 0.1 of the boundary.
    pub fn sample(&self, on: usize, off: usize, rng: &mut Rng) -> PolygonSamples {
        let total = self.perimeter();
        let edges: Vec<_> = self.edges().collect();
        let mut on_pts = Vec::with_capacity(on);
        let mut normals = Vec::with_capacity(on);
        let point_at = |s: f64| -> ([f64; 2], [f64; 2]) {
            let mut start = 0.0;
            for (i, &(a, b)) in edges.iter().enumerate() {
                let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                if s <= start + len || i + 1 == edges.len() {
                    let t = ((s - start) / len).clamp(0.0, 1.0);
                    return (
                        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
                        [(b[1] - a[1]) / len, -(b[0] - a[0]) / len],
                    );
                }
                start += len;
            }
            unreachable!("polygon has edges")
        };
        for _ in 0..on {
            let (p, n) = point_at(rng::uniform(rng, 0.0, total));
            on_pts.push(SdfSample {
                x: p.to_vec(),
                on_surface: true,
                d: 0.0,
            });
            normals.push(n);
        }
        let mut off_pts = Vec::with_capacity(off);
        for i in 0..off {
            let p = if i % 2 == 0 {
                [rng::uniform(rng, -1.0, 1.0), rng::uniform(rng, -1.0, 1.0)]
            } else {
                let (q, n) = point_at(rng::uniform(rng, 0.0, total));
                let t = rng::uniform(rng, -0.1, 0.1);
                [q[0] + t * n[0], q[1] + t * n[1]]
            };
            off_pts.push(SdfSample {
                x: p.to_vec(),
                on_surface: false,
                d: self.sdf(p),
            });
        }
        PolygonSamples {
            on: on_pts,
            normals,
            off: off_pts,
        }
    }
}

impl Field for ConvexPolygon {
    fn channels(&self) -> usize {
        1
    }

    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        FnField(|p: &[f64]| self.sdf([p[0], p[1]])).eval(x)
    }
}

/// Random convex polygons with 5–9 vertices: points on a random ellipse at
/// sorted random angles, which keeps them convex.
pub fn gen_polygon_sdf(count: usize, seed: u64) -> Vec<ConvexPolygon> {
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|_| {
            let n = rng::int_inclusive(&mut r, 5, 9);
            let cx = rng::uniform(&mut r, -0.2, 0.2);
            let cy = rng::uniform(&mut r, -0.2, 0.2);
            let ax = rng::uniform(&mut r, 0.35, 0.65);
            let ay = rng::uniform(&mut r, 0.35, 0.65);
            let rot = rng::uniform(&mut r, 0.0, core::f64::consts::PI);
            let tau = core::f64::consts::TAU;
            // jittered angles keep consecutive vertices apart
            let mut angles: Vec<f64> = (0..n)
                .map(|i| (i as f64 + rng::uniform(&mut r, 0.0, 0.7)) * tau / n as f64)
                .collect();
            angles.sort_by(f64::total_cmp);
            let (cr, sr) = (rot.cos(), rot.sin());
            let vertices = angles
                .iter()
                .map(|t| {
                    let (u, v) = (ax * t.cos(), ay * t.sin());
                    [cx + cr * u - sr * v, cy + sr * u + cr * v]
                })
                .collect();
            ConvexPolygon { vertices }
        })
        .collect()
}
