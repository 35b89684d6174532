//! Measurement functionals `R(f | ω)`.
//!
//! A field is anything mapping coordinate rows `[B × m]` to values
//! `[B × C]`. Pixels observe the field directly, rays observe line integrals
//! through `[-1, 1]²`, SDF samples observe values against target distances.

use crate::prelude::*;
use crate::{Error, Result, Tensor};

/// Evaluable signal over normalized coordinates.
pub trait Field {
    fn channels(&self) -> usize;
    fn eval(&self, x: &Tensor) -> Result<Tensor>;
}

/// Scalar field from a closure over one coordinate row.
pub struct FnField<F>(pub F);

impl<F: Fn(&[f64]) -> f64> Field for FnField<F> {
    fn channels(&self) -> usize {
        1
    }

    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let m = x.cols().max(1);
        let data = x.data().chunks(m).map(&self.0).collect();
        Tensor::new(vec![x.rows(), 1], data)
    }
}

/// Observation parameters and measured values of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub id: usize,
    /// `[t × p]`
    pub omega: Tensor,
    /// `[t × C]`
    pub y: Tensor,
}

impl MeasurementSet {
    pub fn new(id: usize, omega: Tensor, y: Tensor) -> Result<Self> {
        if omega.rows() != y.rows() || omega.shape().len() != 2 || y.shape().len() != 2 {
            return Err(Error::shape(
                "measurement_set",
                format!("Ω {:?} and Y {:?}", omega.shape(), y.shape()),
            ));
        }
        Ok(Self { id, omega, y })
    }

    pub fn len(&self) -> usize {
        self.omega.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.y.cols()
    }
}

/// `R(f | x) = f(x)`.
pub fn sample_pixels(f: &dyn Field, coords: &Tensor) -> Result<Tensor> {
    f.eval(coords)
}

/// A parallel-beam ray `{x : x·(cos φ, sin φ) = r}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySpec {
    pub r: f64,
    pub phi: f64,
    /// Quadrature nodes along the chord.
    pub q: usize,
}

/// Parameter interval `[s0, s1]` of the ray `r·n + s·t` inside `[-1, 1]²`,
/// where `n = (cos φ, sin φ)` and `t = (-sin φ, cos φ)`.
pub fn chord(r: f64, phi: f64) -> Option<(f64, f64)> {
    let (c, s) = (phi.cos(), phi.sin());
    let p0 = [r * c, r * s];
    let d = [-s, c];
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..2 {
        if d[k].abs() < 1e-15 {
            if p0[k].abs() > 1.0 {
                return None;
            }
            continue;
        }
        let a = (-1.0 - p0[k]) / d[k];
        let b = (1.0 - p0[k]) / d[k];
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    (hi > lo).then_some((lo, hi))
}

impl RaySpec {
    /// Midpoint nodes and their common weight `chord / Q`; `None` if the ray
    /// misses the domain.
    pub fn nodes(&self) -> Result<Option<(Vec<[f64; 2]>, f64)>> {
        if self.q < 2 {
            return Err(Error::invalid(format!("ray needs Q ≥ 2 nodes, got {}", self.q)));
        }
        let Some((s0, s1)) = chord(self.r, self.phi) else {
            return Ok(None);
        };
        let (c, s) = (self.phi.cos(), self.phi.sin());
        let h = (s1 - s0) / self.q as f64;
        let pts = (0..self.q)
            .map(|k| {
                let t = s0 + (k as f64 + 0.5) * h;
                [self.r * c - t * s, self.r * s + t * c]
            })
            .collect();
        Ok(Some((pts, h)))
    }
}

/// Midpoint-rule line integral of channel 0 of `f` along `ray`.
pub fn radon_project(f: &dyn Field, ray: &RaySpec) -> Result<f64> {
    let Some((pts, w)) = ray.nodes()? else {
        return Ok(0.0);
    };
    let x = Tensor::new(vec![pts.len(), 2], pts.concat())?;
    let v = f.eval(&x)?;
    let c = v.cols();
    Ok(w * v.data().iter().step_by(c.max(1)).sum::<f64>())
}

/// `[#angles × #offsets]` matrix of projections.
pub fn sinogram(f: &dyn Field, angles: &[f64], offsets: &[f64], q: usize) -> Result<Tensor> {
    if angles.is_empty() || offsets.is_empty() {
        return Err(Error::Empty("sinogram geometry"));
    }
    let rays: Vec<(f64, f64)> = angles
        .iter()
        .flat_map(|&phi| offsets.iter().map(move |&r| (r, phi)))
        .collect();
    let batch = RayBatch::new(&rays, q)?;
    let vals = f.eval(&batch.coords)?;
    let out = batch.integrate(&vals)?;
    Tensor::new(vec![angles.len(), offsets.len()], out)
}

/// Quadrature nodes of many rays stacked for one batched field evaluation.
///
/// Ray `i` owns rows `i·Q .. (i+1)·Q` of `coords`; a ray that misses the
/// domain keeps `Q` dummy nodes with weight 0.
#[derive(Clone, Debug)]
pub struct RayBatch {
    pub coords: Tensor,
    pub weights: Vec<f64>,
    pub q: usize,
}

impl RayBatch {
    /// `rays` are `(r, φ)` pairs.
    pub fn new(rays: &[(f64, f64)], q: usize) -> Result<Self> {
        let mut coords = Vec::with_capacity(rays.len() * q * 2);
        let mut weights = Vec::with_capacity(rays.len());
        for &(r, phi) in rays {
            match (RaySpec { r, phi, q }).nodes()? {
                Some((pts, w)) => {
                    coords.extend(pts.iter().flatten());
                    weights.push(w);
                }
                None => {
                    coords.extend(core::iter::repeat_n(0.0, 2 * q));
                    weights.push(0.0);
                }
            }
        }
        Ok(Self {
            coords: Tensor::new(vec![rays.len() * q, 2], coords)?,
            weights,
            q,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Ray integrals of channel 0 from node values `[R·Q × C]`.
    pub fn integrate(&self, values: &Tensor) -> Result<Vec<f64>> {
        if values.rows() != self.coords.rows() {
            return Err(Error::shape(
                "ray_integrate",
                format!("{} node values for {} nodes", values.rows(), self.coords.rows()),
            ));
        }
        let c = values.cols().max(1);
        Ok(self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let seg = &values.data()[i * self.q * c..(i + 1) * self.q * c];
                w * seg.iter().step_by(c).sum::<f64>()
            })
            .collect())
    }
}

/// One SDF supervision point; on-surface samples have target 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfSample {
    pub x: Vec<f64>,
    pub on_surface: bool,
    pub d: f64,
}

/// `(mean |f| on surface, mean |f − d| off surface)`.
pub fn sdf_losses(f: &dyn Field, on: &[SdfSample], off: &[SdfSample]) -> Result<(f64, f64)> {
    if on.is_empty() || off.is_empty() {
        return Err(Error::Empty("SDF sample set"));
    }
    let eval = |s: &[SdfSample]| -> Result<Vec<f64>> {
        let m = s[0].x.len();
        let data: Vec<f64> = s.iter().flat_map(|p| p.x.iter().copied()).collect();
        if data.len() != m * s.len() {
            return Err(Error::shape("sdf_losses", "points of mixed dimension"));
        }
        let v = f.eval(&Tensor::new(vec![s.len(), m], data)?)?;
        let c = v.cols().max(1);
        Ok(v.data().iter().step_by(c).copied().collect())
    };
    let fon = eval(on)?;
    let foff = eval(off)?;
    let a = fon.iter().map(|v| v.abs()).sum::<f64>() / on.len() as f64;
    let b = foff
        .iter()
        .zip(off)
        .map(|(v, s)| (v - s.d).abs())
        .sum::<f64>()
        / off.len() as f64;
    Ok((a, b))
}

/// Normalized time of frame `t` in a clip of `frames`: `[-1, 1]`, 0 for a
/// single frame.
pub fn time_coord(t: usize, frames: usize) -> f64 {
    if frames <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * t as f64 / (frames - 1) as f64
    }
}

/// Pixel measurements of frame `t` with the normalized time appended as the
/// last coordinate column.
pub fn video_slice(frames: &[MeasurementSet], t: usize) -> Result<MeasurementSet> {
    let frame = frames.get(t).ok_or(Error::OutOfRange {
        what: "frames",
        index: t,
        len: frames.len(),
    })?;
    let (rows, m) = (frame.omega.rows(), frame.omega.cols());
    let tc = time_coord(t, frames.len());
    let mut omega = Vec::with_capacity(rows * (m + 1));
    for row in frame.omega.data().chunks(m.max(1)) {
        omega.extend_from_slice(row);
        omega.push(tc);
    }
    MeasurementSet::new(frame.id, Tensor::new(vec![rows, m + 1], omega)?, frame.y.clone())
}
