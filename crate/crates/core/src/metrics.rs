//! Signal and shape quality metrics.

use alloc::collections::BTreeMap;

use crate::data::Image;
use crate::prelude::*;
use crate::{Error, Result};

/// Reported PSNR for identical signals.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "metric",
            format!("{} values against {}", a.len(), b.len()),
        ));
    }
    if a.is_empty() {
        return Err(Error::Empty("signal"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10·log10(1 / MSE)` with peak 1, capped at [`PSNR_CAP`].
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / e).log10()).min(PSNR_CAP))
}

/// PSNR over the masked pixels of two images.
pub fn masked_psnr(a: &Image, b: &Image, mask: &[bool]) -> Result<f64> {
    if a.data.len() != b.data.len() || mask.len() != a.pixels() {
        return Err(Error::shape("masked_psnr", "images and mask disagree"));
    }
    let c = a.channels;
    let pick = |img: &Image| -> Vec<f64> {
        mask.iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .flat_map(|(p, _)| img.data[p * c..(p + 1) * c].iter().copied())
            .collect()
    };
    psnr(&pick(a), &pick(b))
}

/// SSIM from window statistics (population moments).
pub fn ssim_window(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Mean SSIM over all 8×8 windows (stride 1) and channels, dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::shape("ssim", "image sizes differ"));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "image {}×{} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window",
            a.width, a.height
        )));
    }
    let mut wa = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    let mut wb = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..a.channels {
        for top in 0..=a.height - SSIM_WINDOW {
            for left in 0..=a.width - SSIM_WINDOW {
                wa.clear();
                wb.clear();
                for r in top..top + SSIM_WINDOW {
                    for c in left..left + SSIM_WINDOW {
                        wa.push(a.at(r, c, ch));
                        wb.push(b.at(r, c, ch));
                    }
                }
                total += ssim_window(&wa, &wb);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn dist<const D: usize>(p: &[f64; D], q: &[f64; D]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// For each point of `p`, the index of its nearest point in `q`.
pub fn nearest<const D: usize>(p: &[[f64; D]], q: &[[f64; D]]) -> Vec<usize> {
    p.iter()
        .map(|a| {
            let mut best = (f64::INFINITY, 0);
            for (j, b) in q.iter().enumerate() {
                let d = dist(a, b);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// Symmetric mean nearest-neighbour Euclidean distance, halved.
pub fn chamfer<const D: usize>(p: &[[f64; D]], q: &[[f64; D]]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Empty("point set"));
    }
    let one_way = |a: &[[f64; D]], b: &[[f64; D]]| -> f64 {
        let nn = nearest(a, b);
        a.iter().zip(nn).map(|(x, j)| dist(x, &b[j])).sum::<f64>() / a.len() as f64
    };
    Ok(0.5 * (one_way(p, q) + one_way(q, p)))
}

/// Mean `|n1 · n2|` over matched pairs of unit normals.
pub fn normal_consistency<const D: usize>(n1: &[[f64; D]], n2: &[[f64; D]]) -> Result<f64> {
    if n1.len() != n2.len() {
        return Err(Error::shape(
            "normal_consistency",
            format!("{} normals against {}", n1.len(), n2.len()),
        ));
    }
    if n1.is_empty() {
        return Err(Error::Empty("normal set"));
    }
    let mut total = 0.0;
    for (a, b) in n1.iter().zip(n2) {
        let la = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if la == 0.0 || lb == 0.0 {
            return Err(Error::invalid("zero-length normal"));
        }
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        total += (dot / (la * lb)).abs();
    }
    Ok(total / n1.len() as f64)
}

/// Per-instance metric rows with their mean.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    rows: BTreeMap<usize, BTreeMap<String, f64>>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, instance: usize, metric: &str, value: f64) {
        self.rows
            .entry(instance)
            .or_default()
            .insert(metric.to_string(), value);
    }

    pub fn metrics(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .rows
            .values()
            .flat_map(|r| r.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn get(&self, instance: usize, metric: &str) -> Option<f64> {
        self.rows.get(&instance)?.get(metric).copied()
    }

    /// Mean of `metric` over the instances that report it.
    pub fn mean(&self, metric: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .values()
            .filter_map(|r| r.get(metric).copied())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// `instance,<metrics…>` rows by ascending instance, then a `mean` row.
    pub fn to_csv(&self) -> String {
        let names = self.metrics();
        let mut out = String::from("instance");
        for n in &names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for (id, row) in &self.rows {
            out.push_str(&format!("{id}"));
            for n in &names {
                out.push(',');
                out.push_str(&cell(row.get(n).copied()));
            }
            out.push('\n');
        }
        out.push_str("mean");
        for n in &names {
            out.push(',');
            out.push_str(&cell(self.mean(n)));
        }
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = [0.2, 0.4, 0.6];
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert!(psnr(&a, &c).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &a[..2]).is_err());
    }

    #[test]
    fn ssim_examples() {
        let data: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        let a = Image::new(10, 10, 1, data).unwrap();
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let mut neg = a.clone();
        neg.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        assert!(ssim(&a, &neg).unwrap() < 1.0);
        let small = Image::filled(7, 7, 1, 0.5);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn ssim_single_window_closed_form() {
        let a: Vec<f64> = (0..64).map(|i| (i as f64 / 64.0).powi(2)).collect();
        let b: Vec<f64> = (0..64).map(|i| 0.5 + 0.3 * (i as f64 * 0.2).sin()).collect();
        let ia = Image::new(8, 8, 1, a.clone()).unwrap();
        let ib = Image::new(8, 8, 1, b.clone()).unwrap();
        // direct formula with the moments written out
        let n = 64.0;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n;
        let cv = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let (c1, c2) = (1e-4, 9e-4);
        let oracle = (2.0 * ma * mb + c1) * (2.0 * cv + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        assert!((ssim(&ia, &ib).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn chamfer_examples() {
        let p = [[0.0, 1.0], [2.0, 3.0]];
        assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
        assert_eq!(chamfer(&[[0.0]], &[[1.0]]).unwrap(), 1.0);
        let empty: [[f64; 1]; 0] = [];
        assert!(chamfer(&empty, &[[1.0]]).is_err());
    }

    #[test]
    fn normal_consistency_examples() {
        let n = [[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(normal_consistency(&n, &n).unwrap(), 1.0);
        assert_eq!(normal_consistency(&[[1.0, 0.0]], &[[0.0, 1.0]]).unwrap(), 0.0);
        assert_eq!(
            normal_consistency(&[[1.0, 0.0], [0.0, 1.0]], &[[1.0, 0.0], [0.0, -1.0]]).unwrap(),
            1.0
        );
        assert!(normal_consistency(&[[0.0, 0.0]], &[[1.0, 0.0]]).is_err());
    }

    #[test]
    fn report_mean_and_order() {
        let mut r = MetricReport::new();
        r.insert(2, "psnr", 30.0);
        r.insert(0, "psnr", 20.0);
        r.insert(0, "ssim", 0.5);
        r.insert(2, "ssim", 0.7);
        assert!((r.mean("psnr").unwrap() - 25.0).abs() < 1e-12);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "instance,psnr,ssim");
        assert!(lines[1].starts_with("0,"));
        assert!(lines[2].starts_with("2,"));
        assert!(lines[3].starts_with("mean,25,"));
    }
}
