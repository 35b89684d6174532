//! CSV sinograms and SDF point sets.

use std::io::{Read, Write};
use std::path::Path;

use nid_core::measure::SdfSample;
use nid_core::tasks::Sinogram;
use nid_core::Tensor;

use crate::error::{IoError, Result};

/// Rows `angle,offset,value`, angle-major.
pub fn write_sinogram<W: Write>(out: W, sino: &Sinogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["angle", "offset", "value"])?;
    for (a, &phi) in sino.angles.iter().enumerate() {
        for (o, &r) in sino.offsets.iter().enumerate() {
            let v = sino.values.data()[a * sino.offsets.len() + o];
            w.write_record([phi.to_string(), r.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_sinogram`]; rows must form a full angle × offset grid
/// in angle-major order.
pub fn read_sinogram<R: Read>(input: R) -> Result<Sinogram> {
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for rec in csv::Reader::from_reader(input).deserialize() {
        rows.push(rec?);
    }
    let mut angles: Vec<f64> = Vec::new();
    for &(phi, _, _) in &rows {
        if angles.last() != Some(&phi) {
            angles.push(phi);
        }
    }
    let offsets: Vec<f64> = rows
        .iter()
        .take_while(|r| Some(&r.0) == angles.first())
        .map(|r| r.1)
        .collect();
    if angles.len() * offsets.len() != rows.len()
        || rows
            .iter()
            .enumerate()
            .any(|(i, r)| r.0 != angles[i / offsets.len()] || r.1 != offsets[i % offsets.len()])
    {
        return Err(IoError::format("sinogram CSV", "rows do not form an angle × offset grid"));
    }
    let values = rows.iter().map(|r| r.2).collect();
    Ok(Sinogram {
        values: Tensor::new(vec![angles.len(), offsets.len()], values)?,
        angles,
        offsets,
    })
}

/// Rows `x,y[,z],label,distance` with label 1 on the surface and 0 off it.
pub fn write_points<W: Write>(out: W, points: &[SdfSample]) -> Result<()> {
    let dim = points.first().map_or(2, |p| p.x.len());
    if !(dim == 2 || dim == 3) || points.iter().any(|p| p.x.len() != dim) {
        return Err(IoError::format("point set", "points must all be 2D or all 3D"));
    }
    let mut w = csv::Writer::from_writer(out);
    let header: &[&str] = if dim == 2 {
        &["x", "y", "label", "distance"]
    } else {
        &["x", "y", "z", "label", "distance"]
    };
    w.write_record(header)?;
    for p in points {
        let mut rec: Vec<String> = p.x.iter().map(|v| v.to_string()).collect();
        rec.push(if p.on_surface { "1" } else { "0" }.to_string());
        rec.push(p.d.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points<R: Read>(input: R) -> Result<Vec<SdfSample>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let dim = match header.iter().collect::<Vec<_>>().as_slice() {
        ["x", "y", "label", "distance"] => 2,
        ["x", "y", "z", "label", "distance"] => 3,
        other => {
            return Err(IoError::format("point CSV header", format!("{other:?}")));
        }
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse()
                .map_err(|_| IoError::format("point CSV", format!("bad number {:?}", &rec[i])))
        };
        let x = (0..dim).map(num).collect::<Result<Vec<_>>>()?;
        let on_surface = match rec[dim].trim() {
            "1" => true,
            "0" => false,
            l => return Err(IoError::format("point CSV", format!("label {l:?} is not 0 or 1"))),
        };
        out.push(SdfSample {
            x,
            on_surface,
            d: num(dim + 1)?,
        });
    }
    Ok(out)
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|e| IoError::file(path, e))
}
