//! The `NIDC` checkpoint format.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "NIDC"  u32 version
//! u32 n  u32 m  u32 channels  u32 n_freq  u32 width  u32 layers
//! u32 head_width  f64 omega0
//! u32 patch_dims  u32 counts[patch_dims]  f64 overlap
//! u32 k
//! u32 gating_tag  u32 gate_input  u32 gate_hidden_len  u32 hidden[..]
//! u64 scalar_count
//! f32 payload[scalar_count]
//! ```
//!
//! The payload holds, for each patch in order, the embedding (`w` then `b`),
//! each trunk layer (`w` then `b`), then every head in ascending index
//! (`w1`, `b1`, `w2`, `b2` slices), followed by the gate parameters (the
//! table, or each encoder layer's `w` then `b`). Parameters are stored as
//! f32, so a round trip is exact for parameters that are already
//! f32-representable; [`round_to_f32`] brings a model there.

use std::path::Path;

use nid_core::coordnet::Architecture;
use nid_core::diff::ParamStore;
use nid_core::nid::{patch_prefix, Dictionary, Gate, GateKind, PatchGrid, TABLE};
use nid_core::tasks::TrainedModel;
use nid_core::Tensor;

use crate::error::{IoError, Result};

pub const MAGIC: [u8; 4] = *b"NIDC";
pub const VERSION: u32 = 1;

/// Parameter tensors in payload order, as `(name, range within the tensor)`.
fn layout(
    arch: &Architecture,
    n: usize,
    patches: usize,
    gate: &Gate,
) -> Vec<(String, std::ops::Range<usize>, Vec<usize>)> {
    let mut out = Vec::new();
    let (w, h, c) = (arch.trunk_out(), arch.head_width, arch.channels);
    for p in 0..patches {
        let pre = patch_prefix(p);
        out.push((format!("{pre}embed.w"), 0..arch.m * arch.n_freq, vec![arch.m, arch.n_freq]));
        out.push((format!("{pre}embed.b"), 0..arch.n_freq, vec![arch.n_freq]));
        let mut fan_in = arch.n_freq;
        for l in 0..arch.layers {
            let ww = fan_in * arch.width;
            out.push((format!("{pre}trunk.{l}.w"), 0..ww, vec![fan_in, arch.width]));
            out.push((format!("{pre}trunk.{l}.b"), 0..arch.width, vec![arch.width]));
            fan_in = arch.width;
        }
        for j in 0..n {
            out.push((format!("{pre}head.w1"), j * w * h..(j + 1) * w * h, vec![n, w, h]));
            out.push((format!("{pre}head.b1"), j * h..(j + 1) * h, vec![n, h]));
            out.push((format!("{pre}head.w2"), j * h * c..(j + 1) * h * c, vec![n, h, c]));
            out.push((format!("{pre}head.b2"), j * c..(j + 1) * c, vec![n, c]));
        }
    }
    match gate.kind {
        GateKind::Table => {
            let len = gate.input * gate.n;
            out.push((TABLE.to_string(), 0..len, vec![gate.input, gate.n]));
        }
        GateKind::Encoder => {
            let mut fan_in = gate.input;
            for (l, &o) in gate.hidden.iter().chain(std::iter::once(&gate.n)).enumerate() {
                out.push((format!("gate.enc.{l}.w"), 0..fan_in * o, vec![fan_in, o]));
                out.push((format!("gate.enc.{l}.b"), 0..o, vec![o]));
                fan_in = o;
            }
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| IoError::format("checkpoint", format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn store_of<'a>(model: &'a TrainedModel, name: &str) -> Result<&'a Tensor> {
    let store = if name.starts_with("gate.") {
        &model.gate.params
    } else {
        &model.dictionary.params
    };
    Ok(store.get(name)?)
}

pub fn encode(model: &TrainedModel) -> Result<Vec<u8>> {
    let d = &model.dictionary;
    let a = &d.arch;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [d.n, a.m, a.channels, a.n_freq, a.width, a.layers, a.head_width] {
        put_u32(&mut out, v)?;
    }
    out.extend_from_slice(&a.omega0.to_le_bytes());
    put_u32(&mut out, d.grid.counts.len())?;
    for &c in &d.grid.counts {
        put_u32(&mut out, c)?;
    }
    out.extend_from_slice(&d.grid.overlap.to_le_bytes());
    put_u32(&mut out, model.k)?;
    let g = &model.gate;
    put_u32(&mut out, g.kind.tag() as usize)?;
    put_u32(&mut out, g.input)?;
    put_u32(&mut out, g.hidden.len())?;
    for &h in &g.hidden {
        put_u32(&mut out, h)?;
    }
    let blocks = layout(a, d.n, d.num_patches(), g);
    let total: usize = blocks.iter().map(|b| b.1.len()).sum();
    if total != d.params.num_scalars() + g.params.num_scalars() {
        return Err(IoError::format("checkpoint", "model parameters do not match its dimensions"));
    }
    out.extend_from_slice(&(total as u64).to_le_bytes());
    for (name, range, _) in &blocks {
        let t = store_of(model, name)?;
        for &v in &t.data()[range.clone()] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(IoError::Truncated {
                what,
                expected: self.pos + len,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, "checkpoint header")?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, "checkpoint header")?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "checkpoint header")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(IoError::BadMagic(magic));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(IoError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let n = r.u32()?;
    let arch = Architecture {
        m: r.u32()?,
        channels: r.u32()?,
        n_freq: r.u32()?,
        width: r.u32()?,
        layers: r.u32()?,
        head_width: r.u32()?,
        omega0: r.f64()?,
    };
    let dims = r.u32()?;
    let counts = (0..dims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let overlap = r.f64()?;
    let grid = if counts.is_empty() {
        PatchGrid::single(arch.m)
    } else {
        PatchGrid { counts, overlap }
    };
    let k = r.u32()?;
    let tag = r.u32()? as u32;
    let kind = GateKind::from_tag(tag)
        .ok_or_else(|| IoError::format("checkpoint", format!("unknown gating tag {tag}")))?;
    let gate_input = r.u32()?;
    let hidden_len = r.u32()?;
    let hidden = (0..hidden_len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let total = u64::from_le_bytes(r.take(8, "checkpoint header")?.try_into().expect("8 bytes"));

    arch.validate()?;
    grid.validate(arch.m)?;
    if n == 0 || k == 0 || k > n || gate_input == 0 {
        return Err(IoError::format("checkpoint", "header dimensions are invalid"));
    }
    let patches = grid.num_patches();
    let gate_n = n * patches;
    let placeholder = Gate {
        kind,
        n: gate_n,
        input: gate_input,
        hidden: hidden.clone(),
        params: ParamStore::new(),
    };
    let blocks = layout(&arch, n, patches, &placeholder);
    let expected: u64 = blocks.iter().map(|b| b.1.len() as u64).sum();
    if expected != total {
        return Err(IoError::format(
            "checkpoint",
            format!("header declares {total} scalars but its dimensions imply {expected}"),
        ));
    }
    let payload_len = usize::try_from(expected)
        .ok()
        .and_then(|e| e.checked_mul(4))
        .ok_or_else(|| IoError::format("checkpoint", "payload size overflows"))?;
    let payload = r.take(payload_len, "checkpoint payload")?;
    if r.pos != bytes.len() {
        return Err(IoError::format(
            "checkpoint",
            format!("{} trailing bytes after the payload", bytes.len() - r.pos),
        ));
    }

    let mut dict_params = ParamStore::new();
    let mut gate_params = ParamStore::new();
    let mut floats = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64);
    for (name, range, shape) in blocks {
        let store = if name.starts_with("gate.") {
            &mut gate_params
        } else {
            &mut dict_params
        };
        if !store.contains(&name) {
            store.insert(name.clone(), Tensor::zeros(&shape))?;
        }
        let t = store.get_mut(&name)?;
        for slot in &mut t.data_mut()[range] {
            *slot = floats.next().expect("payload length checked");
        }
    }
    Ok(TrainedModel {
        dictionary: Dictionary::from_params(arch, n, grid, dict_params),
        gate: Gate {
            params: gate_params,
            ..placeholder
        },
        k,
        log: Vec::new(),
        utilization: Vec::new(),
    })
}

/// Rounds every parameter to the nearest f32 so that checkpoints of the
/// model round-trip exactly.
pub fn round_to_f32(model: &mut TrainedModel) {
    for store in [&mut model.dictionary.params, &mut model.gate.params] {
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for name in names {
            if let Ok(t) = store.get_mut(&name) {
                t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
    }
}

pub fn save(path: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)?).map_err(|e| IoError::file(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| IoError::file(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(kind: GateKind) -> TrainedModel {
        let arch = Architecture {
            m: 2,
            n_freq: 3,
            width: 4,
            layers: 2,
            head_width: 2,
            channels: 1,
            omega0: 30.0,
        };
        let dictionary = Dictionary::new(arch, 3, PatchGrid::single(2), 5).unwrap();
        let gate = match kind {
            GateKind::Table => Gate::table(2, 3, 1).unwrap(),
            GateKind::Encoder => Gate::encoder(4, &[5], 3, 1).unwrap(),
        };
        let mut m = TrainedModel {
            dictionary,
            gate,
            k: 2,
            log: Vec::new(),
            utilization: Vec::new(),
        };
        round_to_f32(&mut m);
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in [GateKind::Table, GateKind::Encoder] {
            let m = model(kind);
            let bytes = encode(&m).unwrap();
            let back = decode(&bytes).unwrap();
            assert_eq!(back.dictionary.params, m.dictionary.params);
            assert_eq!(back.gate.params, m.gate.params);
            assert_eq!(encode(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let bytes = encode(&model(GateKind::Table)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(IoError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(IoError::Version { found: 9, .. })));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(IoError::Truncated { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode(&long).is_err());
    }

    #[test]
    fn large_header_with_short_payload_reports_truncation() {
        let mut bytes = encode(&model(GateKind::Table)).unwrap();
        bytes[8..12].copy_from_slice(&4096u32.to_le_bytes());
        // fix up the declared scalar count so only the payload is short
        let m = model(GateKind::Table);
        let mut big = m.clone();
        big.dictionary.n = 4096;
        let arch = big.dictionary.arch.clone();
        let gate = Gate { n: 4096, ..m.gate.clone() };
        let total: usize = layout(&arch, 4096, 1, &gate).iter().map(|b| b.1.len()).sum();
        let pos = bytes.len() - 4 * (m.dictionary.params.num_scalars() + m.gate.params.num_scalars()) - 8;
        bytes[pos..pos + 8].copy_from_slice(&(total as u64).to_le_bytes());
        assert!(matches!(decode(&bytes), Err(IoError::Truncated { .. })));
    }
}
