use crate::data::{grid_coords, snap_to_grid, Image};
use crate::diff::{AdamState, Tape};
use crate::measure::time_coord;
use crate::nid::{video_weights, Dictionary, Gate, PatchGrid};
use crate::prelude::*;
use crate::rng;
use crate::tasks::config::TaskConfig;
use crate::{Error, Result, Tensor};

/// Sine MLP mapping normalized time to a dense code `α(t) ∈ Rⁿ`.
#[derive(Clone, Debug)]
pub struct TemporalCodeNet {
    pub net: Gate,
}

impl TemporalCodeNet {
    pub fn new(n: usize, hidden: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            net: Gate::encoder(1, &[hidden, hidden], n, seed)?,
        })
    }

    pub fn n(&self) -> usize {
        self.net.n
    }

    /// Codes `[T × n]` for times `t`.
    pub fn codes(&self, t: &[f64]) -> Result<Tensor> {
        self.net.encode(&Tensor::new(vec![t.len(), 1], t.to_vec())?)
    }
}

#[derive(Clone, Debug)]
pub struct VideoDecomposition {
    /// `f_X` per frame.
    pub background: Vec<Image>,
    /// `f_E = frame − f_X` per frame.
    pub residual: Vec<Image>,
    /// `α(t)` per frame.
    pub alpha: Vec<Vec<f64>>,
    pub dictionary: Dictionary,
    pub temporal: TemporalCodeNet,
    /// Objective per epoch.
    pub losses: Vec<f64>,
}

/// Splits a clip into a low-rank part `f_X(x, t) = Σ_i α_i(t) b_i(x)` and
/// the residual `f_E`.
///
/// The dictionary and the temporal code net are trained jointly under the
/// mean ℓ1 data loss plus `video_penalty · mean_t Σ_i |α_i(t)| exp(β i)`,
/// which makes later atoms expensive so that the shared content collects
/// in few of them. `f_X` is rounded to the generator grid so that
/// `f_X + f_E` reproduces frames on that grid exactly.
pub fn video_decompose(frames: &[Image], cfg: &TaskConfig) -> Result<VideoDecomposition> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(Error::invalid("video decomposition needs at least two frames"));
    }
    let (w, h, c) = (frames[0].width, frames[0].height, frames[0].channels);
    if frames.iter().any(|f| f.width != w || f.height != h || f.channels != c) {
        return Err(Error::invalid("frames differ in size"));
    }
    let t_count = frames.len();
    let coords = grid_coords(w, h);
    let pixels = w * h;
    let mut dict = Dictionary::new(cfg.arch(c, 2), cfg.n, PatchGrid::single(2), cfg.seed)?;
    let mut temporal =
        TemporalCodeNet::new(cfg.n, cfg.temporal_hidden, cfg.seed.wrapping_add(1_000_003))?;
    let times: Vec<f64> = (0..t_count).map(|t| time_coord(t, t_count)).collect();
    let t_tensor = Tensor::new(vec![t_count, 1], times.clone())?;
    let weights: Vec<f64> = (0..t_count)
        .flat_map(|_| video_weights(cfg.n, cfg.beta))
        .collect();
    let ids: Vec<usize> = (0..cfg.n).collect();
    let mut opt_dict = AdamState::new(cfg.lr_dict);
    let mut opt_code = AdamState::new(cfg.lr_gate);
    let decay = if cfg.epochs > 1 {
        cfg.lr_final_fraction.powf(1.0 / (cfg.epochs - 1) as f64)
    } else {
        1.0
    };
    let mut r = rng::substream(cfg.seed, 5);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let rows: Option<Vec<usize>> =
            (cfg.coord_batch > 0 && cfg.coord_batch < pixels).then(|| {
                let mut all: Vec<usize> = (0..pixels).collect();
                rng::shuffle(&mut r, &mut all);
                all.truncate(cfg.coord_batch);
                all.sort_unstable();
                all
            });
        let x_val = match &rows {
            Some(sel) => coords.select_rows(sel)?,
            None => coords.clone(),
        };
        let b = x_val.rows();
        let mut target = Vec::with_capacity(t_count * b * c);
        for f in frames {
            let ft = f.to_tensor();
            match &rows {
                Some(sel) => target.extend_from_slice(ft.select_rows(sel)?.data()),
                None => target.extend_from_slice(ft.data()),
            }
        }
        let target = Tensor::new(vec![t_count, b * c], target)?;

        let mut tape = Tape::new();
        let alpha = temporal.net.encoder_on_tape(&mut tape, &t_tensor)?;
        let x = tape.constant(x_val.clone());
        let basis = dict.basis_on_tape(&mut tape, x, &x_val, &ids)?;
        let pred = tape.matmul(alpha, basis)?;
        let data = tape.loss_l1(pred, &target)?;
        let pen = tape.weighted_abs_sum(alpha, Some(weights.clone()))?;
        let pen = tape.scale(pen, cfg.video_penalty / t_count as f64)?;
        let total = tape.add(data, pen)?;
        let value = tape.scalar(total);
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch: losses.len(),
                last_finite_epoch: losses.len().saturating_sub(1),
                last_finite_loss: losses.last().copied().unwrap_or(f64::NAN),
            });
        }
        let grads = tape.backward(total)?;
        tape.accumulate_into(&grads, &mut dict.params)?;
        tape.accumulate_into(&grads, &mut temporal.net.params)?;
        opt_dict.step(&mut dict.params)?;
        opt_code.step(&mut temporal.net.params)?;
        opt_dict.scale_lr(decay);
        opt_code.scale_lr(decay);
        losses.push(value);
    }

    let codes = temporal.codes(&times)?;
    let bank = dict.eval_atoms(&ids, &coords)?;
    let mut background = Vec::with_capacity(t_count);
    let mut residual = Vec::with_capacity(t_count);
    let mut alpha = Vec::with_capacity(t_count);
    for (t, frame) in frames.iter().enumerate() {
        let a = &codes.data()[t * cfg.n..(t + 1) * cfg.n];
        let mut fx = vec![0.0; pixels * c];
        for (j, &aj) in a.iter().enumerate() {
            for (o, v) in fx.iter_mut().zip(&bank.data()[j * pixels * c..(j + 1) * pixels * c]) {
                *o += aj * v;
            }
        }
        fx.iter_mut().for_each(|v| *v = snap_to_grid(*v));
        let fe: Vec<f64> = frame.data.iter().zip(&fx).map(|(y, x)| y - x).collect();
        background.push(Image::new(w, h, c, fx)?);
        residual.push(Image::new(w, h, c, fe)?);
        alpha.push(a.to_vec());
    }
    Ok(VideoDecomposition {
        background,
        residual,
        alpha,
        dictionary: dict,
        temporal,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_sprite_video;

    fn small_cfg() -> TaskConfig {
        TaskConfig {
            n: 4,
            k: 1,
            n_freq: 16,
            width: 16,
            layers: 2,
            head_width: 8,
            omega0: 10.0,
            epochs: 3,
            temporal_hidden: 8,
            ..TaskConfig::default()
        }
    }

    #[test]
    fn decomposition_is_exact_on_generated_frames() {
        let v = gen_sprite_video(4, 8, 2).unwrap();
        let d = video_decompose(&v.frames, &small_cfg()).unwrap();
        for ((f, x), e) in v.frames.iter().zip(&d.background).zip(&d.residual) {
            for ((y, a), b) in f.data.iter().zip(&x.data).zip(&e.data) {
                assert_eq!(a + b, *y);
            }
        }
        assert_eq!(d.losses.len(), 3);
        assert_eq!(d.alpha[0].len(), 4);
    }

    #[test]
    fn single_frame_is_rejected() {
        let v = gen_sprite_video(2, 8, 2).unwrap();
        assert!(video_decompose(&v.frames[..1], &small_cfg()).is_err());
    }
}
