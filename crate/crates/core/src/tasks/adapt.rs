use crate::nid::{hard_threshold, Dictionary, GateInput, SparseCode};
use crate::prelude::*;
use crate::rng;
use crate::tasks::config::{LossKind, SolverKind, TaskConfig};
use crate::tasks::model::{block_loss, sparsify_groups, Block, TrainedModel};
use crate::{Error, Result, Tensor};

/// Coordinates evaluated per trunk pass while building a response.
const NODE_CHUNK: usize = 1024;
/// IRLS floor on ℓ1 residuals.
const IRLS_FLOOR: f64 = 1e-4;
const MAX_BACKTRACK: usize = 30;

/// Measurements every atom produces on a fixed set of blocks.
///
/// `blocks[b]` is `[atoms × len_b]` row-major, where `len_b` counts the
/// block's measurements times channels. Since the functionals are linear in
/// the field, any code's prediction is a linear combination of these rows.
#[derive(Clone, Debug)]
pub struct AtomResponse {
    pub atoms: usize,
    pub blocks: Vec<Vec<f64>>,
    pub lens: Vec<usize>,
}

impl AtomResponse {
    pub fn compute(dict: &Dictionary, blocks: &[Block]) -> Result<Self> {
        let atoms = dict.num_atoms();
        let c = dict.channels();
        let ids: Vec<usize> = (0..atoms).collect();
        let mut out = Vec::with_capacity(blocks.len());
        let mut lens = Vec::with_capacity(blocks.len());
        for block in blocks {
            block.validate(c)?;
            let meas = block.len();
            let len = meas * c;
            let mut resp = vec![0.0; atoms * len];
            let per_row = block.nodes(Some(&[0]))?.coords.rows();
            let chunk = (NODE_CHUNK / per_row).max(1);
            let mut start = 0;
            while start < meas {
                let end = (start + chunk).min(meas);
                let rows: Vec<usize> = (start..end).collect();
                let nodes = block.nodes(Some(&rows))?;
                let bank = dict.eval_atoms(&ids, &nodes.coords)?;
                let nb = nodes.coords.rows();
                for a in 0..atoms {
                    let vals = &bank.data()[a * nb * c..(a + 1) * nb * c];
                    let dst = &mut resp[a * len..(a + 1) * len];
                    match &nodes.rays {
                        None => dst[start * c..end * c].copy_from_slice(vals),
                        Some(w) => {
                            for (ri, wr) in w.iter().enumerate() {
                                for ch in 0..c {
                                    let s: f64 = (0..nodes.q)
                                        .map(|qi| vals[(ri * nodes.q + qi) * c + ch])
                                        .sum();
                                    dst[(start + ri) * c + ch] = wr * s;
                                }
                            }
                        }
                    }
                }
                start = end;
            }
            out.push(resp);
            lens.push(len);
        }
        Ok(Self {
            atoms,
            blocks: out,
            lens,
        })
    }

    /// Predicted measurements of every block for a dense code.
    pub fn predict(&self, alpha: &[f64]) -> Vec<Vec<f64>> {
        self.blocks
            .iter()
            .zip(&self.lens)
            .map(|(resp, &len)| {
                let mut pred = vec![0.0; len];
                for (j, &a) in alpha.iter().enumerate() {
                    if a != 0.0 {
                        for (p, v) in pred.iter_mut().zip(&resp[j * len..(j + 1) * len]) {
                            *p += a * v;
                        }
                    }
                }
                pred
            })
            .collect()
    }
}

/// Starting point of adaptation.
#[derive(Clone, Debug)]
pub enum CodeInit {
    /// Use this dense code, thresholded to the adaptation sparsity.
    Code(Vec<f64>),
    /// Zeros plus Gaussian noise of this standard deviation.
    Noise(f64),
}

impl CodeInit {
    /// The code the model's gate assigns to `q`.
    pub fn from_gate(model: &TrainedModel, q: GateInput<'_>) -> Result<Self> {
        let raw = model.gate.raw_gates(q)?;
        Ok(Self::Code(sparsify_groups(
            &raw,
            model.k,
            model.dictionary.num_patches(),
        )?))
    }

    /// The normalized mean table row, or `None` for encoder gates.
    pub fn mean_row(model: &TrainedModel) -> Result<Option<Self>> {
        match model.mean_table_row() {
            Some(row) => Ok(Some(Self::Code(sparsify_groups(
                &row,
                model.k,
                model.dictionary.num_patches(),
            )?))),
            None => Ok(None),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdaptResult {
    pub code: SparseCode,
    /// Dense code over all atoms.
    pub alpha: Vec<f64>,
    /// Objective before the first step and after every step.
    pub losses: Vec<f64>,
}

struct Problem<'a> {
    resp: &'a AtomResponse,
    blocks: &'a [Block],
    /// Column scale of each atom; the solver works on `β = α · scale`.
    scale: Vec<f64>,
}

impl Problem<'_> {
    fn new<'a>(resp: &'a AtomResponse, blocks: &'a [Block]) -> Problem<'a> {
        let mut scale = vec![0.0; resp.atoms];
        for ((r, &len), b) in resp.blocks.iter().zip(&resp.lens).zip(blocks) {
            let c = b.weight / len.max(1) as f64;
            for (j, s) in scale.iter_mut().enumerate() {
                *s += c * r[j * len..(j + 1) * len].iter().map(|v| v * v).sum::<f64>();
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        Problem {
            resp,
            blocks,
            scale,
        }
    }

    fn alpha(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter().zip(&self.scale).map(|(b, s)| b / s).collect()
    }

    fn loss_of(&self, preds: &[Vec<f64>]) -> f64 {
        preds
            .iter()
            .zip(self.blocks)
            .map(|(p, b)| b.weight * block_loss(b.loss, p, b.y.data()))
            .sum()
    }

    /// Gradient in β coordinates.
    fn grad(&self, preds: &[Vec<f64>]) -> Vec<f64> {
        let mut g = vec![0.0; self.resp.atoms];
        for ((p, b), (resp, &len)) in preds
            .iter()
            .zip(self.blocks)
            .zip(self.resp.blocks.iter().zip(&self.resp.lens))
        {
            let c = b.weight / len.max(1) as f64;
            let d: Vec<f64> = p
                .iter()
                .zip(b.y.data())
                .map(|(p, y)| match b.loss {
                    LossKind::L2 => 2.0 * (p - y),
                    LossKind::L1 => (p - y).signum() * ((p - y) != 0.0) as u8 as f64,
                })
                .collect();
            for (j, gj) in g.iter_mut().enumerate() {
                let row = &resp[j * len..(j + 1) * len];
                *gj += c * row.iter().zip(&d).map(|(a, d)| a * d).sum::<f64>();
            }
        }
        for (gj, s) in g.iter_mut().zip(&self.scale) {
            *gj /= s;
        }
        g
    }

    /// Curvature of the (IRLS-weighted) quadratic model along `dir`,
    /// given in β coordinates.
    fn curvature(&self, dir: &[f64], preds: &[Vec<f64>]) -> f64 {
        let alpha_dir = self.alpha(dir);
        let moves = self.resp.predict(&alpha_dir);
        let mut total = 0.0;
        for ((mv, p), (b, &len)) in moves
            .iter()
            .zip(preds)
            .zip(self.blocks.iter().zip(&self.resp.lens))
        {
            let c = b.weight / len.max(1) as f64;
            total += match b.loss {
                LossKind::L2 => 2.0 * c * mv.iter().map(|v| v * v).sum::<f64>(),
                LossKind::L1 => {
                    c * mv
                        .iter()
                        .zip(p.iter().zip(b.y.data()))
                        .map(|(v, (p, y))| v * v / (p - y).abs().max(IRLS_FLOOR))
                        .sum::<f64>()
                }
            };
        }
        total
    }
}

fn threshold_groups(beta: &mut [f64], k: usize, groups: usize) {
    let n = beta.len() / groups;
    for g in 0..groups {
        hard_threshold(&mut beta[g * n..(g + 1) * n], k);
    }
}

/// Code-only fit of `blocks` against a precomputed response.
///
/// The solver runs on column-normalized coordinates and keeps at most `k`
/// atoms per patch after every step. `on_step(step, α, predictions)` is
/// called after each step; returning `true` stops early.
#[allow(clippy::too_many_arguments)]
pub fn adapt_with_response(
    resp: &AtomResponse,
    blocks: &[Block],
    init: &[f64],
    k: usize,
    groups: usize,
    solver: SolverKind,
    steps: usize,
    lr: f64,
    mut on_step: Option<&mut dyn FnMut(usize, &[f64], &[Vec<f64>]) -> bool>,
) -> Result<AdaptResult> {
    if blocks.len() != resp.blocks.len() {
        return Err(Error::shape("adapt", "response and blocks disagree"));
    }
    if init.len() != resp.atoms || groups == 0 || resp.atoms % groups != 0 {
        return Err(Error::shape(
            "adapt",
            format!("init of {} for {} atoms in {groups} groups", init.len(), resp.atoms),
        ));
    }
    if k == 0 || k > resp.atoms / groups {
        return Err(Error::invalid(format!("adaptation sparsity k={k} out of range")));
    }
    let prob = Problem::new(resp, blocks);
    let mut beta: Vec<f64> = init.iter().zip(&prob.scale).map(|(a, s)| a * s).collect();
    threshold_groups(&mut beta, k, groups);
    let mut preds = resp.predict(&prob.alpha(&beta));
    let mut loss = prob.loss_of(&preds);
    let mut losses = vec![loss];
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; resp.atoms];
    let mut v = vec![0.0; resp.atoms];

    for step in 0..steps {
        let g = prob.grad(&preds);
        match solver {
            SolverKind::Adam => {
                let t = (step + 1) as i32;
                let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                for j in 0..resp.atoms {
                    m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                    v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                    beta[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                }
                threshold_groups(&mut beta, k, groups);
                preds = resp.predict(&prob.alpha(&beta));
                loss = prob.loss_of(&preds);
            }
            SolverKind::Niht => {
                let mut dir = vec![0.0; resp.atoms];
                if beta.iter().all(|&b| b == 0.0) {
                    let mut sel = g.clone();
                    threshold_groups(&mut sel, k, groups);
                    dir.copy_from_slice(&sel);
                } else {
                    for j in 0..resp.atoms {
                        if beta[j] != 0.0 {
                            dir[j] = g[j];
                        }
                    }
                }
                let num: f64 = dir.iter().map(|d| d * d).sum();
                let den = prob.curvature(&dir, &preds);
                let mut mu = if den > 0.0 { num / den } else { lr };
                for _ in 0..MAX_BACKTRACK {
                    let mut cand: Vec<f64> =
                        beta.iter().zip(&g).map(|(b, g)| b - mu * g).collect();
                    threshold_groups(&mut cand, k, groups);
                    let cp = resp.predict(&prob.alpha(&cand));
                    let cl = prob.loss_of(&cp);
                    if cl <= loss {
                        beta = cand;
                        preds = cp;
                        loss = cl;
                        break;
                    }
                    mu *= 0.5;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("adaptation loss"));
        }
        losses.push(loss);
        if let Some(cb) = on_step.as_mut() {
            if cb(step + 1, &prob.alpha(&beta), &preds) {
                break;
            }
        }
    }
    let alpha = prob.alpha(&beta);
    Ok(AdaptResult {
        code: SparseCode::from_dense(&alpha),
        alpha,
        losses,
    })
}

/// Initial dense code for `init` on `atoms` atoms.
pub(crate) fn initial_code(init: &CodeInit, atoms: usize, seed: u64) -> Result<Vec<f64>> {
    match init {
        CodeInit::Code(c) => {
            if c.len() != atoms {
                return Err(Error::shape(
                    "adapt",
                    format!("initial code of {} for {atoms} atoms", c.len()),
                ));
            }
            Ok(c.clone())
        }
        CodeInit::Noise(sigma) => {
            let mut r = rng::substream(seed, 11);
            Ok((0..atoms).map(|_| sigma * rng::normal(&mut r)).collect())
        }
    }
}

/// Fits a code for `blocks` with the dictionary frozen.
///
/// Uses `cfg.adapt_steps`, `cfg.lr_adapt`, `cfg.adapt_solver` and the
/// sparsity `cfg.adapt_k`, falling back to the model's training `k`.
pub fn adapt_code(
    model: &TrainedModel,
    blocks: &[Block],
    init: &CodeInit,
    cfg: &TaskConfig,
) -> Result<AdaptResult> {
    if blocks.is_empty() {
        return Err(Error::Empty("measurement set"));
    }
    let dict = &model.dictionary;
    let resp = AtomResponse::compute(dict, blocks)?;
    let alpha0 = initial_code(init, dict.num_atoms(), cfg.seed)?;
    adapt_with_response(
        &resp,
        blocks,
        &alpha0,
        cfg.adapt_k.unwrap_or(model.k),
        dict.num_patches(),
        cfg.adapt_solver,
        cfg.adapt_steps,
        cfg.lr_adapt,
        None,
    )
}

/// Pixel block over `coords` with targets `y`.
pub(crate) fn pixel_block(coords: Tensor, y: Tensor, loss: LossKind) -> Block {
    Block {
        omega: coords,
        y,
        functional: crate::tasks::model::Functional::Pixels,
        loss,
        weight: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordnet::Architecture;
    use crate::data::grid_coords;
    use crate::nid::{Gate, PatchGrid};
    use crate::tasks::model::Functional;

    fn model(n: usize, k: usize) -> TrainedModel {
        let arch = Architecture {
            m: 2,
            n_freq: 16,
            width: 16,
            layers: 2,
            head_width: 8,
            channels: 1,
            omega0: 10.0,
        };
        let dictionary = Dictionary::new(arch, n, PatchGrid::single(2), 3).unwrap();
        TrainedModel {
            dictionary,
            gate: Gate::table(1, n, 0).unwrap(),
            k,
            log: Vec::new(),
            utilization: Vec::new(),
        }
    }

    #[test]
    fn response_matches_direct_combination() {
        let m = model(4, 2);
        let coords = grid_coords(5, 5);
        let block = pixel_block(coords.clone(), Tensor::zeros(&[25, 1]), LossKind::L2);
        let resp = AtomResponse::compute(&m.dictionary, &[block]).unwrap();
        let alpha = [0.3, 0.0, -1.2, 0.5];
        let direct = m.dictionary.combine_dense(&alpha, &coords).unwrap();
        let pred = resp.predict(&alpha);
        for (a, b) in pred[0].iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ray_response_matches_quadrature() {
        let m = model(3, 1);
        let omega = Tensor::matrix(2, 2, vec![0.1, 0.3, -0.4, 1.2]).unwrap();
        let block = Block {
            omega,
            y: Tensor::zeros(&[2, 1]),
            functional: Functional::Rays { q: 16 },
            loss: LossKind::L2,
            weight: 1.0,
        };
        let resp = AtomResponse::compute(&m.dictionary, &[block]).unwrap();
        let code = SparseCode::one_hot(1);
        let f = crate::tasks::CodedField {
            dictionary: &m.dictionary,
            code: &code,
        };
        for (i, (r, phi)) in [(0.1, 0.3), (-0.4, 1.2)].into_iter().enumerate() {
            let want = crate::measure::radon_project(&f, &crate::measure::RaySpec { r, phi, q: 16 })
                .unwrap();
            assert!((resp.blocks[0][resp.lens[0] + i] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn niht_recovers_an_atom() {
        let m = model(8, 1);
        let coords = grid_coords(8, 8);
        let target = m.dictionary.combine(&SparseCode::one_hot(5), &coords).unwrap();
        let block = pixel_block(coords, target, LossKind::L2);
        let cfg = TaskConfig {
            n: 8,
            k: 1,
            adapt_solver: SolverKind::Niht,
            adapt_steps: 50,
            ..TaskConfig::default()
        };
        let before = m.dictionary.params.checksum();
        let out = adapt_code(&m, &[block], &CodeInit::Noise(1e-3), &cfg).unwrap();
        assert_eq!(out.code.argmax(), Some(5));
        assert!(*out.losses.last().unwrap() < 1e-20);
        assert_eq!(m.dictionary.params.checksum(), before);
    }

    #[test]
    fn niht_loss_never_increases() {
        let m = model(8, 3);
        let coords = grid_coords(6, 6);
        let y = Tensor::new(vec![36, 1], (0..36).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        for loss in [LossKind::L2, LossKind::L1] {
            let block = pixel_block(coords.clone(), y.clone(), loss);
            let resp = AtomResponse::compute(&m.dictionary, &[block.clone()]).unwrap();
            let out = adapt_with_response(
                &resp,
                &[block],
                &[0.0; 8],
                3,
                1,
                SolverKind::Niht,
                40,
                1e-2,
                None,
            )
            .unwrap();
            for w in out.losses.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn zero_steps_keep_the_initial_code() {
        let m = model(6, 2);
        let coords = grid_coords(4, 4);
        let block = pixel_block(coords, Tensor::zeros(&[16, 1]), LossKind::L2);
        let init = sparsify_groups(&[0.1, -2.0, 0.0, 0.7, 0.0, 0.0], 2, 1).unwrap();
        let cfg = TaskConfig {
            n: 6,
            k: 2,
            adapt_steps: 0,
            ..TaskConfig::default()
        };
        let out = adapt_code(&m, &[block], &CodeInit::Code(init.clone()), &cfg).unwrap();
        for (a, b) in out.alpha.iter().zip(&init) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(out.losses.len(), 1);
    }
}
