use crate::diff::{AdamState, Optimizer, Sgd, Tape, Var};
use crate::measure::MeasurementSet;
use crate::nid::{gating_mode, utilization, Dictionary, Gate, GateKind, GatingMode, CV_EPS};
use crate::prelude::*;
use crate::rng::{self, Rng};
use crate::tasks::config::{LossKind, OptimizerKind, TaskConfig};
use crate::tasks::model::{sparsify_groups, Block, EpochLog, Functional, TrainedModel};
use crate::{Error, Result, Tensor};

/// Optional knobs for [`train_dictionary`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Start from this dictionary instead of a fresh one.
    pub dictionary: Option<Dictionary>,
    /// Only the gate is optimized.
    pub freeze_dictionary: bool,
    /// Encoder inputs `[T × d]`, one row per instance; required by encoder
    /// gates.
    pub summaries: Option<Tensor>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochLog)>,
}

/// Instances that share measurement parameters; their basis values are
/// computed once per step.
struct Group {
    block: Block,
    members: Vec<usize>,
}

fn group_instances(data: &[MeasurementSet], functional: Functional, loss: LossKind) -> Vec<Group> {
    let mut groups: Vec<Group> = Vec::new();
    for (i, set) in data.iter().enumerate() {
        match groups.iter_mut().find(|g| g.block.omega == set.omega) {
            Some(g) => g.members.push(i),
            None => groups.push(Group {
                block: Block::new(set, functional, loss),
                members: vec![i],
            }),
        }
    }
    groups
}

fn make_optimizer(kind: OptimizerKind, lr: f64) -> Optimizer {
    match kind {
        OptimizerKind::Adam => Optimizer::Adam(AdamState::new(lr)),
        OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(lr).with_momentum(0.9)),
    }
}

/// Distinct sorted sample of `take` indices from `0..len`, or all of them.
fn subsample(rng: &mut Rng, len: usize, take: usize) -> Option<Vec<usize>> {
    if take == 0 || take >= len {
        return None;
    }
    let mut all: Vec<usize> = (0..len).collect();
    rng::shuffle(rng, &mut all);
    all.truncate(take);
    all.sort_unstable();
    Some(all)
}

/// Jointly fits a dictionary and per-instance gates to `data`.
///
/// The objective is the sum over instances of the mean data loss plus
/// `λ` times the gating penalty: ℓ1 on the normalized dense code during
/// warm-up, the CV penalty on the batch's top-k codes afterwards.
pub fn train_dictionary(
    data: &[MeasurementSet],
    functional: Functional,
    cfg: &TaskConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let first = data.first().ok_or(Error::Empty("training set"))?;
    let channels = first.channels();
    if data.iter().any(|s| s.channels() != channels) {
        return Err(Error::invalid("training instances differ in channel count"));
    }
    let m = match functional {
        Functional::Pixels => first.omega.cols(),
        Functional::Rays { .. } => 2,
    };
    let mut dict = match hooks.dictionary.take() {
        Some(d) => d,
        None => Dictionary::new(cfg.arch(channels, m), cfg.n, cfg.grid(m), cfg.seed)?,
    };
    if dict.channels() != channels || dict.arch.m != m {
        return Err(Error::invalid("dictionary does not match the data dimensions"));
    }
    let (p, atoms) = (dict.num_patches(), dict.num_atoms());
    let gate_seed = cfg.seed.wrapping_add(1_000_003);
    let mut gate = match cfg.gating {
        GateKind::Table => Gate::table(data.len(), atoms, gate_seed)?,
        GateKind::Encoder => {
            let s = hooks
                .summaries
                .as_ref()
                .ok_or(Error::invalid("encoder gating needs instance summaries"))?;
            if s.rows() != data.len() {
                return Err(Error::shape("train", "one summary row per instance"));
            }
            Gate::encoder(s.cols(), &cfg.encoder_hidden, atoms, gate_seed)?
        }
    };
    let groups = group_instances(data, functional, cfg.loss);
    for g in &groups {
        g.block.validate(channels)?;
    }
    // group of every instance
    let mut home = vec![0; data.len()];
    for (gi, g) in groups.iter().enumerate() {
        for &i in &g.members {
            home[i] = gi;
        }
    }

    let mut opt_dict = make_optimizer(cfg.optimizer, cfg.lr_dict);
    let mut opt_gate = make_optimizer(cfg.optimizer, cfg.lr_gate);
    let decay = if cfg.epochs > 1 {
        cfg.lr_final_fraction.powf(1.0 / (cfg.epochs - 1) as f64)
    } else {
        1.0
    };
    let mut rng = rng::substream(cfg.seed, 7);
    let batch = if cfg.batch_size == 0 { data.len() } else { cfg.batch_size };
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut last_finite = (0, f64::NAN);

    for epoch in 0..cfg.epochs {
        let mode = gating_mode(epoch, cfg.warmup_epochs);
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng::shuffle(&mut rng, &mut order);
        let (mut tot, mut dat, mut pen, mut nb) = (0.0, 0.0, 0.0, 0usize);
        for ids in order.chunks(batch) {
            let mut ids = ids.to_vec();
            ids.sort_unstable();
            let mut tape = Tape::new();
            let mut raw = match gate.kind {
                GateKind::Table => gate.table_on_tape(&mut tape, &ids)?,
                GateKind::Encoder => {
                    let s = hooks.summaries.as_ref().expect("checked above");
                    gate.encoder_on_tape(&mut tape, &s.select_rows(&ids)?)?
                }
            };
            if cfg.gate_noise > 0.0 {
                let noise = (0..ids.len() * atoms)
                    .map(|_| cfg.gate_noise * rng::normal(&mut rng))
                    .collect();
                let noise = tape.constant(Tensor::new(vec![ids.len(), atoms], noise)?);
                raw = tape.add(raw, noise)?;
            }
            let (codes, penalty) = match mode {
                GatingMode::DenseL1 => {
                    let c = tape.sparsify(raw, cfg.n, p)?;
                    let pen = tape.weighted_abs_sum(c, None)?;
                    (c, tape.scale(pen, cfg.lambda * cfg.l1_scale)?)
                }
                GatingMode::HardTopK => {
                    let c = tape.sparsify(raw, cfg.k, p)?;
                    let pen = tape.cv_penalty(c, cfg.cv_abs, CV_EPS)?;
                    (c, tape.scale(pen, cfg.lambda * cfg.cv_scale)?)
                }
            };
            let support: Vec<usize> = {
                let cv = tape.value(codes);
                (0..atoms)
                    .filter(|&j| (0..ids.len()).any(|r| cv.data()[r * atoms + j] != 0.0))
                    .collect()
            };

            let mut losses: Vec<Var> = Vec::new();
            let mut batch_groups: Vec<(usize, Vec<usize>)> = Vec::new();
            for (r, &i) in ids.iter().enumerate() {
                let gi = home[i];
                match batch_groups.iter_mut().find(|(g, _)| *g == gi) {
                    Some((_, rows)) => rows.push(r),
                    None => batch_groups.push((gi, vec![r])),
                }
            }
            for (gi, rows) in &batch_groups {
                let block = &groups[*gi].block;
                let picked = subsample(&mut rng, block.len(), cfg.coord_batch);
                let nodes = block.nodes(picked.as_deref())?;
                let x = tape.constant(nodes.coords.clone());
                let basis = dict.basis_on_tape(&mut tape, x, &nodes.coords, &support)?;
                let a = tape.select_rows(codes, rows)?;
                let a = tape.select_cols(a, &support)?;
                let mut pred = tape.matmul(a, basis)?;
                let ni = rows.len();
                if let Some(w) = &nodes.rays {
                    pred = tape.reshape(pred, &[ni * nodes.coords.rows(), channels])?;
                    let weights: Vec<f64> = (0..ni).flat_map(|_| w.iter().copied()).collect();
                    pred = tape.segment_sum(pred, nodes.q, &weights)?;
                }
                let meas = nodes.rays.as_ref().map_or(nodes.coords.rows(), |w| w.len());
                pred = tape.reshape(pred, &[ni, meas * channels])?;
                let mut target = Vec::with_capacity(ni * meas * channels);
                for &r in rows {
                    let y = &data[ids[r]].y;
                    match &picked {
                        Some(sel) => target.extend_from_slice(y.select_rows(sel)?.data()),
                        None => target.extend_from_slice(y.data()),
                    }
                }
                let target = Tensor::new(vec![ni, meas * channels], target)?;
                let l = match cfg.loss {
                    LossKind::L2 => tape.loss_l2(pred, &target)?,
                    LossKind::L1 => tape.loss_l1(pred, &target)?,
                };
                losses.push(tape.scale(l, ni as f64)?);
            }
            let mut data_loss = losses[0];
            for &l in &losses[1..] {
                data_loss = tape.add(data_loss, l)?;
            }
            let total = tape.add(data_loss, penalty)?;
            let tv = tape.scalar(total);
            if !tv.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_finite_epoch: last_finite.0,
                    last_finite_loss: last_finite.1,
                });
            }
            let grads = tape.backward(total)?;
            tape.accumulate_into(&grads, &mut gate.params)?;
            opt_gate.step(&mut gate.params)?;
            if !hooks.freeze_dictionary {
                tape.accumulate_into(&grads, &mut dict.params)?;
                opt_dict.step(&mut dict.params)?;
            }
            tot += tv;
            dat += tape.scalar(data_loss);
            pen += tape.scalar(penalty);
            nb += 1;
        }
        let entry = EpochLog {
            epoch,
            mode,
            loss: tot / nb as f64,
            data_loss: dat / nb as f64,
            penalty: pen / nb as f64,
        };
        last_finite = (epoch, entry.loss);
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&entry);
        }
        log.push(entry);
        opt_dict.scale_lr(decay);
        opt_gate.scale_lr(decay);
    }

    let final_mode = if cfg.epochs > 0 {
        gating_mode(cfg.epochs - 1, cfg.warmup_epochs)
    } else {
        GatingMode::DenseL1
    };
    let k = match final_mode {
        GatingMode::DenseL1 => cfg.n,
        GatingMode::HardTopK => cfg.k,
    };
    let raw = match gate.kind {
        GateKind::Table => gate.params.get(crate::nid::TABLE)?.clone(),
        GateKind::Encoder => gate.encode(hooks.summaries.as_ref().expect("checked above"))?,
    };
    let codes: Vec<Vec<f64>> = raw
        .data()
        .chunks(atoms)
        .map(|h| sparsify_groups(h, k, p))
        .collect::<Result<_>>()?;
    let utilization = utilization(&codes, atoms);
    dict.params.clear_grads();
    gate.params.clear_grads();
    Ok(TrainedModel {
        dictionary: dict,
        gate,
        k: cfg.k,
        log,
        utilization,
    })
}

/// Trains a fresh encoder gate against the frozen dictionary of `model`.
///
/// Runs `cfg.encoder_epochs` epochs of hard top-k training without the
/// balancing penalty at `cfg.lr_encoder`. The dictionary is returned unchanged.
pub fn fit_encoder(
    model: &TrainedModel,
    data: &[MeasurementSet],
    functional: Functional,
    summaries: Tensor,
    cfg: &TaskConfig,
) -> Result<TrainedModel> {
    let stage = TaskConfig {
        gating: GateKind::Encoder,
        epochs: cfg.encoder_epochs,
        warmup_epochs: 0,
        lambda: 0.0,
        lr_gate: cfg.lr_encoder,
        k: model.k,
        ..cfg.clone()
    };
    let mut fitted = train_dictionary(
        data,
        functional,
        &stage,
        TrainHooks {
            dictionary: Some(model.dictionary.clone()),
            freeze_dictionary: true,
            summaries: Some(summaries),
            on_epoch: None,
        },
    )?;
    fitted.log = model.log.clone();
    Ok(fitted)
}
