//! Acceptance suite: one test per criterion. Each prints a `PASS`/`FAIL`
//! line with its measurements, written past the test harness's output
//! capture so the lines show up in every run.
//!
//! Run alone with `cargo test -p nid --test acceptance`.

use std::io::Write;
use std::time::Instant;

use nid_core::coordnet::{Architecture, TwoLayerSiren};
use nid_core::diff::{finite_diff_check, ParamStore, Tape};
use nid_core::measure::{radon_project, FnField, RaySpec};
use nid_core::nid::{abs_top_k, sparsify, Dictionary, PatchGrid, SparseCode, CV_EPS};
use nid_core::rng::{self, Rng};
use nid_core::tasks::{LossKind, SolverKind, TaskConfig};
use nid_core::Tensor;

/// Criteria run one at a time so that their timings do not include each
/// other's work.
fn serial() -> std::sync::MutexGuard<'static, ()> {
    static LOCK: std::sync::Mutex<()> = std::sync::Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the criterion line and fails the test when `pass` is false.
fn report(id: u32, name: &str, pass: bool, started: Instant, detail: String) {
    let line = format!(
        "[{}] criterion {id:>2} {name}: {detail} ({:.1}s)\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{line}");
}

fn coords(rng: &mut Rng, rows: usize, m: usize) -> Tensor {
    let data = (0..rows * m).map(|_| rng::uniform(rng, -1.0, 1.0)).collect();
    Tensor::new(vec![rows, m], data).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Gradient soundness

#[derive(Clone, Copy, Debug)]
enum Penalty {
    None,
    DenseL1,
    Cv { abs: bool },
}

#[test]
fn c01_gradient_soundness() {
    let _serial = serial();
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_case = String::new();
    for case in 0..20u64 {
        let mut r = rng::substream(1, case);
        let arch = Architecture {
            m: 2,
            n_freq: rng::int_inclusive(&mut r, 2, 8),
            width: rng::int_inclusive(&mut r, 2, 32),
            layers: rng::int_inclusive(&mut r, 1, 3),
            head_width: rng::int_inclusive(&mut r, 2, 8),
            channels: rng::int_inclusive(&mut r, 1, 3),
            omega0: rng::uniform(&mut r, 1.0, 30.0),
        };
        let n = rng::int_inclusive(&mut r, 1, 16);
        let loss = if case % 2 == 0 { LossKind::L2 } else { LossKind::L1 };
        let penalty = match (case / 2) % 3 {
            0 => Penalty::None,
            1 => Penalty::DenseL1,
            _ => Penalty::Cv { abs: case % 4 < 2 },
        };
        let k = match penalty {
            Penalty::DenseL1 => n,
            _ => rng::int_inclusive(&mut r, 1, n),
        };
        let instances = 3;
        let x = coords(&mut r, 5, 2);
        let dict = Dictionary::new(arch.clone(), n, PatchGrid::single(2), case).unwrap();
        let mut store = dict.params.clone();
        let gates = (0..instances * n).map(|_| rng::normal(&mut r)).collect();
        store
            .insert("gate.table", Tensor::new(vec![instances, n], gates).unwrap())
            .unwrap();
        let target_len = instances * x.rows() * arch.channels;
        let target = Tensor::new(
            vec![instances, x.rows() * arch.channels],
            (0..target_len).map(|_| rng::normal(&mut r)).collect(),
        )
        .unwrap();
        let lambda = 0.3;
        let ids: Vec<usize> = (0..n).collect();
        let build = |tape: &mut Tape, p: &ParamStore| {
            let d = Dictionary::from_params(arch.clone(), n, PatchGrid::single(2), p.clone());
            let raw = tape.param(p, "gate.table")?;
            let codes = tape.sparsify(raw, k, 1)?;
            let xv = tape.constant(x.clone());
            let basis = d.basis_on_tape(tape, xv, &x, &ids)?;
            let pred = tape.matmul(codes, basis)?;
            let data = match loss {
                LossKind::L2 => tape.loss_l2(pred, &target)?,
                LossKind::L1 => tape.loss_l1(pred, &target)?,
            };
            let pen = match penalty {
                Penalty::None => return Ok(data),
                Penalty::DenseL1 => tape.weighted_abs_sum(codes, None)?,
                Penalty::Cv { abs } => tape.cv_penalty(codes, abs, CV_EPS)?,
            };
            let pen = tape.scale(pen, lambda)?;
            tape.add(data, pen)
        };
        let err = finite_diff_check(&store, 1e-5, build).unwrap();
        if err > worst {
            worst = err;
            worst_case = format!("case {case}: {loss:?}, {penalty:?}, n={n}, k={k}, {arch:?}");
        }
    }
    report(
        1,
        "gradient soundness",
        worst < 1e-4,
        started,
        format!("worst relative error {worst:.2e} over 20 configs (need < 1e-4); worst at {worst_case}"),
    );
}

// ---------------------------------------------------------------------------
// 2. Gating invariants

#[test]
fn c02_gating_invariants() {
    let _serial = serial();
    let started = Instant::now();
    let mut r = rng::seeded(2);
    let mut failures: Vec<String> = Vec::new();
    for trial in 0..1000 {
        let n = rng::int_inclusive(&mut r, 1, 64);
        let k = rng::int_inclusive(&mut r, 1, n);
        let mut h: Vec<f64> = (0..n).map(|_| rng::normal(&mut r)).collect();
        // every fourth vector carries exact magnitude ties
        if trial % 4 == 0 && n > 1 {
            for i in (1..n).step_by(2) {
                h[i] = if i % 4 == 1 { h[i - 1] } else { -h[i - 1] };
            }
        }
        let code = sparsify(&h, k).unwrap();
        let dense = code.densify(n).unwrap();
        let nonzero = dense.iter().filter(|v| **v != 0.0).count();
        if nonzero != k {
            failures.push(format!("trial {trial}: {nonzero} nonzeros for k={k}"));
        }
        let norm = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            failures.push(format!("trial {trial}: norm {norm}"));
        }
        let c = rng::uniform(&mut r, 1e-3, 1e3);
        let scaled: Vec<f64> = h.iter().map(|v| c * v).collect();
        let other = sparsify(&scaled, k).unwrap();
        let same_support = other.indices() == code.indices();
        let close = other
            .weights()
            .iter()
            .zip(code.weights())
            .all(|(a, b)| (a - b).abs() < 1e-12);
        if !same_support || !close {
            failures.push(format!("trial {trial}: scale {c} changed the code"));
        }
        // ties: the kept set is the lower-index one, identically on reruns
        let again = sparsify(&h, k).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| h[b].abs().total_cmp(&h[a].abs()).then(a.cmp(&b)));
        let mut expected: Vec<usize> = order[..k].to_vec();
        expected.sort_unstable();
        if again.indices() != code.indices() || code.indices() != expected {
            failures.push(format!("trial {trial}: tie-breaking differs"));
        }
        // gradients on dropped entries are exactly zero
        let mut tape = Tape::new();
        let hv = tape.leaf(Tensor::new(vec![1, n], h.clone()).unwrap());
        let sv = tape.sparsify(hv, k, 1).unwrap();
        let w: Vec<f64> = (0..n).map(|_| rng::normal(&mut r)).collect();
        let wv = tape.constant(Tensor::new(vec![1, n], w).unwrap());
        let prod = tape.mul(sv, wv).unwrap();
        let total = tape.sum(prod);
        let grads = tape.backward(total).unwrap();
        let g = grads.get(hv);
        let kept = abs_top_k(&h, k);
        for (i, gi) in g.data().iter().enumerate() {
            if !kept.contains(&i) && *gi != 0.0 {
                failures.push(format!("trial {trial}: dropped entry {i} has gradient {gi}"));
            }
        }
    }
    report(
        2,
        "gating invariants",
        failures.is_empty(),
        started,
        format!(
            "1000 vectors, {} violations{}",
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Two-layer equivalence

#[test]
fn c03_two_layer_equivalence() {
    let _serial = serial();
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for model in 0..100u64 {
        let mut r = rng::substream(3, model);
        let m = rng::int_inclusive(&mut r, 1, 3);
        let n_freq = rng::int_inclusive(&mut r, 1, 32);
        let omega0 = rng::uniform(&mut r, 1.0, 30.0);
        let siren = TwoLayerSiren::random(m, n_freq, omega0, model).unwrap();
        let x = coords(&mut r, 16, m);
        let got = siren.eval(&x).unwrap();
        let e = &siren.embedding;
        for (row, g) in x.data().chunks(m).zip(&got) {
            let mut sum = siren.c;
            for i in 0..n_freq {
                let wx: f64 = (0..m).map(|d| e.w.data()[i * m + d] * row[d]).sum();
                sum += siren.alpha[i] * (e.omega0 * (wx + e.b.data()[i])).sin();
            }
            worst = worst.max((sum - g).abs());
        }
    }
    report(
        3,
        "two-layer equivalence",
        worst < 1e-9,
        started,
        format!("max |f - (αᵀγ(x) + c)| = {worst:.2e} over 100 models (need < 1e-9)"),
    );
}

// ---------------------------------------------------------------------------
// 4. Radon oracle

/// Exact line integral of `exp(-|x|²/σ²)` over the chord of `ray` in
/// `[-1, 1]²`.
fn gaussian_projection(sigma: f64, r: f64, phi: f64) -> f64 {
    let (s0, s1) = nid_core::measure::chord(r, phi).expect("ray hits the domain");
    let half = 0.5 * sigma * std::f64::consts::PI.sqrt();
    (-r * r / (sigma * sigma)).exp() * half * (libm::erf(s1 / sigma) - libm::erf(s0 / sigma))
}

#[test]
fn c04_radon_oracle() {
    let _serial = serial();
    let started = Instant::now();
    let mut r = rng::seeded(4);
    let mut worst_rel: f64 = 0.0;
    let mut halving_ok = true;
    let mut halving_note = String::new();
    for trial in 0..50 {
        let radius = rng::uniform(&mut r, 0.5, 0.9);
        let offset = rng::uniform(&mut r, -0.8, 0.8) * radius;
        let phi = rng::uniform(&mut r, 0.0, std::f64::consts::PI);
        let disk = FnField(move |p: &[f64]| {
            if p[0] * p[0] + p[1] * p[1] <= radius * radius {
                1.0
            } else {
                0.0
            }
        });
        let exact = 2.0 * (radius * radius - offset * offset).sqrt();
        let ray = RaySpec {
            r: offset,
            phi,
            q: 512,
        };
        let got = radon_project(&disk, &ray).unwrap();
        worst_rel = worst_rel.max((got - exact).abs() / exact);

        // convergence on a smooth field: the error at least halves with Q
        let sigma = rng::uniform(&mut r, 0.2, 0.4);
        let gauss = FnField(move |p: &[f64]| (-(p[0] * p[0] + p[1] * p[1]) / (sigma * sigma)).exp());
        let exact = gaussian_projection(sigma, offset, phi);
        let mut prev: Option<f64> = None;
        for q in [8, 16, 32, 64, 128, 256, 512] {
            let err = (radon_project(&gauss, &RaySpec { r: offset, phi, q }).unwrap() - exact).abs();
            if let Some(p) = prev {
                if p > 1e-6 && err > 0.5 * p {
                    halving_ok = false;
                    halving_note = format!("; trial {trial}: Q={q} error {err:.2e} after {p:.2e}");
                }
            }
            prev = Some(err);
        }
    }
    report(
        4,
        "Radon oracle",
        worst_rel < 0.01 && halving_ok,
        started,
        format!(
            "disk worst relative error {:.3}% at Q=512 over 50 rays (need < 1%); \
             error halves per doubling of Q above 1e-6: {halving_ok}{halving_note}",
            100.0 * worst_rel
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. One-hot recovery

#[test]
fn c05_one_hot_recovery() {
    use nid_core::data::grid_coords;
    use nid_core::metrics::psnr;
    use nid_core::nid::Gate;
    use nid_core::tasks::{adapt_code, Block, CodeInit, Functional, TrainedModel};

    let _serial = serial();
    let started = Instant::now();
    let cfg = TaskConfig {
        n: 32,
        k: 1,
        adapt_steps: 200,
        adapt_solver: SolverKind::Niht,
        ..TaskConfig::default()
    };
    let arch = cfg.arch(1, 2);
    let dictionary = Dictionary::new(arch, 32, PatchGrid::single(2), 5).unwrap();
    let model = TrainedModel {
        gate: Gate::table(1, 32, 5).unwrap(),
        dictionary,
        k: 1,
        log: Vec::new(),
        utilization: vec![0.0; 32],
    };
    let before = model.dictionary.params.checksum();
    let x = grid_coords(32, 32);
    let (mut recovered, mut above_40) = (0, 0);
    let mut worst_psnr = f64::INFINITY;
    for atom in 0..32 {
        let target = model.dictionary.combine(&SparseCode::one_hot(atom), &x).unwrap();
        let block = Block {
            omega: x.clone(),
            y: target.clone(),
            functional: Functional::Pixels,
            loss: LossKind::L2,
            weight: 1.0,
        };
        let fit = adapt_code(&model, &[block], &CodeInit::Noise(cfg.init_noise), &cfg).unwrap();
        let pred = model.dictionary.combine(&fit.code, &x).unwrap();
        let p = psnr(pred.data(), target.data()).unwrap();
        worst_psnr = worst_psnr.min(p);
        recovered += usize::from(fit.code.indices() == [atom]);
        above_40 += usize::from(p > 40.0);
    }
    let frozen = model.dictionary.params.checksum() == before;
    report(
        5,
        "one-hot recovery",
        recovered >= 31 && above_40 >= 31 && frozen,
        started,
        format!(
            "index recovered {recovered}/32, PSNR > 40 dB {above_40}/32 (worst {worst_psnr:.1} dB) \
             within 200 steps (need ≥ 31/32); dictionary unchanged: {frozen}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 12. Serialization

#[test]
fn c12_serialization() {
    use nid::{checkpoint, image_io};
    use nid_core::data::Image;
    use nid_core::nid::Gate;
    use nid_core::tasks::TrainedModel;

    let _serial = serial();
    let started = Instant::now();
    let mut r = rng::seeded(12);
    let (mut ckpt_ok, mut img_ok) = (0, 0);
    for trial in 0..1000u64 {
        let arch = Architecture {
            m: rng::int_inclusive(&mut r, 1, 3),
            n_freq: rng::int_inclusive(&mut r, 1, 6),
            width: rng::int_inclusive(&mut r, 1, 6),
            layers: rng::int_inclusive(&mut r, 1, 3),
            head_width: rng::int_inclusive(&mut r, 1, 4),
            channels: rng::int_inclusive(&mut r, 1, 3),
            omega0: rng::uniform(&mut r, 1.0, 30.0),
        };
        let n = rng::int_inclusive(&mut r, 1, 6);
        let gate = if trial % 2 == 0 {
            Gate::table(rng::int_inclusive(&mut r, 1, 4), n, trial).unwrap()
        } else {
            let hidden: Vec<usize> = (0..rng::int_inclusive(&mut r, 0, 2))
                .map(|_| rng::int_inclusive(&mut r, 1, 5))
                .collect();
            Gate::encoder(rng::int_inclusive(&mut r, 1, 5), &hidden, n, trial).unwrap()
        };
        let mut model = TrainedModel {
            dictionary: Dictionary::new(arch.clone(), n, PatchGrid::single(arch.m), trial).unwrap(),
            gate,
            k: rng::int_inclusive(&mut r, 1, n),
            log: Vec::new(),
            utilization: Vec::new(),
        };
        checkpoint::round_to_f32(&mut model);
        let bytes = checkpoint::encode(&model).unwrap();
        let back = checkpoint::decode(&bytes).unwrap();
        let again = checkpoint::encode(&back).unwrap();
        if back.dictionary.params == model.dictionary.params
            && back.gate.params == model.gate.params
            && back.k == model.k
            && again == bytes
        {
            ckpt_ok += 1;
        }

        let (w, h) = (rng::int_inclusive(&mut r, 1, 9), rng::int_inclusive(&mut r, 1, 9));
        let c = if trial % 2 == 0 { 1 } else { 3 };
        let data = (0..w * h * c)
            .map(|_| rng::int_inclusive(&mut r, 0, 255) as f64 / 255.0)
            .collect();
        let img = Image::new(w, h, c, data).unwrap();
        let enc = image_io::encode_pnm(&img).unwrap();
        let dec = image_io::decode_pnm(&enc).unwrap();
        if dec == img && image_io::encode_pnm(&dec).unwrap() == enc {
            img_ok += 1;
        }
    }
    report(
        12,
        "serialization",
        ckpt_ok == 1000 && img_ok == 1000,
        started,
        format!("bit-exact round trips: checkpoints {ckpt_ok}/1000, images {img_ok}/1000"),
    );
}

// ---------------------------------------------------------------------------
// Shared blob-image dictionary (criteria 6 and 8)

use std::sync::OnceLock;

use nid_core::data::{gen_blob_images, grid_coords, Image};
use nid_core::measure::MeasurementSet;
use nid_core::metrics::psnr;
use nid_core::nid::GateInput;
use nid_core::tasks::{
    adapt_code, baseline_fit, fit_encoder, train_dictionary, Block, CodeInit, Functional,
    TrainHooks, TrainedModel,
};

struct BlobSetup {
    model: TrainedModel,
    cfg: TaskConfig,
    held_out: Vec<Image>,
    train_secs: f64,
}

fn blob_config() -> TaskConfig {
    TaskConfig {
        seed: 6,
        n: 256,
        k: 32,
        omega0: 10.0,
        gating: nid_core::nid::GateKind::Table,
        epochs: 1500,
        warmup_epochs: 0,
        lambda: 0.0,
        batch_size: 0,
        coord_batch: 256,
        lr_dict: 1e-2,
        lr_gate: 3e-2,
        lr_final_fraction: 0.1,
        encoder_hidden: vec![256],
        encoder_pool: 4,
        encoder_epochs: 2000,
        lr_encoder: 1e-3,
        count: 200,
        holdout: 20,
        size: 32,
        ..TaskConfig::default()
    }
}

fn pixel_block(img: &Image, loss: LossKind) -> Block {
    Block {
        omega: grid_coords(img.width, img.height),
        y: img.to_tensor(),
        functional: Functional::Pixels,
        loss,
        weight: 1.0,
    }
}

fn pooled_rows(images: &[Image], pool: usize) -> Tensor {
    let rows: Vec<f64> = images.iter().flat_map(|im| im.pooled(pool).unwrap()).collect();
    Tensor::new(vec![images.len(), rows.len() / images.len()], rows).unwrap()
}

/// Table-gated dictionary on 200 blob images, then an encoder gate fitted
/// against it.
fn blob_setup() -> &'static BlobSetup {
    static SETUP: OnceLock<BlobSetup> = OnceLock::new();
    SETUP.get_or_init(|| {
        let started = Instant::now();
        let cfg = blob_config();
        let mut all = gen_blob_images(cfg.count + cfg.holdout, cfg.size, cfg.seed);
        let held_out = all.split_off(cfg.count);
        let sets: Vec<MeasurementSet> = all
            .iter()
            .enumerate()
            .map(|(i, im)| MeasurementSet::new(i, grid_coords(im.width, im.height), im.to_tensor()).unwrap())
            .collect();
        let model = train_dictionary(&sets, Functional::Pixels, &cfg, TrainHooks::default()).unwrap();
        let model = fit_encoder(
            &model,
            &sets,
            Functional::Pixels,
            pooled_rows(&all, cfg.encoder_pool),
            &cfg,
        )
        .unwrap();
        BlobSetup {
            model,
            cfg,
            held_out,
            train_secs: started.elapsed().as_secs_f64(),
        }
    })
}

fn median(v: &[usize]) -> f64 {
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2]) as f64
    }
}

/// Number of steps after which the MSE first reaches 30 dB; `never` if it
/// does not within the budget.
fn steps_to_30db(losses: &[f64], never: usize) -> usize {
    losses.iter().position(|&l| l <= 1e-3).unwrap_or(never)
}

// ---------------------------------------------------------------------------
// 6. Fast adaptation

#[test]
fn c06_fast_adaptation() {
    let _serial = serial();
    let started = Instant::now();
    let setup = blob_setup();
    let budget = 200;
    let never = budget + 1;
    let lrs = [3e-3, 1e-2, 3e-2];

    let mut nid_best = (f64::INFINITY, 0.0, Vec::new());
    for &lr in &lrs {
        let cfg = TaskConfig {
            adapt_steps: budget,
            adapt_solver: SolverKind::Adam,
            lr_adapt: lr,
            ..setup.cfg.clone()
        };
        let steps: Vec<usize> = setup
            .held_out
            .iter()
            .map(|img| {
                let s = img.pooled(cfg.encoder_pool).unwrap();
                let init = CodeInit::from_gate(&setup.model, GateInput::Summary(&s)).unwrap();
                let fit = adapt_code(&setup.model, &[pixel_block(img, LossKind::L2)], &init, &cfg).unwrap();
                steps_to_30db(&fit.losses, never)
            })
            .collect();
        let med = median(&steps);
        if med < nid_best.0 {
            nid_best = (med, lr, steps);
        }
    }

    let arch = setup.cfg.arch(3, 2);
    let mut base_best = (f64::INFINITY, 0.0, Vec::new());
    for &lr in &lrs {
        let cfg = TaskConfig {
            baseline_steps: budget,
            lr_baseline: lr,
            baseline_coord_batch: 0,
            ..setup.cfg.clone()
        };
        let steps: Vec<usize> = setup
            .held_out
            .iter()
            .map(|img| {
                let mut reached = never;
                let mut stop = |step: usize, m: &nid_core::tasks::BaselineModel| {
                    // losses[i] is the full-image loss after i updates
                    let i = step - 1;
                    if m.losses[i] <= 1e-3 {
                        reached = reached.min(i);
                        return true;
                    }
                    false
                };
                let block = pixel_block(img, LossKind::L2);
                baseline_fit(std::slice::from_ref(&block), &arch, &cfg, Some(&mut stop)).unwrap();
                reached
            })
            .collect();
        let med = median(&steps);
        if med < base_best.0 {
            base_best = (med, lr, steps);
        }
    }

    let pass = nid_best.0 < base_best.0 / 5.0 && started.elapsed().as_secs_f64() < 900.0;
    report(
        6,
        "fast adaptation",
        pass,
        started,
        format!(
            "median steps to 30 dB over 20 held-out images (budget {budget}, Adam, best lr of {lrs:?} per arm): \
             NID {} (lr {}) vs baseline {} (lr {}); need NID < baseline/5 = {:.1}; \
             NID per-image {:?}; baseline per-image {:?}; training {:.0}s",
            nid_best.0, nid_best.1, base_best.0, base_best.1, base_best.0 / 5.0,
            nid_best.2, base_best.2, setup.train_secs
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. CT reconstruction

use nid_core::data::{corrupt_occlusion, gen_phantoms, gen_polygon_sdf, gen_sprite_video};
use nid_core::measure::Field;
use nid_core::metrics::{chamfer, masked_psnr};
use nid_core::tasks::{ct_offsets, ct_reconstruct, ct_views, sdf_blocks, sdf_fit, zero_level_set, CodedField, Sinogram};

fn render(model: &TrainedModel, code: &nid_core::nid::SparseCode, size: usize) -> Image {
    let field = CodedField {
        dictionary: &model.dictionary,
        code,
    };
    Image::from_field(size, size, &field).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn c07_ct_reconstruction() {
    let _serial = serial();
    let started = Instant::now();
    let size = 64;
    let cfg = TaskConfig {
        seed: 7,
        n: 256,
        k: 32,
        omega0: 30.0,
        gating: nid_core::nid::GateKind::Table,
        epochs: 1000,
        warmup_epochs: 0,
        lambda: 0.0,
        batch_size: 0,
        coord_batch: 512,
        lr_dict: 1e-2,
        lr_gate: 3e-2,
        lr_final_fraction: 0.1,
        views: 16,
        offsets: 64,
        quadrature: 32,
        adapt_steps: 1000,
        adapt_solver: SolverKind::Adam,
        lr_adapt: 1e-2,
        baseline_steps: 500,
        lr_baseline: 3e-3,
        baseline_coord_batch: 128,
        ..TaskConfig::default()
    };
    let (phantoms, rasters) = gen_phantoms(72, size, cfg.seed);
    let sets: Vec<MeasurementSet> = rasters[..64]
        .iter()
        .enumerate()
        .map(|(i, im)| MeasurementSet::new(i, grid_coords(size, size), im.to_tensor()).unwrap())
        .collect();
    let model = train_dictionary(&sets, Functional::Pixels, &cfg, TrainHooks::default()).unwrap();
    let train_secs = started.elapsed().as_secs_f64();

    let init = CodeInit::mean_row(&model).unwrap().expect("table gate");
    let angles = ct_views(cfg.views);
    let offsets = ct_offsets(cfg.offsets);
    let mut nid_psnr = Vec::new();
    let mut base_psnr = Vec::new();
    for j in 64..72 {
        // measured sinogram integrates the analytic phantom finely
        let sino = Sinogram::simulate(&phantoms[j], &angles, &offsets, 512).unwrap();
        let rec = ct_reconstruct(&model, &sino, &init, &cfg).unwrap();
        let img = render(&model, &rec.code, size);
        nid_psnr.push(psnr(&img.data, &rasters[j].data).unwrap());

        let set = sino.to_measurements(j).unwrap();
        let block = Block::new(&set, Functional::Rays { q: cfg.quadrature }, LossKind::L2);
        let base = baseline_fit(&[block], &cfg.arch(1, 2), &cfg, None).unwrap();
        let img = Image::from_field(size, size, &base).unwrap();
        base_psnr.push(psnr(&img.data, &rasters[j].data).unwrap());
    }
    let gap = mean(&nid_psnr) - mean(&base_psnr);
    let pass = gap >= 2.0 && started.elapsed().as_secs_f64() < 1200.0;
    report(
        7,
        "CT reconstruction",
        pass,
        started,
        format!(
            "8 held-out phantoms, {} views × {} rays: mean PSNR NID {:.2} dB vs baseline {:.2} dB, gap {:.2} dB (need ≥ 2); \
             NID {:?}; baseline {:?}; training {:.0}s",
            cfg.views,
            cfg.offsets,
            mean(&nid_psnr),
            mean(&base_psnr),
            gap,
            rounded(&nid_psnr),
            rounded(&base_psnr),
            train_secs
        ),
    );
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 100.0).round() / 100.0).collect()
}

// ---------------------------------------------------------------------------
// 8. Inpainting

#[test]
fn c08_inpainting() {
    let _serial = serial();
    let started = Instant::now();
    let setup = blob_setup();
    let cfg = TaskConfig {
        adapt_steps: 300,
        adapt_solver: SolverKind::Adam,
        lr_adapt: 1e-2,
        baseline_steps: 500,
        lr_baseline: 1e-3,
        baseline_coord_batch: 0,
        ..setup.cfg.clone()
    };
    let arch = cfg.arch(3, 2);
    let mut nid_psnr = Vec::new();
    let mut base_psnr = Vec::new();
    for (i, img) in setup.held_out.iter().take(10).enumerate() {
        let occ = corrupt_occlusion(img, 8, 800 + i as u64).unwrap();
        let restored = nid_core::tasks::inpaint(&setup.model, &occ.image, &cfg).unwrap();
        nid_psnr.push(masked_psnr(&restored.restored, img, &occ.mask).unwrap());

        let block = pixel_block(&occ.image, LossKind::L1);
        let base = baseline_fit(&[block], &arch, &cfg, None).unwrap();
        let fitted = Image::from_field(img.width, img.height, &base).unwrap().clamped();
        base_psnr.push(masked_psnr(&fitted, img, &occ.mask).unwrap());
    }
    let gap = mean(&nid_psnr) - mean(&base_psnr);
    let pass = gap >= 3.0;
    report(
        8,
        "inpainting",
        pass,
        started,
        format!(
            "8×8 occlusions on 10 held-out 32×32 images: occluded-region PSNR NID {:.2} dB vs ℓ1 baseline {:.2} dB, gap {:.2} dB (need ≥ 3); \
             NID {:?}; baseline {:?}",
            mean(&nid_psnr),
            mean(&base_psnr),
            gap,
            rounded(&nid_psnr),
            rounded(&base_psnr)
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. Video decomposition

#[test]
fn c09_video_decomposition() {
    let _serial = serial();
    let started = Instant::now();
    let video = gen_sprite_video(16, 32, 9).unwrap();
    let cfg = TaskConfig {
        seed: 9,
        n: 4,
        k: 1,
        omega0: 10.0,
        epochs: 1500,
        coord_batch: 0,
        lr_dict: 1e-2,
        lr_gate: 1e-2,
        lr_final_fraction: 0.01,
        beta: 3.0,
        video_penalty: 0.03,
        temporal_hidden: 16,
        ..TaskConfig::default()
    };
    let d = nid_core::tasks::video_decompose(&video.frames, &cfg).unwrap();
    let mut abs_err = 0.0;
    let mut count = 0usize;
    let (mut inside, mut total) = (0.0, 0.0);
    for ((bg, res), mask) in d.background.iter().zip(&d.residual).zip(&video.masks) {
        for (a, b) in bg.data.iter().zip(&video.background.data) {
            abs_err += (a - b).abs();
            count += 1;
        }
        for (e, &m) in res.data.iter().zip(mask) {
            total += e.abs();
            if m {
                inside += e.abs();
            }
        }
    }
    let mae = abs_err / count as f64;
    let share = if total > 0.0 { inside / total } else { 1.0 };
    let pass = mae < 0.05 && share >= 0.9;
    report(
        9,
        "video decomposition",
        pass,
        started,
        format!(
            "16 frames 32×32: background MAE {mae:.4} (need < 0.05), residual mass inside sprite masks {:.1}% (need ≥ 90%), final loss {:.4}",
            100.0 * share,
            d.losses.last().copied().unwrap_or(f64::NAN)
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. SDF robustness

fn chamfer_or_inf(pts: &[[f64; 2]], truth: &[[f64; 2]]) -> f64 {
    chamfer(pts, truth).unwrap_or(f64::INFINITY)
}

#[test]
fn c10_sdf_robustness() {
    let _serial = serial();
    let started = Instant::now();
    let grid = 48;
    let lattice = 128;
    let cfg = TaskConfig {
        seed: 10,
        n: 64,
        k: 8,
        omega0: 10.0,
        gating: nid_core::nid::GateKind::Table,
        loss: LossKind::L1,
        epochs: 800,
        warmup_epochs: 0,
        lambda: 0.0,
        batch_size: 0,
        coord_batch: 512,
        lr_dict: 1e-2,
        lr_gate: 3e-2,
        lr_final_fraction: 0.1,
        adapt_steps: 300,
        adapt_solver: SolverKind::Adam,
        lr_adapt: 1e-2,
        baseline_steps: 1000,
        lr_baseline: 1e-3,
        baseline_coord_batch: 1024,
        ..TaskConfig::default()
    };
    let train_count = 96;
    let held = 4;
    let polys = gen_polygon_sdf(train_count + held, cfg.seed);
    let coords = grid_coords(grid, grid);
    let sets: Vec<MeasurementSet> = polys[..train_count]
        .iter()
        .enumerate()
        .map(|(i, p)| MeasurementSet::new(i, coords.clone(), p.eval(&coords).unwrap()).unwrap())
        .collect();
    let model = train_dictionary(&sets, Functional::Pixels, &cfg, TrainHooks::default()).unwrap();
    let train_secs = started.elapsed().as_secs_f64();
    let init = CodeInit::mean_row(&model).unwrap().expect("table gate");

    let arch = cfg.arch(1, 2);
    let mut nid = [Vec::new(), Vec::new()];
    let mut base = [Vec::new(), Vec::new()];
    for (h, poly) in polys[train_count..].iter().enumerate() {
        let (truth, _) = poly.boundary_points(4 * lattice);
        for (s, total) in [500usize, 10_000].into_iter().enumerate() {
            let mut r = nid_core::rng::substream(cfg.seed + 1, (h * 2 + s) as u64);
            let samples = poly.sample(total / 2, total / 2, &mut r);
            let fit = sdf_fit(&model, &samples, &init, &cfg).unwrap();
            let field = CodedField {
                dictionary: &model.dictionary,
                code: &fit.code,
            };
            let (pts, _) = zero_level_set(&field, lattice).unwrap();
            nid[s].push(chamfer_or_inf(&pts, &truth));

            let b = baseline_fit(&sdf_blocks(&samples).unwrap(), &arch, &cfg, None).unwrap();
            let (pts, _) = zero_level_set(&b, lattice).unwrap();
            base[s].push(chamfer_or_inf(&pts, &truth));
        }
    }
    let nid_ratio = mean(&nid[0]) / mean(&nid[1]);
    let base_ratio = mean(&base[0]) / mean(&base[1]);
    let pass = nid_ratio < 2.0 && base_ratio > 5.0;
    report(
        10,
        "SDF robustness",
        pass,
        started,
        format!(
            "{held} held-out polygons, mean Chamfer 500 vs 10k samples: NID {:.4} vs {:.4} (×{nid_ratio:.2}, need < 2); \
             baseline {:.4} vs {:.4} (×{base_ratio:.2}, need > 5); training {train_secs:.0}s",
            mean(&nid[0]),
            mean(&nid[1]),
            mean(&base[0]),
            mean(&base[1])
        ),
    );
}

// ---------------------------------------------------------------------------
// 11. Utilization balancing

#[test]
fn c11_utilization_balancing() {
    let _serial = serial();
    let started = Instant::now();
    let images = gen_blob_images(64, 16, 11);
    let sets: Vec<MeasurementSet> = images
        .iter()
        .enumerate()
        .map(|(i, im)| MeasurementSet::new(i, grid_coords(16, 16), im.to_tensor()).unwrap())
        .collect();
    let base = TaskConfig {
        seed: 11,
        n: 16,
        k: 2,
        omega0: 10.0,
        gating: nid_core::nid::GateKind::Table,
        epochs: 300,
        warmup_epochs: 50,
        batch_size: 0,
        coord_batch: 128,
        lr_dict: 1e-2,
        lr_gate: 3e-2,
        lambda: 0.01,
        cv_abs: true,
        ..TaskConfig::default()
    };
    let max_share = |cfg: &TaskConfig| {
        let m = train_dictionary(&sets, Functional::Pixels, cfg, TrainHooks::default()).unwrap();
        m.utilization.iter().copied().fold(0.0, f64::max)
    };
    let on = max_share(&base);
    let off = max_share(&TaskConfig {
        cv_scale: 0.0,
        ..base.clone()
    });
    let bound = 4.0 / base.n as f64;
    let pass = on <= bound && on < off;
    report(
        11,
        "utilization balancing",
        pass,
        started,
        format!(
            "n = {}, k = {}: max expert share with CV {on:.4} (need ≤ {bound:.4} and < off), without CV {off:.4}",
            base.n, base.k
        ),
    );
}
