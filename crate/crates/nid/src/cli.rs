//! The `nid` command line.
//!
//! Every subcommand resolves its config from `--config` and `--set`, writes
//! `config.resolved.json` and `metrics.csv` into `--out`, and maps failures
//! to exit codes: 2 for usage and config errors, 3 for runtime failures.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nid_core::data::{
    corrupt_occlusion, gen_blob_images, gen_phantoms, gen_polygon_sdf, gen_sprite_video,
    grid_coords, Image, PolygonSamples,
};
use nid_core::measure::{MeasurementSet, SdfSample};
use nid_core::metrics::{chamfer, masked_psnr, nearest, normal_consistency, psnr, ssim, MetricReport};
use nid_core::nid::{GateInput, GateKind};
use nid_core::rng;
use nid_core::tasks::{
    adapt_code, ct_offsets, ct_reconstruct, ct_views, fit_encoder, inpaint, sdf_fit,
    train_dictionary, video_decompose, Block, CodeInit, CodedField, Functional, Sinogram,
    TaskConfig, TrainHooks, TrainedModel,
};
use nid_core::Tensor;

use crate::error::{IoError, Result};
use crate::{bench, checkpoint, config, csv_io, image_io};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Checkpoint file name written by `train`.
pub const MODEL_NAME: &str = "model.nidc";

#[derive(Parser, Debug)]
#[command(name = "nid", version, about = "Neural implicit dictionaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum DataKind {
    Blobs,
    Phantoms,
    Polygons,
    Video,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum TrainKind {
    /// Pixel fitting on blob images, or on `--data` images.
    Images,
    /// Pixel fitting on phantom rasters, for later CT reconstruction.
    Ct,
    /// Signed-distance fitting on polygon samples.
    Sdf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus.
    GenData {
        kind: DataKind,
        #[command(flatten)]
        common: Common,
    },
    /// Train a dictionary and its gate.
    Train {
        kind: TrainKind,
        /// Directory of PPM/PGM images used instead of generated blobs.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit codes for images with the dictionary frozen.
    Adapt {
        #[arg(long)]
        model: PathBuf,
        /// Images to fit; held-out blobs when omitted.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Restore corrupted images with an ℓ1 code fit.
    Inpaint {
        #[arg(long)]
        model: PathBuf,
        /// Corrupted images; occluded held-out blobs when omitted.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Split a video into background and residual.
    Video {
        /// Frames in order; a generated sprite video when omitted.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct images from sinograms.
    Ct {
        #[arg(long)]
        model: PathBuf,
        /// Sinogram CSVs; simulated from held-out phantoms when omitted.
        #[arg(long = "sinogram")]
        sinograms: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit signed distance fields to point samples.
    Sdf {
        #[arg(long)]
        model: PathBuf,
        /// Point CSVs; sampled from held-out polygons when omitted.
        #[arg(long = "points")]
        points: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare two images.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Also write metrics.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure rendering throughput of a checkpoint.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e @ IoError::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { kind, common } => with_setup(&common, |cfg, out| gen_data(kind, cfg, out)),
        Command::Train { kind, data, common } => {
            with_setup(&common, |cfg, out| train(kind, data.as_deref(), cfg, out))
        }
        Command::Adapt {
            model,
            inputs,
            common,
        } => with_setup(&common, |cfg, out| adapt(&checkpoint::load(&model)?, &inputs, cfg, out)),
        Command::Inpaint {
            model,
            inputs,
            common,
        } => with_setup(&common, |cfg, out| {
            restore(&checkpoint::load(&model)?, &inputs, cfg, out)
        }),
        Command::Video { inputs, common } => with_setup(&common, |cfg, out| video(&inputs, cfg, out)),
        Command::Ct {
            model,
            sinograms,
            common,
        } => with_setup(&common, |cfg, out| ct(&checkpoint::load(&model)?, &sinograms, cfg, out)),
        Command::Sdf {
            model,
            points,
            common,
        } => with_setup(&common, |cfg, out| sdf(&checkpoint::load(&model)?, &points, cfg, out)),
        Command::Metrics {
            pred,
            reference,
            out,
        } => metrics(&pred, &reference, out.as_deref()),
        Command::Bench {
            model,
            reps,
            common,
        } => with_setup(&common, |cfg, _out| {
            let model = checkpoint::load(&model)?;
            let t = bench::bench_throughput(&model, cfg.size, reps)?;
            let mut report = MetricReport::new();
            report.insert(0, "images_per_sec", t.images_per_sec);
            report.insert(0, "params", t.params as f64);
            report.insert(0, "head_evals_per_image", t.head_evals_per_image as f64);
            Ok(report)
        }),
    }
}

/// Resolves the config, creates the output directory, runs `body` and
/// writes the resolved config and its metric report.
fn with_setup(
    common: &Common,
    body: impl FnOnce(&TaskConfig, &Path) -> Result<MetricReport>,
) -> Result<()> {
    let cfg = config::load(common.config.as_deref(), &common.set)?;
    fs::create_dir_all(&common.out).map_err(|e| IoError::file(&common.out, e))?;
    config::write_resolved(&common.out, &cfg)?;
    let report = body(&cfg, &common.out)?;
    csv_io::write_file(common.out.join("metrics.csv"), report.to_csv().as_bytes())
}

fn numbered(dir: &Path, stem: &str, i: usize, ext: &str) -> PathBuf {
    dir.join(format!("{stem}_{i:04}.{ext}"))
}

fn image_ext(img: &Image) -> &'static str {
    if img.channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

fn write_image(dir: &Path, stem: &str, i: usize, img: &Image) -> Result<()> {
    image_io::write_pnm(numbered(dir, stem, i, image_ext(img)), img)
}

/// Training blobs followed by held-out ones, all from one seed.
fn blob_split(cfg: &TaskConfig) -> (Vec<Image>, Vec<Image>) {
    let mut all = gen_blob_images(cfg.count + cfg.holdout, cfg.size, cfg.seed);
    let held = all.split_off(cfg.count);
    (all, held)
}

fn image_set(id: usize, img: &Image) -> Result<MeasurementSet> {
    Ok(MeasurementSet::new(
        id,
        grid_coords(img.width, img.height),
        img.to_tensor(),
    )?)
}

fn pixel_block(img: &Image, cfg: &TaskConfig) -> Block {
    Block {
        omega: grid_coords(img.width, img.height),
        y: img.to_tensor(),
        functional: Functional::Pixels,
        loss: cfg.loss,
        weight: 1.0,
    }
}

fn summaries(images: &[Image], pool: usize) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = images
        .iter()
        .map(|im| im.pooled(pool))
        .collect::<nid_core::Result<_>>()?;
    let d = rows.first().map_or(0, Vec::len);
    Ok(Tensor::new(vec![rows.len(), d], rows.concat())?)
}

/// Encoder code for an image when the gate is an encoder; otherwise the
/// mean table row, else a small random code.
fn image_init(model: &TrainedModel, img: &Image, cfg: &TaskConfig) -> Result<CodeInit> {
    if model.gate.kind == GateKind::Encoder {
        let s = img.pooled(cfg.encoder_pool)?;
        return Ok(CodeInit::from_gate(model, GateInput::Summary(&s))?);
    }
    Ok(CodeInit::mean_row(model)?.unwrap_or(CodeInit::Noise(cfg.init_noise)))
}

fn polygon_samples(cfg: &TaskConfig, count: usize, seed: u64) -> Vec<(nid_core::data::ConvexPolygon, PolygonSamples)> {
    gen_polygon_sdf(count, seed)
        .into_iter()
        .enumerate()
        .map(|(i, poly)| {
            let mut r = rng::substream(seed, i as u64);
            let on = cfg.samples / 2;
            let s = poly.sample(on, cfg.samples - on, &mut r);
            (poly, s)
        })
        .collect()
}

fn sdf_set(id: usize, s: &PolygonSamples) -> Result<MeasurementSet> {
    let pts: Vec<&SdfSample> = s.on.iter().chain(&s.off).collect();
    let omega: Vec<f64> = pts.iter().flat_map(|p| p.x.iter().copied()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.d).collect();
    let m = pts.first().map_or(2, |p| p.x.len());
    Ok(MeasurementSet::new(
        id,
        Tensor::new(vec![pts.len(), m], omega)?,
        Tensor::new(vec![pts.len(), 1], y)?,
    )?)
}

fn gen_data(kind: DataKind, cfg: &TaskConfig, out: &Path) -> Result<MetricReport> {
    let mut report = MetricReport::new();
    match kind {
        DataKind::Blobs => {
            let (train, held) = blob_split(cfg);
            for (i, img) in train.iter().chain(&held).enumerate() {
                write_image(out, "blob", i, img)?;
                report.insert(i, "mean", mean(&img.data));
            }
        }
        DataKind::Phantoms => {
            let (phantoms, images) = gen_phantoms(cfg.count, cfg.size, cfg.seed);
            let (angles, offsets) = (ct_views(cfg.views), ct_offsets(cfg.offsets));
            for (i, (ph, img)) in phantoms.iter().zip(&images).enumerate() {
                write_image(out, "phantom", i, img)?;
                let sino = Sinogram::simulate(ph, &angles, &offsets, cfg.quadrature)?;
                let path = numbered(out, "sinogram", i, "csv");
                let file = fs::File::create(&path).map_err(|e| IoError::file(&path, e))?;
                csv_io::write_sinogram(file, &sino)?;
                report.insert(i, "mean", mean(&img.data));
            }
        }
        DataKind::Polygons => {
            for (i, (poly, s)) in polygon_samples(cfg, cfg.count, cfg.seed).iter().enumerate() {
                let pts: Vec<SdfSample> = s.on.iter().chain(&s.off).cloned().collect();
                let path = numbered(out, "polygon", i, "csv");
                let file = fs::File::create(&path).map_err(|e| IoError::file(&path, e))?;
                csv_io::write_points(file, &pts)?;
                report.insert(i, "perimeter", poly.perimeter());
            }
        }
        DataKind::Video => {
            let v = gen_sprite_video(cfg.frames, cfg.size, cfg.seed)?;
            image_io::write_pnm(out.join("background.pgm"), &v.background)?;
            for (t, (frame, mask)) in v.frames.iter().zip(&v.masks).enumerate() {
                write_image(out, "frame", t, frame)?;
                let m: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                write_image(out, "mask", t, &Image::new(frame.width, frame.height, 1, m)?)?;
                report.insert(t, "sprite_pixels", mask.iter().filter(|&&b| b).count() as f64);
            }
        }
    }
    Ok(report)
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn read_image_dir(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| IoError::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(IoError::format("image directory", format!("no PPM/PGM files in {}", dir.display())));
    }
    paths.iter().map(image_io::read_pnm).collect()
}

fn train(kind: TrainKind, data: Option<&Path>, cfg: &TaskConfig, out: &Path) -> Result<MetricReport> {
    let (functional, images, sets) = match kind {
        TrainKind::Images | TrainKind::Ct => {
            let images = match (kind, data) {
                (_, Some(dir)) => read_image_dir(dir)?,
                (TrainKind::Ct, None) => gen_phantoms(cfg.count, cfg.size, cfg.seed).1,
                _ => blob_split(cfg).0,
            };
            let sets = images
                .iter()
                .enumerate()
                .map(|(i, im)| image_set(i, im))
                .collect::<Result<Vec<_>>>()?;
            (Functional::Pixels, images, sets)
        }
        TrainKind::Sdf => {
            let sets = polygon_samples(cfg, cfg.count, cfg.seed)
                .iter()
                .enumerate()
                .map(|(i, (_, s))| sdf_set(i, s))
                .collect::<Result<Vec<_>>>()?;
            (Functional::Pixels, Vec::new(), sets)
        }
    };
    let needs_summaries = cfg.gating == GateKind::Encoder || cfg.encoder_epochs > 0;
    if needs_summaries && images.is_empty() {
        return Err(IoError::Config("encoder gates need image data".into()));
    }
    let summary = if needs_summaries {
        Some(summaries(&images, cfg.encoder_pool)?)
    } else {
        None
    };
    let mut model = train_dictionary(
        &sets,
        functional,
        cfg,
        TrainHooks {
            summaries: summary.clone().filter(|_| cfg.gating == GateKind::Encoder),
            ..Default::default()
        },
    )?;
    if cfg.encoder_epochs > 0 {
        let s = summary.expect("summaries built when encoder epochs are set");
        model = fit_encoder(&model, &sets, functional, s, cfg)?;
    }
    checkpoint::round_to_f32(&mut model);
    checkpoint::save(out.join(MODEL_NAME), &model)?;

    let mut log = String::from("epoch,mode,loss,data_loss,penalty\n");
    for e in &model.log {
        log.push_str(&format!(
            "{},{:?},{},{},{}\n",
            e.epoch, e.mode, e.loss, e.data_loss, e.penalty
        ));
    }
    csv_io::write_file(out.join("train_log.csv"), log.as_bytes())?;

    let mut report = MetricReport::new();
    for (i, set) in sets.iter().enumerate() {
        let pooled = match model.gate.kind {
            GateKind::Encoder => Some(images[i].pooled(cfg.encoder_pool)?),
            GateKind::Table => None,
        };
        let q = match &pooled {
            Some(s) => GateInput::Summary(s),
            None => GateInput::Instance(i),
        };
        let code = model.code_for(q)?;
        let field = CodedField {
            dictionary: &model.dictionary,
            code: &code,
        };
        let pred = nid_core::measure::Field::eval(&field, &set.omega)?;
        match kind {
            TrainKind::Sdf => report.insert(i, "fit_mae", mean_abs_diff(pred.data(), set.y.data())),
            _ => report.insert(i, "fit_psnr", psnr(pred.data(), set.y.data())?),
        }
    }
    Ok(report)
}

fn adapt(model: &TrainedModel, inputs: &[PathBuf], cfg: &TaskConfig, out: &Path) -> Result<MetricReport> {
    let images = if inputs.is_empty() {
        blob_split(cfg).1
    } else {
        inputs.iter().map(image_io::read_pnm).collect::<Result<_>>()?
    };
    let mut report = MetricReport::new();
    for (i, img) in images.iter().enumerate() {
        let init = image_init(model, img, cfg)?;
        let fit = adapt_code(model, &[pixel_block(img, cfg)], &init, cfg)?;
        let field = CodedField {
            dictionary: &model.dictionary,
            code: &fit.code,
        };
        let fitted = Image::from_field(img.width, img.height, &field)?;
        write_image(out, "fitted", i, &fitted.clone().clamped())?;
        report.insert(i, "psnr", psnr(&fitted.data, &img.data)?);
        report.insert(i, "ssim", ssim(&fitted, img)?);
        report.insert(i, "final_loss", *fit.losses.last().unwrap_or(&f64::NAN));
    }
    Ok(report)
}

fn restore(model: &TrainedModel, inputs: &[PathBuf], cfg: &TaskConfig, out: &Path) -> Result<MetricReport> {
    // (corrupted, clean reference and occlusion mask when known)
    let cases: Vec<(Image, Option<(Image, Vec<bool>)>)> = if inputs.is_empty() {
        blob_split(cfg)
            .1
            .into_iter()
            .enumerate()
            .map(|(i, clean)| {
                let occ = corrupt_occlusion(&clean, cfg.occlusion, cfg.seed.wrapping_add(i as u64))?;
                Ok((occ.image, Some((clean, occ.mask))))
            })
            .collect::<nid_core::Result<_>>()?
    } else {
        inputs
            .iter()
            .map(|p| Ok((image_io::read_pnm(p)?, None)))
            .collect::<Result<_>>()?
    };
    let mut report = MetricReport::new();
    for (i, (corrupted, truth)) in cases.iter().enumerate() {
        let r = inpaint(model, corrupted, cfg)?;
        write_image(out, "corrupted", i, corrupted)?;
        write_image(out, "restored", i, &r.restored)?;
        report.insert(i, "final_loss", *r.losses.last().unwrap_or(&f64::NAN));
        if let Some((clean, mask)) = truth {
            report.insert(i, "psnr", psnr(&r.restored.data, &clean.data)?);
            report.insert(i, "masked_psnr", masked_psnr(&r.restored, clean, mask)?);
        }
    }
    Ok(report)
}

fn video(inputs: &[PathBuf], cfg: &TaskConfig, out: &Path) -> Result<MetricReport> {
    let (frames, truth) = if inputs.is_empty() {
        let v = gen_sprite_video(cfg.frames, cfg.size, cfg.seed)?;
        (v.frames.clone(), Some(v))
    } else {
        let frames = inputs.iter().map(image_io::read_pnm).collect::<Result<Vec<_>>>()?;
        (frames, None)
    };
    let d = video_decompose(&frames, cfg)?;
    let mut report = MetricReport::new();
    for (t, (bg, res)) in d.background.iter().zip(&d.residual).enumerate() {
        write_image(out, "background", t, &bg.clone().clamped())?;
        // residuals are signed; shown around mid-grey
        let shown: Vec<f64> = res.data.iter().map(|v| (0.5 + v).clamp(0.0, 1.0)).collect();
        write_image(out, "residual", t, &Image::new(res.width, res.height, res.channels, shown)?)?;
        if let Some(v) = &truth {
            let mae = mean_abs_diff(&bg.data, &v.background.data);
            let total: f64 = res.data.iter().map(|x| x.abs()).sum();
            let inside: f64 = res
                .data
                .iter()
                .zip(&v.masks[t])
                .filter(|(_, &m)| m)
                .map(|(x, _)| x.abs())
                .sum();
            report.insert(t, "background_mae", mae);
            report.insert(t, "residual_in_mask", if total > 0.0 { inside / total } else { 1.0 });
        }
    }
    Ok(report)
}

fn ct(model: &TrainedModel, paths: &[PathBuf], cfg: &TaskConfig, out: &Path) -> Result<MetricReport> {
    let cases: Vec<(Sinogram, Option<Image>)> = if paths.is_empty() {
        let (phantoms, images) = gen_phantoms(cfg.count + cfg.holdout, cfg.size, cfg.seed);
        let (angles, offsets) = (ct_views(cfg.views), ct_offsets(cfg.offsets));
        phantoms
            .iter()
            .zip(images)
            .skip(cfg.count)
            .map(|(ph, img)| Ok((Sinogram::simulate(ph, &angles, &offsets, cfg.quadrature)?, Some(img))))
            .collect::<Result<_>>()?
    } else {
        paths
            .iter()
            .map(|p| {
                let file = fs::File::open(p).map_err(|e| IoError::file(p, e))?;
                Ok((csv_io::read_sinogram(file)?, None))
            })
            .collect::<Result<_>>()?
    };
    let init = CodeInit::mean_row(model)?.unwrap_or(CodeInit::Noise(cfg.init_noise));
    let mut report = MetricReport::new();
    for (i, (sino, truth)) in cases.iter().enumerate() {
        let r = ct_reconstruct(model, sino, &init, cfg)?;
        let field = CodedField {
            dictionary: &model.dictionary,
            code: &r.code,
        };
        let recon = Image::from_field(cfg.size, cfg.size, &field)?;
        write_image(out, "recon", i, &recon.clone().clamped())?;
        report.insert(i, "final_loss", *r.losses.last().unwrap_or(&f64::NAN));
        if let Some(img) = truth {
            report.insert(i, "psnr", psnr(&recon.data, &img.data)?);
        }
    }
    Ok(report)
}

fn sdf(model: &TrainedModel, paths: &[PathBuf], cfg: &TaskConfig, out: &Path) -> Result<MetricReport> {
    let cases: Vec<(PolygonSamples, Option<nid_core::data::ConvexPolygon>)> = if paths.is_empty() {
        polygon_samples(cfg, cfg.count + cfg.holdout, cfg.seed)
            .into_iter()
            .skip(cfg.count)
            .map(|(poly, s)| (s, Some(poly)))
            .collect()
    } else {
        paths
            .iter()
            .map(|p| {
                let file = fs::File::open(p).map_err(|e| IoError::file(p, e))?;
                let pts = csv_io::read_points(file)?;
                let (on, off) = pts.into_iter().partition(|s| s.on_surface);
                Ok((
                    PolygonSamples {
                        on,
                        normals: Vec::new(),
                        off,
                    },
                    None,
                ))
            })
            .collect::<Result<_>>()?
    };
    let init = CodeInit::mean_row(model)?.unwrap_or(CodeInit::Noise(cfg.init_noise));
    let mut report = MetricReport::new();
    for (i, (samples, poly)) in cases.iter().enumerate() {
        let fit = sdf_fit(model, samples, &init, cfg)?;
        let field = CodedField {
            dictionary: &model.dictionary,
            code: &fit.code,
        };
        let (pts, normals) = nid_core::tasks::zero_level_set(&field, cfg.size)?;
        let rows: Vec<SdfSample> = pts
            .iter()
            .map(|p| SdfSample {
                x: p.to_vec(),
                on_surface: true,
                d: 0.0,
            })
            .collect();
        let path = numbered(out, "surface", i, "csv");
        let file = fs::File::create(&path).map_err(|e| IoError::file(&path, e))?;
        csv_io::write_points(file, &rows)?;
        report.insert(i, "final_loss", *fit.losses.last().unwrap_or(&f64::NAN));
        if let (Some(poly), false) = (poly, pts.is_empty()) {
            let (truth, truth_normals) = poly.boundary_points(4 * cfg.size);
            report.insert(i, "chamfer", chamfer(&pts, &truth)?);
            let matched: Vec<[f64; 2]> = nearest(&pts, &truth)
                .into_iter()
                .map(|j| truth_normals[j])
                .collect();
            report.insert(i, "normal_consistency", normal_consistency(&normals, &matched)?);
        }
    }
    Ok(report)
}

fn metrics(pred: &Path, reference: &Path, out: Option<&Path>) -> Result<()> {
    let a = image_io::read_pnm(pred)?;
    let b = image_io::read_pnm(reference)?;
    let mut report = MetricReport::new();
    report.insert(0, "psnr", psnr(&a.data, &b.data)?);
    report.insert(0, "ssim", ssim(&a, &b)?);
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
        csv_io::write_file(dir.join("metrics.csv"), csv.as_bytes())?;
    }
    Ok(())
}
