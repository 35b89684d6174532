use nid_core::data::{gen_polygon_sdf, gen_sprite_video, grid_coords, Image};
use nid_core::measure::{time_coord, Field, MeasurementSet};
use nid_core::metrics::{chamfer, psnr, ssim, MetricReport, PSNR_CAP};
use nid_core::nid::{abs_top_k, gating_mode, sparsify, video_penalty, GatingMode, PatchGrid};
use nid_core::rng;
use nid_core::tasks::{
    sdf_blocks, train_dictionary, video_decompose, Functional, TaskConfig, TrainHooks,
};
use nid_core::Tensor;
use proptest::prelude::*;

fn gates() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (1usize..24).prop_flat_map(|n| (prop::collection::vec(-10.0f64..10.0, n), 1..=n))
}

fn image(size: usize, channels: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..=1.0, size * size * channels)
        .prop_map(move |d| Image::new(size, size, channels, d).unwrap())
}

fn points() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(prop::array::uniform2(-1.0f64..1.0), 1..20)
}

fn tiny_config(seed: u64) -> TaskConfig {
    TaskConfig {
        seed,
        n: 4,
        k: 2,
        n_freq: 4,
        width: 8,
        layers: 2,
        head_width: 4,
        omega0: 10.0,
        epochs: 3,
        warmup_epochs: 1,
        batch_size: 0,
        temporal_hidden: 4,
        ..TaskConfig::default()
    }
}

proptest! {
    #[test]
    fn sparsify_is_k_sparse_unit_norm_and_sorted((h, k) in gates()) {
        prop_assume!(h.iter().any(|v| *v != 0.0));
        match sparsify(&h, k) {
            Ok(code) => {
                prop_assert!(code.len() <= k);
                let idx = code.indices();
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(idx.iter().all(|&i| i < h.len()));
                prop_assert!((code.l2_norm() - 1.0).abs() <= 1e-9);
            }
            // only when every kept gate is exactly zero
            Err(_) => prop_assert!(abs_top_k(&h, k).iter().all(|&i| h[i] == 0.0)),
        }
    }

    #[test]
    fn sparsify_ignores_positive_scale((h, k) in gates(), s in 1e-3f64..1e3) {
        let scaled: Vec<f64> = h.iter().map(|v| v * s).collect();
        if let (Ok(a), Ok(b)) = (sparsify(&h, k), sparsify(&scaled, k)) {
            prop_assert_eq!(a.indices(), b.indices());
            for (x, y) in a.weights().iter().zip(b.weights()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn top_k_ties_prefer_lower_indices(n in 2usize..20, v in 0.1f64..5.0) {
        let h = vec![v; n];
        let k = n / 2;
        prop_assert_eq!(abs_top_k(&h, k), (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn gating_switches_once_at_warmup(epoch in 0usize..100, warmup in 0usize..100) {
        let expected = if epoch < warmup { GatingMode::DenseL1 } else { GatingMode::HardTopK };
        prop_assert_eq!(gating_mode(epoch, warmup), expected);
    }

    #[test]
    fn patch_blend_weights_partition_unity(
        counts in prop::collection::vec(1usize..5, 1..4),
        overlap in 0.0f64..0.49,
        xs in prop::collection::vec(-1.2f64..1.2, 12),
    ) {
        let m = counts.len();
        let grid = PatchGrid { counts, overlap };
        let rows = xs.len() / m;
        let x = Tensor::new(vec![rows, m], xs[..rows * m].to_vec()).unwrap();
        let d = grid.dispatch(&x).unwrap();
        for w in &d.weights {
            prop_assert!(!w.is_empty());
            prop_assert!(w.iter().all(|&(p, v)| p < grid.num_patches() && v > 0.0));
            let total: f64 = w.iter().map(|e| e.1).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn psnr_is_symmetric_and_capped(a in image(4, 1), b in image(4, 1)) {
        let ab = psnr(&a.data, &b.data).unwrap();
        prop_assert_eq!(ab, psnr(&b.data, &a.data).unwrap());
        prop_assert!(ab <= PSNR_CAP);
        prop_assert_eq!(psnr(&a.data, &a.data).unwrap(), PSNR_CAP);
    }

    #[test]
    fn ssim_is_symmetric_and_one_on_identity(a in image(9, 1), b in image(9, 1)) {
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn chamfer_is_symmetric_and_zero_on_identity(p in points(), q in points()) {
        let pq = chamfer(&p, &q).unwrap();
        prop_assert!((pq - chamfer(&q, &p).unwrap()).abs() <= 1e-12);
        prop_assert!(pq >= 0.0);
        prop_assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn video_penalty_grows_with_beta(
        alpha in prop::collection::vec(-2.0f64..2.0, 1..10),
        beta in 0.01f64..3.0,
        extra in 0.0f64..2.0,
    ) {
        let lo = video_penalty(&alpha, beta);
        let hi = video_penalty(&alpha, beta + extra);
        prop_assert!(hi >= lo);
        let direct: f64 = alpha.iter().enumerate().map(|(i, a)| a.abs() * (beta * i as f64).exp()).sum();
        prop_assert!((lo - direct).abs() <= 1e-12 * direct.max(1.0));
    }

    #[test]
    fn metric_csv_mean_row_is_row_mean(values in prop::collection::vec(-100.0f64..100.0, 1..20)) {
        let mut report = MetricReport::new();
        for (i, v) in values.iter().enumerate() {
            report.insert(i, "psnr", *v);
        }
        let csv = report.to_csv();
        let rows: Vec<f64> = csv
            .lines()
            .skip(1)
            .filter(|l| !l.starts_with("mean"))
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        let mean_row: f64 = csv.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
        let direct = rows.iter().sum::<f64>() / rows.len() as f64;
        prop_assert_eq!(rows, values);
        prop_assert!((mean_row - direct).abs() <= 1e-9);
    }

    #[test]
    fn time_coords_are_normalized(frames in 2usize..50, t in 0usize..50) {
        prop_assume!(t < frames);
        let c = time_coord(t, frames);
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn sdf_samples_match_the_shape(seed in 0u64..1000, on in 1usize..40, off in 1usize..40) {
        let poly = &gen_polygon_sdf(1, seed)[0];
        let s = poly.sample(on, off, &mut rng::seeded(seed));
        let blocks = sdf_blocks(&s).unwrap();
        prop_assert!(blocks[0].y.data().iter().all(|&y| y == 0.0));
        let on_vals = poly.eval(&blocks[0].omega).unwrap();
        prop_assert!(on_vals.data().iter().all(|d| d.abs() <= 1e-9));
        let off_vals = poly.eval(&blocks[1].omega).unwrap();
        for (p, y) in off_vals.data().iter().zip(blocks[1].y.data()) {
            prop_assert!(y.is_finite());
            prop_assert!((p - y).abs() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn video_split_reproduces_frames_exactly(frames in 2usize..5, seed in 0u64..1000) {
        let video = gen_sprite_video(frames, 8, seed).unwrap();
        let cfg = TaskConfig { epochs: 1, ..tiny_config(seed) };
        let d = video_decompose(&video.frames, &cfg).unwrap();
        for ((f, x), e) in video.frames.iter().zip(&d.background).zip(&d.residual) {
            for ((y, a), b) in f.data.iter().zip(&x.data).zip(&e.data) {
                prop_assert_eq!(a + b, *y);
            }
        }
    }

    #[test]
    fn training_is_reproducible(seed in 0u64..1000) {
        let images: Vec<Image> = (0..2)
            .map(|i| {
                let d: Vec<f64> = (0..64).map(|p| ((p * (i + 3) + seed as usize) % 17) as f64 / 17.0).collect();
                Image::new(8, 8, 1, d).unwrap()
            })
            .collect();
        let sets: Vec<MeasurementSet> = images
            .iter()
            .enumerate()
            .map(|(i, im)| MeasurementSet::new(i, grid_coords(8, 8), im.to_tensor()).unwrap())
            .collect();
        let cfg = tiny_config(seed);
        let a = train_dictionary(&sets, Functional::Pixels, &cfg, TrainHooks::default()).unwrap();
        let b = train_dictionary(&sets, Functional::Pixels, &cfg, TrainHooks::default()).unwrap();
        prop_assert_eq!(&a.dictionary.params, &b.dictionary.params);
        prop_assert_eq!(&a.gate.params, &b.gate.params);
        prop_assert_eq!(a.log.len(), cfg.epochs);
    }
}
