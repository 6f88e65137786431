//! Acceptance criteria A1-A8, one pass/fail line each. Runs without the
//! libtest harness so the lines always reach the output.

mod common;

use std::time::{Duration, Instant};

use imip::compression::{pq_code_bytes, pq_fit, representation_size_bytes, Descriptors, Representation};
use imip::correspondence::{HomographyProvider, LabeledMatch, LabeledMatchSet, MatchLabel};
use imip::eval::{accuracy, evaluate_pairs, format_results_csv, matching_score, AccuracyThresholds, Dataset, EvalConfig, EvalRecord};
use imip::extraction::{pack_coordinates, unpack_coordinates};
use imip::geometry::{ransac_p3p, rotation_geodesic_deg, translation_error_m, CameraIntrinsics, RansacConfig, RigidPose};
use imip::klt::{track_point, KltConfig};
use imip::numerics::{finite_difference_check, AdamConfig, AdamState, Tensor4};
use imip::synthetic::SmoothTexture;
use imip::training::{detect_and_label, train_step, LossWeights, StepConfig, TrainingBatch};
use imip::{Image, InterestPointSet, NetworkConfig, NetworkParams};
use nalgebra::{Matrix3, Point2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Criterion = (&'static str, fn() -> Outcome, Duration);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn a1_gradient() -> Outcome {
    let cfg = NetworkConfig { n_channels: 4, depth: 2, intermediate_channels: (6, 6), leaky_slope: 0.1, seed: 11 };
    let mut params = NetworkParams::<f64>::init(&cfg).unwrap();
    // move off the initialization so every layer carries signal
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let flat: Vec<f64> = params.flatten().iter().map(|v| v + rng.random_range(-0.2..0.2)).collect();
    params.set_flat(&flat);
    let r = params.receptive_field();
    let a = SmoothTexture::random(2, 24.0, 24.0).render(24, 24);
    let b = SmoothTexture::random(3, 24.0, 24.0).render(24, 24);
    let m = |p: (f64, f64), q: (f64, f64), f: (f64, f64), bw: (f64, f64), label| LabeledMatch {
        p: Point2::new(p.0, p.1),
        p_prime: Point2::new(q.0, q.1),
        forward: Some(Point2::new(f.0, f.1)),
        backward: Some(Point2::new(bw.0, bw.1)),
        label,
    };
    // two inliers and two outliers, so all three loss terms are active
    let labeled = LabeledMatchSet {
        matches: vec![
            m((5.0, 6.0), (6.0, 6.0), (6.0, 7.0), (5.0, 5.0), MatchLabel::Inlier),
            m((12.0, 9.0), (12.0, 10.0), (12.0, 10.0), (12.0, 9.0), MatchLabel::Inlier),
            m((8.0, 15.0), (18.0, 4.0), (9.0, 16.0), (16.0, 6.0), MatchLabel::Outlier),
            m((17.0, 17.0), (3.0, 12.0), (15.4, 18.6), (4.2, 10.7), MatchLabel::Outlier),
        ],
    };
    let batch = TrainingBatch::<f64>::build(&a, &b, &labeled, r);
    let weights = LossWeights::default();
    let (report, grads) = batch.loss_and_gradient(&params, &weights).unwrap();
    let active = report.l_inl > 0.0 && report.l_red > 0.0 && report.l_cor > 0.0;
    let point = params.flatten();
    let mut probe = params.clone();
    let err = finite_difference_check(
        |x| {
            probe.set_flat(x);
            Ok(batch.loss_value(&probe, &weights).unwrap())
        },
        &point,
        &grads.flatten(),
        1e-6,
    )
    .unwrap();
    check(active && err < 1e-3, format!("max relative error {err:.2e} over {} parameters, all terms active: {active}", point.len()))
}

fn a2_patch_equivalence() -> Outcome {
    let cfg = NetworkConfig { n_channels: 8, depth: 6, intermediate_channels: (12, 16), leaky_slope: 0.1, seed: 4 };
    let params = NetworkParams::<f32>::init(&cfg).unwrap();
    let (r, margin) = (params.receptive_field(), cfg.border_margin());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut total, mut agree, mut worst) = (0usize, 0usize, 0.0f64);
    for i in 0..20 {
        let img = Image::from_fn(48, 40, |_, _| rng.random::<f32>());
        let img = if i % 2 == 0 { img } else { SmoothTexture::random(i, 48.0, 40.0).render(48, 40) };
        let full = params.forward_full(&img).unwrap();
        let samples: Vec<(usize, usize)> = (0..60)
            .map(|_| (rng.random_range(margin..img.width() - margin), rng.random_range(margin..img.height() - margin)))
            .collect();
        let mut data = Vec::with_capacity(samples.len() * r * r);
        for &(x, y) in &samples {
            for dy in 0..r {
                for dx in 0..r {
                    data.push(img.get(x + dx - margin, y + dy - margin));
                }
            }
        }
        let out = params.forward_patches(&Tensor4::from_vec([samples.len(), r, r, 1], data).unwrap()).unwrap();
        for (s, &(x, y)) in samples.iter().enumerate() {
            for c in 0..cfg.n_channels {
                let d = (out.get(s, 0, 0, c) - full.get(y, x, c)).abs() as f64;
                worst = worst.max(d);
                total += 1;
                agree += (d <= 1e-5) as usize;
            }
        }
    }
    let frac = agree as f64 / total as f64;
    check(frac >= 0.999, format!("{agree}/{total} sampled responses within 1e-5 ({:.4}%), worst {worst:.2e}", 100.0 * frac))
}

fn a3_convergence() -> Outcome {
    let size = 96;
    let tex = SmoothTexture::random(3, size as f64, size as f64);
    let c = size as f64 / 2.0;
    let (th, s) = (0.3f64, 1.15);
    let rot = Matrix3::new(s * th.cos(), -s * th.sin(), 0.0, s * th.sin(), s * th.cos(), 0.0, 0.0, 0.0, 1.0);
    let to = Matrix3::new(1.0, 0.0, c + 2.0, 0.0, 1.0, c - 1.0, 0.0, 0.0, 1.0);
    let from = Matrix3::new(1.0, 0.0, -c, 0.0, 1.0, -c, 0.0, 0.0, 1.0);
    let mut h = to * rot * from;
    h[(2, 0)] = 2e-4;
    let img_a = tex.render(size, size);
    let img_b = tex.render_warped(size, size, &h).unwrap();
    let psi = HomographyProvider::new(h).unwrap();

    let cfg = NetworkConfig { n_channels: 8, depth: 6, intermediate_channels: (16, 16), leaky_slope: 0.1, seed: 3 };
    let mut params = NetworkParams::<f32>::init(&cfg).unwrap();
    let before = detect_and_label(&params, &img_a, &img_b, &psi, 3.0).unwrap().labels.inlier_count();
    let steps = 500;
    let mut adam = AdamState::new(AdamConfig { lr: 1e-3, ..AdamConfig::default() }, &params.block_layout());
    for _ in 0..steps {
        train_step(&img_a, &img_b, &psi, &mut params, &mut adam, &StepConfig::default()).unwrap();
    }
    let det = detect_and_label(&params, &img_a, &img_b, &psi, 3.0).unwrap();
    let inliers = det.labels.inlier_count();
    let distinct = det.distinct_fraction();
    check(
        inliers >= 6 && distinct >= 0.9,
        format!("{inliers}/8 inliers after {steps} steps (untrained: {before}/8), distinct fraction {distinct:.3}"),
    )
}

fn a4_ransac() -> Outcome {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let noise = Normal::new(0.0, 0.5).unwrap();
    let (mut good, mut successes, mut min_inliers) = (0, 0, usize::MAX);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let truth = RigidPose::from_axis_angle(axis, rng.random_range(0.0..0.5), Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let (mut world, mut pixels, mut depth_sum) = (Vec::new(), Vec::new(), 0.0);
        for i in 0..100 {
            let px = Point2::new(rng.random_range(20.0..620.0), rng.random_range(20.0..460.0));
            let z = rng.random_range(4.0..12.0);
            depth_sum += z;
            world.push(truth.inverse().transform(&k.unproject(&px, z)));
            pixels.push(if i < 70 {
                px + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0))
            });
        }
        let scale = depth_sum / 100.0;
        let res = ransac_p3p(&world, &pixels, &k, &RansacConfig { seed, ..RansacConfig::default() }).unwrap();
        if let Some(est) = res.pose {
            successes += 1;
            min_inliers = min_inliers.min(res.inlier_count);
            let e_r = rotation_geodesic_deg(&est.rotation, &truth.rotation).unwrap();
            let e_t = translation_error_m(&est.translation, &truth.translation);
            good += (e_r < 0.5 && e_t < 0.01 * scale) as usize;
        }
    }
    check(
        good >= 95 && min_inliers >= 10,
        format!("{good}/100 runs within 0.5 deg and 1% of scene depth, {successes} successes, fewest inliers {min_inliers}"),
    )
}

fn a5_klt() -> Outcome {
    let cfg = KltConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut ok, mut total, mut worst) = (0, 0, 0.0f64);
    for t in 0..50u64 {
        let tex = SmoothTexture::random(100 + t, 128.0, 128.0);
        let (dx, dy) = (rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
        let a = tex.render(128, 128);
        let b = tex.render_shifted(128, 128, dx, dy);
        for p in [(64.0, 64.0), (40.0, 48.0), (88.0, 80.0)] {
            total += 1;
            let p = Point2::new(p.0, p.1);
            let err = track_point(&a, &b, p, &cfg).map_or(f64::INFINITY, |q| (q - p - Vector2::new(dx, dy)).norm());
            worst = worst.max(err);
            ok += (err <= 0.2) as usize;
        }
    }
    check(ok == total, format!("{ok}/{total} tracks within 0.2 px, worst {worst:.4} px"))
}

fn a6_sizes() -> Outcome {
    let ours = representation_size_bytes(&Representation::Ours { n: 128 });
    let pq16 = pq_code_bytes(2, 16);
    let pq256 = pq_code_bytes(2, 256);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..8).map(|_| rng.random::<f64>()).collect()).collect();
    let data = Descriptors::from_rows(&rows).unwrap();
    let bits = (pq_fit(&data, 2, 16, 0).unwrap().code_bits(), pq_fit(&data, 2, 256, 0).unwrap().code_bits());
    let mut coords: Vec<(u32, u32)> = vec![(0, 0), (4095, 0), (0, 4095), (4095, 4095)];
    coords.extend((0..10_000).map(|_| (rng.random_range(0..4096), rng.random_range(0..4096))));
    let set = InterestPointSet::from_coordinates(&coords);
    let packed = pack_coordinates(&set).unwrap();
    let roundtrip = unpack_coordinates(&packed).unwrap() == coords && packed.len() == 3 * coords.len();
    check(
        ours == 384 && pq16 == 1 && pq256 == 2 && bits == (8, 16) && roundtrip,
        format!("ours n=128 {ours} B, pq(2,16) {pq16} B, pq(2,256) {pq256} B, {} points roundtrip: {roundtrip}", coords.len()),
    )
}

fn a7_metrics() -> Outcome {
    let ms = matching_score(10, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let base = RigidPose::from_axis_angle(Vector3::new(rng.random(), rng.random(), 1.0), rng.random_range(0.0..3.0), Vector3::zeros());
        let rel = RigidPose::from_axis_angle(axis, angle, Vector3::zeros());
        let got = rotation_geodesic_deg(&base.rotation, &(base.rotation * rel.rotation)).unwrap();
        worst = worst.max((got - angle.to_degrees()).abs());
    }
    let presets = AccuracyThresholds::preset("kitti") == Some(AccuracyThresholds { rot_deg: 1.0, trans_m: 0.30 })
        && AccuracyThresholds::preset("euroc") == Some(AccuracyThresholds { rot_deg: 3.0, trans_m: 0.10 });
    let rec = |e: f64| EvalRecord {
        name: String::new(),
        d_r_deg: Some(1.0),
        dt_m: Some(1.0),
        matching_score: 0.0,
        e_r_deg: Some(e),
        et_m: Some(0.0),
        inlier_count: 0,
        n_channels: 1,
        points: Vec::new(),
    };
    let half = accuracy(&[rec(0.5), rec(2.0)], AccuracyThresholds::KITTI).unwrap() == 0.5;
    check(
        ms == 0.078125 && worst < 1e-9 && presets && half,
        format!("matching_score(10, 128) = {ms}, worst geodesic deviation {worst:.2e} deg, presets ok: {}", presets && half),
    )
}

fn a8_csv() -> Outcome {
    let expected = "name,dR,dt,matching score,eR,et\n\
                    synth/000000-000001,0.000000,0.500000,1.000000,0.000000,0.000000\n\
                    synth/000000-000002,90.000000,0.707107,1.000000,0.000000,0.000000\n\
                    synth/000001-000003,180.000000,0.707107,1.000000,0.000000,0.000000\n";
    let run = || {
        let s = common::synthetic_stereo(32, 5, vec![(0, 1), (0, 2), (1, 3)]);
        let ds = Dataset::Sequence(s.sequence);
        format_results_csv(&evaluate_pairs(&ds, &s.detector, None, &EvalConfig::default()).unwrap())
    };
    let (first, second) = (run(), run());
    check(first == expected && first == second, format!("{} bytes, stable across runs: {}, matches golden: {}", first.len(), first == second, first == expected))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("A1 gradient correctness", a1_gradient, Duration::from_secs(60)),
        ("A2 patch/full equivalence", a2_patch_equivalence, Duration::from_secs(120)),
        ("A3 desk-scale convergence", a3_convergence, Duration::from_secs(600)),
        ("A4 P3P/RANSAC oracle", a4_ransac, Duration::from_secs(60)),
        ("A5 KLT accuracy", a5_klt, Duration::from_secs(60)),
        ("A6 size accounting", a6_sizes, Duration::from_secs(60)),
        ("A7 metrics arithmetic", a7_metrics, Duration::from_secs(60)),
        ("A8 CSV golden", a8_csv, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took <= budget;
        failed += !pass as usize;
        println!("{} {name}: {} [{:.1}s, budget {}s]", if pass { "PASS" } else { "FAIL" }, out.detail, took.as_secs_f64(), budget.as_secs());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
