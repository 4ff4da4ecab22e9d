//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=2,3,12` restricts the run to the listed criteria.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;
#[path = "../../net/tests/common/gradcheck.rs"]
mod gradcheck;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3, Array4, Axis};
use octa_core::binarize::{binarize_pipeline, otsu, perona_malik, two_means, BinarizeParams, BinaryMask, DiffusionMode, DiffusionParams};
use octa_core::eval::{compare_methods, ComparisonConfig, LatentSource, Method};
use octa_core::fusion::{lif_slice, lif_volume, local_weights, FusionParams};
use octa_core::phantom::{generate_phantom, make_phantom_vessel_case, PhantomSpec, PhantomVesselCase};
use octa_core::registration::{register_2d, RegParams};
use octa_core::{AugmentationSpec, EnFaceSlice, Volume, Volume3D};
use octa_net::{build_dataset, infer_latent, train, Graph, LifeConfig, LifeModel, TrainOptions, TrainReport, TrainSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use oracles::registration::{central_epe, inverse_of, sinusoid, textured_slice, translated, warped};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn mins(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

/// Held-out phantom-vessel cases with their fused targets, shared by the
/// fusion-artifact and feature-intersection criteria.
struct VesselCase {
    case: PhantomVesselCase<f32>,
    lif: Volume,
    ce_lif: Volume,
}

fn vessel_case(seed: u64) -> VesselCase {
    let case = make_phantom_vessel_case::<f32>(&PhantomSpec { seed, ..Default::default() }, 1).unwrap();
    let (lif, ce_lif) = lif_volume(&case.volume, &FusionParams { radius: 1, ..Default::default() }, &RegParams::default()).unwrap();
    VesselCase { case, lif, ce_lif }
}

fn random_volume(rng: &mut ChaCha8Rng, n: usize) -> Array3<f64> {
    let (a, b) = (rng.random_range(0.0..100.0), rng.random_range(120.0..255.0));
    let p = rng.random_range(0.05..0.6);
    let round = rng.random_bool(0.3);
    Array3::from_shape_simple_fn((n, n, n), || {
        let c = if rng.random_bool(p) { b } else { a };
        let v = (c + rng.random_range(-40.0..40.0f64)).clamp(0.0, 255.0);
        if round { v.round() } else { v }
    })
}

/// Training windows per slice and step budget shared by both trained models.
fn train_on(triples: &[(&Volume, &Volume, &Volume)], steps: usize) -> (LifeModel<f32>, TrainReport) {
    let aug = AugmentationSpec { window: (64, 64), windows_per_slice: 1, flip_horizontal: true, flip_vertical: true, seed: 7 };
    let data: Vec<TrainSample<f32>> = build_dataset(triples, &aug).unwrap();
    let cfg = LifeConfig::default();
    let epochs = steps.div_ceil(data.len().div_ceil(cfg.batch));
    let mut model = LifeModel::<f32>::new(LifeConfig { epochs, ..cfg }).unwrap();
    let report = train(&mut model, &data, &TrainOptions { data_parallel: false, max_steps: Some(steps) }).unwrap();
    (model, report)
}

const TRAIN_STEPS: usize = 500;

fn gradients() -> Verdict {
    let (mut worst_op, mut worst_pipe, mut checked) = (0.0f64, 0.0f64, 0usize);
    let mut failures = Vec::new();
    for seed in 0..10u64 {
        for case in gradcheck::op_cases(seed) {
            let r = gradcheck::check(&case.inputs, &case.which, &case.build);
            assert!(case.inputs.iter().all(|t| t.len() <= 4 * 8 * 8));
            worst_op = worst_op.max(r.max_rel);
            checked += r.checked;
            if r.max_rel >= gradcheck::TOL {
                failures.push(format!("{} seed {seed}", case.name));
            }
        }
        let case = gradcheck::pipeline_case(seed);
        let r = gradcheck::check_sampled(&case.inputs, &case.which, &case.build, gradcheck::PIPELINE_COORDS, seed);
        worst_pipe = worst_pipe.max(r.max_rel);
        checked += r.checked;
        if r.max_rel >= gradcheck::TOL {
            failures.push(format!("pipeline seed {seed}"));
        }
    }
    verdict(
        failures.is_empty(),
        format!("10 seeds, {checked} coordinates, h={:e}: worst op {worst_op:.2e}, pipeline {worst_pipe:.2e} {failures:?}", gradcheck::H),
    )
}

fn otsu_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0;
    for _ in 0..100 {
        let data = random_volume(&mut rng, 32);
        let (t, _) = otsu(&Volume3D::new(data.clone()).unwrap(), 256).unwrap();
        if Some(t) != oracles::otsu_exhaustive(data.as_slice().unwrap(), 256) {
            bad += 1;
        }
    }
    verdict(bad == 0, format!("{} of 100 thresholds equal the exhaustive argmax", 100 - bad))
}

fn kmeans_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut checked, mut bad) = (0, 0);
    while checked < 1000 {
        let n = rng.random_range(2..=12);
        let integer = rng.random_bool(0.3);
        let v: Vec<f64> = (0..n).map(|_| if integer { rng.random_range(0..6) as f64 * 40.0 } else { rng.random_range(0.0..255.0) }).collect();
        let Some(best) = oracles::two_means_exhaustive(&v) else { continue };
        let m = two_means(&v).unwrap();
        let got = oracles::partition_sse(&v, |x| x > m.split);
        if (got - best).abs() > 1e-9 * best.max(1.0) {
            bad += 1;
        }
        checked += 1;
    }
    verdict(bad == 0, format!("{} of 1000 samples at the sorted-split optimum", 1000 - bad))
}

fn perona_malik_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_drift, mut violations) = (0.0f64, 0);
    for i in 0..20 {
        let data = random_volume(&mut rng, 32);
        let vol = Volume3D::new(data.clone()).unwrap();
        let (mode, lambda) = if i % 2 == 0 { (DiffusionMode::Slice2d, 0.25) } else { (DiffusionMode::Volume3d, 1.0 / 6.0) };
        let k = rng.random_range(2.0..40.0);
        let out = perona_malik(&vol, &DiffusionParams { k, lambda, iters: 20, mode }).unwrap();
        let (lo, hi) = vol.min_max();
        violations += out.data().iter().filter(|&&v| v < lo || v > hi).count();
        let (a, b) = (data.sum(), out.data().sum());
        worst_drift = worst_drift.max((a - b).abs() / a.abs());
    }
    verdict(violations == 0 && worst_drift <= 1e-3, format!("{violations} max-principle violations, worst relative drift {worst_drift:.2e}"))
}

fn registration_recovery() -> Verdict {
    let reg = RegParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut means = Vec::new();
    for i in 0..10u64 {
        // magnitude up to 4 px, any direction
        let (r, a) = (rng.random_range(0.5..4.0), rng.random_range(0.0..std::f64::consts::TAU));
        let (tx, ty) = (r * a.cos(), r * a.sin());
        let fixed = textured_slice(100 + i);
        let moving = translated(&fixed, tx, ty);
        let field = register_2d(&EnFaceSlice::new(moving, 0), &EnFaceSlice::new(fixed, 0), &reg).unwrap();
        let epe = central_epe(&field, |_, _| (-tx, -ty));
        means.push(epe.iter().sum::<f64>() / epe.len() as f64);
    }
    let mut medians = Vec::new();
    for i in 0..10u64 {
        let fixed = textured_slice(200 + i);
        let g = sinusoid(3.0, i as f64 * 0.7);
        let field = register_2d(&EnFaceSlice::new(warped(&fixed, g), 0), &EnFaceSlice::new(fixed, 0), &reg).unwrap();
        let mut epe = central_epe(&field, |y, x| inverse_of(g, y as f64, x as f64));
        epe.sort_by(f64::total_cmp);
        medians.push(epe[epe.len() / 2]);
    }
    let worst = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    let pass = means.iter().all(|&m| m < 0.5) && medians.iter().all(|&m| m < 1.0);
    verdict(pass, format!("translation mean EPE worst {:.3} px, warp median EPE worst {:.3} px", worst(&means), worst(&medians)))
}

fn fusion_convexity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_sum, mut outside) = (0.0f64, 0usize);
    for i in 0..20u64 {
        let (z, h, w) = (rng.random_range(3..7), rng.random_range(12..33), rng.random_range(12..33));
        let vol = Volume3D::new(Array3::from_shape_simple_fn((z, h, w), || rng.random_range(0.0f32..255.0))).unwrap();
        let params = FusionParams { radius: rng.random_range(0..3), beta: rng.random_range(0.5..3.0), eps: rng.random_range(1e-3..0.5), ..Default::default() };
        let reg = RegParams { levels: 1, iters_per_level: 5, ..Default::default() };
        let res = lif_slice(&vol, (i as usize) % z, &params, &reg).unwrap();
        worst_sum = res.weights.sum_axis(Axis(0)).iter().fold(worst_sum, |m, s| m.max((s - 1.0).abs()));
        let (lo, hi) = vol.min_max();
        outside += res.lif.data.iter().filter(|&&v| v < lo || v > hi).count();

        // pixelwise: the fused value lies between that pixel's atlas values
        let atlases = vol.slices();
        let wts = local_weights(&atlases[0], &atlases, &params).unwrap();
        for ((y, x), s) in wts.sum_axis(Axis(0)).indexed_iter() {
            worst_sum = worst_sum.max((s - 1.0).abs());
            let vals: Vec<f64> = atlases.iter().map(|a| a.data[[y, x]] as f64).collect();
            let fused: f64 = vals.iter().enumerate().map(|(k, v)| wts[[k, y, x]] * v).sum();
            let (lo, hi) = vals.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            outside += usize::from(fused < lo - 1e-9 || fused > hi + 1e-9);
        }
    }
    verdict(worst_sum <= 1e-6 && outside == 0, format!("worst |Σw − 1| {worst_sum:.1e}, {outside} fused values outside the atlas range"))
}

fn slice_mean(vol: &Volume, z: usize, mask: &Array2<bool>) -> f64 {
    let s = vol.slice_view(z);
    let (sum, n) = s.iter().zip(mask.iter()).filter(|(_, &m)| m).fold((0.0, 0.0), |(a, n), (&v, _)| (a + v as f64, n + 1.0));
    sum / n
}

fn fp_at_b(vol: &Volume, c: &PhantomVesselCase<f32>) -> usize {
    let m = binarize_pipeline(vol, &BinarizeParams::default()).unwrap();
    let s = m.data.index_axis(Axis(0), c.target_z);
    s.iter().zip(c.vessel_b.iter()).filter(|(&m, &b)| b && m == 1).count()
}

fn phantom_vessel(cases: &[VesselCase]) -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for vc in cases {
        let c = &vc.case;
        let bg = !&(&c.vessel_a | &c.vessel_b);
        let ratio = slice_mean(&vc.lif, c.target_z, &c.vessel_b) / slice_mean(&vc.lif, c.target_z, &bg);
        let fp = fp_at_b(&vc.lif, c);
        pass &= ratio >= 1.5 && fp > 0;
        lines.push(format!("{ratio:.2}x/{fp}"));
    }
    verdict(pass, format!("LIF at B over background / binarized FP at B: {}", lines.join(" ")))
}

fn feature_intersection(cases: &[VesselCase]) -> (Verdict, Duration) {
    let t = Instant::now();
    let train_set: Vec<VesselCase> = (0..8).map(|i| vessel_case(100 + i)).collect();
    let triples: Vec<_> = train_set.iter().map(|v| (&v.case.volume, &v.lif, &v.ce_lif)).collect();
    let (model, report) = train_on(&triples, TRAIN_STEPS);
    let train_time = t.elapsed();
    let mut wins = 0;
    let mut lines = Vec::new();
    for vc in cases {
        let latent = infer_latent(&vc.case.volume, &model).unwrap();
        let (l, c) = (fp_at_b(&latent, &vc.case), fp_at_b(&vc.ce_lif, &vc.case));
        wins += usize::from(l < c);
        lines.push(format!("{l}<{c}"));
    }
    let pass = wins >= 8 && train_time <= Duration::from_secs(15 * 60) && report.total_steps >= 500;
    let detail = format!(
        "{wins}/10 cases with fewer latent FP at B than CE-LIF ({}); {} steps on 64x64 patches in {}",
        lines.join(" "),
        report.total_steps,
        mins(train_time)
    );
    (verdict(pass, detail), t.elapsed())
}

struct SuiteResult {
    dice: Vec<[f64; 4]>,
    tpr: Vec<[f64; 2]>,
}

/// Trains on noisy phantoms, then scores every method on ten held-out ones.
fn phantom_suite() -> SuiteResult {
    let cfg = ComparisonConfig::default();
    let train_set: Vec<(Volume, Volume, Volume)> = (0..8u64)
        .map(|i| {
            let (v, _) = generate_phantom::<f32>(&PhantomSpec { seed: 500 + i, ..Default::default() }).unwrap();
            let (l, c) = lif_volume(&v, &cfg.fusion, &cfg.registration).unwrap();
            (v, l, c)
        })
        .collect();
    let triples: Vec<_> = train_set.iter().map(|(v, l, c)| (v, l, c)).collect();
    let (model, _) = train_on(&triples, TRAIN_STEPS);
    let methods = [Method::Life, Method::Otsu, Method::Kmeans, Method::CeLif, Method::Frangi, Method::Oof];
    let mut out = SuiteResult { dice: Vec::new(), tpr: Vec::new() };
    for i in 0..10u64 {
        let (vol, truth) = generate_phantom::<f32>(&PhantomSpec { seed: 7000 + i, ..Default::default() }).unwrap();
        let gt = BinaryMask::new(truth.data().mapv(|v| u8::from(v > 0.5)), "ground_truth", json!(null));
        let rep = compare_methods(&vol, &gt, &methods, &cfg, Some(&model as &dyn LatentSource<f32>)).unwrap();
        let s = |m| &rep.get(m).unwrap().scores;
        out.dice.push([s(Method::Life).dice, s(Method::Otsu).dice, s(Method::Kmeans).dice, s(Method::CeLif).dice]);
        out.tpr.push([s(Method::Frangi).tpr, s(Method::Oof).tpr]);
    }
    out
}

fn table_ordering(r: &SuiteResult, elapsed: Duration) -> Verdict {
    let mean = |k: usize| r.dice.iter().map(|d| d[k]).sum::<f64>() / r.dice.len() as f64;
    let (life, ots, km) = (mean(0), mean(1), mean(2));
    let min_tpr = |k: usize| r.tpr.iter().map(|t| t[k]).fold(1.0, f64::min);
    let (fr, oof) = (min_tpr(0), min_tpr(1));
    let pass = life >= ots + 0.05 && life >= km + 0.05 && fr > 0.2 && oof > 0.2 && elapsed < Duration::from_secs(30 * 60);
    verdict(
        pass,
        format!(
            "mean Dice LIFE+bin {life:.3}, Otsu {ots:.3}, k-means {km:.3}; lowest TPR Frangi+bin {fr:.3}, OOF+bin {oof:.3}; {}",
            mins(elapsed)
        ),
    )
}

fn baseline_gap(r: &SuiteResult) -> Verdict {
    let wins = r.dice.iter().filter(|d| d[3] < d[0]).count();
    let pairs: Vec<String> = r.dice.iter().map(|d| format!("{:.2}<{:.2}", d[3], d[0])).collect();
    verdict(wins >= 8, format!("{wins}/10 volumes with Dice(CE-LIF+bin) < Dice(LIFE+bin): {}", pairs.join(" ")))
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let spec = PhantomSpec { dims: [6, 48, 48], n_trees: 4, seed: 21, ..Default::default() };
    let (vol, mask) = generate_phantom::<f32>(&spec).unwrap();
    octa_core::save_volume(&vol, d.join("volume.raw")).unwrap();
    octa_core::save_volume(&mask, d.join("mask.raw")).unwrap();
    let cfg = json!({
        "input": "volume.raw",
        "ground_truth": "mask.raw",
        "seed": 5,
        "model": { "dn_channels": [4, 8], "enc_channels": [4, 8], "dec_channels": [4], "epochs": 2 },
        "augmentation": { "window": [32, 32], "windows_per_slice": 2 },
        "training": { "max_steps": 10 },
        "methods": ["otsu", "life"]
    });
    std::fs::write(d.join("cfg.json"), cfg.to_string()).unwrap();
    let files = ["preprocessed.raw", "lif.raw", "ce_lif.raw", "model.ckpt", "train.csv", "latent.raw", "mask.raw", "report.csv", "report.json"];
    let mut hashes = Vec::new();
    for out in ["first", "second"] {
        let o = std::process::Command::new(env!("CARGO_BIN_EXE_octa"))
            .current_dir(d)
            .args(["--jobs", "1", "--log-level", "warn", "pipeline", "--config", "cfg.json", "--out", out])
            .output()
            .unwrap();
        if !o.status.success() {
            return verdict(false, format!("pipeline failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        hashes.push(files.iter().map(|f| octa_cli::hash_artifact(&d.join(out).join(f)).unwrap()).collect::<Vec<_>>());
    }
    let same = files.iter().zip(hashes[0].iter().zip(&hashes[1])).filter(|(_, (a, b))| a == b).count();
    verdict(same == files.len(), format!("{same}/{} artifact hashes identical across single-threaded reruns", files.len()))
}

/// `a·Σ|d| + (b/N)·Σd²` per image, averaged over the batch, evaluated by hand.
fn hand_loss(y: &Array4<f64>, p: &Array4<f64>, a: f64, b: f64) -> f64 {
    let (n, c, h, w) = y.dim();
    let mut total = 0.0;
    for i in 0..n {
        let (mut l1, mut l2) = (0.0, 0.0);
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    let d = y[[i, ch, r, col]] - p[[i, ch, r, col]];
                    l1 += d.abs();
                    l2 += d * d;
                }
            }
        }
        total += a * l1 + b * l2 / (c * h * w) as f64;
    }
    total / n as f64
}

fn loss_arithmetic() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let shape = (rng.random_range(1..3), 1, rng.random_range(4..17), rng.random_range(4..17));
        let y = Array4::from_shape_simple_fn(shape, || rng.random_range(0.0..255.0));
        let p = Array4::from_shape_simple_fn(shape, || rng.random_range(0.0..255.0));
        let (a, b) = if i % 2 == 0 { (1.0, 0.05) } else { (1.0, 0.01) };
        let mut g = Graph::<f64>::new();
        let (yv, pv) = (g.constant(y.clone()), g.constant(p.clone()));
        let l = g.loss_l1l2(yv, pv, a, b).unwrap();
        worst = worst.max((g.scalar(l) - hand_loss(&y, &p, a, b)).abs());
    }
    verdict(worst <= 1e-6, format!("20 pairs, (a, b) in {{(1, 0.05), (1, 0.01)}}: worst |Δ| {worst:.1e}"))
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results: Vec<(usize, Verdict, Duration, Duration)> = Vec::new();
    let mut record = |n: usize, limit_s: u64, f: &mut dyn FnMut() -> Verdict| {
        if !wanted(n) {
            return;
        }
        let t = Instant::now();
        let v = f();
        let took = t.elapsed();
        let limit = Duration::from_secs(limit_s);
        let v = if took > limit { verdict(false, format!("{} [over the {}s budget]", v.detail, limit_s)) } else { v };
        println!("criterion {n:>2}: {} — {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail, mins(took));
        results.push((n, v, took, limit));
    };

    record(1, 60, &mut gradients);
    record(2, 30, &mut otsu_oracle);
    record(3, 10, &mut kmeans_oracle);
    record(4, 30, &mut perona_malik_invariants);
    record(5, 120, &mut registration_recovery);
    record(6, 10, &mut fusion_convexity);

    // generating and fusing the cases counts toward criterion 7
    let load = || (0..10).map(|i| vessel_case(9000 + i)).collect::<Vec<_>>();
    let mut held_out: Vec<VesselCase> = Vec::new();
    record(7, 120, &mut || {
        held_out = load();
        phantom_vessel(&held_out)
    });
    if held_out.is_empty() && wanted(8) {
        held_out = load();
    }
    // training time is checked inside; the overall limit covers inference too
    record(8, 20 * 60, &mut || feature_intersection(&held_out).0);

    if wanted(9) || wanted(10) {
        let t = Instant::now();
        let suite = phantom_suite();
        let took = t.elapsed();
        record(9, 30 * 60, &mut || table_ordering(&suite, took));
        record(10, 30 * 60, &mut || baseline_gap(&suite));
    }
    record(11, 120, &mut determinism);
    record(12, 10, &mut loss_arithmetic);

    let failed: Vec<usize> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!("acceptance: {} passed, {} failed {:?}", results.len() - failed.len(), failed.len(), failed);
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
