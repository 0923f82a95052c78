//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uniloc::channel::{synthesize_csi, trace_paths, SystemConfig, TracerConfig};
use uniloc::estimator::{DictionaryConfig, ModelBasedEstimator};
use uniloc::geometry::Vec3;
use uniloc::identify::{base_identify, refine_identify, IdentifierConfig, IdentifyMode};
use uniloc::nn::TrainRegime;
use uniloc::ot::{exact_lp, sinkhorn, uniform, OtConfig, Regularization, TransportPlan};
use uniloc::pipeline::{
    evaluate, generate_dataset, identify_all, label_dataset, run_evaluate, run_generate, run_label, run_train, sweep_p_i,
    train_model, EvalReport, LabeledDataset, Method, PipelineConfig, RunMetadata, SweepOutcome, TestSet,
};
use uniloc::scene::SceneMap;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(results: &mut Vec<bool>, id: &str, title: &str, f: impl FnOnce() -> Outcome) {
    let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    println!("[{}] criterion {id}: {title}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    results.push(o.pass);
}

fn geometric_roundtrip() -> Outcome {
    let scene = SceneMap::street_canyon();
    let sys = SystemConfig::default();
    let tracer = TracerConfig::default();
    let users = scene
        .sample_users_where(200, 7, |p| scene.is_los(p).unwrap() && trace_paths(&scene, &sys, p, &tracer).is_ok())
        .unwrap();
    let channels: Vec<_> = users
        .iter()
        .map(|&p| synthesize_csi(&sys, &trace_paths(&scene, &sys, p, &tracer).unwrap()).unwrap())
        .collect();
    let start = Instant::now();
    let est = ModelBasedEstimator::new(&scene, &sys, DictionaryConfig::for_scene(&scene)).unwrap();
    let errors: Vec<f64> = channels
        .iter()
        .zip(&users)
        .map(|(h, p)| est.estimate(h).unwrap().position.distance_xy(*p))
        .collect();
    let elapsed = start.elapsed();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let mae = errors.iter().sum::<f64>() / errors.len() as f64;
    outcome(
        worst < 0.5 && elapsed < Duration::from_secs(60),
        format!("200 LoS users, max error {worst:.3} m, MAE {mae:.4} m, {:.1} s (limits 0.5 m, 60 s)", elapsed.as_secs_f64()),
    )
}

fn marginal_residual(plan: &TransportPlan, a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let rows = plan.gamma.sum_axis(ndarray::Axis(1));
    let cols = plan.gamma.sum_axis(ndarray::Axis(0));
    let r = rows.iter().zip(a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let c = cols.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    r.max(c)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

fn ot_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut exact_dev, mut sink_gap, mut resid) = (0.0f64, 0.0f64, 0.0f64);
    let (mut square, mut general) = (0, 0);
    for k in 0..50 {
        let (m, n, a, b) = if k % 2 == 0 {
            let n = rng.gen_range(2..=8);
            (n, n, uniform(n), uniform(n))
        } else {
            let (m, n) = loop {
                let (m, n) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
                if binomial(m * n, m + n - 1) <= 3e6 {
                    break (m, n);
                }
            };
            let a = Array1::from_shape_simple_fn(m, || rng.gen_range(0.1..1.0));
            let b = Array1::from_shape_simple_fn(n, || rng.gen_range(0.1..1.0));
            let (sa, sb) = (a.sum(), b.sum());
            (m, n, a / sa, b / sb)
        };
        let c = Array2::from_shape_simple_fn((m, n), || rng.gen_range(0.0..10.0));
        let oracle = if k % 2 == 0 {
            square += 1;
            support::permutation_optimum(&c)
        } else {
            general += 1;
            support::vertex_optimum(&c, &a, &b)
        };
        let exact = exact_lp(&c, &a, &b).unwrap();
        exact_dev = exact_dev.max((exact.cost(&c) - oracle).abs());
        resid = resid.max(marginal_residual(&exact, &a, &b));
        let cfg = OtConfig { regularization: Regularization::RelativeToMedian(0.001), ..OtConfig::default() };
        let s = sinkhorn(&c, &a, &b, &cfg).unwrap();
        sink_gap = sink_gap.max((s.cost(&c) - oracle).abs() / oracle.abs().max(1e-12));
        resid = resid.max(marginal_residual(&s, &a, &b));
    }
    outcome(
        exact_dev <= 1e-9 && sink_gap <= 0.02 && resid < 1e-6,
        format!(
            "{square} square + {general} general instances, exact vs brute force {exact_dev:.1e}, \
             Sinkhorn gap {:.3}%, max marginal residual {resid:.1e}",
            100.0 * sink_gap
        ),
    )
}

fn gradient_oracle() -> Outcome {
    let (mse, cc) = support::gradient_errors();
    outcome(mse < 1e-4 && cc < 1e-4, format!("[4,8,4,2] model, worst relative error MSE {mse:.1e}, charting {cc:.1e}"))
}

/// Everything the desk-scale criteria look at, computed once.
struct Desk {
    model_based: EvalReport,
    sweep: SweepOutcome,
    charting: EvalReport,
    charting_reads: usize,
    test: TestSet,
    scene: SceneMap,
    elapsed: Duration,
}

fn desk_run() -> Desk {
    let start = Instant::now();
    let cfg = PipelineConfig::desk();
    let scene = cfg.load_scene().unwrap();
    let train = generate_dataset(&scene, &cfg.system, &cfg.tracer, cfg.data.n_train, cfg.data.train_seed).unwrap();
    let test_ds = generate_dataset(&scene, &cfg.system, &cfg.tracer, cfg.data.n_test, cfg.data.test_seed).unwrap();
    let test = TestSet::prepare(&test_ds, &scene, &cfg).unwrap();
    let meta = RunMetadata::for_config(&cfg);
    let model_based = evaluate(&test, &Method::ModelBased, None, &scene, meta.clone()).unwrap();
    let sweep = sweep_p_i(&cfg, &scene, &train, &test).unwrap();
    let labeled = label_dataset(train, &scene, cfg.dictionary.resolve(&scene), &cfg.identify, &cfg.ot).unwrap();
    let data = LabeledDataset::new(labeled, &scene).unwrap();
    let (model, _) = train_model(&data, TrainRegime::ChannelCharting, &cfg.network, &cfg.train).unwrap();
    let charting = evaluate(&test, &Method::Neural, Some(&model), &scene, meta).unwrap();
    Desk {
        model_based,
        sweep,
        charting,
        charting_reads: data.ground_truth_reads(),
        test,
        scene,
        elapsed: start.elapsed(),
    }
}

fn unified_at(d: &Desk, p: f64) -> &EvalReport {
    &d.sweep.unified.iter().find(|(q, _)| *q == p).expect("p_I on the sweep grid").1
}

fn table_ordering(d: &Desk) -> Outcome {
    let (mb, u1, u05, cons, cc) = (&d.model_based, unified_at(d, 1.0), unified_at(d, 0.5), &d.sweep.conservative, &d.charting);
    let a = u1.mae_nlos <= 0.75 * mb.mae_nlos;
    let b = u1.mae_los == mb.mae_los;
    let c = cc.mae_nlos > u1.mae_nlos;
    let dd = cons.mae_all >= u1.mae_all && cons.mae_all <= u05.mae_all;
    let e = d.elapsed <= Duration::from_secs(7200);
    outcome(
        a && b && c && dd && e,
        format!(
            "(a) NLoS unified {:.2} vs model-based {:.2} m [{}]; (b) LoS unified {:.4} == model-based {:.4} m [{}]; \
             (c) NLoS charting {:.2} > unified {:.2} m [{}]; (d) conservative {:.3} in [{:.3}, {:.3}] m [{}]; \
             run {:.0} s [{}]",
            u1.mae_nlos, mb.mae_nlos, ok(a), u1.mae_los, mb.mae_los, ok(b), cc.mae_nlos, u1.mae_nlos, ok(c),
            cons.mae_all, u1.mae_all, u05.mae_all, ok(dd), d.elapsed.as_secs_f64(), ok(e)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "violated"
    }
}

fn sweep_trend(d: &Desk) -> Outcome {
    let curve: Vec<(f64, f64)> = d.sweep.unified.iter().map(|(p, r)| (*p, r.mae_all)).collect();
    let cons = d.sweep.conservative.mae_all;
    let monotone = curve.windows(2).all(|w| w[1].1 <= 1.1 * w[0].1);
    // linear interpolation of the first sign change of unified − conservative
    let crossing = curve.windows(2).find_map(|w| {
        let (f0, f1) = (w[0].1 - cons, w[1].1 - cons);
        (f0 > 0.0 && f1 <= 0.0).then(|| w[0].0 + (w[1].0 - w[0].0) * f0 / (f0 - f1))
    });
    let crossed = crossing.is_some_and(|p| (0.6..=0.95).contains(&p));
    let pts: Vec<String> = curve.iter().map(|(p, m)| format!("{p}: {m:.3}")).collect();
    outcome(
        monotone && crossed,
        format!(
            "unified all-user MAE {{{}}} [{}], conservative {cons:.3}, crossing at {} [{}]",
            pts.join(", "),
            if monotone { "non-increasing" } else { "not monotone" },
            crossing.map_or("none".into(), |p| format!("p_I = {p:.3}")),
            ok(crossed)
        ),
    )
}

fn one_sidedness(d: &Desk) -> Outcome {
    let scene = &d.scene;
    let mut checked = 0usize;
    let mut violations = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let r = scene.region();
    for _ in 0..20_000 {
        // cover the whole bounding box, including building interiors
        let p = Vec3::new(rng.gen_range(r.x_min - 5.0..r.x_max + 5.0), rng.gen_range(r.y_min - 5.0..r.y_max + 5.0), 1.5);
        for base in [true, false] {
            checked += 1;
            violations += (refine_identify(base, p, scene) && !scene.in_los_region(p)) as usize;
        }
    }
    for p_i in [0.5, 0.7, 0.9, 1.0] {
        let cfg = IdentifierConfig { accuracy: p_i, mode: IdentifyMode::Refined, seed: 3 };
        let ids = identify_all(&cfg, &d.test.true_los, &d.test.estimates, scene);
        for (i, (id, e)) in ids.iter().zip(&d.test.estimates).enumerate() {
            checked += 1;
            let base = base_identify(d.test.true_los[i], &cfg, i as u64);
            violations += (*id && !scene.in_los_region(e.position)) as usize;
            violations += (refine_identify(base, e.position, scene) != *id) as usize;
        }
    }
    outcome(violations == 0, format!("{checked} verdicts checked, {violations} LoS verdicts for estimates in R_NLoS"))
}

fn audit(d: &Desk) -> Outcome {
    let (s, c) = (d.sweep.ground_truth_reads, d.charting_reads);
    outcome(s == 0 && c == 0, format!("ground-truth reads: self-label sweep {s}, channel charting {c}"))
}

fn pipeline_once(dir: &Path) -> EvalReport {
    let mut cfg = PipelineConfig::desk();
    cfg.data.n_train = 300;
    cfg.data.n_test = 300;
    cfg.train.epochs = 50;
    run_generate(&cfg, dir).unwrap();
    run_label(&cfg, &dir.join("train.uloc"), &dir.join("labeled.uloc")).unwrap();
    run_train(&cfg, TrainRegime::SelfLabel, Some(&dir.join("labeled.uloc")), &dir.join("model.umlp")).unwrap();
    run_evaluate(&cfg, "unified", &dir.join("test.uloc"), Some(&dir.join("model.umlp")), &dir.join("eval")).unwrap()
}

fn determinism() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let r1 = pool.install(|| pipeline_once(d1.path()));
    let r2 = pool.install(|| pipeline_once(d2.path()));
    let bits = |r: &EvalReport| r.errors.iter().map(|e| e.to_bits()).collect::<Vec<_>>();
    let same = r1 == r2 && bits(&r1) == bits(&r2) && r1.to_toml_string() == r2.to_toml_string();
    let models_equal = std::fs::read(d1.path().join("model.umlp")).unwrap() == std::fs::read(d2.path().join("model.umlp")).unwrap();
    outcome(
        same && models_equal,
        format!(
            "two single-threaded generate/label/train(50)/evaluate runs: reports {}, model files {} (MAE {:.4} m)",
            if same { "bitwise identical" } else { "differ" },
            if models_equal { "identical" } else { "differ" },
            r1.mae_all
        ),
    )
}

fn main() {
    let mut results = Vec::new();
    report(&mut results, "1", "geometric roundtrip", geometric_roundtrip);
    report(&mut results, "2", "OT correctness", ot_correctness);
    report(&mut results, "3", "gradient oracle", gradient_oracle);
    match catch_unwind(desk_run) {
        Ok(d) => {
            report(&mut results, "4", "method ordering at desk scale", || table_ordering(&d));
            report(&mut results, "5", "p_I sweep trend and crossing", || sweep_trend(&d));
            report(&mut results, "6", "refined identification is one-sided", || one_sidedness(&d));
            report(&mut results, "7", "unsupervised contract", || audit(&d));
        }
        Err(_) => {
            for (id, title) in [("4", "method ordering"), ("5", "p_I sweep"), ("6", "one-sidedness"), ("7", "unsupervised contract")] {
                println!("[FAIL] criterion {id}: {title}: desk-scale run panicked");
                results.push(false);
            }
        }
    }
    report(&mut results, "8", "determinism", determinism);
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
