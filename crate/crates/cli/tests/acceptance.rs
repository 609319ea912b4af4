//! End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
//! if any fails.

use clap::Parser;
use geoclass::estimator::RbfModel;
use geoclass::geometry::{graph_volume, induced_metric, trace_second_fundamental_form, DomainBox};
use geoclass::gradcheck::{
    check_binary_drop_curvature, check_first_variation, check_input_derivatives, check_knn_gradient,
    check_loss_gradients, random_model, random_points, random_tangent, DERIVATIVE_TOL, VARIATION_RESOLUTION,
};
use geoclass::harness::{knn_consistency_study, load_csv, make_circle_dataset, normalize, LabelColumn, LinearRamp, Normalization};
use geoclass::losses::{cross_entropy_grad_h, quadratic_grad_h, Damping, LossKind, OneHotTarget};
use geoclass::numeric::{Matrix, DEFAULT_FD_STEP};
use geoclass::trainer::{
    curvature_vector, geometric_grad_h, total_grad_h, train, KnnPointTerm, SimplexStrategy, TrainConfig,
};
use geoclass_cli::{cmd_circle, cmd_cv, Cli, Command};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_secs: u64, detail: String) -> Outcome {
    ensure(
        elapsed.as_secs_f64() < limit_secs as f64,
        format!("{detail}; {:.1}s (limit {limit_secs}s)", elapsed.as_secs_f64()),
    )
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn parse(args: &[&str]) -> Command {
    let mut full = vec!["geoclass"];
    full.extend_from_slice(args);
    Cli::try_parse_from(full).expect("valid arguments").command
}

fn derivatives() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for (n, l) in [(1, 2), (2, 3), (3, 4)] {
        for _ in 0..20 {
            let model = random_model(n, l, 6, rng.gen_range(0.1..0.6), rng.gen()).map_err(err)?;
            let x = random_points(n, 1, rng.gen());
            for c in check_input_derivatives(&model, &x, DEFAULT_FD_STEP).map_err(err)? {
                worst = worst.max(c.max_rel_error);
            }
        }
    }
    ensure(worst < DERIVATIVE_TOL, format!("max rel err {worst:.2e}"))
        .and_then(|d| within(start.elapsed(), 10, d))
}

fn curve_curvature() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let model = random_model(1, 2, 5, 0.2, 100 + seed).map_err(err)?;
        let points = random_points(1, 50, 200 + seed);
        for drop in [0, 1] {
            let c = check_binary_drop_curvature(&model, &points, drop).map_err(err)?;
            worst = worst.max(c.max_rel_error);
        }
    }
    ensure(worst < 1e-8, format!("max rel err {worst:.2e}")).and_then(|d| within(start.elapsed(), 5, d))
}

fn first_variation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for (n, l) in [(1, 2), (1, 3), (2, 2), (2, 3)] {
        for _ in 0..10 {
            let model = random_model(n, l, 6, rng.gen_range(0.1..0.6), rng.gen()).map_err(err)?;
            let v = random_tangent(l, &mut rng);
            let c = check_first_variation(&model, &v, VARIATION_RESOLUTION).map_err(err)?;
            worst = worst.max(c.max_rel_error);
        }
    }
    ensure(worst < 1e-3, format!("max rel err {worst:.2e}")).and_then(|d| within(start.elapsed(), 60, d))
}

fn flat_graph() -> Outcome {
    for (n, l) in [(1, 2), (2, 3), (3, 4)] {
        let centers = Matrix::from_rows(&random_points(n, 5, 4)).map_err(err)?;
        let model = RbfModel::new(centers, 0.3, Matrix::zeros(5, l), Normalization::unit(n)).map_err(err)?;
        for x in random_points(n, 25, 5) {
            let geom = model.point_geometry(&x).map_err(err)?;
            if geom.f.iter().any(|&v| v != 1.0 / l as f64) {
                return Err(format!("N={n} L={l}: f = {:?} is not uniform", geom.f));
            }
            let metric = induced_metric(&geom).map_err(err)?;
            let mut traces = vec![trace_second_fundamental_form(&geom, &metric)];
            for strategy in [SimplexStrategy::ComponentDrop, SimplexStrategy::TangentProject] {
                traces.push(curvature_vector(&geom, Some(&metric), strategy, 0).map_err(err)?);
            }
            if traces.iter().flatten().any(|&v| v != 0.0) {
                return Err(format!("N={n} L={l}: Tr II nonzero: {traces:?}"));
            }
        }
        let domain = DomainBox::new(vec![-0.5; n], vec![1.5; n]).map_err(err)?;
        let vol = graph_volume(&model, &domain, &vec![16; n]).map_err(err)?;
        if (vol - domain.measure()).abs() >= 1e-10 {
            return Err(format!("N={n}: volume {vol} vs measure {}", domain.measure()));
        }
    }
    Ok("uniform f, Tr II = 0, volume = measure for N = 1, 2, 3".into())
}

fn circle(dir: &Path) -> Outcome {
    let start = Instant::now();
    let run = |extra: &[&str]| {
        let d = dir.to_str().unwrap();
        let mut args = vec!["circle", "--out-dir", d];
        args.extend_from_slice(extra);
        match parse(&args) {
            Command::Circle(a) => cmd_circle(&a).map_err(err),
            _ => unreachable!(),
        }
    };
    let default = run(&[])?;
    let flat = run(&["--lambda", "0"])?;
    let heavy = run(&["--lambda", "1.5"])?;
    ensure(
        default.grid_accuracy > 0.95 && heavy.graph_volume < flat.graph_volume,
        format!(
            "accuracy {:.4}; volume λ=0 {:.4}, λ=1.5 {:.4}",
            default.grid_accuracy, flat.graph_volume, heavy.graph_volume
        ),
    )
    .and_then(|d| within(start.elapsed(), 120, d))
}

fn cv_mean(name: &str, out_dir: &Path) -> Result<f64, String> {
    let path = data(name);
    let cmd = parse(&["cv", "--data", path.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    let Command::Cv(a) = cmd else { unreachable!() };
    let text = cmd_cv(&a).map_err(err)?;
    text.lines().last().unwrap_or_default().trim().parse::<f64>().map_err(err)
}

fn table(first: &Path) -> Outcome {
    let start = Instant::now();
    let iris = cv_mean("iris.csv", first)?;
    let wine = cv_mean("wine.csv", first)?;
    ensure(
        iris <= 6.5 && wine <= 2.5,
        format!("Iris {iris:.2}% (≤ 6.5), Wine {wine:.2}% (≤ 2.5)"),
    )
    .and_then(|d| within(start.elapsed(), 900, d))
}

fn loss_gradients() -> Outcome {
    let mut worst_loss = 0.0f64;
    for (l, seed) in [(2, 7), (3, 8), (4, 9)] {
        for c in check_loss_gradients(l, 20, seed).map_err(err)? {
            worst_loss = worst_loss.max(c.max_rel_error);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_knn = 0.0f64;
    for (n, l) in [(1, 2), (1, 3), (2, 2), (2, 3)] {
        for _ in 0..3 {
            let model = random_model(n, l, 6, 0.3, rng.gen()).map_err(err)?;
            let features = Matrix::new(30, n, (0..30 * n).map(|_| rng.gen::<f64>()).collect()).map_err(err)?;
            let labels: Vec<usize> = (0..30).map(|i| i % l).collect();
            let v = random_tangent(l, &mut rng);
            let c = check_knn_gradient(&model, &features, &labels, 3, &v, VARIATION_RESOLUTION).map_err(err)?;
            worst_knn = worst_knn.max(c.max_rel_error);
        }
    }
    ensure(
        worst_loss < 1e-4 && worst_knn < 1e-3,
        format!("quadratic/CE max rel err {worst_loss:.2e}; kNN {worst_knn:.2e}"),
    )
}

fn simplex() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_sum = 0.0f64;
    for (n, l) in [(1, 2), (2, 3), (3, 4), (4, 3)] {
        for _ in 0..50 {
            let model = random_model(n, l, 6, rng.gen_range(0.1..0.6), rng.gen()).map_err(err)?;
            let x = random_points(n, 1, rng.gen()).remove(0);
            let geom = model.point_geometry(&x).map_err(err)?;
            let metric = induced_metric(&geom).map_err(err)?;
            let target = OneHotTarget::new(rng.gen_range(0..l), l).map_err(err)?;
            let drop = rng.gen_range(0..l);
            let mut vectors = vec![quadratic_grad_h(&geom, &target), cross_entropy_grad_h(&geom, &target)];
            for strategy in [SimplexStrategy::ComponentDrop, SimplexStrategy::TangentProject] {
                vectors.push(geometric_grad_h(&geom, &metric, strategy, drop).map_err(err)?);
                for loss in [
                    LossKind::Quadratic,
                    LossKind::CrossEntropy,
                    LossKind::KnnDistance { k: 3, damping: Damping::default() },
                ] {
                    let cfg = TrainConfig { lambda: 1.0, loss, simplex_strategy: strategy, ..TrainConfig::default() };
                    let knn = KnnPointTerm { mean_target: softmax_like(l, &mut rng), damping: rng.gen() };
                    vectors.push(total_grad_h(&geom, Some(&metric), &target, &cfg, drop, Some(&knn)).map_err(err)?);
                }
            }
            for v in &vectors {
                worst_sum = worst_sum.max(v.iter().sum::<f64>().abs());
            }
        }
    }

    let mut worst_dev = 0.0f64;
    let circle = make_circle_dataset(200, 1).map_err(err)?;
    let raw = load_csv(&data("iris.csv"), LabelColumn::Last, false).map_err(err)?;
    let iris = normalize(&raw, &(0..raw.len()).collect::<Vec<_>>()).map_err(err)?;
    for (ds, c) in [(&circle, 0.25), (&iris, 0.25)] {
        for (loss, strategy) in [
            (LossKind::CrossEntropy, SimplexStrategy::ComponentDrop),
            (LossKind::Quadratic, SimplexStrategy::TangentProject),
        ] {
            let cfg = TrainConfig {
                kernel_width: c,
                lambda: 0.2,
                max_iters: 20,
                loss,
                simplex_strategy: strategy,
                ..TrainConfig::default()
            };
            let (_, trace) = train(ds, &cfg).map_err(err)?;
            for r in &trace.records {
                worst_dev = worst_dev.max(r.simplex_deviation);
            }
        }
    }
    ensure(
        worst_sum < 1e-12 && worst_dev <= 1e-10,
        format!("max |Σ grad| {worst_sum:.2e}; max simplex deviation {worst_dev:.2e}"),
    )
}

fn softmax_like(l: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..l).map(|_| rng.gen::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn knn_consistency() -> Outcome {
    let k = |m: usize| (m as f64).sqrt().ceil() as usize;
    let mut decreasing = 0;
    let mut detail = Vec::new();
    for seed in 0..3 {
        let rows = knn_consistency_study(&LinearRamp, &[100, 400, 1600], k, seed, 1000).map_err(err)?;
        let errs: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.mean_abs_error)).collect();
        detail.push(errs.join(" > "));
        decreasing += usize::from(rows.windows(2).all(|w| w[1].mean_abs_error < w[0].mean_abs_error));
    }
    ensure(decreasing >= 2, format!("{decreasing}/3 seeds decreasing [{}]", detail.join("; ")))
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    cv_mean("iris.csv", second)?;
    let a = std::fs::read(first.join("iris_cv.json")).map_err(err)?;
    let b = std::fs::read(second.join("iris_cv.json")).map_err(err)?;
    // The text table carries wall time; only the machine report is compared.
    ensure(a == b, format!("{} JSON bytes identical: {}", a.len(), a == b))
}

fn main() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let first = scratch.path().join("cv1");
    let second = scratch.path().join("cv2");
    let circle_dir = scratch.path().join("circle");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("analytic input derivatives", Box::new(derivatives)),
        ("binary curve curvature", Box::new(curve_curvature)),
        ("first variation of the volume", Box::new(first_variation)),
        ("flat-graph identities", Box::new(flat_graph)),
        ("circle replication", Box::new(|| circle(&circle_dir))),
        ("Iris/Wine nested CV", Box::new(|| table(&first))),
        ("loss-gradient oracles", Box::new(loss_gradients)),
        ("simplex tangency", Box::new(simplex)),
        ("kNN consistency", Box::new(knn_consistency)),
        ("CV determinism", Box::new(|| determinism(&first, &second))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2}: PASS  {name} ({d}) [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2}: FAIL  {name} ({d}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
