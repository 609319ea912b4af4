//! Command implementations behind the `geoclass` binary.
//!
//! Exit codes: 0 success, 1 a check reported FAIL, 2 bad arguments or
//! configuration, 3 numerical failure, 4 I/O or input-data failure.

pub mod model_file;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geoclass::geometry::{graph_volume, DomainBox};
use geoclass::gradcheck::{run_suite, CheckOutcome};
use geoclass::harness::{
    circle_label, cross_validate, load_csv, load_features, make_circle_dataset, normalize, CvConfig, LabelColumn,
    CIRCLE_HALF_WIDTH, DEFAULT_C_GRID, DEFAULT_LAMBDA_GRID,
};
use geoclass::losses::{Damping, LossKind};
use geoclass::trainer::{error_rate, predict, train, SimplexStrategy, TrainConfig, TrainTrace};
use model_file::{ConfigEcho, ModelFile, ModelFileError};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Kernel width used by `circle` unless overridden.
pub const CIRCLE_DEFAULT_C: f64 = 0.25;
/// Trade-off used by `circle` unless overridden.
pub const CIRCLE_DEFAULT_LAMBDA: f64 = 0.1;
pub const CIRCLE_DEFAULT_ITERS: usize = 50;
/// Grid resolution per axis for reported graph volumes.
pub const VOLUME_RESOLUTION: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] geoclass::Error),
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
            CliError::ModelFile(ModelFileError::Model { source, .. }) if source.is_numerical() => EXIT_NUMERICAL,
            CliError::ModelFile(_) | CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(geoclass::Error::Io(_) | geoclass::Error::Parse { .. } | geoclass::Error::Dataset(_)) => {
                EXIT_IO
            }
            CliError::Core(_) => EXIT_USAGE,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "geoclass", version, about = "Class-probability estimation with a graph-volume regularizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a labeled CSV and write a model file.
    Train(TrainArgs),
    /// Predict class labels and probabilities with a saved model.
    Predict(PredictArgs),
    /// Nested cross-validation with grid search over c and lambda.
    Cv(CvArgs),
    /// Finite-difference and closed-form checks of the derivatives.
    Gradcheck(GradcheckArgs),
    /// Synthetic disc experiment; writes a probability grid for plotting.
    Circle(CircleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Quadratic,
    CrossEntropy,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    /// Geometry on L−1 components; the last is minus their sum.
    Drop,
    /// Full curvature projected onto the simplex tangent space.
    Project,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file, one sample per row.
    #[arg(long)]
    pub data: PathBuf,
    /// Zero-based label column; defaults to the last column.
    #[arg(long)]
    pub label_column: Option<usize>,
    /// Skip the first row.
    #[arg(long)]
    pub header: bool,
}

impl DataArgs {
    fn label_column(&self) -> LabelColumn {
        self.label_column.map_or(LabelColumn::Last, LabelColumn::Index)
    }
}

#[derive(Debug, Clone, Args)]
pub struct FlowArgs {
    /// Step size of the flow.
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    /// Number of iterations.
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = LossArg::CrossEntropy)]
    pub loss: LossArg,
    /// Neighbors for the kNN loss.
    #[arg(long, default_value_t = 5)]
    pub knn_k: usize,
    /// Width of the kNN damping ramp.
    #[arg(long, default_value_t = geoclass::losses::DEFAULT_DAMPING_EPSILON)]
    pub damping_epsilon: f64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Drop)]
    pub strategy: StrategyArg,
    /// Stop early once the mean absolute coefficient change falls below this.
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    /// Diagonal ridge added to the kernel matrix before factoring.
    #[arg(long, default_value_t = geoclass::trainer::DEFAULT_TRAIN_RIDGE)]
    pub ridge: f64,
}

impl FlowArgs {
    fn config(&self, c: f64, lambda: f64) -> CliResult<TrainConfig> {
        check_positive("--c", c)?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(CliError::Usage(format!("--lambda must be a finite value >= 0, got {lambda}")));
        }
        check_positive("--tau", self.tau)?;
        if self.iters == 0 {
            return Err(CliError::Usage("--iters must be at least 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(CliError::Usage(format!("--ridge must be a finite value >= 0, got {}", self.ridge)));
        }
        if !(self.tol >= 0.0) {
            return Err(CliError::Usage(format!("--tol must be >= 0, got {}", self.tol)));
        }
        let loss = match self.loss {
            LossArg::Quadratic => LossKind::Quadratic,
            LossArg::CrossEntropy => LossKind::CrossEntropy,
            LossArg::Knn => {
                if self.knn_k == 0 {
                    return Err(CliError::Usage("--knn-k must be at least 1".into()));
                }
                check_positive("--damping-epsilon", self.damping_epsilon)?;
                LossKind::KnnDistance {
                    k: self.knn_k,
                    damping: Damping {
                        epsilon: self.damping_epsilon,
                    },
                }
            }
        };
        Ok(TrainConfig {
            kernel_width: c,
            lambda,
            step_size: self.tau,
            max_iters: self.iters,
            loss,
            simplex_strategy: match self.strategy {
                StrategyArg::Drop => SimplexStrategy::ComponentDrop,
                StrategyArg::Project => SimplexStrategy::TangentProject,
            },
            convergence_tol: self.tol,
            ridge_jitter: self.ridge,
            ..TrainConfig::default()
        })
    }
}

fn check_positive(flag: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{flag} must be a finite value > 0, got {v}")))
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Kernel width.
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    /// Weight of the graph-volume term.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub flow: FlowArgs,
    /// Where to write the model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of inputs. With `--labeled`, also reports the error rate.
    #[arg(long)]
    pub data: PathBuf,
    /// The CSV has a label column (see `--label-column`).
    #[arg(long)]
    pub labeled: bool,
    /// Zero-based label column for `--labeled`; defaults to the last.
    #[arg(long)]
    pub label_column: Option<usize>,
    #[arg(long)]
    pub header: bool,
    /// Write predictions here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10)]
    pub outer: usize,
    #[arg(long, default_value_t = 5)]
    pub inner: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated kernel widths.
    #[arg(long, value_delimiter = ',')]
    pub c_grid: Option<Vec<f64>>,
    /// Comma-separated trade-off values.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Fit the normalization on the whole dataset rather than per training split.
    #[arg(long)]
    pub normalize_on_full: bool,
    #[command(flatten)]
    pub flow: FlowArgs,
    /// Directory for `<name>_cv.txt` and `<name>_cv.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Input dimension (1 or 2).
    #[arg(long = "n", default_value_t = 2)]
    pub n: usize,
    /// Number of classes (2 to 4).
    #[arg(long = "l", default_value_t = 3)]
    pub l: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Quadrature cells per axis for the volume checks.
    #[arg(long, default_value_t = geoclass::gradcheck::VARIATION_RESOLUTION)]
    pub resolution: usize,
    /// Random perturbations for the first-variation check.
    #[arg(long, default_value_t = 10)]
    pub perturbations: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CircleArgs {
    #[arg(long, default_value_t = 400)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = CIRCLE_DEFAULT_C)]
    pub c: f64,
    #[arg(long, default_value_t = CIRCLE_DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long, default_value_t = CIRCLE_DEFAULT_ITERS)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = LossArg::CrossEntropy)]
    pub loss: LossArg,
    #[arg(long, value_enum, default_value_t = StrategyArg::Drop)]
    pub strategy: StrategyArg,
    /// Diagonal ridge added to the kernel matrix before factoring.
    #[arg(long, default_value_t = geoclass::trainer::DEFAULT_TRAIN_RIDGE)]
    pub ridge: f64,
    /// Evaluation grid points per axis.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    /// Directory for `probabilities.txt` and `grid.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> CliResult<()> {
    let text = match cli.command {
        Command::Train(a) => cmd_train(&a)?,
        Command::Predict(a) => cmd_predict(&a)?,
        Command::Cv(a) => cmd_cv(&a)?,
        Command::Gradcheck(a) => return cmd_gradcheck(&a, out),
        Command::Circle(a) => cmd_circle(&a)?.text,
    };
    write_out(out, &text)
}

fn write_out(out: &mut dyn std::io::Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(|source| CliError::Io {
        path: "<stdout>".into(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn trace_table(trace: &TrainTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>5}  {:>14}  {:>12}  {:>9}", "iter", "loss", "geometric", "train_err");
    for r in &trace.records {
        let _ = writeln!(
            s,
            "{:>5}  {:>14.6}  {:>12.6}  {:>9.4}",
            r.iteration, r.empirical_loss, r.geometric_penalty, r.train_error
        );
    }
    s
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<String> {
    let cfg = a.flow.config(a.c, a.lambda)?;
    let raw = load_csv(&a.data.data, a.data.label_column(), a.data.header)?;
    let all: Vec<usize> = (0..raw.len()).collect();
    let ds = normalize(&raw, &all)?;
    let (model, trace) = train(&ds, &cfg)?;
    ModelFile::new(&model, ds.class_names().to_vec(), ConfigEcho::from(&cfg)).save(&a.out)?;
    let mut s = trace_table(&trace);
    let final_err = trace.records.last().map_or(f64::NAN, |r| r.train_error);
    let _ = writeln!(s, "final train error: {:.4}", final_err);
    let _ = writeln!(s, "model written to {}", a.out.display());
    Ok(s)
}

pub fn cmd_predict(a: &PredictArgs) -> CliResult<String> {
    let (file, model) = ModelFile::load(&a.model)?;
    let (features, truth): (geoclass::numeric::Matrix, Option<Vec<String>>) = if a.labeled {
        let col = a.label_column.map_or(LabelColumn::Last, LabelColumn::Index);
        let ds = load_csv(&a.data, col, a.header)?;
        let names = ds.labels().iter().map(|&y| ds.class_names()[y].clone()).collect();
        (ds.features().clone(), Some(names))
    } else {
        (load_features(&a.data, a.header)?, None)
    };
    let mut s = String::new();
    let mut wrong = 0usize;
    for (i, x) in features.row_iter().enumerate() {
        let p = predict(&model, x)?;
        let name = &file.class_names[p.label];
        let probs: Vec<String> = p.probabilities.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "{name},{}", probs.join(","));
        if let Some(t) = &truth {
            wrong += usize::from(&t[i] != name);
        }
    }
    let mut summary = String::new();
    if truth.is_some() {
        let _ = writeln!(summary, "error rate: {:.4}", wrong as f64 / features.rows() as f64);
    }
    match &a.out {
        Some(path) => {
            write_file(path, &s)?;
            Ok(summary + &format!("predictions written to {}\n", path.display()))
        }
        None => Ok(s + &summary),
    }
}

pub fn cmd_cv(a: &CvArgs) -> CliResult<String> {
    let template = a.flow.config(1.0, 0.0)?;
    let cv = CvConfig {
        outer_folds: a.outer,
        inner_folds: a.inner,
        c_grid: a.c_grid.clone().unwrap_or_else(|| DEFAULT_C_GRID.to_vec()),
        lambda_grid: a.lambda_grid.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec()),
        seed: a.seed,
        loss: template.loss,
        normalize_on_full: a.normalize_on_full,
    };
    cv.validate()?;
    let ds = load_csv(&a.data.data, a.data.label_column(), a.data.header)?;
    let report = cross_validate(&ds, &cv, &template)?;
    create_dir(&a.out_dir)?;
    let txt = a.out_dir.join(format!("{}_cv.txt", report.dataset));
    let json = a.out_dir.join(format!("{}_cv.json", report.dataset));
    let table = report.to_table();
    write_file(&txt, &table)?;
    write_file(&json, &(report.to_machine_json() + "\n"))?;
    Ok(format!(
        "{table}reports written to {} and {}\n{}\n",
        txt.display(),
        json.display(),
        report.mean_error_percent()
    ))
}

fn check_line(c: &CheckOutcome) -> String {
    format!(
        "{:<20} max rel err {:>10.3e}  tol {:>8.1e}  {}",
        c.name,
        c.max_rel_error,
        c.tolerance,
        if c.passed { "PASS" } else { "FAIL" }
    )
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    if !(1..=2).contains(&a.n) {
        return Err(CliError::Usage(format!("--n must be 1 or 2, got {}", a.n)));
    }
    if !(2..=4).contains(&a.l) {
        return Err(CliError::Usage(format!("--l must be between 2 and 4, got {}", a.l)));
    }
    if a.resolution < 2 {
        return Err(CliError::Usage("--resolution must be at least 2".into()));
    }
    let checks = run_suite(a.n, a.l, a.seed, a.resolution, a.perturbations)?;
    let mut s = String::new();
    for c in &checks {
        let _ = writeln!(s, "{}", check_line(c));
    }
    write_out(out, &s)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("failed checks: {}", failed.join(", "))))
    }
}

/// Outcome of the disc experiment.
#[derive(Debug, Clone)]
pub struct CircleOutcome {
    /// Fraction of evaluation-grid points classified as their true label.
    pub grid_accuracy: f64,
    /// Quadrature graph volume over the normalized input box.
    pub graph_volume: f64,
    pub trace: TrainTrace,
    pub text: String,
}

pub fn cmd_circle(a: &CircleArgs) -> CliResult<CircleOutcome> {
    if a.m < 10 {
        return Err(CliError::Usage(format!("--m must be at least 10, got {}", a.m)));
    }
    if a.grid < 2 {
        return Err(CliError::Usage("--grid must be at least 2".into()));
    }
    let flow = FlowArgs {
        tau: a.tau,
        iters: a.iters,
        loss: a.loss,
        knn_k: 5,
        damping_epsilon: geoclass::losses::DEFAULT_DAMPING_EPSILON,
        strategy: a.strategy,
        tol: 0.0,
        ridge: a.ridge,
    };
    let cfg = flow.config(a.c, a.lambda)?;
    let ds = make_circle_dataset(a.m, a.seed)?;
    let (model, trace) = train(&ds, &cfg)?;

    let n = a.grid;
    let step = 2.0 * CIRCLE_HALF_WIDTH / n as f64;
    let mut matrix = String::new();
    let mut csv = String::from("x,y,p_positive,true_label\n");
    let mut correct = 0usize;
    for iy in 0..n {
        let y = -CIRCLE_HALF_WIDTH + (iy as f64 + 0.5) * step;
        let mut row = Vec::with_capacity(n);
        for ix in 0..n {
            let x = -CIRCLE_HALF_WIDTH + (ix as f64 + 0.5) * step;
            let p = predict(&model, &[x, y])?;
            let truth = circle_label(&[x, y]);
            correct += usize::from(p.label == truth);
            row.push(format!("{:.6}", p.probabilities[1]));
            let _ = writeln!(csv, "{x},{y},{:.6},{}", p.probabilities[1], ds.class_names()[truth]);
        }
        let _ = writeln!(matrix, "{}", row.join(" "));
    }
    let grid_accuracy = correct as f64 / (n * n) as f64;
    let volume = graph_volume(&model, &DomainBox::unit(2), &[VOLUME_RESOLUTION; 2])?;

    create_dir(&a.out_dir)?;
    write_file(&a.out_dir.join("probabilities.txt"), &matrix)?;
    write_file(&a.out_dir.join("grid.csv"), &csv)?;

    let mut text = trace_table(&trace);
    let _ = writeln!(text, "training error: {:.4}", error_rate(&model, &ds)?);
    let _ = writeln!(text, "graph volume: {volume:.6}");
    let _ = writeln!(text, "grid accuracy: {grid_accuracy:.4}");
    Ok(CircleOutcome {
        grid_accuracy,
        graph_volume: volume,
        trace,
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(args: &[&str]) -> FlowArgs {
        let mut full = vec!["geoclass", "train", "--data", "x.csv", "--out", "m.json"];
        full.extend_from_slice(args);
        match Cli::try_parse_from(full).unwrap().command {
            Command::Train(a) => a.flow,
            _ => unreachable!(),
        }
    }

    #[test]
    fn exit_codes_follow_the_error_class() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::CheckFailed("x".into()).exit_code(), EXIT_CHECK_FAILED);
        assert_eq!(CliError::Core(geoclass::Error::Singular("G".into())).exit_code(), EXIT_NUMERICAL);
        assert_eq!(CliError::Core(geoclass::Error::Dataset("x".into())).exit_code(), EXIT_IO);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::Io { path: "p".into(), source: io }.exit_code(), EXIT_IO);
    }

    #[test]
    fn flow_flags_are_validated_by_name() {
        let cfg = flow(&[]).config(0.5, 1.0).unwrap();
        assert_eq!(cfg.ridge_jitter, geoclass::trainer::DEFAULT_TRAIN_RIDGE);
        for (args, c, lambda, flag) in [
            (vec![], 0.0, 1.0, "--c"),
            (vec![], 0.5, f64::NAN, "--lambda"),
            (vec!["--tau", "0"], 0.5, 1.0, "--tau"),
            (vec!["--iters", "0"], 0.5, 1.0, "--iters"),
            (vec!["--ridge=-1"], 0.5, 1.0, "--ridge"),
            (vec!["--loss", "knn", "--knn-k", "0"], 0.5, 1.0, "--knn-k"),
        ] {
            let e = flow(&args).config(c, lambda).unwrap_err();
            assert_eq!(e.exit_code(), EXIT_USAGE);
            assert!(e.to_string().contains(flag), "{e}");
        }
    }

    #[test]
    fn knn_loss_carries_its_parameters() {
        let cfg = flow(&["--loss", "knn", "--knn-k", "7", "--strategy", "project"]).config(0.5, 0.0).unwrap();
        assert!(matches!(cfg.loss, LossKind::KnnDistance { k: 7, .. }));
        assert_eq!(cfg.simplex_strategy, SimplexStrategy::TangentProject);
    }
}
