//! Nested cross-validation with a grid search over kernel width and `λ`.
//!
//! For each outer fold the `(c, λ)` pair with the smallest inner-CV error is
//! retrained on the whole outer-training part and scored on the held-out
//! fold. Grid ties go to the smaller `c`, then the smaller `λ`.

use super::dataset::{normalize, Dataset};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::trainer::{error_rate, initialize, train, train_from, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::time::Instant;

/// Kernel widths `{1/2⁵, …, 1/2, 1, 2, 4, 8}`.
pub const DEFAULT_C_GRID: [f64; 9] = [
    1.0 / 32.0,
    1.0 / 16.0,
    1.0 / 8.0,
    1.0 / 4.0,
    1.0 / 2.0,
    1.0,
    2.0,
    4.0,
    8.0,
];

/// Trade-offs `{1/1.5⁴, 1/1.5³, 1/1.5², 1/1.5, 1, 1.5}`.
pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [
    1.0 / (1.5 * 1.5 * 1.5 * 1.5),
    1.0 / (1.5 * 1.5 * 1.5),
    1.0 / (1.5 * 1.5),
    1.0 / 1.5,
    1.0,
    1.5,
];

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub c_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    pub loss: LossKind,
    /// Fit normalization on the whole dataset instead of each training split.
    pub normalize_on_full: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            outer_folds: 10,
            inner_folds: 5,
            c_grid: DEFAULT_C_GRID.to_vec(),
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            seed: 0,
            loss: LossKind::CrossEntropy,
            normalize_on_full: false,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(Error::invalid("folds", "need at least 2 outer and 2 inner folds"));
        }
        if self.c_grid.is_empty() || self.lambda_grid.is_empty() {
            return Err(Error::invalid("grid", "c and lambda grids must be nonempty"));
        }
        if self.c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("c_grid", "kernel widths must be > 0"));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::invalid("lambda_grid", "lambdas must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub c: f64,
    pub lambda: f64,
    pub inner_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_size: usize,
    pub c: f64,
    pub lambda: f64,
    /// Held-out error rate in [0, 1].
    pub error: f64,
    pub grid: Vec<GridCell>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub c_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    pub loss: &'static str,
    pub step_size: f64,
    pub max_iters: usize,
    pub simplex_strategy: String,
    pub normalize_on_full: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub dataset: String,
    pub config: ConfigEcho,
    pub folds: Vec<FoldResult>,
    /// Arithmetic mean of the fold error rates, in [0, 1].
    pub mean_error: f64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl CvReport {
    /// Pretty-printed JSON. Excludes wall time, so it is byte-identical
    /// across runs with the same inputs.
    pub fn to_machine_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Mean error as a two-decimal percentage, e.g. `"3.33"`.
    pub fn mean_error_percent(&self) -> String {
        format!("{:.2}", 100.0 * self.mean_error)
    }

    /// Line-oriented human-readable table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset: {}  loss: {}", self.dataset, self.config.loss);
        let _ = writeln!(s, "{:>4}  {:>10}  {:>10}  {:>6}  {:>8}", "fold", "c", "lambda", "n", "error%");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{:>4}  {:>10.5}  {:>10.5}  {:>6}  {:>8.2}",
                f.fold,
                f.c,
                f.lambda,
                f.test_size,
                100.0 * f.error
            );
        }
        let _ = writeln!(s, "mean error (%): {}", self.mean_error_percent());
        let _ = writeln!(s, "wall time (s): {:.1}", self.wall_time_secs);
        s
    }
}

/// Stratified k-fold split: each class is shuffled and dealt round-robin,
/// continuing the deal across classes so fold sizes differ by at most one.
/// Returns the held-out indices of each fold, sorted.
pub fn stratified_folds(labels: &[usize], num_classes: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in held_out {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

/// Every fold must hold at least one test sample and leave every class in
/// its training complement.
fn check_folds(ds: &Dataset, split: &[Vec<usize>], what: &str) -> Result<()> {
    let folds = split.len();
    if split.iter().any(|f| f.is_empty()) {
        return Err(Error::Folds(format!(
            "{} samples cannot fill {folds} {what} folds; use fewer folds",
            ds.len()
        )));
    }
    for test_idx in split {
        check_classes(ds, &complement(ds.len(), test_idx), what, folds)?;
    }
    Ok(())
}

fn check_classes(ds: &Dataset, indices: &[usize], what: &str, folds: usize) -> Result<()> {
    let mut seen = vec![false; ds.num_classes()];
    for &i in indices {
        seen[ds.labels()[i]] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::Folds(format!(
            "class `{}` is absent from a {what} training fold with {folds} folds; use fewer folds",
            ds.class_names()[c]
        )));
    }
    Ok(())
}

/// Normalized training and test parts of `ds` for one split.
fn split(ds: &Dataset, train_idx: &[usize], test_idx: &[usize], refit: bool) -> Result<(Dataset, Dataset)> {
    let base = if refit { normalize(ds, train_idx)? } else { ds.clone() };
    Ok((base.subset(train_idx)?, base.subset(test_idx)?))
}

fn score(result: Result<f64>) -> Result<f64> {
    match result {
        Ok(e) => Ok(e),
        Err(e) if e.is_numerical() => {
            log::warn!("grid cell failed numerically ({e}); scoring it as error 1.0");
            Ok(1.0)
        }
        Err(e) => Err(e),
    }
}

/// Inner grid search over `outer_train`; returns every cell in `(c, λ)`
/// ascending order.
fn grid_search(
    outer_train: &Dataset,
    cv: &CvConfig,
    template: &TrainConfig,
    seed: u64,
    refit: bool,
    c_grid: &[f64],
    lambda_grid: &[f64],
) -> Result<Vec<GridCell>> {
    let folds = stratified_folds(outer_train.labels(), outer_train.num_classes(), cv.inner_folds, seed);
    check_folds(outer_train, &folds, "inner")?;
    let mut totals = vec![0.0; c_grid.len() * lambda_grid.len()];
    for test_idx in &folds {
        let train_idx = complement(outer_train.len(), test_idx);
        let (tr, te) = split(outer_train, &train_idx, test_idx, refit)?;
        for (ci, &c) in c_grid.iter().enumerate() {
            let base = TrainConfig {
                kernel_width: c,
                loss: cv.loss,
                ..*template
            };
            let init = match initialize(&tr, &base) {
                Ok(init) => Some(init),
                Err(e) if e.is_numerical() => {
                    log::warn!("initialization failed for c = {c}: {e}");
                    None
                }
                Err(e) => return Err(e),
            };
            for (li, &lambda) in lambda_grid.iter().enumerate() {
                let err = match &init {
                    None => 1.0,
                    Some(init) => {
                        let cfg = TrainConfig { lambda, ..base };
                        score(train_from(init, &tr, &cfg).and_then(|(m, _)| error_rate(&m, &te)))?
                    }
                };
                totals[ci * lambda_grid.len() + li] += err;
            }
        }
    }
    let k = folds.len() as f64;
    Ok(c_grid
        .iter()
        .flat_map(|&c| lambda_grid.iter().map(move |&l| (c, l)))
        .zip(totals)
        .map(|((c, lambda), t)| GridCell {
            c,
            lambda,
            inner_error: t / k,
        })
        .collect())
}

/// Nested cross-validation of the estimator on `dataset` (raw features).
pub fn cross_validate(dataset: &Dataset, cv: &CvConfig, template: &TrainConfig) -> Result<CvReport> {
    cv.validate()?;
    template.validate()?;
    let start = Instant::now();
    let mut c_grid = cv.c_grid.clone();
    c_grid.sort_by(f64::total_cmp);
    let mut lambda_grid = cv.lambda_grid.clone();
    lambda_grid.sort_by(f64::total_cmp);

    let all: Vec<usize> = (0..dataset.len()).collect();
    let (base, refit) = if cv.normalize_on_full {
        (normalize(dataset, &all)?, false)
    } else {
        (dataset.clone(), true)
    };
    let outer = stratified_folds(base.labels(), base.num_classes(), cv.outer_folds, cv.seed);
    check_folds(&base, &outer, "outer")?;

    let folds: Vec<FoldResult> = outer
        .par_iter()
        .enumerate()
        .map(|(fold, test_idx)| -> Result<FoldResult> {
            let train_idx = complement(base.len(), test_idx);
            let outer_train = base.subset(&train_idx)?;
            let inner_seed = cv.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(fold as u64 + 1);
            let grid = grid_search(&outer_train, cv, template, inner_seed, refit, &c_grid, &lambda_grid)?;
            let best = grid
                .iter()
                .fold(&grid[0], |b, cell| if cell.inner_error < b.inner_error { cell } else { b });
            let cfg = TrainConfig {
                kernel_width: best.c,
                lambda: best.lambda,
                loss: cv.loss,
                ..*template
            };
            let (tr, te) = split(&base, &train_idx, test_idx, refit)?;
            let (model, _) = train(&tr, &cfg)?;
            Ok(FoldResult {
                fold,
                test_size: test_idx.len(),
                c: best.c,
                lambda: best.lambda,
                error: error_rate(&model, &te)?,
                grid,
            })
        })
        .collect::<Result<_>>()?;

    let mean_error = folds.iter().map(|f| f.error).sum::<f64>() / folds.len() as f64;
    Ok(CvReport {
        dataset: dataset.name.clone(),
        config: ConfigEcho {
            outer_folds: cv.outer_folds,
            inner_folds: cv.inner_folds,
            c_grid,
            lambda_grid,
            seed: cv.seed,
            loss: cv.loss.name(),
            step_size: template.step_size,
            max_iters: template.max_iters,
            simplex_strategy: format!("{:?}", template.simplex_strategy),
            normalize_on_full: cv.normalize_on_full,
        },
        folds,
        mean_error,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
