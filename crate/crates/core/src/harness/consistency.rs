//! Empirical consistency of the k-nearest-neighbor class-probability
//! estimate `η̂_k(x) = (1/k) Σ_{i ≤ k} z̃_i` on distributions with known `η`.

use crate::error::{Error, Result};
use crate::geometry::{midpoint_grid, DomainBox};
use crate::losses::knn_mean_target;
use crate::numeric::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A distribution on `[0, 1]^N × {0..L}` with uniform marginal and known
/// class probabilities.
pub trait ProbabilityField {
    fn dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn eta(&self, x: &[f64]) -> Vec<f64>;
}

/// `P(y = 1 | x) = x` on [0, 1].
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearRamp;

impl ProbabilityField for LinearRamp {
    fn dim(&self) -> usize {
        1
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn eta(&self, x: &[f64]) -> Vec<f64> {
        vec![1.0 - x[0], x[0]]
    }
}

/// Noiseless labels: class 1 iff `x > cut`.
#[derive(Debug, Clone, Copy)]
pub struct Threshold {
    pub cut: f64,
}

impl ProbabilityField for Threshold {
    fn dim(&self) -> usize {
        1
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn eta(&self, x: &[f64]) -> Vec<f64> {
        if x[0] > self.cut {
            vec![0.0, 1.0]
        } else {
            vec![1.0, 0.0]
        }
    }
}

/// Draws `m` labeled samples from `field`.
pub fn sample_field<F: ProbabilityField + ?Sized>(
    field: &F,
    m: usize,
    rng: &mut impl Rng,
) -> Result<(Matrix, Vec<usize>)> {
    let n = field.dim();
    let mut rows = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let eta = field.eta(&x);
        let mut u = rng.gen::<f64>();
        let mut y = eta.len() - 1;
        for (c, p) in eta.iter().enumerate() {
            if u < *p {
                y = c;
                break;
            }
            u -= p;
        }
        labels.push(y);
        rows.push(x);
    }
    Ok((Matrix::from_rows(&rows)?, labels))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyRow {
    pub m: usize,
    pub k: usize,
    /// Mean over the probe grid of `½ Σ_ℓ |η̂^ℓ − η^ℓ|` (for two classes this
    /// is `|η̂^1 − η^1|`).
    pub mean_abs_error: f64,
}

/// For each `m` in the schedule, draws a fresh training set, and measures
/// the kNN estimate against the true `η` on a midpoint probe grid with
/// `probes` points per axis.
pub fn knn_consistency_study<F, K>(
    field: &F,
    m_schedule: &[usize],
    k_rule: K,
    seed: u64,
    probes: usize,
) -> Result<Vec<ConsistencyRow>>
where
    F: ProbabilityField + ?Sized,
    K: Fn(usize) -> usize,
{
    let n = field.dim();
    let (grid, _) = midpoint_grid(&DomainBox::unit(n), &vec![probes; n])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(m_schedule.len());
    for &m in m_schedule {
        let k = k_rule(m);
        if k == 0 || k > m {
            return Err(Error::invalid("k_rule", format!("k({m}) = {k} is not in 1..={m}")));
        }
        let (features, labels) = sample_field(field, m, &mut rng)?;
        let mut total = 0.0;
        for x in &grid {
            let est = knn_mean_target(x, &features, &labels, field.num_classes(), k)?;
            let eta = field.eta(x);
            total += 0.5 * est.iter().zip(&eta).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
        rows.push(ConsistencyRow {
            m,
            k,
            mean_abs_error: total / grid.len() as f64,
        });
    }
    Ok(rows)
}
