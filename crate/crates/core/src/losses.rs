//! Empirical penalty terms and their gradients.
//!
//! Gradients come in two flavors: with respect to `f` (the simplex
//! coordinates) and with respect to `h` (the softmax logits). Every `h`-space
//! gradient is `(∂f/∂h)ᵀ` applied to something, or `f − z`, and so sums to
//! zero.

use crate::error::{Error, Result};
use crate::estimator::PointGeometry;
use crate::numeric::{squared_distance, Matrix};

/// Floor applied to probabilities inside the cross-entropy logarithm.
pub const LOG_FLOOR: f64 = 1e-300;

/// Width of the ramp of the kNN damping function.
pub const DEFAULT_DAMPING_EPSILON: f64 = 1e-3;

/// Smoothing of the kNN-distance gradient near ties between the k-th and
/// (k+1)-th nearest training points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    pub epsilon: f64,
}

impl Default for Damping {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_DAMPING_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Quadratic,
    CrossEntropy,
    /// Squared distance to the average one-hot label of the `k` nearest
    /// training points.
    KnnDistance { k: usize, damping: Damping },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Quadratic => "quadratic",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::KnnDistance { .. } => "knn_distance",
        }
    }

    pub fn validate(&self, num_samples: usize) -> Result<()> {
        if let LossKind::KnnDistance { k, damping } = self {
            if *k == 0 || *k > num_samples {
                return Err(Error::invalid(
                    "k",
                    format!("must be in 1..={num_samples}, got {k}"),
                ));
            }
            if !(damping.epsilon > 0.0) {
                return Err(Error::invalid("damping", "epsilon must be > 0"));
            }
        }
        Ok(())
    }
}

/// One-hot encoding of a class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotTarget {
    class: usize,
    num_classes: usize,
}

impl OneHotTarget {
    pub fn new(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::invalid(
                "class",
                format!("index {class} out of range for {num_classes} classes"),
            ));
        }
        Ok(Self { class, num_classes })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    #[inline]
    pub fn component(&self, l: usize) -> f64 {
        if l == self.class {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.num_classes).map(|l| self.component(l)).collect()
    }
}

fn check_lengths(f: usize, t: usize) -> Result<()> {
    if f != t {
        return Err(Error::dim(t, f, "prediction/target count"));
    }
    Ok(())
}

/// `Σ_i ‖f(x_i) − z_i‖²`
pub fn quadratic_loss(f_values: &[Vec<f64>], targets: &[OneHotTarget]) -> Result<f64> {
    check_lengths(f_values.len(), targets.len())?;
    let mut total = 0.0;
    for (f, z) in f_values.iter().zip(targets) {
        total += f
            .iter()
            .enumerate()
            .map(|(l, v)| (v - z.component(l)).powi(2))
            .sum::<f64>();
    }
    Ok(total)
}

/// `2 (∂f/∂h)ᵀ (f − z)`
pub fn quadratic_grad_h(geom: &PointGeometry, target: &OneHotTarget) -> Vec<f64> {
    let resid: Vec<f64> = geom
        .f
        .iter()
        .enumerate()
        .map(|(l, v)| 2.0 * (v - target.component(l)))
        .collect();
    geom.jac_fh.tr_mul_vec(&resid)
}

/// `−Σ_i log f^{y_i}(x_i)`, with the probability floored at [`LOG_FLOOR`].
pub fn cross_entropy_loss(f_values: &[Vec<f64>], targets: &[OneHotTarget]) -> Result<f64> {
    check_lengths(f_values.len(), targets.len())?;
    Ok(f_values
        .iter()
        .zip(targets)
        .map(|(f, z)| -f[z.class()].max(LOG_FLOOR).ln())
        .sum())
}

/// `f − z`
pub fn cross_entropy_grad_h(geom: &PointGeometry, target: &OneHotTarget) -> Vec<f64> {
    geom.f
        .iter()
        .enumerate()
        .map(|(l, v)| v - target.component(l))
        .collect()
}

/// The `k` (or `k + 1`, for the damping gap) nearest training points of `x`,
/// sorted by distance; ties go to the smaller index.
pub fn nearest_neighbors(x: &[f64], features: &Matrix, count: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..features.rows())
        .map(|i| (i, squared_distance(x, features.row(i))))
        .collect();
    let count = count.min(all.len());
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if count < all.len() {
        all.select_nth_unstable_by(count, cmp);
        all.truncate(count + 1);
    }
    all.sort_by(cmp);
    all.truncate(count);
    all.into_iter().map(|(i, d)| (i, d.sqrt())).collect()
}

/// Damping `φ(x)`: a smoothstep of `min(1, gap/ε)`, where `gap` is the
/// difference between the (k+1)-th and k-th nearest-neighbor distances. It
/// vanishes where the k-nearest set is ambiguous and equals 1 away from it.
pub fn knn_damping(x: &[f64], features: &Matrix, k: usize, damping: Damping) -> f64 {
    if k >= features.rows() {
        return 1.0;
    }
    let nn = nearest_neighbors(x, features, k + 1);
    let gap = nn[k].1 - nn[k - 1].1;
    let t = (gap / damping.epsilon).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Mean one-hot label of the `k` nearest training points.
pub fn knn_mean_target(
    x: &[f64],
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    k: usize,
) -> Result<Vec<f64>> {
    if features.rows() == 0 {
        return Err(Error::Dataset("kNN search over an empty training set".into()));
    }
    if k == 0 || k > features.rows() {
        return Err(Error::invalid("k", format!("must be in 1..={}", features.rows())));
    }
    let mut mean = vec![0.0; num_classes];
    for (i, _) in nearest_neighbors(x, features, k) {
        mean[labels[i]] += 1.0 / k as f64;
    }
    Ok(mean)
}

/// `(2 φ(x) / k) Σ_{i ≤ k} (f(x) − z̃_i)`, the smoothed `f`-space gradient of
/// the kNN-averaged distance penalty. Map to `h`-space with `(∂f/∂h)ᵀ`.
pub fn knn_distance_grad(
    x: &[f64],
    geom: &PointGeometry,
    features: &Matrix,
    labels: &[usize],
    k: usize,
    damping_at_x: f64,
) -> Result<Vec<f64>> {
    let mean = knn_mean_target(x, features, labels, geom.f.len(), k)?;
    Ok(knn_grad_from_mean(&geom.f, &mean, damping_at_x))
}

/// `2 φ (f − mean)`; identical to the neighbor-sum form.
pub fn knn_grad_from_mean(f: &[f64], mean_target: &[f64], damping: f64) -> Vec<f64> {
    f.iter()
        .zip(mean_target)
        .map(|(v, m)| 2.0 * damping * (v - m))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{jacobian_f_h, softmax};

    fn geom_from_f(f: Vec<f64>) -> PointGeometry {
        let l = f.len();
        PointGeometry {
            h: vec![0.0; l],
            jac_fh: jacobian_f_h(&f),
            f,
            df: Matrix::zeros(l, 1),
            d2f: vec![Matrix::zeros(1, 1); l],
        }
    }

    #[test]
    fn quadratic_examples() {
        let z = OneHotTarget::new(0, 2).unwrap();
        assert_eq!(quadratic_loss(&[vec![1.0, 0.0]], &[z]).unwrap(), 0.0);
        assert_eq!(quadratic_loss(&[vec![0.5, 0.5]], &[z]).unwrap(), 0.5);
        let g = quadratic_grad_h(&geom_from_f(vec![0.5, 0.5]), &z);
        assert_eq!(g, vec![-0.5, 0.5]);
        assert!(quadratic_loss(&[vec![0.5, 0.5]], &[z, z]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let third = 1.0 / 3.0;
        let z = OneHotTarget::new(2, 3).unwrap();
        let loss = cross_entropy_loss(&[vec![third; 3]], &[z]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        let z = OneHotTarget::new(1, 2).unwrap();
        let g = cross_entropy_grad_h(&geom_from_f(vec![0.2, 0.8]), &z);
        assert!((g[0] - 0.2).abs() < 1e-15 && (g[1] + 0.2).abs() < 1e-15);
        assert_eq!(cross_entropy_grad_h(&geom_from_f(vec![0.0, 1.0]), &z), vec![0.0, 0.0]);
        // floored, finite
        let loss = cross_entropy_loss(&[vec![1.0, 0.0]], &[z]).unwrap();
        assert!((loss - 300.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_vanishes_near_fit() {
        let z = OneHotTarget::new(0, 3).unwrap();
        let f = softmax(&[40.0, 0.0, 0.0]);
        assert!(cross_entropy_loss(&[f], &[z]).unwrap() < 1e-15);
    }

    #[test]
    fn one_hot_validation() {
        assert!(OneHotTarget::new(3, 3).is_err());
        assert_eq!(OneHotTarget::new(1, 3).unwrap().to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn knn_examples() {
        let feats = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![0.4]]).unwrap();
        let labels = [0, 1, 1];
        // k = 1, nearest of 0.1 is sample 0 with z = (1, 0)
        let g = knn_distance_grad(&[0.1], &geom_from_f(vec![0.5, 0.5]), &feats, &labels, 1, 1.0)
            .unwrap();
        assert_eq!(g, vec![-1.0, 1.0]);
        // f equal to the neighbor mean → zero
        let mean = knn_mean_target(&[0.6], &feats, &labels, 2, 2).unwrap();
        assert_eq!(mean, vec![0.0, 1.0]);
        let g = knn_distance_grad(&[0.6], &geom_from_f(mean.clone()), &feats, &labels, 2, 1.0)
            .unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let empty = Matrix::zeros(0, 1);
        assert!(knn_distance_grad(&[0.5], &geom_from_f(mean), &empty, &[], 1, 1.0).is_err());
    }

    #[test]
    fn neighbor_ties_prefer_smaller_index() {
        let feats = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        let nn = nearest_neighbors(&[0.0], &feats, 3);
        assert_eq!(nn.iter().map(|p| p.0).collect::<Vec<_>>(), vec![2, 0, 1]);
    }

    #[test]
    fn damping_vanishes_on_ties() {
        let feats = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let d = Damping::default();
        assert_eq!(knn_damping(&[0.5], &feats, 1, d), 0.0);
        assert_eq!(knn_damping(&[0.2], &feats, 1, d), 1.0);
        let mid = knn_damping(&[0.5 - 0.00025], &feats, 1, d);
        assert!(mid > 0.0 && mid < 1.0);
        // no (k+1)-th neighbor → undamped
        assert_eq!(knn_damping(&[0.5], &feats, 2, d), 1.0);
    }

    #[test]
    fn loss_kind_validation() {
        let k = LossKind::KnnDistance {
            k: 5,
            damping: Damping::default(),
        };
        assert!(k.validate(4).is_err());
        assert!(k.validate(5).is_ok());
        assert!(LossKind::Quadratic.validate(0).is_ok());
    }
}
