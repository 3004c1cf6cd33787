//! Mean cross-entropy of the corrected softmax plus L2 shrinkage toward the
//! identity, and its analytic gradient.
//!
//! The corrected score of column `j` (group `g`) is `z_j = alpha_g o_j + beta_g`,
//! so with `d_j = q_j - [j == y]`:
//!
//! ```text
//! dL/dalpha_k = mean_i sum_{j in k} d_ij o_ij + 2 l2_alpha (alpha_k - 1)
//! dL/dbeta_k  = mean_i sum_{j in k} d_ij      + 2 l2_beta  beta_k
//! ```

use super::{softmax_into, AffinePair, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::schedule::StateLogits;

/// L2 weights; the penalty is `l2_alpha * sum (alpha - 1)^2 + l2_beta * sum beta^2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Penalty {
    pub l2_alpha: f64,
    pub l2_beta: f64,
}

impl Penalty {
    pub fn value(&self, pairs: &[AffinePair]) -> f64 {
        pairs
            .iter()
            .map(|p| self.l2_alpha * (p.alpha - 1.0).powi(2) + self.l2_beta * p.beta * p.beta)
            .sum()
    }
}

/// Loss and gradient of a batch, one gradient entry per group `k = 1..=s`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibGradient {
    pub loss: f64,
    pub d_alpha: Vec<f64>,
    pub d_beta: Vec<f64>,
}

/// Precomputed column layout shared by every evaluation of one `StateLogits`.
pub(crate) struct Objective<'a> {
    logits: &'a StateLogits,
    groups: Vec<usize>,
    label_cols: Vec<usize>,
    penalty: Penalty,
}

impl<'a> Objective<'a> {
    pub(crate) fn new(logits: &'a StateLogits, penalty: Penalty) -> Self {
        Self {
            groups: logits.column_groups().iter().map(|g| g - 1).collect(),
            label_cols: logits.label_columns(),
            logits,
            penalty,
        }
    }

    fn check(&self, pairs: &[AffinePair]) -> Result<()> {
        let s = self.logits.state();
        if pairs.len() != s {
            return Err(Error::ShapeMismatch {
                what: "pairs per state",
                expected: s,
                found: pairs.len(),
            });
        }
        Ok(())
    }

    /// Per-sample cross-entropy of row `i`; writes the softmax into `q`.
    fn sample_loss(&self, i: usize, pairs: &[AffinePair], z: &mut [f64], q: &mut [f64]) -> f64 {
        let row = self.logits.scores().row(i);
        for ((zj, &o), &g) in z.iter_mut().zip(row).zip(&self.groups) {
            *zj = pairs[g].apply(o);
        }
        let log_norm = softmax_into(z, q);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let nll = max + log_norm - z[self.label_cols[i]];
        nll.min(-PROB_FLOOR.ln())
    }

    /// Regularized mean loss over the rows in `indices`.
    pub(crate) fn loss(&self, indices: &[usize], pairs: &[AffinePair]) -> f64 {
        let cols = self.logits.scores().cols();
        let mut z = vec![0.0; cols];
        let mut q = vec![0.0; cols];
        let total: f64 = indices
            .iter()
            .map(|&i| self.sample_loss(i, pairs, &mut z, &mut q))
            .sum();
        total / indices.len() as f64 + self.penalty.value(pairs)
    }

    pub(crate) fn loss_and_grad(&self, indices: &[usize], pairs: &[AffinePair]) -> CalibGradient {
        let s = pairs.len();
        let cols = self.logits.scores().cols();
        let mut z = vec![0.0; cols];
        let mut q = vec![0.0; cols];
        let mut d_alpha = vec![0.0; s];
        let mut d_beta = vec![0.0; s];
        let mut total = 0.0;
        for &i in indices {
            total += self.sample_loss(i, pairs, &mut z, &mut q);
            let row = self.logits.scores().row(i);
            let y = self.label_cols[i];
            for (j, (&qj, &o)) in q.iter().zip(row).enumerate() {
                let d = if j == y { qj - 1.0 } else { qj };
                let g = self.groups[j];
                d_alpha[g] += d * o;
                d_beta[g] += d;
            }
        }
        let n = indices.len() as f64;
        for (k, p) in pairs.iter().enumerate() {
            d_alpha[k] = d_alpha[k] / n + 2.0 * self.penalty.l2_alpha * (p.alpha - 1.0);
            d_beta[k] = d_beta[k] / n + 2.0 * self.penalty.l2_beta * p.beta;
        }
        CalibGradient {
            loss: total / n + self.penalty.value(pairs),
            d_alpha,
            d_beta,
        }
    }
}

/// Regularized mean loss of the whole set under `pairs`.
pub fn regularized_loss(logits: &StateLogits, pairs: &[AffinePair], penalty: Penalty) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::Empty("calibration batch"));
    }
    let obj = Objective::new(logits, penalty);
    obj.check(pairs)?;
    let all: Vec<usize> = (0..logits.len()).collect();
    Ok(obj.loss(&all, pairs))
}

/// Analytic gradient of the regularized mean loss with respect to every pair.
pub fn calib_gradient(
    batch: &StateLogits,
    pairs: &[AffinePair],
    penalty: Penalty,
) -> Result<CalibGradient> {
    if batch.is_empty() {
        return Err(Error::Empty("calibration batch"));
    }
    if !pairs.iter().all(AffinePair::is_finite) {
        return Err(Error::NonFinite("calibration parameters"));
    }
    let obj = Objective::new(batch, penalty);
    obj.check(pairs)?;
    let all: Vec<usize> = (0..batch.len()).collect();
    Ok(obj.loss_and_grad(&all, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{Provenance, ScoreMatrix, StateSchedule};

    /// One sample, columns `[a, b]` in groups 1 and 2, label 0.
    ///
    /// z = [alpha1 a + beta1, alpha2 b + beta2], q0 = 1 / (1 + e^{z1 - z0}),
    /// L = -ln q0, so dL/dz0 = q0 - 1 = -q1 and dL/dz1 = q1, giving
    /// dalpha1 = -q1 a, dbeta1 = -q1, dalpha2 = q1 b, dbeta2 = q1.
    #[test]
    fn hand_derived_two_class_gradient() {
        let (a, b) = (0.7, 1.9);
        let sched = StateSchedule::equal(2, 2).unwrap();
        let l = StateLogits::new(
            2,
            ScoreMatrix::from_rows(&[vec![a, b]]).unwrap(),
            vec![0],
            sched,
            Provenance::default(),
        )
        .unwrap();
        let pairs = [AffinePair::new(1.3, -0.2), AffinePair::new(0.6, 0.4)];
        let z0: f64 = 1.3 * a - 0.2;
        let z1: f64 = 0.6 * b + 0.4;
        let q1 = 1.0 / (1.0 + (z0 - z1).exp());
        let g = calib_gradient(&l, &pairs, Penalty::default()).unwrap();
        let expected_loss = (1.0 + (z1 - z0).exp()).ln();
        assert!((g.loss - expected_loss).abs() < 1e-14);
        assert!((g.d_alpha[0] + q1 * a).abs() < 1e-14);
        assert!((g.d_beta[0] + q1).abs() < 1e-14);
        assert!((g.d_alpha[1] - q1 * b).abs() < 1e-14);
        assert!((g.d_beta[1] - q1).abs() < 1e-14);

        // penalty contributes 2 lambda (alpha - 1) and 2 lambda beta
        let pen = Penalty {
            l2_alpha: 0.5,
            l2_beta: 0.25,
        };
        let gp = calib_gradient(&l, &pairs, pen).unwrap();
        assert!((gp.d_alpha[0] - g.d_alpha[0] - 2.0 * 0.5 * 0.3).abs() < 1e-14);
        assert!((gp.d_beta[1] - g.d_beta[1] - 2.0 * 0.25 * 0.4).abs() < 1e-14);
    }

    #[test]
    fn saturated_softmax_has_vanishing_gradient() {
        let sched = StateSchedule::equal(6, 3).unwrap();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|y| (0..6).map(|j| if j == y { 60.0 } else { 0.0 }).collect())
            .collect();
        let l = StateLogits::new(
            3,
            ScoreMatrix::from_rows(&rows).unwrap(),
            (0..6).collect(),
            sched,
            Provenance::default(),
        )
        .unwrap();
        let g = calib_gradient(&l, &[AffinePair::IDENTITY; 3], Penalty::default()).unwrap();
        assert!(g.d_alpha.iter().chain(&g.d_beta).all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn wrong_pair_count_is_rejected() {
        let sched = StateSchedule::equal(2, 2).unwrap();
        let l = StateLogits::new(
            2,
            ScoreMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap(),
            vec![1],
            sched,
            Provenance::default(),
        )
        .unwrap();
        assert!(calib_gradient(&l, &[AffinePair::IDENTITY], Penalty::default()).is_err());
    }
}
