//! Bias-correction layers and their fitting.
//!
//! A correction at state `s` is a list of affine pairs `(alpha_s^k, beta_s^k)`,
//! one per group `k <= s`, applied to the columns of the classes first seen in
//! state `k`. BiC is the special case where only the newest group is touched.

mod adam;
mod fit;
mod objective;

pub use adam::Adam;
pub use fit::{fit_all_states, fit_state_params, CalibrationFit, StateFit};
pub use objective::{calib_gradient, regularized_loss, CalibGradient, Penalty};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{ScoreMatrix, StateLogits};

/// Smallest probability fed to the log in the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// One `(alpha, beta)` scale/shift pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinePair {
    pub alpha: f64,
    pub beta: f64,
}

impl AffinePair {
    pub const IDENTITY: AffinePair = AffinePair {
        alpha: 1.0,
        beta: 0.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    #[inline]
    pub fn apply(&self, score: f64) -> f64 {
        self.alpha * score + self.beta
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite()
    }
}

impl Default for AffinePair {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Triangular bank of pairs for states `2..=S`: row `s` holds `s` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    num_states: usize,
    rows: Vec<Vec<AffinePair>>,
}

impl CalibrationTable {
    /// All pairs at `(1, 0)`.
    pub fn identity(num_states: usize) -> Result<Self> {
        if num_states < 2 {
            return Err(Error::InvalidConfig(format!(
                "a calibration table needs at least 2 states, got {num_states}"
            )));
        }
        let rows = (2..=num_states)
            .map(|s| vec![AffinePair::IDENTITY; s])
            .collect();
        Ok(Self { num_states, rows })
    }

    /// Builds a table from rows for states `2..=S` in order.
    pub fn from_rows(rows: Vec<Vec<AffinePair>>) -> Result<Self> {
        let num_states = rows.len() + 1;
        if num_states < 2 {
            return Err(Error::InvalidConfig("a calibration table needs at least 2 states".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            let s = i + 2;
            if row.len() != s {
                return Err(Error::ShapeMismatch {
                    what: "calibration table row",
                    expected: s,
                    found: row.len(),
                });
            }
            if !row.iter().all(AffinePair::is_finite) {
                return Err(Error::NonFinite("calibration table"));
            }
        }
        Ok(Self { num_states, rows })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// Number of stored pairs, `2 + 3 + ... + S`.
    pub fn num_pairs(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Number of stored floats.
    pub fn num_scalars(&self) -> usize {
        2 * self.num_pairs()
    }

    /// Pairs for state `s`, indexed by `k - 1`.
    pub fn row(&self, s: usize) -> Result<&[AffinePair]> {
        if s < 2 || s > self.num_states {
            return Err(Error::MissingEntry { s, k: 1 });
        }
        Ok(&self.rows[s - 2])
    }

    pub fn get(&self, s: usize, k: usize) -> Result<AffinePair> {
        let row = self.row(s).map_err(|_| Error::MissingEntry { s, k })?;
        if k == 0 || k > s {
            return Err(Error::MissingEntry { s, k });
        }
        Ok(row[k - 1])
    }

    pub fn set(&mut self, s: usize, k: usize, pair: AffinePair) -> Result<()> {
        if s < 2 || s > self.num_states || k == 0 || k > s {
            return Err(Error::MissingEntry { s, k });
        }
        if !pair.is_finite() {
            return Err(Error::NonFinite("calibration pair"));
        }
        self.rows[s - 2][k - 1] = pair;
        Ok(())
    }

    pub fn set_row(&mut self, s: usize, pairs: Vec<AffinePair>) -> Result<()> {
        if s < 2 || s > self.num_states {
            return Err(Error::MissingEntry { s, k: 1 });
        }
        if pairs.len() != s {
            return Err(Error::ShapeMismatch {
                what: "calibration table row",
                expected: s,
                found: pairs.len(),
            });
        }
        if !pairs.iter().all(AffinePair::is_finite) {
            return Err(Error::NonFinite("calibration pair"));
        }
        self.rows[s - 2] = pairs;
        Ok(())
    }

    /// `(s, k, pair)` for every entry, ordered by `s` then `k`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, AffinePair)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &p)| (i + 2, j + 1, p)))
    }

    /// BiC collapse: keeps only `(alpha_s^s, beta_s^s)` per state and resets
    /// every past-group pair to identity.
    pub fn newest_only(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut out = vec![AffinePair::IDENTITY; row.len()];
                *out.last_mut().unwrap() = *row.last().unwrap();
                out
            })
            .collect();
        Self {
            num_states: self.num_states,
            rows,
        }
    }
}

/// Calibration optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_alpha: f64,
    pub l2_beta: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1e-3,
            l2_alpha: 5e-3,
            l2_beta: 5e-2,
            batch_size: 128,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.l2_alpha >= 0.0 && self.l2_beta >= 0.0) {
            return bad("L2 penalties must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        Ok(())
    }

    pub fn penalty(&self) -> Penalty {
        Penalty {
            l2_alpha: self.l2_alpha,
            l2_beta: self.l2_beta,
        }
    }
}

/// BiC: scales and shifts the newest group's columns, leaves the rest untouched.
pub fn apply_bic(logits: &StateLogits, alpha: f64, beta: f64) -> Result<ScoreMatrix> {
    let s = logits.state();
    if s < 2 {
        return Err(Error::InitialState(s));
    }
    if !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::NonFinite("BiC parameters"));
    }
    let pair = AffinePair::new(alpha, beta);
    let groups = logits.column_groups();
    let mut out = logits.scores().clone();
    for i in 0..out.rows() {
        for (v, &g) in out.row_mut(i).iter_mut().zip(&groups) {
            if g == s {
                *v = pair.apply(*v);
            }
        }
    }
    Ok(out)
}

/// adBiC with the table's row for the logits' state.
pub fn apply_adbic(logits: &StateLogits, table: &CalibrationTable) -> Result<ScoreMatrix> {
    let s = logits.state();
    if s < 2 {
        return Err(Error::InitialState(s));
    }
    if table.num_states() != logits.schedule().num_states() {
        return Err(Error::ScheduleMismatch(format!(
            "table has {} states, logits schedule has {}",
            table.num_states(),
            logits.schedule().num_states()
        )));
    }
    apply_pairs(logits, table.row(s)?)
}

/// adBiC with an explicit row of `s` pairs.
pub fn apply_pairs(logits: &StateLogits, pairs: &[AffinePair]) -> Result<ScoreMatrix> {
    let s = logits.state();
    if pairs.len() != s {
        return Err(Error::ShapeMismatch {
            what: "pairs per state",
            expected: s,
            found: pairs.len(),
        });
    }
    if !pairs.iter().all(AffinePair::is_finite) {
        return Err(Error::NonFinite("adBiC parameters"));
    }
    let groups = logits.column_groups();
    let mut out = logits.scores().clone();
    for i in 0..out.rows() {
        for (v, &g) in out.row_mut(i).iter_mut().zip(&groups) {
            *v = pairs[g - 1].apply(*v);
        }
    }
    Ok(out)
}

/// Softmax with max subtraction.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    if !scores.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut out = vec![0.0; scores.len()];
    softmax_into(scores, &mut out);
    Ok(out)
}

/// Writes `softmax(scores)` into `out` and returns `ln(sum(exp(scores - max)))`.
pub(crate) fn softmax_into(scores: &[f64], out: &mut [f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(scores) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum.ln()
}

/// `-ln q[y]`, with `q[y]` floored at [`PROB_FLOOR`].
pub fn cross_entropy(q: &[f64], y: usize) -> Result<f64> {
    if q.is_empty() {
        return Err(Error::Empty("probability vector"));
    }
    let p = *q.get(y).ok_or(Error::ShapeMismatch {
        what: "target index vs probability vector",
        expected: q.len(),
        found: y,
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}
