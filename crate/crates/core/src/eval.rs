//! Accuracy metrics and score diagnostics.
//!
//! Accuracies are fractions in `[0, 1]`. Standard deviations are population
//! standard deviations.

use crate::error::{Error, Result};
use crate::schedule::{ScoreMatrix, StateLogits, StateSchedule};

/// Top-1 accuracy at one state, overall and per class group.
#[derive(Debug, Clone, PartialEq)]
pub struct StateAccuracy {
    pub state: usize,
    pub overall: f64,
    /// Indexed by `k - 1`; `None` when no evaluated sample belongs to group `k`.
    pub per_group: Vec<Option<f64>>,
    pub group_counts: Vec<usize>,
}

/// Accuracy of class-id predictions against labels at `state`.
pub fn per_state_accuracy(
    predictions: &[usize],
    labels: &[usize],
    schedule: &StateSchedule,
    state: usize,
) -> Result<StateAccuracy> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            what: "predictions vs labels",
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("evaluation labels"));
    }
    schedule.check_state(state)?;
    let mut correct = vec![0usize; state];
    let mut counts = vec![0usize; state];
    for (&p, &y) in predictions.iter().zip(labels) {
        let g = match schedule.group_of(y) {
            Some(g) if g <= state => g,
            _ => return Err(Error::LabelOutOfRange { label: y, state }),
        };
        counts[g - 1] += 1;
        if p == y {
            correct[g - 1] += 1;
        }
    }
    let total_correct: usize = correct.iter().sum();
    let per_group = correct
        .iter()
        .zip(&counts)
        .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
        .collect();
    Ok(StateAccuracy {
        state,
        overall: total_correct as f64 / labels.len() as f64,
        per_group,
        group_counts: counts,
    })
}

/// Mean accuracy over states `2..=S`; the first, non-incremental state is discarded.
pub fn avg_incremental_accuracy(per_state: &[f64]) -> Result<f64> {
    if per_state.len() < 2 {
        return Err(Error::InvalidConfig(
            "average incremental accuracy needs at least 2 states".into(),
        ));
    }
    let tail = &per_state[1..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupScoreStats {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population std of all entries in each group's columns.
pub fn mean_scores_by_group(scores: &ScoreMatrix, column_groups: &[usize], state: usize) -> Vec<GroupScoreStats> {
    let mut sum = vec![0.0; state];
    let mut count = vec![0usize; state];
    for row in scores.iter_rows() {
        for (&v, &g) in row.iter().zip(column_groups) {
            sum[g - 1] += v;
            count[g - 1] += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    let mut sq = vec![0.0; state];
    for row in scores.iter_rows() {
        for (&v, &g) in row.iter().zip(column_groups) {
            sq[g - 1] += (v - mean[g - 1]).powi(2);
        }
    }
    mean.iter()
        .zip(sq.iter().zip(&count))
        .map(|(&m, (&q, &n))| GroupScoreStats {
            mean: m,
            std: (q / n as f64).sqrt(),
        })
        .collect()
}

/// [`mean_scores_by_group`] over raw logits.
pub fn logit_score_stats(logits: &StateLogits) -> Vec<GroupScoreStats> {
    mean_scores_by_group(logits.scores(), &logits.column_groups(), logits.state())
}

/// Spread between the largest and smallest group mean.
pub fn group_mean_spread(stats: &[GroupScoreStats]) -> f64 {
    let max = stats.iter().map(|s| s.mean).fold(f64::NEG_INFINITY, f64::max);
    let min = stats.iter().map(|s| s.mean).fold(f64::INFINITY, f64::min);
    max - min
}

/// Lower-triangular group-accuracy matrix: row `s` holds groups `1..=s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    /// Row `s - 1` must hold exactly `s` entries.
    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("accuracy matrix"));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != i + 1 {
                return Err(Error::ShapeMismatch {
                    what: "accuracy matrix row",
                    expected: i + 1,
                    found: r.len(),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    /// Entry `(s, k)`; `None` above the diagonal or for empty groups.
    pub fn get(&self, s: usize, k: usize) -> Option<f64> {
        if k == 0 || k > s {
            return None;
        }
        self.rows.get(s - 1)?.get(k - 1).copied().flatten()
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    /// CSV with a `state` column and one column per group; cells above the
    /// diagonal and empty groups are left blank.
    pub fn to_csv(&self) -> String {
        let n = self.rows.len();
        let mut out = String::from("state");
        for k in 1..=n {
            out.push_str(&format!(",k{k}"));
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&(i + 1).to_string());
            for k in 0..n {
                out.push(',');
                if let Some(Some(v)) = row.get(k) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Stacks per-state group accuracies (states `1..=S`, in order) into a matrix.
pub fn accuracy_matrix(states: &[StateAccuracy]) -> Result<AccuracyMatrix> {
    if states.is_empty() {
        return Err(Error::Empty("per-state accuracies"));
    }
    let mut rows = Vec::with_capacity(states.len());
    for (i, st) in states.iter().enumerate() {
        if st.state != i + 1 || st.per_group.len() != st.state {
            return Err(Error::ScheduleMismatch(format!(
                "expected state {} with {} groups, found state {} with {}",
                i + 1,
                i + 1,
                st.state,
                st.per_group.len()
            )));
        }
        rows.push(st.per_group.clone());
    }
    Ok(AccuracyMatrix { rows })
}

/// Accuracy plus score diagnostics for one evaluated state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEvaluation {
    pub accuracy: StateAccuracy,
    pub score_stats: Vec<GroupScoreStats>,
    /// Predicted class ids.
    pub predictions: Vec<usize>,
}

/// Evaluates `scores` (raw or corrected, laid out like `logits`) by row argmax.
pub fn evaluate_scores(logits: &StateLogits, scores: &ScoreMatrix) -> Result<StateEvaluation> {
    if scores.rows() != logits.len() || scores.cols() != logits.scores().cols() {
        return Err(Error::ShapeMismatch {
            what: "scores vs logits layout",
            expected: logits.len() * logits.scores().cols(),
            found: scores.rows() * scores.cols(),
        });
    }
    let predictions = logits.columns_to_classes(&scores.argmax_rows());
    let accuracy = per_state_accuracy(&predictions, logits.labels(), logits.schedule(), logits.state())?;
    let score_stats = mean_scores_by_group(scores, &logits.column_groups(), logits.state());
    Ok(StateEvaluation {
        accuracy,
        score_stats,
        predictions,
    })
}

/// Metrics of a whole incremental run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub state_accuracy: Vec<f64>,
    pub group_accuracy: AccuracyMatrix,
    /// `score_stats[s - 1][k - 1]`.
    pub score_stats: Vec<Vec<GroupScoreStats>>,
    /// `None` for single-state runs.
    pub avg_incremental_accuracy: Option<f64>,
}

impl RunMetrics {
    pub fn from_states(states: &[StateEvaluation]) -> Result<Self> {
        let accs: Vec<StateAccuracy> = states.iter().map(|e| e.accuracy.clone()).collect();
        let group_accuracy = accuracy_matrix(&accs)?;
        let state_accuracy: Vec<f64> = accs.iter().map(|a| a.overall).collect();
        let avg = (state_accuracy.len() >= 2)
            .then(|| avg_incremental_accuracy(&state_accuracy))
            .transpose()?;
        Ok(Self {
            state_accuracy,
            group_accuracy,
            score_stats: states.iter().map(|e| e.score_stats.clone()).collect(),
            avg_incremental_accuracy: avg,
        })
    }

    pub fn num_states(&self) -> usize {
        self.state_accuracy.len()
    }
}
