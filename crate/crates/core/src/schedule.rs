//! Incremental protocol types: the state schedule, dense score matrices and
//! per-state logits.
//!
//! States and groups are 1-based throughout (state `s`, group `k` with
//! `1 <= k <= s`), class ids are 0-based. At state `s` the columns of a score
//! matrix are the classes of `N_s` in ascending class-id order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assignment of every class to the state in which it is first learned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct StateSchedule {
    class_to_state: Vec<usize>,
    classes_per_state: Vec<usize>,
}

impl StateSchedule {
    /// Builds a schedule from a class-id → first-state map.
    ///
    /// Every state in `1..=S` must own at least one class, which makes the
    /// cumulative class sets strictly growing.
    pub fn from_class_map(class_to_state: Vec<usize>) -> Result<Self> {
        if class_to_state.is_empty() {
            return Err(Error::InvalidSchedule("no classes".into()));
        }
        if let Some(c) = class_to_state.iter().position(|&s| s == 0) {
            return Err(Error::InvalidSchedule(format!(
                "class {c} assigned to state 0; states are 1-based"
            )));
        }
        let num_states = *class_to_state.iter().max().unwrap();
        let mut classes_per_state = vec![0usize; num_states];
        for &s in &class_to_state {
            classes_per_state[s - 1] += 1;
        }
        if let Some(empty) = classes_per_state.iter().position(|&n| n == 0) {
            return Err(Error::InvalidSchedule(format!(
                "state {} introduces no classes",
                empty + 1
            )));
        }
        Ok(Self {
            class_to_state,
            classes_per_state,
        })
    }

    /// Contiguous schedule: the first `sizes[0]` class ids form group 1, the
    /// next `sizes[1]` group 2, and so on.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidSchedule("zero states".into()));
        }
        if let Some(s) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidSchedule(format!(
                "state {} introduces no classes",
                s + 1
            )));
        }
        let map = sizes
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| std::iter::repeat_n(i + 1, n))
            .collect();
        Self::from_class_map(map)
    }

    /// Contiguous schedule with equal group sizes.
    pub fn equal(num_classes: usize, num_states: usize) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::InvalidSchedule("zero states".into()));
        }
        if num_classes % num_states != 0 {
            return Err(Error::InvalidSchedule(format!(
                "{num_classes} classes cannot be split evenly into {num_states} states"
            )));
        }
        Self::from_sizes(&vec![num_classes / num_states; num_states])
    }

    pub fn num_states(&self) -> usize {
        self.classes_per_state.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_to_state.len()
    }

    pub fn classes_per_state(&self) -> &[usize] {
        &self.classes_per_state
    }

    pub fn class_to_state(&self) -> &[usize] {
        &self.class_to_state
    }

    /// Group (first-seen state) of a class, if the class exists.
    pub fn group_of(&self, class: usize) -> Option<usize> {
        self.class_to_state.get(class).copied()
    }

    pub fn check_state(&self, state: usize) -> Result<()> {
        if state == 0 || state > self.num_states() {
            Err(Error::StateOutOfRange {
                state,
                num_states: self.num_states(),
            })
        } else {
            Ok(())
        }
    }

    /// Classes first seen in state `k`, ascending.
    pub fn group_classes(&self, k: usize) -> Vec<usize> {
        self.class_to_state
            .iter()
            .enumerate()
            .filter(|&(_, &g)| g == k)
            .map(|(c, _)| c)
            .collect()
    }

    /// `N_s`: classes seen up to and including state `s`, ascending.
    pub fn cumulative_classes(&self, s: usize) -> Vec<usize> {
        self.class_to_state
            .iter()
            .enumerate()
            .filter(|&(_, &g)| g <= s)
            .map(|(c, _)| c)
            .collect()
    }

    /// `|N_s|`.
    pub fn cumulative_len(&self, s: usize) -> usize {
        self.classes_per_state.iter().take(s).sum()
    }

    /// Group of every column of a state-`s` score matrix.
    pub fn column_groups(&self, s: usize) -> Vec<usize> {
        self.class_to_state
            .iter()
            .copied()
            .filter(|&g| g <= s)
            .collect()
    }

    /// Column index of `class` in a state-`s` score matrix.
    pub fn column_of(&self, s: usize, class: usize) -> Option<usize> {
        let g = self.group_of(class)?;
        if g > s {
            return None;
        }
        Some(
            self.class_to_state[..class]
                .iter()
                .filter(|&&g| g <= s)
                .count(),
        )
    }
}

impl TryFrom<Vec<usize>> for StateSchedule {
    type Error = Error;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Self::from_class_map(map)
    }
}

impl From<StateSchedule> for Vec<usize> {
    fn from(s: StateSchedule) -> Self {
        s.class_to_state
    }
}

/// Dense row-major matrix of `f64` scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                what: "score matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    what: "score matrix row",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix has no meaningful rows anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Column index of the largest entry of each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.iter_rows().map(argmax).collect()
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Where a set of logits came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub backbone: String,
    pub seed: u64,
}

/// Raw scores `o_s` of an evaluation set at state `s`, over all classes of `N_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLogits {
    state: usize,
    scores: ScoreMatrix,
    labels: Vec<usize>,
    schedule: StateSchedule,
    provenance: Provenance,
}

impl StateLogits {
    pub fn new(
        state: usize,
        scores: ScoreMatrix,
        labels: Vec<usize>,
        schedule: StateSchedule,
        provenance: Provenance,
    ) -> Result<Self> {
        schedule.check_state(state)?;
        let expected_cols = schedule.cumulative_len(state);
        if scores.cols() != expected_cols {
            return Err(Error::ShapeMismatch {
                what: "logit columns vs |N_s|",
                expected: expected_cols,
                found: scores.cols(),
            });
        }
        if labels.len() != scores.rows() {
            return Err(Error::ShapeMismatch {
                what: "label count vs logit rows",
                expected: scores.rows(),
                found: labels.len(),
            });
        }
        if let Some(&label) = labels
            .iter()
            .find(|&&y| schedule.group_of(y).is_none_or(|g| g > state))
        {
            return Err(Error::LabelOutOfRange { label, state });
        }
        if !scores.is_finite() {
            return Err(Error::NonFinite("logits"));
        }
        Ok(Self {
            state,
            scores,
            labels,
            schedule,
            provenance,
        })
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn schedule(&self) -> &StateSchedule {
        &self.schedule
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Column index of each label.
    pub fn label_columns(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|&y| self.schedule.column_of(self.state, y).expect("validated label"))
            .collect()
    }

    /// Group of each column.
    pub fn column_groups(&self) -> Vec<usize> {
        self.schedule.column_groups(self.state)
    }

    /// Rows selected by index, keeping state, schedule and provenance.
    pub fn select(&self, indices: &[usize]) -> Self {
        let cols = self.scores.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.scores.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            state: self.state,
            scores: ScoreMatrix {
                rows: indices.len(),
                cols,
                data,
            },
            labels,
            schedule: self.schedule.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Class id predicted by argmax over the given state-`s` scores.
    pub fn columns_to_classes(&self, columns: &[usize]) -> Vec<usize> {
        let classes = self.schedule.cumulative_classes(self.state);
        columns.iter().map(|&c| classes[c]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_split_groups_of_four() {
        let s = StateSchedule::equal(20, 5).unwrap();
        assert_eq!(s.classes_per_state(), &[4, 4, 4, 4, 4]);
        assert_eq!(s.group_classes(2), vec![4, 5, 6, 7]);
        assert_eq!(s.cumulative_len(3), 12);
    }

    #[test]
    fn indivisible_split_is_rejected() {
        assert!(matches!(
            StateSchedule::equal(10, 3),
            Err(Error::InvalidSchedule(_))
        ));
    }

    #[test]
    fn non_contiguous_map_columns() {
        // classes 0,2 in group 1; 1,3 in group 2
        let s = StateSchedule::from_class_map(vec![1, 2, 1, 2]).unwrap();
        assert_eq!(s.cumulative_classes(1), vec![0, 2]);
        assert_eq!(s.column_of(1, 2), Some(1));
        assert_eq!(s.column_of(1, 1), None);
        assert_eq!(s.column_of(2, 2), Some(2));
        assert_eq!(s.column_groups(2), vec![1, 2, 1, 2]);
    }

    #[test]
    fn empty_state_is_rejected() {
        assert!(StateSchedule::from_class_map(vec![1, 3]).is_err());
        assert!(StateSchedule::from_class_map(vec![0, 1]).is_err());
    }

    #[test]
    fn logits_validation() {
        let sched = StateSchedule::equal(4, 2).unwrap();
        let m = ScoreMatrix::zeros(2, 2);
        assert!(StateLogits::new(1, m.clone(), vec![0, 1], sched.clone(), Provenance::default()).is_ok());
        assert!(matches!(
            StateLogits::new(1, m.clone(), vec![0, 2], sched.clone(), Provenance::default()),
            Err(Error::LabelOutOfRange { label: 2, state: 1 })
        ));
        assert!(matches!(
            StateLogits::new(2, m, vec![0, 1], sched.clone(), Provenance::default()),
            Err(Error::ShapeMismatch { .. })
        ));
        let bad = ScoreMatrix::new(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(
            StateLogits::new(1, bad, vec![0], sched, Provenance::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }
}
