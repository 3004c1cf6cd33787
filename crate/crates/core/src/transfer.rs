//! Transfer of calibration tables from reference runs to a target run.

use crate::calib::{apply_adbic, apply_pairs, AffinePair, CalibrationTable};
use crate::error::{Error, Result};
use crate::eval::{evaluate_scores, RunMetrics, StateEvaluation};
use crate::schedule::{StateLogits, StateSchedule};

/// Elementwise mean of tables sharing the same number of states.
///
/// Each entry is averaged over its sorted values, so the result does not
/// depend on the order of `tables` and equals the input for identical tables.
pub fn average_tables(tables: &[CalibrationTable]) -> Result<CalibrationTable> {
    let first = tables.first().ok_or(Error::Empty("calibration tables"))?;
    let num_states = first.num_states();
    if let Some(t) = tables.iter().find(|t| t.num_states() != num_states) {
        return Err(Error::ScheduleMismatch(format!(
            "cannot average tables with {} and {} states",
            num_states,
            t.num_states()
        )));
    }
    let mut out = CalibrationTable::identity(num_states)?;
    let mut alphas = Vec::with_capacity(tables.len());
    let mut betas = Vec::with_capacity(tables.len());
    for (s, k, _) in first.entries() {
        alphas.clear();
        betas.clear();
        for t in tables {
            let p = t.get(s, k)?;
            alphas.push(p.alpha);
            betas.push(p.beta);
        }
        out.set(s, k, AffinePair::new(sorted_mean(&mut alphas), sorted_mean(&mut betas)))?;
    }
    Ok(out)
}

fn sorted_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let anchor = values[0];
    let offset: f64 = values.iter().map(|v| v - anchor).sum();
    anchor + offset / values.len() as f64
}

/// Per-state evaluations of a target run plus aggregated metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub states: Vec<StateEvaluation>,
    pub metrics: RunMetrics,
}

impl TransferOutcome {
    fn from_states(states: Vec<StateEvaluation>) -> Result<Self> {
        let metrics = RunMetrics::from_states(&states)?;
        Ok(Self { states, metrics })
    }
}

/// Checks that `target` holds exactly states `1..=S` in order under one schedule.
fn check_sequence(target: &[StateLogits]) -> Result<&StateSchedule> {
    let first = target.first().ok_or(Error::Empty("target logits"))?;
    let schedule = first.schedule();
    if target.len() != schedule.num_states() {
        return Err(Error::ScheduleMismatch(format!(
            "expected logits for {} states, found {}",
            schedule.num_states(),
            target.len()
        )));
    }
    for (i, l) in target.iter().enumerate() {
        if l.schedule() != schedule {
            return Err(Error::ScheduleMismatch(format!(
                "logits for state {} use a different schedule",
                l.state()
            )));
        }
        if l.state() != i + 1 {
            return Err(Error::ScheduleMismatch(format!(
                "position {} holds state {}, expected {}",
                i,
                l.state(),
                i + 1
            )));
        }
    }
    Ok(schedule)
}

/// Evaluation without any correction.
pub fn evaluate_raw(target: &[StateLogits]) -> Result<TransferOutcome> {
    check_sequence(target)?;
    let states = target
        .iter()
        .map(|l| evaluate_scores(l, l.scores()))
        .collect::<Result<Vec<_>>>()?;
    TransferOutcome::from_states(states)
}

/// Corrects every state `s >= 2` with the table's row and predicts by argmax.
///
/// The softmax is strictly increasing, so the argmax is taken over the
/// corrected scores directly. State 1 is evaluated raw.
pub fn apply_transfer(target: &[StateLogits], table: &CalibrationTable) -> Result<TransferOutcome> {
    let schedule = check_sequence(target)?;
    if table.num_states() != schedule.num_states() {
        return Err(Error::ScheduleMismatch(format!(
            "table covers {} states, target has {}",
            table.num_states(),
            schedule.num_states()
        )));
    }
    let states = target
        .iter()
        .map(|l| {
            if l.state() == 1 {
                evaluate_scores(l, l.scores())
            } else {
                evaluate_scores(l, &apply_adbic(l, table)?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    TransferOutcome::from_states(states)
}

/// Per-state best reference table, chosen on the target's own evaluation labels.
///
/// An upper bound, not a deployable method.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    /// Chosen table index for each state; `None` for state 1.
    pub choices: Vec<Option<usize>>,
    pub outcome: TransferOutcome,
}

impl OracleOutcome {
    pub const DEPLOYABLE: bool = false;
}

/// Picks, for every state, the table row with the highest top-1 accuracy on
/// the target; ties go to the lowest table index.
pub fn oracle_select(tables: &[CalibrationTable], target: &[StateLogits]) -> Result<OracleOutcome> {
    if tables.is_empty() {
        return Err(Error::Empty("calibration tables"));
    }
    let schedule = check_sequence(target)?;
    if let Some(t) = tables.iter().find(|t| t.num_states() != schedule.num_states()) {
        return Err(Error::ScheduleMismatch(format!(
            "table covers {} states, target has {}",
            t.num_states(),
            schedule.num_states()
        )));
    }
    let mut choices = Vec::with_capacity(target.len());
    let mut states = Vec::with_capacity(target.len());
    for l in target {
        if l.state() == 1 {
            choices.push(None);
            states.push(evaluate_scores(l, l.scores())?);
            continue;
        }
        let mut best: Option<(usize, StateEvaluation)> = None;
        for (i, t) in tables.iter().enumerate() {
            let eval = evaluate_scores(l, &apply_pairs(l, t.row(l.state())?)?)?;
            if best
                .as_ref()
                .is_none_or(|(_, b)| eval.accuracy.overall > b.accuracy.overall)
            {
                best = Some((i, eval));
            }
        }
        let (i, eval) = best.expect("at least one table");
        choices.push(Some(i));
        states.push(eval);
    }
    Ok(OracleOutcome {
        choices,
        outcome: TransferOutcome::from_states(states)?,
    })
}

/// Floats needed to store a table for `S` states: `(S + 2)(S - 1)`.
pub fn param_count(num_states: usize) -> Result<usize> {
    if num_states < 2 {
        return Err(Error::InvalidConfig(format!(
            "parameter count needs S >= 2, got {num_states}"
        )));
    }
    Ok((num_states + 2) * (num_states - 1))
}
