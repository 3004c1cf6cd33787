use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::objective::Objective;
use super::{Adam, AffinePair, CalibConfig, CalibrationTable};
use crate::error::{Error, Result};
use crate::schedule::StateLogits;

/// Outcome of fitting one state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFit {
    pub state: usize,
    pub pairs: Vec<AffinePair>,
    /// Regularized loss at the identity initialization.
    pub initial_loss: f64,
    /// Regularized loss at the returned pairs.
    pub final_loss: f64,
}

/// A fitted table plus the per-state fit records.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    pub table: CalibrationTable,
    pub fits: Vec<StateFit>,
}

/// Fits `(alpha_s^k, beta_s^k)` for `k = 1..=s` on validation logits of state `s`.
///
/// Starts from the identity, runs `config.epochs` shuffled mini-batch passes of
/// Adam and returns the pairs with the lowest full-set regularized loss seen at
/// an epoch boundary (the identity included). Shuffling is seeded by
/// `(config.seed, s)` so states can be fitted in any order.
pub fn fit_state_params(val_logits: &StateLogits, config: &CalibConfig) -> Result<StateFit> {
    config.validate()?;
    let s = val_logits.state();
    if s < 2 {
        return Err(Error::InitialState(s));
    }
    let mut present = vec![false; s];
    for &y in val_logits.labels() {
        present[val_logits.schedule().group_of(y).expect("validated label") - 1] = true;
    }
    let missing: Vec<usize> = (1..=s).filter(|k| !present[k - 1]).collect();
    if !missing.is_empty() {
        return Err(Error::MissingGroups {
            state: s,
            groups: missing,
        });
    }

    let objective = Objective::new(val_logits, config.penalty());
    let n = val_logits.len();
    let all: Vec<usize> = (0..n).collect();

    // params = [alpha_1..alpha_s, beta_1..beta_s]
    let mut params: Vec<f64> = std::iter::repeat_n(1.0, s)
        .chain(std::iter::repeat_n(0.0, s))
        .collect();
    let to_pairs = |p: &[f64]| -> Vec<AffinePair> {
        (0..s).map(|k| AffinePair::new(p[k], p[s + k])).collect()
    };

    let initial_pairs = to_pairs(&params);
    let initial_loss = objective.loss(&all, &initial_pairs);
    let mut best_pairs = initial_pairs;
    let mut best_loss = initial_loss;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(s as u64);
    let mut adam = Adam::new(
        2 * s,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let mut order = all.clone();
    let mut grad = vec![0.0; 2 * s];
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let g = objective.loss_and_grad(batch, &to_pairs(&params));
            grad[..s].copy_from_slice(&g.d_alpha);
            grad[s..].copy_from_slice(&g.d_beta);
            adam.step(&mut params, &grad);
        }
        let pairs = to_pairs(&params);
        if !pairs.iter().all(AffinePair::is_finite) {
            return Err(Error::NonFinite("calibration parameters during fit"));
        }
        let loss = objective.loss(&all, &pairs);
        if loss < best_loss {
            best_loss = loss;
            best_pairs = pairs;
        }
    }

    Ok(StateFit {
        state: s,
        pairs: best_pairs,
        initial_loss,
        final_loss: best_loss,
    })
}

/// Fits every state `2..=S` independently and assembles the table.
///
/// Logits may arrive in any order; state-1 logits, if present, are skipped
/// since no correction exists there.
pub fn fit_all_states(per_state: &[StateLogits], config: &CalibConfig) -> Result<CalibrationFit> {
    let first = per_state.first().ok_or(Error::Empty("per-state validation logits"))?;
    let schedule = first.schedule();
    let num_states = schedule.num_states();
    let mut by_state: Vec<Option<&StateLogits>> = vec![None; num_states + 1];
    for l in per_state {
        if l.schedule() != schedule {
            return Err(Error::ScheduleMismatch(format!(
                "logits for state {} use a different schedule",
                l.state()
            )));
        }
        if l.state() == 1 {
            continue;
        }
        if by_state[l.state()].replace(l).is_some() {
            return Err(Error::DuplicateState(l.state()));
        }
    }
    let mut table = CalibrationTable::identity(num_states)?;
    let mut fits = Vec::with_capacity(num_states - 1);
    for s in 2..=num_states {
        let logits = by_state[s].ok_or(Error::MissingState(s))?;
        let fit = fit_state_params(logits, config)?;
        table.set_row(s, fit.pairs.clone())?;
        fits.push(fit);
    }
    Ok(CalibrationFit { table, fits })
}
