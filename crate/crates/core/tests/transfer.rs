mod common;

use calib_il::calib::apply_bic;
use calib_il::eval::{evaluate_scores, RunMetrics};
use calib_il::transfer::*;
use calib_il::{CalibrationTable, StateLogits, StateSchedule};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(seed: u64, num_states: usize, per_state: usize) -> Vec<StateLogits> {
    let schedule = StateSchedule::equal(per_state * num_states, num_states).unwrap();
    (1..=num_states)
        .map(|s| biased_logits(seed * 100 + s as u64, &schedule, s, 30 * s, 1.5))
        .collect()
}

fn metric_bits(m: &RunMetrics) -> Vec<u64> {
    let mut out: Vec<u64> = m.state_accuracy.iter().map(|v| v.to_bits()).collect();
    for row in m.group_accuracy.rows() {
        out.extend(row.iter().map(|v| v.map_or(u64::MAX, f64::to_bits)));
    }
    out.extend(m.avg_incremental_accuracy.map(f64::to_bits));
    out
}

#[test]
fn identity_transfer_is_bit_identical_to_raw() {
    for num_states in [2, 5, 10] {
        let target = run(num_states as u64, num_states, 2);
        let raw = evaluate_raw(&target).unwrap();
        let id = apply_transfer(&target, &CalibrationTable::identity(num_states).unwrap()).unwrap();
        assert_eq!(metric_bits(&raw.metrics), metric_bits(&id.metrics));
        for (a, b) in raw.states.iter().zip(&id.states) {
            assert_eq!(a.predictions, b.predictions);
        }
    }
}

#[test]
fn collapsed_table_matches_per_state_bic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = run(1, 5, 3);
    let table = random_table(&mut rng, 5).newest_only();
    let via_table = apply_transfer(&target, &table).unwrap();
    for l in &target[1..] {
        let pair = table.get(l.state(), l.state()).unwrap();
        let direct = evaluate_scores(l, &apply_bic(l, pair.alpha, pair.beta).unwrap()).unwrap();
        assert_eq!(direct, via_table.states[l.state() - 1]);
    }
}

#[test]
fn oracle_dominates_every_single_table_per_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..5 {
        let target = run(seed, 5, 2);
        let tables: Vec<CalibrationTable> = (0..6).map(|_| random_table(&mut rng, 5)).collect();
        let oracle = oracle_select(&tables, &target).unwrap();
        assert!(!OracleOutcome::DEPLOYABLE);
        assert_eq!(oracle.choices[0], None);
        for t in &tables {
            let single = apply_transfer(&target, t).unwrap();
            for (o, s) in oracle
                .outcome
                .metrics
                .state_accuracy
                .iter()
                .zip(&single.metrics.state_accuracy)
            {
                assert!(o >= s);
            }
        }
    }
}

#[test]
fn transfer_rejects_broken_sequences() {
    let target = run(2, 3, 2);
    let table = CalibrationTable::identity(4).unwrap();
    assert!(apply_transfer(&target, &table).is_err());
    assert!(evaluate_raw(&target[1..]).is_err());
    let swapped = vec![target[1].clone(), target[0].clone(), target[2].clone()];
    assert!(evaluate_raw(&swapped).is_err());
}

#[test]
fn parameter_counts() {
    assert_eq!(param_count(5).unwrap(), 28);
    assert_eq!(param_count(10).unwrap(), 108);
    assert_eq!(param_count(20).unwrap(), 418);
    for s in 2..30 {
        assert_eq!(CalibrationTable::identity(s).unwrap().num_scalars(), param_count(s).unwrap());
    }
    assert!(param_count(1).is_err());
}
