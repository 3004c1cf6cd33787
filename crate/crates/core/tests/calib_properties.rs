mod common;

use calib_il::calib::{
    apply_adbic, apply_bic, apply_pairs, calib_gradient, fit_all_states, fit_state_params, regularized_loss, softmax,
    Penalty,
};
use calib_il::schedule::argmax;
use calib_il::transfer::average_tables;
use calib_il::{AffinePair, CalibConfig, CalibrationTable, ScoreMatrix, StateLogits};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PENALTY: Penalty = Penalty {
    l2_alpha: 5e-3,
    l2_beta: 5e-2,
};

fn instance(seed: u64) -> (ChaCha8Rng, StateLogits) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_states = rng.random_range(2..=6);
    let schedule = random_schedule(&mut rng, num_states);
    let s = rng.random_range(2..=num_states);
    let n = rng.random_range(1..=24);
    let logits = random_logits(&mut rng, &schedule, s, n, 6.0);
    (rng, logits)
}

fn bits(m: &ScoreMatrix) -> Vec<u64> {
    m.as_slice().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_table_leaves_scores_bit_identical(seed in any::<u64>()) {
        let (_, logits) = instance(seed);
        let table = CalibrationTable::identity(logits.schedule().num_states()).unwrap();
        let corrected = apply_adbic(&logits, &table).unwrap();
        prop_assert_eq!(bits(&corrected), bits(logits.scores()));
    }

    #[test]
    fn adbic_with_identity_past_equals_bic(seed in any::<u64>()) {
        let (mut rng, logits) = instance(seed);
        let s = logits.state();
        let (a, b) = (rng.random_range(0.1..3.0), rng.random_range(-2.0..2.0));
        let mut pairs = vec![AffinePair::IDENTITY; s];
        pairs[s - 1] = AffinePair::new(a, b);
        let ad = apply_pairs(&logits, &pairs).unwrap();
        let bic = apply_bic(&logits, a, b).unwrap();
        for (x, y) in ad.as_slice().iter().zip(bic.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(values in prop::collection::vec(-30.0f64..30.0, 1..12), c in -100.0f64..100.0) {
        let p = softmax(&values).unwrap();
        let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
        let q = softmax(&shifted).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in p.iter().zip(&q) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_preserves_argmax(values in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let p = softmax(&values).unwrap();
        prop_assert_eq!(values[argmax(&p)], values[argmax(&values)]);
    }

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>()) {
        let (mut rng, logits) = instance(seed);
        let s = logits.state();
        let pairs = random_pairs(&mut rng, s);
        let g = calib_gradient(&logits, &pairs, PENALTY).unwrap();
        let h = 1e-5;
        for k in 0..s {
            for which in 0..2 {
                let eval = |delta: f64| {
                    let mut p = pairs.clone();
                    if which == 0 { p[k].alpha += delta } else { p[k].beta += delta }
                    regularized_loss(&logits, &p, PENALTY).unwrap()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = if which == 0 { g.d_alpha[k] } else { g.d_beta[k] };
                let scale = numeric.abs().max(analytic.abs());
                prop_assert!(
                    (numeric - analytic).abs() <= 1e-4 * scale + 1e-9,
                    "k={} which={} analytic={} numeric={}", k, which, analytic, numeric
                );
            }
        }
    }

    #[test]
    fn regularized_loss_is_convex(seed in any::<u64>(), t in 0.0f64..1.0) {
        let (mut rng, logits) = instance(seed);
        let s = logits.state();
        let a = random_pairs(&mut rng, s);
        let b = random_pairs(&mut rng, s);
        let mix: Vec<AffinePair> = a.iter().zip(&b).map(|(x, y)| AffinePair::new(
            (1.0 - t) * x.alpha + t * y.alpha,
            (1.0 - t) * x.beta + t * y.beta,
        )).collect();
        let la = regularized_loss(&logits, &a, PENALTY).unwrap();
        let lb = regularized_loss(&logits, &b, PENALTY).unwrap();
        let lm = regularized_loss(&logits, &mix, PENALTY).unwrap();
        prop_assert!(lm <= (1.0 - t) * la + t * lb + 1e-9);
    }

    #[test]
    fn averaging_is_permutation_invariant(seed in any::<u64>(), count in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let num_states = rng.random_range(2..=6);
        let tables: Vec<CalibrationTable> = (0..count).map(|_| random_table(&mut rng, num_states)).collect();
        let mut shuffled = tables.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let a = average_tables(&tables).unwrap();
        let b = average_tables(&shuffled).unwrap();
        for ((_, _, x), (_, _, y)) in a.entries().zip(b.entries()) {
            prop_assert_eq!(x.alpha.to_bits(), y.alpha.to_bits());
            prop_assert_eq!(x.beta.to_bits(), y.beta.to_bits());
        }
        let same = average_tables(&vec![tables[0].clone(); count]).unwrap();
        prop_assert_eq!(same, tables[0].clone());
    }

    #[test]
    fn duplicating_every_sample_keeps_the_loss(seed in any::<u64>()) {
        let (mut rng, logits) = instance(seed);
        let pairs = random_pairs(&mut rng, logits.state());
        let doubled: Vec<usize> = (0..logits.len()).chain(0..logits.len()).collect();
        let twice = logits.select(&doubled);
        let a = regularized_loss(&logits, &pairs, PENALTY).unwrap();
        let b = regularized_loss(&twice, &pairs, PENALTY).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

fn small_fit_config() -> CalibConfig {
    CalibConfig {
        epochs: 40,
        learning_rate: 1e-2,
        batch_size: 16,
        ..CalibConfig::default()
    }
}

#[test]
fn fit_never_ends_above_the_identity_and_is_deterministic() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schedule = random_schedule(&mut rng, 4);
        let logits = biased_logits(seed, &schedule, 4, 60, 1.0);
        let config = CalibConfig { seed, ..small_fit_config() };
        let a = fit_state_params(&logits, &config).unwrap();
        let b = fit_state_params(&logits, &config).unwrap();
        assert_eq!(a, b);
        assert!(a.final_loss <= a.initial_loss);
        let identity = regularized_loss(&logits, &vec![AffinePair::IDENTITY; 4], config.penalty()).unwrap();
        assert_eq!(a.initial_loss, identity);
        assert_eq!(a.final_loss, regularized_loss(&logits, &a.pairs, config.penalty()).unwrap());
    }
}

#[test]
fn fit_moves_toward_the_bias_it_should_cancel() {
    let schedule = calib_il::StateSchedule::equal(6, 3).unwrap();
    let logits = biased_logits(5, &schedule, 3, 300, 2.0);
    let fit = fit_state_params(&logits, &small_fit_config()).unwrap();
    let newest = fit.pairs[2];
    assert!(newest.beta < 0.0 || newest.alpha < 1.0, "{newest:?}");
    assert!(fit.final_loss < fit.initial_loss - 1e-3);
}

#[test]
fn huge_penalty_pins_the_identity() {
    let schedule = calib_il::StateSchedule::equal(6, 3).unwrap();
    let logits = biased_logits(2, &schedule, 3, 120, 1.5);
    let config = CalibConfig {
        l2_alpha: 1e6,
        l2_beta: 1e6,
        ..small_fit_config()
    };
    let fit = fit_state_params(&logits, &config).unwrap();
    for p in &fit.pairs {
        assert!((p.alpha - 1.0).abs() < 1e-3 && p.beta.abs() < 1e-3, "{p:?}");
    }
}

#[test]
fn fitting_states_in_any_order_gives_the_same_table() {
    let schedule = calib_il::StateSchedule::equal(8, 4).unwrap();
    let states: Vec<StateLogits> = (1..=4).map(|s| biased_logits(s as u64, &schedule, s, 40, 1.0)).collect();
    let mut reversed = states.clone();
    reversed.reverse();
    let a = fit_all_states(&states, &small_fit_config()).unwrap();
    let b = fit_all_states(&reversed, &small_fit_config()).unwrap();
    assert_eq!(a.table, b.table);
    assert_eq!(a.table.num_states(), 4);
    let gap = vec![states[0].clone(), states[1].clone(), states[3].clone()];
    assert!(fit_all_states(&gap, &small_fit_config()).is_err());
    let dup = vec![states[1].clone(), states[1].clone(), states[2].clone(), states[3].clone()];
    assert!(fit_all_states(&dup, &small_fit_config()).is_err());
}
