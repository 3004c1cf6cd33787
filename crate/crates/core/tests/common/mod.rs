#![allow(dead_code)]

use calib_il::{AffinePair, CalibrationTable, Provenance, ScoreMatrix, StateLogits, StateSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn provenance() -> Provenance {
    Provenance {
        dataset: "synthetic".into(),
        backbone: "none".into(),
        seed: 0,
    }
}

/// Random schedule with `num_states` groups of 1..=3 classes.
pub fn random_schedule(rng: &mut ChaCha8Rng, num_states: usize) -> StateSchedule {
    let sizes: Vec<usize> = (0..num_states).map(|_| rng.random_range(1..=3)).collect();
    StateSchedule::from_sizes(&sizes).unwrap()
}

/// Logits of state `s` with scores in `[-scale, scale]` and uniform labels over `N_s`.
pub fn random_logits(rng: &mut ChaCha8Rng, schedule: &StateSchedule, s: usize, n: usize, scale: f64) -> StateLogits {
    let classes = schedule.cumulative_classes(s);
    let cols = classes.len();
    let data = (0..n * cols).map(|_| rng.random_range(-scale..=scale)).collect();
    let labels = (0..n).map(|_| classes[rng.random_range(0..cols)]).collect();
    StateLogits::new(s, ScoreMatrix::new(n, cols, data).unwrap(), labels, schedule.clone(), provenance()).unwrap()
}

/// Logits where the newest group is inflated by `bias`, labels balanced over all classes.
pub fn biased_logits(seed: u64, schedule: &StateSchedule, s: usize, n: usize, bias: f64) -> StateLogits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = schedule.cumulative_classes(s);
    let groups = schedule.column_groups(s);
    let cols = classes.len();
    let mut data = Vec::with_capacity(n * cols);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % cols;
        labels.push(classes[y]);
        for j in 0..cols {
            let noise: f64 = rng.random_range(-1.5..1.5);
            let mut v = noise + if j == y { 2.0 } else { 0.0 };
            if groups[j] == s {
                v = 1.3 * v + bias;
            }
            data.push(v);
        }
    }
    StateLogits::new(s, ScoreMatrix::new(n, cols, data).unwrap(), labels, schedule.clone(), provenance()).unwrap()
}

pub fn random_pairs(rng: &mut ChaCha8Rng, k: usize) -> Vec<AffinePair> {
    (0..k)
        .map(|_| AffinePair::new(rng.random_range(0.2..2.5), rng.random_range(-1.5..1.5)))
        .collect()
}

pub fn random_table(rng: &mut ChaCha8Rng, num_states: usize) -> CalibrationTable {
    CalibrationTable::from_rows((2..=num_states).map(|s| random_pairs(rng, s)).collect()).unwrap()
}
