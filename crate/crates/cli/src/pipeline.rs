//! In-memory experiment steps shared by the subcommands.
//!
//! Parallel loops use rayon and collect in index order, so results do not
//! depend on the thread count.

use std::collections::BTreeSet;

use calib_il::backbones::{gen_synthetic_dataset, run_incremental, split_states, IncrementalDataset, IncrementalRun};
use calib_il::calib::{fit_all_states, CalibrationFit};
use calib_il::eval::RunMetrics;
use calib_il::transfer::{apply_transfer, average_tables, evaluate_raw, oracle_select, OracleOutcome, TransferOutcome};
use calib_il::{CalibrationTable, StateLogits};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{CliError, CliResult};
use crate::spec::{Role, RunSpec};

pub fn make_dataset(spec: &RunSpec, role: Role, index: usize) -> CliResult<IncrementalDataset> {
    let seed = spec.derived_seed(role, index);
    Ok(gen_synthetic_dataset(
        &spec.synth_spec(seed),
        &RunSpec::dataset_name(role, index),
    )?)
}

/// Trains the spec's backbone through every state of `dataset`.
pub fn train(spec: &RunSpec, dataset: &IncrementalDataset) -> CliResult<IncrementalRun> {
    let views = split_states(dataset, spec.num_states)?;
    Ok(run_incremental(dataset, &views, &spec.backbone_for(dataset.seed))?)
}

/// Fits the calibration table of reference `index` on its validation logits.
pub fn fit_reference(spec: &RunSpec, index: usize, run: &IncrementalRun) -> CliResult<CalibrationFit> {
    let fit = fit_all_states(&run.validation, &spec.calibration_for(index))?;
    for f in &fit.fits {
        log::debug!(
            "event=fit_state reference={index} state={} initial_loss={} final_loss={}",
            f.state,
            f.initial_loss,
            f.final_loss
        );
        if f.final_loss > f.initial_loss {
            return Err(CliError::Numeric(format!(
                "reference {index} state {}: fitted loss {} exceeds identity loss {}",
                f.state, f.final_loss, f.initial_loss
            )));
        }
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Raw,
    Bic,
    Adbic,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Raw, Method::Bic, Method::Adbic, Method::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Bic => "bic",
            Method::Adbic => "adbic",
            Method::Oracle => "oracle",
        }
    }
}

/// Raw, newest-group-only, full transfer, oracle and per-reference outcomes of one target.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub raw: TransferOutcome,
    pub bic: TransferOutcome,
    pub adbic: TransferOutcome,
    pub oracle: OracleOutcome,
    /// Transfer of each reference table alone, in reference order.
    pub single: Vec<TransferOutcome>,
}

impl Comparison {
    pub fn metrics(&self, method: Method) -> &RunMetrics {
        match method {
            Method::Raw => &self.raw.metrics,
            Method::Bic => &self.bic.metrics,
            Method::Adbic => &self.adbic.metrics,
            Method::Oracle => &self.oracle.outcome.metrics,
        }
    }
}

pub fn compare(
    target: &[StateLogits],
    tables: &[CalibrationTable],
    average: &CalibrationTable,
) -> CliResult<Comparison> {
    Ok(Comparison {
        raw: evaluate_raw(target)?,
        bic: apply_transfer(target, &average.newest_only())?,
        adbic: apply_transfer(target, average)?,
        oracle: oracle_select(tables, target)?,
        single: tables
            .iter()
            .map(|t| apply_transfer(target, t))
            .collect::<Result<_, _>>()?,
    })
}

pub fn avg_accuracy(metrics: &RunMetrics) -> f64 {
    metrics
        .avg_incremental_accuracy
        .expect("runs have at least two states")
}

/// `count` distinct `r`-subsets of `0..n`, each sorted. When fewer than
/// `count` subsets exist, all of them are returned in lexicographic order.
pub fn draw_subsets(n: usize, r: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    assert!(r >= 1 && r <= n, "subset size {r} outside 1..={n}");
    if binomial(n, r) <= count as u128 {
        return combinations(n, r);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut s = sample(rng, n, r).into_vec();
        s.sort_unstable();
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

fn binomial(n: usize, r: usize) -> u128 {
    let r = r.min(n - r) as u128;
    (0..r).fold(1u128, |acc, i| acc * (n as u128 - i) / (i + 1))
}

fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..r).rev().find(|&i| idx[i] < n - r + i) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One `R` of the reference-count ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub r: usize,
    pub subsets: Vec<Vec<usize>>,
    /// Target-averaged corrected accuracy of each subset.
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub raw_mean: f64,
}

/// Averages random subsets of `R` reference tables and transfers them to
/// every target, for each `R` in the sweep grid.
pub fn r_ablation(
    spec: &RunSpec,
    tables: &[CalibrationTable],
    targets: &[Vec<StateLogits>],
) -> CliResult<Vec<AblationRow>> {
    spec.validate_sweep()?;
    if tables.len() != spec.num_references {
        return Err(CliError::Data(format!(
            "expected {} reference tables, found {}",
            spec.num_references,
            tables.len()
        )));
    }
    let raw: Vec<f64> = targets
        .par_iter()
        .map(|t| Ok(avg_accuracy(&evaluate_raw(t)?.metrics)))
        .collect::<CliResult<_>>()?;
    let (raw_mean, _) = mean_std(&raw);
    let mut rows = Vec::new();
    for &r in &spec.sweep.r_values {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.derived_seed(Role::Sweep, r));
        let count = if r == tables.len() { 1 } else { spec.sweep.samplings };
        let subsets = draw_subsets(tables.len(), r, count, &mut rng);
        let scores: Vec<f64> = subsets
            .par_iter()
            .map(|subset| {
                let picked: Vec<CalibrationTable> = subset.iter().map(|&i| tables[i].clone()).collect();
                let avg = average_tables(&picked)?;
                let per_target = targets
                    .iter()
                    .map(|t| Ok(avg_accuracy(&apply_transfer(t, &avg)?.metrics)))
                    .collect::<CliResult<Vec<f64>>>()?;
                Ok(mean_std(&per_target).0)
            })
            .collect::<CliResult<_>>()?;
        let (mean, std) = mean_std(&scores);
        log::info!("event=ablation r={r} samplings={} mean={mean} std={std} raw_mean={raw_mean}", subsets.len());
        rows.push(AblationRow {
            r,
            subsets,
            scores,
            mean,
            std,
            raw_mean,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct TargetResult {
    pub name: String,
    pub dataset: IncrementalDataset,
    /// Test logits of states `1..=S`.
    pub logits: Vec<StateLogits>,
    pub comparison: Comparison,
}

/// References, their tables and the evaluated targets of one experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub references: Vec<CalibrationFit>,
    pub tables: Vec<CalibrationTable>,
    pub average: CalibrationTable,
    pub targets: Vec<TargetResult>,
}

pub fn reference_tables(spec: &RunSpec) -> CliResult<Vec<CalibrationFit>> {
    (0..spec.num_references)
        .into_par_iter()
        .map(|r| {
            let ds = make_dataset(spec, Role::Reference, r)?;
            fit_reference(spec, r, &train(spec, &ds)?)
        })
        .collect()
}

pub fn evaluate_targets(
    spec: &RunSpec,
    datasets: Vec<IncrementalDataset>,
    tables: &[CalibrationTable],
    average: &CalibrationTable,
) -> CliResult<Vec<TargetResult>> {
    datasets
        .into_par_iter()
        .map(|ds| {
            let run = train(spec, &ds)?;
            let comparison = compare(&run.test, tables, average)?;
            Ok(TargetResult {
                name: ds.name.clone(),
                dataset: ds,
                logits: run.test,
                comparison,
            })
        })
        .collect()
}

/// The whole reference-then-target pipeline in memory.
pub fn run_experiment(spec: &RunSpec) -> CliResult<Experiment> {
    let references = reference_tables(spec)?;
    let tables: Vec<CalibrationTable> = references.iter().map(|f| f.table.clone()).collect();
    let average = average_tables(&tables)?;
    let datasets = (0..spec.num_targets)
        .map(|t| make_dataset(spec, Role::Target, t))
        .collect::<CliResult<Vec<_>>>()?;
    let targets = evaluate_targets(spec, datasets, &tables, &average)?;
    Ok(Experiment {
        references,
        tables,
        average,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_are_distinct_sorted_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for r in 1..=9 {
            let s = draw_subsets(10, r, 10, &mut rng);
            assert_eq!(s.len(), 10);
            let set: BTreeSet<_> = s.iter().cloned().collect();
            assert_eq!(set.len(), 10);
            for sub in &s {
                assert_eq!(sub.len(), r);
                assert!(sub.windows(2).all(|w| w[0] < w[1]));
                assert!(sub.iter().all(|&i| i < 10));
            }
        }
        assert_eq!(draw_subsets(10, 10, 10, &mut rng), vec![(0..10).collect::<Vec<_>>()]);
    }

    #[test]
    fn small_populations_enumerate_all_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            draw_subsets(4, 2, 10, &mut rng),
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert_eq!(binomial(10, 9), 10);
        assert_eq!(binomial(20, 10), 184_756);
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
