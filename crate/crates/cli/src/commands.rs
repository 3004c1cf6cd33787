//! Subcommands: file layout under `--out` and the glue around [`crate::pipeline`].
//!
//! ```text
//! datasets/{reference,target}_NN.csv      features, split, label (+ .meta.json)
//! references/reference_NN/val_sS.csv      validation logits per state
//! tables/reference_NN.json, average.json  calibration tables
//! tables/fits.csv                         per-state identity vs fitted loss
//! targets/target_NN/test_sS.csv           test logits per state
//! targets/target_NN/metrics_<method>.csv  per-group metrics
//! comparison.csv, single_reference.csv, oracle_choices.csv
//! sweep/r_ablation.csv, sweep/r_ablation_samples.csv, sweep/halved.csv
//! plots/*.svg
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use calib_il::backbones::IncrementalDataset;
use calib_il::calib::CalibrationFit;
use calib_il::plot::{accuracy_heatmap_svg, accuracy_lines_svg, Series};
use calib_il::store::{fmt_f64, read_dataset, read_metrics, read_table, write_atomic, write_dataset, write_logits, write_metrics, write_table};
use calib_il::transfer::{apply_transfer, average_tables, evaluate_raw};
use calib_il::CalibrationTable;
use rayon::prelude::*;

use crate::error::{CliError, CliResult};
use crate::pipeline::{avg_accuracy, evaluate_targets, fit_reference, make_dataset, mean_std, r_ablation, train, Method, TargetResult};
use crate::spec::{Role, RunSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    RunReference,
    RunTarget,
    Sweep,
    Plot,
}

#[derive(Debug, Clone)]
pub struct Options {
    pub spec: RunSpec,
    pub out: PathBuf,
    /// Worker threads; `None` lets rayon decide.
    pub jobs: Option<usize>,
}

/// Runs `command` on a dedicated thread pool.
pub fn execute(command: Command, opts: &Options) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        if j == 0 {
            return Err(CliError::Spec("--jobs must be >= 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| CliError::Other(e.to_string()))?;
    pool.install(|| match command {
        Command::Gen => gen(opts),
        Command::RunReference => run_reference(opts),
        Command::RunTarget => run_target(opts),
        Command::Sweep => sweep(opts),
        Command::Plot => plot(opts),
    })
}

fn dataset_path(out: &Path, name: &str) -> PathBuf {
    out.join("datasets").join(format!("{name}.csv"))
}

fn table_path(out: &Path, index: usize) -> PathBuf {
    out.join("tables")
        .join(format!("{}.json", RunSpec::dataset_name(Role::Reference, index)))
}

fn target_dir(out: &Path, name: &str) -> PathBuf {
    out.join("targets").join(name)
}

fn metrics_path(out: &Path, name: &str, method: Method) -> PathBuf {
    target_dir(out, name).join(format!("metrics_{}.csv", method.as_str()))
}

fn all_datasets(spec: &RunSpec) -> Vec<(Role, usize)> {
    (0..spec.num_references)
        .map(|r| (Role::Reference, r))
        .chain((0..spec.num_targets).map(|t| (Role::Target, t)))
        .collect()
}

/// Writes every reference and target dataset.
pub fn gen(opts: &Options) -> CliResult<()> {
    let spec = &opts.spec;
    all_datasets(spec)
        .par_iter()
        .map(|&(role, i)| {
            let ds = make_dataset(spec, role, i)?;
            write_dataset(&dataset_path(&opts.out, &ds.name), &ds)?;
            log::info!("event=dataset name={} seed={} samples={}", ds.name, ds.seed, ds.len());
            Ok(())
        })
        .collect::<CliResult<Vec<()>>>()?;
    Ok(())
}

/// Reads the dataset written by `gen` if present, otherwise regenerates it.
fn load_dataset(spec: &RunSpec, out: &Path, role: Role, index: usize) -> CliResult<IncrementalDataset> {
    let name = RunSpec::dataset_name(role, index);
    let path = dataset_path(out, &name);
    if !path.exists() {
        return make_dataset(spec, role, index);
    }
    let ds = read_dataset(&path)?;
    let expected = spec.synth_spec(spec.derived_seed(role, index));
    if ds.spec.as_ref() != Some(&expected) || ds.name != name {
        return Err(CliError::Data(format!(
            "{} was generated from a different spec; rerun `gen`",
            path.display()
        )));
    }
    Ok(ds)
}

fn write_fits_csv(path: &Path, fits: &[CalibrationFit]) -> CliResult<()> {
    let mut text = String::from("reference,state,initial_loss,final_loss\n");
    for (r, fit) in fits.iter().enumerate() {
        for f in &fit.fits {
            let _ = writeln!(text, "{r},{},{},{}", f.state, fmt_f64(f.initial_loss), fmt_f64(f.final_loss));
        }
    }
    Ok(write_atomic(path, text.as_bytes())?)
}

/// Trains each reference, fits and writes its table, then the average table.
pub fn run_reference(opts: &Options) -> CliResult<()> {
    let spec = &opts.spec;
    let out = &opts.out;
    let fits = (0..spec.num_references)
        .into_par_iter()
        .map(|r| {
            let ds = load_dataset(spec, out, Role::Reference, r)?;
            let run = train(spec, &ds)?;
            let dir = out.join("references").join(&ds.name);
            for l in &run.validation {
                write_logits(&dir.join(format!("val_s{}.csv", l.state())), l)?;
            }
            let fit = fit_reference(spec, r, &run)?;
            write_table(&table_path(out, r), &fit.table)?;
            for f in &fit.fits {
                log::info!(
                    "event=fit reference={} state={} identity_loss={} fitted_loss={}",
                    ds.name,
                    f.state,
                    f.initial_loss,
                    f.final_loss
                );
            }
            Ok(fit)
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_fits_csv(&out.join("tables").join("fits.csv"), &fits)?;
    let tables: Vec<CalibrationTable> = fits.into_iter().map(|f| f.table).collect();
    write_table(&out.join("tables").join("average.json"), &average_tables(&tables)?)?;
    log::info!("event=average_table references={}", tables.len());
    Ok(())
}

fn load_tables(spec: &RunSpec, out: &Path) -> CliResult<Vec<CalibrationTable>> {
    (0..spec.num_references)
        .map(|r| {
            let path = table_path(out, r);
            if !path.exists() {
                return Err(CliError::Data(format!(
                    "{} not found; run `run-reference` first",
                    path.display()
                )));
            }
            let table = read_table(&path)?;
            if table.num_states() != spec.num_states {
                return Err(CliError::Data(format!(
                    "{} covers {} states, spec has {}",
                    path.display(),
                    table.num_states(),
                    spec.num_states
                )));
            }
            Ok(table)
        })
        .collect()
}

fn load_targets(spec: &RunSpec, out: &Path) -> CliResult<Vec<IncrementalDataset>> {
    (0..spec.num_targets)
        .into_par_iter()
        .map(|t| load_dataset(spec, out, Role::Target, t))
        .collect()
}

fn accuracy_header(prefix: &str, num_states: usize) -> String {
    let mut h = prefix.to_string();
    for s in 1..=num_states {
        let _ = write!(h, ",acc_s{s}");
    }
    h.push('\n');
    h
}

fn push_accuracies(text: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(text, ",{}", fmt_f64(*v));
    }
    text.push('\n');
}

fn column_means(rows: &[&[f64]]) -> Vec<f64> {
    (0..rows[0].len())
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// Comparison table with four method rows per target plus four `mean` rows.
/// `gain` is the method's average incremental accuracy minus raw.
pub fn comparison_csv(results: &[TargetResult], num_states: usize) -> String {
    let mut text = accuracy_header("target,method,avg_incremental_accuracy,gain", num_states);
    for t in results {
        let raw = avg_accuracy(t.comparison.metrics(Method::Raw));
        for m in Method::ALL {
            let metrics = t.comparison.metrics(m);
            let acc = avg_accuracy(metrics);
            let _ = write!(text, "{},{},{},{}", t.name, m.as_str(), fmt_f64(acc), fmt_f64(acc - raw));
            push_accuracies(&mut text, &metrics.state_accuracy);
        }
    }
    let raw_mean = mean_std(&results.iter().map(|t| avg_accuracy(t.comparison.metrics(Method::Raw))).collect::<Vec<_>>()).0;
    for m in Method::ALL {
        let acc = mean_std(&results.iter().map(|t| avg_accuracy(t.comparison.metrics(m))).collect::<Vec<_>>()).0;
        let per_state: Vec<&[f64]> = results.iter().map(|t| t.comparison.metrics(m).state_accuracy.as_slice()).collect();
        let _ = write!(text, "mean,{},{},{}", m.as_str(), fmt_f64(acc), fmt_f64(acc - raw_mean));
        push_accuracies(&mut text, &column_means(&per_state));
    }
    text
}

fn single_reference_csv(results: &[TargetResult], num_states: usize) -> String {
    let mut text = accuracy_header("target,reference,avg_incremental_accuracy,gain", num_states);
    for t in results {
        let raw = avg_accuracy(t.comparison.metrics(Method::Raw));
        for (r, single) in t.comparison.single.iter().enumerate() {
            let acc = avg_accuracy(&single.metrics);
            let _ = write!(text, "{},{},{},{}", t.name, r, fmt_f64(acc), fmt_f64(acc - raw));
            push_accuracies(&mut text, &single.metrics.state_accuracy);
        }
    }
    text
}

fn oracle_choices_csv(results: &[TargetResult]) -> String {
    let mut text = String::from("target,state,reference\n");
    for t in results {
        for (i, c) in t.comparison.oracle.choices.iter().enumerate() {
            if let Some(r) = c {
                let _ = writeln!(text, "{},{},{r}", t.name, i + 1);
            }
        }
    }
    text
}

fn print_summary(results: &[TargetResult]) {
    let raw = mean_std(&results.iter().map(|t| avg_accuracy(t.comparison.metrics(Method::Raw))).collect::<Vec<_>>()).0;
    println!("{:<8} {:>8} {:>8}", "method", "acc(%)", "gain");
    for m in Method::ALL {
        let acc = mean_std(&results.iter().map(|t| avg_accuracy(t.comparison.metrics(m))).collect::<Vec<_>>()).0;
        let gain = if m == Method::Raw { String::new() } else { format!("{:+.1}", (acc - raw) * 100.0) };
        println!("{:<8} {:>8.1} {:>8}", m.as_str(), acc * 100.0, gain);
    }
}

/// Trains every target without memory and evaluates raw, BiC, adBiC and oracle.
pub fn run_target(opts: &Options) -> CliResult<()> {
    let spec = &opts.spec;
    let out = &opts.out;
    let tables = load_tables(spec, out)?;
    let average = average_tables(&tables)?;
    let results = evaluate_targets(spec, load_targets(spec, out)?, &tables, &average)?;
    for t in &results {
        let dir = target_dir(out, &t.name);
        for l in &t.logits {
            write_logits(&dir.join(format!("test_s{}.csv", l.state())), l)?;
        }
        for m in Method::ALL {
            write_metrics(&metrics_path(out, &t.name, m), t.comparison.metrics(m))?;
        }
        let raw = avg_accuracy(t.comparison.metrics(Method::Raw));
        let adbic = avg_accuracy(t.comparison.metrics(Method::Adbic));
        log::info!("event=target name={} raw={raw} adbic={adbic} gain={}", t.name, adbic - raw);
    }
    write_atomic(&out.join("comparison.csv"), comparison_csv(&results, spec.num_states).as_bytes())?;
    write_atomic(&out.join("single_reference.csv"), single_reference_csv(&results, spec.num_states).as_bytes())?;
    write_atomic(&out.join("oracle_choices.csv"), oracle_choices_csv(&results).as_bytes())?;
    print_summary(&results);
    Ok(())
}

/// Reference-count ablation and the halved-training-data protocol.
pub fn sweep(opts: &Options) -> CliResult<()> {
    let spec = &opts.spec;
    let out = &opts.out;
    spec.validate_sweep()?;
    let tables = load_tables(spec, out)?;
    let average = average_tables(&tables)?;
    let datasets = load_targets(spec, out)?;
    let logits = datasets
        .par_iter()
        .map(|ds| Ok(train(spec, ds)?.test))
        .collect::<CliResult<Vec<_>>>()?;
    let rows = r_ablation(spec, &tables, &logits)?;

    let mut summary = String::from("r,samplings,mean,std,raw_mean,gain\n");
    let mut samples = String::from("r,sampling,references,score\n");
    for row in &rows {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{}",
            row.r,
            row.scores.len(),
            fmt_f64(row.mean),
            fmt_f64(row.std),
            fmt_f64(row.raw_mean),
            fmt_f64(row.mean - row.raw_mean)
        );
        for (i, (subset, score)) in row.subsets.iter().zip(&row.scores).enumerate() {
            let refs: Vec<String> = subset.iter().map(usize::to_string).collect();
            let _ = writeln!(samples, "{},{i},{},{}", row.r, refs.join(";"), fmt_f64(*score));
        }
    }
    write_atomic(&out.join("sweep").join("r_ablation.csv"), summary.as_bytes())?;
    write_atomic(&out.join("sweep").join("r_ablation_samples.csv"), samples.as_bytes())?;

    if spec.sweep.halve {
        let halved = datasets
            .par_iter()
            .map(|ds| {
                let half = ds.halve_training();
                let run = train(spec, &half)?;
                let raw = avg_accuracy(&evaluate_raw(&run.test)?.metrics);
                let adbic = avg_accuracy(&apply_transfer(&run.test, &average)?.metrics);
                Ok((half, raw, adbic))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let mut text = String::from("target,train_per_class,raw,adbic,gain\n");
        for (ds, raw, adbic) in &halved {
            let per_class = train_per_class(ds);
            let _ = writeln!(text, "{},{per_class},{},{},{}", ds.name, fmt_f64(*raw), fmt_f64(*adbic), fmt_f64(adbic - raw));
            log::info!("event=halved name={} train_per_class={per_class} raw={raw} adbic={adbic}", ds.name);
        }
        let raw = mean_std(&halved.iter().map(|h| h.1).collect::<Vec<_>>()).0;
        let adbic = mean_std(&halved.iter().map(|h| h.2).collect::<Vec<_>>()).0;
        let _ = writeln!(text, "mean,,{},{},{}", fmt_f64(raw), fmt_f64(adbic), fmt_f64(adbic - raw));
        write_atomic(&out.join("sweep").join("halved.csv"), text.as_bytes())?;
    }
    Ok(())
}

/// Training samples of class 0 (all classes have the same count in generated data).
fn train_per_class(ds: &IncrementalDataset) -> usize {
    ds.labels()
        .iter()
        .zip(ds.splits())
        .filter(|(&y, &s)| y == 0 && s == calib_il::backbones::Split::Train)
        .count()
}

/// SVG figures from the metrics CSVs written by `run-target`.
pub fn plot(opts: &Options) -> CliResult<()> {
    let out = &opts.out;
    for t in 0..opts.spec.num_targets {
        let name = RunSpec::dataset_name(Role::Target, t);
        let mut series = Vec::new();
        for m in Method::ALL {
            let metrics = read_metrics(&metrics_path(out, &name, m))?;
            if matches!(m, Method::Raw | Method::Adbic) {
                let svg = accuracy_heatmap_svg(&metrics.group_accuracy, &format!("{name} {} group accuracy", m.as_str()));
                write_atomic(&out.join("plots").join(format!("{name}_{}_groups.svg", m.as_str())), svg.as_bytes())?;
            }
            series.push(Series {
                name: m.as_str().to_string(),
                values: metrics.state_accuracy.clone(),
                dashed: m == Method::Raw,
            });
        }
        let svg = accuracy_lines_svg(&series, &format!("{name} accuracy per state"));
        write_atomic(&out.join("plots").join(format!("{name}_accuracy.svg")), svg.as_bytes())?;
    }
    log::info!("event=plots targets={}", opts.spec.num_targets);
    Ok(())
}
