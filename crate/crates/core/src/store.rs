//! File formats for logits, calibration tables, datasets and metrics.
//!
//! CSV files carry the numbers, JSON sidecars (`<stem>.meta.json`) carry the
//! schedule and provenance. Floats are written in shortest round-trip decimal
//! form, so every format reads back value-identically. Files are written to a
//! temporary sibling and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbones::{IncrementalDataset, Split, SynthSpec};
use crate::calib::{AffinePair, CalibrationTable};
use crate::eval::{AccuracyMatrix, GroupScoreStats, RunMetrics};
use crate::schedule::{Provenance, ScoreMatrix, StateLogits, StateSchedule};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed CSV: {detail}")]
    Csv { path: PathBuf, line: u64, detail: String },

    #[error("{path}: malformed header: {detail}")]
    Header { path: PathBuf, detail: String },

    #[error("{path}: schema error: {detail}")]
    Schema { path: PathBuf, detail: String },

    #[error("{path}:{line}: column `{column}`: {detail}")]
    Value {
        path: PathBuf,
        line: u64,
        column: String,
        detail: String,
    },

    #[error("{path}:{line}: column `{column}`: non-finite value")]
    NonFinite { path: PathBuf, line: u64, column: String },

    #[error("{path}:{line}: unknown split tag `{tag}` (expected train, validation or test)")]
    InvalidSplit { path: PathBuf, line: u64, tag: String },

    #[error("{path}:{line}: label {label} is not a class of the schedule")]
    UnknownLabel { path: PathBuf, line: u64, label: usize },

    #[error("{path}: metadata and data disagree: {detail}")]
    Inconsistent { path: PathBuf, detail: String },

    #[error("{path}: invalid JSON: {detail}")]
    Json { path: PathBuf, detail: String },

    #[error("{path}: table entry (s={s}, k={k}) appears more than once")]
    DuplicateEntry { path: PathBuf, s: usize, k: usize },

    #[error("{path}: table entry (s={s}, k={k}) is out of range for {num_states} states")]
    EntryOutOfRange {
        path: PathBuf,
        s: usize,
        k: usize,
        num_states: usize,
    },

    #[error("{path}: table is incomplete: missing entry (s={s}, k={k})")]
    MissingEntry { path: PathBuf, s: usize, k: usize },

    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: crate::Error,
    },
}

pub type StoreResult<T> = std::result::Result<T, StoreError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn invalid(path: &Path) -> impl FnOnce(crate::Error) -> StoreError + '_ {
    move |source| StoreError::Invalid {
        path: path.to_path_buf(),
        source,
    }
}

/// Sidecar metadata path: `dir/name.csv` → `dir/name.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> StoreResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err(path))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn read_string(path: &Path) -> StoreResult<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> StoreResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| StoreError::Json {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> StoreResult<T> {
    let text = read_string(path)?;
    serde_json::from_str(&text).map_err(|e| StoreError::Json {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn check_version(path: &Path, version: u32) -> StoreResult<()> {
    if version != SCHEMA_VERSION {
        return Err(StoreError::Schema {
            path: path.to_path_buf(),
            detail: format!("unsupported schema_version {version}, expected {SCHEMA_VERSION}"),
        });
    }
    Ok(())
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    v.to_string()
}

/// Thin cursor over CSV records that reports 1-based file line numbers.
struct CsvRows {
    path: PathBuf,
    reader: csv::Reader<std::io::Cursor<Vec<u8>>>,
    header: Vec<String>,
}

struct Row {
    line: u64,
    fields: csv::StringRecord,
}

impl CsvRows {
    fn open(path: &Path) -> StoreResult<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(std::io::Cursor::new(bytes));
        let header = reader
            .headers()
            .map_err(|e| StoreError::Header {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        Ok(Self {
            path: path.to_path_buf(),
            reader,
            header,
        })
    }

    fn rows(&mut self) -> StoreResult<Vec<Row>> {
        let mut out = Vec::new();
        for rec in self.reader.records() {
            let fields = rec.map_err(|e| StoreError::Csv {
                path: self.path.clone(),
                line: e.position().map_or(0, |p| p.line()),
                detail: e.to_string(),
            })?;
            let line = fields.position().map_or(0, |p| p.line());
            out.push(Row { line, fields });
        }
        Ok(out)
    }
}

impl Row {
    fn field<'a>(&'a self, i: usize) -> &'a str {
        self.fields.get(i).unwrap_or("")
    }

    fn parse_usize(&self, path: &Path, i: usize, column: &str) -> StoreResult<usize> {
        self.field(i).parse().map_err(|_| StoreError::Value {
            path: path.to_path_buf(),
            line: self.line,
            column: column.to_string(),
            detail: format!("`{}` is not a non-negative integer", self.field(i)),
        })
    }

    fn parse_f64(&self, path: &Path, i: usize, column: &str) -> StoreResult<f64> {
        let v: f64 = self.field(i).parse().map_err(|_| StoreError::Value {
            path: path.to_path_buf(),
            line: self.line,
            column: column.to_string(),
            detail: format!("`{}` is not a number", self.field(i)),
        })?;
        if !v.is_finite() {
            return Err(StoreError::NonFinite {
                path: path.to_path_buf(),
                line: self.line,
                column: column.to_string(),
            });
        }
        Ok(v)
    }

    fn parse_opt_f64(&self, path: &Path, i: usize, column: &str) -> StoreResult<Option<f64>> {
        if self.field(i).is_empty() {
            Ok(None)
        } else {
            self.parse_f64(path, i, column).map(Some)
        }
    }
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>, path: &Path) -> StoreResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let to_err = |e: csv::Error| StoreError::Csv {
        path: path.to_path_buf(),
        line: 0,
        detail: e.to_string(),
    };
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| StoreError::Csv {
        path: path.to_path_buf(),
        line: 0,
        detail: e.to_string(),
    })
}

// ---------------------------------------------------------------- logits

#[derive(Debug, Serialize, Deserialize)]
struct LogitsMeta {
    schema_version: u32,
    state: usize,
    num_states: usize,
    class_to_state: Vec<usize>,
    dataset: String,
    backbone: String,
    seed: u64,
}

/// Writes `id,label,c0..c{|N_s|-1}` plus the metadata sidecar.
pub fn write_logits(path: &Path, logits: &StateLogits) -> StoreResult<()> {
    let cols = logits.scores().cols();
    let header: Vec<String> = ["id".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..cols).map(|j| format!("c{j}")))
        .collect();
    let rows = logits
        .scores()
        .iter_rows()
        .zip(logits.labels())
        .enumerate()
        .map(|(i, (row, y))| {
            [i.to_string(), y.to_string()]
                .into_iter()
                .chain(row.iter().map(|&v| fmt_f64(v)))
                .collect()
        });
    let bytes = csv_bytes(&header, rows, path)?;
    write_atomic(path, &bytes)?;
    let p = logits.provenance();
    write_json(
        &sidecar_path(path),
        &LogitsMeta {
            schema_version: SCHEMA_VERSION,
            state: logits.state(),
            num_states: logits.schedule().num_states(),
            class_to_state: logits.schedule().class_to_state().to_vec(),
            dataset: p.dataset.clone(),
            backbone: p.backbone.clone(),
            seed: p.seed,
        },
    )
}

pub fn read_logits(path: &Path) -> StoreResult<StateLogits> {
    let meta_path = sidecar_path(path);
    let meta: LogitsMeta = read_json(&meta_path)?;
    check_version(&meta_path, meta.schema_version)?;
    let schedule = StateSchedule::from_class_map(meta.class_to_state).map_err(invalid(&meta_path))?;
    if schedule.num_states() != meta.num_states {
        return Err(StoreError::Inconsistent {
            path: meta_path,
            detail: format!(
                "num_states is {} but class_to_state defines {} states",
                meta.num_states,
                schedule.num_states()
            ),
        });
    }
    schedule.check_state(meta.state).map_err(invalid(&meta_path))?;

    let mut csv = CsvRows::open(path)?;
    let header = csv.header.clone();
    if header.len() < 2 || header[0] != "id" || header[1] != "label" {
        return Err(StoreError::Header {
            path: path.to_path_buf(),
            detail: "expected `id,label,c0,...`".into(),
        });
    }
    for (j, h) in header[2..].iter().enumerate() {
        if *h != format!("c{j}") {
            return Err(StoreError::Header {
                path: path.to_path_buf(),
                detail: format!("column {} is `{h}`, expected `c{j}`", j + 2),
            });
        }
    }
    let cols = header.len() - 2;
    let expected = schedule.cumulative_len(meta.state);
    if cols != expected {
        return Err(StoreError::Schema {
            path: path.to_path_buf(),
            detail: format!(
                "{cols} score columns but state {} has {expected} classes",
                meta.state
            ),
        });
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for row in csv.rows()? {
        row.parse_usize(path, 0, "id")?;
        let y = row.parse_usize(path, 1, "label")?;
        if schedule.group_of(y).is_none_or(|g| g > meta.state) {
            return Err(StoreError::UnknownLabel {
                path: path.to_path_buf(),
                line: row.line,
                label: y,
            });
        }
        labels.push(y);
        for j in 0..cols {
            data.push(row.parse_f64(path, j + 2, &header[j + 2])?);
        }
    }
    let scores = ScoreMatrix::new(labels.len(), cols, data).map_err(invalid(path))?;
    let provenance = Provenance {
        dataset: meta.dataset,
        backbone: meta.backbone,
        seed: meta.seed,
    };
    StateLogits::new(meta.state, scores, labels, schedule, provenance).map_err(invalid(path))
}

// ---------------------------------------------------------------- tables

#[derive(Debug, Serialize, Deserialize)]
struct TableEntry {
    s: usize,
    k: usize,
    alpha: f64,
    beta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TableFile {
    schema_version: u32,
    num_states: usize,
    entries: Vec<TableEntry>,
}

pub fn write_table(path: &Path, table: &CalibrationTable) -> StoreResult<()> {
    let entries = table
        .entries()
        .map(|(s, k, p)| TableEntry {
            s,
            k,
            alpha: p.alpha,
            beta: p.beta,
        })
        .collect();
    write_json(
        path,
        &TableFile {
            schema_version: SCHEMA_VERSION,
            num_states: table.num_states(),
            entries,
        },
    )
}

/// Reads a table, enforcing ranges, uniqueness and triangular completeness.
pub fn read_table(path: &Path) -> StoreResult<CalibrationTable> {
    let file: TableFile = read_json(path)?;
    check_version(path, file.schema_version)?;
    let n = file.num_states;
    if n < 2 {
        return Err(StoreError::Schema {
            path: path.to_path_buf(),
            detail: format!("num_states must be >= 2, got {n}"),
        });
    }
    let mut slots: Vec<Vec<Option<AffinePair>>> = (2..=n).map(|s| vec![None; s]).collect();
    for e in &file.entries {
        if e.s < 2 || e.s > n || e.k < 1 || e.k > e.s {
            return Err(StoreError::EntryOutOfRange {
                path: path.to_path_buf(),
                s: e.s,
                k: e.k,
                num_states: n,
            });
        }
        let slot = &mut slots[e.s - 2][e.k - 1];
        if slot.is_some() {
            return Err(StoreError::DuplicateEntry {
                path: path.to_path_buf(),
                s: e.s,
                k: e.k,
            });
        }
        *slot = Some(AffinePair::new(e.alpha, e.beta));
    }
    let mut rows = Vec::with_capacity(n - 1);
    for (i, row) in slots.into_iter().enumerate() {
        let s = i + 2;
        let mut out = Vec::with_capacity(s);
        for (j, p) in row.into_iter().enumerate() {
            out.push(p.ok_or(StoreError::MissingEntry {
                path: path.to_path_buf(),
                s,
                k: j + 1,
            })?);
        }
        rows.push(out);
    }
    CalibrationTable::from_rows(rows).map_err(invalid(path))
}

// ---------------------------------------------------------------- datasets

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    schema_version: u32,
    name: String,
    seed: u64,
    feature_dim: usize,
    class_to_state: Vec<usize>,
    spec: Option<SynthSpec>,
}

/// Writes `id,split,label,f0..f{d-1}` plus the metadata sidecar.
pub fn write_dataset(path: &Path, dataset: &IncrementalDataset) -> StoreResult<()> {
    let d = dataset.feature_dim();
    let header: Vec<String> = ["id", "split", "label"]
        .into_iter()
        .map(str::to_string)
        .chain((0..d).map(|j| format!("f{j}")))
        .collect();
    let rows = (0..dataset.len()).map(|i| {
        [
            i.to_string(),
            dataset.splits()[i].as_str().to_string(),
            dataset.labels()[i].to_string(),
        ]
        .into_iter()
        .chain(dataset.sample(i).iter().map(|&v| fmt_f64(v)))
        .collect()
    });
    let bytes = csv_bytes(&header, rows, path)?;
    write_atomic(path, &bytes)?;
    write_json(
        &sidecar_path(path),
        &DatasetMeta {
            schema_version: SCHEMA_VERSION,
            name: dataset.name.clone(),
            seed: dataset.seed,
            feature_dim: d,
            class_to_state: dataset.schedule().class_to_state().to_vec(),
            spec: dataset.spec.clone(),
        },
    )
}

pub fn read_dataset(path: &Path) -> StoreResult<IncrementalDataset> {
    let meta_path = sidecar_path(path);
    let meta: DatasetMeta = read_json(&meta_path)?;
    check_version(&meta_path, meta.schema_version)?;
    let schedule = StateSchedule::from_class_map(meta.class_to_state).map_err(invalid(&meta_path))?;

    let mut csv = CsvRows::open(path)?;
    let header = csv.header.clone();
    let expected: Vec<String> = ["id", "split", "label"]
        .into_iter()
        .map(str::to_string)
        .chain((0..meta.feature_dim).map(|j| format!("f{j}")))
        .collect();
    if header != expected {
        return Err(StoreError::Header {
            path: path.to_path_buf(),
            detail: format!("expected `id,split,label,f0..f{}`", meta.feature_dim.saturating_sub(1)),
        });
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    for row in csv.rows()? {
        row.parse_usize(path, 0, "id")?;
        let split = Split::parse(row.field(1)).ok_or_else(|| StoreError::InvalidSplit {
            path: path.to_path_buf(),
            line: row.line,
            tag: row.field(1).to_string(),
        })?;
        let y = row.parse_usize(path, 2, "label")?;
        if y >= schedule.num_classes() {
            return Err(StoreError::UnknownLabel {
                path: path.to_path_buf(),
                line: row.line,
                label: y,
            });
        }
        for j in 0..meta.feature_dim {
            features.push(row.parse_f64(path, j + 3, &header[j + 3])?);
        }
        labels.push(y);
        splits.push(split);
    }
    let mut ds = IncrementalDataset::new(meta.name, meta.seed, meta.feature_dim, features, labels, splits, schedule)
        .map_err(invalid(path))?;
    ds.spec = meta.spec;
    Ok(ds)
}

// ---------------------------------------------------------------- metrics

const METRICS_HEADER: [&str; 6] = ["state", "group", "accuracy", "state_accuracy", "score_mean", "score_std"];
const SUMMARY_TAG: &str = "avg_incremental";

/// One row per `(state, group)` with `k <= s`, then a summary row holding the
/// average incremental accuracy in the `accuracy` column. Empty groups leave
/// `accuracy` blank.
pub fn write_metrics(path: &Path, metrics: &RunMetrics) -> StoreResult<()> {
    let header: Vec<String> = METRICS_HEADER.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for s in 1..=metrics.num_states() {
        for k in 1..=s {
            let stats = metrics.score_stats[s - 1][k - 1];
            rows.push(vec![
                s.to_string(),
                k.to_string(),
                metrics.group_accuracy.get(s, k).map(fmt_f64).unwrap_or_default(),
                fmt_f64(metrics.state_accuracy[s - 1]),
                fmt_f64(stats.mean),
                fmt_f64(stats.std),
            ]);
        }
    }
    rows.push(vec![
        SUMMARY_TAG.to_string(),
        String::new(),
        metrics.avg_incremental_accuracy.map(fmt_f64).unwrap_or_default(),
        String::new(),
        String::new(),
        String::new(),
    ]);
    let bytes = csv_bytes(&header, rows.into_iter(), path)?;
    write_atomic(path, &bytes)
}

pub fn read_metrics(path: &Path) -> StoreResult<RunMetrics> {
    let mut csv = CsvRows::open(path)?;
    if csv.header != METRICS_HEADER {
        return Err(StoreError::Header {
            path: path.to_path_buf(),
            detail: format!("expected `{}`", METRICS_HEADER.join(",")),
        });
    }
    let rows = csv.rows()?;
    let (summary, body) = match rows.split_last() {
        Some((last, body)) if last.field(0) == SUMMARY_TAG => (last, body),
        _ => {
            return Err(StoreError::Schema {
                path: path.to_path_buf(),
                detail: format!("last row must be the `{SUMMARY_TAG}` summary"),
            })
        }
    };
    let mut group_rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut state_accuracy = Vec::new();
    let mut score_stats: Vec<Vec<GroupScoreStats>> = Vec::new();
    for row in body {
        let s = row.parse_usize(path, 0, "state")?;
        let k = row.parse_usize(path, 1, "group")?;
        let expected = match group_rows.last() {
            Some(r) if r.len() < group_rows.len() => (group_rows.len(), r.len() + 1),
            _ => (group_rows.len() + 1, 1),
        };
        if (s, k) != expected {
            return Err(StoreError::Value {
                path: path.to_path_buf(),
                line: row.line,
                column: "state".into(),
                detail: format!("expected (state, group) = {expected:?}, found ({s}, {k})"),
            });
        }
        let acc = row.parse_opt_f64(path, 2, "accuracy")?;
        let state_acc = row.parse_f64(path, 3, "state_accuracy")?;
        let stats = GroupScoreStats {
            mean: row.parse_f64(path, 4, "score_mean")?,
            std: row.parse_f64(path, 5, "score_std")?,
        };
        if k == 1 {
            group_rows.push(Vec::new());
            score_stats.push(Vec::new());
            state_accuracy.push(state_acc);
        } else if state_accuracy[s - 1] != state_acc {
            return Err(StoreError::Inconsistent {
                path: path.to_path_buf(),
                detail: format!("line {}: state_accuracy differs within state {s}", row.line),
            });
        }
        group_rows[s - 1].push(acc);
        score_stats[s - 1].push(stats);
    }
    if group_rows.last().is_none_or(|r| r.len() != group_rows.len()) {
        return Err(StoreError::Schema {
            path: path.to_path_buf(),
            detail: "group rows do not form a complete triangle".into(),
        });
    }
    let avg = summary.parse_opt_f64(path, 2, "accuracy")?;
    let metrics = RunMetrics {
        state_accuracy,
        group_accuracy: AccuracyMatrix::from_rows(group_rows).map_err(invalid(path))?,
        score_stats,
        avg_incremental_accuracy: avg,
    };
    Ok(metrics)
}
