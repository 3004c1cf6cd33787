//! Memoryless incremental trainers.
//!
//! Every state trains only on the new group's samples. Backbones differ in
//! which output rows may move and in the auxiliary loss:
//!
//! - `finetune`: everything trainable, cross-entropy only.
//! - `ftplus`: past output rows frozen.
//! - `siw`: as `ftplus`, then past rows are restored from their first-state
//!   snapshot and every row is standardized.
//! - `lwf`: everything trainable, plus temperature-softened distillation of
//!   the previous model's past-class posteriors.
//! - `lucir_lite`: cosine head, past rows frozen, plus feature-space
//!   distillation weighted by `lambda_base * sqrt(|N_{s-1}| / |P_s|)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{dot, smooth_norm, Grads, Model, Sgd};
use super::synth::{IncrementalDataset, Split, StateViews};
use crate::calib::softmax_into;
use crate::error::{Error, Result};
use crate::schedule::{Provenance, ScoreMatrix, StateLogits, StateSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Finetune,
    Ftplus,
    Siw,
    Lwf,
    LucirLite,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Finetune => "finetune",
            BackboneKind::Ftplus => "ftplus",
            BackboneKind::Siw => "siw",
            BackboneKind::Lwf => "lwf",
            BackboneKind::LucirLite => "lucir_lite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub hidden_dim: usize,
    pub epochs_initial: usize,
    pub epochs_incremental: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// LwF softmax temperature.
    pub temperature: f64,
    /// LwF distillation weight.
    pub distill_weight: f64,
    /// LUCIR-lite base feature-distillation weight.
    pub lambda_base: f64,
    /// Initial cosine scale for LUCIR-lite.
    pub cosine_scale: f64,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            kind: BackboneKind::Ftplus,
            hidden_dim: 64,
            epochs_initial: 60,
            epochs_incremental: 30,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            temperature: 2.0,
            distill_weight: 1.0,
            lambda_base: 5.0,
            cosine_scale: 10.0,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("backbone: {m}")));
        if self.hidden_dim == 0 || self.batch_size == 0 {
            return bad("hidden_dim and batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning_rate must be > 0 and momentum in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be > 0");
        }
        if !(self.distill_weight >= 0.0 && self.lambda_base >= 0.0) {
            return bad("distillation weights must be >= 0");
        }
        if !(self.cosine_scale > 0.0) {
            return bad("cosine_scale must be > 0");
        }
        if self.kind == BackboneKind::Siw && self.hidden_dim < 2 {
            return bad("siw needs hidden_dim >= 2");
        }
        Ok(())
    }

    fn rng_for_state(&self, s: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(s as u64);
        rng
    }
}

/// Adaptive feature-distillation weight `lambda_base * sqrt(n_prev / n_new)`.
pub fn lucir_lambda(lambda_base: f64, n_prev: usize, n_new: usize) -> f64 {
    lambda_base * (n_prev as f64 / n_new as f64).sqrt()
}

/// `T^2 * KL(softmax(teacher / T) || softmax(student / T))` over past-class scores.
pub fn lwf_distillation(teacher: &[f64], student: &[f64], temperature: f64) -> f64 {
    let n = teacher.len();
    let t: Vec<f64> = teacher.iter().map(|v| v / temperature).collect();
    let s: Vec<f64> = student.iter().map(|v| v / temperature).collect();
    let mut pt = vec![0.0; n];
    let mut ps = vec![0.0; n];
    let lt = softmax_into(&t, &mut pt) + t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ls = softmax_into(&s, &mut ps) + s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // KL = sum pt (log pt - log ps), with log p = z - logsumexp(z)
    let kl: f64 = (0..n).map(|j| pt[j] * ((t[j] - lt) - (s[j] - ls))).sum();
    temperature * temperature * kl
}

/// `1 - cos(student, teacher)` with smoothed norms.
pub fn feature_distillation(student: &[f64], teacher: &[f64]) -> f64 {
    1.0 - dot(student, teacher) / (smooth_norm(student) * smooth_norm(teacher))
}

/// Zero-mean, unit population-std copy of `row`. A constant row has no
/// defined standardization and maps to `None`.
pub fn standardize_row(row: &[f64]) -> Result<Option<Vec<f64>>> {
    if row.len() < 2 {
        return Err(Error::Degenerate(format!(
            "cannot standardize a row of length {}",
            row.len()
        )));
    }
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() {
        return Ok(None);
    }
    Ok(Some(row.iter().map(|v| (v - mean) / std).collect()))
}

enum Auxiliary {
    None,
    /// Teacher past-class scores per training position.
    Lwf {
        teacher: Vec<Vec<f64>>,
        temperature: f64,
        weight: f64,
    },
    /// Teacher hidden features per training position.
    Lucir { teacher: Vec<Vec<f64>>, lambda: f64 },
}

/// Mini-batch training of `model` on `indices`; returns the mean loss of every epoch.
fn train_epochs(
    model: &mut Model,
    dataset: &IncrementalDataset,
    indices: &[usize],
    epochs: usize,
    config: &BackboneConfig,
    rng: &mut ChaCha8Rng,
    aux: &Auxiliary,
) -> Result<Vec<f64>> {
    let targets: Vec<usize> = indices
        .iter()
        .map(|&i| {
            let y = dataset.labels()[i];
            model.row_index(y).ok_or(Error::ScheduleMismatch(format!(
                "training label {y} has no output row"
            )))
        })
        .collect::<Result<_>>()?;
    let mut sgd = Sgd::new(model, config.learning_rate, config.momentum, config.weight_decay);
    let mut grads = Grads::zeros_like(model);
    let mut order: Vec<usize> = (0..indices.len()).collect();
    let rows = model.num_outputs();
    let mut q = vec![0.0; rows];
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            for &pos in batch {
                let x = dataset.sample(indices[pos]);
                let act = model.forward(x);
                let log_norm = softmax_into(&act.scores, &mut q);
                let max = act.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let y = targets[pos];
                let mut loss = max + log_norm - act.scores[y];
                let mut d: Vec<f64> = q.iter().map(|p| p * scale).collect();
                d[y] -= scale;
                let mut d_hidden = None;
                match aux {
                    Auxiliary::None => {}
                    Auxiliary::Lwf {
                        teacher,
                        temperature,
                        weight,
                    } => {
                        let t_scores = &teacher[pos];
                        let n_old = t_scores.len();
                        let student = &act.scores[..n_old];
                        loss += weight * lwf_distillation(t_scores, student, *temperature);
                        let mut pt = vec![0.0; n_old];
                        let mut ps = vec![0.0; n_old];
                        let ts: Vec<f64> = t_scores.iter().map(|v| v / temperature).collect();
                        let ss: Vec<f64> = student.iter().map(|v| v / temperature).collect();
                        softmax_into(&ts, &mut pt);
                        softmax_into(&ss, &mut ps);
                        // d/dz_s of T^2 KL(pt || softmax(z_s / T)) = T (ps - pt)
                        for j in 0..n_old {
                            d[j] += scale * weight * temperature * (ps[j] - pt[j]);
                        }
                    }
                    Auxiliary::Lucir { teacher, lambda } => {
                        let th = &teacher[pos];
                        let sh = &act.hidden;
                        loss += lambda * feature_distillation(sh, th);
                        let ns = smooth_norm(sh);
                        let nt = smooth_norm(th);
                        let cos = dot(sh, th) / (ns * nt);
                        d_hidden = Some(
                            sh.iter()
                                .zip(th)
                                .map(|(&a, &b)| -scale * lambda * (b / (ns * nt) - cos * a / (ns * ns)))
                                .collect::<Vec<f64>>(),
                        );
                    }
                }
                epoch_loss += loss;
                model.backward(x, &act, &d, d_hidden.as_deref(), &mut grads);
            }
            sgd.step(model, &grads);
        }
        let mean = epoch_loss / indices.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        losses.push(mean);
    }
    Ok(losses)
}

fn snapshot_new_rows(model: &mut Model, state: usize) {
    for r in 0..model.num_outputs() {
        if model.first_state[r] == state {
            model.init_rows[r] = Some(model.output_row(r).to_vec());
        }
    }
}

/// Trains the first model on group-1 data; also returns the per-epoch loss.
pub fn train_initial_with_losses(
    config: &BackboneConfig,
    dataset: &IncrementalDataset,
    views: &StateViews,
) -> Result<(Model, Vec<f64>)> {
    config.validate()?;
    let train = &views.train[0];
    if train.is_empty() {
        return Err(Error::Empty("initial-state training data"));
    }
    let mut rng = config.rng_for_state(1);
    let cosine = config.kind == BackboneKind::LucirLite;
    let mut model = Model::new(dataset.feature_dim(), config.hidden_dim, cosine, config.cosine_scale, &mut rng);
    model.add_classes(&views.schedule.group_classes(1), 1, &mut rng);
    let losses = train_epochs(
        &mut model,
        dataset,
        train,
        config.epochs_initial,
        config,
        &mut rng,
        &Auxiliary::None,
    )?;
    snapshot_new_rows(&mut model, 1);
    Ok((model, losses))
}

/// Trains the first model on group-1 data.
pub fn train_initial(config: &BackboneConfig, dataset: &IncrementalDataset, views: &StateViews) -> Result<Model> {
    train_initial_with_losses(config, dataset, views).map(|(m, _)| m)
}

/// Appends the state-`s` rows, checking for overlap with past classes.
fn prepare_update(
    model: &Model,
    views: &StateViews,
    s: usize,
    config: &BackboneConfig,
) -> Result<(Model, ChaCha8Rng)> {
    config.validate()?;
    views.schedule.check_state(s)?;
    if s < 2 {
        return Err(Error::InitialState(s));
    }
    let new_classes = views.schedule.group_classes(s);
    if let Some(&c) = new_classes.iter().find(|&&c| model.row_index(c).is_some()) {
        return Err(Error::ScheduleMismatch(format!(
            "class {c} of state {s} already has an output row"
        )));
    }
    let expected_prev = views.schedule.cumulative_len(s - 1);
    if model.num_outputs() != expected_prev {
        return Err(Error::ScheduleMismatch(format!(
            "model has {} classes, state {} expects {}",
            model.num_outputs(),
            s - 1,
            expected_prev
        )));
    }
    let mut rng = config.rng_for_state(s);
    let mut next = model.clone();
    next.add_classes(&new_classes, s, &mut rng);
    Ok((next, rng))
}

fn freeze_past(model: &mut Model, s: usize) {
    for r in 0..model.num_outputs() {
        model.frozen[r] = model.first_state[r] < s;
    }
}

/// Plain fine-tuning: every parameter trains on the new group.
pub fn update_finetune(
    model: &Model,
    dataset: &IncrementalDataset,
    views: &StateViews,
    s: usize,
    config: &BackboneConfig,
) -> Result<Model> {
    let (mut next, mut rng) = prepare_update(model, views, s, config)?;
    train_epochs(
        &mut next,
        dataset,
        &views.train[s - 1],
        config.epochs_incremental,
        config,
        &mut rng,
        &Auxiliary::None,
    )?;
    snapshot_new_rows(&mut next, s);
    Ok(next)
}

/// FT+: past-class output rows are frozen, the hidden layer keeps training.
pub fn update_ftplus(
    model: &Model,
    dataset: &IncrementalDataset,
    views: &StateViews,
    s: usize,
    config: &BackboneConfig,
) -> Result<Model> {
    let (mut next, mut rng) = prepare_update(model, views, s, config)?;
    freeze_past(&mut next, s);
    train_epochs(
        &mut next,
        dataset,
        &views.train[s - 1],
        config.epochs_incremental,
        config,
        &mut rng,
        &Auxiliary::None,
    )?;
    snapshot_new_rows(&mut next, s);
    Ok(next)
}

/// SIW: FT+ training, then past rows restored from their snapshots and all
/// rows standardized. A constant row becomes the zero vector with a warning.
pub fn update_siw(
    model: &Model,
    dataset: &IncrementalDataset,
    views: &StateViews,
    s: usize,
    config: &BackboneConfig,
) -> Result<Model> {
    if config.hidden_dim < 2 || model.hidden_dim() < 2 {
        return Err(Error::Degenerate("siw needs hidden_dim >= 2".into()));
    }
    let mut next = update_ftplus(model, dataset, views, s, config)?;
    for r in 0..next.num_outputs() {
        let source = next.init_rows[r]
            .clone()
            .unwrap_or_else(|| next.output_row(r).to_vec());
        let row = match standardize_row(&source)? {
            Some(v) => v,
            None => {
                log::warn!("siw: class {} has a constant weight row; using zeros", next.classes[r]);
                vec![0.0; source.len()]
            }
        };
        next.output_row_mut(r).copy_from_slice(&row);
    }
    Ok(next)
}

/// LwF: all parameters train with cross-entropy plus
/// `distill_weight * T^2 * KL(teacher || student)` over softened past-class posteriors.
pub fn update_lwf(
    model_prev: &Model,
    dataset: &IncrementalDataset,
    views: &StateViews,
    s: usize,
    config: &BackboneConfig,
) -> Result<Model> {
    if !(config.temperature > 0.0) {
        return Err(Error::InvalidConfig("temperature must be > 0".into()));
    }
    let (mut next, mut rng) = prepare_update(model_prev, views, s, config)?;
    let train = &views.train[s - 1];
    let teacher = train
        .iter()
        .map(|&i| model_prev.scores(dataset.sample(i)))
        .collect();
    let aux = Auxiliary::Lwf {
        teacher,
        temperature: config.temperature,
        weight: config.distill_weight,
    };
    train_epochs(&mut next, dataset, train, config.epochs_incremental, config, &mut rng, &aux)?;
    snapshot_new_rows(&mut next, s);
    Ok(next)
}

/// LUCIR-lite: cosine head with past rows frozen, cross-entropy plus
/// `lambda * (1 - cos(student feature, teacher feature))`.
pub fn update_lucir_lite(
    model_prev: &Model,
    dataset: &IncrementalDataset,
    views: &StateViews,
    s: usize,
    config: &BackboneConfig,
) -> Result<Model> {
    if !model_prev.is_cosine() {
        return Err(Error::InvalidConfig("lucir_lite needs a cosine-head model".into()));
    }
    let (mut next, mut rng) = prepare_update(model_prev, views, s, config)?;
    freeze_past(&mut next, s);
    let lambda = lucir_lambda(
        config.lambda_base,
        views.schedule.cumulative_len(s - 1),
        views.schedule.classes_per_state()[s - 1],
    );
    let train = &views.train[s - 1];
    let teacher = train
        .iter()
        .map(|&i| model_prev.hidden(dataset.sample(i)))
        .collect();
    let aux = Auxiliary::Lucir { teacher, lambda };
    train_epochs(&mut next, dataset, train, config.epochs_incremental, config, &mut rng, &aux)?;
    snapshot_new_rows(&mut next, s);
    Ok(next)
}

/// Dispatches on `config.kind`.
pub fn update(
    model: &Model,
    dataset: &IncrementalDataset,
    views: &StateViews,
    s: usize,
    config: &BackboneConfig,
) -> Result<Model> {
    match config.kind {
        BackboneKind::Finetune => update_finetune(model, dataset, views, s, config),
        BackboneKind::Ftplus => update_ftplus(model, dataset, views, s, config),
        BackboneKind::Siw => update_siw(model, dataset, views, s, config),
        BackboneKind::Lwf => update_lwf(model, dataset, views, s, config),
        BackboneKind::LucirLite => update_lucir_lite(model, dataset, views, s, config),
    }
}

/// Class id with the highest score; ties go to the lowest class id.
pub fn predict(model: &Model, x: &[f64]) -> usize {
    let scores = model.scores(x);
    let mut best = 0;
    for r in 1..scores.len() {
        if scores[r] > scores[best] || (scores[r] == scores[best] && model.classes[r] < model.classes[best]) {
            best = r;
        }
    }
    model.classes[best]
}

/// Raw scores of `indices` over all classes of `N_s`, columns in ascending class id.
pub fn extract_logits(
    model: &Model,
    dataset: &IncrementalDataset,
    indices: &[usize],
    state: usize,
    schedule: &StateSchedule,
    provenance: Provenance,
) -> Result<StateLogits> {
    schedule.check_state(state)?;
    let classes = schedule.cumulative_classes(state);
    if model.num_outputs() != classes.len() {
        return Err(Error::ScheduleMismatch(format!(
            "model covers {} classes, state {} has {}",
            model.num_outputs(),
            state,
            classes.len()
        )));
    }
    let rows: Vec<usize> = classes
        .iter()
        .map(|&c| {
            model
                .row_index(c)
                .ok_or(Error::ScheduleMismatch(format!("model has no row for class {c}")))
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(indices.len() * classes.len());
    for &i in indices {
        let scores = model.scores(dataset.sample(i));
        data.extend(rows.iter().map(|&r| scores[r]));
    }
    let labels = indices.iter().map(|&i| dataset.labels()[i]).collect();
    StateLogits::new(
        state,
        ScoreMatrix::new(indices.len(), classes.len(), data)?,
        labels,
        schedule.clone(),
        provenance,
    )
}

/// Per-state logits of a full incremental run.
#[derive(Debug, Clone)]
pub struct IncrementalRun {
    /// Validation logits of states `1..=S`.
    pub validation: Vec<StateLogits>,
    /// Test logits of states `1..=S`.
    pub test: Vec<StateLogits>,
    pub final_model: Model,
}

/// Trains through all states and extracts validation and test logits after each.
pub fn run_incremental(
    dataset: &IncrementalDataset,
    views: &StateViews,
    config: &BackboneConfig,
) -> Result<IncrementalRun> {
    let provenance = Provenance {
        dataset: dataset.name.clone(),
        backbone: config.kind.as_str().to_string(),
        seed: config.seed,
    };
    let schedule = &views.schedule;
    let mut model = train_initial(config, dataset, views)?;
    let mut validation = Vec::with_capacity(views.num_states());
    let mut test = Vec::with_capacity(views.num_states());
    for s in 1..=views.num_states() {
        if s > 1 {
            model = update(&model, dataset, views, s, config)?;
        }
        validation.push(extract_logits(
            &model,
            dataset,
            views.eval(Split::Validation, s),
            s,
            schedule,
            provenance.clone(),
        )?);
        test.push(extract_logits(
            &model,
            dataset,
            views.eval(Split::Test, s),
            s,
            schedule,
            provenance.clone(),
        )?);
    }
    Ok(IncrementalRun {
        validation,
        test,
        final_model: model,
    })
}

