//! Synthetic Gaussian-cluster datasets standing in for reference and target datasets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::StateSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Generation parameters for one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub num_states: usize,
    pub feature_dim: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Std of the class centers.
    pub center_scale: f64,
    /// Isotropic within-class noise std.
    pub noise_scale: f64,
    /// Std of the log per-dimension feature scaling that emulates domain shift.
    /// Zero disables it.
    #[serde(default)]
    pub drift_scale: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic spec: {m}")));
        if self.num_classes == 0 || self.feature_dim == 0 || self.num_states == 0 {
            return bad("num_classes, num_states and feature_dim must be >= 1");
        }
        if self.train_per_class == 0 || self.val_per_class == 0 || self.test_per_class == 0 {
            return bad("per-class sample counts must be >= 1");
        }
        if !(self.center_scale > 0.0 && self.noise_scale > 0.0) {
            return bad("center_scale and noise_scale must be > 0");
        }
        if !(self.drift_scale >= 0.0 && self.drift_scale.is_finite()) {
            return bad("drift_scale must be >= 0");
        }
        Ok(())
    }
}

/// Labeled feature matrix with split tags and a class schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalDataset {
    pub name: String,
    pub seed: u64,
    feature_dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    splits: Vec<Split>,
    schedule: StateSchedule,
    pub spec: Option<SynthSpec>,
}

impl IncrementalDataset {
    /// Validates that features are finite, labels belong to the schedule and
    /// every class has at least one sample in each split.
    pub fn new(
        name: String,
        seed: u64,
        feature_dim: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        splits: Vec<Split>,
        schedule: StateSchedule,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be >= 1".into()));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::ShapeMismatch {
                what: "dataset features",
                expected: labels.len() * feature_dim,
                found: features.len(),
            });
        }
        if splits.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                what: "dataset split tags",
                expected: labels.len(),
                found: splits.len(),
            });
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        let c = schedule.num_classes();
        let mut seen = vec![[false; 3]; c];
        for (&y, &sp) in labels.iter().zip(&splits) {
            if y >= c {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    state: schedule.num_states(),
                });
            }
            seen[y][sp as usize] = true;
        }
        if let Some(class) = seen.iter().position(|s| !s.iter().all(|&b| b)) {
            return Err(Error::Degenerate(format!(
                "class {class} lacks samples in at least one split"
            )));
        }
        Ok(Self {
            name,
            seed,
            feature_dim,
            features,
            labels,
            splits,
            schedule,
            spec: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn schedule(&self) -> &StateSchedule {
        &self.schedule
    }

    pub fn num_classes(&self) -> usize {
        self.schedule.num_classes()
    }

    /// Keeps only the first `ceil(n / 2)` training samples of every class;
    /// validation and test samples are untouched.
    pub fn halve_training(&self) -> Self {
        let c = self.num_classes();
        let mut train_counts = vec![0usize; c];
        for (&y, &sp) in self.labels.iter().zip(&self.splits) {
            if sp == Split::Train {
                train_counts[y] += 1;
            }
        }
        let keep: Vec<usize> = train_counts.iter().map(|n| n.div_ceil(2)).collect();
        let mut taken = vec![0usize; c];
        let mut out = Self {
            features: Vec::new(),
            labels: Vec::new(),
            splits: Vec::new(),
            ..self.clone()
        };
        for i in 0..self.len() {
            let y = self.labels[i];
            if self.splits[i] == Split::Train {
                if taken[y] == keep[y] {
                    continue;
                }
                taken[y] += 1;
            }
            out.features.extend_from_slice(self.sample(i));
            out.labels.push(y);
            out.splits.push(self.splits[i]);
        }
        out.name = format!("{}-half", self.name);
        out
    }
}

/// Draws one Gaussian cluster per class.
///
/// Class centers are `center_scale * N(0, I)`, samples add `noise_scale * N(0, I)`,
/// then every feature dimension is multiplied by `exp(drift_scale * N(0, 1))`.
/// Samples are stored class by class, each class as train, validation, test.
pub fn gen_synthetic_dataset(spec: &SynthSpec, name: &str) -> Result<IncrementalDataset> {
    spec.validate()?;
    let schedule = StateSchedule::equal(spec.num_classes, spec.num_states)?;
    let d = spec.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let centers: Vec<f64> = (0..spec.num_classes * d)
        .map(|_| spec.center_scale * normal())
        .collect();
    let dim_scale: Vec<f64> = (0..d).map(|_| (spec.drift_scale * normal()).exp()).collect();

    let per_class = spec.train_per_class + spec.val_per_class + spec.test_per_class;
    let n = spec.num_classes * per_class;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for c in 0..spec.num_classes {
        let center = &centers[c * d..(c + 1) * d];
        for (split, count) in [
            (Split::Train, spec.train_per_class),
            (Split::Validation, spec.val_per_class),
            (Split::Test, spec.test_per_class),
        ] {
            for _ in 0..count {
                for j in 0..d {
                    features.push((center[j] + spec.noise_scale * normal()) * dim_scale[j]);
                }
                labels.push(c);
                splits.push(split);
            }
        }
    }
    let mut ds = IncrementalDataset::new(name.to_string(), spec.seed, d, features, labels, splits, schedule)?;
    ds.spec = Some(spec.clone());
    Ok(ds)
}

/// Sample indices of every state: training data of the new group only, and
/// validation/test data over all classes seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct StateViews {
    pub schedule: StateSchedule,
    /// `train[s - 1]`: training samples of classes first seen in state `s`.
    pub train: Vec<Vec<usize>>,
    /// `validation[s - 1]`: validation samples of classes in `N_s`.
    pub validation: Vec<Vec<usize>>,
    /// `test[s - 1]`: test samples of classes in `N_s`.
    pub test: Vec<Vec<usize>>,
}

impl StateViews {
    pub fn num_states(&self) -> usize {
        self.schedule.num_states()
    }

    pub fn eval(&self, split: Split, s: usize) -> &[usize] {
        match split {
            Split::Train => &self.train[s - 1],
            Split::Validation => &self.validation[s - 1],
            Split::Test => &self.test[s - 1],
        }
    }
}

/// Splits a dataset into `num_states` states.
///
/// Uses the dataset's own schedule when it already has `num_states` states,
/// otherwise an equal split, which requires the class count to be divisible.
pub fn split_states(dataset: &IncrementalDataset, num_states: usize) -> Result<StateViews> {
    let schedule = if dataset.schedule().num_states() == num_states {
        dataset.schedule().clone()
    } else {
        StateSchedule::equal(dataset.num_classes(), num_states)?
    };
    let mut train = vec![Vec::new(); num_states];
    let mut validation = vec![Vec::new(); num_states];
    let mut test = vec![Vec::new(); num_states];
    for (i, (&y, &sp)) in dataset.labels().iter().zip(dataset.splits()).enumerate() {
        let g = schedule.group_of(y).expect("validated label");
        match sp {
            Split::Train => train[g - 1].push(i),
            Split::Validation => (g..=num_states).for_each(|s| validation[s - 1].push(i)),
            Split::Test => (g..=num_states).for_each(|s| test[s - 1].push(i)),
        }
    }
    Ok(StateViews {
        schedule,
        train,
        validation,
        test,
    })
}
