//! The JSON run-spec that drives every subcommand.

use std::path::Path;

use calib_il::backbones::{BackboneConfig, SynthSpec};
use calib_il::CalibConfig;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable that replaces the spec's seed.
pub const SEED_ENV: &str = "CALIB_IL_SEED";

/// Shape of every synthetic dataset in the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub center_scale: f64,
    pub noise_scale: f64,
    pub drift_scale: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            feature_dim: 32,
            train_per_class: 300,
            val_per_class: 10,
            test_per_class: 20,
            center_scale: 1.0,
            noise_scale: 1.0,
            drift_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Numbers of averaged reference tables to try.
    pub r_values: Vec<usize>,
    /// Random reference subsets per `R` below the number of references.
    pub samplings: usize,
    /// Also run targets with half of their training data.
    pub halve: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            r_values: vec![1, 3, 5, 9, 10],
            samplings: 10,
            halve: true,
        }
    }
}

fn default_states() -> usize {
    5
}

fn default_count() -> usize {
    10
}

/// One experiment. `seed` is mandatory unless `CALIB_IL_SEED` is set.
///
/// The `seed` fields inside `backbone` and `calibration` are ignored: every
/// run derives its own seeds from the top-level one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub seed: Option<u64>,
    #[serde(default = "default_states")]
    pub num_states: usize,
    #[serde(default = "default_count")]
    pub num_references: usize,
    #[serde(default = "default_count")]
    pub num_targets: usize,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub calibration: CalibConfig,
    #[serde(default)]
    pub sweep: SweepSpec,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            seed: Some(0),
            num_states: default_states(),
            num_references: default_count(),
            num_targets: default_count(),
            data: DataSpec::default(),
            backbone: BackboneConfig::default(),
            calibration: CalibConfig::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// Role tags for seed derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Reference,
    Target,
    Calibration,
    Sweep,
}

impl Role {
    fn stream(self) -> u64 {
        match self {
            Role::Reference => 1,
            Role::Target => 2,
            Role::Calibration => 3,
            Role::Sweep => 4,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Role::Reference => "reference",
            Role::Target => "target",
            Role::Calibration => "calibration",
            Role::Sweep => "sweep",
        }
    }
}

impl RunSpec {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Spec(e.to_string()))
    }

    /// Reads, applies the seed override from `env_seed` and validates.
    pub fn load(path: &Path, env_seed: Option<&str>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Spec(format!("{}: {e}", path.display())))?;
        let mut spec = Self::from_json(&text).map_err(|e| match e {
            CliError::Spec(m) => CliError::Spec(format!("{}: {m}", path.display())),
            other => other,
        })?;
        spec.apply_seed_override(env_seed)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn apply_seed_override(&mut self, env_seed: Option<&str>) -> CliResult<()> {
        if let Some(v) = env_seed {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::Spec(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
            self.seed = Some(seed);
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Spec(m));
        if self.seed.is_none() {
            return bad(format!("missing `seed` (set it in the spec or via {SEED_ENV})"));
        }
        if self.num_states < 2 {
            return bad(format!("num_states must be >= 2, got {}", self.num_states));
        }
        if self.data.num_classes < self.num_states {
            return bad(format!(
                "{} classes cannot fill {} states",
                self.data.num_classes, self.num_states
            ));
        }
        if self.num_references == 0 || self.num_targets == 0 {
            return bad("num_references and num_targets must be >= 1".into());
        }
        if self.sweep.samplings == 0 {
            return bad("sweep.samplings must be >= 1".into());
        }
        self.synth_spec(0).validate()?;
        self.backbone.validate()?;
        self.calibration.validate()?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated spec has a seed")
    }

    /// Seed for item `index` of `role`, from a dedicated ChaCha stream.
    pub fn derived_seed(&self, role: Role, index: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed());
        rng.set_stream(role.stream());
        rng.set_word_pos(2 * index as u128);
        rng.next_u64()
    }

    pub fn dataset_name(role: Role, index: usize) -> String {
        format!("{}_{index:02}", role.prefix())
    }

    pub fn synth_spec(&self, seed: u64) -> SynthSpec {
        let d = &self.data;
        SynthSpec {
            num_classes: d.num_classes,
            num_states: self.num_states,
            feature_dim: d.feature_dim,
            train_per_class: d.train_per_class,
            val_per_class: d.val_per_class,
            test_per_class: d.test_per_class,
            center_scale: d.center_scale,
            noise_scale: d.noise_scale,
            drift_scale: d.drift_scale,
            seed,
        }
    }

    pub fn backbone_for(&self, dataset_seed: u64) -> BackboneConfig {
        BackboneConfig {
            seed: dataset_seed,
            ..self.backbone.clone()
        }
    }

    pub fn calibration_for(&self, reference: usize) -> CalibConfig {
        CalibConfig {
            seed: self.derived_seed(Role::Calibration, reference),
            ..self.calibration.clone()
        }
    }

    /// Checks the sweep grid against the available references.
    pub fn validate_sweep(&self) -> CliResult<()> {
        if self.sweep.r_values.is_empty() {
            return Err(CliError::Spec("sweep.r_values is empty".into()));
        }
        if let Some(&r) = self
            .sweep
            .r_values
            .iter()
            .find(|&&r| r == 0 || r > self.num_references)
        {
            return Err(CliError::Spec(format!(
                "sweep R={r} outside 1..={} available references",
                self.num_references
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_seed_is_a_spec_error() {
        let spec = RunSpec::from_json("{}").unwrap();
        assert!(matches!(spec.validate(), Err(CliError::Spec(m)) if m.contains("seed")));
    }

    #[test]
    fn env_override_replaces_seed() {
        let mut spec = RunSpec::from_json(r#"{"seed": 3}"#).unwrap();
        spec.apply_seed_override(Some("17")).unwrap();
        assert_eq!(spec.seed, Some(17));
        assert!(spec.apply_seed_override(Some("x")).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunSpec::from_json(r#"{"seed": 1, "sede": 2}"#).is_err());
    }

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let spec = RunSpec::default();
        let refs: Vec<u64> = (0..10).map(|i| spec.derived_seed(Role::Reference, i)).collect();
        let mut sorted = refs.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
        assert_eq!(refs[3], spec.derived_seed(Role::Reference, 3));
        assert_ne!(refs[0], spec.derived_seed(Role::Target, 0));
    }

    #[test]
    fn sweep_r_beyond_references_is_rejected() {
        let mut spec = RunSpec::default();
        spec.sweep.r_values = vec![1, 11];
        assert!(matches!(spec.validate_sweep(), Err(CliError::Spec(_))));
    }
}
