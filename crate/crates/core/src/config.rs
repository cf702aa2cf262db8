//! Single merged configuration for the whole pipeline.
//!
//! One file drives every stage: synthetic data generation, loss evaluation,
//! and refinement. Unknown keys are rejected on load so a typo cannot
//! silently fall back to a default, and a dumped config re-loads to an equal
//! value, which makes any run reproducible from its manifest alone.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::losses::LossConfig;
use crate::optimize::OptimizerConfig;
use crate::synth::SynthConfig;

/// Merged configuration of every module plus provenance fields.
///
/// `seed` is the run seed; it overrides `synth.seed` when the synthetic
/// section is materialized through [`PipelineConfig::effective_synth`], so a
/// single flag reseeds the whole pipeline. The `metrics` map is a statement
/// of the fixed evaluation protocol, not a knob: loading a config that
/// claims different conventions is an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Code version the config was written by.
    pub version: String,
    /// Run seed, applied to the synthetic section.
    pub seed: u64,
    pub synth: SynthConfig,
    pub losses: LossConfig,
    pub optimizer: OptimizerConfig,
    /// Evaluation protocol conventions, fixed by the metrics module.
    pub metrics: BTreeMap<String, String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: synth.seed,
            synth,
            losses: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            metrics: crate::metrics::conventions(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.version.is_empty() {
            return Err(crate::Error::validation("version", "must not be empty"));
        }
        self.synth.validate()?;
        self.losses.validate()?;
        self.optimizer.validate()?;
        if self.metrics != crate::metrics::conventions() {
            return Err(crate::Error::validation(
                "metrics",
                "evaluation conventions are fixed by the protocol and cannot \
                 be overridden; regenerate the config with `config --dump`",
            ));
        }
        Ok(())
    }

    /// The synthetic section with the run seed applied.
    pub fn effective_synth(&self) -> SynthConfig {
        SynthConfig { seed: self.seed, ..self.synth.clone() }
    }

    /// Pretty JSON, newline-terminated, suitable for `config --dump`.
    pub fn dump(&self) -> crate::Result<String> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| crate::Error::Parse {
            path: "<config dump>".into(),
            location: "serialization".into(),
            message: e.to_string(),
        })?;
        text.push('\n');
        Ok(text)
    }

    /// Loads and validates a config file.
    pub fn load(path: &Path) -> crate::Result<Self> {
        let config: Self = crate::io::load_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> crate::Result<()> {
        crate::io::save_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn dump_reloads_to_an_equal_value() {
        let config = PipelineConfig::default();
        let text = config.dump().unwrap();
        let reloaded: PipelineConfig = serde_json::from_str(&text).unwrap();
        reloaded.validate().unwrap();
        assert_eq!(reloaded, config);
        // And the dump of the reload is byte-identical.
        assert_eq!(reloaded.dump().unwrap(), text);
    }

    #[test]
    fn file_round_trip_preserves_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.json");
        let mut config = PipelineConfig::default();
        config.seed = 99;
        config.optimizer.learning_rate = 5e-3;
        config.save(&path).unwrap();
        let reloaded = PipelineConfig::load(&path).unwrap();
        assert_eq!(reloaded, config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<PipelineConfig>(r#"{"learning_rate": 0.1}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<PipelineConfig>(
            r#"{"optimizer": {"learning_rte": 0.1}}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn tampered_conventions_are_rejected() {
        let mut config = PipelineConfig::default();
        config.metrics.insert("pck_threshold".into(), "0.5 m".into());
        assert!(config.validate().is_err());
    }

    #[test]
    fn run_seed_overrides_the_synth_section() {
        let mut config = PipelineConfig::default();
        config.seed = 1234;
        config.synth.seed = 7;
        assert_eq!(config.effective_synth().seed, 1234);
    }
}
