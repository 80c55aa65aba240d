use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use wscl::corpus::DescriptionSpec;
use wscl::evalkit::EvalConfig;
use wscl::groundnet::{ModelConfig, TrainConfig};
use wscl::labeling::{BowDetector, LabelerConfig};
use wscl::scenegen::{BenchmarkConfig, DistractorConfig, FeatureConfig};
use wscl::targets::SignalConfig;

use crate::error::CliError;

/// Environment variable that overrides `output_dir`.
pub const OUT_DIR_ENV: &str = "WSCL_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelingMode {
    #[default]
    WeakToStrong,
    GroundingBaseline,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub benchmark: BenchmarkConfig,
    pub metrics: EvalConfig,
}

/// Every knob of a pipeline run in one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// `desk20`, `desk80` or a path to a pool file.
    pub pool: String,
    pub descriptions: DescriptionSpec,
    pub images_per_description: usize,
    pub distractors: DistractorConfig,
    pub features: FeatureConfig,
    pub detector: BowDetector,
    pub labeler: LabelerConfig,
    pub labeling_mode: LabelingMode,
    pub signals: SignalConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub output_dir: PathBuf,
    /// Drives scenes, labeling noise, query sampling, training and the
    /// benchmark; the description corpus uses `descriptions.seed`.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pool: "desk20".into(),
            descriptions: DescriptionSpec::default(),
            images_per_description: 8,
            distractors: DistractorConfig::default(),
            features: FeatureConfig::default(),
            detector: BowDetector::default(),
            labeler: LabelerConfig::default(),
            labeling_mode: LabelingMode::default(),
            signals: SignalConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
            output_dir: PathBuf::from("wscl-out"),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// The small corpus used for quick experiments: 5 descriptions per
    /// category and 2 scenes each, 200 scenes over `desk20`.
    pub fn small() -> Self {
        let mut c = Self::default();
        c.descriptions.num_descriptions = 5;
        c.images_per_description = 2;
        c
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        match name {
            "default" => Ok(Self::default()),
            "small" => Ok(Self::small()),
            other => Err(CliError::Config {
                path: "preset".into(),
                reason: format!("unknown preset {other:?} (expected default or small)"),
            }),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config {
            path: "<document>".into(),
            reason: e.to_string(),
        })?;
        Self::from_value(value)
    }

    fn from_value(value: Value) -> Result<Self, CliError> {
        let reference = serde_json::to_value(Self::default()).expect("config serializes");
        if let Some(path) = unknown_field(&value, &reference, "") {
            return Err(CliError::Config {
                path,
                reason: "unknown field".into(),
            });
        }
        serde_json::from_value(value).map_err(|e| CliError::Config {
            path: "<document>".into(),
            reason: e.to_string(),
        })
    }

    /// Applies `dotted.path=value` overrides; values parse as JSON and fall
    /// back to plain strings.
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self, CliError> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut doc = serde_json::to_value(&self).expect("config serializes");
        for o in overrides {
            let (path, raw) = o.split_once('=').ok_or_else(|| CliError::Config {
                path: o.clone(),
                reason: "expected dotted.path=value".into(),
            })?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, path, value)?;
        }
        Self::from_value(doc).map_err(|e| match e {
            CliError::Config { reason, .. } => CliError::Config {
                path: overrides.join(", "),
                reason,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |path: &str, reason: String| CliError::Config {
            path: path.into(),
            reason,
        };
        if self.images_per_description == 0 {
            return Err(bad("images_per_description", "must be at least 1".into()));
        }
        if self.descriptions.num_descriptions > 0 {
            self.descriptions
                .validate()
                .map_err(|e| bad("descriptions.target_length_words", e.to_string()))?;
        }
        self.labeler
            .validate()
            .map_err(|e| bad("labeler.threshold_p", e.to_string()))?;
        if !(0.0..=1.0).contains(&self.train.detection_mix_ratio) {
            return Err(bad("train.detection_mix_ratio", "must lie in [0, 1]".into()));
        }
        self.train.validate().map_err(|e| bad("train", e.to_string()))?;
        if self.features.d < 8 {
            return Err(bad("features.d", "must be at least 8".into()));
        }
        if self.model.d_in != self.features.d {
            return Err(bad(
                "model.d_in",
                format!("must equal features.d ({})", self.features.d),
            ));
        }
        if self.model.d_model == 0 || self.model.max_positions == 0 {
            return Err(bad("model", "d_model and max_positions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.benchmark.fraction_negative) {
            return Err(bad("eval.benchmark.fraction_negative", "must lie in [0, 1]".into()));
        }
        if self.eval.benchmark.n_scenes == 0 {
            return Err(bad("eval.benchmark.n_scenes", "must be positive".into()));
        }
        if self.eval.metrics.buckets.short_max >= self.eval.metrics.buckets.long_min {
            return Err(bad("eval.metrics.buckets", "short_max must be below long_min".into()));
        }
        for (path, p) in [
            ("distractors.confuser_prob", self.distractors.confuser_prob),
            ("distractors.negation_confuser_prob", self.distractors.negation_confuser_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(bad(path, "must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Canonical JSON, stable across runs.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&serde_json::to_value(self).expect("config serializes")).expect("value serializes")
    }

    /// Hash of the sections listed, excluding `output_dir`.
    pub fn section_hash(&self, sections: &[&str]) -> String {
        let doc = serde_json::to_value(self).expect("config serializes");
        let mut h = Sha256::new();
        for s in sections {
            h.update(s.as_bytes());
            h.update(b"=");
            h.update(serde_json::to_string(&doc[*s]).expect("value serializes").as_bytes());
            h.update(b";");
        }
        format!("{:x}", h.finalize())
    }
}

/// First key of `doc` absent from the matching object of `reference`.
fn unknown_field(doc: &Value, reference: &Value, prefix: &str) -> Option<String> {
    let (Value::Object(d), Value::Object(r)) = (doc, reference) else {
        return None;
    };
    d.iter().find_map(|(k, v)| {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match r.get(k) {
            None => Some(path),
            Some(rv) => unknown_field(v, rv, &path),
        }
    })
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = cur else {
            return Err(CliError::Config {
                path: path.into(),
                reason: format!("{} is not an object", parts[..i].join(".")),
            });
        };
        if !map.contains_key(*part) {
            return Err(CliError::Config {
                path: path.into(),
                reason: format!("unknown field {part:?}"),
            });
        }
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map.get_mut(*part).expect("checked above");
    }
    Err(CliError::Config {
        path: path.into(),
        reason: "empty path".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_json(&c.canonical_json()).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn dotted_overrides() {
        let c = PipelineConfig::default()
            .with_overrides(&["labeler.threshold_p=0.3".into(), "pool=desk80".into()])
            .unwrap();
        assert_eq!(c.labeler.threshold_p, 0.3);
        assert_eq!(c.pool, "desk80");
    }

    #[test]
    fn unknown_field_names_its_path() {
        let err = PipelineConfig::default()
            .with_overrides(&["labeler.treshold=0.3".into()])
            .unwrap_err();
        match err {
            CliError::Config { path, .. } => assert_eq!(path, "labeler.treshold"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_nested_field_in_a_file_is_rejected() {
        let err = PipelineConfig::from_json(r#"{"train": {"freeze": {"visaul": true}}}"#).unwrap_err();
        assert!(matches!(err, CliError::Config { path, .. } if path == "train.freeze.visaul"));
        PipelineConfig::from_json(r#"{"train": {"epochs": 3}}"#).unwrap();
    }

    #[test]
    fn invalid_values_are_reported_by_field() {
        let mut c = PipelineConfig::default();
        c.images_per_description = 0;
        assert!(matches!(c.validate(), Err(CliError::Config { path, .. }) if path == "images_per_description"));
        let c = PipelineConfig::default()
            .with_overrides(&["labeler.threshold_p=1.5".into()])
            .unwrap();
        assert!(matches!(c.validate(), Err(CliError::Config { path, .. }) if path == "labeler.threshold_p"));
    }

    #[test]
    fn section_hash_ignores_other_sections() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.train.epochs = 3;
        b.output_dir = "elsewhere".into();
        assert_eq!(a.section_hash(&["pool", "descriptions"]), b.section_hash(&["pool", "descriptions"]));
        assert_ne!(a.section_hash(&["train"]), b.section_hash(&["train"]));
    }
}
