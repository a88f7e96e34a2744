//! Experiment configuration (TOML, `version = 1`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::OverlapMode;
use crate::model::TransformerConfig;
use crate::numerics::OptimizerConfig;
use crate::synth::Provenance;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Root for every artifact the pipeline writes.
    pub work_dir: PathBuf,
    /// Parallel training corpus; defaults to the toy layout under `work_dir`.
    #[serde(default)]
    pub train_src: Option<PathBuf>,
    #[serde(default)]
    pub train_tgt: Option<PathBuf>,
    /// Alignment file; when set, the train files are read as timed corpora.
    #[serde(default)]
    pub train_alignment: Option<PathBuf>,
    #[serde(default)]
    pub mono: Option<PathBuf>,
    #[serde(default)]
    pub dev_src: Option<PathBuf>,
    #[serde(default)]
    pub dev_tgt: Option<PathBuf>,
    #[serde(default)]
    pub test_src: Option<PathBuf>,
    #[serde(default)]
    pub test_tgt: Option<PathBuf>,
    #[serde(default)]
    pub contrastive_dev: Option<PathBuf>,
    #[serde(default)]
    pub contrastive_test: Option<PathBuf>,
    /// Group fingerprints (one hex digest per line) to keep out of training.
    #[serde(default)]
    pub exclusions: Option<PathBuf>,
}

/// Sizes of the generated agreement-language corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySizes {
    pub parallel_docs: usize,
    pub mono_docs: usize,
    pub dev_docs: usize,
    pub test_docs: usize,
    /// Content items per distance; each yields one instance per attribute value.
    pub contrastive_dev_items: usize,
    pub contrastive_test_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub max_positions: usize,
    pub tie_embeddings: bool,
}

impl ModelSettings {
    pub fn config(&self, src_vocab_size: usize, tgt_vocab_size: usize) -> TransformerConfig {
        TransformerConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            model_dim: self.model_dim,
            ff_dim: self.ff_dim,
            dropout: self.dropout,
            label_smoothing: self.label_smoothing,
            max_positions: self.max_positions,
            src_vocab_size,
            tgt_vocab_size,
            tie_embeddings: self.tie_embeddings,
        }
    }
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = TransformerConfig::desk(1, 1);
        Self {
            num_layers: d.num_layers,
            num_heads: d.num_heads,
            model_dim: d.model_dim,
            ff_dim: d.ff_dim,
            dropout: d.dropout,
            label_smoothing: d.label_smoothing,
            max_positions: d.max_positions,
            tie_embeddings: d.tie_embeddings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtSettings {
    pub src_merges: usize,
    pub tgt_merges: usize,
    pub steps: u64,
    pub batch_tokens: usize,
    pub checkpoint_every: u64,
    pub average_last: usize,
    pub beam: usize,
    pub overlap_mode: OverlapMode,
    pub overlap_threshold: f64,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepairSettings {
    pub group_size: usize,
    pub stride: usize,
    pub pool_size: usize,
    pub temperature: f64,
    pub noise: f64,
    pub provenance: Provenance,
    pub batch_tokens: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub patience: usize,
    pub average_last: usize,
    pub beam: usize,
    /// Dev groups decoded at each evaluation.
    pub dev_groups: usize,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub lowercase: bool,
    /// Decoding/scoring threads; 0 uses all available cores.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub paths: Paths,
    pub toy: ToySizes,
    pub model: ModelSettings,
    pub mt: MtSettings,
    pub repair: RepairSettings,
    pub eval: EvalSettings,
}

impl ExperimentConfig {
    /// Agreement-language experiment sized for a single CPU core.
    pub fn toy(work_dir: impl Into<PathBuf>) -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 1,
            paths: Paths {
                work_dir: work_dir.into(),
                train_src: None,
                train_tgt: None,
                train_alignment: None,
                mono: None,
                dev_src: None,
                dev_tgt: None,
                test_src: None,
                test_tgt: None,
                contrastive_dev: None,
                contrastive_test: None,
                exclusions: None,
            },
            toy: ToySizes {
                parallel_docs: 300,
                mono_docs: 400,
                dev_docs: 30,
                test_docs: 60,
                contrastive_dev_items: 20,
                contrastive_test_items: 100,
            },
            model: ModelSettings::default(),
            mt: MtSettings {
                src_merges: 1000,
                tgt_merges: 1000,
                steps: 1200,
                batch_tokens: 300,
                checkpoint_every: 100,
                average_last: 5,
                beam: 4,
                overlap_mode: OverlapMode::Iou,
                overlap_threshold: 0.9,
                optimizer: OptimizerConfig {
                    warmup_steps: 400,
                    scale: 0.04,
                    ..OptimizerConfig::default()
                },
            },
            repair: RepairSettings {
                group_size: 4,
                stride: 1,
                pool_size: 20,
                temperature: 0.5,
                noise: 0.1,
                provenance: Provenance::RoundTrip,
                batch_tokens: 500,
                max_steps: 4000,
                eval_every: 200,
                patience: 5,
                average_last: 5,
                beam: 4,
                dev_groups: 40,
                optimizer: OptimizerConfig {
                    warmup_steps: 400,
                    scale: 0.04,
                    ..OptimizerConfig::default()
                },
            },
            eval: EvalSettings {
                lowercase: true,
                workers: 0,
            },
        }
    }

    /// A much smaller toy run for smoke and determinism checks.
    pub fn toy_small(work_dir: impl Into<PathBuf>) -> Self {
        let mut c = Self::toy(work_dir);
        c.toy = ToySizes {
            parallel_docs: 40,
            mono_docs: 30,
            dev_docs: 6,
            test_docs: 8,
            contrastive_dev_items: 4,
            contrastive_test_items: 6,
        };
        c.model.model_dim = 16;
        c.model.ff_dim = 32;
        c.model.num_layers = 1;
        c.mt.steps = 60;
        c.mt.checkpoint_every = 10;
        c.repair.pool_size = 3;
        c.repair.max_steps = 40;
        c.repair.eval_every = 10;
        c.repair.dev_groups = 4;
        c
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        self.model.config(8, 8).validate()?;
        self.mt.optimizer.validate()?;
        self.repair.optimizer.validate()?;
        let r = &self.repair;
        if r.group_size == 0 || r.stride == 0 || r.pool_size == 0 || r.beam == 0 || self.mt.beam == 0 {
            return bad("group_size, stride, pool_size and beam must be positive".into());
        }
        if !(r.temperature > 0.0) || !(0.0..=1.0).contains(&r.noise) {
            return bad(format!("temperature {} / noise {} out of range", r.temperature, r.noise));
        }
        if self.mt.average_last == 0 || r.average_last == 0 || self.mt.checkpoint_every == 0 || r.eval_every == 0 {
            return bad("checkpoint cadence and averaging window must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mt.overlap_threshold) {
            return bad(format!("overlap threshold {}", self.mt.overlap_threshold));
        }
        let p = &self.paths;
        for path in [
            &p.train_src,
            &p.train_tgt,
            &p.train_alignment,
            &p.mono,
            &p.dev_src,
            &p.dev_tgt,
            &p.test_src,
            &p.test_tgt,
            &p.contrastive_dev,
            &p.contrastive_test,
            &p.exclusions,
        ]
        .into_iter()
        .flatten()
        {
            if !path.exists() {
                return bad(format!("{} does not exist", path.display()));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Applies `key.path=value` overrides; values parse as TOML, falling
    /// back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, PipelineError> {
        let mut root = toml::Value::try_from(self).map_err(|e| PipelineError::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("override {o:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            let mut cur = &mut root;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = cur
                    .as_table_mut()
                    .ok_or_else(|| PipelineError::Config(format!("{key}: {part} is not a table")))?;
                if i + 1 == parts.len() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                cur = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        root.try_into().map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip() {
        let c = ExperimentConfig::toy("/tmp/x");
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
        ExperimentConfig::toy_small("w").validate().unwrap();
    }

    #[test]
    fn overrides() {
        let c = ExperimentConfig::toy("w");
        let o = c
            .with_overrides(&["seed=9", "repair.noise = 0.2", "paths.work_dir=other", "repair.provenance=one_way"])
            .unwrap();
        assert_eq!(o.seed, 9);
        assert_eq!(o.repair.noise, 0.2);
        assert_eq!(o.paths.work_dir, PathBuf::from("other"));
        assert_eq!(o.repair.provenance, Provenance::OneWay);
        assert!(c.with_overrides(&["nokey"]).is_err());
        assert!(c.with_overrides(&["repair.bogus=1"]).is_err());
        assert!(c.with_overrides(&["seed=\"x\""]).is_err());
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::toy("w");
        c.version = 2;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::toy("w");
        c.repair.noise = 1.5;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::toy("w");
        c.paths.mono = Some("/definitely/missing".into());
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("version = 1\nseed = 3\n").is_err());
    }
}
