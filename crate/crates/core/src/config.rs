//! Model and training configuration (JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};
use crate::layout::LayoutSpec;
use crate::relattn::AttnVariant;
use crate::tensor::DType;

pub const DEFAULT_VOCAB: usize = 30522;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoolOp {
    #[default]
    Mean,
    Max,
    TopAttn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Mlm,
    Electra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Masking {
    #[default]
    Single,
    Span,
}

fn yes() -> bool {
    true
}

fn default_vocab() -> usize {
    DEFAULT_VOCAB
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layout: LayoutSpec,
    #[serde(default)]
    pub pool_op: PoolOp,
    #[serde(default = "yes")]
    pub pool_query_only: bool,
    #[serde(default = "yes")]
    pub separate_cls: bool,
    #[serde(default = "yes")]
    pub truncate_seq: bool,
    #[serde(default)]
    pub attn_variant: AttnVariant,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub attn_dropout: f64,
    #[serde(default)]
    pub dtype: DType,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ModelConfig {
    pub fn new(layout: LayoutSpec, vocab_size: usize) -> Self {
        ModelConfig {
            layout,
            pool_op: PoolOp::Mean,
            pool_query_only: true,
            separate_cls: true,
            truncate_seq: true,
            attn_variant: AttnVariant::default(),
            vocab_size,
            dropout: 0.0,
            attn_dropout: 0.0,
            dtype: DType::F64,
            seed: 0,
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("dropout", self.dropout), ("attn_dropout", self.attn_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(FunnelError::Config(format!("{name} {p} not in [0, 1)")));
            }
        }
        if self.vocab_size <= crate::corpus::NUM_SPECIAL {
            return Err(FunnelError::Config(format!(
                "vocab_size {} leaves no room beyond the special tokens",
                self.vocab_size
            )));
        }
        self.train.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| FunnelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FunnelError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seq_len: usize,
    pub batch_size: usize,
    pub objective: Objective,
    pub masking: Masking,
    pub mask_rate: f64,
    pub max_span_words: usize,
    pub optimizer: OptimizerConfig,
    pub electra: ElectraConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seq_len: 16,
            batch_size: 8,
            objective: Objective::Mlm,
            masking: Masking::Single,
            mask_rate: 0.15,
            max_span_words: 5,
            optimizer: OptimizerConfig::default(),
            electra: ElectraConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.seq_len.is_power_of_two() || self.seq_len < 2 {
            return Err(FunnelError::Config(format!(
                "seq_len {} must be a power of two >= 2",
                self.seq_len
            )));
        }
        if self.batch_size == 0 {
            return Err(FunnelError::Config("batch_size must be positive".into()));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(FunnelError::Config(format!("mask_rate {} not in (0, 1)", self.mask_rate)));
        }
        if self.max_span_words == 0 {
            return Err(FunnelError::Config("max_span_words must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay, linear warmup then linear decay to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub warmup_proportion: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            warmup_proportion: 0.1,
            weight_decay: 0.01,
            adam_eps: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElectraConfig {
    pub disc_weight: f64,
    pub gen_multiplier: f64,
}

impl Default for ElectraConfig {
    fn default() -> Self {
        ElectraConfig {
            disc_weight: 50.0,
            gen_multiplier: 0.25,
        }
    }
}
