//! A configured model: config plus parameters, with plain-tensor inference.

use crate::autodiff::{Tape, Var};
use crate::config::{ModelConfig, Objective};
use crate::decoder::{decoder_forward, DecoderOutput};
use crate::encoder::{encoder_forward, EncoderState};
use crate::error::Result;
use crate::params::{param_shapes, Bound, ModelParams};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FunnelModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Forward pass recorded on a tape.
#[derive(Debug, Clone)]
pub struct Forward {
    pub enc: EncoderState,
    /// Present when token-level states were requested.
    pub dec: Option<DecoderOutput>,
}

impl Forward {
    /// Full-length token states: decoder output when run, else block 1.
    pub fn tokens(&self) -> Var {
        self.dec.map_or(self.enc.h1().hidden, |d| d.hidden)
    }
}

/// Plain-tensor result of [`FunnelModel::encode`].
#[derive(Debug, Clone)]
pub struct Encoding {
    pub blocks: Vec<Tensor>,
    pub tokens: Option<Tensor>,
}

impl Encoding {
    pub fn shapes(&self) -> Vec<[usize; 2]> {
        self.blocks
            .iter()
            .map(|b| {
                let (r, c) = b.dims2();
                [r, c]
            })
            .collect()
    }

    /// Row 0 of the last block.
    pub fn cls(&self) -> &[f64] {
        self.blocks.last().expect("at least one block").row(0)
    }
}

impl FunnelModel {
    /// Freshly initialized model. ELECTRA discriminators get a binary head.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let disc = config.train.objective == Objective::Electra;
        let mut params = ModelParams::init(&config.layout, config.vocab_size, disc, &mut rng);
        params.to_dtype(config.dtype);
        Ok(FunnelModel { config, params })
    }

    /// Pair a config with loaded parameters after checking the inventory.
    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let disc = params.get("head.disc.w").is_some();
        params.check_shapes(&param_shapes(&config.layout, config.vocab_size, disc))?;
        Ok(FunnelModel { config, params })
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound::new(tape, &self.params)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        ids: &[usize],
        valid: &[bool],
        token_level: bool,
        rng: &mut Rng,
    ) -> Result<Forward> {
        forward_with(tape, &self.config, bound, ids, valid, token_level, rng)
    }

    /// Inference without dropout.
    pub fn encode(&self, ids: &[usize], valid: &[bool], token_level: bool) -> Result<Encoding> {
        let mut cfg = self.config.clone();
        cfg.dropout = 0.0;
        cfg.attn_dropout = 0.0;
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params);
        let mut rng = Rng::new(cfg.seed);
        let f = forward_with(&mut tape, &cfg, &bound, ids, valid, token_level, &mut rng)?;
        Ok(Encoding {
            blocks: f.enc.blocks.iter().map(|b| tape.value(b.hidden).clone()).collect(),
            tokens: f.dec.map(|d| tape.value(d.hidden).clone()),
        })
    }
}

/// Encoder, then (if `token_level`) the decoder.
pub fn forward_with(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &Bound,
    ids: &[usize],
    valid: &[bool],
    token_level: bool,
    rng: &mut Rng,
) -> Result<Forward> {
    let enc = encoder_forward(tape, cfg, bound, ids, valid, rng)?;
    let dec = if token_level {
        Some(decoder_forward(tape, cfg, bound, &enc, rng)?)
    } else {
        None
    };
    Ok(Forward { enc, dec })
}
