//! The compressing encoder: blocks of relative-attention layers with
//! stride-2 pooling between blocks.

pub mod pool;

pub use pool::{
    apply_pool, key_scores, plan_pool, pool_pair, pool_step, pool_top_attn, top_half, PoolPlan,
};

use crate::autodiff::{Tape, Var};
use crate::config::{ModelConfig, PoolOp};
use crate::error::{FunnelError, Result};
use crate::params::{encoder_layer_prefix, Bound};
use crate::relattn::{attention, pffn, AttnSettings, LAYER_NORM_EPS};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Final hidden state of one block with the ids and mask it was computed at.
#[derive(Debug, Clone)]
pub struct BlockState {
    pub hidden: Var,
    pub pos: Vec<i64>,
    pub mask: Vec<bool>,
}

impl BlockState {
    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderState {
    pub blocks: Vec<BlockState>,
    /// Attention map of the last layer of the last block, one per head.
    pub last_probs: Vec<Tensor>,
}

impl EncoderState {
    /// Block-1 output, kept at full length for the decoder.
    pub fn h1(&self) -> &BlockState {
        &self.blocks[0]
    }

    pub fn last(&self) -> &BlockState {
        self.blocks.last().expect("at least one block")
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.blocks.iter().map(BlockState::len).collect()
    }
}

pub(crate) fn attn_settings(cfg: &ModelConfig) -> AttnSettings {
    AttnSettings {
        heads: cfg.layout.heads(),
        head_dim: cfg.layout.head_dim(),
        variant: cfg.attn_variant,
        dropout: cfg.dropout,
        attn_dropout: cfg.attn_dropout,
    }
}

/// Word embedding lookup followed by layer norm and dropout.
pub fn embed(tape: &mut Tape, cfg: &ModelConfig, bound: &Bound, ids: &[usize], rng: &mut Rng) -> Result<Var> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(FunnelError::Validation(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let e = tape.select_rows(bound.get("embed.word")?, ids)?;
    let e = tape.layer_norm(
        e,
        bound.get("embed.ln.gamma")?,
        bound.get("embed.ln.beta")?,
        LAYER_NORM_EPS,
    )?;
    tape.dropout(e, cfg.dropout, rng)
}

/// One attention + FFN layer. Queries come from `q_in` at `q_pos`; keys and
/// values from `kv_in` at `k_pos` under `key_mask`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    w_r: Var,
    s: &AttnSettings,
    q_in: Var,
    kv_in: Var,
    q_pos: &[i64],
    k_pos: &[i64],
    key_mask: &[bool],
    rng: &mut Rng,
) -> Result<(Var, Vec<Tensor>)> {
    let a = attention(tape, q_in, kv_in, q_pos, k_pos, key_mask, &bound.attn(prefix)?, w_r, s, rng)?;
    let out = pffn(tape, a.out, &bound.ffn(prefix)?, s.dropout, rng)?;
    Ok((out, a.probs))
}

/// Run the encoder over one sequence. `valid[i]` marks real tokens.
///
/// Block 1 runs at full length. Each later block pools the previous block's
/// output, and its first layer attends from the pooled queries to the
/// unpooled keys and values (or to the pooled sequence when
/// `pool_query_only` is off).
pub fn encoder_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &Bound,
    ids: &[usize],
    valid: &[bool],
    rng: &mut Rng,
) -> Result<EncoderState> {
    let t = ids.len();
    if t == 0 || valid.len() != t {
        return Err(FunnelError::Contract(format!(
            "{t} token ids with {} mask entries",
            valid.len()
        )));
    }
    if cfg.truncate_seq && !t.is_power_of_two() {
        return Err(FunnelError::Contract(format!(
            "sequence length {t} is not a power of two (pad it or disable truncation)"
        )));
    }
    let s = attn_settings(cfg);
    let w_r = bound.get("enc.rel_proj")?;
    let mut h = embed(tape, cfg, bound, ids, rng)?;
    let mut pos: Vec<i64> = (0..t as i64).collect();
    let mut mask = valid.to_vec();
    let mut probs: Vec<Tensor> = Vec::new();
    // attention received by each current position, for top-attn pooling
    let mut scores: Vec<f64> = Vec::new();
    let mut blocks = Vec::with_capacity(cfg.layout.num_blocks());

    for (m, block) in cfg.layout.blocks.iter().enumerate() {
        let mut first = 0;
        if m > 0 {
            let top = cfg.pool_op == PoolOp::TopAttn;
            let plan = plan_pool(
                &pos,
                &mask,
                cfg.pool_op,
                cfg.separate_cls,
                cfg.truncate_seq,
                top.then_some(scores.as_slice()),
            )?;
            let pooled = apply_pool(tape, h, &plan, cfg.pool_op)?;
            let prefix = encoder_layer_prefix(m, block.param_set(0));
            let (out, p) = if cfg.pool_query_only {
                layer(tape, bound, &prefix, w_r, &s, pooled, h, &plan.pos, &pos, &mask, rng)?
            } else {
                layer(tape, bound, &prefix, w_r, &s, pooled, pooled, &plan.pos, &plan.pos, &plan.mask, rng)?
            };
            h = out;
            scores = if cfg.pool_query_only {
                // keys were the unpooled rows: credit each pooled row with
                // the attention its source rows received
                let unpooled = key_scores(&p);
                plan.windows.iter().map(|w| w.iter().map(|&i| unpooled[i]).sum()).collect()
            } else {
                key_scores(&p)
            };
            probs = p;
            pos = plan.pos;
            mask = plan.mask;
            first = 1;
        }
        for k in first..block.total_layers() {
            let prefix = encoder_layer_prefix(m, block.param_set(k));
            let (out, p) = layer(tape, bound, &prefix, w_r, &s, h, h, &pos, &pos, &mask, rng)?;
            h = out;
            scores = key_scores(&p);
            probs = p;
        }
        blocks.push(BlockState {
            hidden: h,
            pos: pos.clone(),
            mask: mask.clone(),
        });
    }
    Ok(EncoderState {
        blocks,
        last_probs: probs,
    })
}
