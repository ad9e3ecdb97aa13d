//! Post-norm relative multi-head attention and the position-wise FFN.

use super::position::{position_scores, AttnVariant};
use crate::autodiff::{Tape, Var};
use crate::error::{FunnelError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Tape handles for one attention sub-layer. `u` and `v` are `[D]`, one
/// `head_dim` slice per head.
#[derive(Debug, Clone, Copy)]
pub struct AttnWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub u: Var,
    pub v: Var,
    pub ln_gamma: Var,
    pub ln_beta: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct FfnWeights {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln_gamma: Var,
    pub ln_beta: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnSettings {
    pub heads: usize,
    pub head_dim: usize,
    pub variant: AttnVariant,
    pub dropout: f64,
    pub attn_dropout: f64,
}

pub struct AttnOutput {
    pub out: Var,
    /// Attention weights per head, `[Tq, Tk]` each.
    pub probs: Vec<Tensor>,
}

/// `LayerNorm(q_in + Attn(q_in, kv_in))` with relative position scores.
///
/// Per head the pre-softmax score is the content term
/// `(W_Q h_i + v)ᵀ(W_K h_j)` plus the position term, scaled by
/// `1/sqrt(head_dim)`. Keys with `key_mask[j] == false` get zero weight; a
/// query with every key masked is a numeric error.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    tape: &mut Tape,
    q_in: Var,
    kv_in: Var,
    q_pos: &[i64],
    k_pos: &[i64],
    key_mask: &[bool],
    w: &AttnWeights,
    w_r: Var,
    s: &AttnSettings,
    rng: &mut Rng,
) -> Result<AttnOutput> {
    let (tq, d) = tape.value(q_in).dims2();
    let (tk, dk) = tape.value(kv_in).dims2();
    if d != dk || d != s.heads * s.head_dim {
        return Err(FunnelError::dim("attention", tape.shape(q_in), tape.shape(kv_in)));
    }
    if q_pos.len() != tq || k_pos.len() != tk || key_mask.len() != tk {
        return Err(FunnelError::Contract(format!(
            "attention positions/mask do not match lengths (tq={tq}, tk={tk})"
        )));
    }
    let q = tape.matmul(q_in, w.wq)?;
    let q = tape.add_row(q, w.bq)?;
    let k = tape.matmul(kv_in, w.wk)?;
    let k = tape.add_row(k, w.bk)?;
    let v = tape.matmul(kv_in, w.wv)?;
    let v = tape.add_row(v, w.bv)?;

    let scale = 1.0 / (s.head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(s.heads);
    let mut probs = Vec::with_capacity(s.heads);
    for h in 0..s.heads {
        let off = h * s.head_dim;
        let qh = tape.slice_cols(q, off, s.head_dim)?;
        let kh = tape.slice_cols(k, off, s.head_dim)?;
        let vh = tape.slice_cols(v, off, s.head_dim)?;
        let u_h = tape.slice_cols(w.u, off, s.head_dim)?;
        let v_h = tape.slice_cols(w.v, off, s.head_dim)?;
        let w_rh = tape.slice_cols(w_r, off, s.head_dim)?;

        let qv = tape.add_row(qh, v_h)?;
        let content = tape.matmul_nt(qv, kh)?;
        let position = position_scores(tape, s.variant, qh, u_h, w_rh, q_pos, k_pos)?;
        let scores = tape.add(content, position)?;
        let scores = tape.scale(scores, scale);
        let p = tape.softmax(scores, Some(key_mask))?;
        probs.push(tape.value(p).clone());
        let p = tape.dropout(p, s.attn_dropout, rng)?;
        heads.push(tape.matmul(p, vh)?);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    let o = tape.matmul(cat, w.wo)?;
    let o = tape.add_row(o, w.bo)?;
    let o = tape.dropout(o, s.dropout, rng)?;
    let res = tape.add(q_in, o)?;
    let out = tape.layer_norm(res, w.ln_gamma, w.ln_beta, LAYER_NORM_EPS)?;
    Ok(AttnOutput { out, probs })
}

/// `LayerNorm(x + W2 gelu(W1 x + b1) + b2)` applied to every position.
pub fn pffn(tape: &mut Tape, x: Var, w: &FfnWeights, dropout: f64, rng: &mut Rng) -> Result<Var> {
    let h = tape.matmul(x, w.w1)?;
    let h = tape.add_row(h, w.b1)?;
    let h = tape.gelu(h);
    let h = tape.dropout(h, dropout, rng)?;
    let o = tape.matmul(h, w.w2)?;
    let o = tape.add_row(o, w.b2)?;
    let o = tape.dropout(o, dropout, rng)?;
    let res = tape.add(x, o)?;
    tape.layer_norm(res, w.ln_gamma, w.ln_beta, LAYER_NORM_EPS)
}
