//! Restores full length from the compressed sequence for token-level heads.

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::encoder::{attn_settings, layer, EncoderState};
use crate::error::{FunnelError, Result};
use crate::params::{decoder_layer_prefix, Bound};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct DecoderOutput {
    /// `h1 + upsample(hM)`, the decoder input.
    pub g: Var,
    /// After the decoder layers (equal to `g` when there are none).
    pub hidden: Var,
}

/// Row `i` of the result is row `i / rate` of `h`.
pub fn upsample(tape: &mut Tape, h: Var, rate: usize, t: usize) -> Result<Var> {
    let tm = tape.value(h).dims2().0;
    if rate == 0 || tm * rate != t {
        return Err(FunnelError::Contract(format!(
            "cannot upsample {tm} rows by {rate} to length {t}"
        )));
    }
    let idx: Vec<usize> = (0..t).map(|i| i / rate).collect();
    tape.select_rows(h, &idx)
}

/// Plain-tensor `upsample`.
pub fn upsample_tensor(h: &Tensor, rate: usize, t: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(h.clone());
    let out = upsample(&mut tape, v, rate, t)?;
    Ok(tape.value(out).clone())
}

/// Fuse block-1 and last-block states, then run the decoder layers at full
/// length with positions `0..T`.
///
/// A single-block encoder has nothing to recover, so its output is used as
/// `g` directly.
pub fn decoder_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &Bound,
    enc: &EncoderState,
    rng: &mut Rng,
) -> Result<DecoderOutput> {
    let h1 = enc.h1();
    let t = h1.len();
    let g = if enc.blocks.len() == 1 {
        h1.hidden
    } else {
        let up = upsample(tape, enc.last().hidden, cfg.layout.upsample_rate(), t)?;
        tape.add(h1.hidden, up)?
    };
    let mut h = g;
    if cfg.layout.decoder_layers > 0 {
        let s = attn_settings(cfg);
        let w_r = bound.get("dec.rel_proj")?;
        let pos: Vec<i64> = (0..t as i64).collect();
        for k in 0..cfg.layout.decoder_layers {
            let prefix = decoder_layer_prefix(k);
            h = layer(tape, bound, &prefix, w_r, &s, h, h, &pos, &pos, &h1.mask, rng)?.0;
        }
    }
    Ok(DecoderOutput { g, hidden: h })
}
