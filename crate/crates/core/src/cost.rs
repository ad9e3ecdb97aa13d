//! Parameter counts and FLOPs.
//!
//! Two FLOPs models are provided. The linear model counts "effective
//! full-length layers" (a layer at length `T/2^k` costs `1/2^k`), which is how
//! relative cost is usually quoted. The exact model counts multiply-adds of
//! every matrix product at each layer's actual query and key lengths, with
//! one multiply-add = 2 FLOPs. Elementwise work, softmax, layer norm, pooling
//! and the output head are not counted.
//!
//! Per layer with `Tq` queries, `Tk` keys and hidden size `D`, in
//! multiply-adds:
//!
//! ```text
//! projections   2·Tq·D² (Q, O) + 2·Tk·D² (K, V)
//! attention     2·Tq·Tk·D      (scores and weighted sum)
//! position      factorized 2·Tq·D² + 4·Tq·Tk·D
//!               gather     R·D² + Tq·R·D, R = Tq + Tk − 1 table rows
//!               naive      Tq·Tk·D² + Tq·Tk·D
//! FFN           8·Tq·D²        (D→4D and 4D→D)
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};
use crate::layout::LayoutSpec;
use crate::relattn::AttnVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Encoder only.
    #[default]
    Finetune,
    /// Encoder plus decoder layers at full length.
    Pretrain,
}

impl std::str::FromStr for Mode {
    type Err = FunnelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finetune" => Ok(Mode::Finetune),
            "pretrain" => Ok(Mode::Pretrain),
            _ => Err(FunnelError::Validation(format!(
                "unknown mode {s:?} (expected finetune or pretrain)"
            ))),
        }
    }
}

/// `Σ_m L_m / 2^(m−1)`, plus one per decoder layer in pretrain mode.
pub fn effective_layers(layout: &LayoutSpec, mode: Mode) -> f64 {
    let enc: f64 = layout
        .blocks
        .iter()
        .enumerate()
        .map(|(m, b)| b.total_layers() as f64 / (1u64 << m) as f64)
        .sum();
    match mode {
        Mode::Finetune => enc,
        Mode::Pretrain => enc + layout.decoder_layers as f64,
    }
}

fn same_hidden(a: &LayoutSpec, b: &LayoutSpec) -> Result<()> {
    if a.hidden != b.hidden {
        return Err(FunnelError::Validation(format!(
            "hidden sizes differ: {} has {}, {} has {}",
            a, a.hidden, b, b.hidden
        )));
    }
    Ok(())
}

/// Linear-model FLOPs of `a` relative to `b`, unrounded. The baseline is
/// always costed as an encoder.
pub fn flops_ratio(a: &LayoutSpec, b: &LayoutSpec, mode: Mode) -> Result<f64> {
    same_hidden(a, b)?;
    Ok(effective_layers(a, mode) / effective_layers(b, Mode::Finetune))
}

/// Half-up rounding to two decimals, the display convention for ratios.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Sequence length after one pooling step with separate [CLS] and
/// truncation.
pub fn pooled_len(n: usize) -> usize {
    let out = 1 + (n - 1).div_ceil(2);
    if n >= 2 && n.is_power_of_two() {
        out - 1
    } else {
        out
    }
}

/// Multiply-adds of one layer.
pub fn layer_macs(tq: u64, tk: u64, d: u64, variant: AttnVariant) -> u64 {
    let proj = 2 * tq * d * d + 2 * tk * d * d;
    let attn = 2 * tq * tk * d;
    let pos = match variant {
        AttnVariant::Factorized => 2 * tq * d * d + 4 * tq * tk * d,
        AttnVariant::GatherShift => {
            let r = tq + tk - 1;
            r * d * d + tq * r * d
        }
        AttnVariant::Naive => tq * tk * d * d + tq * tk * d,
    };
    proj + attn + pos + 8 * tq * d * d
}

/// Exact FLOPs for one sequence of length `t`.
pub fn flops_exact(layout: &LayoutSpec, t: usize, mode: Mode, variant: AttnVariant) -> Result<u64> {
    if t == 0 || !t.is_power_of_two() {
        return Err(FunnelError::Validation(format!("sequence length {t} is not a power of two")));
    }
    let d = layout.hidden as u64;
    let mut macs = 0u64;
    let mut len = t;
    for (m, block) in layout.blocks.iter().enumerate() {
        let mut layers = block.total_layers();
        if m > 0 {
            let prev = len;
            len = pooled_len(prev);
            macs += layer_macs(len as u64, prev as u64, d, variant);
            layers -= 1;
        }
        macs += layers as u64 * layer_macs(len as u64, len as u64, d, variant);
    }
    if mode == Mode::Pretrain {
        macs += layout.decoder_layers as u64 * layer_macs(t as u64, t as u64, d, variant);
    }
    Ok(2 * macs)
}

/// Parameters of one attention + FFN layer: `12D² + 15D`.
pub fn layer_params(d: u64) -> u64 {
    let attn = 4 * d * d + 4 * d + 2 * d + 2 * d; // QKVO + biases, u/v, layer norm
    let ffn = 8 * d * d + 5 * d + 2 * d; // two matrices + biases, layer norm
    attn + ffn
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub layout: String,
    pub mode: Mode,
    pub vocab: usize,
    pub seq_len: usize,
    pub params_total: u64,
    pub params_transformer: u64,
    pub params_embedding: u64,
    pub effective_layers: f64,
    pub flops_exact: u64,
}

/// Parameter inventory:
///
/// * embedding `V·D` (shared with the MLM output) plus its layer norm `2D`;
/// * `12D² + 15D` per unique layer (tied repeats count once), decoder layers
///   only in pretrain mode;
/// * one `D×D` relative projection per stack (encoder, and decoder in
///   pretrain mode).
///
/// `params_transformer` counts layers only.
pub fn param_count(layout: &LayoutSpec, vocab: usize, mode: Mode) -> (u64, u64, u64) {
    let d = layout.hidden as u64;
    let embedding = vocab as u64 * d + 2 * d;
    let mut layers = layout.unique_layers() as u64;
    let mut stacks = 1;
    if mode == Mode::Pretrain && layout.decoder_layers > 0 {
        layers += layout.decoder_layers as u64;
        stacks += 1;
    }
    let transformer = layers * layer_params(d);
    (embedding + transformer + stacks * d * d, transformer, embedding)
}

pub fn analyze(layout: &LayoutSpec, vocab: usize, t: usize, mode: Mode, variant: AttnVariant) -> Result<CostReport> {
    let (total, transformer, embedding) = param_count(layout, vocab, mode);
    Ok(CostReport {
        layout: layout.to_string(),
        mode,
        vocab,
        seq_len: t,
        params_total: total,
        params_transformer: transformer,
        params_embedding: embedding,
        effective_layers: effective_layers(layout, mode),
        flops_exact: flops_exact(layout, t, mode, variant)?,
    })
}

impl CostReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let rows: [(&str, String); 9] = [
            ("layout", self.layout.clone()),
            ("mode", format!("{:?}", self.mode).to_lowercase()),
            ("vocab", self.vocab.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("effective_layers", self.effective_layers.to_string()),
            ("params_total", self.params_total.to_string()),
            ("params_transformer", self.params_transformer.to_string()),
            ("params_embedding", self.params_embedding.to_string()),
            ("flops_exact", self.flops_exact.to_string()),
        ];
        for (k, v) in rows {
            writeln!(s, "{k:<20}{v}").expect("string write");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub layout: String,
    /// Linear model, unrounded.
    pub flops_linear: f64,
    pub flops_exact: f64,
    pub params: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub baseline: String,
    pub mode: Mode,
    pub seq_len: usize,
    pub vocab: usize,
    pub rows: Vec<CompareRow>,
}

/// Ratios of each layout to `baseline`. Every layout must share the
/// baseline's hidden size.
pub fn compare_report(
    layouts: &[LayoutSpec],
    baseline: &LayoutSpec,
    t: usize,
    mode: Mode,
    vocab: usize,
) -> Result<CompareReport> {
    let variant = AttnVariant::default();
    let base_flops = flops_exact(baseline, t, Mode::Finetune, variant)? as f64;
    let base_params = param_count(baseline, vocab, Mode::Finetune).0 as f64;
    let mut rows = Vec::with_capacity(layouts.len());
    for l in layouts {
        rows.push(CompareRow {
            layout: l.to_string(),
            flops_linear: flops_ratio(l, baseline, mode)?,
            flops_exact: flops_exact(l, t, mode, variant)? as f64 / base_flops,
            params: param_count(l, vocab, mode).0 as f64 / base_params,
        });
    }
    Ok(CompareReport {
        baseline: baseline.to_string(),
        mode,
        seq_len: t,
        vocab,
        rows,
    })
}

impl CompareReport {
    /// Aligned table with ratios shown to two decimals.
    pub fn to_text(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.layout.len())
            .chain([self.baseline.len(), "layout".len()])
            .max()
            .unwrap_or(6);
        let mut s = String::new();
        writeln!(
            s,
            "baseline {} | mode {} | T={} | V={}",
            self.baseline,
            format!("{:?}", self.mode).to_lowercase(),
            self.seq_len,
            self.vocab
        )
        .expect("string write");
        writeln!(s, "{:<w$}  {:>12}  {:>11}  {:>6}", "layout", "flops_linear", "flops_exact", "params")
            .expect("string write");
        for r in &self.rows {
            writeln!(
                s,
                "{:<w$}  {:>12.2}  {:>11.2}  {:>6.2}",
                r.layout,
                round2(r.flops_linear),
                round2(r.flops_exact),
                round2(r.params)
            )
            .expect("string write");
        }
        s
    }
}
