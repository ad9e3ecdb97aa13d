//! Named parameter tree and its binding onto a tape.
//!
//! Names are dot-separated paths:
//!
//! ```text
//! embed.word                       [V, D]   (also the tied MLM output matrix)
//! embed.ln.{gamma,beta}            [D]
//! enc.rel_proj                     [D, D]   shared by every encoder layer
//! enc.block{m}.layer{k}.attn.*     one entry per unique parameter set k
//! enc.block{m}.layer{k}.ffn.*
//! dec.rel_proj                     [D, D]
//! dec.layer{k}.{attn,ffn}.*
//! head.disc.{w,b}                  [D, 1], [1]   (ELECTRA discriminator)
//! ```

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::error::{FunnelError, Result};
use crate::layout::LayoutSpec;
use crate::relattn::{AttnWeights, FfnWeights};
use crate::rng::Rng;
use crate::tensor::{DType, Tensor};

pub const INIT_STD: f64 = 0.02;

const ATTN_TENSORS: [&str; 12] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "u", "v", "ln.gamma", "ln.beta",
];
const FFN_TENSORS: [&str; 6] = ["w1", "b1", "w2", "b2", "ln.gamma", "ln.beta"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a tensor; an existing name is rejected.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(FunnelError::DuplicateName(name));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        match self.tensors.get_mut(name) {
            Some(slot) if slot.shape() == t.shape() => {
                *slot = t;
                Ok(())
            }
            Some(slot) => Err(FunnelError::ShapeMismatch {
                name: name.to_string(),
                expected: slot.shape().to_vec(),
                found: t.shape().to_vec(),
            }),
            None => Err(FunnelError::MissingTensor(name.to_string())),
        }
    }

    /// Entries sorted by name.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn to_dtype(&mut self, dtype: DType) {
        for t in self.tensors.values_mut() {
            *t = t.to_dtype(dtype);
        }
    }

    /// Check names and shapes against an expected inventory.
    pub fn check_shapes(&self, expected: &BTreeMap<String, Vec<usize>>) -> Result<()> {
        for (name, shape) in expected {
            match self.tensors.get(name) {
                None => return Err(FunnelError::MissingTensor(name.clone())),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(FunnelError::ShapeMismatch {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: t.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(FunnelError::UnexpectedTensor(extra.clone()));
        }
        Ok(())
    }

    /// Random initialization: weight matrices and `u`/`v` from a truncated
    /// normal (std 0.02), biases zero, layer-norm gain one.
    pub fn init(layout: &LayoutSpec, vocab: usize, disc_head: bool, rng: &mut Rng) -> Self {
        let mut params = ModelParams::new();
        for (name, shape) in param_shapes(layout, vocab, disc_head) {
            let t = if name.ends_with("ln.gamma") {
                Tensor::ones(&shape)
            } else if is_zero_init(&name) {
                Tensor::zeros(&shape)
            } else {
                rng.tensor_truncated_normal(&shape, INIT_STD)
            };
            params.insert(name, t).expect("unique generated names");
        }
        params
    }
}

fn is_zero_init(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    matches!(leaf, "bq" | "bk" | "bv" | "bo" | "b1" | "b2" | "b" | "beta")
}

pub fn encoder_layer_prefix(block: usize, set: usize) -> String {
    format!("enc.block{block}.layer{set}")
}

pub fn decoder_layer_prefix(layer: usize) -> String {
    format!("dec.layer{layer}")
}

fn layer_shapes(prefix: &str, d: usize, ffn: usize, out: &mut BTreeMap<String, Vec<usize>>) {
    for t in ATTN_TENSORS {
        let shape = match t {
            "wq" | "wk" | "wv" | "wo" => vec![d, d],
            _ => vec![d],
        };
        out.insert(format!("{prefix}.attn.{t}"), shape);
    }
    for t in FFN_TENSORS {
        let shape = match t {
            "w1" => vec![d, ffn],
            "b1" => vec![ffn],
            "w2" => vec![ffn, d],
            _ => vec![d],
        };
        out.insert(format!("{prefix}.ffn.{t}"), shape);
    }
}

/// The full parameter inventory of a model.
pub fn param_shapes(layout: &LayoutSpec, vocab: usize, disc_head: bool) -> BTreeMap<String, Vec<usize>> {
    let d = layout.hidden;
    let ffn = layout.ffn_inner();
    let mut out = BTreeMap::new();
    out.insert("embed.word".into(), vec![vocab, d]);
    out.insert("embed.ln.gamma".into(), vec![d]);
    out.insert("embed.ln.beta".into(), vec![d]);
    out.insert("enc.rel_proj".into(), vec![d, d]);
    for (m, block) in layout.blocks.iter().enumerate() {
        for k in 0..block.unique_layers {
            layer_shapes(&encoder_layer_prefix(m, k), d, ffn, &mut out);
        }
    }
    if layout.decoder_layers > 0 {
        out.insert("dec.rel_proj".into(), vec![d, d]);
        for k in 0..layout.decoder_layers {
            layer_shapes(&decoder_layer_prefix(k), d, ffn, &mut out);
        }
    }
    if disc_head {
        out.insert("head.disc.w".into(), vec![d, 1]);
        out.insert("head.disc.b".into(), vec![1]);
    }
    out
}

/// Every parameter registered as a differentiable leaf.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(tape: &mut Tape, params: &ModelParams) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone())))
            .collect();
        Bound { vars }
    }

    /// Bind leaves created elsewhere, paired with names in order.
    pub fn from_vars<'a>(names: impl IntoIterator<Item = &'a String>, vars: &[Var]) -> Self {
        Bound {
            vars: names.into_iter().cloned().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| FunnelError::MissingTensor(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn attn(&self, prefix: &str) -> Result<AttnWeights> {
        let g = |t: &str| self.get(&format!("{prefix}.attn.{t}"));
        Ok(AttnWeights {
            wq: g("wq")?,
            bq: g("bq")?,
            wk: g("wk")?,
            bk: g("bk")?,
            wv: g("wv")?,
            bv: g("bv")?,
            wo: g("wo")?,
            bo: g("bo")?,
            u: g("u")?,
            v: g("v")?,
            ln_gamma: g("ln.gamma")?,
            ln_beta: g("ln.beta")?,
        })
    }

    pub fn ffn(&self, prefix: &str) -> Result<FfnWeights> {
        let g = |t: &str| self.get(&format!("{prefix}.ffn.{t}"));
        Ok(FfnWeights {
            w1: g("w1")?,
            b1: g("b1")?,
            w2: g("w2")?,
            b2: g("b2")?,
            ln_gamma: g("ln.gamma")?,
            ln_beta: g("ln.beta")?,
        })
    }
}
