//! Self-checks shared by the command line, the C interface and the tests.

use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::config::{ModelConfig, PoolOp};
use crate::corpus::{CLS, NUM_SPECIAL, SEP};
use crate::encoder::plan_pool;
use crate::error::{FunnelError, Result};
use crate::gradcheck::{grad_check_with, Coords, GradCheckReport, Stencil};
#[cfg(test)]
use crate::gradcheck::DEFAULT_EPS;
use crate::model::forward_with;
use crate::objectives::{mlm_loss, MaskPlan};
use crate::params::{Bound, ModelParams};
use crate::relattn::{position_term, AttnVariant};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const ATTN_WIDTHS: [usize; 3] = [4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttnReport {
    pub trials: usize,
    pub pooled_trials: usize,
    pub max_dev_gather: f64,
    pub max_dev_factorized: f64,
}

impl AttnReport {
    pub fn max_dev(&self) -> f64 {
        self.max_dev_gather.max(self.max_dev_factorized)
    }
}

/// One random position-score case: `(queries, u, W_R, q_pos, k_pos, pooled)`.
pub struct AttnCase {
    pub q: Tensor,
    pub u: Tensor,
    pub w_r: Tensor,
    pub q_pos: Vec<i64>,
    pub k_pos: Vec<i64>,
    pub pooled: bool,
}

/// Keys at `0..T`. Every other case takes its queries from one or two
/// pooling steps of the key sequence, so queries sit at a subset of the key
/// positions as they do in a block-transition layer.
pub fn attn_case(rng: &mut Rng, trial: usize, max_t: usize, max_d: usize) -> Result<AttnCase> {
    let widths: Vec<usize> = ATTN_WIDTHS.iter().copied().filter(|&d| d <= max_d).collect();
    if widths.is_empty() || max_t == 0 {
        return Err(FunnelError::Validation(format!(
            "no case fits max_t={max_t}, max_d={max_d} (widths are {ATTN_WIDTHS:?})"
        )));
    }
    let d = widths[rng.below(widths.len())];
    let t = 1 + rng.below(max_t);
    let k_pos: Vec<i64> = (0..t as i64).collect();
    let pooled = trial % 2 == 1;
    let mut q_pos = k_pos.clone();
    if pooled {
        for _ in 0..1 + rng.below(2) {
            let mask = vec![true; q_pos.len()];
            q_pos = plan_pool(&q_pos, &mask, PoolOp::Mean, true, t.is_power_of_two(), None)?.pos;
        }
    }
    Ok(AttnCase {
        q: rng.tensor_normal(&[q_pos.len(), d], 1.0),
        u: rng.tensor_normal(&[d], 1.0),
        w_r: rng.tensor_normal(&[d, d], 1.0),
        q_pos,
        k_pos,
        pooled,
    })
}

/// Compare the gather and factorized score routes against the naive one.
pub fn verify_attention(trials: usize, max_t: usize, max_d: usize, seed: u64) -> Result<AttnReport> {
    let mut rng = Rng::new(seed);
    let mut r = AttnReport {
        trials,
        pooled_trials: 0,
        max_dev_gather: 0.0,
        max_dev_factorized: 0.0,
    };
    for trial in 0..trials {
        let c = attn_case(&mut rng, trial, max_t, max_d)?;
        let score = |v| position_term(v, &c.q, &c.q_pos, &c.k_pos, &c.w_r, &c.u);
        let naive = score(AttnVariant::Naive)?;
        r.max_dev_gather = r.max_dev_gather.max(naive.max_abs_diff(&score(AttnVariant::GatherShift)?));
        r.max_dev_factorized = r
            .max_dev_factorized
            .max(naive.max_abs_diff(&score(AttnVariant::Factorized)?));
        r.pooled_trials += usize::from(c.pooled);
    }
    Ok(r)
}

/// A full-length random input: `[CLS] words [SEP]` and a plan masking
/// `masked` word positions.
pub fn random_mlm_input(t: usize, vocab: usize, masked: usize, rng: &mut Rng) -> (Vec<usize>, Vec<bool>, MaskPlan) {
    let mut ids: Vec<usize> = (0..t).map(|_| NUM_SPECIAL + rng.below(vocab - NUM_SPECIAL)).collect();
    ids[0] = CLS;
    ids[t - 1] = SEP;
    let mut positions: Vec<usize> = rng
        .subset(t.saturating_sub(2), masked.min(t.saturating_sub(2)))
        .into_iter()
        .map(|i| i + 1)
        .collect();
    positions.sort_unstable();
    let originals = positions.iter().map(|&p| ids[p]).collect();
    (ids, vec![true; t], MaskPlan { positions, originals })
}

#[derive(Debug, Clone)]
pub struct ModelGradCheck {
    pub report: GradCheckReport,
    /// Name of the tensor holding the worst coordinate.
    pub worst_tensor: Option<String>,
}

/// Finite-difference check of the MLM loss through encoder and decoder.
///
/// Dropout must be off. `init_std`, when given, redraws every weight matrix
/// and `u`/`v` at that scale; larger weights keep gradients well above the
/// finite-difference noise floor.
pub fn model_grad_check(
    cfg: &ModelConfig,
    t: usize,
    seed: u64,
    eps: f64,
    stencil: Stencil,
    per_tensor: usize,
    init_std: Option<f64>,
) -> Result<ModelGradCheck> {
    if cfg.dropout > 0.0 || cfg.attn_dropout > 0.0 {
        return Err(FunnelError::Contract("gradient check needs dropout off".into()));
    }
    let mut rng = Rng::new(seed);
    let mut params = ModelParams::init(&cfg.layout, cfg.vocab_size, false, &mut rng);
    if let Some(std) = init_std {
        for (name, p) in params.iter_mut() {
            let leaf = name.rsplit('.').next().unwrap_or("");
            if p.rank() == 2 || leaf == "u" || leaf == "v" {
                *p = rng.tensor_normal(p.shape(), std);
            }
        }
    }
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let tensors: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let (ids, valid, plan) = random_mlm_input(t, cfg.vocab_size, (t / 4).max(1), &mut rng);
    let masked = plan.apply(&ids);
    let f = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let bound = Bound::from_vars(&names, vars);
        let mut r = Rng::new(0);
        let out = forward_with(tape, cfg, &bound, &masked, &valid, true, &mut r)?;
        mlm_loss(tape, out.tokens(), bound.get("embed.word")?, &plan)
    };
    let coords = if per_tensor == 0 {
        Coords::All
    } else {
        Coords::Sample { per_tensor, seed }
    };
    let report = grad_check_with(f, &tensors, eps, coords, stencil)?;
    let worst_tensor = report.worst.map(|w| names[w.0].clone());
    Ok(ModelGradCheck { report, worst_tensor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::parse_layout;

    #[test]
    fn routes_agree() {
        let r = verify_attention(20, 16, 16, 5).unwrap();
        assert_eq!(r.pooled_trials, 10);
        assert!(r.max_dev() < 1e-10, "{r:?}");
    }

    #[test]
    fn zero_trials_is_vacuous() {
        assert_eq!(verify_attention(0, 16, 16, 0).unwrap().max_dev(), 0.0);
    }

    #[test]
    fn pooled_queries_are_key_subset() {
        let mut rng = Rng::new(9);
        for trial in 0..40 {
            let c = attn_case(&mut rng, trial, 16, 16).unwrap();
            assert!(c.q_pos.iter().all(|p| c.k_pos.contains(p)));
            assert_eq!(c.pooled, trial % 2 == 1);
        }
    }

    #[test]
    fn gradcheck_refuses_dropout() {
        let mut cfg = ModelConfig::new(parse_layout("L1H64").unwrap(), 12);
        cfg.dropout = 0.1;
        assert_eq!(model_grad_check(&cfg, 8, 0, DEFAULT_EPS, Stencil::Two, 1, None).unwrap_err().category(), "contract");
    }
}
