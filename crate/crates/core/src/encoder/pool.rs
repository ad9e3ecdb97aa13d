//! Sequence pooling between encoder blocks.
//!
//! Pooling is planned on indices first ([`PoolPlan`]) and then applied on the
//! tape, so the same plan drives values, position ids and the key mask.

use crate::autodiff::{PoolKind, Tape};
use crate::autodiff::Var;
use crate::config::PoolOp;
use crate::error::{FunnelError, Result};
use crate::tensor::Tensor;

/// Which source rows feed each pooled row, plus the pooled ids and mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolPlan {
    pub windows: Vec<Vec<usize>>,
    pub pos: Vec<i64>,
    pub mask: Vec<bool>,
}

impl PoolPlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Per-key importance: attention weight summed over heads and queries.
pub fn key_scores(probs: &[Tensor]) -> Vec<f64> {
    let tk = probs[0].dims2().1;
    let mut s = vec![0.0; tk];
    for p in probs {
        let (tq, _) = p.dims2();
        for i in 0..tq {
            for (acc, v) in s.iter_mut().zip(p.row(i)) {
                *acc += v;
            }
        }
    }
    s
}

/// The `⌈n/2⌉` highest-scoring candidates, ties toward the lower index,
/// returned in original order.
pub fn top_half(scores: &[f64], candidates: &[usize]) -> Vec<usize> {
    let keep = candidates.len().div_ceil(2);
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ranked.truncate(keep);
    ranked.sort_unstable();
    ranked
}

/// Plan one pooling step over a sequence with ids `pos` and real-token mask
/// `mask`.
///
/// * Mean/Max: non-overlapping windows of two, odd tail alone. A window's id
///   is that of its first token; it is real iff any member is real, and only
///   real members are reduced (an all-pad window yields a zero row).
/// * TopAttn: keep the top half of keys by `key_scores`, in order.
/// * `separate_cls`: index 0 passes through untouched and only `1..` is
///   pooled. With `truncate` and a power-of-two input, the last pooled token
///   is then dropped so the output length is again a power of two.
pub fn plan_pool(
    pos: &[i64],
    mask: &[bool],
    op: PoolOp,
    separate_cls: bool,
    truncate: bool,
    key_scores: Option<&[f64]>,
) -> Result<PoolPlan> {
    let n = pos.len();
    if n == 0 || mask.len() != n {
        return Err(FunnelError::Contract(format!(
            "pool input of length {n} with mask of length {}",
            mask.len()
        )));
    }
    let start = usize::from(separate_cls);
    let mut plan = PoolPlan {
        windows: Vec::new(),
        pos: Vec::new(),
        mask: Vec::new(),
    };
    if separate_cls {
        plan.windows.push(vec![0]);
        plan.pos.push(pos[0]);
        plan.mask.push(mask[0]);
    }
    let rest: Vec<usize> = (start..n).collect();
    match op {
        PoolOp::Mean | PoolOp::Max => {
            for pair in rest.chunks(2) {
                let real: Vec<usize> = pair.iter().copied().filter(|&i| mask[i]).collect();
                plan.pos.push(pos[pair[0]]);
                plan.mask.push(!real.is_empty());
                plan.windows.push(real);
            }
        }
        PoolOp::TopAttn => {
            let scores = key_scores.ok_or_else(|| {
                FunnelError::Contract("top-attn pooling needs the previous attention map".into())
            })?;
            if scores.len() != n {
                return Err(FunnelError::Contract(format!(
                    "{} key scores for a sequence of {n}",
                    scores.len()
                )));
            }
            for i in top_half(scores, &rest) {
                plan.windows.push(vec![i]);
                plan.pos.push(pos[i]);
                plan.mask.push(mask[i]);
            }
        }
    }
    if separate_cls && truncate && n >= 2 && n.is_power_of_two() {
        plan.windows.pop();
        plan.pos.pop();
        plan.mask.pop();
    }
    Ok(plan)
}

/// Apply a plan to `h` on the tape.
pub fn apply_pool(tape: &mut Tape, h: Var, plan: &PoolPlan, op: PoolOp) -> Result<Var> {
    let kind = match op {
        PoolOp::Max => PoolKind::Max,
        PoolOp::Mean | PoolOp::TopAttn => PoolKind::Mean,
    };
    tape.pool_rows(h, &plan.windows, kind)
}

/// Stride-2 mean/max pooling of a fully real sequence with ids `0..T`.
pub fn pool_pair(h: &Tensor, op: PoolKind) -> Result<(Tensor, Vec<i64>, Vec<bool>)> {
    let n = h.dims2().0;
    let pos: Vec<i64> = (0..n as i64).collect();
    let op = match op {
        PoolKind::Mean => PoolOp::Mean,
        PoolKind::Max => PoolOp::Max,
    };
    pool_step(h, &pos, &vec![true; n], op, false, false, None)
}

/// Keep the top half of states of a fully real sequence ranked by the
/// previous layer's attention map (`[Tq, T]` per head).
pub fn pool_top_attn(h: &Tensor, prev_attn: Option<&[Tensor]>) -> Result<(Tensor, Vec<i64>, Vec<bool>)> {
    let n = h.dims2().0;
    let pos: Vec<i64> = (0..n as i64).collect();
    pool_step(h, &pos, &vec![true; n], PoolOp::TopAttn, false, false, prev_attn)
}

/// One pooling step on plain tensors.
pub fn pool_step(
    h: &Tensor,
    pos: &[i64],
    mask: &[bool],
    op: PoolOp,
    separate_cls: bool,
    truncate: bool,
    prev_attn: Option<&[Tensor]>,
) -> Result<(Tensor, Vec<i64>, Vec<bool>)> {
    if h.dims2().0 != pos.len() {
        return Err(FunnelError::dim("pool_step", h.shape(), &[pos.len()]));
    }
    let scores = prev_attn.map(key_scores);
    let plan = plan_pool(pos, mask, op, separate_cls, truncate, scores.as_deref())?;
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let out = apply_pool(&mut tape, hv, &plan, op)?;
    Ok((tape.value(out).clone(), plan.pos, plan.mask))
}
