//! Masked language modelling with the input embedding as output layer.

use super::masking::MaskPlan;
use crate::autodiff::{Tape, Var};
use crate::error::{FunnelError, Result};
use crate::tensor::Tensor;

/// Logits `h_i · E` for the masked rows of `hidden`, shape `[|I|, V]`.
pub fn mlm_logits(tape: &mut Tape, hidden: Var, embedding: Var, plan: &MaskPlan) -> Result<Var> {
    if plan.is_empty() {
        return Err(FunnelError::Contract("empty mask plan".into()));
    }
    let h = tape.select_rows(hidden, &plan.positions)?;
    tape.matmul_nt(h, embedding)
}

/// Mean over masked positions of `-log softmax(E h_i)[original_i]`.
pub fn mlm_loss(tape: &mut Tape, hidden: Var, embedding: Var, plan: &MaskPlan) -> Result<Var> {
    let logits = mlm_logits(tape, hidden, embedding, plan)?;
    tape.cross_entropy(logits, &plan.originals)
}

/// Plain-tensor `mlm_loss`.
pub fn mlm_loss_value(hidden: &Tensor, embedding: &Tensor, plan: &MaskPlan) -> Result<f64> {
    let mut tape = Tape::new();
    let h = tape.constant(hidden.clone());
    let e = tape.constant(embedding.clone());
    let l = mlm_loss(&mut tape, h, e, plan)?;
    Ok(tape.value(l).data()[0])
}
