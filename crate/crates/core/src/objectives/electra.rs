//! Replaced-token detection: a small generator fills masked slots and a
//! discriminator labels every token as original or replaced.

use super::masking::MaskPlan;
use super::mlm::mlm_logits;
use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::error::{FunnelError, Result};
use crate::model::forward_with;
use crate::params::Bound;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElectraBatch {
    /// Input ids with each masked slot replaced by a generator sample.
    pub corrupted: Vec<usize>,
    /// `true` where the token is fake, i.e. differs from the original.
    pub labels: Vec<bool>,
}

impl ElectraBatch {
    /// fake ⟺ changed, at every position.
    pub fn is_consistent(&self, original: &[usize]) -> bool {
        self.corrupted.len() == original.len()
            && self
                .labels
                .iter()
                .zip(self.corrupted.iter().zip(original))
                .all(|(&fake, (c, o))| fake == (c != o))
    }
}

/// Draw one token per masked slot from the rows of `probs` (`[|I|, V]`).
pub fn sample_replacements(ids: &[usize], plan: &MaskPlan, probs: &Tensor, rng: &mut Rng) -> Result<ElectraBatch> {
    let (rows, _) = probs.dims2();
    if rows != plan.len() {
        return Err(FunnelError::dim("sample_replacements", probs.shape(), &[plan.len()]));
    }
    let mut corrupted = ids.to_vec();
    for (r, &p) in plan.positions.iter().enumerate() {
        corrupted[p] = rng.categorical(probs.row(r));
    }
    let labels = corrupted.iter().zip(ids).map(|(c, o)| c != o).collect();
    Ok(ElectraBatch { corrupted, labels })
}

/// Row-wise softmax of plain logits.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (r, c) = logits.dims2();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = logits.row(i);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        out.extend(row.iter().map(|v| (v - mx).exp() / z));
    }
    Tensor::new(&[r, c], out).expect("same shape")
}

/// Mean binary cross-entropy of the per-token head over real positions.
pub fn disc_loss(tape: &mut Tape, hidden: Var, w: Var, b: Var, labels: &[bool], valid: &[bool]) -> Result<Var> {
    let z = tape.matmul(hidden, w)?;
    let z = tape.add_row(z, b)?;
    let y: Vec<f64> = labels.iter().map(|&f| f64::from(u8::from(f))).collect();
    let weights: Vec<f64> = valid.iter().map(|&v| f64::from(u8::from(v))).collect();
    tape.bce_with_logits(z, &y, &weights)
}

pub struct ElectraOutput {
    pub gen_loss: Var,
    pub disc_loss: Var,
    /// `gen_loss + disc_weight · disc_loss`.
    pub total: Var,
    pub batch: ElectraBatch,
}

/// One generator + discriminator pass on a single sequence. Sampling happens
/// on plain values, so no gradient reaches the generator through `x̃`.
#[allow(clippy::too_many_arguments)]
pub fn electra_step(
    tape: &mut Tape,
    gen: (&ModelConfig, &Bound),
    disc: (&ModelConfig, &Bound),
    ids: &[usize],
    valid: &[bool],
    plan: &MaskPlan,
    rng: &mut Rng,
) -> Result<ElectraOutput> {
    let (gcfg, gb) = gen;
    let (dcfg, db) = disc;
    let masked = plan.apply(ids);
    let gf = forward_with(tape, gcfg, gb, &masked, valid, true, rng)?;
    let logits = mlm_logits(tape, gf.tokens(), gb.get("embed.word")?, plan)?;
    let probs = softmax_rows(tape.value(logits));
    let gen_loss = tape.cross_entropy(logits, &plan.originals)?;
    let batch = sample_replacements(ids, plan, &probs, rng)?;

    let df = forward_with(tape, dcfg, db, &batch.corrupted, valid, true, rng)?;
    let d = disc_loss(tape, df.tokens(), db.get("head.disc.w")?, db.get("head.disc.b")?, &batch.labels, valid)?;
    let weighted = tape.scale(d, dcfg.train.electra.disc_weight);
    let total = tape.add(gen_loss, weighted)?;
    Ok(ElectraOutput {
        gen_loss,
        disc_loss: d,
        total,
        batch,
    })
}

/// Generator config: same block structure at `gen_multiplier` times the
/// hidden size, no discriminator head, seed offset so it differs from the
/// discriminator's initialization.
pub fn generator_config(disc: &ModelConfig) -> Result<ModelConfig> {
    let mut g = disc.clone();
    g.layout = disc.layout.scaled(disc.train.electra.gen_multiplier)?;
    g.train.objective = crate::config::Objective::Mlm;
    g.seed = disc.seed.wrapping_add(1);
    Ok(g)
}
