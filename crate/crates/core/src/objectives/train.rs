//! Deterministic toy pretraining loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::electra::{electra_step, generator_config};
use super::masking::{sample_mask_single, sample_mask_span, MaskPlan};
use super::mlm::mlm_loss;
use super::optim::AdamW;
use crate::autodiff::{Tape, Var};
use crate::config::{Masking, Objective};
use crate::corpus::{Corpus, Encoded};
use crate::error::{FunnelError, Result};
use crate::model::FunnelModel;
use crate::params::Bound;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: Vec<TracePoint>,
    pub model: FunnelModel,
    /// ELECTRA only.
    pub generator: Option<FunnelModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub objective: Objective,
    pub seed: u64,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub min_loss: Option<f64>,
}

impl TrainOutcome {
    pub fn summary(&self) -> TrainSummary {
        let losses = self.trace.iter().map(|p| p.loss);
        TrainSummary {
            steps: self.trace.len(),
            objective: self.model.config.train.objective,
            seed: self.model.config.seed,
            initial_loss: self.trace.first().map(|p| p.loss),
            final_loss: self.trace.last().map(|p| p.loss),
            min_loss: losses.reduce(f64::min),
        }
    }
}

pub fn trace_csv(trace: &[TracePoint]) -> String {
    let mut s = String::from("step,loss,lr\n");
    for p in trace {
        writeln!(s, "{},{},{}", p.step, p.loss, p.lr).expect("string write");
    }
    s
}

pub fn write_trace_csv(path: &Path, trace: &[TracePoint]) -> Result<()> {
    std::fs::write(path, trace_csv(trace)).map_err(|e| FunnelError::io(path, e))
}

pub fn plan_for(seq: &Encoded, masking: Masking, rate: f64, max_words: usize, rng: &mut Rng) -> MaskPlan {
    match masking {
        Masking::Single => sample_mask_single(&seq.ids, &seq.maskable(), rate, rng),
        Masking::Span => sample_mask_span(&seq.ids, &seq.words, rate, max_words, rng),
    }
}

fn collect_grads(tape: &Tape, root: Var, bound: &Bound) -> Result<BTreeMap<String, Tensor>> {
    let grads = tape.backward(root)?;
    Ok(bound.iter().map(|(n, &v)| (n.clone(), grads.wrt(v))).collect())
}

fn mean(tape: &mut Tape, losses: &[Var]) -> Result<Var> {
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    Ok(tape.scale(total, 1.0 / losses.len() as f64))
}

/// Train `model` for `steps` updates on seeded random batches of `corpus`.
///
/// The whole run is a function of the config seed. A non-finite loss aborts
/// with the failing step.
pub fn train_toy(mut model: FunnelModel, corpus: &Corpus, steps: usize) -> Result<TrainOutcome> {
    let cfg = model.config.clone();
    let tc = &cfg.train;
    let seq_len = corpus.seqs[0].ids.len();
    if seq_len != tc.seq_len {
        return Err(FunnelError::Config(format!(
            "corpus encoded at length {seq_len} but train.seq_len is {}",
            tc.seq_len
        )));
    }
    let mut root_rng = Rng::new(cfg.seed);
    let mut data_rng = root_rng.fork(1);
    let mut mask_rng = root_rng.fork(2);
    let mut drop_rng = root_rng.fork(3);

    let mut generator = match tc.objective {
        Objective::Mlm => None,
        Objective::Electra => Some(FunnelModel::init(generator_config(&cfg)?)?),
    };
    let mut opt = AdamW::new(tc.optimizer.clone(), steps);
    let mut gen_opt = AdamW::new(tc.optimizer.clone(), steps);
    let mut trace = Vec::with_capacity(steps);

    for step in 0..steps {
        let batch = corpus.batch(tc.batch_size, &mut data_rng);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let gen_bound = generator.as_ref().map(|g| g.bind(&mut tape));
        let mut losses = Vec::with_capacity(batch.seqs.len());
        for seq in &batch.seqs {
            let plan = plan_for(seq, tc.masking, tc.mask_rate, tc.max_span_words, &mut mask_rng);
            if plan.is_empty() {
                continue;
            }
            let loss = match (&generator, &gen_bound) {
                (Some(g), Some(gb)) => {
                    electra_step(
                        &mut tape,
                        (&g.config, gb),
                        (&cfg, &bound),
                        &seq.ids,
                        &seq.valid,
                        &plan,
                        &mut drop_rng,
                    )?
                    .total
                }
                _ => {
                    let masked = plan.apply(&seq.ids);
                    let f = model.forward(&mut tape, &bound, &masked, &seq.valid, true, &mut drop_rng)?;
                    mlm_loss(&mut tape, f.tokens(), bound.get("embed.word")?, &plan)?
                }
            };
            losses.push(loss);
        }
        if losses.is_empty() {
            return Err(FunnelError::Validation(format!(
                "step {step}: no sequence in the batch has a maskable token"
            )));
        }
        let root = mean(&mut tape, &losses)?;
        let loss = tape.value(root).data()[0];
        if !loss.is_finite() {
            return Err(FunnelError::Diverged { step, loss });
        }
        let grads = collect_grads(&tape, root, &bound)?;
        if let (Some(g), Some(gb)) = (generator.as_mut(), gen_bound.as_ref()) {
            let gg = collect_grads(&tape, root, gb)?;
            gen_opt.step(&mut g.params, &gg);
        }
        let lr = opt.step(&mut model.params, &grads);
        trace.push(TracePoint { step, loss, lr });
    }
    Ok(TrainOutcome {
        trace,
        model,
        generator,
    })
}
