//! The `funnel` command line.
//!
//! Exit codes: 0 success, 1 a check ran and failed, 2 bad usage or input.
//! Failures print a single `error: <category>: <message>` line on stderr.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint;
use crate::config::ModelConfig;
use crate::corpus::{encode_line, Corpus, Vocab};
use crate::cost::{analyze, compare_report, Mode};
use crate::error::{FunnelError, Result};
use crate::gradcheck::Stencil;
use crate::layout::{parse_layout, LayoutSpec};
use crate::model::FunnelModel;
use crate::objectives::{train_toy, write_trace_csv};
use crate::relattn::AttnVariant;
use crate::verify::{model_grad_check, verify_attention};

pub const ATTN_TOLERANCE: f64 = 1e-8;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Step for the end-to-end check. Large enough that roundoff on exactly-zero
/// gradients stays under tolerance, small enough for the four-point rule.
pub const GRAD_EPS: f64 = 1.5e-3;

#[derive(Debug, Parser)]
#[command(name = "funnel", version, about = "Funnel-Transformer toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Finetune,
    Pretrain,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Finetune => Mode::Finetune,
            ModeArg::Pretrain => Mode::Pretrain,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Naive,
    Gather,
    Factorized,
}

impl From<VariantArg> for AttnVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Naive => AttnVariant::Naive,
            VariantArg::Gather => AttnVariant::GatherShift,
            VariantArg::Factorized => AttnVariant::Factorized,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StencilArg {
    Two,
    Four,
}

impl From<StencilArg> for Stencil {
    fn from(s: StencilArg) -> Self {
        match s {
            StencilArg::Two => Stencil::Two,
            StencilArg::Four => Stencil::Four,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GradObjective {
    Mlm,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Dump {
    Shapes,
    Cls,
    Tokens,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parameter count, effective depth and exact FLOPs of one layout.
    Analyze {
        #[arg(long)]
        layout: String,
        #[arg(long, default_value_t = 512)]
        seq_len: usize,
        #[arg(long, value_enum, default_value = "finetune")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long, default_value_t = crate::config::DEFAULT_VOCAB)]
        vocab: usize,
        #[arg(long, value_enum, default_value = "factorized")]
        variant: VariantArg,
    },
    /// Cost ratios of several layouts against a baseline.
    Compare {
        /// Comma-separated layouts.
        #[arg(long, value_delimiter = ',', required = true)]
        layouts: Vec<String>,
        #[arg(long)]
        baseline: String,
        #[arg(long, value_enum, default_value = "finetune")]
        mode: ModeArg,
        #[arg(long, default_value_t = 512)]
        seq_len: usize,
        #[arg(long, default_value_t = crate::config::DEFAULT_VOCAB)]
        vocab: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Check the gather and factorized position scores against the naive route.
    VerifyAttn {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 16)]
        max_t: usize,
        #[arg(long, default_value_t = 16)]
        max_d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of the full model's gradients in f64.
    Gradcheck {
        #[arg(long)]
        layout: String,
        #[arg(long, default_value_t = 8)]
        seq_len: usize,
        #[arg(long, value_enum, default_value = "mlm")]
        objective: GradObjective,
        #[arg(long, default_value_t = 20)]
        vocab: usize,
        #[arg(long, default_value_t = GRAD_EPS)]
        eps: f64,
        #[arg(long, value_enum, default_value = "four")]
        stencil: StencilArg,
        /// Coordinates probed per tensor; 0 probes all of them.
        #[arg(long, default_value_t = 6)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Nonzero values are refused; the flag exists to make that explicit.
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
    },
    /// Pretrain on a text file and write the trace and checkpoint.
    TrainToy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a trained model over the lines of a text file.
    Encode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "shapes")]
        dump: Dump,
        /// Defaults to `vocab.txt` beside the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
}

/// How a command ended, before mapping to an exit code.
#[derive(Debug)]
pub enum Outcome {
    Ok,
    CheckFailed(String),
}

fn layout(s: &str) -> Result<LayoutSpec> {
    parse_layout(s.trim())
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn io_err(e: std::io::Error) -> FunnelError {
    FunnelError::io("<stdout>", e)
}

/// Execute a parsed command, writing reports to `out` and warnings to `err`.
pub fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome> {
    match cmd {
        Command::Analyze {
            layout: l,
            seq_len,
            mode,
            format,
            vocab,
            variant,
        } => {
            let r = analyze(&layout(&l)?, vocab, seq_len, mode.into(), variant.into())?;
            match format {
                Format::Text => write!(out, "{}", r.to_text()),
                Format::Json => writeln!(out, "{}", json(&r)),
            }
            .map_err(io_err)?;
            Ok(Outcome::Ok)
        }
        Command::Compare {
            layouts,
            baseline,
            mode,
            seq_len,
            vocab,
            format,
        } => {
            let ls = layouts.iter().map(|s| layout(s)).collect::<Result<Vec<_>>>()?;
            let r = compare_report(&ls, &layout(&baseline)?, seq_len, mode.into(), vocab)?;
            match format {
                Format::Text => write!(out, "{}", r.to_text()),
                Format::Json => writeln!(out, "{}", json(&r)),
            }
            .map_err(io_err)?;
            Ok(Outcome::Ok)
        }
        Command::VerifyAttn {
            trials,
            max_t,
            max_d,
            seed,
        } => {
            if trials == 0 {
                writeln!(err, "warning: --trials 0 checks nothing").map_err(io_err)?;
            }
            let r = verify_attention(trials, max_t, max_d, seed)?;
            writeln!(
                out,
                "trials {} (pooled {})  max|naive-gather| {:.3e}  max|naive-factorized| {:.3e}",
                r.trials, r.pooled_trials, r.max_dev_gather, r.max_dev_factorized
            )
            .map_err(io_err)?;
            if r.max_dev() > ATTN_TOLERANCE {
                return Ok(Outcome::CheckFailed(format!(
                    "deviation {:.3e} exceeds {ATTN_TOLERANCE:e}",
                    r.max_dev()
                )));
            }
            Ok(Outcome::Ok)
        }
        Command::Gradcheck {
            layout: l,
            seq_len,
            objective: GradObjective::Mlm,
            vocab,
            eps,
            stencil,
            samples,
            seed,
            dropout,
        } => {
            let mut cfg = ModelConfig::new(layout(&l)?, vocab);
            cfg.dropout = dropout;
            cfg.validate()?;
            let c = model_grad_check(&cfg, seq_len, seed, eps, stencil.into(), samples, None)?;
            let r = &c.report;
            write!(out, "max_rel_err {:.3e}  checked {}", r.max_rel_err, r.checked).map_err(io_err)?;
            if let (Some(name), Some((_, k, a, n))) = (&c.worst_tensor, r.worst) {
                write!(out, "  worst {name}[{k}] analytic {a:.6e} numeric {n:.6e}").map_err(io_err)?;
            }
            writeln!(out).map_err(io_err)?;
            if r.max_rel_err.is_nan() || r.max_rel_err >= GRAD_TOLERANCE {
                return Ok(Outcome::CheckFailed(format!(
                    "relative error {:.3e} exceeds {GRAD_TOLERANCE:e}",
                    r.max_rel_err
                )));
            }
            Ok(Outcome::Ok)
        }
        Command::TrainToy {
            config,
            corpus,
            steps,
            out: dir,
        } => {
            let cfg = ModelConfig::load(&config)?;
            let corpus = Corpus::load(&corpus, cfg.vocab_size, cfg.train.seq_len)?;
            std::fs::create_dir_all(&dir).map_err(|e| FunnelError::io(&dir, e))?;
            let model = FunnelModel::init(cfg)?;
            let outcome = train_toy(model, &corpus, steps)?;
            write_trace_csv(&dir.join("loss.csv"), &outcome.trace)?;
            checkpoint::save_model(&outcome.model, &dir.join("model.ftnt"), &dir.join("config.json"))?;
            corpus.vocab.save(&dir.join("vocab.txt"))?;
            let summary = outcome.summary();
            let path = dir.join("summary.json");
            std::fs::write(&path, json(&summary)).map_err(|e| FunnelError::io(&path, e))?;
            let show = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
            writeln!(
                out,
                "steps {}  initial_loss {}  final_loss {}  -> {}",
                summary.steps,
                show(summary.initial_loss),
                show(summary.final_loss),
                dir.display()
            )
            .map_err(io_err)?;
            Ok(Outcome::Ok)
        }
        Command::Encode {
            config,
            checkpoint: ckpt,
            input,
            dump,
            vocab,
        } => {
            let cfg = ModelConfig::load(&config)?;
            let vocab_path = vocab.unwrap_or_else(|| sibling(&ckpt, "vocab.txt"));
            let model = checkpoint::load_model(cfg, &ckpt)?;
            let vocab = Vocab::load(&vocab_path)?;
            let text = std::fs::read_to_string(&input).map_err(|e| FunnelError::io(&input, e))?;
            let t = model.config.train.seq_len;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let e = encode_line(line, &vocab, t)?;
                let enc = model.encode(&e.ids, &e.valid, dump == Dump::Tokens)?;
                let row = match dump {
                    Dump::Shapes => serde_json::to_string(&enc.shapes()),
                    Dump::Cls => serde_json::to_string(enc.cls()),
                    Dump::Tokens => {
                        let tokens = enc.tokens.expect("decoder ran");
                        let rows: Vec<&[f64]> = (0..tokens.dims2().0).map(|i| tokens.row(i)).collect();
                        serde_json::to_string(&rows)
                    }
                }
                .expect("floats serialize");
                writeln!(out, "{row}").map_err(io_err)?;
            }
            Ok(Outcome::Ok)
        }
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(err, "error: usage: {first}");
            return 2;
        }
    };
    match execute(cli.command, out, err) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::CheckFailed(msg)) => {
            let _ = writeln!(err, "error: check: {msg}");
            1
        }
        Err(e) => {
            let _ = writeln!(err, "error: {}: {}", e.category(), one_line(&e.detail()));
            exit_code(&e)
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Runtime failures of a well-formed request exit 1; everything else is bad
/// input.
pub fn exit_code(e: &FunnelError) -> i32 {
    match e {
        FunnelError::Diverged { .. } | FunnelError::Numeric(_) => 1,
        _ => 2,
    }
}
