//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Expected values are written out by hand or recomputed by
//! small independent oracles below, never read back from the library.

use std::f64::consts::LN_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use funnel_core::autodiff::{PoolKind, Tape, Var};
use funnel_core::checkpoint::{self, from_bytes, to_bytes};
use funnel_core::config::{ModelConfig, Objective, PoolOp};
use funnel_core::corpus::{synthetic_lines, Corpus, Vocab};
use funnel_core::cost::{effective_layers, flops_ratio, param_count, round2, Mode};
use funnel_core::encoder::{plan_pool, pool_pair, pool_step, pool_top_attn, top_half};
use funnel_core::gradcheck::{grad_check, Coords, Stencil, DEFAULT_EPS};
use funnel_core::layout::parse_layout;
use funnel_core::model::FunnelModel;
use funnel_core::objectives::{disc_loss, electra_step, generator_config, sample_replacements, train_toy};
use funnel_core::objectives::{trace_csv, MaskPlan};
use funnel_core::params::ModelParams;
use funnel_core::relattn::{position_term, AttnVariant};
use funnel_core::rng::Rng;
use funnel_core::tensor::{DType, Tensor};
use funnel_core::verify::{attn_case, model_grad_check, verify_attention};
use funnel_core::FunnelError;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> Verdict;

fn main() {
    let criteria: [(&str, Duration, Check); 10] = [
        ("finetune FLOPs ratios, linear model", Duration::from_secs(1), flops_finetune),
        ("pretrain FLOPs ratios, two decoder layers", Duration::from_secs(1), flops_pretrain),
        ("parameter ratios at V=30522", Duration::from_secs(1), param_ratios),
        ("position-score route equivalence", Duration::from_secs(10), attention_routes),
        ("gradient correctness", Duration::from_secs(120), gradients),
        ("length schedule", Duration::from_secs(30), length_schedule),
        ("pooling semantics", Duration::from_secs(10), pooling),
        ("toy MLM learnability", Duration::from_secs(300), learnability),
        ("ELECTRA scaffold", Duration::from_secs(10), electra),
        ("checkpoint round trip", Duration::from_secs(5), checkpoints),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let in_time = took <= *budget;
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        let timing = if in_time {
            format!("{:.2}s", took.as_secs_f64())
        } else {
            format!("{:.2}s, over the {}s budget", took.as_secs_f64(), budget.as_secs())
        };
        println!(
            "{} criterion {:>2}: {name} ({timing}): {}",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

/// Half-up rounding to two decimals, written independently of the library.
fn half_up(x: f64) -> f64 {
    (x * 100.0 + 0.5 + 1e-9).floor() / 100.0
}

/// `Σ_m layers_m / 2^(m-1)` from a plain list, plus decoder layers.
fn depth(blocks: &[f64], decoder: f64) -> f64 {
    blocks.iter().enumerate().map(|(m, l)| l / 2f64.powi(m as i32)).sum::<f64>() + decoder
}

struct RatioCase {
    layout: &'static str,
    baseline: &'static str,
    oracle: f64,
    expect: f64,
}

fn ratio_cases(cases: &[RatioCase], mode: Mode) -> Verdict {
    let mut bad = Vec::new();
    let mut shown = Vec::new();
    for c in cases {
        let a = parse_layout(c.layout).unwrap();
        let b = parse_layout(c.baseline).unwrap();
        let got = flops_ratio(&a, &b, mode).unwrap();
        shown.push(format!("{} {:.4}", c.layout, got));
        if (got - c.oracle).abs() > 1e-12 {
            bad.push(format!("{}: {got} but the hand count gives {}", c.layout, c.oracle));
        }
        if round2(got) != c.expect || half_up(got) != c.expect {
            bad.push(format!("{}: {got:.4} rounds to {:.2}, expected {:.2}", c.layout, round2(got), c.expect));
        }
    }
    if bad.is_empty() {
        verdict(true, shown.join(", "))
    } else {
        verdict(false, bad.join("; "))
    }
}

fn flops_finetune() -> Verdict {
    let cases = [
        RatioCase { layout: "B10-10-10H1024", baseline: "L24H1024", oracle: depth(&[10.0, 10.0, 10.0], 0.0) / 24.0, expect: 0.73 },
        RatioCase { layout: "B8-8-8H1024", baseline: "L24H1024", oracle: depth(&[8.0, 8.0, 8.0], 0.0) / 24.0, expect: 0.58 },
        RatioCase { layout: "B6-6-6H768", baseline: "L12H768", oracle: depth(&[6.0, 6.0, 6.0], 0.0) / 12.0, expect: 0.88 },
        RatioCase { layout: "B6-3x2-3x2H768", baseline: "L12H768", oracle: depth(&[6.0, 6.0, 6.0], 0.0) / 12.0, expect: 0.88 },
        RatioCase { layout: "B4-4-4H768", baseline: "L12H768", oracle: depth(&[4.0, 4.0, 4.0], 0.0) / 12.0, expect: 0.58 },
        RatioCase { layout: "B3-4-4H768", baseline: "L6H768", oracle: depth(&[3.0, 4.0, 4.0], 0.0) / 6.0, expect: 1.00 },
    ];
    let v = ratio_cases(&cases, Mode::Finetune);
    let eff = effective_layers(&parse_layout("B6-6-6H768").unwrap(), Mode::Finetune);
    if eff != 10.5 {
        return verdict(false, format!("B6-6-6 effective depth {eff}, expected 10.5"));
    }
    v
}

fn flops_pretrain() -> Verdict {
    let cases = [
        RatioCase { layout: "B6-6-6H768D2", baseline: "L12H768", oracle: depth(&[6.0, 6.0, 6.0], 2.0) / 12.0, expect: 1.04 },
        RatioCase { layout: "B6-3x2-3x2H768D2", baseline: "L12H768", oracle: depth(&[6.0, 6.0, 6.0], 2.0) / 12.0, expect: 1.04 },
        RatioCase { layout: "B4-4-4H768D2", baseline: "L12H768", oracle: depth(&[4.0, 4.0, 4.0], 2.0) / 12.0, expect: 0.75 },
        RatioCase { layout: "B10-10-10H1024D2", baseline: "L24H1024", oracle: depth(&[10.0, 10.0, 10.0], 2.0) / 24.0, expect: 0.81 },
        RatioCase { layout: "B8-8-8H1024D2", baseline: "L24H1024", oracle: depth(&[8.0, 8.0, 8.0], 2.0) / 24.0, expect: 0.66 },
    ];
    let v = ratio_cases(&cases, Mode::Pretrain);
    if v.pass {
        return v;
    }
    // 16/24 = 0.6667 sits on the far side of 0.665, so 0.66 only appears
    // under truncation, while truncating 17.5/24 = 0.7292 in the finetune
    // group would give 0.72 instead of the 0.73 required there.
    verdict(
        false,
        format!(
            "{} [no single rounding rule yields both 0.66 here and 0.73 for B10-10-10 finetune]",
            v.detail
        ),
    )
}

/// Parameters by direct count: embedding `V·D + 2D`, per unique layer four
/// `D×D` projections with biases, `u` and `v`, two layer norms and a `4D`
/// feed-forward, and one `D×D` relative projection.
fn param_oracle(unique_layers: u64, d: u64, v: u64) -> (u64, u64) {
    let attn = 4 * (d * d + d) + 2 * d + 2 * d;
    let ffn = (d * 4 * d + 4 * d) + (4 * d * d + d) + 2 * d;
    let layers = unique_layers * (attn + ffn);
    (v * d + 2 * d + layers + d * d, layers)
}

fn param_ratios() -> Verdict {
    const V: usize = 30522;
    let groups: [(&str, u64, &str, u64, u64, f64); 6] = [
        ("B10-10-10H1024", 30, "L24H1024", 24, 1024, 1.22),
        ("B8-8-8H1024", 24, "L24H1024", 24, 1024, 1.00),
        ("B6-6-6H768", 18, "L12H768", 12, 768, 1.39),
        ("B6-3x2-3x2H768", 12, "L12H768", 12, 768, 1.00),
        ("B4-4-4H768", 12, "L12H768", 12, 768, 1.00),
        ("B3-4-4H768", 11, "L6H768", 6, 768, 1.53),
    ];
    let mut bad = Vec::new();
    let mut shown = Vec::new();
    for (l, lu, b, bu, d, expect) in groups {
        let got = param_count(&parse_layout(l).unwrap(), V, Mode::Finetune).0 as f64
            / param_count(&parse_layout(b).unwrap(), V, Mode::Finetune).0 as f64;
        let oracle = param_oracle(lu, d, V as u64).0 as f64 / param_oracle(bu, d, V as u64).0 as f64;
        shown.push(format!("{l} {got:.3}"));
        if (got - oracle).abs() > 1e-12 || (got - expect).abs() > 0.02 {
            bad.push(format!("{l}: {got:.4} (count {oracle:.4}, expected {expect} ± 0.02)"));
        }
    }
    let t = |s: &str| param_count(&parse_layout(s).unwrap(), V, Mode::Finetune).1 as f64;
    let transformer = t("B6-6-6H768") / t("L12H768");
    if transformer != 1.5 {
        bad.push(format!("transformer-only B6-6-6/L12 = {transformer}, expected 1.5"));
    }
    // the closed form must agree with the tensors a model actually allocates
    for (l, mode) in [("B2-2H64", Mode::Finetune), ("B2-1x2H64D2", Mode::Pretrain)] {
        let spec = parse_layout(l).unwrap();
        let allocated = ModelParams::init(&spec, 50, false, &mut Rng::new(0)).num_elements() as u64;
        let counted = param_count(&spec, 50, mode).0;
        if allocated != counted {
            bad.push(format!("{l}: {allocated} allocated vs {counted} counted"));
        }
    }
    if bad.is_empty() {
        verdict(true, format!("{}, transformer-only 1.50", shown.join(", ")))
    } else {
        verdict(false, bad.join("; "))
    }
}

/// Position term by a scalar loop: `Σ_b (q_ib + u_b) Σ_a r_{q_i-k_j, a} W_ab`
/// with `r_t = [sin(t f_1..f_{D/2}), cos(t f_1..f_{D/2})]`,
/// `f_k = 10000^(-2k/D)`.
fn scalar_position_term(q: &Tensor, q_pos: &[i64], k_pos: &[i64], w: &Tensor, u: &Tensor) -> Vec<f64> {
    let (tq, d) = q.dims2();
    let width = w.shape()[0];
    let half = width / 2;
    let mut out = Vec::with_capacity(tq * k_pos.len());
    for (i, &qp) in q_pos.iter().enumerate().take(tq) {
        for &kp in k_pos {
            let t = (qp - kp) as f64;
            let mut s = 0.0;
            for a in 0..width {
                let k = (a % half + 1) as f64;
                let f = 10000f64.powf(-2.0 * k / width as f64);
                let r = if a < half { (t * f).sin() } else { (t * f).cos() };
                for b in 0..d {
                    s += (q.at(i, b) + u.data()[b]) * r * w.at(a, b);
                }
            }
            out.push(s);
        }
    }
    out
}

fn attention_routes() -> Verdict {
    const TRIALS: usize = 100;
    let mut rng = Rng::new(2024);
    let mut worst = [0.0f64; 3];
    let mut pooled = 0;
    for trial in 0..TRIALS {
        let c = attn_case(&mut rng, trial, 16, 16).unwrap();
        pooled += usize::from(c.pooled);
        let oracle = scalar_position_term(&c.q, &c.q_pos, &c.k_pos, &c.w_r, &c.u);
        let naive = position_term(AttnVariant::Naive, &c.q, &c.q_pos, &c.k_pos, &c.w_r, &c.u).unwrap();
        for (slot, v) in [AttnVariant::GatherShift, AttnVariant::Factorized].into_iter().enumerate() {
            let got = position_term(v, &c.q, &c.q_pos, &c.k_pos, &c.w_r, &c.u).unwrap();
            worst[slot] = worst[slot].max(naive.max_abs_diff(&got));
        }
        let dev = naive.data().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst[2] = worst[2].max(dev);
    }
    let library = verify_attention(TRIALS, 16, 16, 7).unwrap();
    let pass = worst.iter().all(|&w| w < 1e-10) && library.max_dev() < 1e-10 && pooled > 0;
    verdict(
        pass,
        format!(
            "{TRIALS} cases ({pooled} pooled): naive-gather {:.1e}, naive-factorized {:.1e}, naive-scalar loop {:.1e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rng.tensor_normal(shape, 1.0)
}

/// `Σ y ∘ W` for a fixed random `W`, so every output entry carries a
/// distinct weight into the scalar root.
fn project(tape: &mut Tape, y: Var, seed: u64) -> funnel_core::Result<Var> {
    let w = rand_tensor(&mut Rng::new(seed), tape.value(y).shape());
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

type OpCase = (&'static str, Vec<Vec<usize>>, fn(&mut Tape, &[Var]) -> funnel_core::Result<Var>);

fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 5]], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, 1)
        }),
        ("matmul_nt", vec![vec![3, 4], vec![5, 4]], |t, v| {
            let y = t.matmul_nt(v[0], v[1])?;
            project(t, y, 2)
        }),
        ("transpose", vec![vec![3, 4]], |t, v| {
            let y = t.transpose(v[0])?;
            project(t, y, 3)
        }),
        ("add/sub/mul", vec![vec![3, 4], vec![3, 4]], |t, v| {
            let a = t.add(v[0], v[1])?;
            let b = t.sub(v[0], v[1])?;
            let y = t.mul(a, b)?;
            project(t, y, 4)
        }),
        ("add_row", vec![vec![3, 4], vec![4]], |t, v| {
            let y = t.add_row(v[0], v[1])?;
            project(t, y, 5)
        }),
        ("scale/mean", vec![vec![3, 4]], |t, v| {
            let s = t.scale(v[0], -1.7);
            let s = t.mul(s, v[0])?;
            Ok(t.mean(s))
        }),
        ("gelu", vec![vec![4, 5]], |t, v| {
            let y = t.gelu(v[0]);
            project(t, y, 6)
        }),
        ("softmax", vec![vec![3, 5]], |t, v| {
            let y = t.softmax(v[0], Some(&[true, false, true, true, false]))?;
            project(t, y, 7)
        }),
        ("layer_norm", vec![vec![4, 8], vec![8], vec![8]], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-9)?;
            project(t, y, 8)
        }),
        ("select/slice/concat", vec![vec![4, 6]], |t, v| {
            let r = t.select_rows(v[0], &[3, 0, 0, 2])?;
            let a = t.slice_cols(r, 1, 3)?;
            let b = t.slice_cols(r, 4, 2)?;
            let c = t.concat_cols(&[b, a])?;
            let y = t.concat_rows(&[c, c])?;
            project(t, y, 9)
        }),
        ("pool_rows", vec![vec![5, 3]], |t, v| {
            let w = [vec![0], vec![1, 2], vec![3, 4]];
            let a = t.pool_rows(v[0], &w, PoolKind::Mean)?;
            let b = t.pool_rows(v[0], &w, PoolKind::Max)?;
            let y = t.add(a, b)?;
            project(t, y, 10)
        }),
        ("gather_cols", vec![vec![3, 5]], |t, v| {
            let y = t.gather_cols(v[0], &[4, 0, 0, 1, 2, 3, 3, 3, 0], 3)?;
            project(t, y, 11)
        }),
        ("cross_entropy", vec![vec![4, 6]], |t, v| t.cross_entropy(v[0], &[0, 5, 2, 2])),
        ("bce_with_logits", vec![vec![5, 1]], |t, v| {
            t.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0], &[1.0, 1.0, 0.0, 1.0, 1.0])
        }),
    ]
}

fn gradients() -> Verdict {
    let mut op_worst = (0.0f64, "");
    for (name, shapes, f) in op_cases() {
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let params: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
            let r = grad_check(f, &params, DEFAULT_EPS, Coords::All).unwrap();
            if r.max_rel_err > op_worst.0 {
                op_worst = (r.max_rel_err, name);
            }
        }
    }
    let cfg = ModelConfig::new(parse_layout("B2-2H64D2").unwrap(), 20);
    let e2e = model_grad_check(&cfg, 8, 0, 1.5e-3, Stencil::Four, 12, None).unwrap();
    let pass = op_worst.0 < 1e-4 && e2e.report.max_rel_err < 1e-4;
    verdict(
        pass,
        format!(
            "per-op worst {:.1e} ({}) over 10 seeds; end-to-end {:.1e} over {} coordinates, worst in {} \
             (four-point differences, eps 1.5e-3)",
            op_worst.0,
            op_worst.1,
            e2e.report.max_rel_err,
            e2e.report.checked,
            e2e.worst_tensor.as_deref().unwrap_or("-")
        ),
    )
}

fn length_schedule() -> Verdict {
    let mut bad = Vec::new();
    let mut runs = 0;
    for layout in ["B2-2H64D2", "B2-2-2H64D2", "B2-2-2-2H64D2"] {
        for t in [8usize, 16, 32, 64] {
            let cfg = ModelConfig::new(parse_layout(layout).unwrap(), 30);
            let model = FunnelModel::init(cfg).unwrap();
            let mut rng = Rng::new(t as u64);
            let ids: Vec<usize> = (0..t).map(|_| 5 + rng.below(25)).collect();
            let enc = model.encode(&ids, &vec![true; t], true).unwrap();
            let want: Vec<[usize; 2]> = (0..model.config.layout.num_blocks()).map(|m| [t >> m, 64]).collect();
            let tokens = enc.tokens.as_ref().map(|x| x.shape().to_vec());
            if enc.shapes() != want || tokens != Some(vec![t, 64]) {
                bad.push(format!("{layout} T={t}: {:?}, decoder {tokens:?}", enc.shapes()));
            }
            runs += 1;
        }
    }
    if bad.is_empty() {
        verdict(true, format!("{runs} layout/length pairs halve per block and decode to full length"))
    } else {
        verdict(false, bad.join("; "))
    }
}

/// Plain stride-2 reduction of rows `0..n`, odd tail alone.
fn stride2(h: &Tensor, max: bool) -> Vec<f64> {
    let (n, c) = h.dims2();
    let mut out = Vec::new();
    for start in (0..n).step_by(2) {
        let rows: Vec<usize> = (start..(start + 2).min(n)).collect();
        for j in 0..c {
            let vals = rows.iter().map(|&r| h.at(r, j));
            out.push(if max {
                vals.fold(f64::NEG_INFINITY, f64::max)
            } else {
                vals.sum::<f64>() / rows.len() as f64
            });
        }
    }
    out
}

/// Highest scores first, lower index on ties, then back in sequence order.
fn top_half_oracle(scores: &[f64]) -> Vec<usize> {
    let n = scores.len();
    let mut taken = vec![false; n];
    for _ in 0..n.div_ceil(2) {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !taken[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        taken[best.unwrap()] = true;
    }
    (0..n).filter(|&i| taken[i]).collect()
}

fn pooling() -> Verdict {
    let mut bad = Vec::new();
    let mut rng = Rng::new(11);
    let mut cls_checks = 0;
    for n in 1..=8usize {
        let pos: Vec<i64> = (0..n as i64).collect();
        let mask = vec![true; n];
        for op in [PoolOp::Mean, PoolOp::Max, PoolOp::TopAttn] {
            for truncate in [false, true] {
                let h = rand_tensor(&mut rng, &[n, 4]);
                let maps = [rand_tensor(&mut rng, &[n, n]).map(f64::abs)];
                let attn = (op == PoolOp::TopAttn).then_some(&maps[..]);
                let (out, _, _) = pool_step(&h, &pos, &mask, op, true, truncate, attn).unwrap();
                let same = out.row(0).iter().zip(h.row(0)).all(|(a, b)| a.to_bits() == b.to_bits());
                let mut h2 = h.clone();
                h2.data_mut()[..4].iter_mut().for_each(|v| *v += 3.0);
                let (out2, _, _) = pool_step(&h2, &pos, &mask, op, true, truncate, attn).unwrap();
                let rest = |t: &Tensor| t.data()[4..].iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                if !same || rest(&out) != rest(&out2) {
                    bad.push(format!("CLS leaked: n={n} {op:?} truncate={truncate}"));
                }
                cls_checks += 1;
            }
        }
        for (kind, max) in [(PoolKind::Mean, false), (PoolKind::Max, true)] {
            let h = rand_tensor(&mut rng, &[n, 3]);
            let (out, _, _) = pool_pair(&h, kind).unwrap();
            let want = stride2(&h, max);
            if out.data().iter().zip(&want).any(|(a, b)| (a - b).abs() > 1e-15) || out.len() != want.len() {
                bad.push(format!("stride-2 {kind:?} mismatch at n={n}"));
            }
        }
    }
    let mut top_checks = 0;
    for n in 1..=8u32 {
        for code in 0..3usize.pow(n) {
            let scores: Vec<f64> = (0..n).map(|i| ((code / 3usize.pow(i)) % 3) as f64).collect();
            let idx: Vec<usize> = (0..n as usize).collect();
            let got = top_half(&scores, &idx);
            if got != top_half_oracle(&scores) || got.len() != (n as usize).div_ceil(2) {
                bad.push(format!("top half of {scores:?}: {got:?}"));
            }
            top_checks += 1;
            if n <= 5 {
                // through the pooling entry point, with one head whose
                // single query row carries the scores
                let map = Tensor::new(&[1, n as usize], scores.clone()).unwrap();
                let h = rand_tensor(&mut rng, &[n as usize, 2]);
                let (_, kept, _) = pool_top_attn(&h, Some(&[map])).unwrap();
                let want: Vec<i64> = top_half_oracle(&scores).iter().map(|&i| i as i64).collect();
                if kept != want {
                    bad.push(format!("pooled ids {kept:?} for scores {scores:?}"));
                }
            }
        }
    }
    let plan = plan_pool(&[0, 1, 2, 3, 4, 5, 6, 7], &[true; 8], PoolOp::Mean, true, true, None).unwrap();
    if plan.pos != vec![0, 1, 3, 5] {
        bad.push(format!("separate-CLS truncated ids {:?}", plan.pos));
    }
    if bad.is_empty() {
        verdict(
            true,
            format!("{cls_checks} CLS cases, stride-2 at n=1..8, {top_checks} top-half score patterns"),
        )
    } else {
        bad.truncate(5);
        verdict(false, bad.join("; "))
    }
}

fn learnability() -> Verdict {
    let lines = synthetic_lines(15, 8, 8, 50, 7);
    let vocab = Vocab::build(lines.iter().map(String::as_str), 20);
    let corpus = Corpus::from_lines(&lines, vocab, 16).unwrap();
    let mut cfg = ModelConfig::new(parse_layout("B2-2H64D2").unwrap(), 20);
    cfg.train.seq_len = 16;
    let model = FunnelModel::init(cfg).unwrap();
    let a = train_toy(model.clone(), &corpus, 300).unwrap();
    let b = train_toy(model, &corpus, 300).unwrap();
    let ln_v = 20f64.ln();
    let first = a.trace[0].loss;
    let tail: f64 = a.trace[290..].iter().map(|p| p.loss).sum::<f64>() / 10.0;
    let identical = a.trace.len() == b.trace.len()
        && a.trace.iter().zip(&b.trace).all(|(x, y)| x.loss.to_bits() == y.loss.to_bits())
        && trace_csv(&a.trace) == trace_csv(&b.trace);
    let pass = corpus.vocab.len() == 20 && (first - ln_v).abs() <= 0.5 && tail < 0.7 * ln_v && identical;
    verdict(
        pass,
        format!(
            "V={} initial {first:.3} (ln 20 = {ln_v:.3}), mean of last 10 steps {tail:.3} < {:.3}, reruns bit-identical: {identical}",
            corpus.vocab.len(),
            0.7 * ln_v
        ),
    )
}

fn electra() -> Verdict {
    let lines = synthetic_lines(15, 8, 4, 4, 3);
    let vocab = Vocab::build(lines.iter().map(String::as_str), 20);
    let corpus = Corpus::from_lines(&lines, vocab, 16).unwrap();
    let mut cfg = ModelConfig::new(parse_layout("B1-1H64D1").unwrap(), 20);
    cfg.train.seq_len = 16;
    cfg.train.objective = Objective::Electra;
    let disc = FunnelModel::init(cfg.clone()).unwrap();
    let gen = FunnelModel::init(generator_config(&cfg).unwrap()).unwrap();
    let mut rng = Rng::new(5);
    let mut bad = Vec::new();
    let mut positions = 0;
    let mut replaced = 0;
    for round in 0..6 {
        let batch = corpus.batch(4, &mut rng);
        for seq in &batch.seqs {
            let maskable = seq.maskable();
            let picks = rng.subset(maskable.len(), 3.min(maskable.len()));
            let mut slots: Vec<usize> = picks.iter().map(|&i| maskable[i]).collect();
            slots.sort_unstable();
            let plan = MaskPlan { originals: slots.iter().map(|&p| seq.ids[p]).collect(), positions: slots };
            let mut tape = Tape::new();
            let gb = gen.bind(&mut tape);
            let db = disc.bind(&mut tape);
            let out = electra_step(&mut tape, (&gen.config, &gb), (&disc.config, &db), &seq.ids, &seq.valid, &plan, &mut rng)
                .unwrap();
            for (i, (&fake, (&c, &o))) in out.batch.labels.iter().zip(out.batch.corrupted.iter().zip(&seq.ids)).enumerate() {
                positions += 1;
                replaced += usize::from(c != o);
                if fake != (c != o) || (!plan.positions.contains(&i) && c != o) {
                    bad.push(format!("round {round} position {i}: label {fake}, {o} -> {c}"));
                }
            }
        }
    }
    // forced generators: all mass on the original, then none on it
    let ids = [2, 7, 8, 9, 3];
    let plan = MaskPlan { positions: vec![1, 3], originals: vec![7, 9] };
    let mut keep = Tensor::zeros(&[2, 12]);
    keep.data_mut()[7] = 1.0;
    keep.data_mut()[12 + 9] = 1.0;
    let kept = sample_replacements(&ids, &plan, &keep, &mut rng).unwrap();
    let mut swap = Tensor::zeros(&[2, 12]);
    swap.data_mut()[11] = 1.0;
    swap.data_mut()[12 + 10] = 1.0;
    let swapped = sample_replacements(&ids, &plan, &swap, &mut rng).unwrap();
    if kept.labels.iter().any(|&f| f) || swapped.labels != vec![false, true, false, true, false] {
        bad.push(format!("forced draws: {:?} / {:?}", kept.labels, swapped.labels));
    }

    // a head with zero weights predicts 1/2 everywhere
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let mut r = Rng::new(seed);
        let mut tape = Tape::new();
        let h = tape.constant(rand_tensor(&mut r, &[8, 64]));
        let w = tape.constant(Tensor::zeros(&[64, 1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let labels: Vec<bool> = (0..8).map(|_| r.below(2) == 1).collect();
        let valid: Vec<bool> = (0..8).map(|i| i < 5 + seed as usize % 4).collect();
        let loss = disc_loss(&mut tape, h, w, b, &labels, &valid).unwrap();
        worst = worst.max((tape.value(loss).data()[0] - LN_2).abs());
    }
    if worst > 1e-9 {
        bad.push(format!("uniform head loss off ln 2 by {worst:.1e}"));
    }
    if bad.is_empty() {
        verdict(
            true,
            format!("{positions} labelled positions ({replaced} replaced) consistent; uniform head |loss - ln 2| = {worst:.1e}"),
        )
    } else {
        bad.truncate(5);
        verdict(false, bad.join("; "))
    }
}

fn entry(name: &str, dtype: u8, rank: u8, dims: &[u64], payload: &[u8]) -> Vec<u8> {
    let mut e = (name.len() as u32).to_le_bytes().to_vec();
    e.extend_from_slice(name.as_bytes());
    e.push(dtype);
    e.push(rank);
    dims.iter().for_each(|d| e.extend_from_slice(&d.to_le_bytes()));
    e.extend_from_slice(payload);
    e
}

fn archive(version: u32, entries: &[Vec<u8>]) -> Vec<u8> {
    let mut b = b"FTNT".to_vec();
    b.extend_from_slice(&version.to_le_bytes());
    b.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    entries.iter().for_each(|e| b.extend_from_slice(e));
    b
}

fn checkpoints() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = Vec::new();
    let mut tensors = 0;
    for dtype in [DType::F64, DType::F32] {
        let mut cfg = ModelConfig::new(parse_layout("B2-2H64D1").unwrap(), 30);
        cfg.dtype = dtype;
        cfg.train.objective = Objective::Electra;
        let model = FunnelModel::init(cfg.clone()).unwrap();
        let (ckpt, conf) = (dir.path().join("m.ftnt"), dir.path().join("c.json"));
        checkpoint::save_model(&model, &ckpt, &conf).unwrap();
        let back = checkpoint::load_model(ModelConfig::load(&conf).unwrap(), &ckpt).unwrap();
        for ((n1, a), (n2, b)) in model.params.iter().zip(back.params.iter()) {
            tensors += 1;
            if n1 != n2 || a.dtype() != b.dtype() || !a.bit_eq(b) {
                bad.push(format!("{dtype:?} {n1} did not survive"));
            }
        }
        if back.params.len() != model.params.len() {
            bad.push("tensor count changed".into());
        }
    }

    let one = entry("w", 1, 1, &[2], &[0u8; 16]);
    let cases: Vec<(&str, Vec<u8>, &str)> = vec![
        ("bad magic", b"FTNX\x01\0\0\0\0\0\0\0".to_vec(), "magic"),
        ("version 2", archive(2, &[]), "version"),
        ("cut header", archive(1, std::slice::from_ref(&one))[..14].to_vec(), "header"),
        ("rank 0", archive(1, &[entry("w", 1, 0, &[], &[])]), "header"),
        ("rank 5", archive(1, &[entry("w", 1, 5, &[1; 5], &[0; 8])]), "header"),
        ("dtype 7", archive(1, &[entry("w", 7, 1, &[1], &[0; 8])]), "header"),
        ("trailing byte", [archive(1, std::slice::from_ref(&one)), vec![0]].concat(), "header"),
        ("short payload", archive(1, &[entry("w", 1, 1, &[3], &[0; 16])]), "payload"),
        ("huge extent", archive(1, &[entry("w", 0, 2, &[u64::MAX, 4], &[])]), "payload"),
        ("duplicate", archive(1, &[one.clone(), one]), "duplicate"),
    ];
    for (what, bytes, want) in &cases {
        let got = match from_bytes(bytes) {
            Err(FunnelError::BadMagic) => "magic",
            Err(FunnelError::UnsupportedVersion(_)) => "version",
            Err(FunnelError::CorruptHeader(_)) => "header",
            Err(FunnelError::TruncatedPayload(_)) => "payload",
            Err(FunnelError::DuplicateName(_)) => "duplicate",
            Err(_) => "other error",
            Ok(_) => "accepted",
        };
        if got != *want {
            bad.push(format!("{what}: {got}, expected {want}"));
        }
    }

    let small = FunnelModel::init(ModelConfig::new(parse_layout("B2-2H64").unwrap(), 30)).unwrap();
    let bytes = to_bytes(&small.params);
    let ckpt = dir.path().join("small.ftnt");
    std::fs::write(&ckpt, &bytes).unwrap();
    let wider = ModelConfig::new(parse_layout("B2-2-2H64").unwrap(), 30);
    match checkpoint::load_model(wider, &ckpt) {
        Err(e) if e.category() == "shape" => {}
        other => bad.push(format!("layout mismatch gave {:?}", other.map(|_| ()))),
    }
    match checkpoint::load(&dir.path().join("absent.ftnt")) {
        Err(e) if e.category() == "io" => {}
        other => bad.push(format!("missing file gave {:?}", other.map(|_| ()))),
    }
    if bad.is_empty() {
        verdict(
            true,
            format!("{tensors} tensors bit-equal in f64 and f32; {} corruptions classified", cases.len()),
        )
    } else {
        verdict(false, bad.join("; "))
    }
}
