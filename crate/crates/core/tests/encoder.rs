use funnel_core::autodiff::Tape;
use funnel_core::config::ModelConfig;
use funnel_core::corpus::{CLS, PAD, SEP};
use funnel_core::layout::parse_layout;
use funnel_core::model::FunnelModel;
use funnel_core::relattn::{attention, AttnSettings, AttnVariant, AttnWeights, LAYER_NORM_EPS};
use funnel_core::rng::Rng;
use funnel_core::tensor::Tensor;

const D: usize = 64;

fn layer_norm_row(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - mean) / (var + LAYER_NORM_EPS).sqrt()).collect()
}

// With zero query/key projections and zero position bias every score is
// equal, so each query averages the unmasked value rows.
#[test]
fn uniform_attention_by_hand() {
    let t = 4;
    let mask = [true, true, true, false];
    let mut rng = Rng::new(3);
    let h = rng.tensor_normal(&[t, D], 1.0);
    for variant in [AttnVariant::Naive, AttnVariant::GatherShift, AttnVariant::Factorized] {
        let mut tape = Tape::new();
        let x = tape.leaf(h.clone());
        let zero_mat = tape.leaf(Tensor::zeros(&[D, D]));
        let zero_vec = tape.leaf(Tensor::zeros(&[D]));
        let eye = tape.leaf(Tensor::eye(D));
        let w = AttnWeights {
            wq: zero_mat,
            bq: zero_vec,
            wk: zero_mat,
            bk: zero_vec,
            wv: eye,
            bv: zero_vec,
            wo: eye,
            bo: zero_vec,
            u: zero_vec,
            v: zero_vec,
            ln_gamma: tape.leaf(Tensor::ones(&[D])),
            ln_beta: zero_vec,
        };
        let s = AttnSettings { heads: 1, head_dim: D, variant, dropout: 0.0, attn_dropout: 0.0 };
        let pos: Vec<i64> = (0..t as i64).collect();
        let out = attention(&mut tape, x, x, &pos, &pos, &mask, &w, zero_mat, &s, &mut rng).unwrap();

        let mut avg = vec![0.0; D];
        for i in (0..t).filter(|&i| mask[i]) {
            for (a, v) in avg.iter_mut().zip(h.row(i)) {
                *a += v / 3.0;
            }
        }
        let got = tape.value(out.out);
        for i in 0..t {
            let res: Vec<f64> = h.row(i).iter().zip(&avg).map(|(a, b)| a + b).collect();
            for (g, e) in got.row(i).iter().zip(layer_norm_row(&res)) {
                assert!((g - e).abs() < 1e-10, "{variant:?} row {i}: {g} vs {e}");
            }
        }
        for p in &out.probs {
            for i in 0..t {
                assert!((p.row(i)[3]).abs() < 1e-15);
                assert!((p.row(i)[0] - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }
}

fn small_model(layout: &str) -> FunnelModel {
    let mut cfg = ModelConfig::new(parse_layout(layout).unwrap(), 30);
    cfg.seed = 11;
    FunnelModel::init(cfg).unwrap()
}

#[test]
fn padding_ids_do_not_leak() {
    let m = small_model("B1-1-1H64D1");
    let real = [CLS, 9, 12, 17, SEP];
    let valid: Vec<bool> = (0..8).map(|i| i < real.len()).collect();
    let mut a = real.to_vec();
    a.resize(8, PAD);
    let mut b = real.to_vec();
    b.extend([21, 5, 28]);
    let ea = m.encode(&a, &valid, true).unwrap();
    let eb = m.encode(&b, &valid, true).unwrap();
    assert_eq!(ea.cls(), eb.cls());
    let (ta, tb) = (ea.tokens.unwrap(), eb.tokens.unwrap());
    for i in 0..real.len() {
        assert_eq!(ta.row(i), tb.row(i));
    }
}

#[test]
fn block_lengths_follow_the_schedule() {
    let m = small_model("B1-1-1H64D1");
    let ids = vec![CLS; 16];
    let e = m.encode(&ids, &[true; 16], true).unwrap();
    assert_eq!(e.shapes(), vec![[16, D], [8, D], [4, D]]);
    assert_eq!(e.tokens.unwrap().dims2(), (16, D));
}

#[test]
fn cls_depends_on_content() {
    let m = small_model("B1-1H64");
    let valid = [true; 8];
    let a = m.encode(&[CLS, 7, 8, 9, 10, 11, 12, SEP], &valid, false).unwrap();
    let b = m.encode(&[CLS, 7, 8, 9, 10, 11, 13, SEP], &valid, false).unwrap();
    assert_ne!(a.cls(), b.cls());
}

#[test]
fn odd_length_is_rejected() {
    let m = small_model("B1-1-1H64");
    let err = m.encode(&[CLS; 6], &[true; 6], false).unwrap_err();
    assert_eq!(err.category(), "contract", "{err}");
}

#[test]
fn mismatched_mask_is_rejected() {
    let m = small_model("B1-1H64");
    assert!(m.encode(&[CLS; 8], &[true; 7], false).is_err());
}
