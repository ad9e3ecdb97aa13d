use funnel_core::autodiff::Tape;
use funnel_core::config::ModelConfig;
use funnel_core::corpus::{CLS, SEP};
use funnel_core::decoder::{decoder_forward, upsample_tensor};
use funnel_core::encoder::{BlockState, EncoderState};
use funnel_core::layout::parse_layout;
use funnel_core::model::FunnelModel;
use funnel_core::params::Bound;
use funnel_core::rng::Rng;
use funnel_core::tensor::Tensor;

fn fuse(cfg: &ModelConfig, h1: &Tensor, last: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let t = h1.dims2().0;
    let tm = last.dims2().0;
    let enc = EncoderState {
        blocks: vec![
            BlockState { hidden: tape.constant(h1.clone()), pos: (0..t as i64).collect(), mask: vec![true; t] },
            BlockState { hidden: tape.constant(last.clone()), pos: (0..tm as i64).collect(), mask: vec![true; tm] },
        ],
        last_probs: Vec::new(),
    };
    let bound = Bound::from_vars(&[], &[]);
    let out = decoder_forward(&mut tape, cfg, &bound, &enc, &mut Rng::new(0)).unwrap();
    assert_eq!(out.g, out.hidden);
    tape.value(out.g).clone()
}

#[test]
fn fusion_matches_repeat_and_add() {
    let cfg = ModelConfig::new(parse_layout("B1-1-1H64").unwrap(), 20);
    let mut rng = Rng::new(1);
    let h1 = rng.tensor_normal(&[16, 64], 1.0);
    let h3 = rng.tensor_normal(&[4, 64], 1.0);
    let g = fuse(&cfg, &h1, &h3);
    for i in 0..16 {
        for (j, v) in g.row(i).iter().enumerate() {
            assert_eq!(*v, h1.row(i)[j] + h3.row(i / 4)[j]);
        }
    }
}

// A change to block 1 passes straight through to the decoder input.
#[test]
fn fusion_is_linear_in_block_one() {
    let cfg = ModelConfig::new(parse_layout("B1-1H64").unwrap(), 20);
    let mut rng = Rng::new(2);
    let h1 = rng.tensor_normal(&[8, 64], 1.0);
    let h2 = rng.tensor_normal(&[4, 64], 1.0);
    let delta = rng.tensor_normal(&[8, 64], 1.0);
    let shifted = Tensor::new(&[8, 64], h1.data().iter().zip(delta.data()).map(|(a, b)| a + b).collect()).unwrap();
    let (g0, g1) = (fuse(&cfg, &h1, &h2), fuse(&cfg, &shifted, &h2));
    for ((a, b), d) in g1.data().iter().zip(g0.data()).zip(delta.data()) {
        assert!((a - b - d).abs() < 1e-12);
    }
}

#[test]
fn upsample_rejects_wrong_length() {
    let h = Tensor::zeros(&[3, 2]);
    assert!(upsample_tensor(&h, 2, 8).is_err());
    assert_eq!(upsample_tensor(&h, 2, 6).unwrap().dims2(), (6, 2));
}

#[test]
fn token_output_is_full_length() {
    let mut cfg = ModelConfig::new(parse_layout("B1-1-1H64D2").unwrap(), 20);
    cfg.seed = 4;
    let m = FunnelModel::init(cfg).unwrap();
    let mut ids = vec![CLS, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, SEP];
    let e = m.encode(&ids, &[true; 16], true).unwrap();
    assert_eq!(e.tokens.as_ref().unwrap().dims2(), (16, 64));
    // A late token reaches early positions only through the decoder.
    ids[14] = 19;
    let f = m.encode(&ids, &[true; 16], true).unwrap();
    assert_ne!(e.tokens.unwrap().row(1), f.tokens.unwrap().row(1));
}

#[test]
fn no_decoder_layers_means_fused_output() {
    let cfg = ModelConfig::new(parse_layout("B1-1H64").unwrap(), 20);
    let m = FunnelModel::init(cfg.clone()).unwrap();
    let ids = [CLS, 5, 6, 7, 8, 9, 10, SEP];
    let e = m.encode(&ids, &[true; 8], true).unwrap();
    let expected = fuse(&cfg, &e.blocks[0], &e.blocks[1]);
    assert!(e.tokens.unwrap().bit_eq(&expected));
}
