//! The position term `(W_Q h_i + u)ᵀ (W_R r_{q_i - k_j})` of relative
//! attention, computed three ways.
//!
//! All routes take explicit integer position ids for queries and keys, so a
//! pooled query sequence can attend to an unpooled key sequence.
//!
//! * [`AttnVariant::Naive`] materializes `r` for every (query, key) pair and
//!   projects each one; `O(Tq·Tk·D·d)`. This is the reference route.
//! * [`AttnVariant::GatherShift`] projects a table of every distance once and
//!   gathers per pair.
//! * [`AttnVariant::Factorized`] uses `sin(a-b)` / `cos(a-b)` expansions to
//!   write the term as two outer products, with no gather.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::encoding::RelPosEncoding;
use crate::autodiff::{Tape, Var};
use crate::error::{FunnelError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum AttnVariant {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "gather")]
    GatherShift,
    #[default]
    #[serde(rename = "factorized")]
    Factorized,
}

impl AttnVariant {
    pub const ALL: [AttnVariant; 3] = [
        AttnVariant::Naive,
        AttnVariant::GatherShift,
        AttnVariant::Factorized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttnVariant::Naive => "naive",
            AttnVariant::GatherShift => "gather",
            AttnVariant::Factorized => "factorized",
        }
    }
}

impl fmt::Display for AttnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttnVariant {
    type Err = FunnelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(AttnVariant::Naive),
            "gather" => Ok(AttnVariant::GatherShift),
            "factorized" => Ok(AttnVariant::Factorized),
            other => Err(FunnelError::Config(format!("unknown attention variant {other:?}"))),
        }
    }
}

/// Ascending distance table `r_{-m} ..= r_m`, size `2m + 1`, where `m` is
/// the largest `|q - k|`. For ids `0..T` on both sides that is the usual
/// `2T - 1` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistanceTable {
    pub max_distance: i64,
}

impl DistanceTable {
    pub fn covering(q_pos: &[i64], k_pos: &[i64]) -> Self {
        let span = q_pos
            .iter()
            .flat_map(|&q| k_pos.iter().map(move |&k| (q - k).abs()))
            .max()
            .unwrap_or(0);
        DistanceTable {
            max_distance: span,
        }
    }

    pub fn len(&self) -> usize {
        (2 * self.max_distance + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row holding `r_d`.
    pub fn row_of(&self, d: i64) -> Result<usize> {
        if d.abs() > self.max_distance {
            return Err(FunnelError::Contract(format!(
                "distance {d} outside table of max distance {}",
                self.max_distance
            )));
        }
        Ok((d + self.max_distance) as usize)
    }

    /// Row-major `[Tq, Tk]` gather index: entry (i, j) selects `r_{q_i - k_j}`.
    pub fn index(&self, q_pos: &[i64], k_pos: &[i64]) -> Result<Vec<usize>> {
        let mut idx = Vec::with_capacity(q_pos.len() * k_pos.len());
        for &q in q_pos {
            for &k in k_pos {
                idx.push(self.row_of(q - k)?);
            }
        }
        Ok(idx)
    }

    pub fn tensor(&self, enc: &RelPosEncoding) -> Tensor {
        enc.table(-self.max_distance, self.max_distance)
    }
}

/// Position scores `[Tq, Tk]` on the tape.
///
/// `q` is the projected query `[Tq, d]`, `u` the position bias `[d]`, and
/// `w_r` the encoding projection `[D, d]` where `D` is the encoding width.
pub fn position_scores(
    tape: &mut Tape,
    variant: AttnVariant,
    q: Var,
    u: Var,
    w_r: Var,
    q_pos: &[i64],
    k_pos: &[i64],
) -> Result<Var> {
    let (tq, d) = tape.value(q).dims2();
    let (width, wd) = tape.value(w_r).dims2();
    if tq != q_pos.len() || wd != d || tape.value(u).len() != d {
        return Err(FunnelError::dim("position_scores", tape.shape(q), tape.shape(w_r)));
    }
    if k_pos.is_empty() {
        return Err(FunnelError::Contract("no key positions".into()));
    }
    let enc = RelPosEncoding::new(width)?;
    let qu = tape.add_row(q, u)?;
    match variant {
        AttnVariant::Naive => {
            let mut rows = Vec::with_capacity(tq);
            for (i, &qp) in q_pos.iter().enumerate() {
                let r = tape.constant(enc.pair_rows(qp, k_pos));
                let proj = tape.matmul(r, w_r)?;
                let qi = tape.select_rows(qu, &[i])?;
                rows.push(tape.matmul_nt(qi, proj)?);
            }
            tape.concat_rows(&rows)
        }
        AttnVariant::GatherShift => {
            let table = DistanceTable::covering(q_pos, k_pos);
            let idx = table.index(q_pos, k_pos)?;
            let r = tape.constant(table.tensor(&enc));
            let rw = tape.matmul(r, w_r)?;
            let full = tape.matmul_nt(qu, rw)?;
            tape.gather_cols(full, &idx, k_pos.len())
        }
        AttnVariant::Factorized => {
            let qq = tape.matmul_nt(qu, w_r)?;
            let phi = tape.constant(enc.phi(q_pos));
            let psi = tape.constant(enc.psi(k_pos));
            let pi = tape.constant(enc.pi(q_pos));
            let omega = tape.constant(enc.omega(k_pos));
            let a = tape.mul(qq, phi)?;
            let a = tape.matmul_nt(a, psi)?;
            let b = tape.mul(qq, pi)?;
            let b = tape.matmul_nt(b, omega)?;
            tape.add(a, b)
        }
    }
}

/// Position scores on plain tensors.
pub fn position_term(
    variant: AttnVariant,
    q_states: &Tensor,
    q_pos: &[i64],
    k_pos: &[i64],
    w_r: &Tensor,
    u: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let q = tape.constant(q_states.clone());
    let u = tape.constant(u.clone());
    let w = tape.constant(w_r.clone());
    let out = position_scores(&mut tape, variant, q, u, w, q_pos, k_pos)?;
    Ok(tape.value(out).clone())
}

pub fn position_term_naive(
    q_states: &Tensor,
    q_pos: &[i64],
    k_pos: &[i64],
    w_r: &Tensor,
    u: &Tensor,
) -> Result<Tensor> {
    position_term(AttnVariant::Naive, q_states, q_pos, k_pos, w_r, u)
}

pub fn position_term_gather(
    q_states: &Tensor,
    q_pos: &[i64],
    k_pos: &[i64],
    w_r: &Tensor,
    u: &Tensor,
) -> Result<Tensor> {
    position_term(AttnVariant::GatherShift, q_states, q_pos, k_pos, w_r, u)
}

pub fn position_term_factorized(
    q_states: &Tensor,
    q_pos: &[i64],
    k_pos: &[i64],
    w_r: &Tensor,
    u: &Tensor,
) -> Result<Tensor> {
    position_term(AttnVariant::Factorized, q_states, q_pos, k_pos, w_r, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Independent scalar double loop over (i, j, a, b).
    fn oracle(q: &Tensor, q_pos: &[i64], k_pos: &[i64], w_r: &Tensor, u: &Tensor) -> Vec<f64> {
        let (tq, d) = q.dims2();
        let width = w_r.shape()[0];
        let half = width / 2;
        let mut out = vec![0.0; tq * k_pos.len()];
        for i in 0..tq {
            for (j, &kp) in k_pos.iter().enumerate() {
                let dist = (q_pos[i] - kp) as f64;
                let mut s = 0.0;
                for a in 0..width {
                    let k = (a % half) + 1;
                    let angle = dist / 10000f64.powf(2.0 * k as f64 / width as f64);
                    let r = if a < half { angle.sin() } else { angle.cos() };
                    for b in 0..d {
                        s += (q.at(i, b) + u.data()[b]) * w_r.at(a, b) * r;
                    }
                }
                out[i * k_pos.len() + j] = s;
            }
        }
        out
    }

    fn random_case(rng: &mut Rng, tq: usize, width: usize, d: usize) -> (Tensor, Tensor, Tensor) {
        (
            rng.tensor_normal(&[tq, d], 1.0),
            rng.tensor_normal(&[width, d], 1.0),
            rng.tensor_normal(&[d], 1.0),
        )
    }

    #[test]
    fn naive_matches_double_loop() {
        let mut rng = Rng::new(1);
        let (q, w, u) = random_case(&mut rng, 4, 8, 8);
        let pos: Vec<i64> = (0..4).collect();
        let got = position_term_naive(&q, &pos, &pos, &w, &u).unwrap();
        let want = oracle(&q, &pos, &pos, &w, &u);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_query_gives_zero_scores() {
        let mut rng = Rng::new(2);
        let w = rng.tensor_normal(&[8, 4], 1.0);
        let q = Tensor::zeros(&[3, 4]);
        let u = Tensor::zeros(&[4]);
        let pos = [0, 1, 2];
        for v in AttnVariant::ALL {
            let s = position_term(v, &q, &pos, &pos, &w, &u).unwrap();
            assert!(s.data().iter().all(|&x| x == 0.0), "{v}");
        }
    }

    #[test]
    fn distance_zero_sums_cosine_half() {
        let mut rng = Rng::new(3);
        let (q, w, u) = random_case(&mut rng, 1, 8, 4);
        let proj = {
            let mut qu = q.clone();
            for (x, b) in qu.data_mut().iter_mut().zip(u.data()) {
                *x += b;
            }
            qu.matmul(&w.transpose()).unwrap()
        };
        let cos_half: f64 = proj.data()[4..].iter().sum();
        for v in AttnVariant::ALL {
            let s = position_term(v, &q, &[0], &[0], &w, &u).unwrap();
            assert!((s.data()[0] - cos_half).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn unpooled_index_rows_are_shifted() {
        let pos: Vec<i64> = (0..6).collect();
        let t = DistanceTable::covering(&pos, &pos);
        assert_eq!(t.len(), 11);
        let idx = t.index(&pos, &pos).unwrap();
        for i in 0..6 {
            for j in 0..5 {
                assert_eq!(idx[i * 6 + j] as i64 - idx[i * 6 + j + 1] as i64, 1);
            }
        }
    }

    #[test]
    fn out_of_table_distance_is_error() {
        let t = DistanceTable { max_distance: 3 };
        assert!(t.row_of(4).is_err());
        assert!(t.row_of(-3).is_ok());
    }

    #[test]
    fn pooled_queries_match_oracle() {
        let mut rng = Rng::new(4);
        let q_pos = [1, 3, 5, 7];
        let k_pos: Vec<i64> = (0..8).collect();
        let (q, w, u) = random_case(&mut rng, 4, 16, 8);
        let want = oracle(&q, &q_pos, &k_pos, &w, &u);
        for v in [AttnVariant::GatherShift, AttnVariant::Factorized] {
            let got = position_term(v, &q, &q_pos, &k_pos, &w, &u).unwrap();
            for (g, w) in got.data().iter().zip(&want) {
                assert!((g - w).abs() < 1e-10, "{v}");
            }
        }
    }

    #[test]
    fn single_frequency_hand_case() {
        // width 2: one frequency f = 10000^(-1); q·W_Rᵀ = (a, b) gives
        // a·sin(f(i-j)) + b·cos(f(i-j))
        let w = Tensor::eye(2);
        let (a, b) = (0.7, -1.9);
        let q = Tensor::new(&[1, 2], vec![a, b]).unwrap();
        let u = Tensor::zeros(&[2]);
        let f = 1e-4;
        for (i, j) in [(5i64, 2i64), (0, 9), (13, 13)] {
            let want = a * (f * (i - j) as f64).sin() + b * (f * (i - j) as f64).cos();
            let got = position_term_factorized(&q, &[i], &[j], &w, &u).unwrap();
            assert!((got.data()[0] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in AttnVariant::ALL {
            assert_eq!(v.name().parse::<AttnVariant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
    }
}
