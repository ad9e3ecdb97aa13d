//! Sinusoidal relative-position encodings and the factorized position
//! tables.
//!
//! `r_t = cat(sin_t, cos_t)` where the `k`-th entry (k = 1..D/2) of `sin_t`
//! is `sin(t / 10000^(2k/D))`, and likewise for `cos_t`.

use crate::error::{FunnelError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct RelPosEncoding {
    width: usize,
    inv_freq: Vec<f64>,
}

impl RelPosEncoding {
    pub fn new(width: usize) -> Result<Self> {
        if width == 0 || !width.is_multiple_of(2) {
            return Err(FunnelError::Contract(format!(
                "encoding width {width} must be even and positive"
            )));
        }
        let half = width / 2;
        let inv_freq = (1..=half)
            .map(|k| 10000f64.powf(-(2.0 * k as f64) / width as f64))
            .collect();
        Ok(RelPosEncoding { width, inv_freq })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sin(&self, t: i64) -> Vec<f64> {
        self.inv_freq.iter().map(|f| (t as f64 * f).sin()).collect()
    }

    pub fn cos(&self, t: i64) -> Vec<f64> {
        self.inv_freq.iter().map(|f| (t as f64 * f).cos()).collect()
    }

    /// `r_t = cat(sin_t, cos_t)`.
    pub fn encode(&self, t: i64) -> Vec<f64> {
        let mut v = self.sin(t);
        v.extend(self.cos(t));
        v
    }

    /// Rows `r_d` for `d = lo, lo+1, ..., hi` (ascending distance).
    pub fn table(&self, lo: i64, hi: i64) -> Tensor {
        assert!(lo <= hi);
        let rows: Vec<f64> = (lo..=hi).flat_map(|d| self.encode(d)).collect();
        Tensor::new(&[(hi - lo + 1) as usize, self.width], rows).expect("table shape")
    }

    /// Rows `r_{q - k}` for every `k` in `k_pos`.
    pub fn pair_rows(&self, q: i64, k_pos: &[i64]) -> Tensor {
        let rows: Vec<f64> = k_pos.iter().flat_map(|&k| self.encode(q - k)).collect();
        Tensor::new(&[k_pos.len(), self.width], rows).expect("pair shape")
    }

    fn stack(&self, pos: &[i64], f: impl Fn(&Self, i64) -> Vec<f64>) -> Tensor {
        let rows: Vec<f64> = pos.iter().flat_map(|&p| f(self, p)).collect();
        Tensor::new(&[pos.len(), self.width], rows).expect("stack shape")
    }

    /// `phi_i = cat(sin_i, cos_i)` stacked over query positions.
    pub fn phi(&self, pos: &[i64]) -> Tensor {
        self.stack(pos, |e, p| [e.sin(p), e.cos(p)].concat())
    }

    /// `psi_j = cat(cos_j, cos_j)` stacked over key positions.
    pub fn psi(&self, pos: &[i64]) -> Tensor {
        self.stack(pos, |e, p| {
            let c = e.cos(p);
            [c.clone(), c].concat()
        })
    }

    /// `pi_i = cat(-cos_i, sin_i)` stacked over query positions.
    pub fn pi(&self, pos: &[i64]) -> Tensor {
        self.stack(pos, |e, p| {
            let neg: Vec<f64> = e.cos(p).into_iter().map(|x| -x).collect();
            [neg, e.sin(p)].concat()
        })
    }

    /// `omega_j = cat(sin_j, sin_j)` stacked over key positions.
    pub fn omega(&self, pos: &[i64]) -> Tensor {
        self.stack(pos, |e, p| {
            let s = e.sin(p);
            [s.clone(), s].concat()
        })
    }
}
