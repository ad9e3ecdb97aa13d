//! Central-difference gradient checking.

use crate::autodiff::{Tape, Var};
use crate::error::{FunnelError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Which coordinates of each parameter tensor get a finite-difference probe.
#[derive(Debug, Clone, Copy)]
pub enum Coords {
    All,
    /// Up to `per_tensor` uniformly drawn coordinates from every tensor.
    Sample { per_tensor: usize, seed: u64 },
}

/// Finite-difference formula.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(θ+ε) − f(θ−ε)) / 2ε`, error O(ε²).
    #[default]
    Two,
    /// `(8(f(θ+ε) − f(θ−ε)) − (f(θ+2ε) − f(θ−2ε))) / 12ε`, error O(ε⁴). Lets
    /// ε be large enough that roundoff in `f` stays far below the 1e-8
    /// denominator floor, which matters when some gradients are exactly zero.
    Four,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(tensor index, flat coordinate, analytic, numeric)` at the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare reverse-mode gradients of `f` against central differences
/// `(f(θ+εe) − f(θ−εe)) / 2ε`.
///
/// `f` receives a fresh tape and one leaf per entry of `params` and must
/// return a scalar node.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64, coords: Coords) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_with(f, params, eps, coords, Stencil::Two)
}

/// [`grad_check`] with a choice of difference formula.
pub fn grad_check_with<F>(
    f: F,
    params: &[Tensor],
    eps: f64,
    coords: Coords,
    stencil: Stencil,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = f(&mut tape, &vars)?;
        let v = tape.value(root);
        if v.len() != 1 {
            return Err(FunnelError::Contract("grad_check function must be scalar".into()));
        }
        let v = v.data()[0];
        if !v.is_finite() {
            return Err(FunnelError::Numeric(format!("function value {v} is not finite")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    if !tape.value(root).all_finite() {
        return Err(FunnelError::Numeric("function value is not finite".into()));
    }
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut rng = match coords {
        Coords::Sample { seed, .. } => Some(Rng::new(seed)),
        Coords::All => None,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for (ti, p) in params.iter().enumerate() {
        let picks: Vec<usize> = match (&coords, rng.as_mut()) {
            (Coords::Sample { per_tensor, .. }, Some(r)) => r.subset(p.len(), *per_tensor),
            _ => (0..p.len()).collect(),
        };
        for k in picks {
            let orig = p.data()[k];
            let mut at = |h: f64| -> Result<f64> {
                work[ti].data_mut()[k] = orig + h;
                let v = eval(&work);
                work[ti].data_mut()[k] = orig;
                v
            };
            let numeric = match stencil {
                Stencil::Two => (at(eps)? - at(-eps)?) / (2.0 * eps),
                Stencil::Four => {
                    let near = at(eps)? - at(-eps)?;
                    let far = at(2.0 * eps)? - at(-2.0 * eps)?;
                    (8.0 * near - far) / (12.0 * eps)
                }
            };
            let a = analytic[ti].data()[k];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst = Some((ti, k, a, numeric));
            }
        }
    }
    Ok(report)
}
