//! Damped Newton iteration for gradient systems `∇F(x) = 0`.
//!
//! The residual is `R = W⁻¹∇F` and the merit function `‖R‖²_W`; the Jacobian
//! is the symmetric Hessian of `F`.

use crate::error::{Error, Result};
use crate::linalg::{solve_symmetric, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Stop once `‖R‖_W ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo backtracking on the merit function.
    pub damping: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 50,
            damping: true,
        }
    }
}

impl NewtonOptions {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Precondition(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Precondition("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewtonStats {
    pub iterations: usize,
    /// `‖R‖_W` before each step and after the last one.
    pub residual_history: Vec<f64>,
    /// `‖Δx‖₂` of each accepted step.
    pub step_norms: Vec<f64>,
    /// Accepted step lengths.
    pub step_lengths: Vec<f64>,
}

pub(crate) trait GradientSystem {
    fn weights(&self) -> &[f64];
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> CsrMatrix<f64>;

    fn residual_norm(&self, x: &[f64]) -> f64 {
        self.gradient(x)
            .iter()
            .zip(self.weights())
            .map(|(g, w)| g * g / w)
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn newton<S: GradientSystem>(
    sys: &S,
    mut x: Vec<f64>,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, NewtonStats)> {
    opts.validate()?;
    let mut stats = NewtonStats::default();
    let mut res = sys.residual_norm(&x);
    stats.residual_history.push(res);
    loop {
        if !res.is_finite() {
            return Err(Error::MaxIterations {
                iterations: stats.iterations,
                residual: res,
            });
        }
        if res <= opts.tol {
            return Ok((x, stats));
        }
        if stats.iterations >= opts.max_iter {
            return Err(Error::MaxIterations {
                iterations: stats.iterations,
                residual: res,
            });
        }
        let g = sys.gradient(&x);
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let dx = solve_symmetric(&sys.hessian(&x), &rhs)?;
        let mut t = 1.0;
        let mut best: Option<(f64, f64)> = None;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + t * d).collect();
            let r = sys.residual_norm(&trial);
            if best.is_none_or(|(_, br)| r < br) {
                best = Some((t, r));
            }
            let accept = !opts.damping || r * r <= (1.0 - 2e-4 * t) * res * res;
            if accept || t < 1.0 / 1024.0 {
                break;
            }
            t *= 0.5;
        }
        let (t, r) = best.expect("at least one trial");
        x.iter_mut().zip(&dx).for_each(|(a, d)| *a += t * d);
        stats.iterations += 1;
        stats.step_norms.push(t * dx.iter().map(|d| d * d).sum::<f64>().sqrt());
        stats.step_lengths.push(t);
        res = r;
        stats.residual_history.push(res);
    }
}
