//! Bound states of the nonlinear Dirac equation
//! `Dψ − χ_K|ψ|^{p−2}ψ = ωψ` on the compact core, with the half-lines
//! eliminated through their explicit decaying solutions.
//!
//! Newton runs in the real gauge `ψ¹ = u`, `ψ² = i w` (`u`, `w` real): the
//! discrete action
//!
//! ```text
//! L(x) = ½ xᵀ(H − ωW)x + ½ c r Σ_hl x_v² − (1/p) Q(x)
//! ```
//!
//! is then a real function of the gauge coordinates `x`, `Q` being the
//! half-cell product rule for `∫_K |ψ|^p`, and the residual is `W⁻¹∇L`.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dirac_op::{assemble_dirac, DiscreteOperator};
use crate::discretize::{Mesh, ScalarField, SpinorField, SpinorTail};
use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::linalg::CsrMatrix;
use crate::newton::{newton, GradientSystem, NewtonOptions, NewtonStats};

/// Nontriviality threshold on `∫_K |ψ|^p`.
pub const NONTRIVIAL_MASS: f64 = 1e-10;

/// Exterior solution data `ψ²(v) = i r ψ¹(v)`, decay `e^{−kx}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalflineClosure {
    pub ratio: f64,
    pub decay: f64,
}

pub fn halfline_closure(m: f64, c: f64, omega: f64) -> Result<HalflineClosure> {
    if !(m > 0.0 && c > 0.0 && m.is_finite() && c.is_finite()) {
        return Err(Error::Precondition(format!(
            "m and c must be positive, got m = {m}, c = {c}"
        )));
    }
    let mc2 = m * c * c;
    if !(omega.abs() < mc2) {
        return Err(Error::Precondition(format!(
            "ω = {omega} is outside the spectral gap (−{mc2}, {mc2})"
        )));
    }
    Ok(HalflineClosure {
        ratio: ((mc2 - omega) / (mc2 + omega)).sqrt(),
        decay: ((mc2 - omega) * (mc2 + omega)).sqrt() / c,
    })
}

/// Pointwise linear residual of a tail at distance `x` from its vertex,
/// relative to `(mc² + |ω|)|ψ(x)|`:
/// `R¹ = −ic(ψ²)' + (mc² − ω)ψ¹`, `R² = −ic(ψ¹)' − (mc² + ω)ψ²`.
pub fn tail_linear_residual(tail: &SpinorTail, m: f64, c: f64, omega: f64, x: f64) -> f64 {
    let mc2 = m * c * c;
    let i = C64::new(0.0, 1.0);
    let p1 = tail.psi1(x);
    let p2 = tail.psi2(x);
    let dp1 = p1 * -tail.decay;
    let dp2 = p2 * -tail.decay;
    let r1 = -i * c * dp2 + p1 * (mc2 - omega);
    let r2 = -i * c * dp1 - p2 * (mc2 + omega);
    let scale = (mc2 + omega.abs()) * (p1.norm_sqr() + p2.norm_sqr()).sqrt();
    if scale == 0.0 {
        return 0.0;
    }
    (r1.norm_sqr() + r2.norm_sqr()).sqrt() / scale
}

#[derive(Debug, Clone)]
pub struct NldProblem {
    m: f64,
    c: f64,
    omega: f64,
    p: f64,
    closure: HalflineClosure,
    op: DiscreteOperator,
    /// `H_r − ωW + c r E` in gauge coordinates, unsymmetrized.
    linear: CsrMatrix<f64>,
    weights: Vec<f64>,
    /// `(ψ¹ unknown, ψ² unknown, h/2)` per core half-cell.
    half_cells: Vec<(usize, usize, f64)>,
    /// `(vertex unknown, half-line index)` per closed half-line.
    closures: Vec<(usize, usize)>,
}

impl NldProblem {
    pub fn new(g: &MetricGraph, m: f64, c: f64, omega: f64, p: f64, h: f64) -> Result<Self> {
        let closure = halfline_closure(m, c, omega)?;
        if !(p > 2.0 && p.is_finite()) {
            return Err(Error::Precondition(format!("p must exceed 2, got {p}")));
        }
        if g.halflines().is_empty() {
            return Err(Error::Precondition("graph has no half-line".into()));
        }
        let mesh = Mesh::closure(g, h)?;
        let op = assemble_dirac(&mesh, m, c)?;
        let weights = op.weights().to_vec();
        let sr = op.real_symmetric()?;
        let mut trips: Vec<(usize, usize, f64)> = sr
            .iter()
            .map(|(i, j, v)| (i, j, v * (weights[i] * weights[j]).sqrt()))
            .collect();
        for (i, w) in weights.iter().enumerate() {
            trips.push((i, i, -omega * w));
        }
        let closures: Vec<(usize, usize)> = g
            .halflines()
            .iter()
            .enumerate()
            .map(|(k, hl)| (mesh.spinor_vertex_dof(hl.attach).expect("closure vertex has a dof"), k))
            .collect();
        for &(i, _) in &closures {
            trips.push((i, i, c * closure.ratio));
        }
        let linear = CsrMatrix::from_triplets(weights.len(), weights.len(), trips);
        let mut half_cells = Vec::new();
        for (s, seg) in mesh.segments().iter().enumerate() {
            if !seg.origin.is_core() {
                continue;
            }
            for j in 0..seg.intervals() {
                let b = mesh.spinor_mid(s, j);
                for a in [mesh.spinor_node(s, j), mesh.spinor_node(s, j + 1)]
                    .into_iter()
                    .flatten()
                {
                    half_cells.push((a, b, 0.5 * seg.h()));
                }
            }
        }
        Ok(NldProblem {
            m,
            c,
            omega,
            p,
            closure,
            op,
            linear,
            weights,
            half_cells,
            closures,
        })
    }

    pub fn mass(&self) -> f64 {
        self.m
    }

    pub fn speed(&self) -> f64 {
        self.c
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn closure(&self) -> HalflineClosure {
        self.closure
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    pub fn mesh(&self) -> &Mesh {
        self.op.mesh()
    }

    pub fn graph(&self) -> &MetricGraph {
        self.op.mesh().graph()
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Tails whose amplitudes are the vertex values of the complex vector `z`.
    pub fn tails(&self, z: &[C64]) -> Vec<SpinorTail> {
        self.closures
            .iter()
            .map(|&(i, k)| SpinorTail {
                halfline: k,
                amplitude: z[i],
                decay: self.closure.decay,
                ratio: self.closure.ratio,
            })
            .collect()
    }

    /// Complex field of gauge coordinates `x`.
    pub fn field_from_gauge(&self, x: &[f64]) -> Result<SpinorField> {
        let z = self.to_complex(x);
        self.mesh().spinor_from_vec(&z, self.tails(&z))
    }

    /// Gauge coordinates `Re(ḡ_i ψ_i)` of a field. A field in the real gauge
    /// is reproduced exactly; other fields are projected.
    pub fn gauge_coordinates(&self, psi: &SpinorField) -> Result<Vec<f64>> {
        let z = self.mesh().spinor_to_vec(psi)?;
        Ok(z.iter().zip(self.op.gauge()).map(|(v, g)| (g.conj() * v).re).collect())
    }

    fn to_complex(&self, x: &[f64]) -> Vec<C64> {
        x.iter().zip(self.op.gauge()).map(|(v, g)| g * *v).collect()
    }

    fn lp_core_vec(&self, x: &[f64]) -> f64 {
        self.half_cells
            .iter()
            .map(|&(a, b, w)| w * (x[a] * x[a] + x[b] * x[b]).powf(0.5 * self.p))
            .sum()
    }

    /// `∇L` in gauge coordinates.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.linear.matvec(x).expect("dimension");
        for &(a, b, w) in &self.half_cells {
            let s = x[a] * x[a] + x[b] * x[b];
            let f = w * s.powf(0.5 * (self.p - 2.0));
            g[a] -= f * x[a];
            g[b] -= f * x[b];
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> CsrMatrix<f64> {
        let mut trips: Vec<(usize, usize, f64)> = self.linear.iter().collect();
        for &(a, b, w) in &self.half_cells {
            let s = x[a] * x[a] + x[b] * x[b];
            if s.sqrt() <= 1e-14 {
                continue;
            }
            let g = w * s.powf(0.5 * (self.p - 2.0));
            let q = w * (self.p - 2.0) * s.powf(0.5 * (self.p - 4.0));
            trips.push((a, a, -g - q * x[a] * x[a]));
            trips.push((b, b, -g - q * x[b] * x[b]));
            trips.push((a, b, -q * x[a] * x[b]));
            trips.push((b, a, -q * x[a] * x[b]));
        }
        CsrMatrix::from_triplets(self.dim(), self.dim(), trips)
    }

    /// Discrete action in gauge coordinates.
    pub fn action_gauge(&self, x: &[f64]) -> f64 {
        let lx = self.linear.matvec(x).expect("dimension");
        0.5 * x.iter().zip(&lx).map(|(a, b)| a * b).sum::<f64>() - self.lp_core_vec(x) / self.p
    }

    /// Complex residual `W⁻¹∇L` evaluated through the complex operator.
    pub fn residual_vec(&self, z: &[C64]) -> Result<Vec<C64>> {
        let mut r = self.op.apply_vec(z)?;
        for (ri, zi) in r.iter_mut().zip(z) {
            *ri -= zi * self.omega;
        }
        for &(i, _) in &self.closures {
            r[i] += z[i] * (self.c * self.closure.ratio / self.weights[i]);
        }
        for &(a, b, w) in &self.half_cells {
            let s = z[a].norm_sqr() + z[b].norm_sqr();
            let f = w * s.powf(0.5 * (self.p - 2.0));
            r[a] -= z[a] * (f / self.weights[a]);
            r[b] -= z[b] * (f / self.weights[b]);
        }
        Ok(r)
    }

    /// `‖r‖_W` of a complex residual vector.
    pub fn weighted_norm(&self, r: &[C64]) -> f64 {
        r.iter()
            .zip(&self.weights)
            .map(|(v, w)| w * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

impl GradientSystem for NldProblem {
    fn weights(&self) -> &[f64] {
        &self.weights
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        NldProblem::gradient(self, x)
    }
    fn hessian(&self, x: &[f64]) -> CsrMatrix<f64> {
        NldProblem::hessian(self, x)
    }
}

/// `R¹ = −ic(ψ²)' + (mc² − ω)ψ¹ − χ_K|ψ|^{p−2}ψ¹`,
/// `R² = −ic(ψ¹)' − (mc² + ω)ψ² − χ_K|ψ|^{p−2}ψ²` on the staggered grid, with
/// the half-line traces in the vertex rows replaced by the closure.
pub fn residual(psi: &SpinorField, prob: &NldProblem) -> Result<SpinorField> {
    let z = prob.mesh().spinor_to_vec(psi)?;
    let r = prob.residual_vec(&z)?;
    prob.mesh().spinor_from_vec(&r, Vec::new())
}

pub fn residual_norm(psi: &SpinorField, prob: &NldProblem) -> Result<f64> {
    let z = prob.mesh().spinor_to_vec(psi)?;
    Ok(prob.weighted_norm(&prob.residual_vec(&z)?))
}

/// `L(ψ) = ½∫⟨ψ, (D − ω)ψ⟩ − (1/p)∫_K|ψ|^p` in the discrete form whose
/// critical points are the discrete bound states.
pub fn action(psi: &SpinorField, prob: &NldProblem) -> Result<f64> {
    let z = prob.mesh().spinor_to_vec(psi)?;
    let mut quad = prob.op.quadratic_form_vec(&z)? - prob.omega * prob.op.inner(&z, &z).re;
    quad += prob.c * prob.closure.ratio * prob.closures.iter().map(|&(i, _)| z[i].norm_sqr()).sum::<f64>();
    Ok(0.5 * quad - psi.core_lp_power(prob.p) / prob.p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundState {
    pub psi: SpinorField,
    pub omega: f64,
    pub m: f64,
    pub c: f64,
    pub p: f64,
    pub residual_norm: f64,
    pub action: f64,
    pub core_mass: f64,
    pub stats: NewtonStats,
}

/// `|L − (1/2 − 1/p)∫_K|ψ|^p| / max(|L|, 1e−30)`.
pub fn virial_check(bs: &BoundState) -> f64 {
    let expect = (0.5 - 1.0 / bs.p) * bs.core_mass;
    (bs.action - expect).abs() / bs.action.abs().max(1e-30)
}

/// Newton in the real gauge from `psi0`. The result is re-embedded as a
/// complex field and its residual checked in the complex system.
pub fn solve_newton(prob: &NldProblem, psi0: &SpinorField, opts: &NewtonOptions) -> Result<BoundState> {
    opts.validate()?;
    let mut x = prob.gauge_coordinates(psi0)?;
    let mut stats = NewtonStats::default();
    let mut tol = opts.tol;
    let mut complex_res = f64::INFINITY;
    for _ in 0..4 {
        let budget = opts.max_iter.saturating_sub(stats.iterations).max(1);
        let (xn, st) = newton(
            prob,
            x,
            &NewtonOptions {
                tol,
                max_iter: budget,
                damping: opts.damping,
            },
        )?;
        x = xn;
        merge_stats(&mut stats, st);
        complex_res = prob.weighted_norm(&prob.residual_vec(&prob.to_complex(&x))?);
        if complex_res <= opts.tol {
            break;
        }
        tol *= 0.25;
    }
    let core_mass = prob.lp_core_vec(&x);
    if !(core_mass > NONTRIVIAL_MASS) {
        return Err(Error::ConvergedToZero { core_mass });
    }
    if !(complex_res <= opts.tol) {
        return Err(Error::Invariant(format!(
            "complex residual {complex_res:e} exceeds tolerance {:e} after a converged real-gauge solve",
            opts.tol
        )));
    }
    Ok(BoundState {
        psi: prob.field_from_gauge(&x)?,
        omega: prob.omega,
        m: prob.m,
        c: prob.c,
        p: prob.p,
        residual_norm: complex_res,
        action: prob.action_gauge(&x),
        core_mass,
        stats,
    })
}

fn merge_stats(into: &mut NewtonStats, st: NewtonStats) {
    if into.residual_history.is_empty() {
        into.residual_history = st.residual_history;
    } else {
        into.residual_history.extend(st.residual_history.into_iter().skip(1));
    }
    into.iterations += st.iterations;
    into.step_norms.extend(st.step_norms);
    into.step_lengths.extend(st.step_lengths);
}

/// Initial guess from a scalar profile on the same mesh: `ψ¹ = u`,
/// `ψ² = −ic u'/(mc² + ω)` at midpoints, tails from the closure.
pub fn lift_from_nls(u: &ScalarField, prob: &NldProblem) -> Result<SpinorField> {
    let mesh = prob.mesh();
    if u.segments.len() != mesh.segments().len() {
        return Err(Error::DimensionMismatch {
            expected: mesh.segments().len(),
            got: u.segments.len(),
        });
    }
    let mut x = vec![0.0; prob.dim()];
    let denom = prob.m * prob.c * prob.c + prob.omega;
    for (s, (seg, us)) in mesh.segments().iter().zip(&u.segments).enumerate() {
        let n = seg.intervals();
        if us.u.len() != n + 1 {
            return Err(Error::DimensionMismatch {
                expected: n + 1,
                got: us.u.len(),
            });
        }
        for j in 0..n {
            x[mesh.spinor_mid(s, j)] = -prob.c * (us.u[j + 1] - us.u[j]) / seg.h() / denom;
        }
        for j in 0..=n {
            if let Some(i) = mesh.spinor_node(s, j) {
                x[i] = us.u[j];
            }
        }
    }
    prob.field_from_gauge(&x)
}

/// Largest `|dL(ψ)[φ]| / ‖φ‖_{L²}` over `count` seeded random complex
/// directions.
pub fn criticality_probe(psi: &SpinorField, prob: &NldProblem, count: usize, seed: u64) -> Result<f64> {
    let z = prob.mesh().spinor_to_vec(psi)?;
    let r = prob.residual_vec(&z)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let phi: Vec<C64> = (0..prob.dim())
            .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let d: f64 = r
            .iter()
            .zip(&phi)
            .zip(&prob.weights)
            .map(|((a, b), w)| w * (a.conj() * b).re)
            .sum();
        worst = worst.max(d.abs() / prob.weighted_norm(&phi));
    }
    Ok(worst)
}

/// One continuation step; `halved` marks states reached through an
/// intermediate `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationState {
    pub state: BoundState,
    pub halved: bool,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub states: Vec<ContinuationState>,
    /// Index into the schedule where the branch was lost, with the error.
    pub failure: Option<(usize, Error)>,
}

/// Solves along a monotone `c` schedule with `ω = omega_of(c)`, warm-starting
/// each solve from the previous state with `ψ²` rescaled by `c_old/c_new`. A
/// failed step is retried once through the midpoint `c`; a second failure
/// ends the branch.
#[allow(clippy::too_many_arguments)]
pub fn continuation_in_c(
    g: &MetricGraph,
    m: f64,
    p: f64,
    h: f64,
    cs: &[f64],
    omega_of: impl Fn(f64) -> Result<f64>,
    start: &SpinorField,
    opts: &NewtonOptions,
) -> Result<ContinuationResult> {
    if cs.is_empty() {
        return Err(Error::Precondition("empty c schedule".into()));
    }
    let increasing = cs.windows(2).all(|w| w[1] > w[0]);
    let decreasing = cs.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::Precondition("c schedule must be strictly monotone".into()));
    }
    let problems = cs
        .iter()
        .map(|&c| NldProblem::new(g, m, c, omega_of(c)?, p, h))
        .collect::<Result<Vec<_>>>()?;

    let mut states: Vec<ContinuationState> = Vec::new();
    for (n, prob) in problems.iter().enumerate() {
        let attempt = match states.last() {
            None => solve_newton(prob, start, opts).map(|s| (s, false)),
            Some(prev) => {
                let first = solve_newton(prob, &rescale(&prev.state, prob)?, opts);
                match first {
                    Ok(s) => Ok((s, false)),
                    Err(_) => {
                        let c_mid = 0.5 * (prev.state.c + prob.c);
                        NldProblem::new(g, m, c_mid, omega_of(c_mid)?, p, h)
                            .and_then(|mid| {
                                let s_mid = solve_newton(&mid, &rescale(&prev.state, &mid)?, opts)?;
                                solve_newton(prob, &rescale(&s_mid, prob)?, opts)
                            })
                            .map(|s| (s, true))
                    }
                }
            }
        };
        match attempt {
            Ok((state, halved)) => states.push(ContinuationState { state, halved }),
            Err(e) => {
                return Ok(ContinuationResult {
                    states,
                    failure: Some((n, e)),
                })
            }
        }
    }
    Ok(ContinuationResult { states, failure: None })
}

fn rescale(prev: &BoundState, next: &NldProblem) -> Result<SpinorField> {
    let factor = prev.c / next.c;
    let mut psi = prev.psi.clone();
    for s in &mut psi.segments {
        s.psi2.iter_mut().for_each(|v| *v *= factor);
    }
    next.mesh().check_spinor_shape(&psi)?;
    Ok(psi)
}
