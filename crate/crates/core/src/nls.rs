//! Bound states of `−u'' − α χ_K |u|^{p−2} u = λ u` with Kirchhoff vertex
//! conditions and exact exponential tails on the half-lines.
//!
//! The unknowns are the node values on the compact core. A half-line at `v`
//! carries `u = u(v) e^{−κx}` with `κ = √(−λ)`, which contributes `κ u(v)²/2`
//! to the functional and `κ u(v)` to the outgoing-derivative balance at `v`.

use crate::dirac_op::assemble_laplacian_kirchhoff;
use crate::discretize::{Mesh, ScalarField, ScalarTail};
use crate::error::{Error, Result};
use crate::graph::{MetricGraph, VertexId};
use crate::linalg::{CsrMatrix, Ldlt};
use crate::newton::{newton, GradientSystem, NewtonOptions, NewtonStats};

/// Nontriviality threshold on `∫_K |u|^p`.
pub const NONTRIVIAL_MASS: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct NlsProblem {
    m: f64,
    lambda: f64,
    p: f64,
    alpha: f64,
    mesh: Mesh,
    stiffness: CsrMatrix<f64>,
    weights: Vec<f64>,
    core_weights: Vec<f64>,
    /// `(unknown index, half-line index)` for every closed half-line.
    closures: Vec<(usize, usize)>,
}

impl NlsProblem {
    /// `alpha = None` selects `α = 2m`.
    pub fn new(g: &MetricGraph, m: f64, lambda: f64, p: f64, alpha: Option<f64>, h: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Precondition(format!("m must be positive, got {m}")));
        }
        if !(lambda < 0.0 && lambda.is_finite()) {
            return Err(Error::Precondition(format!(
                "λ must be negative for decaying tails, got {lambda}"
            )));
        }
        if !(p > 2.0 && p.is_finite()) {
            return Err(Error::Precondition(format!("p must exceed 2, got {p}")));
        }
        let alpha = alpha.unwrap_or(2.0 * m);
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Precondition(format!("α must be positive, got {alpha}")));
        }
        if g.halflines().is_empty() {
            return Err(Error::Precondition("graph has no half-line".into()));
        }
        let mesh = Mesh::closure(g, h)?;
        let lap = assemble_laplacian_kirchhoff(&mesh)?;
        let weights = mesh.scalar_weights();
        let stiffness = lap.matrix().map(|i, j, v| v.re * (weights[i] * weights[j]).sqrt());
        let core_weights = core_trapezoid_weights(&mesh);
        let closures = g
            .halflines()
            .iter()
            .enumerate()
            .map(|(k, hl)| (mesh.scalar_vertex_dof(hl.attach).expect("closure vertex has a dof"), k))
            .collect();
        Ok(NlsProblem {
            m,
            lambda,
            p,
            alpha,
            mesh,
            stiffness,
            weights,
            core_weights,
            closures,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn graph(&self) -> &MetricGraph {
        self.mesh.graph()
    }

    pub fn mass(&self) -> f64 {
        self.m
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Tail decay rate `κ = √(−λ)`.
    pub fn kappa(&self) -> f64 {
        (-self.lambda).sqrt()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Tails matching the vertex values of `x`.
    pub fn tails(&self, x: &[f64]) -> Vec<ScalarTail> {
        self.closures
            .iter()
            .map(|&(i, k)| ScalarTail {
                halfline: k,
                amplitude: x[i],
                decay: self.kappa(),
            })
            .collect()
    }

    pub fn field(&self, x: &[f64]) -> Result<ScalarField> {
        self.mesh.scalar_from_vec(x, self.tails(x))
    }

    /// Unknown vector of a field; rejects fields defined on another mesh.
    pub fn vector(&self, u: &ScalarField) -> Result<Vec<f64>> {
        self.mesh.scalar_to_vec(u)
    }

    /// `∇J` in unknown coordinates.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.stiffness.matvec(x).expect("dimension");
        let kappa = self.kappa();
        for (i, gi) in g.iter_mut().enumerate() {
            let u = x[i];
            *gi +=
                -self.lambda * self.weights[i] * u - self.alpha * self.core_weights[i] * u.abs().powf(self.p - 2.0) * u;
        }
        for &(i, _) in &self.closures {
            g[i] += kappa * x[i];
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> CsrMatrix<f64> {
        let mut trips: Vec<(usize, usize, f64)> = self.stiffness.iter().collect();
        for (i, u) in x.iter().enumerate() {
            let nonlin = if u.abs() > 1e-14 {
                self.alpha * (self.p - 1.0) * self.core_weights[i] * u.abs().powf(self.p - 2.0)
            } else {
                0.0
            };
            trips.push((i, i, -self.lambda * self.weights[i] - nonlin));
        }
        for &(i, _) in &self.closures {
            trips.push((i, i, self.kappa()));
        }
        CsrMatrix::from_triplets(self.dim(), self.dim(), trips)
    }

    /// `J` of an unknown vector.
    pub fn functional(&self, x: &[f64]) -> f64 {
        let kx = self.stiffness.matvec(x).expect("dimension");
        let mut j = 0.5 * x.iter().zip(&kx).map(|(a, b)| a * b).sum::<f64>();
        j -= 0.5 * self.lambda * x.iter().zip(&self.weights).map(|(u, w)| w * u * u).sum::<f64>();
        j -= self.alpha / self.p * self.core_mass_vec(x);
        j += 0.5 * self.kappa() * self.closures.iter().map(|&(i, _)| x[i] * x[i]).sum::<f64>();
        j
    }

    /// `∫_K |u|^p` by the trapezoid rule.
    pub fn core_mass_vec(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.core_weights)
            .map(|(u, w)| w * u.abs().powf(self.p))
            .sum()
    }

    /// Unit-H¹ probe normalisation: core H¹ norm squared plus the tail part
    /// `B²(1/(2q) + q/2)` of a decay-`q` tail (`q = 1` here, giving `B²`).
    pub fn probe_h1_norm(&self, phi: &[f64]) -> f64 {
        let kphi = self.stiffness.matvec(phi).expect("dimension");
        let mut s = phi.iter().zip(&kphi).map(|(a, b)| a * b).sum::<f64>();
        s += phi.iter().zip(&self.weights).map(|(u, w)| w * u * u).sum::<f64>();
        s += self.closures.iter().map(|&(i, _)| phi[i] * phi[i]).sum::<f64>();
        s.sqrt()
    }
}

fn core_trapezoid_weights(mesh: &Mesh) -> Vec<f64> {
    let mut w = vec![0.0; mesh.scalar_len()];
    for (s, seg) in mesh.segments().iter().enumerate() {
        if !seg.origin.is_core() {
            continue;
        }
        let n = seg.intervals();
        for j in 0..=n {
            if let Some(i) = mesh.scalar_node(s, j) {
                w[i] += if j == 0 || j == n { 0.5 * seg.h() } else { seg.h() };
            }
        }
    }
    w
}

impl GradientSystem for NlsProblem {
    fn weights(&self) -> &[f64] {
        &self.weights
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        NlsProblem::gradient(self, x)
    }
    fn hessian(&self, x: &[f64]) -> CsrMatrix<f64> {
        NlsProblem::hessian(self, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlsBoundState {
    pub u: ScalarField,
    pub lambda: f64,
    pub residual_norm: f64,
    pub j_value: f64,
    pub core_mass: f64,
    pub stats: NewtonStats,
}

/// `W⁻¹∇J`: interior rows `−u'' − αχ_K|u|^{p−2}u − λu`, vertex rows the
/// derivative balance with half-line derivatives `−κ u(v)`.
pub fn residual_nls(u: &ScalarField, prob: &NlsProblem) -> Result<ScalarField> {
    let x = prob.vector(u)?;
    let r: Vec<f64> = prob
        .gradient(&x)
        .iter()
        .zip(&prob.weights)
        .map(|(g, w)| g / w)
        .collect();
    prob.mesh.scalar_from_vec(&r, Vec::new())
}

/// `‖W⁻¹∇J‖_W`.
pub fn residual_norm_nls(u: &ScalarField, prob: &NlsProblem) -> Result<f64> {
    Ok(prob.residual_norm(&prob.vector(u)?))
}

pub fn functional_j(u: &ScalarField, prob: &NlsProblem) -> Result<f64> {
    Ok(prob.functional(&prob.vector(u)?))
}

/// `dJ(u)[φ]`.
pub fn derivative_j(u: &ScalarField, phi: &ScalarField, prob: &NlsProblem) -> Result<f64> {
    let g = prob.gradient(&prob.vector(u)?);
    let f = prob.vector(phi)?;
    Ok(g.iter().zip(&f).map(|(a, b)| a * b).sum())
}

/// `⟨A(u)|φ⟩ = ∫u'φ' − b∫_K|u|^{p−2}uφ + a∫uφ` for real `u`, `φ`.
///
/// On each half-line `u` is continued by the decay-`√a` tail, for which the
/// tail part of `∫u'φ' + a∫uφ` equals `√a·u(v)φ(v)` whatever the decay of
/// `φ`; with `a = −λ`, `b = α` this is exactly `dJ(u)[φ]`.
pub fn pairing_an(u: &[f64], phi: &[f64], a: f64, b: f64, prob: &NlsProblem) -> Result<f64> {
    if u.len() != prob.dim() || phi.len() != prob.dim() {
        return Err(Error::DimensionMismatch {
            expected: prob.dim(),
            got: if u.len() != prob.dim() { u.len() } else { phi.len() },
        });
    }
    if !(a > 0.0) {
        return Err(Error::Precondition(format!("a must be positive, got {a}")));
    }
    let ku = prob.stiffness.matvec(u)?;
    let mut s: f64 = ku.iter().zip(phi).map(|(x, y)| x * y).sum();
    s += a * u
        .iter()
        .zip(phi)
        .zip(&prob.weights)
        .map(|((x, y), w)| w * x * y)
        .sum::<f64>();
    s -= b * u
        .iter()
        .zip(phi)
        .zip(&prob.core_weights)
        .map(|((x, y), w)| w * x.abs().powf(prob.p - 2.0) * x * y)
        .sum::<f64>();
    s += a.sqrt() * prob.closures.iter().map(|&(i, _)| u[i] * phi[i]).sum::<f64>();
    Ok(s)
}

/// Newton's method on `∇J = 0` from `u0`.
pub fn solve_newton_nls(prob: &NlsProblem, u0: &ScalarField, opts: &NewtonOptions) -> Result<NlsBoundState> {
    let x0 = prob.vector(u0)?;
    let (x, stats) = newton(prob, x0, opts)?;
    let core_mass = prob.core_mass_vec(&x);
    if !(core_mass > NONTRIVIAL_MASS) {
        return Err(Error::ConvergedToZero { core_mass });
    }
    Ok(NlsBoundState {
        residual_norm: prob.residual_norm(&x),
        j_value: prob.functional(&x),
        core_mass,
        u: prob.field(&x)?,
        lambda: prob.lambda,
        stats,
    })
}

/// Height-one profile on the core with the decaying tails it induces.
pub fn core_bump(prob: &NlsProblem) -> ScalarField {
    let x = vec![1.0; prob.dim()];
    prob.field(&x).expect("matching dimension")
}

/// Petviashvili iteration `u ← M^γ L⁻¹N(u)` from `u0`, where `L` is the
/// positive quadratic part of `J`, `N(u) = αχ_K|u|^{p−2}u` and
/// `M = ⟨Lu,u⟩/⟨N(u),u⟩`, `γ = (p−1)/(p−2)`. It lands close to a ground
/// state from crude profiles where plain Newton does not, so its output is
/// meant as a Newton starting point.
pub fn petviashvili_guess(prob: &NlsProblem, u0: &ScalarField, iters: usize) -> Result<ScalarField> {
    let mut x = prob.vector(u0)?;
    let mut trips: Vec<(usize, usize, f64)> = prob.stiffness.iter().collect();
    for (i, w) in prob.weights.iter().enumerate() {
        trips.push((i, i, -prob.lambda * w));
    }
    for &(i, _) in &prob.closures {
        trips.push((i, i, prob.kappa()));
    }
    let l = CsrMatrix::from_triplets(prob.dim(), prob.dim(), trips);
    let fac = Ldlt::factor(&l, 0.0, None)?;
    let gamma = (prob.p - 1.0) / (prob.p - 2.0);
    for _ in 0..iters {
        let n: Vec<f64> = x
            .iter()
            .zip(&prob.core_weights)
            .map(|(u, w)| prob.alpha * w * u.abs().powf(prob.p - 2.0) * u)
            .collect();
        let lu = l.matvec(&x)?;
        let num: f64 = lu.iter().zip(&x).map(|(a, b)| a * b).sum();
        let den: f64 = n.iter().zip(&x).map(|(a, b)| a * b).sum();
        if !(den > 0.0) {
            return Err(Error::ConvergedToZero {
                core_mass: prob.core_mass_vec(&x),
            });
        }
        let scale = (num / den).powf(gamma);
        let next: Vec<f64> = fac.solve(&n).into_iter().map(|v| scale * v).collect();
        let change = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let size = next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        x = next;
        if !size.is_finite() {
            return Err(Error::MaxIterations {
                iterations: iters,
                residual: f64::NAN,
            });
        }
        if change <= 1e-9 * size {
            break;
        }
    }
    prob.field(&x)
}

/// Default Newton starting point: the Petviashvili iterate from the core bump.
pub fn default_guess(prob: &NlsProblem) -> Result<ScalarField> {
    petviashvili_guess(prob, &core_bump(prob), 300)
}

/// Vertex index helper for callers that need `u(v)`.
pub fn vertex_value(prob: &NlsProblem, u: &ScalarField, v: VertexId) -> Result<f64> {
    let x = prob.vector(u)?;
    prob.mesh
        .scalar_vertex_dof(v)
        .map(|i| x[i])
        .ok_or_else(|| Error::UnknownVertex(format!("#{}", v.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn three_star() -> MetricGraph {
        parse_graph("vertex a\nvertex b\nedge e a b 2\nhalfline h1 a\nhalfline h2 a\n").unwrap()
    }

    fn line_with_interval(len: f64) -> MetricGraph {
        parse_graph(&format!(
            "vertex a\nvertex b\nedge e a b {len}\nhalfline h1 a\nhalfline h2 b\n"
        ))
        .unwrap()
    }

    #[test]
    fn preconditions() {
        let g = three_star();
        assert!(NlsProblem::new(&g, 1.0, 1.0, 4.0, None, 0.1).is_err());
        assert!(NlsProblem::new(&g, 1.0, -1.0, 2.0, None, 0.1).is_err());
        let compact = parse_graph("vertex a\nvertex b\nedge e a b 1\n").unwrap();
        assert!(NlsProblem::new(&compact, 1.0, -1.0, 4.0, None, 0.1).is_err());
        assert_eq!(NlsProblem::new(&g, 1.5, -1.0, 4.0, None, 0.1).unwrap().alpha(), 3.0);
    }

    #[test]
    fn zero_has_zero_residual_and_is_rejected() {
        let prob = NlsProblem::new(&three_star(), 1.0, -1.0, 4.0, None, 0.05).unwrap();
        let zero = prob.field(&vec![0.0; prob.dim()]).unwrap();
        assert_eq!(residual_nls(&zero, &prob).unwrap().linf(), 0.0);
        assert_eq!(functional_j(&zero, &prob).unwrap(), 0.0);
        assert!(matches!(
            solve_newton_nls(&prob, &zero, &NewtonOptions::default()),
            Err(Error::ConvergedToZero { .. })
        ));
    }

    #[test]
    fn converges_on_three_star_and_is_critical() {
        let prob = NlsProblem::new(&three_star(), 1.0, -1.0, 4.0, None, 0.01).unwrap();
        let bs = solve_newton_nls(&prob, &default_guess(&prob).unwrap(), &NewtonOptions::default()).unwrap();
        assert!(bs.residual_norm <= 1e-10);
        assert!(bs.core_mass > 0.1);
        let x = prob.vector(&bs.u).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let phi: Vec<f64> = (0..prob.dim()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let d: f64 = prob.gradient(&x).iter().zip(&phi).map(|(a, b)| a * b).sum();
            assert!(d.abs() <= 1e-6 * prob.probe_h1_norm(&phi));
        }
        // pairing with (a, b) = (−λ, α) reproduces dJ
        let phi: Vec<f64> = (0..prob.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let d: f64 = prob.gradient(&x).iter().zip(&phi).map(|(a, b)| a * b).sum();
        let pa = pairing_an(&x, &phi, 1.0, 2.0, &prob).unwrap();
        assert!((pa - d).abs() < 1e-12 * (1.0 + d.abs()));
    }

    #[test]
    fn gradient_matches_finite_differences_of_j() {
        let prob = NlsProblem::new(&three_star(), 1.0, -0.7, 3.3, Some(1.4), 0.1).unwrap();
        let x: Vec<f64> = (0..prob.dim()).map(|i| 0.3 + 0.5 * (i as f64 * 0.21).cos()).collect();
        let g = prob.gradient(&x);
        for i in [0, 3, prob.dim() - 1, prob.dim() - 2] {
            let e = 1e-6;
            let mut xp = x.clone();
            xp[i] += e;
            let mut xm = x.clone();
            xm[i] -= e;
            let fd = (prob.functional(&xp) - prob.functional(&xm)) / (2.0 * e);
            assert!((fd - g[i]).abs() < 1e-7 * (1.0 + g[i].abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn homogeneity_of_j() {
        let prob = NlsProblem::new(&three_star(), 1.0, -1.0, 4.0, None, 0.1).unwrap();
        let x: Vec<f64> = (0..prob.dim()).map(|i| (i as f64 * 0.1).sin()).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let quad = prob.functional(&x) + prob.alpha() / prob.p() * prob.core_mass_vec(&x);
        let expect = 4.0 * quad - 16.0 * prob.alpha() / prob.p() * prob.core_mass_vec(&x);
        assert!((prob.functional(&x2) - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn tails_decay_at_sqrt_minus_lambda() {
        let prob = NlsProblem::new(&three_star(), 1.0, -2.25, 4.0, None, 0.05).unwrap();
        let u = core_bump(&prob);
        for t in &u.tails {
            assert_eq!(t.decay, 1.5);
            assert_eq!(t.amplitude, 1.0);
        }
    }

    /// `u'' = κ²u − α|u|^{p−2}u` by RK4 from `u(0) = A`, `u'(0) = κA`;
    /// returns `u'(ℓ) + κu(ℓ)`.
    fn shoot(a: f64, len: f64, kappa: f64, alpha: f64, p: f64) -> f64 {
        let f = |u: f64, v: f64| (v, kappa * kappa * u - alpha * u.abs().powf(p - 2.0) * u);
        let steps = (len / 1e-4).round() as usize;
        let dt = len / steps as f64;
        let (mut u, mut v) = (a, kappa * a);
        for _ in 0..steps {
            let k1 = f(u, v);
            let k2 = f(u + 0.5 * dt * k1.0, v + 0.5 * dt * k1.1);
            let k3 = f(u + 0.5 * dt * k2.0, v + 0.5 * dt * k2.1);
            let k4 = f(u + dt * k3.0, v + dt * k3.1);
            u += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        v + kappa * u
    }

    #[test]
    fn interval_with_two_tails_matches_shooting() {
        let (len, kappa, alpha, p) = (2.0, 1.0, 2.0, 4.0);
        let prob = NlsProblem::new(&line_with_interval(len), 1.0, -kappa * kappa, p, Some(alpha), 0.005).unwrap();
        let bs = solve_newton_nls(&prob, &default_guess(&prob).unwrap(), &NewtonOptions::default()).unwrap();
        let ua = bs.u.segments[0].u[0];
        // bisection for the shooting amplitude near the Newton one
        let (mut lo, mut hi) = (0.9 * ua, 1.1 * ua);
        let flo = shoot(lo, len, kappa, alpha, p);
        assert!(flo * shoot(hi, len, kappa, alpha, p) < 0.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if shoot(mid, len, kappa, alpha, p) * flo > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let a = 0.5 * (lo + hi);
        assert!((ua - a).abs() < 1e-4 * a, "{ua} vs {a}");
    }

    #[test]
    fn max_iter_one_from_a_poor_guess_fails() {
        let prob = NlsProblem::new(&three_star(), 1.0, -1.0, 4.0, None, 0.05).unwrap();
        let guess = prob.field(&vec![5.0; prob.dim()]).unwrap();
        let opts = NewtonOptions {
            max_iter: 1,
            ..NewtonOptions::default()
        };
        assert!(matches!(
            solve_newton_nls(&prob, &guess, &opts),
            Err(Error::MaxIterations { .. })
        ));
    }
}
