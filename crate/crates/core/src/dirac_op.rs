//! Discrete Dirac operator `D = −ic σ₁ d/dx + mc² σ₃` and Kirchhoff Laplacian.
//!
//! Both operators are assembled as weighted-Hermitian forms `H = W·D` on a
//! [`Mesh`] and stored symmetrized, `S = W^{-1/2} H W^{-1/2}`, so the stored
//! matrix is Hermitian entrywise. The vertex row of the Dirac operator is the
//! half-cell balance
//!
//! ```text
//! w_v (Dψ)¹(v) = −ic Σ s_e ψ²_e(adjacent midpoint) + w_v mc² ψ¹(v)
//! ```
//!
//! (`s_e = +1` at `x = 0`, `−1` at `x = ℓ`), into which the signed-sum law
//! on the `ψ²` traces has been folded. Half-lines are the caller's business:
//! truncated segments are ordinary segments here, closures are added by the
//! nonlinear solver.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::discretize::{Mesh, ScalarField, SpinorField};
use crate::error::{Error, Result};
use crate::graph::{Endpoint, MetricGraph, VertexId};
use crate::linalg::CsrMatrix;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Dirac,
    LaplacianKirchhoff,
}

#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    kind: OperatorKind,
    m: f64,
    c: f64,
    mesh: Mesh,
    weights: Vec<f64>,
    matrix: CsrMatrix<C64>,
}

/// Assembles the Dirac operator on the spinor unknowns of `mesh`.
pub fn assemble_dirac(mesh: &Mesh, m: f64, c: f64) -> Result<DiscreteOperator> {
    check_positive("m", m)?;
    check_positive("c", c)?;
    let mc2 = m * c * c;
    let ic = I * c;
    let mut trips = Vec::new();
    for (s, seg) in mesh.segments().iter().enumerate() {
        let h = seg.h();
        let n = seg.intervals();
        for j in 0..n {
            let b = mesh.spinor_mid(s, j);
            trips.push((b, b, C64::new(-mc2 * h, 0.0)));
            if let Some(a0) = mesh.spinor_node(s, j) {
                trips.push((b, a0, ic));
                trips.push((a0, b, -ic));
            }
            if let Some(a1) = mesh.spinor_node(s, j + 1) {
                trips.push((b, a1, -ic));
                trips.push((a1, b, ic));
            }
        }
        for j in 1..n {
            let a = mesh.spinor_node(s, j).expect("interior node");
            trips.push((a, a, C64::new(mc2 * h, 0.0)));
        }
    }
    for v in 0..mesh.graph().vertex_count() {
        if let Some(a) = mesh.spinor_vertex_dof(VertexId(v)) {
            trips.push((a, a, C64::new(mc2 * mesh.vertex_weight(VertexId(v)), 0.0)));
        }
    }
    let weights = mesh.spinor_weights();
    Ok(DiscreteOperator {
        kind: OperatorKind::Dirac,
        m,
        c,
        mesh: mesh.clone(),
        matrix: symmetrize(weights.len(), trips, &weights),
        weights,
    })
}

/// Assembles `−d²/dx²` with continuity and zero derivative sum at vertices
/// on the scalar unknowns of `mesh`.
pub fn assemble_laplacian_kirchhoff(mesh: &Mesh) -> Result<DiscreteOperator> {
    let mut trips = Vec::new();
    for (s, seg) in mesh.segments().iter().enumerate() {
        let k = 1.0 / seg.h();
        for j in 0..seg.intervals() {
            let a0 = mesh.scalar_node(s, j);
            let a1 = mesh.scalar_node(s, j + 1);
            for (x, y, v) in [(a0, a0, k), (a1, a1, k), (a0, a1, -k), (a1, a0, -k)] {
                if let (Some(x), Some(y)) = (x, y) {
                    trips.push((x, y, C64::new(v, 0.0)));
                }
            }
        }
    }
    let weights = mesh.scalar_weights();
    Ok(DiscreteOperator {
        kind: OperatorKind::LaplacianKirchhoff,
        m: 0.0,
        c: 0.0,
        mesh: mesh.clone(),
        matrix: symmetrize(weights.len(), trips, &weights),
        weights,
    })
}

fn symmetrize(n: usize, trips: Vec<(usize, usize, C64)>, w: &[f64]) -> CsrMatrix<C64> {
    let trips = trips
        .into_iter()
        .map(|(i, j, v)| (i, j, v / (w[i] * w[j]).sqrt()))
        .collect();
    CsrMatrix::from_triplets(n, n, trips)
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "{name} must be positive and finite, got {x}"
        )))
    }
}

impl DiscreteOperator {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn mass(&self) -> f64 {
        self.m
    }

    pub fn speed(&self) -> f64 {
        self.c
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Quadrature weights `W` of the unknowns.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The symmetrized matrix `W^{1/2} D W^{-1/2}`.
    pub fn matrix(&self) -> &CsrMatrix<C64> {
        &self.matrix
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.matrix.hermitian_defect()
    }

    /// Gauge phase of unknown `i`: `1` for `ψ¹` (and scalar) unknowns, `i`
    /// for `ψ²` unknowns. In this gauge the Dirac matrix is real symmetric.
    pub fn gauge(&self) -> Vec<C64> {
        match self.kind {
            OperatorKind::LaplacianKirchhoff => vec![C64::new(1.0, 0.0); self.dim()],
            OperatorKind::Dirac => self
                .mesh
                .spinor_node_mask()
                .into_iter()
                .map(|node| if node { C64::new(1.0, 0.0) } else { I })
                .collect(),
        }
    }

    /// Real symmetric matrix `G* S G` with `G` the diagonal gauge.
    pub fn real_symmetric(&self) -> Result<CsrMatrix<f64>> {
        let g = self.gauge();
        let scale = self.matrix.max_abs().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        let out = self.matrix.map(|i, j, v| {
            let z = g[i].conj() * v * g[j];
            worst = worst.max(z.im.abs());
            z.re
        });
        if worst > 1e-12 * scale {
            return Err(Error::Invariant(format!(
                "gauge-transformed operator is not real (imaginary part {worst:e})"
            )));
        }
        Ok(out)
    }

    /// `D x` for a vector of unknowns in field coordinates.
    pub fn apply_vec(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let y: Vec<C64> = x.iter().zip(&self.weights).map(|(v, w)| v * w.sqrt()).collect();
        let z = self.matrix.matvec(&y)?;
        Ok(z.into_iter().zip(&self.weights).map(|(v, w)| v / w.sqrt()).collect())
    }

    /// Weighted inner product `Σ w_i conj(x_i) y_i`.
    pub fn inner(&self, x: &[C64], y: &[C64]) -> C64 {
        x.iter()
            .zip(y)
            .zip(&self.weights)
            .map(|((a, b), w)| a.conj() * b * *w)
            .sum()
    }

    /// Applies the Dirac operator to a spinor field; tails are ignored and
    /// the result carries none.
    pub fn apply(&self, field: &SpinorField) -> Result<SpinorField> {
        self.expect(OperatorKind::Dirac)?;
        let x = self.mesh.spinor_to_vec(field)?;
        self.mesh.spinor_from_vec(&self.apply_vec(&x)?, Vec::new())
    }

    /// Applies the Laplacian to a scalar field.
    pub fn apply_scalar(&self, field: &ScalarField) -> Result<ScalarField> {
        self.expect(OperatorKind::LaplacianKirchhoff)?;
        let x: Vec<C64> = self
            .mesh
            .scalar_to_vec(field)?
            .into_iter()
            .map(|v| C64::new(v, 0.0))
            .collect();
        let y: Vec<f64> = self.apply_vec(&x)?.into_iter().map(|z| z.re).collect();
        self.mesh.scalar_from_vec(&y, Vec::new())
    }

    /// `∫⟨ψ, Dψ⟩` over the discretized segments, without the factor ½ that
    /// the action puts in front of it.
    pub fn quadratic_form(&self, field: &SpinorField) -> Result<f64> {
        self.expect(OperatorKind::Dirac)?;
        let x = self.mesh.spinor_to_vec(field)?;
        self.quadratic_form_vec(&x)
    }

    pub fn quadratic_form_vec(&self, x: &[C64]) -> Result<f64> {
        let q = self.inner(x, &self.apply_vec(x)?);
        let scale = self.matrix.max_abs() * self.inner(x, x).re;
        if q.im.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Invariant(format!(
                "quadratic form has imaginary part {:e}",
                q.im
            )));
        }
        Ok(q.re)
    }

    /// `|⟨Dx, y⟩ − ⟨x, Dy⟩|` in the weighted inner product.
    pub fn green_defect(&self, x: &[C64], y: &[C64]) -> Result<f64> {
        Ok((self.inner(&self.apply_vec(x)?, y) - self.inner(x, &self.apply_vec(y)?)).norm())
    }

    /// Coordinate dump, one `row col re im` line per stored entry.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, j, v) in self.matrix.iter() {
            let _ = writeln!(out, "{i} {j} {:.16e} {:.16e}", v.re, v.im);
        }
        out
    }

    fn expect(&self, kind: OperatorKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Precondition(format!("operation needs a {kind:?} operator")))
        }
    }
}

/// Largest modulus of `Σ s_e ψ²_e(v)` over vertices, with segment traces
/// from the extrapolation `(3ψ²_{1/2} − ψ²_{3/2})/2` and closure tails
/// contributing `ψ²(0) = i r A`.
pub fn vertex_sum_law_residual(mesh: &Mesh, field: &SpinorField) -> Result<f64> {
    mesh.check_spinor_shape(field)?;
    let nv = mesh.graph().vertex_count();
    let mut sums = vec![C64::new(0.0, 0.0); nv];
    for (seg, fs) in mesh.segments().iter().zip(&field.segments) {
        sums[seg.start_vertex().0] += fs.psi2_at_node(0);
        if let Some(v) = seg.end_vertex() {
            sums[v.0] -= fs.psi2_at_node(fs.intervals());
        }
    }
    for t in &field.tails {
        sums[mesh.graph().halflines()[t.halfline].attach.0] += t.psi2(0.0);
    }
    Ok((0..nv)
        .filter(|&v| !mesh.is_dirichlet(VertexId(v)))
        .map(|v| sums[v].norm())
        .fold(0.0, f64::max))
}

/// Kirchhoff-type conditions at one vertex as a matrix pair acting on the
/// trace vectors `Γ₀ = (ψ¹_e(v))` and `Γ₁ = (ic s_e ψ²_e(v))`:
/// `A Γ₀ + B Γ₁ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexConditions {
    pub vertex: VertexId,
    /// Incidences in [`MetricGraph::vertex_star`] order.
    pub incidences: Vec<(String, Endpoint, f64)>,
    pub a: DMatrix<C64>,
    pub b: DMatrix<C64>,
}

impl VertexConditions {
    /// `max |A B* − B A*|`.
    pub fn symmetry_defect(&self) -> f64 {
        let ab = &self.a * self.b.adjoint();
        let ba = &self.b * self.a.adjoint();
        (ab - ba).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of `A A* + B B*`; positive iff `(A B)` has full rank.
    pub fn rank_margin(&self) -> f64 {
        let g = &self.a * self.a.adjoint() + &self.b * self.b.adjoint();
        g.symmetric_eigenvalues().iter().fold(f64::INFINITY, |m, x| m.min(*x))
    }

    /// Residual of the conditions for given traces `Γ₀` and `ψ²` traces.
    pub fn residual(&self, psi1: &[C64], psi2: &[C64], c: f64) -> f64 {
        let d = self.incidences.len();
        let g0 = nalgebra::DVector::from_iterator(d, psi1.iter().copied());
        let g1 =
            nalgebra::DVector::from_iterator(d, psi2.iter().zip(&self.incidences).map(|(z, inc)| I * c * inc.2 * z));
        (&self.a * g0 + &self.b * g1).norm()
    }
}

/// Continuity of `ψ¹` and the signed-sum law of `ψ²` at every vertex.
///
/// With `J = 𝟙𝟙ᵀ/d` the pair is `A = −2(I − J)`, `B = −2iJ`, so that
/// `A B* = B A* = 0` and `A A* + B B* = 4I`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexConditionSet {
    pub vertices: Vec<VertexConditions>,
}

impl VertexConditionSet {
    pub fn new(g: &MetricGraph) -> Self {
        let vertices = (0..g.vertex_count())
            .map(|v| {
                let star = g.vertex_star(VertexId(v)).expect("vertex in range");
                let d = star.len();
                let j = DMatrix::from_element(d, d, C64::new(1.0 / d as f64, 0.0));
                let id = DMatrix::<C64>::identity(d, d);
                VertexConditions {
                    vertex: VertexId(v),
                    incidences: star
                        .iter()
                        .map(|inc| (g.edge_name(inc.edge).to_string(), inc.endpoint, inc.sign.value()))
                        .collect(),
                    a: (id - &j) * C64::new(-2.0, 0.0),
                    b: j * C64::new(0.0, -2.0),
                }
            })
            .collect();
        VertexConditionSet { vertices }
    }

    pub fn max_symmetry_defect(&self) -> f64 {
        self.vertices.iter().map(|v| v.symmetry_defect()).fold(0.0, f64::max)
    }
}
