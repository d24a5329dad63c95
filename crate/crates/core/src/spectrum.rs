//! Closed-form segment spectra, windowed discrete eigensolves and the
//! numerical spectral-gap check.

use num_complex::Complex64 as C64;

use crate::dirac_op::{assemble_dirac, DiscreteOperator};
use crate::discretize::{HalflineTreatment, Mesh};
use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::linalg::{
    count_in_interval, dense_symmetric_eigen, dense_symmetric_eigenvalues, shift_invert_nearest, CsrMatrix, EigenPair,
};

/// Below this many unknowns eigenproblems are solved densely.
pub const DENSE_LIMIT: usize = 2000;

const LANCZOS_SEED: u64 = 0x5eed_d1ac;

/// End conditions for a single segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentBc {
    /// `ψ¹ = 0` at both ends.
    FirstComponentDirichlet,
    /// Degree-1 Kirchhoff-type vertices, i.e. `ψ² = 0` at both ends.
    KirchhoffTypeDeg1,
    /// `ψ¹ = 0` at `x = 0`, `ψ² = 0` at `x = ℓ`.
    Mixed,
}

/// Eigenvalues of the Dirac operator on `[0, ℓ]`, ascending.
///
/// From `−c²(ψ¹)'' = (λ² − m²c⁴)ψ¹` every mode has `λ = ±√(c²k² + m²c⁴)`
/// with `k = jπ/ℓ` (`j = 1..=j_max`) for the two symmetric conditions and
/// `k = (j + ½)π/ℓ` (`j = 0..j_max`) for the mixed one. The symmetric
/// conditions also carry a threshold mode: `−mc²` (`ψ¹ = 0`, `ψ²` constant)
/// under Dirichlet, `+mc²` (`ψ¹` constant, `ψ² = 0`) under Kirchhoff.
pub fn segment_dirac_eigenvalues_closed_form(
    m: f64,
    c: f64,
    ell: f64,
    j_max: usize,
    bc: SegmentBc,
) -> Result<Vec<f64>> {
    for (name, x) in [("m", m), ("c", c), ("length", ell)] {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::Precondition(format!("{name} must be positive, got {x}")));
        }
    }
    let mc2 = m * c * c;
    let branch = |k: f64| (c * c * k * k + mc2 * mc2).sqrt();
    let pi = std::f64::consts::PI;
    let mut out = Vec::with_capacity(2 * j_max + 1);
    match bc {
        SegmentBc::FirstComponentDirichlet | SegmentBc::KirchhoffTypeDeg1 => {
            for j in 1..=j_max {
                let l = branch(j as f64 * pi / ell);
                out.push(l);
                out.push(-l);
            }
            out.push(if bc == SegmentBc::FirstComponentDirichlet {
                -mc2
            } else {
                mc2
            });
        }
        SegmentBc::Mixed => {
            for j in 0..j_max {
                let l = branch((j as f64 + 0.5) * pi / ell);
                out.push(l);
                out.push(-l);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralWindow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl SpectralWindow {
    /// `lo == hi` is accepted and selects nothing.
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Precondition(format!("invalid window [{lo}, {hi}]")));
        }
        if count == 0 {
            return Err(Error::Precondition(
                "window must request at least one eigenvalue".into(),
            ));
        }
        Ok(SpectralWindow { lo, hi, count })
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors in field coordinates, unit norm in the quadrature inner product.
    pub eigenvectors: Option<Vec<Vec<C64>>>,
    pub h: f64,
    pub l_inf: Option<f64>,
}

/// The `window.count` eigenvalues in `[lo, hi]` nearest to the window centre,
/// returned ascending (ties broken by value, then by position).
pub fn discrete_spectrum(op: &DiscreteOperator, window: &SpectralWindow, keep_vectors: bool) -> Result<EigenResult> {
    let l_inf = match op.mesh().treatment() {
        HalflineTreatment::Truncate { length } if !op.mesh().graph().halflines().is_empty() => Some(length),
        _ => None,
    };
    let mut result = EigenResult {
        eigenvalues: Vec::new(),
        eigenvectors: keep_vectors.then(Vec::new),
        h: op.mesh().h_max(),
        l_inf,
    };
    if window.lo == window.hi {
        return Ok(result);
    }
    let a = op.real_symmetric()?;
    let pairs = nearest_pairs(&a, window, keep_vectors)?;
    if keep_vectors {
        let g = op.gauge();
        let w = op.weights();
        for p in &pairs {
            check_residual(&a, p)?;
        }
        result.eigenvectors = Some(
            pairs
                .iter()
                .map(|p| {
                    p.vector
                        .iter()
                        .zip(g.iter().zip(w))
                        .map(|(x, (gi, wi))| gi * (*x / wi.sqrt()))
                        .collect()
                })
                .collect(),
        );
    }
    result.eigenvalues = pairs.into_iter().map(|p| p.value).collect();
    Ok(result)
}

fn check_residual(a: &CsrMatrix<f64>, p: &EigenPair) -> Result<()> {
    let av = a.matvec(&p.vector)?;
    let r = av
        .iter()
        .zip(&p.vector)
        .map(|(x, y)| (x - p.value * y).powi(2))
        .sum::<f64>()
        .sqrt();
    let nv = p.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if r > 1e-8 * nv {
        return Err(Error::Invariant(format!(
            "eigenvector residual {r:e} exceeds tolerance for eigenvalue {}",
            p.value
        )));
    }
    Ok(())
}

fn nearest_pairs(a: &CsrMatrix<f64>, window: &SpectralWindow, vectors: bool) -> Result<Vec<EigenPair>> {
    let center = window.center();
    if a.nrows() < DENSE_LIMIT {
        let all = if vectors {
            dense_symmetric_eigen(a)
        } else {
            dense_symmetric_eigenvalues(a)
                .into_iter()
                .map(|value| EigenPair {
                    value,
                    vector: Vec::new(),
                })
                .collect()
        };
        let mut inside: Vec<(usize, EigenPair)> = all
            .into_iter()
            .enumerate()
            .filter(|(_, p)| p.value >= window.lo && p.value <= window.hi)
            .collect();
        inside.sort_by(|(i, x), (j, y)| {
            (x.value - center)
                .abs()
                .total_cmp(&(y.value - center).abs())
                .then(x.value.total_cmp(&y.value))
                .then(i.cmp(j))
        });
        inside.truncate(window.count);
        inside.sort_by(|(i, x), (j, y)| x.value.total_cmp(&y.value).then(i.cmp(j)));
        Ok(inside.into_iter().map(|(_, p)| p).collect())
    } else {
        // closed upper end: nudge by one ulp-scale step
        let hi = window.hi + 1e-14 * window.hi.abs().max(1.0);
        Ok(shift_invert_nearest(a, center, window.count, window.lo, hi, LANCZOS_SEED)?.pairs)
    }
}

/// Smallest `|λ|` over the spectrum of a real symmetric matrix, located by
/// inertia bisection of `t ↦ #{λ : −t ≤ λ < t}`.
pub fn min_abs_eigenvalue(a: &CsrMatrix<f64>, guess: f64) -> Result<f64> {
    let count = |t: f64| count_in_interval(a, -t, t);
    let mut lo = 0.0;
    // non-dyadic start keeps bisection points off exact threshold values
    let mut hi = 1.37 * guess.abs().max(f64::MIN_POSITIVE);
    let mut grow = 0;
    while count(hi)? == 0 {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::Invariant("matrix appears to have no eigenvalues".into()));
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if count(mid)? > 0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub mc2: f64,
    pub h: f64,
    pub l_inf: f64,
    /// `min |λ| − mc²` with half-lines truncated at `l_inf`; `≥ 0` up to
    /// rounding certifies an empty gap.
    pub margin: f64,
    /// Same with half-lines truncated at `2·l_inf`.
    pub margin_doubled: f64,
    /// Eigenvalues with `|λ| < mc²(1 − tolerance)` at `l_inf`.
    pub in_gap: usize,
    pub tolerance: f64,
}

impl GapReport {
    pub fn stability(&self) -> f64 {
        (self.margin - self.margin_doubled).abs()
    }

    /// The margin did not move by more than `1e−6` under doubling of `L∞`.
    pub fn stable(&self) -> bool {
        self.stability() < 1e-6
    }

    pub fn gap_certified(&self) -> bool {
        self.in_gap == 0 && self.stable()
    }
}

/// Relative tolerance of the in-gap count.
pub const GAP_TOLERANCE: f64 = 1e-3;

/// Checks numerically that the Dirac operator has no spectrum in
/// `(−mc², mc²)` with half-lines truncated at `L∞` (and `2L∞`).
pub fn verify_spectral_gap(g: &MetricGraph, m: f64, c: f64, l_inf: f64, h: f64) -> Result<GapReport> {
    if g.halflines().is_empty() {
        return Err(Error::Precondition("the gap check needs at least one half-line".into()));
    }
    if g.bounded_edges().is_empty() {
        return Err(Error::Precondition("graph has an empty compact core".into()));
    }
    if !(m > 0.0 && c > 0.0) {
        return Err(Error::Precondition(format!("m and c must be positive, got {m}, {c}")));
    }
    if !(l_inf >= 10.0 / (m * c)) {
        return Err(Error::Precondition(format!(
            "truncation length {l_inf} is below 10/(mc) = {}",
            10.0 / (m * c)
        )));
    }
    let mc2 = m * c * c;
    let margin_at = |len: f64| -> Result<(f64, usize, f64)> {
        let mesh = Mesh::new(g, h, HalflineTreatment::Truncate { length: len }, &[])?;
        let a = assemble_dirac(&mesh, m, c)?.real_symmetric()?;
        let t = mc2 * (1.0 - GAP_TOLERANCE);
        let in_gap = count_in_interval(&a, -t, t)?;
        Ok((min_abs_eigenvalue(&a, mc2)? - mc2, in_gap, mesh.h_max()))
    };
    let (margin, in_gap, hmax) = margin_at(l_inf)?;
    let (margin_doubled, _, _) = margin_at(2.0 * l_inf)?;
    Ok(GapReport {
        mc2,
        h: hmax,
        l_inf,
        margin,
        margin_doubled,
        in_gap,
        tolerance: GAP_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirac_op::assemble_laplacian_kirchhoff;
    use crate::graph::{parse_graph, VertexId};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn segment(len: f64) -> MetricGraph {
        parse_graph(&format!("vertex a\nvertex b\nedge e a b {len}\n")).unwrap()
    }

    fn dirichlet_segment_op(n: usize, m: f64, c: f64) -> DiscreteOperator {
        let g = segment(PI);
        let mesh = Mesh::new(
            &g,
            PI / n as f64,
            HalflineTreatment::Closure,
            &[VertexId(0), VertexId(1)],
        )
        .unwrap();
        assemble_dirac(&mesh, m, c).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let ev = segment_dirac_eigenvalues_closed_form(1.0, 1.0, PI, 2, SegmentBc::FirstComponentDirichlet).unwrap();
        let expect = [-(5f64.sqrt()), -(2f64.sqrt()), -1.0, 2f64.sqrt(), 5f64.sqrt()];
        for (a, b) in ev.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let ev = segment_dirac_eigenvalues_closed_form(1.0, 1.0, PI, 1, SegmentBc::KirchhoffTypeDeg1).unwrap();
        assert_eq!(ev.len(), 3);
        assert_eq!(ev[1], 1.0);
        assert!(segment_dirac_eigenvalues_closed_form(1.0, 0.0, PI, 1, SegmentBc::Mixed).is_err());
    }

    proptest! {
        #[test]
        fn closed_form_never_enters_the_gap(m in 0.01f64..10.0, c in 0.01f64..10.0, ell in 0.1f64..20.0) {
            for bc in [SegmentBc::FirstComponentDirichlet, SegmentBc::KirchhoffTypeDeg1, SegmentBc::Mixed] {
                for l in segment_dirac_eigenvalues_closed_form(m, c, ell, 5, bc).unwrap() {
                    prop_assert!(l.abs() >= m * c * c * (1.0 - 1e-15));
                }
            }
        }
    }

    #[test]
    fn discrete_segment_matches_closed_form_all_conditions() {
        let (m, c) = (0.9, 1.3);
        let g = segment(PI);
        let cases = [
            (
                SegmentBc::FirstComponentDirichlet,
                HalflineTreatment::Closure,
                vec![VertexId(0), VertexId(1)],
            ),
            (SegmentBc::KirchhoffTypeDeg1, HalflineTreatment::Closure, vec![]),
            (SegmentBc::Mixed, HalflineTreatment::Closure, vec![VertexId(0)]),
        ];
        for (bc, tr, dir) in cases {
            let mesh = Mesh::new(&g, PI / 600.0, tr, &dir).unwrap();
            let op = assemble_dirac(&mesh, m, c).unwrap();
            let exact = segment_dirac_eigenvalues_closed_form(m, c, PI, 3, bc).unwrap();
            let win = SpectralWindow::new(-4.0, 4.0, exact.iter().filter(|x| x.abs() <= 4.0).count()).unwrap();
            let got = discrete_spectrum(&op, &win, false).unwrap();
            let want: Vec<f64> = exact.iter().copied().filter(|x| x.abs() <= 4.0).collect();
            assert_eq!(got.eigenvalues.len(), want.len(), "{bc:?}");
            for (a, b) in got.eigenvalues.iter().zip(&want) {
                assert!((a - b).abs() < 1e-4 * b.abs(), "{bc:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn lanczos_path_segment_spectrum() {
        let op = dirichlet_segment_op(2000, 1.0, 1.0);
        assert!(op.dim() >= DENSE_LIMIT);
        let win = SpectralWindow::new(-2.0, 2.0, 3).unwrap();
        let got = discrete_spectrum(&op, &win, true).unwrap();
        let s2 = 2f64.sqrt();
        let want = [-s2, -1.0, s2];
        for (a, b) in got.eigenvalues.iter().zip(want) {
            assert!((a - b).abs() < 1e-4 * b.abs(), "{a} vs {b}");
        }
        // eigenvectors satisfy the field equation
        let vecs = got.eigenvectors.unwrap();
        for (v, l) in vecs.iter().zip(&got.eigenvalues) {
            let dv = op.apply_vec(v).unwrap();
            let r: f64 = dv
                .iter()
                .zip(v)
                .map(|(a, b)| (a - b * *l).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let nv: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!(r < 1e-6 * nv * (op.dim() as f64));
        }
    }

    #[test]
    fn mesh_convergence_order_is_two() {
        let errs: Vec<f64> = [250, 500, 1000]
            .iter()
            .map(|&n| {
                let op = dirichlet_segment_op(n, 1.0, 1.0);
                let win = SpectralWindow::new(1.0 + 1e-9, 2.0, 1).unwrap();
                let got = discrete_spectrum(&op, &win, false).unwrap();
                (got.eigenvalues[0] - 2f64.sqrt()).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((1.8..=2.2).contains(&rate), "{errs:?}");
        }
    }

    #[test]
    fn neumann_laplacian_via_lanczos() {
        let mesh = Mesh::new(&segment(PI), PI / 2000.0, HalflineTreatment::Closure, &[]).unwrap();
        let op = assemble_laplacian_kirchhoff(&mesh).unwrap();
        assert!(op.dim() >= DENSE_LIMIT);
        let got = discrete_spectrum(&op, &SpectralWindow::new(-0.5, 9.5, 4).unwrap(), false).unwrap();
        for (a, b) in got.eigenvalues.iter().zip([0.0, 1.0, 4.0, 9.0]) {
            assert!((a - b).abs() < 1e-4 * f64::max(b, 1.0), "{:?}", got.eigenvalues);
        }
    }

    #[test]
    fn empty_window() {
        let op = dirichlet_segment_op(20, 1.0, 1.0);
        let got = discrete_spectrum(&op, &SpectralWindow::new(0.5, 0.5, 3).unwrap(), false).unwrap();
        assert!(got.eigenvalues.is_empty());
        assert!(SpectralWindow::new(1.0, 0.0, 1).is_err());
    }

    #[test]
    fn symmetric_segment_spectrum_is_symmetric() {
        let op = dirichlet_segment_op(300, 1.0, 2.0);
        let got = discrete_spectrum(&op, &SpectralWindow::new(-30.0, 30.0, 40).unwrap(), false).unwrap();
        let pos: Vec<f64> = got.eigenvalues.iter().copied().filter(|x| *x > 4.0 + 1e-9).collect();
        let mut neg: Vec<f64> = got
            .eigenvalues
            .iter()
            .copied()
            .filter(|x| *x < -4.0 - 1e-9)
            .map(|x| -x)
            .collect();
        neg.sort_by(f64::total_cmp);
        for (a, b) in pos.iter().zip(&neg) {
            assert!((a - b).abs() < 1e-10 * a);
        }
    }

    #[test]
    fn orientation_does_not_change_the_spectrum() {
        let g =
            parse_graph("vertex a\nvertex b\nedge e a b 2\nedge f b a 1.5\nhalfline h1 a\nhalfline h2 b\n").unwrap();
        let flipped = g.with_flipped(&[0, 1]);
        let spec = |g: &MetricGraph| {
            let mesh = Mesh::new(g, 0.05, HalflineTreatment::Truncate { length: 10.0 }, &[]).unwrap();
            let op = assemble_dirac(&mesh, 1.0, 1.0).unwrap();
            discrete_spectrum(&op, &SpectralWindow::new(-3.0, 3.0, 30).unwrap(), false)
                .unwrap()
                .eigenvalues
        };
        let (a, b) = (spec(&g), spec(&flipped));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn gap_on_small_three_star_and_tadpole() {
        for text in [
            "vertex a\nvertex b\nedge e a b 2\nhalfline h1 a\nhalfline h2 a\n".to_string(),
            format!("vertex v\nedge loop v v {}\nhalfline h v\n", 2.0 * PI),
        ] {
            let g = parse_graph(&text).unwrap();
            let rep = verify_spectral_gap(&g, 1.0, 1.0, 10.0, 0.05).unwrap();
            assert_eq!(rep.in_gap, 0);
            assert!(rep.margin > -1e-9, "{rep:?}");
            assert!(rep.stable(), "{rep:?}");
        }
    }

    #[test]
    fn gap_check_preconditions() {
        assert!(verify_spectral_gap(&segment(1.0), 1.0, 1.0, 20.0, 0.1).is_err());
        let g = parse_graph("vertex a\nvertex b\nedge e a b 2\nhalfline h1 a\n").unwrap();
        assert!(verify_spectral_gap(&g, 1.0, 1.0, 5.0, 0.1).is_err());
    }

    #[test]
    fn min_abs_eigenvalue_of_diagonal() {
        let a = CsrMatrix::from_triplets(3, 3, vec![(0, 0, -3.0), (1, 1, 2.5), (2, 2, 7.0)]);
        assert!((min_abs_eigenvalue(&a, 1.0).unwrap() - 2.5).abs() < 1e-12);
    }
}
