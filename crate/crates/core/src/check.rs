//! Invariant suite over the bundled graph corpus.

use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dirac_op::{assemble_dirac, assemble_laplacian_kirchhoff, DiscreteOperator};
use crate::discretize::{fmt17, HalflineTreatment, Mesh};
use crate::error::Result;
use crate::graph::{parse_graph, MetricGraph, VertexId};
use crate::linalg::count_below;
use crate::newton::NewtonOptions;
use crate::nld::{criticality_probe, lift_from_nls, solve_newton, tail_linear_residual, virial_check, NldProblem};
use crate::nls::{default_guess, solve_newton_nls, NlsProblem};
use crate::spectrum::{
    discrete_spectrum, segment_dirac_eigenvalues_closed_form, verify_spectral_gap, SegmentBc, SpectralWindow,
};

/// `(name, graph text)` of every bundled graph.
pub const CORPUS: [(&str, &str); 4] = [
    ("segment", include_str!("../graphs/segment.graph")),
    ("three_star", include_str!("../graphs/three_star.graph")),
    ("tadpole", include_str!("../graphs/tadpole.graph")),
    ("cycles", include_str!("../graphs/cycles.graph")),
];

pub fn corpus_graph(name: &str) -> Option<&'static str> {
    CORPUS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub graph: String,
    pub invariant: &'static str,
    pub value: f64,
    pub threshold: f64,
    /// `value ≤ threshold` unless the row is a lower bound.
    pub lower_bound: bool,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        if self.lower_bound {
            self.value >= self.threshold
        } else {
            self.value <= self.threshold
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.passed()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("graph,invariant,value,threshold,status\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}{},{}",
                r.graph,
                r.invariant,
                fmt17(r.value),
                if r.lower_bound { ">=" } else { "<=" },
                fmt17(r.threshold),
                if r.passed() { "PASS" } else { "FAIL" }
            );
        }
        out
    }

    fn push(&mut self, graph: &str, invariant: &'static str, value: f64, threshold: f64) {
        self.rows.push(CheckRow {
            graph: graph.to_string(),
            invariant,
            value,
            threshold,
            lower_bound: false,
        });
    }

    fn push_lower(&mut self, graph: &str, invariant: &'static str, value: f64, threshold: f64) {
        self.rows.push(CheckRow {
            graph: graph.to_string(),
            invariant,
            value,
            threshold,
            lower_bound: true,
        });
    }
}

/// Mesh width of the operator checks and the gap check.
const LINEAR_H: f64 = 0.05;
const GAP_H: f64 = 0.02;
const GAP_L_INF: f64 = 20.0;
/// Mesh width of the nonlinear solves.
const SOLVE_H: f64 = 0.02;

/// Runs every invariant on every corpus graph. Solver errors propagate;
/// failed invariants are reported in the rows.
pub fn run_check(seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::default();
    for (name, text) in CORPUS {
        let g = parse_graph(text)?;
        check_graph(&mut report, name, &g, seed)?;
    }
    Ok(report)
}

fn linear_mesh(g: &MetricGraph, h: f64) -> Result<Mesh> {
    Mesh::new(g, h, HalflineTreatment::Truncate { length: 5.0 }, &[])
}

fn check_graph(report: &mut CheckReport, name: &str, g: &MetricGraph, seed: u64) -> Result<()> {
    let mesh = linear_mesh(g, LINEAR_H)?;
    let dirac = assemble_dirac(&mesh, 1.0, 1.0)?;
    let lap = assemble_laplacian_kirchhoff(&mesh)?;
    report.push(name, "dirac_hermitian_defect", dirac.hermitian_defect(), 1e-12);
    report.push(name, "laplacian_symmetry_defect", lap.hermitian_defect(), 1e-12);
    report.push(name, "dirac_green_identity", green_identity(&dirac, 100, seed)?, 1e-12);
    report.push(
        name,
        "laplacian_green_identity",
        green_identity(&lap, 100, seed)?,
        1e-12,
    );
    let negatives = count_below(&lap.real_symmetric()?, -1e-10)?;
    report.push(name, "laplacian_negative_eigenvalues", negatives as f64, 0.0);

    let flipped = g.with_flipped(&(0..g.bounded_edges().len()).collect::<Vec<_>>());
    // the whole window: with a count cutoff, ties between ±λ pick either sign
    let window = SpectralWindow::new(-5.0, 5.0, usize::MAX)?;
    let a = discrete_spectrum(&dirac, &window, false)?.eigenvalues;
    let b = discrete_spectrum(
        &assemble_dirac(&linear_mesh(&flipped, LINEAR_H)?, 1.0, 1.0)?,
        &window,
        false,
    )?
    .eigenvalues;
    let shift = if a.len() == b.len() {
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    report.push(name, "orientation_eigenvalue_shift", shift, 1e-10);

    if g.halflines().is_empty() {
        if name == "segment" {
            check_segment(report, name, g)?;
        }
        return Ok(());
    }

    let gap = verify_spectral_gap(g, 1.0, 1.0, GAP_L_INF, GAP_H)?;
    report.push(name, "gap_eigenvalues_inside", gap.in_gap as f64, 0.0);
    report.push(name, "gap_margin_doubling_change", gap.stability(), 1e-6);

    let opts = NewtonOptions::default();
    let nls = NlsProblem::new(g, 1.0, -1.0, 4.0, None, SOLVE_H)?;
    let target = solve_newton_nls(&nls, &default_guess(&nls)?, &opts)?;
    report.push(name, "nls_residual", target.residual_norm, 1e-10);
    report.push_lower(name, "nls_core_mass", target.core_mass, 1e-10);
    let x = nls.vector(&target.u)?;
    let grad = nls.gradient(&x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let phi: Vec<f64> = (0..nls.dim()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let d: f64 = grad.iter().zip(&phi).map(|(a, b)| a * b).sum();
        worst = worst.max(d.abs() / nls.probe_h1_norm(&phi));
    }
    report.push(name, "nls_criticality", worst, 1e-6);

    let (m, c) = (1.0, 20.0);
    let prob = NldProblem::new(g, m, c, m * c * c - 0.5, 4.0, SOLVE_H)?;
    let bs = solve_newton(&prob, &lift_from_nls(&target.u, &prob)?, &opts)?;
    report.push(name, "nld_residual", bs.residual_norm, 1e-10);
    report.push_lower(name, "nld_core_mass", bs.core_mass, 1e-10);
    report.push(name, "nld_virial", virial_check(&bs), 1e-8);
    report.push(
        name,
        "nld_criticality",
        criticality_probe(&bs.psi, &prob, 50, seed)?,
        1e-6,
    );
    report.push(
        name,
        "nld_continuity_defect",
        bs.psi.continuity_defect(prob.mesh()),
        0.0,
    );
    let k = prob.closure().decay;
    let tail = bs
        .psi
        .tails
        .iter()
        .flat_map(|t| [0.0, 1.0 / k, 5.0 / k].map(|x| tail_linear_residual(t, m, c, bs.omega, x)))
        .fold(0.0, f64::max);
    report.push(name, "nld_tail_linear_residual", tail, 1e-12);
    Ok(())
}

fn check_segment(report: &mut CheckReport, name: &str, g: &MetricGraph) -> Result<()> {
    let len = g.bounded_edges()[0].length;
    let h = len / 1000.0;
    let ends = [VertexId(0), VertexId(1)];
    let mesh = Mesh::new(g, h, HalflineTreatment::Closure, &ends)?;
    let ev = discrete_spectrum(
        &assemble_dirac(&mesh, 1.0, 1.0)?,
        &SpectralWindow::new(-3.0, 3.0, 5)?,
        false,
    )?
    .eigenvalues;
    let exact = segment_dirac_eigenvalues_closed_form(1.0, 1.0, len, 2, SegmentBc::FirstComponentDirichlet)?;
    report.push(name, "dirichlet_spectrum_rel_error", rel_error(&ev, &exact), 1e-4);

    let mesh = Mesh::closure(g, h)?;
    let ev = discrete_spectrum(
        &assemble_laplacian_kirchhoff(&mesh)?,
        &SpectralWindow::new(-0.5, 9.5, 4)?,
        false,
    )?
    .eigenvalues;
    let exact: Vec<f64> = (0..4)
        .map(|j| (j * j) as f64 * (std::f64::consts::PI / len).powi(2))
        .collect();
    let err = if ev.len() == exact.len() {
        ev.iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs() / b.max(1.0))
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    report.push(name, "neumann_spectrum_error", err, 1e-4);
    Ok(())
}

fn rel_error(got: &[f64], exact: &[f64]) -> f64 {
    if got.len() != exact.len() {
        return f64::INFINITY;
    }
    got.iter()
        .zip(exact)
        .map(|(a, b)| (a - b).abs() / b.abs())
        .fold(0.0, f64::max)
}

/// Largest `|⟨Dx, y⟩ − ⟨x, Dy⟩| / (‖Dx‖‖y‖ + ‖x‖‖Dy‖)` over seeded random pairs.
fn green_identity(op: &DiscreteOperator, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<C64> {
        (0..op.dim())
            .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect()
    };
    let norm = |v: &[C64]| op.inner(v, v).re.sqrt();
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x = draw();
        let y = draw();
        let scale = norm(&op.apply_vec(&x)?) * norm(&y) + norm(&x) * norm(&op.apply_vec(&y)?);
        worst = worst.max(op.green_defect(&x, &y)? / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_parses() {
        for (name, text) in CORPUS {
            assert!(parse_graph(text).is_ok(), "{name}");
        }
        assert!(corpus_graph("three_star").is_some());
        assert!(corpus_graph("nope").is_none());
    }

    #[test]
    fn report_status() {
        let mut r = CheckReport::default();
        r.push("g", "a", 1.0, 2.0);
        r.push_lower("g", "b", 1.0, 2.0);
        assert!(!r.all_passed());
        assert_eq!(r.failures(), 1);
        assert!(r
            .to_csv()
            .contains("g,b,1.0000000000000000e0,>=2.0000000000000000e0,FAIL"));
    }
}
