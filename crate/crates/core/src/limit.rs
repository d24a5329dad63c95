//! Nonrelativistic limit experiment: NLD bound states along a schedule
//! `c_n → ∞` with `mc_n² − ω_n` held fixed, compared with the NLS bound state
//! of frequency `λ` and coupling `α = 2m`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discretize::{NormKind, ScalarField};
use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::newton::NewtonOptions;
use crate::nld::{continuation_in_c, lift_from_nls, NldProblem};
use crate::nls::{default_guess, pairing_an, solve_newton_nls, NlsBoundState, NlsProblem};

/// How `ω_n − mc_n²` is tied to `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LimitConvention {
    /// `ω = mc² + λ/(2m)`, for which `a_n → −λ` and `b_n → 2m`.
    #[default]
    Half,
    /// `ω = mc² + λ/m`, for which `a_n → −2λ`.
    Paper,
}

impl LimitConvention {
    pub fn offset(self, m: f64, lambda: f64) -> f64 {
        match self {
            LimitConvention::Half => lambda / (2.0 * m),
            LimitConvention::Paper => lambda / m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEntry {
    pub c: f64,
    pub omega: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitSchedule {
    pub m: f64,
    pub lambda: f64,
    pub convention: LimitConvention,
    pub entries: Vec<ScheduleEntry>,
}

/// `b = (mc² + ω)/c²` and `a = (mc² − ω)b`.
pub fn coefficients(m: f64, c: f64, omega: f64) -> (f64, f64) {
    let mc2 = m * c * c;
    let b = (mc2 + omega) / (c * c);
    ((mc2 - omega) * b, b)
}

pub fn make_schedule(m: f64, lambda: f64, c_list: &[f64], convention: LimitConvention) -> Result<LimitSchedule> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Precondition(format!("m must be positive, got {m}")));
    }
    if !(lambda < 0.0 && lambda.is_finite()) {
        return Err(Error::Precondition(format!("λ must be negative, got {lambda}")));
    }
    if c_list.is_empty() {
        return Err(Error::Precondition("empty c list".into()));
    }
    if c_list.iter().any(|c| !(*c > 0.0 && c.is_finite())) || c_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(
            "c values must be positive and strictly increasing".into(),
        ));
    }
    let offset = convention.offset(m, lambda);
    let entries = c_list
        .iter()
        .map(|&c| {
            let mc2 = m * c * c;
            let omega = mc2 + offset;
            if !(omega > -mc2 && omega < mc2) {
                return Err(Error::Precondition(format!(
                    "ω = {omega} leaves the gap (−{mc2}, {mc2}) at c = {c}"
                )));
            }
            let (a, b) = coefficients(m, c, omega);
            Ok(ScheduleEntry { c, omega, a, b })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LimitSchedule {
        m,
        lambda,
        convention,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub n: usize,
    pub c: f64,
    pub omega: f64,
    pub a_n: f64,
    pub b_n: f64,
    pub residual: f64,
    pub h1_psi2: f64,
    pub h1_diff: f64,
    pub h1_psi1: f64,
    pub action: f64,
    pub core_mass: f64,
    /// The state needed an intermediate `c` in the continuation.
    pub halved: bool,
    /// `sup |⟨A_n(ψ¹_n)|φ⟩|` over the probe set.
    pub probe_sup: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub target: NlsBoundState,
    /// Least-squares slope of `log ‖ψ²‖_{H¹}` against `log c`.
    pub slope: Option<f64>,
    /// `c` of a point left out of the fit.
    pub dropped: Option<f64>,
    pub failure: Option<(usize, Error)>,
}

pub const PROBE_COUNT: usize = 50;

impl SweepOutcome {
    /// `‖ψ¹_n − u‖_{H¹}` strictly decreasing in `n`.
    pub fn diff_decreasing(&self) -> bool {
        self.records.windows(2).all(|w| w[1].h1_diff < w[0].h1_diff)
    }

    /// Probe suprema nonincreasing within 10%.
    pub fn probes_nonincreasing(&self) -> bool {
        self.records.windows(2).all(|w| w[1].probe_sup <= 1.1 * w[0].probe_sup)
    }

    /// Largest `c_n ‖ψ²_n‖_{H¹}`.
    pub fn scaled_psi2_bound(&self) -> f64 {
        self.records.iter().map(|r| r.c * r.h1_psi2).fold(0.0, f64::max)
    }
}

/// `min_n ‖ψ¹_n‖_{H¹}`.
pub fn nonzero_floor(records: &[SweepRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Precondition("no records".into()));
    }
    Ok(records.iter().map(|r| r.h1_psi1).fold(f64::INFINITY, f64::min))
}

/// Least-squares slope of `ys` against `xs`; `None` below two points.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Solves the NLS target once, then continues the NLD state from the lift at
/// the largest `c` down the schedule.
pub fn run_sweep(
    schedule: &LimitSchedule,
    g: &MetricGraph,
    p: f64,
    h: f64,
    opts: &NewtonOptions,
    seed: u64,
) -> Result<SweepOutcome> {
    if !(p > 2.0 && p < 6.0) {
        return Err(Error::Precondition(format!("sweeps need p in (2, 6), got {p}")));
    }
    let m = schedule.m;
    let nls = NlsProblem::new(g, m, schedule.lambda, p, Some(2.0 * m), h)?;
    let target = solve_newton_nls(&nls, &default_guess(&nls)?, opts)?;

    let last = schedule.entries.last().expect("nonempty schedule");
    let top = NldProblem::new(g, m, last.c, last.omega, p, h)?;
    let start = lift_from_nls(&target.u, &top)?;
    let cs: Vec<f64> = schedule.entries.iter().rev().map(|e| e.c).collect();
    let offset = schedule.convention.offset(m, schedule.lambda);
    let cont = continuation_in_c(g, m, p, h, &cs, |c| Ok(m * c * c + offset), &start, opts)?;

    let probes = probe_directions(&nls, seed);
    let total = schedule.entries.len();
    let mut records = Vec::with_capacity(cont.states.len());
    for (k, st) in cont.states.iter().enumerate() {
        let n = total - 1 - k;
        let e = schedule.entries[n];
        let bs = &st.state;
        let psi1: ScalarField = bs.psi.first_component_re();
        let x = nls.vector(&psi1)?;
        let mut probe_sup: f64 = 0.0;
        for phi in &probes {
            probe_sup = probe_sup.max(pairing_an(&x, phi, e.a, e.b, &nls)?.abs());
        }
        records.push(SweepRecord {
            n,
            c: e.c,
            omega: e.omega,
            a_n: e.a,
            b_n: e.b,
            residual: bs.residual_norm,
            h1_psi2: bs.psi.second_component_h1(),
            h1_diff: psi1.h1_distance(&target.u),
            h1_psi1: psi1.norm(NormKind::H1)?,
            action: bs.action,
            core_mass: bs.core_mass,
            halved: st.halved,
            probe_sup,
        });
    }
    records.reverse();

    let mut fit: Vec<&SweepRecord> = records.iter().collect();
    let mut dropped = None;
    if fit.len() > 2 && fit[0].n == 0 && fit[0].halved {
        dropped = Some(fit[0].c);
        fit.remove(0);
    }
    let xs: Vec<f64> = fit.iter().map(|r| r.c.ln()).collect();
    let ys: Vec<f64> = fit.iter().map(|r| r.h1_psi2.ln()).collect();
    let failure = cont.failure.map(|(k, e)| (total - 1 - k, e));
    Ok(SweepOutcome {
        slope: fit_slope(&xs, &ys),
        records,
        target,
        dropped,
        failure,
    })
}

/// Seeded directions of unit H¹ norm (tails of decay one).
pub fn probe_directions(prob: &NlsProblem, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..PROBE_COUNT)
        .map(|_| {
            let phi: Vec<f64> = (0..prob.dim()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let norm = prob.probe_h1_norm(&phi);
            phi.into_iter().map(|v| v / norm).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_graph;

    #[test]
    fn schedule_values() {
        let s = make_schedule(1.0, -1.0, &[10.0], LimitConvention::Half).unwrap();
        let e = s.entries[0];
        assert_eq!(e.omega, 99.5);
        assert!((e.b - 1.995).abs() < 1e-14);
        assert!((e.a - 0.9975).abs() < 1e-14);
        let s = make_schedule(1.0, -1.0, &[1e6], LimitConvention::Half).unwrap();
        assert!((s.entries[0].a - 1.0).abs() < 1e-9 && (s.entries[0].b - 2.0).abs() < 1e-9);
        let s = make_schedule(1.0, -1.0, &[1e6], LimitConvention::Paper).unwrap();
        assert!((s.entries[0].a - 2.0).abs() < 1e-9);
    }

    #[test]
    fn schedule_preconditions() {
        assert!(make_schedule(1.0, 1.0, &[10.0], LimitConvention::Half).is_err());
        assert!(make_schedule(1.0, -1.0, &[8.0, 4.0], LimitConvention::Half).is_err());
        // ω = 0.25 − 0.5 < −0.25
        assert!(make_schedule(1.0, -1.0, &[0.5], LimitConvention::Half).is_err());
    }

    #[test]
    fn slope_fit() {
        let xs = [1.0, 2.0, 3.0];
        assert!((fit_slope(&xs, &[2.0, 0.0, -2.0]).unwrap() + 2.0).abs() < 1e-15);
        assert_eq!(fit_slope(&[1.0], &[1.0]), None);
    }

    #[test]
    fn floor_of_records() {
        assert!(nonzero_floor(&[]).is_err());
    }

    #[test]
    fn short_sweep_on_three_star() {
        let g = parse_graph("vertex a\nvertex b\nedge e a b 2\nhalfline h1 a\nhalfline h2 a\n").unwrap();
        let s = make_schedule(1.0, -1.0, &[4.0, 8.0, 16.0], LimitConvention::Half).unwrap();
        let out = run_sweep(&s, &g, 4.0, 0.02, &NewtonOptions::default(), 1).unwrap();
        assert!(out.failure.is_none());
        assert_eq!(out.records.len(), 3);
        let slope = out.slope.unwrap();
        assert!((-1.3..=-0.7).contains(&slope), "{slope}");
        assert!(out.diff_decreasing());
        for r in &out.records {
            assert!((r.c * r.c - r.omega - 0.5).abs() < 1e-12);
        }
        assert_eq!(
            nonzero_floor(&out.records).unwrap(),
            out.records.iter().map(|r| r.h1_psi1).fold(f64::MAX, f64::min)
        );
    }

    #[test]
    fn single_point_has_no_slope() {
        let g = parse_graph("vertex a\nvertex b\nedge e a b 2\nhalfline h1 a\nhalfline h2 a\n").unwrap();
        let s = make_schedule(1.0, -1.0, &[10.0], LimitConvention::Half).unwrap();
        let out = run_sweep(&s, &g, 4.0, 0.05, &NewtonOptions::default(), 1).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.slope, None);
        assert_eq!(nonzero_floor(&out.records).unwrap(), out.records[0].h1_psi1);
    }
}
