//! Staggered grids, field storage and discrete norms.
//!
//! On every discretized segment the first spinor component lives at the nodes
//! `x_j = j h` and the second at the midpoints `x_{j+1/2}`. Node quantities
//! are integrated with the trapezoid rule and midpoint quantities with the
//! midpoint rule. Half-lines are either closed analytically (exponential
//! tails, see [`SpinorTail`]) or truncated to a finite segment whose tip
//! carries `ψ¹ = 0`.
//!
//! A [`Mesh`] fixes the unknown layout: each segment contributes a contiguous
//! chain of interior unknowns, and the shared `ψ¹` vertex values come last.
//! That ordering keeps the elimination fill of every graph operator confined
//! to the (small) vertex block.

use std::fmt::Write as _;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::graph::{MetricGraph, VertexId};

/// Minimum number of intervals per edge.
pub const MIN_INTERVALS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGrid {
    pub edge: usize,
    pub intervals: usize,
    pub h: f64,
    pub length: f64,
}

impl EdgeGrid {
    pub fn new(edge: usize, length: f64, h_target: f64) -> Self {
        let ratio = length / h_target;
        // absorb representation noise such as 2.0000000000000004
        let n = ((ratio * (1.0 - 1e-12)).ceil() as usize).max(MIN_INTERVALS);
        EdgeGrid {
            edge,
            intervals: n,
            h: length / n as f64,
            length,
        }
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.intervals {
            self.length
        } else {
            j as f64 * self.h
        }
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h
    }
}

/// One grid per bounded edge, `N_e = max(4, ⌈ℓ_e / h_target⌉)`.
pub fn make_grids(g: &MetricGraph, h_target: f64) -> Result<Vec<EdgeGrid>> {
    if !(h_target.is_finite() && h_target > 0.0) {
        return Err(Error::Precondition(format!(
            "mesh size must be positive, got {h_target}"
        )));
    }
    Ok(g.bounded_edges()
        .iter()
        .enumerate()
        .map(|(i, e)| EdgeGrid::new(i, e.length, h_target))
        .collect())
}

/// How half-lines enter a discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HalflineTreatment {
    /// Half-lines are not discretized; callers add the exact exterior closure
    /// at the attachment vertex.
    Closure,
    /// Half-lines are cut at `length` with `ψ¹ = 0` at the tip.
    Truncate { length: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SegmentOrigin {
    Bounded(usize),
    Halfline(usize),
}

impl SegmentOrigin {
    pub fn is_core(self) -> bool {
        matches!(self, SegmentOrigin::Bounded(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub origin: SegmentOrigin,
    pub grid: EdgeGrid,
    pub start: Option<VertexId>,
    /// `None` for a truncated tip or a Dirichlet vertex.
    pub end: Option<VertexId>,
    start_vertex: VertexId,
    end_vertex: Option<VertexId>,
    spinor_offset: usize,
    scalar_offset: usize,
}

impl Segment {
    pub fn intervals(&self) -> usize {
        self.grid.intervals
    }

    pub fn h(&self) -> f64 {
        self.grid.h
    }

    /// Vertex at `x = 0`, regardless of Dirichlet elimination.
    pub fn start_vertex(&self) -> VertexId {
        self.start_vertex
    }

    /// Vertex at `x = ℓ`; `None` for a truncated half-line tip.
    pub fn end_vertex(&self) -> Option<VertexId> {
        self.end_vertex
    }
}

/// Unknown layout and quadrature weights for a graph at a given mesh size.
#[derive(Debug, Clone)]
pub struct Mesh {
    graph: MetricGraph,
    segments: Vec<Segment>,
    treatment: HalflineTreatment,
    dirichlet: Vec<bool>,
    spinor_vertex_dof: Vec<Option<usize>>,
    scalar_vertex_dof: Vec<Option<usize>>,
    spinor_len: usize,
    scalar_len: usize,
    vertex_weight: Vec<f64>,
    closure_halflines: Vec<Vec<usize>>,
}

impl Mesh {
    pub fn new(g: &MetricGraph, h_target: f64, treatment: HalflineTreatment, dirichlet: &[VertexId]) -> Result<Self> {
        let grids = make_grids(g, h_target)?;
        let nv = g.vertex_count();
        let mut is_dirichlet = vec![false; nv];
        for v in dirichlet {
            if v.0 >= nv {
                return Err(Error::UnknownVertex(format!("#{}", v.0)));
            }
            is_dirichlet[v.0] = true;
        }
        let mut raw: Vec<(SegmentOrigin, EdgeGrid, VertexId, Option<VertexId>)> = Vec::new();
        for (i, e) in g.bounded_edges().iter().enumerate() {
            raw.push((SegmentOrigin::Bounded(i), grids[i].clone(), e.from, Some(e.to)));
        }
        let mut closure_halflines = vec![Vec::new(); nv];
        match treatment {
            HalflineTreatment::Closure => {
                for (i, hl) in g.halflines().iter().enumerate() {
                    closure_halflines[hl.attach.0].push(i);
                }
            }
            HalflineTreatment::Truncate { length } => {
                if !(length.is_finite() && length > 0.0) {
                    return Err(Error::Precondition(format!(
                        "truncation length must be positive, got {length}"
                    )));
                }
                for (i, hl) in g.halflines().iter().enumerate() {
                    raw.push((
                        SegmentOrigin::Halfline(i),
                        EdgeGrid::new(i, length, h_target),
                        hl.attach,
                        None,
                    ));
                }
            }
        }
        if raw.is_empty() {
            return Err(Error::Precondition(
                "nothing to discretize: no bounded edge and no truncated half-line".into(),
            ));
        }

        let mut segments = Vec::with_capacity(raw.len());
        let mut spinor_off = 0;
        let mut scalar_off = 0;
        for (origin, grid, from, to) in raw {
            let n = grid.intervals;
            let start = (!is_dirichlet[from.0]).then_some(from);
            let end = to.filter(|v| !is_dirichlet[v.0]);
            segments.push(Segment {
                origin,
                grid,
                start,
                end,
                start_vertex: from,
                end_vertex: to,
                spinor_offset: spinor_off,
                scalar_offset: scalar_off,
            });
            spinor_off += 2 * n - 1;
            scalar_off += n - 1;
        }

        let mut vertex_weight = vec![0.0; nv];
        for s in &segments {
            vertex_weight[s.start_vertex.0] += 0.5 * s.h();
            if let Some(v) = s.end_vertex {
                vertex_weight[v.0] += 0.5 * s.h();
            }
        }
        let mut spinor_vertex_dof = vec![None; nv];
        let mut scalar_vertex_dof = vec![None; nv];
        for v in 0..nv {
            if is_dirichlet[v] {
                continue;
            }
            if vertex_weight[v] == 0.0 {
                return Err(Error::Precondition(format!(
                    "vertex `{}` touches no discretized segment",
                    g.vertex_name(VertexId(v))
                )));
            }
            spinor_vertex_dof[v] = Some(spinor_off);
            scalar_vertex_dof[v] = Some(scalar_off);
            spinor_off += 1;
            scalar_off += 1;
        }

        Ok(Mesh {
            graph: g.clone(),
            segments,
            treatment,
            dirichlet: is_dirichlet,
            spinor_vertex_dof,
            scalar_vertex_dof,
            spinor_len: spinor_off,
            scalar_len: scalar_off,
            vertex_weight,
            closure_halflines,
        })
    }

    /// Core-only mesh with exact half-line closure (used by the solvers).
    pub fn closure(g: &MetricGraph, h_target: f64) -> Result<Self> {
        if g.bounded_edges().is_empty() {
            return Err(Error::Precondition("graph has an empty compact core".into()));
        }
        Mesh::new(g, h_target, HalflineTreatment::Closure, &[])
    }

    pub fn graph(&self) -> &MetricGraph {
        &self.graph
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn treatment(&self) -> HalflineTreatment {
        self.treatment
    }

    pub fn is_dirichlet(&self, v: VertexId) -> bool {
        self.dirichlet[v.0]
    }

    /// Half-lines attached at `v` that are closed analytically.
    pub fn closure_halflines(&self, v: VertexId) -> &[usize] {
        &self.closure_halflines[v.0]
    }

    /// Largest mesh width over all segments.
    pub fn h_max(&self) -> f64 {
        self.segments.iter().map(|s| s.h()).fold(0.0, f64::max)
    }

    pub fn spinor_len(&self) -> usize {
        self.spinor_len
    }

    pub fn scalar_len(&self) -> usize {
        self.scalar_len
    }

    pub fn spinor_vertex_dof(&self, v: VertexId) -> Option<usize> {
        self.spinor_vertex_dof[v.0]
    }

    pub fn scalar_vertex_dof(&self, v: VertexId) -> Option<usize> {
        self.scalar_vertex_dof[v.0]
    }

    /// Unknown index of `ψ¹` at node `j` of segment `s` (`None` where `ψ¹ = 0`).
    pub fn spinor_node(&self, s: usize, j: usize) -> Option<usize> {
        let seg = &self.segments[s];
        let n = seg.intervals();
        if j == 0 {
            seg.start.and_then(|v| self.spinor_vertex_dof[v.0])
        } else if j == n {
            seg.end.and_then(|v| self.spinor_vertex_dof[v.0])
        } else {
            Some(seg.spinor_offset + 2 * j - 1)
        }
    }

    /// Unknown index of `ψ²` at midpoint `j + 1/2` of segment `s`.
    pub fn spinor_mid(&self, s: usize, j: usize) -> usize {
        self.segments[s].spinor_offset + 2 * j
    }

    /// Unknown index of a scalar node value.
    pub fn scalar_node(&self, s: usize, j: usize) -> Option<usize> {
        let seg = &self.segments[s];
        let n = seg.intervals();
        if j == 0 {
            seg.start.and_then(|v| self.scalar_vertex_dof[v.0])
        } else if j == n {
            seg.end.and_then(|v| self.scalar_vertex_dof[v.0])
        } else {
            Some(seg.scalar_offset + j - 1)
        }
    }

    /// Quadrature weight of the node unknown of vertex `v`.
    pub fn vertex_weight(&self, v: VertexId) -> f64 {
        self.vertex_weight[v.0]
    }

    /// Whether spinor unknown `i` is a `ψ¹` (node) value.
    pub fn spinor_is_node(&self, i: usize) -> bool {
        if let Some(s) = self.segment_of_spinor(i) {
            (i - self.segments[s].spinor_offset) % 2 == 1
        } else {
            true
        }
    }

    /// `true` for every spinor unknown holding a `ψ¹` value.
    pub fn spinor_node_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.spinor_len];
        for s in 0..self.segments.len() {
            for j in 0..self.segments[s].intervals() {
                mask[self.spinor_mid(s, j)] = false;
            }
        }
        mask
    }

    fn segment_of_spinor(&self, i: usize) -> Option<usize> {
        self.segments
            .iter()
            .position(|s| i >= s.spinor_offset && i < s.spinor_offset + 2 * s.intervals() - 1)
    }

    /// Quadrature weights of the spinor unknowns (trapezoid at nodes, midpoint
    /// rule at midpoints).
    pub fn spinor_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.spinor_len];
        for (s, seg) in self.segments.iter().enumerate() {
            let n = seg.intervals();
            for j in 0..n {
                w[self.spinor_mid(s, j)] = seg.h();
            }
            for j in 1..n {
                w[self.spinor_node(s, j).unwrap()] = seg.h();
            }
        }
        for v in 0..self.vertex_weight.len() {
            if let Some(i) = self.spinor_vertex_dof[v] {
                w[i] = self.vertex_weight[v];
            }
        }
        w
    }

    /// Trapezoid weights of the scalar unknowns.
    pub fn scalar_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.scalar_len];
        for (s, seg) in self.segments.iter().enumerate() {
            for j in 1..seg.intervals() {
                w[self.scalar_node(s, j).unwrap()] = seg.h();
            }
        }
        for v in 0..self.vertex_weight.len() {
            if let Some(i) = self.scalar_vertex_dof[v] {
                w[i] = self.vertex_weight[v];
            }
        }
        w
    }

    /// Expands a constrained spinor vector into per-segment values.
    pub fn spinor_from_vec(&self, v: &[C64], tails: Vec<SpinorTail>) -> Result<SpinorField> {
        check_len(self.spinor_len, v.len())?;
        let segments = self
            .segments
            .iter()
            .enumerate()
            .map(|(s, seg)| {
                let n = seg.intervals();
                let psi1 = (0..=n)
                    .map(|j| self.spinor_node(s, j).map_or(C64::new(0.0, 0.0), |i| v[i]))
                    .collect();
                let psi2 = (0..n).map(|j| v[self.spinor_mid(s, j)]).collect();
                SpinorSegment {
                    origin: seg.origin,
                    h: seg.h(),
                    psi1,
                    psi2,
                }
            })
            .collect();
        Ok(SpinorField { segments, tails })
    }

    /// Gathers a spinor field into the constrained vector. Vertex values are
    /// read from the first incident segment; see
    /// [`SpinorField::continuity_defect`] for the consistency check.
    pub fn spinor_to_vec(&self, f: &SpinorField) -> Result<Vec<C64>> {
        self.check_spinor_shape(f)?;
        let mut v = vec![C64::new(0.0, 0.0); self.spinor_len];
        let mut filled = vec![false; self.spinor_len];
        for (s, seg) in f.segments.iter().enumerate() {
            let n = seg.psi2.len();
            for j in 0..n {
                v[self.spinor_mid(s, j)] = seg.psi2[j];
            }
            for j in 0..=n {
                if let Some(i) = self.spinor_node(s, j) {
                    if !filled[i] {
                        v[i] = seg.psi1[j];
                        filled[i] = true;
                    }
                }
            }
        }
        Ok(v)
    }

    pub fn check_spinor_shape(&self, f: &SpinorField) -> Result<()> {
        check_len(self.segments.len(), f.segments.len())?;
        for (seg, fs) in self.segments.iter().zip(&f.segments) {
            check_len(seg.intervals() + 1, fs.psi1.len())?;
            check_len(seg.intervals(), fs.psi2.len())?;
        }
        Ok(())
    }

    pub fn scalar_from_vec(&self, v: &[f64], tails: Vec<ScalarTail>) -> Result<ScalarField> {
        check_len(self.scalar_len, v.len())?;
        let segments = self
            .segments
            .iter()
            .enumerate()
            .map(|(s, seg)| ScalarSegment {
                origin: seg.origin,
                h: seg.h(),
                u: (0..=seg.intervals())
                    .map(|j| self.scalar_node(s, j).map_or(0.0, |i| v[i]))
                    .collect(),
            })
            .collect();
        Ok(ScalarField { segments, tails })
    }

    pub fn scalar_to_vec(&self, f: &ScalarField) -> Result<Vec<f64>> {
        check_len(self.segments.len(), f.segments.len())?;
        let mut v = vec![0.0; self.scalar_len];
        let mut filled = vec![false; self.scalar_len];
        for (s, (seg, fs)) in self.segments.iter().zip(&f.segments).enumerate() {
            check_len(seg.intervals() + 1, fs.u.len())?;
            for j in 0..=seg.intervals() {
                if let Some(i) = self.scalar_node(s, j) {
                    if !filled[i] {
                        v[i] = fs.u[j];
                        filled[i] = true;
                    }
                }
            }
        }
        Ok(v)
    }

    /// Samples a function of `(segment origin, x)` at the nodes/midpoints.
    pub fn sample_spinor(
        &self,
        mut f: impl FnMut(SegmentOrigin, f64) -> (C64, C64),
        tails: Vec<SpinorTail>,
    ) -> SpinorField {
        let segments = self
            .segments
            .iter()
            .map(|seg| {
                let n = seg.intervals();
                SpinorSegment {
                    origin: seg.origin,
                    h: seg.h(),
                    psi1: (0..=n).map(|j| f(seg.origin, seg.grid.node(j)).0).collect(),
                    psi2: (0..n).map(|j| f(seg.origin, seg.grid.midpoint(j)).1).collect(),
                }
            })
            .collect();
        SpinorField { segments, tails }
    }

    pub fn sample_scalar(&self, mut f: impl FnMut(SegmentOrigin, f64) -> f64, tails: Vec<ScalarTail>) -> ScalarField {
        let segments = self
            .segments
            .iter()
            .map(|seg| ScalarSegment {
                origin: seg.origin,
                h: seg.h(),
                u: (0..=seg.intervals()).map(|j| f(seg.origin, seg.grid.node(j))).collect(),
            })
            .collect();
        ScalarField { segments, tails }
    }

    /// Zero spinor with no tails.
    pub fn zero_spinor(&self) -> SpinorField {
        self.sample_spinor(|_, _| (C64::new(0.0, 0.0), C64::new(0.0, 0.0)), Vec::new())
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Exterior solution on a half-line: `ψ¹(x) = A e^{-kx}`, `ψ²(x) = i r A e^{-kx}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinorTail {
    pub halfline: usize,
    pub amplitude: C64,
    pub decay: f64,
    pub ratio: f64,
}

impl SpinorTail {
    pub fn psi1(&self, x: f64) -> C64 {
        self.amplitude * (-self.decay * x).exp()
    }

    pub fn psi2(&self, x: f64) -> C64 {
        C64::new(0.0, self.ratio) * self.amplitude * (-self.decay * x).exp()
    }
}

/// Exterior scalar profile `u(x) = A e^{-kx}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarTail {
    pub halfline: usize,
    pub amplitude: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinorSegment {
    pub origin: SegmentOrigin,
    pub h: f64,
    /// `N + 1` node values.
    pub psi1: Vec<C64>,
    /// `N` midpoint values.
    pub psi2: Vec<C64>,
}

impl SpinorSegment {
    pub fn intervals(&self) -> usize {
        self.psi2.len()
    }

    /// `ψ²` reconstructed at node `j`: neighbour average inside, second-order
    /// one-sided extrapolation `(3ψ²_{1/2} − ψ²_{3/2})/2` at the ends.
    pub fn psi2_at_node(&self, j: usize) -> C64 {
        let n = self.intervals();
        if j == 0 {
            (self.psi2[0] * 3.0 - self.psi2[1]) * 0.5
        } else if j == n {
            (self.psi2[n - 1] * 3.0 - self.psi2[n - 2]) * 0.5
        } else {
            (self.psi2[j - 1] + self.psi2[j]) * 0.5
        }
    }

    /// `(ψ²)'` at node `j`: centred difference inside, second-order
    /// one-sided stencils at the ends.
    pub fn dpsi2_at_node(&self, j: usize) -> C64 {
        let n = self.intervals();
        let h = self.h;
        let f = &self.psi2;
        if j == 0 {
            (f[0] * -2.0 + f[1] * 3.0 - f[2]) / h
        } else if j == n {
            (f[n - 1] * 2.0 - f[n - 2] * 3.0 + f[n - 3]) / h
        } else {
            (f[j] - f[j - 1]) / h
        }
    }

    pub fn length(&self) -> f64 {
        self.h * self.intervals() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    pub segments: Vec<SpinorSegment>,
    pub tails: Vec<SpinorTail>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSegment {
    pub origin: SegmentOrigin,
    pub h: f64,
    pub u: Vec<f64>,
}

impl ScalarSegment {
    pub fn intervals(&self) -> usize {
        self.u.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub segments: Vec<ScalarSegment>,
    pub tails: Vec<ScalarTail>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    L2,
    /// `(∫_K |ψ|^p)^{1/p}` over the compact core.
    LpCore(f64),
    H1,
    Linf,
}

fn trapezoid(h: f64, vals: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = vals.len();
    vals.enumerate()
        .map(|(j, v)| if j == 0 || j + 1 == n { 0.5 * h * v } else { h * v })
        .sum()
}

impl SpinorField {
    /// `∫ |ψ|²` including closed-form tail integrals.
    pub fn l2_squared(&self) -> f64 {
        let mut total = 0.0;
        for s in &self.segments {
            total += trapezoid(s.h, s.psi1.iter().map(|z| z.norm_sqr()));
            total += s.h * s.psi2.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        for t in &self.tails {
            total += t.amplitude.norm_sqr() * (1.0 + t.ratio * t.ratio) / (2.0 * t.decay);
        }
        total
    }

    /// `∫ |ψ'|²`: staggered differences for `ψ¹`, node reconstruction for `ψ²`.
    pub fn derivative_l2_squared(&self) -> f64 {
        let mut total = 0.0;
        for s in &self.segments {
            let n = s.intervals();
            total += (0..n)
                .map(|j| ((s.psi1[j + 1] - s.psi1[j]) / s.h).norm_sqr() * s.h)
                .sum::<f64>();
            total += trapezoid(s.h, (0..n + 1).map(|j| s.dpsi2_at_node(j).norm_sqr()));
        }
        for t in &self.tails {
            total += t.amplitude.norm_sqr() * (1.0 + t.ratio * t.ratio) * t.decay / 2.0;
        }
        total
    }

    /// `∫_K |ψ|^p` with the half-cell product rule pairing each node value of
    /// `ψ¹` with the adjacent midpoint value of `ψ²`.
    pub fn core_lp_power(&self, p: f64) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.origin.is_core())
            .map(|s| {
                (0..s.intervals())
                    .map(|j| {
                        let w = s.psi2[j].norm_sqr();
                        0.5 * s.h
                            * ((s.psi1[j].norm_sqr() + w).powf(0.5 * p) + (s.psi1[j + 1].norm_sqr() + w).powf(0.5 * p))
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// `∫_G |ψ|^p` over segments and tails.
    pub fn lp_power(&self, p: f64) -> f64 {
        let mut total = 0.0;
        for s in &self.segments {
            for j in 0..s.intervals() {
                let w = s.psi2[j].norm_sqr();
                total += 0.5
                    * s.h
                    * ((s.psi1[j].norm_sqr() + w).powf(0.5 * p) + (s.psi1[j + 1].norm_sqr() + w).powf(0.5 * p));
            }
        }
        for t in &self.tails {
            let a = t.amplitude.norm() * (1.0 + t.ratio * t.ratio).sqrt();
            total += a.powf(p) / (p * t.decay);
        }
        total
    }

    pub fn linf(&self) -> f64 {
        let mut m1: f64 = 0.0;
        let mut m2: f64 = 0.0;
        for s in &self.segments {
            m1 = s.psi1.iter().map(|z| z.norm()).fold(m1, f64::max);
            m2 = s.psi2.iter().map(|z| z.norm()).fold(m2, f64::max);
        }
        for t in &self.tails {
            m1 = m1.max(t.amplitude.norm());
            m2 = m2.max(t.amplitude.norm() * t.ratio.abs());
        }
        m1.max(m2)
    }

    pub fn norm(&self, kind: NormKind) -> Result<f64> {
        Ok(match kind {
            NormKind::L2 => self.l2_squared().sqrt(),
            NormKind::H1 => (self.l2_squared() + self.derivative_l2_squared()).sqrt(),
            NormKind::LpCore(p) => {
                check_exponent(p)?;
                self.core_lp_power(p).powf(1.0 / p)
            }
            NormKind::Linf => self.linf(),
        })
    }

    /// First component as a scalar field (real parts) with matching tails.
    pub fn first_component_re(&self) -> ScalarField {
        ScalarField {
            segments: self
                .segments
                .iter()
                .map(|s| ScalarSegment {
                    origin: s.origin,
                    h: s.h,
                    u: s.psi1.iter().map(|z| z.re).collect(),
                })
                .collect(),
            tails: self
                .tails
                .iter()
                .map(|t| ScalarTail {
                    halfline: t.halfline,
                    amplitude: t.amplitude.re,
                    decay: t.decay,
                })
                .collect(),
        }
    }

    /// The spinor `(0, ψ²)` with the same tails' second component.
    pub fn second_component_only(&self) -> SpinorField {
        SpinorField {
            segments: self
                .segments
                .iter()
                .map(|s| SpinorSegment {
                    origin: s.origin,
                    h: s.h,
                    psi1: vec![C64::new(0.0, 0.0); s.psi1.len()],
                    psi2: s.psi2.clone(),
                })
                .collect(),
            tails: Vec::new(),
        }
    }

    /// `‖ψ²‖_{H¹}` including the tail's second component.
    pub fn second_component_h1(&self) -> f64 {
        let mut total =
            self.second_component_only().l2_squared() + self.second_component_only().derivative_l2_squared();
        for t in &self.tails {
            let a2 = t.amplitude.norm_sqr() * t.ratio * t.ratio;
            total += a2 / (2.0 * t.decay) + a2 * t.decay / 2.0;
        }
        total.sqrt()
    }

    /// Largest mismatch of `ψ¹` among the endpoints (and tail amplitudes)
    /// meeting at each vertex.
    pub fn continuity_defect(&self, mesh: &Mesh) -> f64 {
        let nv = mesh.graph().vertex_count();
        let mut values: Vec<Vec<C64>> = vec![Vec::new(); nv];
        for (seg, fs) in mesh.segments().iter().zip(&self.segments) {
            values[seg.start_vertex().0].push(fs.psi1[0]);
            if let Some(v) = seg.end_vertex() {
                values[v.0].push(*fs.psi1.last().unwrap());
            }
        }
        for t in &self.tails {
            let v = mesh.graph().halflines()[t.halfline].attach;
            values[v.0].push(t.amplitude);
        }
        values
            .iter()
            .flat_map(|vals| vals.iter().flat_map(move |a| vals.iter().map(move |b| (a - b).norm())))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.segments.iter().all(|s| {
            s.psi1
                .iter()
                .chain(&s.psi2)
                .all(|z| z.re.is_finite() && z.im.is_finite())
        }) && self
            .tails
            .iter()
            .all(|t| t.amplitude.re.is_finite() && t.amplitude.im.is_finite() && t.decay.is_finite())
    }

    /// CSV with columns `edge,x,re_psi1,im_psi1,re_psi2,im_psi2` (one row per
    /// node, `ψ²` reconstructed at nodes), followed by one
    /// `halfline,amplitude_re,amplitude_im,decay_rate,ratio` row per tail.
    pub fn to_csv(&self, g: &MetricGraph) -> String {
        let mut out = String::from("edge,x,re_psi1,im_psi1,re_psi2,im_psi2\n");
        for s in &self.segments {
            let name = origin_name(g, s.origin);
            for j in 0..=s.intervals() {
                let x = if j == s.intervals() { s.length() } else { j as f64 * s.h };
                let a = s.psi1[j];
                let b = s.psi2_at_node(j);
                let _ = writeln!(
                    out,
                    "{name},{},{},{},{},{}",
                    fmt17(x),
                    fmt17(a.re),
                    fmt17(a.im),
                    fmt17(b.re),
                    fmt17(b.im)
                );
            }
        }
        if !self.tails.is_empty() {
            out.push_str("# halfline,amplitude_re,amplitude_im,decay_rate,ratio\n");
            for t in &self.tails {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    g.halflines()[t.halfline].name,
                    fmt17(t.amplitude.re),
                    fmt17(t.amplitude.im),
                    fmt17(t.decay),
                    fmt17(t.ratio)
                );
            }
        }
        out
    }
}

impl ScalarField {
    pub fn l2_squared(&self) -> f64 {
        let mut total: f64 = self
            .segments
            .iter()
            .map(|s| trapezoid(s.h, s.u.iter().map(|v| v * v)))
            .sum();
        for t in &self.tails {
            total += t.amplitude * t.amplitude / (2.0 * t.decay);
        }
        total
    }

    pub fn derivative_l2_squared(&self) -> f64 {
        let mut total: f64 = self
            .segments
            .iter()
            .map(|s| s.u.windows(2).map(|w| (w[1] - w[0]).powi(2) / s.h).sum::<f64>())
            .sum();
        for t in &self.tails {
            total += t.amplitude * t.amplitude * t.decay / 2.0;
        }
        total
    }

    pub fn core_lp_power(&self, p: f64) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.origin.is_core())
            .map(|s| trapezoid(s.h, s.u.iter().map(|v| v.abs().powf(p))))
            .sum()
    }

    pub fn lp_power(&self, p: f64) -> f64 {
        let mut total: f64 = self
            .segments
            .iter()
            .map(|s| trapezoid(s.h, s.u.iter().map(|v| v.abs().powf(p))))
            .sum();
        for t in &self.tails {
            total += t.amplitude.abs().powf(p) / (p * t.decay);
        }
        total
    }

    pub fn linf(&self) -> f64 {
        let m = self
            .segments
            .iter()
            .flat_map(|s| s.u.iter().map(|v| v.abs()))
            .fold(0.0, f64::max);
        self.tails.iter().map(|t| t.amplitude.abs()).fold(m, f64::max)
    }

    pub fn norm(&self, kind: NormKind) -> Result<f64> {
        Ok(match kind {
            NormKind::L2 => self.l2_squared().sqrt(),
            NormKind::H1 => (self.l2_squared() + self.derivative_l2_squared()).sqrt(),
            NormKind::LpCore(p) => {
                check_exponent(p)?;
                self.core_lp_power(p).powf(1.0 / p)
            }
            NormKind::Linf => self.linf(),
        })
    }

    /// Rejects complex data; the scalar problems are posed for real profiles.
    pub fn from_complex_segments(
        origin_h: &[(SegmentOrigin, f64)],
        values: &[Vec<C64>],
        tails: Vec<ScalarTail>,
    ) -> Result<Self> {
        let mut segments = Vec::with_capacity(values.len());
        for ((origin, h), vals) in origin_h.iter().zip(values) {
            if let Some(z) = vals.iter().find(|z| z.im != 0.0) {
                return Err(Error::Precondition(format!(
                    "scalar fields must be real, found imaginary part {}",
                    z.im
                )));
            }
            segments.push(ScalarSegment {
                origin: *origin,
                h: *h,
                u: vals.iter().map(|z| z.re).collect(),
            });
        }
        Ok(ScalarField { segments, tails })
    }

    /// `‖self − other‖²_{H¹}` with tail contributions in closed form.
    pub fn h1_distance(&self, other: &ScalarField) -> f64 {
        let mut total = 0.0;
        for (a, b) in self.segments.iter().zip(&other.segments) {
            let d: Vec<f64> = a.u.iter().zip(&b.u).map(|(x, y)| x - y).collect();
            total += trapezoid(a.h, d.iter().map(|v| v * v));
            total += d.windows(2).map(|w| (w[1] - w[0]).powi(2) / a.h).sum::<f64>();
        }
        for ta in &self.tails {
            if let Some(tb) = other.tails.iter().find(|t| t.halfline == ta.halfline) {
                let (a, k) = (ta.amplitude, ta.decay);
                let (b, q) = (tb.amplitude, tb.decay);
                let l2 = a * a / (2.0 * k) - 2.0 * a * b / (k + q) + b * b / (2.0 * q);
                let d2 = a * a * k / 2.0 - 2.0 * a * b * k * q / (k + q) + b * b * q / 2.0;
                total += l2 + d2;
            } else {
                total += ta.amplitude.powi(2) * (1.0 / (2.0 * ta.decay) + ta.decay / 2.0);
            }
        }
        total.max(0.0).sqrt()
    }

    pub fn to_csv(&self, g: &MetricGraph) -> String {
        let mut out = String::from("edge,x,u\n");
        for s in &self.segments {
            let name = origin_name(g, s.origin);
            let n = s.intervals();
            for (j, u) in s.u.iter().enumerate() {
                let x = if j == n { s.h * n as f64 } else { j as f64 * s.h };
                let _ = writeln!(out, "{name},{},{}", fmt17(x), fmt17(*u));
            }
        }
        if !self.tails.is_empty() {
            out.push_str("# halfline,amplitude,decay_rate\n");
            for t in &self.tails {
                let _ = writeln!(
                    out,
                    "{},{},{}",
                    g.halflines()[t.halfline].name,
                    fmt17(t.amplitude),
                    fmt17(t.decay)
                );
            }
        }
        out
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p >= 2.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("Lp norm needs p >= 2, got {p}")))
    }
}

pub(crate) fn origin_name(g: &MetricGraph, o: SegmentOrigin) -> &str {
    match o {
        SegmentOrigin::Bounded(i) => &g.bounded_edges()[i].name,
        SegmentOrigin::Halfline(i) => &g.halflines()[i].name,
    }
}

/// Round-trip float formatting (17 significant digits).
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Left- and right-hand sides of the Gagliardo–Nirenberg type bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnCheck {
    /// `(‖ψ‖_p^p, ‖ψ‖₂^{p/2+1} ‖ψ'‖₂^{p/2−1})`
    pub lp: (f64, f64),
    /// `(‖ψ‖_∞, ‖ψ‖₂^{1/2} ‖ψ'‖₂^{1/2})`
    pub linf: (f64, f64),
    /// `(‖ψ‖_∞², 2‖ψ‖₂‖ψ'‖₂ + ‖ψ‖₂²/ℓ_min)`, which holds with constant 1.
    pub embedding: (f64, f64),
}

fn gn_from(lp: f64, l2: f64, d: f64, linf: f64, p: f64, l_min: f64) -> GnCheck {
    let emb_rhs = 2.0 * l2 * d + if l_min.is_finite() { l2 * l2 / l_min } else { 0.0 };
    GnCheck {
        lp: (lp, l2.powf(0.5 * p + 1.0) * d.powf(0.5 * p - 1.0)),
        linf: (linf, (l2 * d).sqrt()),
        embedding: (linf * linf, emb_rhs),
    }
}

pub fn gn_check_spinor(f: &SpinorField, p: f64) -> Result<GnCheck> {
    check_exponent(p)?;
    let l_min = f.segments.iter().map(|s| s.length()).fold(f64::INFINITY, f64::min);
    Ok(gn_from(
        f.lp_power(p),
        f.l2_squared().sqrt(),
        f.derivative_l2_squared().sqrt(),
        f.linf(),
        p,
        l_min,
    ))
}

pub fn gn_check_scalar(f: &ScalarField, p: f64) -> Result<GnCheck> {
    check_exponent(p)?;
    let l_min = f
        .segments
        .iter()
        .map(|s| s.h * s.intervals() as f64)
        .fold(f64::INFINITY, f64::min);
    Ok(gn_from(
        f.lp_power(p),
        f.l2_squared().sqrt(),
        f.derivative_l2_squared().sqrt(),
        f.linf(),
        p,
        l_min,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_graph;
    use std::f64::consts::PI;

    fn segment(len: f64) -> MetricGraph {
        parse_graph(&format!("vertex a\nvertex b\nedge e a b {len}\n")).unwrap()
    }

    #[test]
    fn grid_sizes() {
        let g = EdgeGrid::new(0, 2.0, 0.5);
        assert_eq!((g.intervals, g.h), (4, 0.5));
        let g = EdgeGrid::new(0, 1.0, 10.0);
        assert_eq!((g.intervals, g.h), (4, 0.25));
        let g = EdgeGrid::new(0, PI, 0.01);
        assert_eq!(g.intervals, 315);
        assert!((g.h - PI / 315.0).abs() < 1e-16);
        assert!(make_grids(&segment(1.0), 0.0).is_err());
    }

    #[test]
    fn segment_layout_counts() {
        let mesh = Mesh::new(&segment(1.0), 0.25, HalflineTreatment::Closure, &[]).unwrap();
        // 3 interior ψ¹ + 2 vertex ψ¹ + 4 midpoint ψ²
        assert_eq!(mesh.spinor_len(), 9);
        assert_eq!(mesh.scalar_len(), 5);
        let w = mesh.spinor_weights();
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_field_has_zero_norms() {
        let g = parse_graph("vertex a\nvertex b\nedge e a b 2\nhalfline h a\n").unwrap();
        let mesh = Mesh::closure(&g, 0.1).unwrap();
        let f = mesh.zero_spinor();
        for kind in [NormKind::L2, NormKind::H1, NormKind::Linf, NormKind::LpCore(4.0)] {
            assert_eq!(f.norm(kind).unwrap(), 0.0);
        }
        let s = mesh.sample_scalar(|_, _| 0.0, Vec::new());
        assert_eq!(s.norm(NormKind::H1).unwrap(), 0.0);
    }

    #[test]
    fn constant_scalar_norms() {
        let mesh = Mesh::new(&segment(2.0), 0.1, HalflineTreatment::Closure, &[]).unwrap();
        let u = mesh.sample_scalar(|_, _| 1.0, Vec::new());
        assert!((u.norm(NormKind::L2).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(u.norm(NormKind::Linf).unwrap(), 1.0);
    }

    #[test]
    fn sine_l2_converges_at_second_order() {
        // sin²(πx)-type integrands have vanishing end derivatives and
        // converge at fourth order; e^x exposes the generic h² term.
        let exact = (1f64.exp().powi(2) - 1.0) / 2.0;
        let err = |n: usize| {
            let mesh = Mesh::new(&segment(1.0), 1.0 / n as f64, HalflineTreatment::Closure, &[]).unwrap();
            let u = mesh.sample_scalar(|_, x| x.exp(), Vec::new());
            (u.l2_squared() - exact).abs()
        };
        let (e1, e2, e3) = (err(50), err(100), err(200));
        let r1 = (e1 / e2).log2();
        let r2 = (e2 / e3).log2();
        assert!((r1 - 2.0).abs() < 0.05 && (r2 - 2.0).abs() < 0.05, "{r1} {r2}");
        // and the plain sine reproduces 1/2
        let mesh = Mesh::new(&segment(1.0), 0.01, HalflineTreatment::Closure, &[]).unwrap();
        let u = mesh.sample_scalar(|_, x| (PI * x).sin(), Vec::new());
        assert!((u.norm(NormKind::L2).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn l2_is_additive_over_segments_and_tails() {
        let g = parse_graph("vertex a\nvertex b\nedge e a b 2\nedge f a b 1\nhalfline h a\n").unwrap();
        let mesh = Mesh::closure(&g, 0.05).unwrap();
        let tail = SpinorTail {
            halfline: 0,
            amplitude: C64::new(0.3, -0.1),
            decay: 0.7,
            ratio: 0.4,
        };
        let f = mesh.sample_spinor(|_, x| (C64::new(x.cos(), 0.0), C64::new(0.0, x.sin())), vec![tail]);
        let parts: f64 = f
            .segments
            .iter()
            .map(|s| {
                SpinorField {
                    segments: vec![s.clone()],
                    tails: vec![],
                }
                .l2_squared()
            })
            .sum::<f64>()
            + SpinorField {
                segments: vec![],
                tails: vec![tail],
            }
            .l2_squared();
        assert!((f.l2_squared() - parts).abs() < 1e-14);
    }

    #[test]
    fn gagliardo_nirenberg_sine() {
        let mesh = Mesh::new(&segment(1.0), 0.001, HalflineTreatment::Closure, &[]).unwrap();
        let u = mesh.sample_scalar(|_, x| (PI * x).sin(), Vec::new());
        let gn = gn_check_scalar(&u, 4.0).unwrap();
        assert!((gn.lp.0 - 0.375).abs() < 1e-6);
        assert!((gn.lp.1 - PI / 4.0).abs() < 1e-5);
        assert!(gn.lp.0 <= gn.lp.1);
        assert!(gn.embedding.0 <= gn.embedding.1);
        let zero = mesh.sample_scalar(|_, _| 0.0, Vec::new());
        let gz = gn_check_scalar(&zero, 4.0).unwrap();
        assert_eq!((gz.lp.0, gz.lp.1), (0.0, 0.0));
    }

    #[test]
    fn linear_ramp_refutes_the_factor_one_embedding() {
        // u(x) = x on [0,1]: ‖u‖∞² = 1 but ‖u‖‖u'‖ + ‖u‖² = 1/√3 + 1/3 < 1;
        // the factor-two bound holds.
        let mesh = Mesh::new(&segment(1.0), 0.001, HalflineTreatment::Closure, &[]).unwrap();
        let u = mesh.sample_scalar(|_, x| x, Vec::new());
        let l2 = u.l2_squared().sqrt();
        let d = u.derivative_l2_squared().sqrt();
        assert!(1.0 > l2 * d + l2 * l2);
        let gn = gn_check_scalar(&u, 4.0).unwrap();
        assert!(gn.embedding.0 <= gn.embedding.1);
    }

    #[test]
    fn continuity_defect_detects_mismatch() {
        let g = parse_graph("vertex a\nvertex b\nedge e a b 1\nedge f b a 1\n").unwrap();
        let mesh = Mesh::closure(&g, 0.25).unwrap();
        let v: Vec<C64> = (0..mesh.spinor_len()).map(|i| C64::new(i as f64, 0.0)).collect();
        let mut f = mesh.spinor_from_vec(&v, vec![]).unwrap();
        assert_eq!(f.continuity_defect(&mesh), 0.0);
        f.segments[1].psi1[0] += C64::new(0.5, 0.0);
        assert!((f.continuity_defect(&mesh) - 0.5).abs() < 1e-15);
        assert_eq!(
            mesh.spinor_to_vec(&mesh.spinor_from_vec(&v, vec![]).unwrap()).unwrap(),
            v
        );
    }

    #[test]
    fn csv_shapes() {
        let g = parse_graph("vertex a\nvertex b\nedge e a b 1\nhalfline h a\n").unwrap();
        let mesh = Mesh::closure(&g, 0.25).unwrap();
        let tail = SpinorTail {
            halfline: 0,
            amplitude: C64::new(1.0, 0.0),
            decay: 1.0,
            ratio: 1.0,
        };
        let f = mesh.sample_spinor(|_, _| (C64::new(1.0, 0.0), C64::new(0.0, 0.0)), vec![tail]);
        let csv = f.to_csv(&g);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "edge,x,re_psi1,im_psi1,re_psi2,im_psi2");
        assert_eq!(lines.len(), 1 + 5 + 1 + 1);
        assert!(lines[6].starts_with("# halfline,"));
        assert!(lines[7].starts_with("h,"));
    }

    #[test]
    fn complex_scalar_input_is_rejected() {
        let r = ScalarField::from_complex_segments(
            &[(SegmentOrigin::Bounded(0), 0.5)],
            &[vec![C64::new(1.0, 0.0), C64::new(1.0, 1e-3), C64::new(0.0, 0.0)]],
            vec![],
        );
        assert!(r.is_err());
    }
}
