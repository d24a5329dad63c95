//! Noncompact metric graphs with finitely many edges.
//!
//! A graph is a connected multigraph whose bounded edges are intervals
//! `[0, ℓ_e]` and whose half-lines are copies of `[0, ∞)`. A bounded edge has
//! coordinate `x_e = 0` at its `from` vertex and `x_e = ℓ_e` at its `to`
//! vertex; a half-line has `x_e = 0` at its attachment vertex.
//!
//! The trace sign of an incidence is `+1` where `x_e = 0` meets the vertex
//! and `-1` where `x_e = ℓ_e` meets it. Every signed sum in the vertex
//! conditions goes through [`TraceSign`], which makes all downstream results
//! independent of the orientation chosen in the input file.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, ParseErrorKind, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct BoundedEdge {
    pub name: String,
    pub from: VertexId,
    pub to: VertexId,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Halfline {
    pub name: String,
    pub attach: VertexId,
}

/// Reference to either kind of edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeRef {
    Bounded(usize),
    Halfline(usize),
}

/// Which end of an edge meets a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    /// `x_e = 0`
    Start,
    /// `x_e = ℓ_e` (bounded edges only)
    End,
}

/// Sign attached to an edge endpoint in the vertex sum laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceSign {
    Plus,
    Minus,
}

impl TraceSign {
    pub fn of(endpoint: Endpoint) -> Self {
        match endpoint {
            Endpoint::Start => TraceSign::Plus,
            Endpoint::End => TraceSign::Minus,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            TraceSign::Plus => 1.0,
            TraceSign::Minus => -1.0,
        }
    }
}

/// One entry of a vertex star.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incidence {
    pub edge: EdgeRef,
    pub endpoint: Endpoint,
    pub sign: TraceSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricGraph {
    vertices: Vec<String>,
    bounded: Vec<BoundedEdge>,
    halflines: Vec<Halfline>,
}

/// The sub-multigraph of all bounded edges.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactCore {
    pub edges: Vec<usize>,
    pub length: f64,
}

impl CompactCore {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

impl MetricGraph {
    /// Builds and validates a graph from already-resolved parts.
    pub fn new(vertices: Vec<String>, bounded: Vec<BoundedEdge>, halflines: Vec<Halfline>) -> Result<Self> {
        let g = MetricGraph {
            vertices,
            bounded,
            halflines,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        let mut seen = HashMap::new();
        for v in &self.vertices {
            if seen.insert(v.as_str(), ()).is_some() {
                return Err(Error::Graph(format!("duplicate vertex `{v}`")));
            }
        }
        let mut seen = HashMap::new();
        for name in self
            .bounded
            .iter()
            .map(|e| &e.name)
            .chain(self.halflines.iter().map(|h| &h.name))
        {
            if seen.insert(name.as_str(), ()).is_some() {
                return Err(Error::Graph(format!("duplicate edge `{name}`")));
            }
        }
        for e in &self.bounded {
            if e.from.0 >= nv || e.to.0 >= nv {
                return Err(Error::Graph(format!("edge `{}` references a missing vertex", e.name)));
            }
            if !(e.length.is_finite() && e.length > 0.0) {
                return Err(Error::Graph(format!(
                    "edge `{}` has invalid length {}",
                    e.name, e.length
                )));
            }
        }
        for h in &self.halflines {
            if h.attach.0 >= nv {
                return Err(Error::Graph(format!(
                    "half-line `{}` references a missing vertex",
                    h.name
                )));
            }
        }
        if let Some(v) = self.first_unreachable_vertex() {
            return Err(Error::Graph(format!(
                "disconnected: vertex `{}` is unreachable",
                self.vertices[v]
            )));
        }
        Ok(())
    }

    /// Index of the first vertex not reachable from vertex 0, if any.
    fn first_unreachable_vertex(&self) -> Option<usize> {
        let n = self.vertices.len();
        if n == 0 {
            return None;
        }
        let mut adj = vec![Vec::new(); n];
        for e in &self.bounded {
            adj[e.from.0].push(e.to.0);
            adj[e.to.0].push(e.from.0);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.iter().position(|s| !s)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex_name(&self, v: VertexId) -> &str {
        &self.vertices[v.0]
    }

    pub fn vertex_id(&self, name: &str) -> Result<VertexId> {
        self.vertices
            .iter()
            .position(|v| v == name)
            .map(VertexId)
            .ok_or_else(|| Error::UnknownVertex(name.to_string()))
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> {
        (0..self.vertices.len()).map(VertexId)
    }

    pub fn bounded_edges(&self) -> &[BoundedEdge] {
        &self.bounded
    }

    pub fn halflines(&self) -> &[Halfline] {
        &self.halflines
    }

    pub fn edge_name(&self, e: EdgeRef) -> &str {
        match e {
            EdgeRef::Bounded(i) => &self.bounded[i].name,
            EdgeRef::Halfline(i) => &self.halflines[i].name,
        }
    }

    pub fn is_compact(&self) -> bool {
        self.halflines.is_empty()
    }

    pub fn compact_core(&self) -> CompactCore {
        CompactCore {
            edges: (0..self.bounded.len()).collect(),
            length: self.bounded.iter().map(|e| e.length).sum(),
        }
    }

    /// Shortest bounded edge, if the core is nonempty.
    pub fn min_edge_length(&self) -> Option<f64> {
        self.bounded.iter().map(|e| e.length).reduce(f64::min)
    }

    /// All incidences at `v`, bounded edges first (in file order), then
    /// half-lines. A self-loop contributes its start and its end separately.
    pub fn vertex_star(&self, v: VertexId) -> Result<Vec<Incidence>> {
        if v.0 >= self.vertices.len() {
            return Err(Error::UnknownVertex(format!("#{}", v.0)));
        }
        let mut star = Vec::new();
        for (i, e) in self.bounded.iter().enumerate() {
            if e.from == v {
                star.push(Incidence {
                    edge: EdgeRef::Bounded(i),
                    endpoint: Endpoint::Start,
                    sign: TraceSign::Plus,
                });
            }
            if e.to == v {
                star.push(Incidence {
                    edge: EdgeRef::Bounded(i),
                    endpoint: Endpoint::End,
                    sign: TraceSign::Minus,
                });
            }
        }
        for (i, h) in self.halflines.iter().enumerate() {
            if h.attach == v {
                star.push(Incidence {
                    edge: EdgeRef::Halfline(i),
                    endpoint: Endpoint::Start,
                    sign: TraceSign::Plus,
                });
            }
        }
        Ok(star)
    }

    pub fn vertex_star_by_name(&self, name: &str) -> Result<Vec<Incidence>> {
        self.vertex_star(self.vertex_id(name)?)
    }

    /// Degree of `v` counting self-loops twice.
    pub fn degree(&self, v: VertexId) -> usize {
        self.vertex_star(v).map(|s| s.len()).unwrap_or(0)
    }

    /// Same graph with the listed bounded edges reversed.
    pub fn with_flipped(&self, edges: &[usize]) -> MetricGraph {
        let mut g = self.clone();
        for &i in edges {
            let e = &mut g.bounded[i];
            std::mem::swap(&mut e.from, &mut e.to);
        }
        g
    }

    /// Canonical text form; `parse_graph(&g.to_text())` reproduces `g`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "vertex {v}");
        }
        for e in &self.bounded {
            let _ = writeln!(
                out,
                "edge {} {} {} {}",
                e.name, self.vertices[e.from.0], self.vertices[e.to.0], e.length
            );
        }
        for h in &self.halflines {
            let _ = writeln!(out, "halfline {} {}", h.name, self.vertices[h.attach.0]);
        }
        out
    }
}

fn perr(line: usize, kind: ParseErrorKind, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        kind,
        message: message.into(),
    }
}

/// Parses the line-oriented graph format:
///
/// ```text
/// # comment
/// vertex <name>
/// edge <name> <v_from> <v_to> <length>
/// halfline <name> <v_attach>
/// ```
pub fn parse_graph(text: &str) -> Result<MetricGraph> {
    let mut vertices: Vec<String> = Vec::new();
    let mut vertex_line: Vec<usize> = Vec::new();
    let mut vertex_index: HashMap<String, usize> = HashMap::new();
    let mut edge_names: HashMap<String, usize> = HashMap::new();
    let mut bounded = Vec::new();
    let mut halflines = Vec::new();

    let lookup = |index: &HashMap<String, usize>, name: &str, line: usize| {
        index
            .get(name)
            .copied()
            .map(VertexId)
            .ok_or_else(|| perr(line, ParseErrorKind::UnknownVertex, format!("unknown vertex `{name}`")))
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tok: Vec<&str> = content.split_whitespace().collect();
        match tok[0] {
            "vertex" => {
                if tok.len() != 2 {
                    return Err(perr(line, ParseErrorKind::Syntax, "expected `vertex <name>`"));
                }
                let name = tok[1].to_string();
                if let Some(prev) = vertex_index.get(&name) {
                    return Err(perr(
                        line,
                        ParseErrorKind::DuplicateName,
                        format!("vertex `{name}` already declared on line {}", vertex_line[*prev]),
                    ));
                }
                vertex_index.insert(name.clone(), vertices.len());
                vertices.push(name);
                vertex_line.push(line);
            }
            "edge" => {
                if tok.len() != 5 {
                    return Err(perr(
                        line,
                        ParseErrorKind::Syntax,
                        "expected `edge <name> <v_from> <v_to> <length>`",
                    ));
                }
                let name = tok[1].to_string();
                if let Some(prev) = edge_names.get(&name) {
                    return Err(perr(
                        line,
                        ParseErrorKind::DuplicateName,
                        format!("edge `{name}` already declared on line {prev}"),
                    ));
                }
                let from = lookup(&vertex_index, tok[2], line)?;
                let to = lookup(&vertex_index, tok[3], line)?;
                let length: f64 = tok[4]
                    .parse()
                    .map_err(|_| perr(line, ParseErrorKind::Syntax, format!("`{}` is not a number", tok[4])))?;
                if !(length.is_finite() && length > 0.0) {
                    return Err(perr(
                        line,
                        ParseErrorKind::InvalidLength,
                        format!("edge `{name}` length must be positive and finite, got {}", tok[4]),
                    ));
                }
                edge_names.insert(name.clone(), line);
                bounded.push(BoundedEdge { name, from, to, length });
            }
            "halfline" => {
                if tok.len() != 3 {
                    return Err(perr(
                        line,
                        ParseErrorKind::Syntax,
                        "expected `halfline <name> <v_attach>`",
                    ));
                }
                let name = tok[1].to_string();
                if let Some(prev) = edge_names.get(&name) {
                    return Err(perr(
                        line,
                        ParseErrorKind::DuplicateName,
                        format!("edge `{name}` already declared on line {prev}"),
                    ));
                }
                let attach = lookup(&vertex_index, tok[2], line)?;
                edge_names.insert(name.clone(), line);
                halflines.push(Halfline { name, attach });
            }
            other => {
                return Err(perr(
                    line,
                    ParseErrorKind::Syntax,
                    format!("unknown directive `{other}`"),
                ));
            }
        }
    }

    let g = MetricGraph {
        vertices,
        bounded,
        halflines,
    };
    if let Some(v) = g.first_unreachable_vertex() {
        return Err(perr(
            vertex_line[v],
            ParseErrorKind::Disconnected,
            format!("vertex `{}` is not connected to `{}`", g.vertices[v], g.vertices[0]),
        ));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_STAR: &str = "vertex a\nvertex b\nedge e a b 2.0\nhalfline h1 a\nhalfline h2 a\n";
    const TADPOLE: &str = "vertex a\nedge loop a a 6.283185307179586\nhalfline h a\n";

    fn kind_of(r: Result<MetricGraph>) -> (usize, ParseErrorKind) {
        match r {
            Err(Error::Parse { line, kind, .. }) => (line, kind),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn three_star_parses() {
        let g = parse_graph(THREE_STAR).unwrap();
        assert_eq!(g.vertex_count(), 2);
        assert_eq!(g.bounded_edges().len(), 1);
        assert_eq!(g.halflines().len(), 2);
        assert_eq!(g.bounded_edges()[0].length, 2.0);
        let core = g.compact_core();
        assert_eq!(core.edges, vec![0]);
        assert_eq!(core.length, 2.0);
    }

    #[test]
    fn compact_segment_is_a_valid_graph() {
        let g = parse_graph("vertex a\nvertex b\nedge e a b 1.0").unwrap();
        assert!(g.is_compact());
        assert_eq!(g.compact_core().length, 1.0);
    }

    #[test]
    fn infinite_star_has_empty_core() {
        let g = parse_graph("vertex o\nhalfline h1 o\nhalfline h2 o\nhalfline h3 o\n").unwrap();
        let core = g.compact_core();
        assert!(core.is_empty());
        assert_eq!(core.length, 0.0);
    }

    #[test]
    fn tadpole_core_is_the_loop() {
        let g = parse_graph(TADPOLE).unwrap();
        let core = g.compact_core();
        assert_eq!(core.edges, vec![0]);
        assert!((core.length - 2.0 * std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_are_distinct_and_positioned() {
        assert_eq!(
            kind_of(parse_graph("vertex a\nedge e a b 1.0")),
            (2, ParseErrorKind::UnknownVertex)
        );
        assert_eq!(
            kind_of(parse_graph("vertex a\nvertex a")),
            (2, ParseErrorKind::DuplicateName)
        );
        assert_eq!(
            kind_of(parse_graph("vertex a\nvertex b\nedge e a b 1\nedge e b a 2")),
            (4, ParseErrorKind::DuplicateName)
        );
        assert_eq!(
            kind_of(parse_graph("vertex a\nvertex b\nedge e a b -1.0")),
            (3, ParseErrorKind::InvalidLength)
        );
        assert_eq!(
            kind_of(parse_graph("vertex a\nvertex b\nedge e a b 0")),
            (3, ParseErrorKind::InvalidLength)
        );
        assert_eq!(
            kind_of(parse_graph("vertex a\nvertex b\nvertex c\nedge e a b 1.0")),
            (3, ParseErrorKind::Disconnected)
        );
        assert_eq!(kind_of(parse_graph("node a")), (1, ParseErrorKind::Syntax));
        assert_eq!(
            kind_of(parse_graph("vertex a\nvertex b\nedge e a b inf")),
            (3, ParseErrorKind::InvalidLength)
        );
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let g = parse_graph("# a segment\n\nvertex a  # left\nvertex b\nedge e a b 1.5 # body\n").unwrap();
        assert_eq!(g.bounded_edges()[0].length, 1.5);
    }

    #[test]
    fn star_of_three_star() {
        let g = parse_graph(THREE_STAR).unwrap();
        let a = g.vertex_star_by_name("a").unwrap();
        assert_eq!(
            a,
            vec![
                Incidence {
                    edge: EdgeRef::Bounded(0),
                    endpoint: Endpoint::Start,
                    sign: TraceSign::Plus
                },
                Incidence {
                    edge: EdgeRef::Halfline(0),
                    endpoint: Endpoint::Start,
                    sign: TraceSign::Plus
                },
                Incidence {
                    edge: EdgeRef::Halfline(1),
                    endpoint: Endpoint::Start,
                    sign: TraceSign::Plus
                },
            ]
        );
        let b = g.vertex_star_by_name("b").unwrap();
        assert_eq!(
            b,
            vec![Incidence {
                edge: EdgeRef::Bounded(0),
                endpoint: Endpoint::End,
                sign: TraceSign::Minus
            }]
        );
        assert!(matches!(g.vertex_star_by_name("z"), Err(Error::UnknownVertex(_))));
    }

    #[test]
    fn self_loop_contributes_two_incidences() {
        let g = parse_graph(TADPOLE).unwrap();
        let star = g.vertex_star(VertexId(0)).unwrap();
        let signs: Vec<f64> = star.iter().map(|i| i.sign.value()).collect();
        assert_eq!(signs, vec![1.0, -1.0, 1.0]);
        assert_eq!(star[0].edge, star[1].edge);
        assert_eq!(g.degree(VertexId(0)), 3);
    }

    #[test]
    fn canonical_text_round_trips() {
        for src in [THREE_STAR, TADPOLE, "vertex a\nvertex b\nedge e a b 0.1\n"] {
            let g = parse_graph(src).unwrap();
            let again = parse_graph(&g.to_text()).unwrap();
            assert_eq!(g, again);
            assert_eq!(g.to_text(), again.to_text());
        }
    }
}
