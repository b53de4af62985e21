//! DOT, GraphML and canonical text renderings of a [`CrownGraph`].
//!
//! The canonical form lists nodes and edges in sorted order, one per line:
//!
//! ```text
//! logcompass-compass 1
//! node a MAX MAX UNSTABLE
//! ...
//! edge a e 1
//! ```
//!
//! Weights use the shortest decimal form that reads back to the same `f64`,
//! so an export parses back to an equal graph and re-exports byte for byte.

use std::fmt::Write as _;
use std::str::FromStr;

use super::{CrownGraph, GraphError};
use crate::taxonomy::NodeType;

const CANONICAL_HEADER: &str = "logcompass-compass 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    GraphMl,
    Canonical,
}

impl GraphFormat {
    pub fn extension(self) -> &'static str {
        match self {
            GraphFormat::Dot => "dot",
            GraphFormat::GraphMl => "graphml",
            GraphFormat::Canonical => "txt",
        }
    }

    pub fn render(self, g: &CrownGraph) -> String {
        match self {
            GraphFormat::Dot => to_dot(g),
            GraphFormat::GraphMl => to_graphml(g),
            GraphFormat::Canonical => to_canonical(g),
        }
    }
}

impl FromStr for GraphFormat {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(GraphFormat::Dot),
            "graphml" => Ok(GraphFormat::GraphMl),
            "canonical" => Ok(GraphFormat::Canonical),
            other => Err(GraphError::UnknownFormat(other.to_string())),
        }
    }
}

fn triplet_words(n: NodeType) -> String {
    let t = n.triplet();
    format!("{} {} {}", t.n_tend, t.k_tend, t.stab)
}

pub fn to_dot(g: &CrownGraph) -> String {
    let mut out = String::from("graph compass {\n");
    for n in g.nodes() {
        let t = n.triplet();
        let _ = writeln!(out, "  {n} [label=\"{n} ({},{},{})\"];", t.n_tend, t.k_tend, t.stab);
    }
    for (u, v, w) in g.edges() {
        let _ = writeln!(out, "  {u} -- {v} [label=\"{w}\", weight={w}];");
    }
    out.push_str("}\n");
    out
}

pub fn to_graphml(g: &CrownGraph) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(concat!(
        "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\"\n",
        "    xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\"\n",
        "    xsi:schemaLocation=\"http://graphml.graphdrawing.org/xmlns ",
        "http://graphml.graphdrawing.org/xmlns/1.0/graphml.xsd\">\n",
    ));
    out.push_str("  <key id=\"label\" for=\"node\" attr.name=\"label\" attr.type=\"string\"/>\n");
    out.push_str("  <key id=\"triplet\" for=\"node\" attr.name=\"triplet\" attr.type=\"string\"/>\n");
    out.push_str("  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"double\"/>\n");
    out.push_str("  <graph id=\"compass\" edgedefault=\"undirected\">\n");
    for n in g.nodes() {
        let _ = writeln!(
            out,
            "    <node id=\"{n}\"><data key=\"label\">{n}</data><data key=\"triplet\">{}</data></node>",
            triplet_words(n)
        );
    }
    for (i, (u, v, w)) in g.edges().enumerate() {
        let _ = writeln!(
            out,
            "    <edge id=\"e{i}\" source=\"{u}\" target=\"{v}\"><data key=\"weight\">{w}</data></edge>"
        );
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

pub fn to_canonical(g: &CrownGraph) -> String {
    let mut out = String::new();
    out.push_str(CANONICAL_HEADER);
    out.push('\n');
    for n in g.nodes() {
        let _ = writeln!(out, "node {n} {}", triplet_words(n));
    }
    for (u, v, w) in g.edges() {
        let _ = writeln!(out, "edge {u} {v} {w}");
    }
    out
}

pub fn from_canonical(text: &str) -> Result<CrownGraph, GraphError> {
    let err = |line: usize, reason: String| GraphError::Parse { line, reason };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, CANONICAL_HEADER)) => {}
        _ => return Err(err(1, format!("expected header `{CANONICAL_HEADER}`"))),
    }
    let mut seen_nodes = Vec::new();
    let mut edges = Vec::new();
    for (no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        let node = |s: &str| NodeType::from_str(s).map_err(|e| err(no, e.to_string()));
        match fields.as_slice() {
            ["node", label, rest @ ..] => {
                let n = node(label)?;
                if rest.join(" ") != triplet_words(n) {
                    return Err(err(no, format!("node {n} carries a foreign triplet")));
                }
                seen_nodes.push(n);
            }
            ["edge", u, v, w] => {
                let w: f64 = w.parse().map_err(|_| err(no, format!("bad weight `{w}`")))?;
                edges.push((node(u)?, node(v)?, w));
            }
            _ => return Err(err(no, format!("unrecognized line `{line}`"))),
        }
    }
    if seen_nodes != NodeType::ALL {
        return Err(err(0, "node list must be a..f in order".into()));
    }
    CrownGraph::from_edges(edges)
}
