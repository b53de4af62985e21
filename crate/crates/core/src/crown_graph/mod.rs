//! The six-node compass graph and its analytics.
//!
//! Two node types are adjacent when their triplets differ in exactly one
//! coordinate. Over the six admissible triplets this yields the 6-cycle
//! `a–e–c–d–b–f–a`: every node has degree 2, the graph is bipartite and its
//! diameter is 3.

mod export;
mod hierarchy;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::taxonomy::NodeType;

pub use export::{from_canonical, to_canonical, to_dot, to_graphml, GraphFormat};
pub use hierarchy::{FlatGraph, HierarchicalGraph, HierarchyError};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("edge {0}–{1} has non-positive weight {2}")]
    NonPositiveWeight(NodeType, NodeType, f64),
    #[error("{0}–{1} is not an edge of the graph")]
    NoSuchEdge(NodeType, NodeType),
    #[error("self-loop on {0}")]
    SelfLoop(NodeType),
    #[error("graph is not connected")]
    Disconnected,
    #[error("degenerate values: zero variance over edge endpoints")]
    DegenerateValues,
    #[error("no value given for node {0}")]
    MissingValue(NodeType),
    #[error("unknown graph format `{0}` (expected dot, graphml or canonical)")]
    UnknownFormat(String),
    #[error("canonical graph, line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Unordered node pair stored with the smaller label first.
pub type Edge = (NodeType, NodeType);

pub fn edge(u: NodeType, v: NodeType) -> Edge {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

fn hamming(u: NodeType, v: NodeType) -> usize {
    let (a, b) = (u.triplet(), v.triplet());
    usize::from(a.n_tend != b.n_tend) + usize::from(a.k_tend != b.k_tend) + usize::from(a.stab != b.stab)
}

/// Pairs of admissible nodes whose triplets differ in exactly one coordinate.
pub fn compass_edges() -> Vec<Edge> {
    let mut edges = Vec::new();
    for (i, &u) in NodeType::ALL.iter().enumerate() {
        for &v in &NodeType::ALL[i + 1..] {
            if hamming(u, v) == 1 {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Source of compass edge weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum EdgeWeighting {
    #[default]
    Uniform,
    /// Weight per edge; edges not listed get 1.
    Explicit(BTreeMap<Edge, f64>),
}

/// Undirected weighted graph over the six node types.
///
/// [`build_base_graph`] yields the compass itself; [`CrownGraph::remove_edge`]
/// and [`CrownGraph::from_edges`] allow other subgraphs for analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct CrownGraph {
    weights: BTreeMap<Edge, f64>,
}

pub fn build_base_graph(weighting: &EdgeWeighting) -> Result<CrownGraph, GraphError> {
    let edges = compass_edges().into_iter().map(|e| {
        let w = match weighting {
            EdgeWeighting::Uniform => 1.0,
            EdgeWeighting::Explicit(map) => map.get(&e).copied().unwrap_or(1.0),
        };
        (e.0, e.1, w)
    });
    CrownGraph::from_edges(edges)
}

impl CrownGraph {
    pub fn from_edges<I: IntoIterator<Item = (NodeType, NodeType, f64)>>(edges: I) -> Result<Self, GraphError> {
        let mut weights = BTreeMap::new();
        for (u, v, w) in edges {
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(GraphError::NonPositiveWeight(u, v, w));
            }
            weights.insert(edge(u, v), w);
        }
        Ok(CrownGraph { weights })
    }

    pub fn nodes(&self) -> [NodeType; 6] {
        NodeType::ALL
    }

    /// Edges in lexicographic order with their weights.
    pub fn edges(&self) -> impl Iterator<Item = (NodeType, NodeType, f64)> + '_ {
        self.weights.iter().map(|(&(u, v), &w)| (u, v, w))
    }

    pub fn edge_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, u: NodeType, v: NodeType) -> Option<f64> {
        self.weights.get(&edge(u, v)).copied()
    }

    pub fn has_edge(&self, u: NodeType, v: NodeType) -> bool {
        self.weights.contains_key(&edge(u, v))
    }

    pub fn neighbors(&self, n: NodeType) -> Vec<NodeType> {
        NodeType::ALL.into_iter().filter(|&m| m != n && self.has_edge(n, m)).collect()
    }

    pub fn degree(&self, n: NodeType) -> usize {
        self.neighbors(n).len()
    }

    pub fn remove_edge(&self, u: NodeType, v: NodeType) -> Result<CrownGraph, GraphError> {
        let mut weights = self.weights.clone();
        weights.remove(&edge(u, v)).ok_or(GraphError::NoSuchEdge(u, v))?;
        Ok(CrownGraph { weights })
    }

    /// True when the edge set is exactly the compass cycle.
    pub fn is_compass(&self) -> bool {
        self.weights.keys().copied().eq(compass_edges())
    }

    pub fn is_connected(&self) -> bool {
        let d = all_pairs_distances(self, DistanceMode::Hops);
        d[0].iter().all(|x| x.is_finite())
    }

    /// Two-colouring by breadth-first search.
    pub fn is_bipartite(&self) -> bool {
        let mut colour: [Option<bool>; 6] = [None; 6];
        for start in NodeType::ALL {
            if colour[start.index()].is_some() {
                continue;
            }
            colour[start.index()] = Some(false);
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                let cu = colour[u.index()].expect("coloured on enqueue");
                for v in self.neighbors(u) {
                    match colour[v.index()] {
                        None => {
                            colour[v.index()] = Some(!cu);
                            queue.push_back(v);
                        }
                        Some(cv) if cv == cu => return false,
                        Some(_) => {}
                    }
                }
            }
        }
        true
    }

    fn step(&self, u: NodeType, v: NodeType, mode: DistanceMode) -> Option<f64> {
        self.weight(u, v).map(|w| match mode {
            DistanceMode::Hops => 1.0,
            DistanceMode::Weighted => w,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DistanceMode {
    /// Every edge counts 1.
    #[default]
    Hops,
    /// Edge weights are lengths.
    Weighted,
}

/// Floyd–Warshall over the six nodes; unreachable pairs are infinite.
pub fn all_pairs_distances(g: &CrownGraph, mode: DistanceMode) -> [[f64; 6]; 6] {
    let mut d = [[f64::INFINITY; 6]; 6];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for (u, v, _) in g.edges() {
        let w = g.step(u, v, mode).expect("edge present");
        d[u.index()][v.index()] = w;
        d[v.index()][u.index()] = w;
    }
    for k in 0..6 {
        for i in 0..6 {
            for j in 0..6 {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

pub fn shortest_distance(g: &CrownGraph, u: NodeType, v: NodeType, mode: DistanceMode) -> f64 {
    all_pairs_distances(g, mode)[u.index()][v.index()]
}

fn same_length(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Shortest-path betweenness (Brandes), summed over unordered pairs of
/// distinct endpoints. A pair with several geodesics splits its unit of
/// credit evenly among them.
pub fn betweenness(g: &CrownGraph, mode: DistanceMode) -> BTreeMap<NodeType, f64> {
    let mut score = [0.0f64; 6];
    for s in NodeType::ALL {
        let mut dist = [f64::INFINITY; 6];
        let mut sigma = [0.0f64; 6];
        let mut preds: [Vec<usize>; 6] = Default::default();
        let mut settled = [false; 6];
        let mut order = Vec::with_capacity(6);
        dist[s.index()] = 0.0;
        sigma[s.index()] = 1.0;
        loop {
            let next = (0..6)
                .filter(|&i| !settled[i] && dist[i].is_finite())
                .min_by(|&a, &b| dist[a].total_cmp(&dist[b]));
            let Some(u) = next else { break };
            settled[u] = true;
            order.push(u);
            let un = NodeType::ALL[u];
            for vn in g.neighbors(un) {
                let v = vn.index();
                if settled[v] {
                    continue;
                }
                let alt = dist[u] + g.step(un, vn, mode).expect("neighbor edge");
                if dist[v].is_finite() && same_length(alt, dist[v]) {
                    sigma[v] += sigma[u];
                    preds[v].push(u);
                } else if alt < dist[v] {
                    dist[v] = alt;
                    sigma[v] = sigma[u];
                    preds[v] = vec![u];
                }
            }
        }
        let mut delta = [0.0f64; 6];
        for &w in order.iter().rev() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s.index() {
                score[w] += delta[w];
            }
        }
    }
    NodeType::ALL.into_iter().map(|n| (n, score[n.index()] / 2.0)).collect()
}

/// Kruskal's algorithm. Equal weights are taken in lexicographic edge order,
/// so among tied candidates the lexicographically greatest edge is dropped.
pub fn minimum_spanning_tree(g: &CrownGraph) -> Result<Vec<(NodeType, NodeType, f64)>, GraphError> {
    let mut edges: Vec<_> = g.edges().collect();
    edges.sort_by(|a, b| a.2.total_cmp(&b.2).then_with(|| (a.0, a.1).cmp(&(b.0, b.1))));
    let mut parent: [usize; 6] = [0, 1, 2, 3, 4, 5];
    fn find(parent: &mut [usize; 6], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut tree = Vec::with_capacity(5);
    for (u, v, w) in edges {
        let (ru, rv) = (find(&mut parent, u.index()), find(&mut parent, v.index()));
        if ru != rv {
            parent[ru] = rv;
            tree.push((u, v, w));
        }
    }
    if tree.len() != 5 {
        return Err(GraphError::Disconnected);
    }
    Ok(tree)
}

/// Pearson correlation of node values across edge endpoints, each edge
/// counted in both orientations.
pub fn assortativity(g: &CrownGraph, values: &BTreeMap<NodeType, f64>) -> Result<f64, GraphError> {
    let value = |n: NodeType| values.get(&n).copied().ok_or(GraphError::MissingValue(n));
    let mut xs = Vec::with_capacity(2 * g.edge_count());
    let mut ys = Vec::with_capacity(2 * g.edge_count());
    for (u, v, _) in g.edges() {
        let (vu, vv) = (value(u)?, value(v)?);
        xs.extend([vu, vv]);
        ys.extend([vv, vu]);
    }
    let n = xs.len() as f64;
    if n == 0.0 {
        return Err(GraphError::DegenerateValues);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(GraphError::DegenerateValues);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
