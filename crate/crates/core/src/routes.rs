//! Search routes, route distance and cognitive communities.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crown_graph::{self, all_pairs_distances, build_base_graph, DistanceMode, EdgeWeighting};
use crate::taxonomy::NodeType;

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("classifications out of block order at position {0}")]
    OutOfOrder(usize),
    #[error("linkage threshold must be a non-negative number, got {0}")]
    BadThreshold(f64),
    #[error("route record: {0}")]
    Record(String),
    #[error("route i/o: {0}")]
    Csv(#[from] csv::Error),
}

/// Owner key of the single route built in stream mode.
pub const STREAM_OWNER: &str = "stream";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchRoute {
    pub owner: String,
    pub steps: Vec<NodeType>,
    /// First and last block index visited.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum RouteGrouping {
    /// One route over the whole block stream.
    #[default]
    Stream,
    /// One route per user, over the blocks holding that user's sessions.
    User,
}

/// Builds routes from `(block_index, node)` classifications.
///
/// `session_blocks` lists `(block_index, user_hash)` for every session and
/// is only read in [`RouteGrouping::User`] mode. A user seen several times in
/// one block contributes that block once; users seen only in unclassified
/// blocks get no route. Routes come back sorted by owner.
pub fn extract_routes<'a, I>(
    classified: &[(usize, NodeType)],
    grouping: RouteGrouping,
    session_blocks: I,
) -> Result<Vec<SearchRoute>, RouteError>
where
    I: IntoIterator<Item = (usize, &'a str)>,
{
    for (i, w) in classified.windows(2).enumerate() {
        if w[1].0 <= w[0].0 {
            return Err(RouteError::OutOfOrder(i + 1));
        }
    }
    let (Some(first), Some(last)) = (classified.first(), classified.last()) else {
        return Ok(Vec::new());
    };
    match grouping {
        RouteGrouping::Stream => Ok(vec![SearchRoute {
            owner: STREAM_OWNER.to_string(),
            steps: classified.iter().map(|&(_, n)| n).collect(),
            span: (first.0, last.0),
        }]),
        RouteGrouping::User => {
            let label_of: HashMap<usize, NodeType> = classified.iter().copied().collect();
            let mut visits: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (block, user) in session_blocks {
                if !label_of.contains_key(&block) {
                    continue;
                }
                let blocks = visits.entry(user).or_default();
                if !blocks.contains(&block) {
                    blocks.push(block);
                }
            }
            Ok(visits
                .into_iter()
                .map(|(user, mut blocks)| {
                    blocks.sort_unstable();
                    SearchRoute {
                        owner: user.to_string(),
                        steps: blocks.iter().map(|b| label_of[b]).collect(),
                        span: (blocks[0], blocks[blocks.len() - 1]),
                    }
                })
                .collect())
        }
    }
}

/// Cost of inserting or deleting one route step.
pub const INDEL_COST: u32 = 2;

fn hop_table() -> &'static [[u32; 6]; 6] {
    static TABLE: OnceLock<[[u32; 6]; 6]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let g = build_base_graph(&EdgeWeighting::Uniform).expect("unit weights are valid");
        let d = all_pairs_distances(&g, DistanceMode::Hops);
        let mut t = [[0u32; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                t[i][j] = d[i][j] as u32;
            }
        }
        t
    })
}

/// Compass hop distance between two labels (0 to 3).
pub fn hop_distance(u: NodeType, v: NodeType) -> u32 {
    hop_table()[u.index()][v.index()]
}

/// Edit distance over label sequences: substitution costs the compass hop
/// distance between the labels, insertion and deletion cost [`INDEL_COST`].
pub fn step_distance(a: &[NodeType], b: &[NodeType]) -> u32 {
    let mut prev: Vec<u32> = (0..=b.len() as u32).map(|j| j * INDEL_COST).collect();
    let mut cur = vec![0u32; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = (i as u32 + 1) * INDEL_COST;
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + hop_distance(x, y))
                .min(prev[j + 1] + INDEL_COST)
                .min(cur[j] + INDEL_COST);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn route_distance(r1: &SearchRoute, r2: &SearchRoute) -> f64 {
    f64::from(step_distance(&r1.steps, &r2.steps))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CognitiveCommunity {
    pub community_id: usize,
    pub members: BTreeSet<String>,
    /// Step counts per label over all member routes, indexed a..f.
    pub label_counts: [u64; 6],
    pub dominant: NodeType,
}

impl CognitiveCommunity {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Most frequent label; ties go to the earlier label.
pub fn dominant_label(counts: &[u64; 6]) -> NodeType {
    let mut best = 0;
    for i in 1..6 {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    NodeType::ALL[best]
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

/// Single-linkage grouping: two routes share a community when a chain of
/// routes joins them with every link at distance `<= threshold`.
/// Communities are numbered by their smallest member key.
pub fn detect_communities(routes: &[SearchRoute], threshold: f64) -> Result<Vec<CognitiveCommunity>, RouteError> {
    if !(threshold >= 0.0) {
        return Err(RouteError::BadThreshold(threshold));
    }
    // Identical step sequences are at distance 0, so cluster distinct ones.
    let mut distinct: BTreeMap<&[NodeType], Vec<usize>> = BTreeMap::new();
    for (i, r) in routes.iter().enumerate() {
        distinct.entry(r.steps.as_slice()).or_default().push(i);
    }
    let seqs: Vec<&[NodeType]> = distinct.keys().copied().collect();
    let mut parent: Vec<usize> = (0..seqs.len()).collect();
    for i in 0..seqs.len() {
        for j in i + 1..seqs.len() {
            let len_gap = seqs[i].len().abs_diff(seqs[j].len()) as f64 * f64::from(INDEL_COST);
            if len_gap > threshold || find(&mut parent, i) == find(&mut parent, j) {
                continue;
            }
            if f64::from(step_distance(seqs[i], seqs[j])) <= threshold {
                union(&mut parent, i, j);
            }
        }
    }

    let mut groups: BTreeMap<usize, (BTreeSet<String>, [u64; 6])> = BTreeMap::new();
    for (s, members) in distinct.values().enumerate() {
        let root = find(&mut parent, s);
        let entry = groups.entry(root).or_default();
        for &m in members {
            entry.0.insert(routes[m].owner.clone());
            for step in &routes[m].steps {
                entry.1[step.index()] += 1;
            }
        }
    }
    let mut communities: Vec<_> = groups.into_values().collect();
    communities.sort_by(|a, b| a.0.first().cmp(&b.0.first()));
    Ok(communities
        .into_iter()
        .enumerate()
        .map(|(community_id, (members, label_counts))| CognitiveCommunity {
            community_id,
            members,
            dominant: dominant_label(&label_counts),
            label_counts,
        })
        .collect())
}

/// Where a community sits on the compass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Position {
    pub node: NodeType,
    pub neighbors: Vec<NodeType>,
    /// Hop distance from `node` to each label a..f.
    pub distances: [u32; 6],
}

pub fn position_community(c: &CognitiveCommunity) -> Position {
    position_of(c.dominant)
}

pub fn position_of(node: NodeType) -> Position {
    let g = build_base_graph(&EdgeWeighting::Uniform).expect("unit weights are valid");
    let mut distances = [0u32; 6];
    for other in NodeType::ALL {
        distances[other.index()] = hop_distance(node, other);
    }
    Position { node, neighbors: g.neighbors(node), distances }
}

/// Counts of consecutive label pairs across routes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransitionGraph {
    pub counts: BTreeMap<(NodeType, NodeType), u64>,
}

impl TransitionGraph {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Compass edge weights `1 + transitions along the edge` in either
    /// direction. Transitions between non-adjacent labels are ignored.
    pub fn compass_weighting(&self) -> EdgeWeighting {
        let weights = crown_graph::compass_edges()
            .into_iter()
            .map(|(u, v)| {
                let c = self.counts.get(&(u, v)).copied().unwrap_or(0) + self.counts.get(&(v, u)).copied().unwrap_or(0);
                ((u, v), 1.0 + c as f64)
            })
            .collect();
        EdgeWeighting::Explicit(weights)
    }
}

pub fn build_transition_graph(routes: &[SearchRoute]) -> TransitionGraph {
    let mut counts = BTreeMap::new();
    for r in routes {
        for w in r.steps.windows(2) {
            *counts.entry((w[0], w[1])).or_insert(0) += 1;
        }
    }
    TransitionGraph { counts }
}

#[derive(Debug, Serialize, Deserialize)]
struct RouteRecord {
    owner: String,
    steps: String,
    span_first: usize,
    span_last: usize,
}

pub fn write_routes_csv<W: Write>(writer: W, routes: &[SearchRoute]) -> Result<(), RouteError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in routes {
        w.serialize(RouteRecord {
            owner: r.owner.clone(),
            steps: r.steps.iter().map(|n| n.label().to_string()).collect::<Vec<_>>().join(","),
            span_first: r.span.0,
            span_last: r.span.1,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_routes_csv<R: Read>(reader: R) -> Result<Vec<SearchRoute>, RouteError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut routes = Vec::new();
    for rec in r.deserialize() {
        let rec: RouteRecord = rec?;
        let steps = rec
            .steps
            .split(',')
            .map(|s| s.parse::<NodeType>().map_err(|e| RouteError::Record(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        routes.push(SearchRoute { owner: rec.owner, steps, span: (rec.span_first, rec.span_last) });
    }
    Ok(routes)
}

#[derive(Debug, Serialize)]
struct CommunityRecord {
    community_id: usize,
    size: usize,
    count_a: u64,
    count_b: u64,
    count_c: u64,
    count_d: u64,
    count_e: u64,
    count_f: u64,
    position: NodeType,
    neighbors: String,
}

pub fn write_communities_csv<W: Write>(writer: W, communities: &[CognitiveCommunity]) -> Result<(), RouteError> {
    let mut w = csv::Writer::from_writer(writer);
    for c in communities {
        let p = position_community(c);
        let k = c.label_counts;
        w.serialize(CommunityRecord {
            community_id: c.community_id,
            size: c.size(),
            count_a: k[0],
            count_b: k[1],
            count_c: k[2],
            count_d: k[3],
            count_e: k[4],
            count_f: k[5],
            position: p.node,
            neighbors: p.neighbors.iter().map(|n| n.label().to_string()).collect::<Vec<_>>().join(","),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
