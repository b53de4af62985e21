//! Triplet tendencies and the six admissible compass node types.
//!
//! A block is described by a raw triplet: the tendency of its mean N and
//! mean K toward the global minimum or maximum, and whether its variety stays
//! near 1. Of the eight MID-free triplets, the two limit positions
//! Best = (MAX, MIN, STABLE) and Worst = (MIN, MAX, UNSTABLE) are excluded,
//! which leaves the node types `a`–`f`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block_metrics::BlockMetrics;

#[derive(Debug, Error, PartialEq)]
pub enum TaxonomyError {
    #[error("lower bound {lo} exceeds upper bound {hi}")]
    InvertedBounds { lo: f64, hi: f64 },
    #[error("z must lie strictly between 0 and 1, got {0}")]
    BadZ(f64),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("mismatch weights must be non-negative and not all zero")]
    BadWeights,
    #[error("first block has no variety")]
    NoVariety,
    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tendency {
    Min,
    Mid,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub n_tend: Tendency,
    pub k_tend: Tendency,
    pub stab: Stability,
}

impl Triplet {
    pub const fn new(n_tend: Tendency, k_tend: Tendency, stab: Stability) -> Self {
        Triplet { n_tend, k_tend, stab }
    }

    /// Every raw triplet, 3 × 3 × 2 = 18 of them.
    pub fn all() -> impl Iterator<Item = Triplet> {
        const T: [Tendency; 3] = [Tendency::Min, Tendency::Mid, Tendency::Max];
        const S: [Stability; 2] = [Stability::Stable, Stability::Unstable];
        T.into_iter()
            .flat_map(|n| T.into_iter().flat_map(move |k| S.into_iter().map(move |s| Triplet::new(n, k, s))))
    }

    pub fn is_mid_free(&self) -> bool {
        self.n_tend != Tendency::Mid && self.k_tend != Tendency::Mid
    }
}

/// (N_max, K_min, stable): excluded limit.
pub const BEST: Triplet = Triplet::new(Tendency::Max, Tendency::Min, Stability::Stable);
/// (N_min, K_max, unstable): excluded limit.
pub const WORST: Triplet = Triplet::new(Tendency::Min, Tendency::Max, Stability::Unstable);

/// One of the six compass positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeType {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl NodeType {
    pub const ALL: [NodeType; 6] = [NodeType::A, NodeType::B, NodeType::C, NodeType::D, NodeType::E, NodeType::F];

    pub fn triplet(self) -> Triplet {
        use Stability::*;
        use Tendency::*;
        match self {
            NodeType::A => Triplet::new(Max, Max, Unstable),
            NodeType::B => Triplet::new(Min, Max, Stable),
            NodeType::C => Triplet::new(Min, Min, Unstable),
            NodeType::D => Triplet::new(Min, Min, Stable),
            NodeType::E => Triplet::new(Max, Min, Unstable),
            NodeType::F => Triplet::new(Max, Max, Stable),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<NodeType> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> char {
        (b'a' + self as u8) as char
    }

    pub fn from_label(c: char) -> Option<NodeType> {
        match c {
            'a'..='f' => Self::from_index((c as u8 - b'a') as usize),
            _ => None,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl FromStr for NodeType {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => NodeType::from_label(c),
            _ => None,
        }
        .ok_or_else(|| TaxonomyError::Unknown { kind: "node label", value: s.to_string() })
    }
}

impl Serialize for NodeType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_char(self.label())
    }
}

impl<'de> Deserialize<'de> for NodeType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Tendency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tendency::Min => "MIN",
            Tendency::Mid => "MID",
            Tendency::Max => "MAX",
        })
    }
}

impl fmt::Display for Stability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stability::Stable => "STABLE",
            Stability::Unstable => "UNSTABLE",
        })
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.n_tend, self.k_tend, self.stab)
    }
}

pub fn admissible_nodes() -> [NodeType; 6] {
    NodeType::ALL
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Width of the MIN and MAX tendency bands as a fraction of the range.
    pub z: f64,
    /// Half-width of the stability band around variety 1.
    pub epsilon: f64,
    /// Mismatch weights for the N, K and stability coordinates.
    pub mismatch_weights: [f64; 3],
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { z: 0.25, epsilon: 0.25, mismatch_weights: [1.0; 3] }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), TaxonomyError> {
        if !(self.z > 0.0 && self.z < 1.0) {
            return Err(TaxonomyError::BadZ(self.z));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(TaxonomyError::BadEpsilon(self.epsilon));
        }
        let w = self.mismatch_weights;
        if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || w.iter().all(|x| *x == 0.0) {
            return Err(TaxonomyError::BadWeights);
        }
        Ok(())
    }
}

/// MAX when `value > hi - (hi - lo) * z`, otherwise MIN when
/// `value < lo + (hi - lo) * z`, otherwise MID. The MAX test runs first, so
/// overlapping bands (z ≥ 0.5) resolve to MAX. A degenerate range is MID.
pub fn tendency_of(value: f64, lo: f64, hi: f64, z: f64) -> Result<Tendency, TaxonomyError> {
    if lo > hi {
        return Err(TaxonomyError::InvertedBounds { lo, hi });
    }
    if !(z > 0.0 && z < 1.0) {
        return Err(TaxonomyError::BadZ(z));
    }
    if lo == hi {
        return Ok(Tendency::Mid);
    }
    let band = (hi - lo) * z;
    Ok(if value > hi - band {
        Tendency::Max
    } else if value < lo + band {
        Tendency::Min
    } else {
        Tendency::Mid
    })
}

/// STABLE when `|variety - 1| <= epsilon`. Non-finite varieties are unstable.
pub fn stability_of(variety: f64, epsilon: f64) -> Stability {
    if (variety - 1.0).abs() <= epsilon {
        Stability::Stable
    } else {
        Stability::Unstable
    }
}

fn tendency_cost(raw: Tendency, node: Tendency) -> f64 {
    match (raw, node) {
        (a, b) if a == b => 0.0,
        (Tendency::Mid, _) | (_, Tendency::Mid) => 0.5,
        _ => 1.0,
    }
}

/// Weighted mismatch between a raw triplet and a node's triplet.
pub fn mismatch_cost(raw: Triplet, node: NodeType, weights: [f64; 3]) -> f64 {
    let t = node.triplet();
    let stab = if raw.stab == t.stab { 0.0 } else { 1.0 };
    weights[0] * tendency_cost(raw.n_tend, t.n_tend) + weights[1] * tendency_cost(raw.k_tend, t.k_tend) + weights[2] * stab
}

/// The admissible node nearest to `raw`; ties go to the earlier label.
pub fn assign_node(raw: Triplet, cfg: &ClassifierConfig) -> (NodeType, f64) {
    let mut best = (NodeType::A, mismatch_cost(raw, NodeType::A, cfg.mismatch_weights));
    for node in &NodeType::ALL[1..] {
        let cost = mismatch_cost(raw, *node, cfg.mismatch_weights);
        if cost < best.1 {
            best = (*node, cost);
        }
    }
    best
}

/// Range of the block means over the whole analyzed series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalBounds {
    pub n_lo: f64,
    pub n_hi: f64,
    pub k_lo: f64,
    pub k_hi: f64,
}

impl GlobalBounds {
    /// Min and max of `mean_n` and `mean_k` across all blocks.
    pub fn from_metrics(metrics: &[BlockMetrics]) -> Option<Self> {
        let first = metrics.first()?;
        let mut b = GlobalBounds { n_lo: first.mean_n, n_hi: first.mean_n, k_lo: first.mean_k, k_hi: first.mean_k };
        for m in &metrics[1..] {
            b.n_lo = b.n_lo.min(m.mean_n);
            b.n_hi = b.n_hi.max(m.mean_n);
            b.k_lo = b.k_lo.min(m.mean_k);
            b.k_hi = b.k_hi.max(m.mean_k);
        }
        Some(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub block_index: usize,
    pub n_tend: Tendency,
    pub k_tend: Tendency,
    pub stability: Stability,
    pub label: NodeType,
    pub cost: f64,
}

impl Classification {
    pub fn raw(&self) -> Triplet {
        Triplet::new(self.n_tend, self.k_tend, self.stability)
    }
}

pub fn classify_block(
    metrics: &BlockMetrics,
    bounds: &GlobalBounds,
    cfg: &ClassifierConfig,
) -> Result<Classification, TaxonomyError> {
    let variety = metrics.variety.ok_or(TaxonomyError::NoVariety)?;
    let raw = Triplet::new(
        tendency_of(metrics.mean_n, bounds.n_lo, bounds.n_hi, cfg.z)?,
        tendency_of(metrics.mean_k, bounds.k_lo, bounds.k_hi, cfg.z)?,
        stability_of(variety, cfg.epsilon),
    );
    let (label, cost) = assign_node(raw, cfg);
    Ok(Classification {
        block_index: metrics.block_index,
        n_tend: raw.n_tend,
        k_tend: raw.k_tend,
        stability: raw.stab,
        label,
        cost,
    })
}

/// Classifies every block that has a variety value, i.e. all but the first.
pub fn classify_series(metrics: &[BlockMetrics], cfg: &ClassifierConfig) -> Result<Vec<Classification>, TaxonomyError> {
    cfg.validate()?;
    let Some(bounds) = GlobalBounds::from_metrics(metrics) else {
        return Ok(Vec::new());
    };
    metrics
        .iter()
        .filter(|m| m.variety.is_some())
        .map(|m| classify_block(m, &bounds, cfg))
        .collect()
}
