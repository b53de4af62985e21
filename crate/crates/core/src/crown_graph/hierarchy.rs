//! Self-similar expansion of the compass.
//!
//! Any node of the compass can be replaced by a full copy of the compass
//! (expansion) and the copy can be removed again (collapse). A node is
//! addressed by its label path from the root compass, e.g. `[a, c]` is node
//! `c` inside the copy that replaced root node `a`.
//!
//! When flattened, the edges a refined node had toward its siblings attach
//! to the child carrying the refined node's own label.

use thiserror::Error;

use super::CrownGraph;
use crate::taxonomy::NodeType;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HierarchyError {
    #[error("empty node path")]
    EmptyPath,
    #[error("no node at path {0}")]
    NoSuchNode(String),
    #[error("node {0} is already refined")]
    AlreadyRefined(String),
    #[error("node {0} is not refined")]
    NotRefined(String),
    #[error("depth must be at least 1")]
    ZeroDepth,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Cell {
    children: Option<Box<[Cell; 6]>>,
}

impl Cell {
    fn leaves(&self) -> usize {
        match &self.children {
            None => 1,
            Some(c) => c.iter().map(Cell::leaves).sum(),
        }
    }

    fn depth(&self) -> usize {
        match &self.children {
            None => 0,
            Some(c) => 1 + c.iter().map(Cell::depth).max().unwrap_or(0),
        }
    }

    fn refine_uniformly(&mut self, levels: usize) {
        if levels == 0 {
            return;
        }
        let mut children: Box<[Cell; 6]> = Box::default();
        for child in children.iter_mut() {
            child.refine_uniformly(levels - 1);
        }
        self.children = Some(children);
    }
}

/// Compass with recursively refined nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HierarchicalGraph {
    root: [Cell; 6],
}

pub fn path_string(path: &[NodeType]) -> String {
    path.iter().map(|n| n.label().to_string()).collect::<Vec<_>>().join(".")
}

impl HierarchicalGraph {
    /// The plain compass: six leaves.
    pub fn base() -> Self {
        Self::default()
    }

    /// Every node refined down to `depth` levels; depth 1 is the plain compass.
    pub fn uniform(depth: usize) -> Result<Self, HierarchyError> {
        if depth == 0 {
            return Err(HierarchyError::ZeroDepth);
        }
        let mut h = Self::base();
        for cell in h.root.iter_mut() {
            cell.refine_uniformly(depth - 1);
        }
        Ok(h)
    }

    fn cell(&self, path: &[NodeType]) -> Result<&Cell, HierarchyError> {
        let (first, rest) = path.split_first().ok_or(HierarchyError::EmptyPath)?;
        let mut cell = &self.root[first.index()];
        for (i, step) in rest.iter().enumerate() {
            cell = match &cell.children {
                Some(c) => &c[step.index()],
                None => return Err(HierarchyError::NoSuchNode(path_string(&path[..i + 2]))),
            };
        }
        Ok(cell)
    }

    fn cell_mut(&mut self, path: &[NodeType]) -> Result<&mut Cell, HierarchyError> {
        let (first, rest) = path.split_first().ok_or(HierarchyError::EmptyPath)?;
        let mut cell = &mut self.root[first.index()];
        for (i, step) in rest.iter().enumerate() {
            cell = match &mut cell.children {
                Some(c) => &mut c[step.index()],
                None => return Err(HierarchyError::NoSuchNode(path_string(&path[..i + 2]))),
            };
        }
        Ok(cell)
    }

    pub fn is_refined(&self, path: &[NodeType]) -> Result<bool, HierarchyError> {
        Ok(self.cell(path)?.children.is_some())
    }

    /// Replaces the leaf at `path` with a copy of the compass.
    pub fn expand_node(&mut self, path: &[NodeType]) -> Result<(), HierarchyError> {
        let cell = self.cell_mut(path)?;
        if cell.children.is_some() {
            return Err(HierarchyError::AlreadyRefined(path_string(path)));
        }
        cell.children = Some(Box::default());
        Ok(())
    }

    /// Removes the copy that replaced the node at `path`, including any
    /// refinement inside it.
    pub fn collapse_node(&mut self, path: &[NodeType]) -> Result<(), HierarchyError> {
        let cell = self.cell_mut(path)?;
        if cell.children.take().is_none() {
            return Err(HierarchyError::NotRefined(path_string(path)));
        }
        Ok(())
    }

    pub fn leaf_count(&self) -> usize {
        self.root.iter().map(Cell::leaves).sum()
    }

    /// Number of levels; the plain compass has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.root.iter().map(Cell::depth).max().unwrap_or(0)
    }

    /// Leaf paths in depth-first label order.
    pub fn leaves(&self) -> Vec<Vec<NodeType>> {
        fn walk(cell: &Cell, path: &mut Vec<NodeType>, out: &mut Vec<Vec<NodeType>>) {
            match &cell.children {
                None => out.push(path.clone()),
                Some(children) => {
                    for (node, child) in NodeType::ALL.iter().zip(children.iter()) {
                        path.push(*node);
                        walk(child, path, out);
                        path.pop();
                    }
                }
            }
        }
        let mut out = Vec::new();
        for (node, cell) in NodeType::ALL.iter().zip(self.root.iter()) {
            let mut path = vec![*node];
            walk(cell, &mut path, &mut out);
        }
        out
    }

    /// Paths of refined nodes, parents before children.
    pub fn refined_paths(&self) -> Vec<Vec<NodeType>> {
        fn walk(cell: &Cell, path: &mut Vec<NodeType>, out: &mut Vec<Vec<NodeType>>) {
            if let Some(children) = &cell.children {
                out.push(path.clone());
                for (node, child) in NodeType::ALL.iter().zip(children.iter()) {
                    path.push(*node);
                    walk(child, path, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        for (node, cell) in NodeType::ALL.iter().zip(self.root.iter()) {
            walk(cell, &mut vec![*node], &mut out);
        }
        out
    }

    /// Leaf that stands in for `path` when edges attach to it.
    fn portal(&self, path: &[NodeType]) -> Vec<NodeType> {
        let mut p = path.to_vec();
        let last = *path.last().expect("non-empty path");
        while matches!(self.cell(&p), Ok(c) if c.children.is_some()) {
            p.push(last);
        }
        p
    }

    /// Leaf-level graph: every compass copy contributes its six edges, with
    /// `template` supplying the weights.
    pub fn flatten(&self, template: &CrownGraph) -> FlatGraph {
        let leaves = self.leaves();
        let index: std::collections::HashMap<&[NodeType], usize> =
            leaves.iter().enumerate().map(|(i, p)| (p.as_slice(), i)).collect();
        let mut prefixes: Vec<Vec<NodeType>> = vec![Vec::new()];
        prefixes.extend(self.refined_paths());
        let mut edges = Vec::new();
        for prefix in &prefixes {
            for (u, v, w) in template.edges() {
                let mut pu = prefix.clone();
                pu.push(u);
                let mut pv = prefix.clone();
                pv.push(v);
                let (lu, lv) = (self.portal(&pu), self.portal(&pv));
                edges.push((index[lu.as_slice()], index[lv.as_slice()], w));
            }
        }
        FlatGraph { nodes: leaves.iter().map(|p| path_string(p)).collect(), edges }
    }
}

/// Leaves of a hierarchy with their attached edges.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGraph {
    /// Dotted label paths, e.g. `a.c`.
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl FlatGraph {
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph hierarchy {\n");
        for n in &self.nodes {
            out.push_str(&format!("  \"{n}\";\n"));
        }
        for &(u, v, w) in &self.edges {
            out.push_str(&format!("  \"{}\" -- \"{}\" [weight={w}];\n", self.nodes[u], self.nodes[v]));
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crown_graph::{build_base_graph, EdgeWeighting};
    use NodeType::*;

    #[test]
    fn expand_one_root_node() {
        let mut h = HierarchicalGraph::base();
        assert_eq!(h.leaf_count(), 6);
        h.expand_node(&[A]).unwrap();
        assert_eq!(h.leaf_count(), 11);
        assert_eq!(h.depth(), 2);
        assert!(h.is_refined(&[A]).unwrap());
    }

    #[test]
    fn uniform_counts() {
        assert_eq!(HierarchicalGraph::uniform(1).unwrap(), HierarchicalGraph::base());
        assert_eq!(HierarchicalGraph::uniform(2).unwrap().leaf_count(), 36);
        assert_eq!(HierarchicalGraph::uniform(3).unwrap().leaf_count(), 216);
        assert_eq!(HierarchicalGraph::uniform(0), Err(HierarchyError::ZeroDepth));
    }

    #[test]
    fn expanding_twice_fails() {
        let mut h = HierarchicalGraph::base();
        h.expand_node(&[C]).unwrap();
        assert_eq!(h.expand_node(&[C]), Err(HierarchyError::AlreadyRefined("c".into())));
    }

    #[test]
    fn collapse_inverts_expand() {
        let mut h = HierarchicalGraph::uniform(2).unwrap();
        let before = h.clone();
        h.expand_node(&[B, D]).unwrap();
        assert_ne!(h, before);
        h.collapse_node(&[B, D]).unwrap();
        assert_eq!(h, before);
    }

    #[test]
    fn collapsing_every_root_node_restores_base() {
        let mut h = HierarchicalGraph::uniform(2).unwrap();
        for n in NodeType::ALL {
            h.collapse_node(&[n]).unwrap();
        }
        assert_eq!(h, HierarchicalGraph::base());
    }

    #[test]
    fn collapse_on_base_fails() {
        let mut h = HierarchicalGraph::base();
        assert_eq!(h.collapse_node(&[A]), Err(HierarchyError::NotRefined("a".into())));
        assert_eq!(h.collapse_node(&[]), Err(HierarchyError::EmptyPath));
        assert_eq!(h.expand_node(&[A, B]), Err(HierarchyError::NoSuchNode("a.b".into())));
    }

    #[test]
    fn flatten_attaches_to_same_label_child() {
        let g = build_base_graph(&EdgeWeighting::Uniform).unwrap();
        let flat = HierarchicalGraph::base().flatten(&g);
        assert_eq!(flat.nodes.len(), 6);
        assert_eq!(flat.edges.len(), 6);

        let mut h = HierarchicalGraph::base();
        h.expand_node(&[A]).unwrap();
        let flat = h.flatten(&g);
        assert_eq!(flat.nodes.len(), 11);
        assert_eq!(flat.edges.len(), 12);
        let name = |i: usize| flat.nodes[i].as_str();
        let mut touching_e: Vec<_> = flat
            .edges
            .iter()
            .filter_map(|&(u, v, _)| match (name(u), name(v)) {
                ("e", other) | (other, "e") => Some(other.to_string()),
                _ => None,
            })
            .collect();
        touching_e.sort();
        assert_eq!(touching_e, vec!["a.a", "c"]);
    }

    #[test]
    fn nested_portal_descends() {
        let mut h = HierarchicalGraph::base();
        h.expand_node(&[A]).unwrap();
        h.expand_node(&[A, A]).unwrap();
        assert_eq!(h.portal(&[A]), vec![A, A, A]);
        let flat = h.flatten(&build_base_graph(&EdgeWeighting::Uniform).unwrap());
        assert_eq!(flat.nodes.len(), 16);
        assert_eq!(flat.edges.len(), 18);
    }
}
