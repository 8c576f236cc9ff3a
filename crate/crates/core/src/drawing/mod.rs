//! From a curve sketch to a 3D drawing: closest-point evolution of curve
//! clusters, pairwise overlap analysis, incremental merging and the final
//! junction graph.

mod evolve;
mod merge;
mod ply;
mod primitives;

use std::fmt::Write as _;

use nalgebra::Point3;
use petgraph::unionfind::UnionFind;
use thiserror::Error;

pub use evolve::{evolve_cluster, EvolveParams, Evolution};
pub use merge::{build_drawing, merge_cluster, MergeEvent, MergeParams, MergeReport};
pub use ply::write_ply;
pub use primitives::{
    classify_merge_primitive, compute_overlap_masks, overlap_mask, MergePrimitive, OverlapMask, PrimitiveKind,
    MIN_OVERLAP_RUN,
};

/// A junction (degree >= 3), a curve end (degree 1), or the anchor of a
/// closed loop (degree 2 with a single self-loop).
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub position: Point3<f64>,
    pub degree: usize,
}

/// Curve geometry between two nodes; the first and last samples coincide
/// with the node positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    pub points: Vec<Point3<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DrawingGraph {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    /// Connected component of every node, numbered by smallest node id.
    pub cluster_of: Vec<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node {node} stores degree {stored} but has {actual} incident link ends")]
    DegreeMismatch { node: usize, stored: usize, actual: usize },
    #[error("node {node} has invalid degree {degree}")]
    InvalidDegree { node: usize, degree: usize },
    #[error("link {link} references missing node {node}")]
    MissingNode { link: usize, node: usize },
    #[error("link {link} has fewer than two samples")]
    ShortLink { link: usize },
    #[error("link {link} does not start and end at its node positions")]
    EndpointMismatch { link: usize },
    #[error("cluster ids do not match the connected components")]
    ClusterMismatch,
}

#[derive(Debug, Error)]
pub enum GraphFormatError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("graph read from file violates invariants: {0}")]
    Invalid(#[from] GraphError),
}

impl DrawingGraph {
    /// Builds a graph from links, deriving degrees and clusters.
    pub fn from_parts(positions: Vec<Point3<f64>>, links: Vec<Link>) -> Self {
        let mut g = Self {
            nodes: positions.into_iter().map(|position| Node { position, degree: 0 }).collect(),
            links,
            cluster_of: Vec::new(),
        };
        g.recompute();
        g
    }

    fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for l in &self.links {
            if l.a < deg.len() {
                deg[l.a] += 1;
            }
            if l.b < deg.len() {
                deg[l.b] += 1;
            }
        }
        deg
    }

    fn components(&self) -> Vec<usize> {
        let mut uf = UnionFind::<usize>::new(self.nodes.len());
        for l in &self.links {
            uf.union(l.a, l.b);
        }
        let mut label = vec![usize::MAX; self.nodes.len()];
        let mut root_label = std::collections::BTreeMap::new();
        for (n, slot) in label.iter_mut().enumerate() {
            let r = uf.find(n);
            let next = root_label.len();
            *slot = *root_label.entry(r).or_insert(next);
        }
        label
    }

    /// Recomputes node degrees and cluster ids from the links.
    pub fn recompute(&mut self) {
        for (n, d) in self.degrees().into_iter().enumerate() {
            self.nodes[n].degree = d;
        }
        self.cluster_of = self.components();
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn junctions(&self) -> impl Iterator<Item = (usize, &Node)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.degree >= 3)
    }

    pub fn junction_count(&self) -> usize {
        self.junctions().count()
    }

    pub fn endpoint_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.degree == 1).count()
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_of.iter().max().map_or(0, |m| m + 1)
    }

    /// Cluster id of a link.
    pub fn link_cluster(&self, link: usize) -> usize {
        self.cluster_of[self.links[link].a]
    }

    pub fn total_length(&self) -> f64 {
        use crate::curve::ArcLength;
        self.links.iter().map(|l| l.points.arc_length()).sum()
    }

    pub fn polylines(&self) -> Vec<Vec<Point3<f64>>> {
        self.links.iter().map(|l| l.points.clone()).collect()
    }

    /// Checks degrees, endpoint coincidence and cluster labelling.
    pub fn check_invariants(&self) -> Result<(), GraphError> {
        for (k, l) in self.links.iter().enumerate() {
            for n in [l.a, l.b] {
                if n >= self.nodes.len() {
                    return Err(GraphError::MissingNode { link: k, node: n });
                }
            }
            if l.points.len() < 2 {
                return Err(GraphError::ShortLink { link: k });
            }
            if l.points[0] != self.nodes[l.a].position || *l.points.last().unwrap() != self.nodes[l.b].position {
                return Err(GraphError::EndpointMismatch { link: k });
            }
        }
        let deg = self.degrees();
        for (n, node) in self.nodes.iter().enumerate() {
            if node.degree != deg[n] {
                return Err(GraphError::DegreeMismatch { node: n, stored: node.degree, actual: deg[n] });
            }
            let loop_anchor = deg[n] == 2 && self.links.iter().any(|l| l.a == n && l.b == n);
            if deg[n] == 0 || (deg[n] == 2 && !loop_anchor) {
                return Err(GraphError::InvalidDegree { node: n, degree: deg[n] });
            }
        }
        if self.cluster_of != self.components() {
            return Err(GraphError::ClusterMismatch);
        }
        Ok(())
    }

    /// Text form: `nodes N` followed by `id x y z degree` lines, then
    /// `links L` followed by `id a b n x y z ...` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        for (k, n) in self.nodes.iter().enumerate() {
            let p = n.position;
            let _ = writeln!(s, "{k} {} {} {} {}", p.x, p.y, p.z, n.degree);
        }
        let _ = writeln!(s, "links {}", self.links.len());
        for (k, l) in self.links.iter().enumerate() {
            let _ = write!(s, "{k} {} {} {}", l.a, l.b, l.points.len());
            for p in &l.points {
                let _ = write!(s, " {} {} {}", p.x, p.y, p.z);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, GraphFormatError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        let err = |line: usize, message: &str| GraphFormatError::Parse { line, message: message.to_string() };
        let header = |line: Option<&(usize, &str)>, name: &str| -> Result<usize, GraphFormatError> {
            let &(ln, l) = line.ok_or_else(|| err(0, &format!("missing `{name}` header")))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(name) {
                return Err(err(ln, &format!("expected `{name} <count>`")));
            }
            it.next().and_then(|c| c.parse().ok()).ok_or_else(|| err(ln, "bad count"))
        };
        let numbers = |&(ln, l): &(usize, &str)| -> Result<(usize, Vec<f64>), GraphFormatError> {
            let nums = l
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(ln, &format!("bad number `{t}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((ln, nums))
        };

        let n_nodes = header(lines.first(), "nodes")?;
        let body = lines.get(1..1 + n_nodes).ok_or_else(|| err(0, "unexpected end of file in nodes"))?;
        let mut positions = Vec::with_capacity(n_nodes);
        let mut stored = Vec::with_capacity(n_nodes);
        for (k, line) in body.iter().enumerate() {
            let (ln, v) = numbers(line)?;
            if v.len() != 5 || v[0] as usize != k {
                return Err(err(ln, "expected `id x y z degree`"));
            }
            positions.push(Point3::new(v[1], v[2], v[3]));
            stored.push(v[4] as usize);
        }
        let n_links = header(lines.get(1 + n_nodes), "links")?;
        let first = 2 + n_nodes;
        let body = lines.get(first..first + n_links).ok_or_else(|| err(0, "unexpected end of file in links"))?;
        let mut links = Vec::with_capacity(n_links);
        for (k, line) in body.iter().enumerate() {
            let (ln, v) = numbers(line)?;
            if v.len() < 4 || v[0] as usize != k {
                return Err(err(ln, "expected `id a b n x y z ...`"));
            }
            let n = v[3] as usize;
            if v.len() != 4 + 3 * n {
                return Err(err(ln, "sample count does not match coordinates"));
            }
            let (a, b) = (v[1] as usize, v[2] as usize);
            if a >= n_nodes || b >= n_nodes {
                return Err(GraphError::MissingNode { link: k, node: a.max(b) }.into());
            }
            let points = v[4..].chunks(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
            links.push(Link { a, b, points });
        }
        if let Some(&(ln, _)) = lines.get(first + n_links) {
            return Err(err(ln, "trailing content"));
        }
        let g = Self::from_parts(positions, links);
        for (n, (node, s)) in g.nodes.iter().zip(stored).enumerate() {
            if node.degree != s {
                return Err(GraphError::DegreeMismatch { node: n, stored: s, actual: node.degree }.into());
            }
        }
        g.check_invariants()?;
        Ok(g)
    }
}
