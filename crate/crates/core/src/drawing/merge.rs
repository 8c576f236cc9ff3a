use std::collections::BTreeMap;

use nalgebra::Point3;
use petgraph::unionfind::UnionFind;

use super::primitives::{clean_mask, roughly_parallel, runs, tangent, tangent_at, PrimitiveKind, MIN_OVERLAP_RUN};
use super::{DrawingGraph, Link};
use crate::curve::ArcLength;
use crate::spatial::{closest_on_segment, PolylineIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeParams {
    /// Distance under which a sample overlaps the graph.
    pub d_merge: f64,
    /// Free curve ends closer than this to the graph are joined to it, and
    /// dangling branches shorter than this are removed.
    pub junction_radius: f64,
    /// Attachment points closer than this to an existing node reuse it.
    pub snap_radius: f64,
    /// Isolated components shorter than this are dropped from the drawing.
    pub min_component_length: f64,
    /// Links lying entirely within this distance of the rest of the graph
    /// duplicate it and are removed.
    pub duplicate_radius: f64,
}

impl MergeParams {
    /// Defaults for curves sampled at spacing `ds`.
    pub fn for_spacing(ds: f64) -> Self {
        Self {
            d_merge: 2.0 * ds, junction_radius: 20.0 * ds, snap_radius: 4.0 * ds, min_component_length: 20.0 * ds,
            duplicate_radius: 10.0 * ds,
        }
    }
}

/// A merging step: which curve was merged and which primitive it realised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeEvent {
    pub curve: usize,
    pub kind: PrimitiveKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeReport {
    pub events: Vec<MergeEvent>,
    /// Curves that overlapped nothing and were added as separate chains.
    pub disjoint: Vec<usize>,
}

impl MergeReport {
    pub fn count(&self, kind: PrimitiveKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

#[derive(Debug, Clone)]
struct WLink {
    a: usize,
    b: usize,
    pts: Vec<Point3<f64>>,
    /// Number of curve samples averaged into each point.
    w: Vec<f64>,
    alive: bool,
}

#[derive(Debug, Clone)]
struct WNode {
    pos: Point3<f64>,
    alive: bool,
}

/// Mutable graph used while merging; removed elements are tombstoned and
/// compacted when converting back to a [`DrawingGraph`].
#[derive(Debug, Clone, Default)]
struct WorkGraph {
    nodes: Vec<WNode>,
    links: Vec<WLink>,
}

struct NearestSample {
    link: usize,
    segment: usize,
    t: f64,
    point: Point3<f64>,
    distance: f64,
}

impl WorkGraph {
    fn from_graph(g: &DrawingGraph) -> Self {
        Self {
            nodes: g.nodes.iter().map(|n| WNode { pos: n.position, alive: true }).collect(),
            links: g
                .links
                .iter()
                .map(|l| WLink { a: l.a, b: l.b, pts: l.points.clone(), w: vec![1.0; l.points.len()], alive: true })
                .collect(),
        }
    }

    fn is_empty(&self) -> bool {
        !self.links.iter().any(|l| l.alive)
    }

    fn add_node(&mut self, pos: Point3<f64>) -> usize {
        self.nodes.push(WNode { pos, alive: true });
        self.nodes.len() - 1
    }

    /// Adds a link, snapping its end samples onto the node positions.
    fn add_link(&mut self, a: usize, b: usize, mut pts: Vec<Point3<f64>>) -> usize {
        let pa = self.nodes[a].pos;
        let pb = self.nodes[b].pos;
        if pts.first() != Some(&pa) {
            pts.insert(0, pa);
        }
        if pts.last() != Some(&pb) {
            pts.push(pb);
        }
        if pts.len() < 2 {
            pts.push(pb);
        }
        pts.dedup();
        if pts.len() < 2 {
            pts.push(pb);
        }
        let w = vec![1.0; pts.len()];
        self.links.push(WLink { a, b, pts, w, alive: true });
        self.links.len() - 1
    }

    fn degree(&self, n: usize) -> usize {
        self.links.iter().filter(|l| l.alive).map(|l| (l.a == n) as usize + (l.b == n) as usize).sum()
    }

    /// Incident link ends of `n` as `(link, at_start)`.
    fn incident(&self, n: usize) -> Vec<(usize, bool)> {
        let mut out = Vec::new();
        for (k, l) in self.links.iter().enumerate().filter(|(_, l)| l.alive) {
            if l.a == n {
                out.push((k, true));
            }
            if l.b == n {
                out.push((k, false));
            }
        }
        out
    }

    fn remove_link(&mut self, k: usize) {
        self.links[k].alive = false;
        for n in [self.links[k].a, self.links[k].b] {
            if self.degree(n) == 0 {
                self.nodes[n].alive = false;
            }
        }
    }

    /// Splits link `k` at interior sample `m`, returning the new node.
    fn split(&mut self, k: usize, m: usize) -> usize {
        let pos = self.links[k].pts[m];
        let n = self.add_node(pos);
        let tail_pts = self.links[k].pts[m..].to_vec();
        let tail_w = self.links[k].w[m..].to_vec();
        let b = self.links[k].b;
        self.links[k].pts.truncate(m + 1);
        self.links[k].w.truncate(m + 1);
        self.links[k].b = n;
        self.links.push(WLink { a: n, b, pts: tail_pts, w: tail_w, alive: true });
        n
    }

    fn nearest(&self, p: &Point3<f64>, exclude: Option<usize>) -> Option<NearestSample> {
        let mut best: Option<NearestSample> = None;
        for (k, l) in self.links.iter().enumerate() {
            if !l.alive || Some(k) == exclude {
                continue;
            }
            for (s, w) in l.pts.windows(2).enumerate() {
                let (t, q) = closest_on_segment(p, &w[0], &w[1]);
                let d = (p - q).norm();
                if best.as_ref().map_or(true, |b| d < b.distance) {
                    best = Some(NearestSample { link: k, segment: s, t, point: q, distance: d });
                }
            }
        }
        best
    }

    /// Node at `p`: an existing node within `snap`, a link end within `snap`
    /// along the link, or a new node splitting the closest link.
    fn attach_at(&mut self, p: &Point3<f64>, snap: f64, exclude: Option<usize>) -> Option<usize> {
        let near = self.nearest(p, exclude)?;
        let mut best_node: Option<(f64, usize)> = None;
        for (n, node) in self.nodes.iter().enumerate() {
            if !node.alive {
                continue;
            }
            if let Some(x) = exclude {
                let l = &self.links[x];
                if (l.a == n || l.b == n) && self.degree(n) == 1 {
                    continue;
                }
            }
            let d = (node.pos - near.point).norm();
            if d <= snap && best_node.map_or(true, |(bd, _)| d < bd) {
                best_node = Some((d, n));
            }
        }
        if let Some((_, n)) = best_node {
            return Some(n);
        }
        let l = &self.links[near.link];
        let m = if near.t < 0.5 { near.segment } else { near.segment + 1 };
        let last = l.pts.len() - 1;
        let before = l.pts[..=m].arc_length();
        let after = l.pts[m..].arc_length();
        if m == 0 || before <= snap {
            return Some(l.a);
        }
        if m == last || after <= snap {
            return Some(l.b);
        }
        Some(self.split(near.link, m))
    }

    /// Reconnects the free end of link `k` to the graph when the graph is
    /// within `radius`. Returns the kind of attachment made.
    fn attach_free_end(&mut self, k: usize, at_start: bool, params: &MergeParams) -> Option<PrimitiveKind> {
        let end = if at_start { self.links[k].a } else { self.links[k].b };
        let other = if at_start { self.links[k].b } else { self.links[k].a };
        if self.degree(end) != 1 {
            return None;
        }
        let p = self.nodes[end].pos;
        let near = self.nearest(&p, Some(k))?;
        if near.distance > params.junction_radius {
            return None;
        }
        let target = self.attach_at(&near.point, params.snap_radius, Some(k))?;
        if target == other || target == end {
            return None;
        }
        let prior = self.degree(target);
        let pos = self.nodes[target].pos;
        let l = &mut self.links[k];
        if at_start {
            l.pts.insert(0, pos);
            l.w.insert(0, 1.0);
            l.a = target;
        } else {
            l.pts.push(pos);
            l.w.push(1.0);
            l.b = target;
        }
        // A split leaves the new node with degree 2.
        let kind = match prior {
            1 => {
                if at_start {
                    PrimitiveKind::HeadOverlap
                } else {
                    PrimitiveKind::TailOverlap
                }
            }
            2 if self.incident(target).iter().all(|&(x, _)| self.links[x].a != self.links[x].b) => {
                PrimitiveKind::EndInterior
            }
            _ => PrimitiveKind::MultiEndAttachment,
        };
        self.nodes[end].alive = false;
        let l = &mut self.links[k];
        if l.pts.len() >= 2 && l.pts[0] == l.pts[1] {
            l.pts.remove(1);
            l.w.remove(1);
        }
        let n = l.pts.len();
        if n >= 2 && l.pts[n - 1] == l.pts[n - 2] {
            l.pts.remove(n - 2);
            l.w.remove(n - 2);
        }
        Some(kind)
    }

    /// Joins the two links meeting at every degree-2 node.
    fn dissolve_degree2(&mut self) {
        let mut changed = true;
        while changed {
            changed = false;
            for n in 0..self.nodes.len() {
                if !self.nodes[n].alive {
                    continue;
                }
                let inc = self.incident(n);
                if inc.len() != 2 || inc[0].0 == inc[1].0 {
                    continue;
                }
                let (k1, s1) = inc[0];
                let (k2, s2) = inc[1];
                let mut l1 = self.links[k1].clone();
                let mut l2 = self.links[k2].clone();
                if s1 {
                    l1.pts.reverse();
                    l1.w.reverse();
                    std::mem::swap(&mut l1.a, &mut l1.b);
                }
                if !s2 {
                    l2.pts.reverse();
                    l2.w.reverse();
                    std::mem::swap(&mut l2.a, &mut l2.b);
                }
                l1.pts.extend_from_slice(&l2.pts[1..]);
                l1.w.extend_from_slice(&l2.w[1..]);
                l1.b = l2.b;
                self.links[k1] = l1;
                self.links[k2].alive = false;
                self.nodes[n].alive = false;
                changed = true;
            }
        }
    }

    /// Removes dangling branches shorter than `min_len` hanging off
    /// junctions.
    fn prune_spurs(&mut self, min_len: f64) {
        loop {
            let mut removed = false;
            for k in 0..self.links.len() {
                let l = &self.links[k];
                if !l.alive || l.a == l.b {
                    continue;
                }
                let (da, db) = (self.degree(l.a), self.degree(l.b));
                let spur = (da == 1 && db >= 3) || (db == 1 && da >= 3);
                if spur && l.pts.arc_length() < min_len {
                    self.remove_link(k);
                    removed = true;
                }
            }
            if !removed {
                break;
            }
            self.dissolve_degree2();
        }
    }

    fn to_graph(&self) -> DrawingGraph {
        let mut remap = BTreeMap::new();
        let mut positions = Vec::new();
        for (n, node) in self.nodes.iter().enumerate() {
            if node.alive && self.links.iter().any(|l| l.alive && (l.a == n || l.b == n)) {
                remap.insert(n, positions.len());
                positions.push(node.pos);
            }
        }
        let links = self
            .links
            .iter()
            .filter(|l| l.alive)
            .map(|l| Link { a: remap[&l.a], b: remap[&l.b], points: l.pts.clone() })
            .collect();
        DrawingGraph::from_parts(positions, links)
    }

    fn debug_check(&self) {
        if cfg!(debug_assertions) {
            if let Err(e) = self.to_graph().check_invariants() {
                panic!("drawing graph invariant violated during merge: {e}");
            }
        }
    }

    /// Merges one curve into the graph.
    fn merge_curve(&mut self, curve_id: usize, pts: &[Point3<f64>], params: &MergeParams, report: &mut MergeReport) {
        let n = pts.len();
        if n < 2 {
            return;
        }
        if self.is_empty() {
            let a = self.add_node(pts[0]);
            let b = self.add_node(pts[n - 1]);
            self.add_link(a, b, pts.to_vec());
            return;
        }
        let alive: Vec<usize> = (0..self.links.len()).filter(|&k| self.links[k].alive).collect();
        let index = PolylineIndex::new(alive.iter().map(|&k| self.links[k].pts.clone()).collect(), params.d_merge * 2.0);
        let cps: Vec<_> = pts.iter().map(|p| index.nearest(p).expect("graph is not empty")).collect();
        let mut mask: Vec<bool> = cps
            .iter()
            .enumerate()
            .map(|(k, cp)| {
                let l = &self.links[alive[cp.polyline]].pts;
                cp.distance <= params.d_merge && roughly_parallel(&tangent(pts, k), &tangent_at(l, cp.segment, cp.t))
            })
            .collect();
        clean_mask(&mut mask, MIN_OVERLAP_RUN);

        if !mask.iter().any(|&m| m) {
            let a = self.add_node(pts[0]);
            let b = self.add_node(pts[n - 1]);
            let k = self.add_link(a, b, pts.to_vec());
            report.disjoint.push(curve_id);
            for at_start in [true, false] {
                if let Some(kind) = self.attach_free_end(k, at_start, params) {
                    report.events.push(MergeEvent { curve: curve_id, kind });
                }
            }
            self.dissolve_degree2();
            self.debug_check();
            return;
        }

        if mask.iter().all(|&m| m) {
            report.events.push(MergeEvent { curve: curve_id, kind: PrimitiveKind::InteriorInterior { identity: true } });
        }

        // Average overlapping samples into the closest graph samples.
        let mut acc: BTreeMap<(usize, usize), (nalgebra::Vector3<f64>, f64)> = BTreeMap::new();
        for (k, cp) in cps.iter().enumerate().filter(|(k, _)| mask[*k]) {
            let link = alive[cp.polyline];
            let m = if cp.t < 0.5 { cp.segment } else { cp.segment + 1 };
            let e = acc.entry((link, m)).or_insert((nalgebra::Vector3::zeros(), 0.0));
            e.0 += pts[k].coords;
            e.1 += 1.0;
        }
        for ((link, m), (sum, count)) in acc {
            let l = &mut self.links[link];
            if m == 0 || m + 1 >= l.pts.len() {
                continue;
            }
            let w = l.w[m];
            l.pts[m] = nalgebra::Point3::from((l.pts[m].coords * w + sum) / (w + count));
            l.w[m] = w + count;
        }

        // Stretches off the graph become new links.
        let mut new_ends: Vec<(usize, bool)> = Vec::new();
        for r in runs(&mask, false) {
            // Stretches that never leave the graph's vicinity only retrace it.
            if cps[r.clone()].iter().all(|cp| cp.distance <= params.duplicate_radius) {
                continue;
            }
            let head = r.start == 0;
            let tail = r.end == n;
            if head && tail {
                continue;
            }
            if head || tail {
                let (anchor, geometry): (usize, Vec<Point3<f64>>) = if head {
                    (r.end, pts[..=r.end].iter().rev().copied().collect())
                } else {
                    (r.start - 1, pts[r.start - 1..].to_vec())
                };
                if geometry.arc_length() < params.junction_radius {
                    continue;
                }
                let Some(na) = self.attach_at(&cps[anchor].point, params.snap_radius, None) else { continue };
                let prior = self.degree(na);
                let free = self.add_node(*geometry.last().unwrap());
                let k = self.add_link(na, free, geometry[1..].to_vec());
                new_ends.push((k, false));
                // A free head means the curve's tail lies on the graph.
                let kind = match prior {
                    1 if head => PrimitiveKind::TailOverlap,
                    1 => PrimitiveKind::HeadOverlap,
                    _ => PrimitiveKind::EndInterior,
                };
                report.events.push(MergeEvent { curve: curve_id, kind });
            } else {
                let Some(na) = self.attach_at(&cps[r.start - 1].point, params.snap_radius, None) else { continue };
                let Some(nb) = self.attach_at(&cps[r.end].point, params.snap_radius, None) else { continue };
                if na == nb {
                    continue;
                }
                self.add_link(na, nb, pts[r.clone()].to_vec());
                report.events.push(MergeEvent { curve: curve_id, kind: PrimitiveKind::Bridge });
            }
        }
        for (k, at_start) in new_ends {
            if let Some(kind) = self.attach_free_end(k, at_start, params) {
                report.events.push(MergeEvent { curve: curve_id, kind });
            }
        }
        self.dissolve_degree2();
        self.debug_check();
    }

    /// Joins curve ends that lie close together, then ends that lie close
    /// to other links.
    fn stitch(&mut self, params: &MergeParams) {
        let ends: Vec<usize> = (0..self.nodes.len()).filter(|&n| self.nodes[n].alive && self.degree(n) == 1).collect();
        let mut uf = UnionFind::<usize>::new(ends.len());
        for x in 0..ends.len() {
            for y in x + 1..ends.len() {
                let (p, q) = (self.nodes[ends[x]].pos, self.nodes[ends[y]].pos);
                if (p - q).norm() > params.junction_radius {
                    continue;
                }
                let same_short_link = self.links.iter().any(|l| {
                    l.alive
                        && ((l.a == ends[x] && l.b == ends[y]) || (l.a == ends[y] && l.b == ends[x]))
                        && l.pts.arc_length() < 3.0 * params.junction_radius
                });
                if !same_short_link {
                    uf.union(x, y);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (x, &n) in ends.iter().enumerate() {
            groups.entry(uf.find(x)).or_default().push(n);
        }
        for members in groups.values().filter(|m| m.len() >= 2) {
            let sum: nalgebra::Vector3<f64> = members.iter().map(|&n| self.nodes[n].pos.coords).sum();
            let c = Point3::from(sum / members.len() as f64);
            let hub = self.add_node(c);
            for &n in members {
                for (k, at_start) in self.incident(n) {
                    let l = &mut self.links[k];
                    if at_start {
                        l.pts.insert(0, c);
                        l.w.insert(0, 1.0);
                        l.a = hub;
                    } else {
                        l.pts.push(c);
                        l.w.push(1.0);
                        l.b = hub;
                    }
                    l.pts.dedup();
                    l.w.truncate(l.pts.len());
                }
                self.nodes[n].alive = false;
            }
        }
        for n in 0..self.nodes.len() {
            if !self.nodes[n].alive {
                continue;
            }
            if let [(k, at_start)] = self.incident(n)[..] {
                self.attach_free_end(k, at_start, params);
            }
        }
        self.dissolve_degree2();
    }

    /// Removes links that only retrace other links: short self-loops and
    /// links whose every sample lies within `duplicate_radius` of the rest of
    /// the graph, shortest first. Ends left free are joined back to the graph.
    fn remove_redundant(&mut self, params: &MergeParams) {
        let mut order: Vec<(f64, usize)> =
            (0..self.links.len()).filter(|&k| self.links[k].alive).map(|k| (self.links[k].pts.arc_length(), k)).collect();
        order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut freed = Vec::new();
        for (len, k) in order {
            let l = &self.links[k];
            if !l.alive {
                continue;
            }
            let redundant = if l.a == l.b {
                len < 4.0 * params.junction_radius
            } else {
                let others: Vec<Vec<Point3<f64>>> = self
                    .links
                    .iter()
                    .enumerate()
                    .filter(|&(x, o)| o.alive && x != k)
                    .map(|(_, o)| o.pts.clone())
                    .collect();
                !others.is_empty() && {
                    let index = PolylineIndex::new(others, params.duplicate_radius);
                    l.pts.iter().all(|p| index.distance_within(p, params.duplicate_radius))
                }
            };
            if redundant {
                freed.extend([self.links[k].a, self.links[k].b]);
                self.remove_link(k);
            }
        }
        self.dissolve_degree2();
        for n in freed {
            if !self.nodes[n].alive {
                continue;
            }
            if let [(k, at_start)] = self.incident(n)[..] {
                self.attach_free_end(k, at_start, params);
            }
        }
        self.dissolve_degree2();
    }

    fn drop_small_components(&mut self, min_len: f64) {
        let g = self.to_graph();
        let mut length = vec![0.0; g.cluster_count()];
        for (k, l) in g.links.iter().enumerate() {
            length[g.link_cluster(k)] += l.points.arc_length();
        }
        let alive: Vec<usize> = (0..self.links.len()).filter(|&k| self.links[k].alive).collect();
        for (gk, &k) in alive.iter().enumerate() {
            if length[g.link_cluster(gk)] < min_len {
                self.remove_link(k);
            }
        }
    }
}

/// Merges converged curves of one cluster into a junction graph, longest
/// curve first. Overlapping stretches are averaged into the graph; stretches
/// that leave it become new links meeting it at junctions.
pub fn merge_cluster(curves: &[Vec<Point3<f64>>], params: &MergeParams) -> (DrawingGraph, MergeReport) {
    let mut order: Vec<usize> = (0..curves.len()).filter(|&k| curves[k].len() >= 2).collect();
    let lengths: Vec<f64> = curves.iter().map(|c| c.arc_length()).collect();
    order.sort_by(|&x, &y| lengths[y].total_cmp(&lengths[x]).then(x.cmp(&y)));
    let mut g = WorkGraph::default();
    let mut report = MergeReport::default();
    for k in order {
        g.merge_curve(k, &curves[k], params, &mut report);
    }
    g.remove_redundant(params);
    g.prune_spurs(params.junction_radius);
    g.dissolve_degree2();
    let out = g.to_graph();
    debug_assert_eq!(out.check_invariants(), Ok(()));
    (out, report)
}

/// Unites per-cluster graphs into the final drawing: drops tiny isolated
/// pieces, joins nearby curve ends into junctions and attaches ends lying
/// next to other curves. Cluster ids are the connected components of the
/// result.
pub fn build_drawing(components: &[DrawingGraph], params: &MergeParams) -> DrawingGraph {
    let mut g = WorkGraph::default();
    for c in components {
        let offset = g.nodes.len();
        let w = WorkGraph::from_graph(c);
        g.nodes.extend(w.nodes);
        g.links.extend(w.links.into_iter().map(|mut l| {
            l.a += offset;
            l.b += offset;
            l
        }));
    }
    g.drop_small_components(params.min_component_length);
    g.remove_redundant(params);
    g.stitch(params);
    g.prune_spurs(params.junction_radius);
    g.dissolve_degree2();
    let out = g.to_graph();
    debug_assert_eq!(out.check_invariants(), Ok(()));
    out
}
