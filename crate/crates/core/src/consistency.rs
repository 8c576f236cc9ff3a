//! Sample-level (MLN) and curve-level (MCCN) consistency networks built from
//! 2D edgels shared between the supports of different 3D curves.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;

use crate::curve::Curve3D;

/// Ordered curve pair `(i, j)` with `i < j`.
pub type CurvePair = (usize, usize);

/// Sample pair `(s, t)`: sample `s` of the lower curve, `t` of the higher.
pub type SamplePair = (usize, usize);

/// Default minimum weight of a strong sample link.
pub const TAU_EPS: u32 = 3;

/// Default number of strong sample links needed to link two curves.
pub const TAU_SL: usize = 5;

/// Multiview local consistency network: for each unordered curve pair, the
/// number of views in which two samples share supporting edgels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Mln {
    links: BTreeMap<CurvePair, BTreeMap<SamplePair, u32>>,
}

impl Mln {
    pub fn new() -> Self {
        Self::default()
    }

    /// Weight between sample `s` of curve `i` and sample `t` of curve `j`;
    /// symmetric in its arguments.
    pub fn weight(&self, i: usize, s: usize, j: usize, t: usize) -> u32 {
        let (key, st) = if i < j { ((i, j), (s, t)) } else { ((j, i), (t, s)) };
        self.links.get(&key).and_then(|m| m.get(&st)).copied().unwrap_or(0)
    }

    /// Sets the weight of a sample pair; zero removes it.
    pub fn set(&mut self, i: usize, s: usize, j: usize, t: usize, w: u32) {
        assert_ne!(i, j, "MLN links join distinct curves");
        let (key, st) = if i < j { ((i, j), (s, t)) } else { ((j, i), (t, s)) };
        if w == 0 {
            if let Some(m) = self.links.get_mut(&key) {
                m.remove(&st);
                if m.is_empty() {
                    self.links.remove(&key);
                }
            }
        } else {
            self.links.entry(key).or_default().insert(st, w);
        }
    }

    /// Links of the pair `(i, j)` as `(s on i, t on j) -> weight`, in the
    /// caller's orientation.
    pub fn pair_links(&self, i: usize, j: usize) -> BTreeMap<SamplePair, u32> {
        if i < j {
            self.links.get(&(i, j)).cloned().unwrap_or_default()
        } else {
            self.links
                .get(&(j, i))
                .map(|m| m.iter().map(|(&(t, s), &w)| ((s, t), w)).collect())
                .unwrap_or_default()
        }
    }

    /// Curve pairs with at least one link, ascending.
    pub fn pairs(&self) -> impl Iterator<Item = CurvePair> + '_ {
        self.links.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CurvePair, &BTreeMap<SamplePair, u32>)> {
        self.links.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.links.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// For each of the `n` samples of curve `i`, the curves it has a link to.
    pub fn sample_partners(&self, i: usize, n: usize) -> Vec<BTreeSet<usize>> {
        let mut out = vec![BTreeSet::new(); n];
        for (&(a, b), m) in &self.links {
            if a == i {
                for &(s, _) in m.keys() {
                    if s < n {
                        out[s].insert(b);
                    }
                }
            } else if b == i {
                for &(_, t) in m.keys() {
                    if t < n {
                        out[t].insert(a);
                    }
                }
            }
        }
        out
    }
}

/// Builds the MLN. Two samples are linked in a view when they share a
/// supporting edgel there, and the link weight counts such views. Each
/// sample keeps only its best partner on every other curve: the partner
/// sample linked in the most views, taken from the middle of the run of
/// equally good candidates.
pub fn build_mln(curves: &[Curve3D]) -> Mln {
    // (view, edgel) -> curve -> range of supported sample indices.
    let mut ranges: BTreeMap<(usize, usize), BTreeMap<usize, (usize, usize)>> = BTreeMap::new();
    for (ci, c) in curves.iter().enumerate() {
        for (k, s) in c.samples().iter().enumerate() {
            for (&v, ids) in &s.support {
                for &e in ids {
                    ranges
                        .entry((v, e))
                        .or_default()
                        .entry(ci)
                        .and_modify(|r| *r = (r.0.min(k), r.1.max(k)))
                        .or_insert((k, k));
                }
            }
        }
    }
    let per_curve: Vec<Vec<(usize, usize, usize, u32)>> = curves
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut out = Vec::new();
            for (s, smp) in c.samples().iter().enumerate() {
                let mut per_partner: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
                for (&v, ids) in &smp.support {
                    let mut in_view: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
                    for &e in ids {
                        for (&j, &(lo, hi)) in ranges.get(&(v, e)).into_iter().flatten() {
                            if j != i {
                                in_view.entry(j).and_modify(|r| *r = (r.0.min(lo), r.1.max(hi))).or_insert((lo, hi));
                            }
                        }
                    }
                    for (j, r) in in_view {
                        per_partner.entry(j).or_default().push(r);
                    }
                }
                for (j, rs) in per_partner {
                    let (t, w) = best_covered(&rs);
                    out.push((j, s, t, w));
                }
            }
            out
        })
        .collect();
    let mut mln = Mln::new();
    for (i, links) in per_curve.into_iter().enumerate() {
        for (j, s, t, w) in links {
            if w > mln.weight(i, s, j, t) {
                mln.set(i, s, j, t, w);
            }
        }
    }
    mln
}

/// The index covered by the most inclusive ranges and that count; ties
/// resolve to the middle of the first maximal run.
fn best_covered(ranges: &[(usize, usize)]) -> (usize, u32) {
    let mut events: Vec<(usize, i32)> = ranges.iter().flat_map(|&(lo, hi)| [(lo, 1), (hi + 1, -1)]).collect();
    events.sort_unstable_by_key(|&(x, d)| (x, d));
    let (mut depth, mut best, mut start, mut end) = (0i32, 0i32, 0usize, 0usize);
    let mut in_best = false;
    for (x, d) in events {
        if in_best {
            end = x;
            in_best = false;
        }
        depth += d;
        if depth > best {
            best = depth;
            start = x;
            in_best = true;
        }
    }
    if in_best {
        end = start + 1;
    }
    (start + (end - 1 - start) / 2, best as u32)
}

/// Multiview curve-level consistency network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mccn {
    /// Linked curve pairs with their number of strong local links.
    pub links: BTreeMap<CurvePair, usize>,
    /// Connected components, each sorted, ordered by smallest member.
    pub clusters: Vec<Vec<usize>>,
    /// Cluster index of each curve.
    pub cluster_of: Vec<usize>,
}

impl Mccn {
    pub fn linked(&self, i: usize, j: usize) -> bool {
        self.links.contains_key(&(i.min(j), i.max(j)))
    }

    /// Curves linked to `i`, ascending.
    pub fn neighbours(&self, i: usize) -> Vec<usize> {
        self.links
            .keys()
            .filter_map(|&(a, b)| if a == i { Some(b) } else if b == i { Some(a) } else { None })
            .collect()
    }
}

/// Links two curves when at least `tau_sl` of their sample pairs have weight
/// `>= tau_eps`, then clusters the `n_curves` curves by connected component.
pub fn build_mccn(mln: &Mln, n_curves: usize, tau_eps: u32, tau_sl: usize) -> Mccn {
    let mut links = BTreeMap::new();
    let mut uf = UnionFind::<usize>::new(n_curves);
    for (pair, m) in mln.iter() {
        let strong = m.values().filter(|&&w| w >= tau_eps).count();
        if strong >= tau_sl && strong > 0 {
            links.insert(pair, strong);
            uf.union(pair.0, pair.1);
        }
    }
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for c in 0..n_curves {
        by_root.entry(uf.find(c)).or_default().push(c);
    }
    let mut clusters: Vec<Vec<usize>> = by_root.into_values().collect();
    clusters.sort_by_key(|c| c[0]);
    let mut cluster_of = vec![0; n_curves];
    for (k, members) in clusters.iter().enumerate() {
        for &c in members {
            cluster_of[c] = k;
        }
    }
    Mccn { links, clusters, cluster_of }
}

/// Best partner of each linked sample: highest weight, then lowest index.
fn representatives(links: &BTreeMap<SamplePair, u32>) -> BTreeMap<usize, (usize, u32)> {
    let mut rep: BTreeMap<usize, (usize, u32)> = BTreeMap::new();
    for (&(s, t), &w) in links {
        match rep.get(&s) {
            Some(&(_, bw)) if bw >= w => {}
            _ => {
                rep.insert(s, (t, w));
            }
        }
    }
    rep
}

/// Interpolated links for holes of at most `g_max` samples along the first
/// index, returned as `(s, t, w)`.
fn fill_along(links: &BTreeMap<SamplePair, u32>, g_max: usize) -> Vec<(usize, usize, u32)> {
    let rep = representatives(links);
    let mut out = Vec::new();
    let linked: Vec<(usize, (usize, u32))> = rep.into_iter().collect();
    for w in linked.windows(2) {
        let (sa, (ta, wa)) = w[0];
        let (sb, (tb, wb)) = w[1];
        let hole = sb - sa - 1;
        if hole == 0 || hole > g_max || ta.abs_diff(tb) > 2 * (g_max + 1) {
            continue;
        }
        for s in sa + 1..sb {
            let f = (s - sa) as f64 / (sb - sa) as f64;
            let t = (ta as f64 + (tb as f64 - ta as f64) * f).round() as usize;
            out.push((s, t, wa.min(wb)));
        }
    }
    out
}

/// Fills holes of at most `g_max` unlinked samples between linked samples of
/// curve pairs that are linked in the MCCN. Filled links take the smaller of
/// the two flanking weights; existing links are never changed.
pub fn gap_fill(mln: &Mln, mccn: &Mccn, g_max: usize) -> Mln {
    let mut out = mln.clone();
    for &(i, j) in mccn.links.keys() {
        let links = mln.pair_links(i, j);
        let mut added = fill_along(&links, g_max);
        let transposed: BTreeMap<SamplePair, u32> = links.iter().map(|(&(s, t), &w)| ((t, s), w)).collect();
        added.extend(fill_along(&transposed, g_max).into_iter().map(|(t, s, w)| (s, t, w)));
        for (s, t, w) in added {
            if out.weight(i, s, j, t) == 0 {
                out.set(i, s, j, t, w);
            }
        }
    }
    out
}

/// Adjacency-list dump: one line per curve, `curve: neighbour(strong) ...`.
pub fn dump_mccn(mccn: &Mccn) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# curve: neighbour(strong_links) ...");
    for c in 0..mccn.cluster_of.len() {
        let _ = write!(s, "{c}:");
        for n in mccn.neighbours(c) {
            let _ = write!(s, " {n}({})", mccn.links[&(c.min(n), c.max(n))]);
        }
        s.push('\n');
    }
    for (k, members) in mccn.clusters.iter().enumerate() {
        let ids: Vec<String> = members.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "cluster {k}: {}", ids.join(" "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Sample3D;
    use nalgebra::Point3;

    fn curve(id: usize, support: Vec<Vec<(usize, usize)>>) -> Curve3D {
        let samples = support
            .into_iter()
            .enumerate()
            .map(|(k, sup)| {
                let mut s = Sample3D::new(Point3::new(k as f64, id as f64, 0.0));
                for (v, e) in sup {
                    s.support.entry(v).or_default().insert(e);
                }
                s
            })
            .collect();
        Curve3D::new(id, 0, samples).unwrap()
    }

    #[test]
    fn best_covered_picks_the_deepest_overlap() {
        assert_eq!(best_covered(&[(3, 3)]), (3, 1));
        assert_eq!(best_covered(&[(0, 10), (4, 8), (6, 12)]), (7, 3));
        assert_eq!(best_covered(&[(0, 2), (5, 6)]), (1, 1));
        assert_eq!(best_covered(&[(2, 4), (2, 4)]), (3, 2));
    }

    #[test]
    fn disjoint_support_gives_empty_network() {
        let a = curve(0, vec![vec![(1, 0)], vec![(1, 1)]]);
        let b = curve(1, vec![vec![(1, 5)], vec![(1, 6)]]);
        assert!(build_mln(&[a, b]).is_empty());
    }

    #[test]
    fn identical_support_counts_views() {
        let sup: Vec<Vec<(usize, usize)>> = (0..4).map(|k| (0..6).map(|v| (v, k)).collect()).collect();
        let mln = build_mln(&[curve(0, sup.clone()), curve(1, sup)]);
        for k in 0..4 {
            assert_eq!(mln.weight(0, k, 1, k), 6);
            assert_eq!(mln.weight(1, k, 0, k), 6);
        }
        assert_eq!(mln.len(), 4);
    }

    #[test]
    fn several_edgels_in_one_view_vote_once() {
        let a = curve(0, vec![vec![(2, 0), (2, 1)], vec![(2, 9)]]);
        let b = curve(1, vec![vec![(2, 0), (2, 1)], vec![(3, 9)]]);
        let mln = build_mln(&[a, b]);
        assert_eq!(mln.weight(0, 0, 1, 0), 1);
        assert_eq!(mln.len(), 1);
    }

    #[test]
    fn mccn_thresholds_and_components() {
        let mut mln = Mln::new();
        for s in 0..5 {
            mln.set(0, s, 1, s, 3);
            mln.set(1, s, 2, s, 3);
        }
        for s in 0..4 {
            mln.set(2, s, 3, s, 10);
        }
        let mccn = build_mccn(&mln, 5, 3, 5);
        assert!(mccn.linked(0, 1) && mccn.linked(2, 1));
        assert!(!mccn.linked(0, 2) && !mccn.linked(2, 3));
        assert_eq!(mccn.clusters, vec![vec![0, 1, 2], vec![3], vec![4]]);
        assert_eq!(mccn.cluster_of, vec![0, 0, 0, 1, 2]);
        assert!(dump_mccn(&mccn).contains("1: 0(5) 2(5)"));
    }

    fn diagonal_with_hole(hole: usize) -> Mln {
        let mut mln = Mln::new();
        for s in (0..6).chain(6 + hole..12 + hole) {
            mln.set(0, s, 1, s, 4);
        }
        mln
    }

    #[test]
    fn small_holes_are_filled() {
        let mln = diagonal_with_hole(3);
        let mccn = build_mccn(&mln, 2, 3, 5);
        let filled = gap_fill(&mln, &mccn, 5);
        for s in 6..9 {
            assert_eq!(filled.weight(0, s, 1, s), 4);
        }
        assert_eq!(filled.len(), mln.len() + 3);
    }

    #[test]
    fn holes_longer_than_g_max_stay_open() {
        let mln = diagonal_with_hole(6);
        let mccn = build_mccn(&mln, 2, 3, 5);
        assert_eq!(gap_fill(&mln, &mccn, 5), mln);
    }

    #[test]
    fn unlinked_pairs_are_not_filled() {
        let mut mln = Mln::new();
        mln.set(0, 0, 1, 0, 3);
        mln.set(0, 3, 1, 3, 3);
        let mccn = build_mccn(&mln, 2, 3, 5);
        assert!(mccn.links.is_empty());
        assert_eq!(gap_fill(&mln, &mccn, 5), mln);
    }
}
