//! Grid index over 3D polylines for closest-point and proximity queries.

use std::collections::HashMap;

use nalgebra::Point3;

/// Closest point on an indexed polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub polyline: usize,
    pub segment: usize,
    /// Position within the segment, in `[0, 1]`.
    pub t: f64,
    pub point: Point3<f64>,
    pub distance: f64,
}

impl ClosestPoint {
    /// Fractional sample index along the polyline.
    pub fn param(&self) -> f64 {
        self.segment as f64 + self.t
    }
}

/// Closest point to `p` on segment `[a, b]` as `(t, point)`.
pub fn closest_on_segment(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> (f64, Point3<f64>) {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 <= 0.0 {
        return (0.0, *a);
    }
    let t = ((p - a).dot(&d) / len2).clamp(0.0, 1.0);
    (t, a + d * t)
}

/// Brute-force closest point on a single polyline.
pub fn closest_on_polyline(p: &Point3<f64>, points: &[Point3<f64>]) -> Option<ClosestPoint> {
    let mut best: Option<ClosestPoint> = None;
    if points.len() == 1 {
        return Some(ClosestPoint { polyline: 0, segment: 0, t: 0.0, point: points[0], distance: (p - points[0]).norm() });
    }
    for (k, w) in points.windows(2).enumerate() {
        let (t, q) = closest_on_segment(p, &w[0], &w[1]);
        let d = (p - q).norm();
        if best.map_or(true, |b| d < b.distance) {
            best = Some(ClosestPoint { polyline: 0, segment: k, t, point: q, distance: d });
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    polyline: u32,
    segment: u32,
    t0: f64,
    t1: f64,
}

type Cell = (i64, i64, i64);

#[derive(Debug, Clone)]
pub struct PolylineIndex {
    polylines: Vec<Vec<Point3<f64>>>,
    cell: f64,
    pieces: Vec<Piece>,
    grid: HashMap<Cell, Vec<u32>>,
    lo: Cell,
    hi: Cell,
}

impl PolylineIndex {
    /// Indexes the polylines on a grid of size `cell`. Long segments are split
    /// into pieces no longer than one cell.
    pub fn new(polylines: Vec<Vec<Point3<f64>>>, cell: f64) -> Self {
        let cell = if cell > 0.0 && cell.is_finite() { cell } else { 1.0 };
        let mut index = Self {
            polylines: Vec::new(),
            cell,
            pieces: Vec::new(),
            grid: HashMap::new(),
            lo: (i64::MAX, i64::MAX, i64::MAX),
            hi: (i64::MIN, i64::MIN, i64::MIN),
        };
        for pl in polylines {
            index.push(pl);
        }
        index
    }

    pub fn push(&mut self, polyline: Vec<Point3<f64>>) -> usize {
        let id = self.polylines.len();
        let cell = self.cell;
        if polyline.len() == 1 {
            self.insert_piece(Piece { polyline: id as u32, segment: 0, t0: 0.0, t1: 0.0 }, &polyline[0], &polyline[0]);
        }
        for (k, w) in polyline.windows(2).enumerate() {
            let len = (w[1] - w[0]).norm();
            let m = ((len / cell).ceil() as usize).max(1);
            for j in 0..m {
                let t0 = j as f64 / m as f64;
                let t1 = (j + 1) as f64 / m as f64;
                let a = w[0] + (w[1] - w[0]) * t0;
                let b = w[0] + (w[1] - w[0]) * t1;
                self.insert_piece(Piece { polyline: id as u32, segment: k as u32, t0, t1 }, &a, &b);
            }
        }
        self.polylines.push(polyline);
        id
    }

    fn cell_of(&self, p: &Point3<f64>) -> Cell {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    fn insert_piece(&mut self, piece: Piece, a: &Point3<f64>, b: &Point3<f64>) {
        let idx = self.pieces.len() as u32;
        self.pieces.push(piece);
        let ca = self.cell_of(a);
        let cb = self.cell_of(b);
        for x in ca.0.min(cb.0)..=ca.0.max(cb.0) {
            for y in ca.1.min(cb.1)..=ca.1.max(cb.1) {
                for z in ca.2.min(cb.2)..=ca.2.max(cb.2) {
                    self.grid.entry((x, y, z)).or_default().push(idx);
                    self.lo = (self.lo.0.min(x), self.lo.1.min(y), self.lo.2.min(z));
                    self.hi = (self.hi.0.max(x), self.hi.1.max(y), self.hi.2.max(z));
                }
            }
        }
    }

    pub fn polylines(&self) -> &[Vec<Point3<f64>>] {
        &self.polylines
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    fn eval_piece(&self, idx: u32, p: &Point3<f64>) -> ClosestPoint {
        let piece = self.pieces[idx as usize];
        let pl = &self.polylines[piece.polyline as usize];
        let seg = piece.segment as usize;
        if pl.len() == 1 {
            return ClosestPoint { polyline: piece.polyline as usize, segment: 0, t: 0.0, point: pl[0], distance: (p - pl[0]).norm() };
        }
        let (a0, b0) = (pl[seg], pl[seg + 1]);
        let a = a0 + (b0 - a0) * piece.t0;
        let b = a0 + (b0 - a0) * piece.t1;
        let (u, q) = closest_on_segment(p, &a, &b);
        let t = piece.t0 + (piece.t1 - piece.t0) * u;
        ClosestPoint { polyline: piece.polyline as usize, segment: seg, t, point: q, distance: (p - q).norm() }
    }

    fn better(a: &ClosestPoint, b: &Option<ClosestPoint>) -> bool {
        match b {
            None => true,
            Some(b) => {
                a.distance < b.distance
                    || (a.distance == b.distance && (a.polyline, a.segment, a.t) < (b.polyline, b.segment, b.t))
            }
        }
    }

    /// Closest point on any polyline within `max_dist` of `p`.
    pub fn nearest_within(&self, p: &Point3<f64>, max_dist: f64) -> Option<ClosestPoint> {
        if self.pieces.is_empty() {
            return None;
        }
        let c = self.cell_of(p);
        let mut best: Option<ClosestPoint> = None;
        // Rings needed to reach the whole occupied box from `c`.
        let span = [
            (c.0 - self.lo.0).abs().max((self.hi.0 - c.0).abs()),
            (c.1 - self.lo.1).abs().max((self.hi.1 - c.1).abs()),
            (c.2 - self.lo.2).abs().max((self.hi.2 - c.2).abs()),
        ];
        let max_ring = span.into_iter().max().unwrap_or(0);
        let limit_ring = if max_dist.is_finite() {
            ((max_dist / self.cell).ceil() as i64 + 1).min(max_ring)
        } else {
            max_ring
        };
        if limit_ring > 48 {
            // Sparse far query: scanning rings is slower than a linear pass.
            for idx in 0..self.pieces.len() as u32 {
                let cp = self.eval_piece(idx, p);
                if cp.distance <= max_dist && Self::better(&cp, &best) {
                    best = Some(cp);
                }
            }
            return best;
        }
        for k in 0..=limit_ring {
            if let Some(b) = &best {
                // Cells in ring k are at least (k - 1) cells away.
                if (k - 1) as f64 * self.cell > b.distance {
                    break;
                }
            }
            for x in (c.0 - k)..=(c.0 + k) {
                for y in (c.1 - k)..=(c.1 + k) {
                    let side = (x - c.0).abs() == k || (y - c.1).abs() == k;
                    let zs: &[i64] = if side { &[] } else { &[c.2 - k, c.2 + k] };
                    let full = side.then(|| (c.2 - k)..=(c.2 + k)).into_iter().flatten();
                    for z in full.chain(zs.iter().copied()) {
                        if let Some(list) = self.grid.get(&(x, y, z)) {
                            for &idx in list {
                                let cp = self.eval_piece(idx, p);
                                if cp.distance <= max_dist && Self::better(&cp, &best) {
                                    best = Some(cp);
                                }
                            }
                        }
                    }
                }
            }
        }
        best
    }

    pub fn nearest(&self, p: &Point3<f64>) -> Option<ClosestPoint> {
        self.nearest_within(p, f64::INFINITY)
    }

    pub fn distance_within(&self, p: &Point3<f64>, r: f64) -> bool {
        self.nearest_within(p, r).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut polys = Vec::new();
        for _ in 0..6 {
            let n = rng.random_range(2..40);
            let mut p = Point3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
            let mut pl = vec![p];
            for _ in 1..n {
                p += nalgebra::Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 0.2;
                pl.push(p);
            }
            polys.push(pl);
        }
        let index = PolylineIndex::new(polys.clone(), 0.05);
        for _ in 0..500 {
            let q = Point3::new(rng.random::<f64>() * 2.0 - 0.5, rng.random::<f64>() * 2.0 - 0.5, rng.random::<f64>() * 2.0 - 0.5);
            let brute = polys
                .iter()
                .filter_map(|pl| closest_on_polyline(&q, pl))
                .map(|c| c.distance)
                .fold(f64::INFINITY, f64::min);
            let got = index.nearest(&q).unwrap();
            assert!((got.distance - brute).abs() < 1e-12, "{} vs {}", got.distance, brute);
            let r = 0.1;
            assert_eq!(index.distance_within(&q, r), brute <= r);
        }
    }

    #[test]
    fn empty_index() {
        let index = PolylineIndex::new(vec![], 1.0);
        assert!(index.nearest(&Point3::origin()).is_none());
    }
}
