use std::fmt::Write as _;

use super::DrawingGraph;

/// A fixed, well-separated palette so link colours are reproducible.
const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 190],
    [0, 128, 128],
    [170, 110, 40],
];

/// ASCII PLY with one vertex per link sample, one edge element per link
/// segment coloured by link, and a white marker vertex per junction.
pub fn write_ply(graph: &DrawingGraph) -> String {
    let n_vertices: usize = graph.links.iter().map(|l| l.points.len()).sum::<usize>() + graph.junction_count();
    let n_edges: usize = graph.links.iter().map(|l| l.points.len() - 1).sum();
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\ncomment curve drawing: link polylines and junction markers\n");
    let _ = writeln!(s, "element vertex {n_vertices}");
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    let _ = writeln!(s, "element edge {n_edges}");
    s.push_str("property int vertex1\nproperty int vertex2\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    s.push_str("end_header\n");
    for (k, l) in graph.links.iter().enumerate() {
        let [r, g, b] = PALETTE[k % PALETTE.len()];
        for p in &l.points {
            let _ = writeln!(s, "{} {} {} {r} {g} {b}", p.x, p.y, p.z);
        }
    }
    for (_, n) in graph.junctions() {
        let p = n.position;
        let _ = writeln!(s, "{} {} {} 255 255 255", p.x, p.y, p.z);
    }
    let mut base = 0;
    for (k, l) in graph.links.iter().enumerate() {
        let [r, g, b] = PALETTE[k % PALETTE.len()];
        for i in 0..l.points.len() - 1 {
            let _ = writeln!(s, "{} {} {r} {g} {b}", base + i, base + i + 1);
        }
        base += l.points.len();
    }
    s
}
