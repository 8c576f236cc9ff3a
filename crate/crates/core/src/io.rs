//! Plain-text file formats: cameras, per-view curve fragments and 3D curves.
//!
//! * Cameras: a `# view <id>` line followed by three rows of four numbers,
//!   repeated; or one `cam_<id>.txt` file per view holding the three rows.
//! * Curve fragments (`view_<id>.curves`): `view <id> <width> <height>`, then
//!   per fragment `curve <id> <n>` followed by `n` lines `x y theta`.
//! * 3D curves: `curves3d <count>`, then per curve
//!   `curve <id> <primary_view> <n>` followed by `n` lines
//!   `x y z reliability | view:e1,e2 view:e3`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3x4, Point3};
use thiserror::Error;

use crate::curve::{Curve3D, Sample3D, SupportMap, ViewCurves};
use crate::dataset::Dataset;
use crate::geometry::Camera;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

/// Line-oriented reader that skips blank lines and tracks line numbers.
struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    skip_comments: bool,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str, skip_comments: bool) -> Self {
        Self { path, inner: text.lines().enumerate().peekable(), skip_comments }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> IoError {
        IoError::Parse { path: self.path.to_path_buf(), line, message: message.into() }
    }

    fn skip_blank(&mut self) {
        while let Some((_, l)) = self.inner.peek() {
            let t = l.trim();
            if t.is_empty() || (self.skip_comments && t.starts_with('#')) {
                self.inner.next();
            } else {
                break;
            }
        }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        self.skip_blank();
        self.inner.next().map(|(i, l)| (i + 1, l.trim()))
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), IoError> {
        self.next().ok_or_else(|| IoError::Parse {
            path: self.path.to_path_buf(),
            line: 0,
            message: format!("unexpected end of file, expected {what}"),
        })
    }

    fn numbers(&self, line: usize, text: &str, count: usize) -> Result<Vec<f64>, IoError> {
        let v = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| self.err(line, format!("bad number `{t}`"))))
            .collect::<Result<Vec<f64>, _>>()?;
        if v.len() != count {
            return Err(self.err(line, format!("expected {count} numbers, found {}", v.len())));
        }
        Ok(v)
    }

    /// `keyword a b ...` with `count` integer fields.
    fn header(&mut self, keyword: &str, count: usize) -> Result<(usize, Vec<usize>), IoError> {
        let (ln, l) = self.expect(&format!("`{keyword}` line"))?;
        let mut it = l.split_whitespace();
        if it.next() != Some(keyword) {
            return Err(self.err(ln, format!("expected `{keyword}`")));
        }
        let v = it
            .map(|t| t.parse::<usize>().map_err(|_| self.err(ln, format!("bad integer `{t}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        if v.len() != count {
            return Err(self.err(ln, format!("`{keyword}` takes {count} fields")));
        }
        Ok((ln, v))
    }
}

fn camera_rows(lines: &mut Lines, view: usize) -> Result<Camera, IoError> {
    let mut m = Matrix3x4::zeros();
    let mut first = 0;
    for r in 0..3 {
        let (ln, l) = lines.expect("camera row")?;
        if r == 0 {
            first = ln;
        }
        let v = lines.numbers(ln, l, 4)?;
        for c in 0..4 {
            m[(r, c)] = v[c];
        }
    }
    Camera::new(m, view).map_err(|e| lines.err(first, e.to_string()))
}

/// Parses a multi-camera file of `# view <id>` blocks.
pub fn parse_cameras(path: &Path, text: &str) -> Result<Vec<Camera>, IoError> {
    let mut lines = Lines::new(path, text, false);
    let mut out = Vec::new();
    while let Some((ln, l)) = lines.next() {
        let id = l
            .strip_prefix('#')
            .map(str::trim)
            .and_then(|s| s.strip_prefix("view"))
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| lines.err(ln, "expected `# view <id>`"))?;
        out.push(camera_rows(&mut lines, id)?);
    }
    Ok(out)
}

fn write_camera_rows(s: &mut String, cam: &Camera) {
    let p = cam.projection();
    for r in 0..3 {
        let _ = writeln!(s, "{} {} {} {}", p[(r, 0)], p[(r, 1)], p[(r, 2)], p[(r, 3)]);
    }
}

pub fn format_cameras(cameras: &[Camera]) -> String {
    let mut s = String::new();
    for cam in cameras {
        let _ = writeln!(s, "# view {}", cam.view_id());
        write_camera_rows(&mut s, cam);
    }
    s
}

/// Loads cameras from a multi-camera file or from a directory of
/// `cam_<id>.txt` files.
pub fn load_cameras(path: &Path) -> Result<Vec<Camera>, IoError> {
    if path.is_dir() {
        let mut out = Vec::new();
        for (id, file) in numbered_files(path, "cam_", ".txt")? {
            let text = read_text(&file)?;
            let mut lines = Lines::new(&file, &text, true);
            out.push(camera_rows(&mut lines, id)?);
        }
        return Ok(out);
    }
    parse_cameras(path, &read_text(path)?)
}

/// Files `<prefix><id><suffix>` in `dir`, ordered by id.
fn numbered_files(dir: &Path, prefix: &str, suffix: &str) -> Result<BTreeMap<usize, PathBuf>, IoError> {
    let entries = fs::read_dir(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_prefix(prefix).and_then(|r| r.strip_suffix(suffix)).and_then(|r| r.parse().ok()) {
            out.insert(id, entry.path());
        }
    }
    Ok(out)
}

pub fn parse_view_curves(path: &Path, text: &str) -> Result<ViewCurves, IoError> {
    let mut lines = Lines::new(path, text, true);
    let (_, h) = lines.header("view", 3)?;
    let mut frags = Vec::new();
    while let Some((ln, l)) = lines.next() {
        let mut it = l.split_whitespace();
        let parsed = match (it.next(), it.next(), it.next(), it.next()) {
            (Some("curve"), Some(id), Some(n), None) => id.parse::<usize>().ok().zip(n.parse::<usize>().ok()),
            _ => None,
        };
        let (id, n) = parsed.ok_or_else(|| lines.err(ln, "expected `curve <id> <n>`"))?;
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = lines.expect("edgel line")?;
            let v = lines.numbers(ln, l, 3)?;
            pts.push((v[0], v[1], v[2]));
        }
        frags.push((id, pts));
    }
    ViewCurves::from_fragments(h[0], h[1] as u32, h[2] as u32, frags)
        .map_err(|e| IoError::Invalid { path: path.to_path_buf(), message: e.to_string() })
}

pub fn format_view_curves(view: &ViewCurves) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "view {} {} {}", view.view_id, view.width, view.height);
    for c in &view.curves {
        let _ = writeln!(s, "curve {} {}", c.curve_id(), c.len());
        for e in c.edgels() {
            let _ = writeln!(s, "{} {} {}", e.position.x, e.position.y, e.orientation);
        }
    }
    s
}

/// Loads `cameras.txt` (or `cam_<id>.txt` files) and all `view_<id>.curves`
/// files of a data directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let cam_file = dir.join("cameras.txt");
    let cameras = if cam_file.exists() { load_cameras(&cam_file)? } else { load_cameras(dir)? };
    if cameras.is_empty() {
        return Err(IoError::Io {
            path: cam_file,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no camera file found"),
        });
    }
    let mut views = Vec::new();
    for (_, file) in numbered_files(dir, "view_", ".curves")? {
        views.push(parse_view_curves(&file, &read_text(&file)?)?);
    }
    for v in &views {
        if !cameras.iter().any(|c| c.view_id() == v.view_id) {
            return Err(IoError::Invalid {
                path: dir.join(format!("view_{}.curves", v.view_id)),
                message: format!("no camera for view {}", v.view_id),
            });
        }
    }
    Ok(Dataset::new(cameras, views))
}

pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<(), IoError> {
    let cams: Vec<Camera> = data.cameras.values().cloned().collect();
    write_text(&dir.join("cameras.txt"), &format_cameras(&cams))?;
    for v in data.views.values() {
        write_text(&dir.join(format!("view_{}.curves", v.view_id)), &format_view_curves(v))?;
    }
    Ok(())
}

pub fn format_curves3d(curves: &[Curve3D]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "curves3d {}", curves.len());
    for c in curves {
        let _ = writeln!(s, "curve {} {} {}", c.curve_id, c.primary_view, c.len());
        for smp in c.samples() {
            let p = smp.position;
            let _ = write!(s, "{} {} {} {} |", p.x, p.y, p.z, smp.reliability);
            for (v, ids) in &smp.support {
                let list: Vec<String> = ids.iter().map(ToString::to_string).collect();
                let _ = write!(s, " {v}:{}", list.join(","));
            }
            s.push('\n');
        }
    }
    s
}

fn parse_support(lines: &Lines, ln: usize, text: &str) -> Result<SupportMap, IoError> {
    let mut support = SupportMap::new();
    for tok in text.split_whitespace() {
        let (v, ids) = tok.split_once(':').ok_or_else(|| lines.err(ln, format!("bad support `{tok}`")))?;
        let v: usize = v.parse().map_err(|_| lines.err(ln, format!("bad view `{v}`")))?;
        let entry = support.entry(v).or_default();
        for id in ids.split(',').filter(|s| !s.is_empty()) {
            entry.insert(id.parse().map_err(|_| lines.err(ln, format!("bad edgel id `{id}`")))?);
        }
    }
    Ok(support)
}

pub fn parse_curves3d(path: &Path, text: &str) -> Result<Vec<Curve3D>, IoError> {
    let mut lines = Lines::new(path, text, true);
    let (_, h) = lines.header("curves3d", 1)?;
    let mut out = Vec::with_capacity(h[0]);
    for _ in 0..h[0] {
        let (ln, c) = lines.header("curve", 3)?;
        let mut samples = Vec::with_capacity(c[2]);
        for _ in 0..c[2] {
            let (sl, l) = lines.expect("sample line")?;
            let (geom, sup) = l.split_once('|').unwrap_or((l, ""));
            let v = lines.numbers(sl, geom, 4)?;
            samples.push(Sample3D {
                position: Point3::new(v[0], v[1], v[2]),
                support: parse_support(&lines, sl, sup)?,
                reliability: v[3],
            });
        }
        out.push(Curve3D::new(c[0], c[1], samples).map_err(|e| lines.err(ln, e.to_string()))?);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(lines.err(ln, "trailing content after the declared curves"));
    }
    Ok(out)
}

pub fn load_curves3d(path: &Path) -> Result<Vec<Curve3D>, IoError> {
    parse_curves3d(path, &read_text(path)?)
}

/// Ground-truth or reference polylines in the 3D curve format.
pub fn polylines_to_curves3d(polylines: &[Vec<Point3<f64>>]) -> Vec<Curve3D> {
    polylines
        .iter()
        .enumerate()
        .filter_map(|(id, p)| Curve3D::from_samples_dedup(id, 0, p.iter().map(|&q| Sample3D::new(q)).collect()).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves3d_round_trip_is_lossless() {
        let mut s = Sample3D::new(Point3::new(0.1, 1.0 / 3.0, -2.5e-7));
        s.reliability = 0.123456789;
        s.support.entry(3).or_default().extend([5, 9]);
        s.support.entry(7).or_default().insert(1);
        let c = Curve3D::new(4, 3, vec![s, Sample3D::new(Point3::new(1.0, 2.0, 3.0))]).unwrap();
        let text = format_curves3d(std::slice::from_ref(&c));
        let back = parse_curves3d(Path::new("mem"), &text).unwrap();
        assert_eq!(back, vec![c]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse_curves3d(Path::new("x.curves3d"), "curves3d 1\ncurve 0 0 2\n0 0 0 1 |\n0 0 q 1 |\n").unwrap_err();
        assert!(err.to_string().starts_with("x.curves3d:4:"), "{err}");
        assert!(parse_view_curves(Path::new("v"), "view 0 10 10\ncurve 0 2\n1 1 0\n").is_err());
        assert!(parse_cameras(Path::new("c"), "# view 0\n1 0 0 0\n0 1 0 0\n").is_err());
    }
}
