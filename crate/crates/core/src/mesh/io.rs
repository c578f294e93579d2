//! Plain-text mesh and density files.
//!
//! Mesh file:
//!
//! ```text
//! bcmesh 1
//! nodes N
//! x y            (N lines)
//! triangles K
//! i j k          (K lines, 0-based)
//! boundary B
//! b              (B lines, ring order)
//! ```
//!
//! Density file: `bcdensity 1` followed by one value per triangle.
//! Blank lines and lines starting with `#` are ignored on read.
//! Floats are written with 17 significant digits so files round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{signed_area, DensityField, Point, TriMesh};
use crate::error::{Error, Result};

/// What the loader changed while reading a mesh.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MeshLoadReport {
    /// Triangles that were stored clockwise and have been flipped.
    pub reoriented: Vec<usize>,
}

pub fn format_mesh(mesh: &TriMesh) -> String {
    let mut out = String::new();
    out.push_str("bcmesh 1\n");
    let _ = writeln!(out, "nodes {}", mesh.node_count());
    for p in mesh.nodes() {
        let _ = writeln!(out, "{:.16e} {:.16e}", p[0], p[1]);
    }
    let _ = writeln!(out, "triangles {}", mesh.triangle_count());
    for t in mesh.triangles() {
        let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(out, "boundary {}", mesh.boundary_count());
    for b in mesh.boundary_ring() {
        let _ = writeln!(out, "{b}");
    }
    out
}

pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_mesh(mesh)).map_err(|e| Error::io(path, e))
}

/// Reads a mesh file. Clockwise triangles are flipped to counterclockwise
/// when `reorient` is set, otherwise they fail validation.
pub fn load_mesh(path: impl AsRef<Path>, reorient: bool) -> Result<(TriMesh, MeshLoadReport)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text, path, reorient)
}

pub fn parse_mesh(text: &str, path: &Path, reorient: bool) -> Result<(TriMesh, MeshLoadReport)> {
    let mut lines = Lines::new(text, path);
    lines.expect_header("bcmesh")?;
    let n = lines.count_line("nodes")?;
    let mut nodes: Vec<Point> = Vec::with_capacity(n);
    for _ in 0..n {
        let v: [f64; 2] = lines.fields()?;
        nodes.push(v);
    }
    let k = lines.count_line("triangles")?;
    let mut triangles = Vec::with_capacity(k);
    for _ in 0..k {
        let t: [usize; 3] = lines.fields()?;
        triangles.push(t);
    }
    let b = lines.count_line("boundary")?;
    let mut ring = Vec::with_capacity(b);
    for _ in 0..b {
        let [i]: [usize; 1] = lines.fields()?;
        ring.push(i);
    }
    lines.expect_end()?;

    let mut report = MeshLoadReport::default();
    if reorient {
        for (idx, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().all(|&i| i < nodes.len()) && signed_area(&nodes, tri) < 0.0 {
                tri.swap(1, 2);
                report.reoriented.push(idx);
            }
        }
    }
    Ok((TriMesh::new(nodes, triangles, ring)?, report))
}

pub fn format_density(density: &DensityField) -> String {
    let mut out = String::from("bcdensity 1\n");
    for v in density.values() {
        let _ = writeln!(out, "{v:.16e}");
    }
    out
}

pub fn save_density(density: &DensityField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_density(density)).map_err(|e| Error::io(path, e))
}

/// Reads per-triangle values. The box is not stored in the file; pass it in,
/// or `None` to use the tight range of the values.
pub fn load_density(path: impl AsRef<Path>, bounds: Option<(f64, f64)>) -> Result<DensityField> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_density(&text, path, bounds)
}

pub fn parse_density(text: &str, path: &Path, bounds: Option<(f64, f64)>) -> Result<DensityField> {
    let mut lines = Lines::new(text, path);
    lines.expect_header("bcdensity")?;
    let mut values = Vec::new();
    while !lines.at_end() {
        let [v]: [f64; 1] = lines.fields()?;
        values.push(v);
    }
    match bounds {
        Some(b) => DensityField::new(values, b),
        None => DensityField::from_values(values),
    }
}

/// Line cursor that skips blank and `#` lines and reports 1-based line numbers.
pub(crate) struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    path: &'a Path,
    last_line: usize,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(text: &'a str, path: &'a Path) -> Self {
        Lines {
            inner: text.lines().enumerate().peekable(),
            path,
            last_line: 0,
        }
    }

    fn skip_blank(&mut self) {
        while let Some((_, l)) = self.inner.peek() {
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                self.inner.next();
            } else {
                break;
            }
        }
    }

    pub(crate) fn at_end(&mut self) -> bool {
        self.skip_blank();
        self.inner.peek().is_none()
    }

    pub(crate) fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.skip_blank();
        match self.inner.next() {
            Some((i, l)) => {
                self.last_line = i + 1;
                Ok((i + 1, l))
            }
            None => Err(self.error(self.last_line + 1, "unexpected end of file".into())),
        }
    }

    pub(crate) fn error(&self, line: usize, message: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message,
        }
    }

    pub(crate) fn expect_header(&mut self, magic: &str) -> Result<()> {
        let (ln, l) = self.next_line()?;
        let mut it = l.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(m), Some("1"), None) if m == magic => Ok(()),
            _ => Err(self.error(ln, format!("expected header '{magic} 1', found '{l}'"))),
        }
    }

    pub(crate) fn count_line(&mut self, keyword: &str) -> Result<usize> {
        let (ln, l) = self.next_line()?;
        let mut it = l.split_whitespace();
        match (it.next(), it.next().map(str::parse::<usize>), it.next()) {
            (Some(k), Some(Ok(n)), None) if k == keyword => Ok(n),
            _ => Err(self.error(ln, format!("expected '{keyword} <count>', found '{l}'"))),
        }
    }

    pub(crate) fn fields<T: std::str::FromStr, const N: usize>(&mut self) -> Result<[T; N]> {
        let (ln, l) = self.next_line()?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != N {
            return Err(self.error(ln, format!("expected {N} fields, found {}", parts.len())));
        }
        let mut parsed = Vec::with_capacity(N);
        for p in parts {
            parsed.push(
                p.parse::<T>()
                    .map_err(|_| self.error(ln, format!("cannot parse '{p}'")))?,
            );
        }
        Ok(parsed.try_into().unwrap_or_else(|_| unreachable!()))
    }

    pub(crate) fn expect_end(&mut self) -> Result<()> {
        if self.at_end() {
            Ok(())
        } else {
            let (ln, l) = self.next_line()?;
            Err(self.error(ln, format!("trailing content '{l}'")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_disk_mesh;

    fn parse(text: &str) -> Result<(TriMesh, MeshLoadReport)> {
        parse_mesh(text, Path::new("test.mesh"), true)
    }

    const SQUARE: &str = "bcmesh 1
nodes 5
0 0
1 0
0 1
-1 0
0 -1
triangles 4
0 1 2
0 2 3
0 3 4
0 4 1
boundary 4
1
2
3
4
";

    #[test]
    fn parses_minimal_mesh() {
        let (mesh, report) = parse(SQUARE).unwrap();
        assert_eq!(mesh.triangle_count(), 4);
        assert!(report.reoriented.is_empty());
    }

    #[test]
    fn text_round_trip() {
        let mesh = generate_disk_mesh(3, 13).unwrap();
        let (back, _) = parse(&format_mesh(&mesh)).unwrap();
        assert_eq!(back, mesh);
    }

    #[test]
    fn index_out_of_range_is_validation_error() {
        let text = SQUARE.replace("0 4 1", "0 5 1");
        let err = parse(&text).unwrap_err();
        assert!(matches!(err, Error::MeshInvariant { invariant: "node index in range", .. }), "{err}");
    }

    #[test]
    fn clockwise_triangle_reoriented_or_rejected() {
        let text = SQUARE.replace("0 2 3", "0 3 2");
        let (mesh, report) = parse(&text).unwrap();
        assert_eq!(report.reoriented, vec![1]);
        assert_eq!(mesh.triangles()[1], [0, 2, 3]);

        let err = parse_mesh(&text, Path::new("t"), false).unwrap_err();
        assert!(matches!(err, Error::MeshInvariant { invariant: "positive signed area", .. }), "{err}");
    }

    #[test]
    fn parse_error_names_line() {
        let text = SQUARE.replace("-1 0", "-1 zero");
        match parse(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 6),
            other => panic!("unexpected {other}"),
        }
        match parse("bcmesh 2\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other}"),
        }
        match parse(&SQUARE.replace("triangles 4", "triangles 5")).unwrap_err() {
            // the boundary header is read as a fifth triangle
            Error::Parse { line, .. } => assert_eq!(line, 13),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn density_round_trip_through_text() {
        let d = DensityField::new(vec![1.0, 0.1 + 0.2, 2.0 / 3.0], (0.1, 3.0)).unwrap();
        let text = format_density(&d);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.txt");
        std::fs::write(&p, text).unwrap();
        let back = load_density(&p, Some((0.1, 3.0))).unwrap();
        assert_eq!(back, d);
    }
}
