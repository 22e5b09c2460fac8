//! OBJ / OFF / ASCII-PLY readers and writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Face, Point, SurfaceMesh};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Off,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("off") => Ok(MeshFormat::Off),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::InvalidArgument(format!("unknown mesh extension: {}", path.display()))),
        }
    }
}

pub fn read_mesh(path: &Path) -> Result<SurfaceMesh> {
    let text = fs::read_to_string(path)?;
    let parse = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => parse_obj,
        MeshFormat::Off => parse_off,
        MeshFormat::Ply => parse_ply,
    };
    let mesh = parse(&text).map_err(|msg| Error::Parse { path: path.to_owned(), msg })?;
    mesh.validate()?;
    Ok(mesh)
}

pub fn write_mesh(path: &Path, mesh: &SurfaceMesh) -> Result<()> {
    let text = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => to_obj(mesh),
        MeshFormat::Off => to_off(mesh),
        MeshFormat::Ply => to_ply(mesh),
    };
    fs::write(path, text)?;
    Ok(())
}

// `{:?}` on f64 prints the shortest representation that round-trips exactly.
fn fmt_point(out: &mut String, p: &Point) {
    let _ = write!(out, "{:?} {:?} {:?}", p[0], p[1], p[2]);
}

pub fn to_obj(mesh: &SurfaceMesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str("v ");
        fmt_point(&mut out, v);
        out.push('\n');
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn to_off(mesh: &SurfaceMesh) -> String {
    let mut out = format!("OFF\n{} {} 0\n", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        fmt_point(&mut out, v);
        out.push('\n');
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

pub fn to_ply(mesh: &SurfaceMesh) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    );
    for v in &mesh.vertices {
        fmt_point(&mut out, v);
        out.push('\n');
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

fn parse_f64(tok: Option<&str>, what: &str) -> Result<f64, String> {
    tok.ok_or_else(|| format!("missing {what}"))?
        .parse::<f64>()
        .map_err(|e| format!("bad {what}: {e}"))
}

fn parse_usize(tok: Option<&str>, what: &str) -> Result<usize, String> {
    tok.ok_or_else(|| format!("missing {what}"))?
        .parse::<usize>()
        .map_err(|e| format!("bad {what}: {e}"))
}

/// Fan-triangulates a polygon.
fn push_polygon(faces: &mut Vec<Face>, poly: &[usize]) -> Result<(), String> {
    if poly.len() < 3 {
        return Err(format!("polygon with {} vertices", poly.len()));
    }
    for k in 1..poly.len() - 1 {
        faces.push([poly[0], poly[k], poly[k + 1]]);
    }
    Ok(())
}

pub fn parse_obj(text: &str) -> Result<SurfaceMesh, String> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let p = [parse_f64(toks.next(), "x")?, parse_f64(toks.next(), "y")?, parse_f64(toks.next(), "z")?];
                vertices.push(p);
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in toks {
                    // `f v/vt/vn` – only the position index matters
                    let idx: i64 = t
                        .split('/')
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|e| format!("line {}: bad face index {t}: {e}", lineno + 1))?;
                    let resolved = if idx < 0 { vertices.len() as i64 + idx } else { idx - 1 };
                    if resolved < 0 {
                        return Err(format!("line {}: face index {idx} out of range", lineno + 1));
                    }
                    poly.push(resolved as usize);
                }
                push_polygon(&mut faces, &poly).map_err(|e| format!("line {}: {e}", lineno + 1))?;
            }
            _ => {}
        }
    }
    Ok(SurfaceMesh { vertices, faces })
}

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty())
}

pub fn parse_off(text: &str) -> Result<SurfaceMesh, String> {
    let mut lines = data_lines(text);
    let header = lines.next().ok_or("empty file")?;
    let counts_line = if header == "OFF" {
        lines.next().ok_or("missing counts")?
    } else if let Some(rest) = header.strip_prefix("OFF") {
        rest
    } else {
        return Err("missing OFF header".into());
    };
    let mut counts = counts_line.split_whitespace();
    let nv = parse_usize(counts.next(), "vertex count")?;
    let nf = parse_usize(counts.next(), "face count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut t = lines.next().ok_or("truncated vertex list")?.split_whitespace();
        vertices.push([parse_f64(t.next(), "x")?, parse_f64(t.next(), "y")?, parse_f64(t.next(), "z")?]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let mut t = lines.next().ok_or("truncated face list")?.split_whitespace();
        let k = parse_usize(t.next(), "polygon size")?;
        let poly = (0..k).map(|_| parse_usize(t.next(), "face index")).collect::<Result<Vec<_>, _>>()?;
        push_polygon(&mut faces, &poly)?;
    }
    Ok(SurfaceMesh { vertices, faces })
}

pub fn parse_ply(text: &str) -> Result<SurfaceMesh, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing ply magic".into());
    }
    let mut nv = None;
    let mut nf = None;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = "";
    loop {
        let line = lines.next().ok_or("unterminated header")?.trim();
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(format!("unsupported ply format {fmt}")),
            ["element", "vertex", n] => {
                nv = Some(n.parse::<usize>().map_err(|e| e.to_string())?);
                current = "vertex";
            }
            ["element", "face", n] => {
                nf = Some(n.parse::<usize>().map_err(|e| e.to_string())?);
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", "list", ..] => {}
            ["property", _, name] if current == "vertex" => vertex_props.push((*name).to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let nv = nv.ok_or("no vertex element")?;
    let nf = nf.unwrap_or(0);
    let col = |name: &str| vertex_props.iter().position(|p| p == name).ok_or(format!("no {name} property"));
    let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);
    let mut body = lines.map(str::trim).filter(|l| !l.is_empty());
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let vals = body
            .next()
            .ok_or("truncated vertex list")?
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let get = |c: usize| vals.get(c).copied().ok_or("short vertex row".to_string());
        vertices.push([get(cx)?, get(cy)?, get(cz)?]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let mut t = body.next().ok_or("truncated face list")?.split_whitespace();
        let k = parse_usize(t.next(), "polygon size")?;
        let poly = (0..k).map(|_| parse_usize(t.next(), "face index")).collect::<Result<Vec<_>, _>>()?;
        push_polygon(&mut faces, &poly)?;
    }
    Ok(SurfaceMesh { vertices, faces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn round_trip_all_formats() {
        let dir = tempfile::tempdir().unwrap();
        let mut mesh = icosphere(1, 1.0);
        mesh.vertices[3][1] = 0.1 + 0.2;
        for ext in ["obj", "off", "ply"] {
            let path = dir.path().join(format!("m.{ext}"));
            write_mesh(&path, &mesh).unwrap();
            let back = read_mesh(&path).unwrap();
            assert_eq!(back.faces, mesh.faces, "{ext}");
            for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() <= 1e-6, "{ext}");
                }
            }
        }
    }

    #[test]
    fn obj_quads_and_slashes() {
        let text = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n";
        let mesh = parse_obj(text).unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn off_header_variants() {
        let m = parse_off("OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
        assert!(parse_off("NOFF\n").is_err());
    }

    #[test]
    fn bad_index_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n").unwrap();
        assert!(read_mesh(&path).is_err());
    }
}
