//! ASCII OBJ and binary little-endian PLY.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{GeometryError, TriMesh, Vec3};

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("OBJ line {line}: {message}")]
    Obj { line: usize, message: String },
    #[error("PLY header: missing {0}")]
    PlyMissing(String),
    #[error("PLY header line {line}: {message}")]
    PlyHeader { line: usize, message: String },
    #[error("PLY body at byte {offset}: {message}")]
    PlyBody { offset: usize, message: String },
    #[error("unsupported mesh extension {0:?} (expected .obj or .ply)")]
    UnknownFormat(String),
    #[error("invalid mesh: {0}")]
    Mesh(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self, MeshIoError> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        match ext.as_str() {
            "obj" => Ok(MeshFormat::Obj),
            "ply" => Ok(MeshFormat::Ply),
            _ => Err(MeshIoError::UnknownFormat(ext)),
        }
    }
}

pub fn obj_string(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 80);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for n in &mesh.normals {
        let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
    }
    for t in &mesh.triangles {
        let (a, b, c) = (t[0] + 1, t[1] + 1, t[2] + 1);
        let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
    }
    s
}

fn obj_index(tok: &str, count: usize, line: usize) -> Result<u32, MeshIoError> {
    let first = tok.split('/').next().unwrap_or("");
    let err = |message: String| MeshIoError::Obj { line, message };
    let i: i64 = first.parse().map_err(|_| err(format!("bad face index {tok:?}")))?;
    let zero_based = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return Err(err("face index 0 (OBJ indices are 1-based)".into()));
    };
    if zero_based < 0 || zero_based >= count as i64 {
        return Err(err(format!("face index {i} out of range ({count} vertices so far)")));
    }
    Ok(zero_based as u32)
}

fn parse_vec3(parts: &[&str], line: usize) -> Result<Vec3, MeshIoError> {
    if parts.len() < 3 {
        return Err(MeshIoError::Obj {
            line,
            message: "expected three coordinates".into(),
        });
    }
    let mut v = [0.0; 3];
    for (k, p) in parts.iter().take(3).enumerate() {
        v[k] = p.parse().map_err(|_| MeshIoError::Obj {
            line,
            message: format!("bad number {p:?}"),
        })?;
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

/// Parses `v`, `vn` and `f` records; polygons are fan-triangulated. Vertex
/// normals are kept when there is exactly one per vertex, otherwise
/// recomputed.
pub fn parse_obj(text: &str) -> Result<TriMesh, MeshIoError> {
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut triangles = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut it = body.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let rest: Vec<&str> = it.collect();
        match tag {
            "v" => vertices.push(parse_vec3(&rest, line)?),
            "vn" => normals.push(parse_vec3(&rest, line)?),
            "f" => {
                if rest.len() < 3 {
                    return Err(MeshIoError::Obj {
                        line,
                        message: "face needs at least three vertices".into(),
                    });
                }
                let idx: Vec<u32> = rest
                    .iter()
                    .map(|t| obj_index(t, vertices.len(), line))
                    .collect::<Result<_, _>>()?;
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if normals.len() == vertices.len() && !normals.is_empty() {
        let normals = normals.into_iter()
            .map(|n: Vec3| if (n.norm() - 1.0).abs() <= 1e-9 { n } else { n.normalize() })
            .collect();
        Ok(TriMesh::new(vertices, triangles, normals)?)
    } else {
        Ok(TriMesh::from_triangles(vertices, triangles)?)
    }
}

pub fn ply_bytes(mesh: &TriMesh) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty double nx\nproperty double ny\nproperty double nz\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    let mut out = header.into_bytes();
    for (v, n) in mesh.vertices.iter().zip(&mesh.normals) {
        for x in [v.x, v.y, v.z, n.x, n.y, n.z] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], MeshIoError> {
        if self.pos + n > self.data.len() {
            return Err(MeshIoError::PlyBody {
                offset: self.pos,
                message: format!("unexpected end of file reading {what}"),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn scalar(&mut self, t: Scalar, what: &str) -> Result<f64, MeshIoError> {
        Ok(t.read(self.take(t.size(), what)?))
    }
}

/// Parses a binary little-endian PLY with `vertex` (x, y, z and optional
/// nx, ny, nz) and `face` (index list) elements. Other elements and
/// properties are skipped.
pub fn parse_ply(data: &[u8]) -> Result<TriMesh, MeshIoError> {
    let end_tag = b"end_header";
    let header_end = data
        .windows(end_tag.len())
        .position(|w| w == end_tag)
        .ok_or_else(|| MeshIoError::PlyMissing("end_header".into()))?;
    let mut body_start = header_end + end_tag.len();
    if data.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if data.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = std::str::from_utf8(&data[..header_end]).map_err(|_| MeshIoError::PlyHeader {
        line: 0,
        message: "header is not UTF-8".into(),
    })?;
    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(MeshIoError::PlyMissing("magic line \"ply\"".into())),
    }
    let mut format_ok = false;
    let mut elements: Vec<Element> = Vec::new();
    for (i, l) in lines {
        let line = i + 1;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let bad = |message: String| MeshIoError::PlyHeader { line, message };
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                if toks.get(1) != Some(&"binary_little_endian") {
                    return Err(bad(format!("unsupported format {:?}", toks.get(1).unwrap_or(&""))));
                }
                format_ok = true;
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(bad("expected `element <name> <count>`".into()));
                }
                let count = toks[2].parse().map_err(|_| bad(format!("bad element count {:?}", toks[2])))?;
                elements.push(Element {
                    name: toks[1].to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| bad("property before any element".into()))?;
                let ty = |s: &str| Scalar::parse(s).ok_or_else(|| bad(format!("unknown type {s:?}")));
                if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return Err(bad("expected `property list <count type> <item type> <name>`".into()));
                    }
                    el.props.push(Property::List(toks[4].into(), ty(toks[2])?, ty(toks[3])?));
                } else {
                    if toks.len() != 3 {
                        return Err(bad("expected `property <type> <name>`".into()));
                    }
                    el.props.push(Property::Scalar(toks[2].into(), ty(toks[1])?));
                }
            }
            Some(other) => return Err(bad(format!("unexpected keyword {other:?}"))),
        }
    }
    if !format_ok {
        return Err(MeshIoError::PlyMissing("format line".into()));
    }
    if !elements.iter().any(|e| e.name == "vertex") {
        return Err(MeshIoError::PlyMissing("element vertex".into()));
    }
    if !elements.iter().any(|e| e.name == "face") {
        return Err(MeshIoError::PlyMissing("element face".into()));
    }

    let mut cur = Cursor { data, pos: body_start };
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut triangles = Vec::new();
    for el in &elements {
        let find = |n: &str| {
            el.props
                .iter()
                .position(|p| matches!(p, Property::Scalar(name, _) if name == n))
        };
        let (xi, yi, zi) = (find("x"), find("y"), find("z"));
        let (nxi, nyi, nzi) = (find("nx"), find("ny"), find("nz"));
        if el.name == "vertex" && (xi.is_none() || yi.is_none() || zi.is_none()) {
            return Err(MeshIoError::PlyMissing("vertex property x, y or z".into()));
        }
        for _ in 0..el.count {
            let mut vals = vec![0.0; el.props.len()];
            let mut list: Vec<u32> = Vec::new();
            for (k, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar(name, t) => vals[k] = cur.scalar(*t, &format!("{}.{name}", el.name))?,
                    Property::List(name, ct, it) => {
                        let what = format!("{}.{name}", el.name);
                        let n = cur.scalar(*ct, &what)? as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(cur.scalar(*it, &what)?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            list = items.iter().map(|&v| v as u32).collect();
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    vertices.push(Vec3::new(vals[xi.unwrap()], vals[yi.unwrap()], vals[zi.unwrap()]));
                    if let (Some(a), Some(b), Some(c)) = (nxi, nyi, nzi) {
                        normals.push(Vec3::new(vals[a], vals[b], vals[c]));
                    }
                }
                "face" => {
                    if list.len() < 3 {
                        return Err(MeshIoError::PlyBody {
                            offset: cur.pos,
                            message: "face with fewer than three indices".into(),
                        });
                    }
                    for k in 1..list.len() - 1 {
                        triangles.push([list[0], list[k], list[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    if normals.len() == vertices.len() && !normals.is_empty() {
        let normals = normals.into_iter()
            .map(|n: Vec3| if (n.norm() - 1.0).abs() <= 1e-9 { n } else { n.normalize() })
            .collect();
        Ok(TriMesh::new(vertices, triangles, normals)?)
    } else {
        Ok(TriMesh::from_triangles(vertices, triangles)?)
    }
}

pub fn write_mesh(mesh: &TriMesh, path: &Path) -> Result<(), MeshIoError> {
    let bytes = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => obj_string(mesh).into_bytes(),
        MeshFormat::Ply => ply_bytes(mesh),
    };
    std::fs::write(path, bytes).map_err(|source| MeshIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_mesh(path: &Path) -> Result<TriMesh, MeshIoError> {
    let format = MeshFormat::from_path(path)?;
    let data = std::fs::read(path).map_err(|source| MeshIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        MeshFormat::Obj => parse_obj(&String::from_utf8_lossy(&data)),
        MeshFormat::Ply => parse_ply(&data),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_dev(a: &TriMesh, b: &TriMesh) -> f64 {
        a.vertices.iter().zip(&b.vertices).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn obj_round_trip() {
        let m = TriMesh::icosphere(Vec3::new(0.1, -0.2, 0.3), 0.7, 2);
        let back = parse_obj(&obj_string(&m)).unwrap();
        assert_eq!(back.triangles, m.triangles);
        assert!(max_dev(&m, &back) < 1e-6);
    }

    #[test]
    fn ply_round_trip() {
        let m = TriMesh::icosphere(Vec3::zeros(), 0.5, 2);
        let back = parse_ply(&ply_bytes(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn obj_indices_are_one_based() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3\nf 1/1/1 4/2/2 2\n";
        let m = parse_obj(src).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 3, 1]]);
        let quad = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\n").unwrap();
        assert_eq!(quad.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_errors_carry_line_numbers() {
        match parse_obj("v 0 0 0\nv 1 0 0\nf 1 2 9\n") {
            Err(MeshIoError::Obj { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_obj("v 0 zero 0\n") {
            Err(MeshIoError::Obj { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_obj("v 0 0 0\nf 0 1 1\n"), Err(MeshIoError::Obj { line: 2, .. })));
    }

    #[test]
    fn truncated_ply_names_what_is_missing() {
        let full = ply_bytes(&TriMesh::icosphere(Vec3::zeros(), 0.5, 0));
        let text = String::from_utf8_lossy(&full).to_string();
        let cut = text.find("element face").unwrap();
        let e = parse_ply(&full[..cut]).unwrap_err();
        assert!(e.to_string().contains("end_header"), "{e}");
        let header_only = "ply\nformat binary_little_endian 1.0\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n";
        let e = parse_ply(header_only.as_bytes()).unwrap_err();
        assert!(e.to_string().contains("element vertex"), "{e}");
        let body_cut = &full[..full.len() - 5];
        assert!(matches!(parse_ply(body_cut), Err(MeshIoError::PlyBody { .. })));
    }

    #[test]
    fn files_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let m = TriMesh::icosphere(Vec3::zeros(), 0.5, 1);
        for name in ["m.obj", "m.ply"] {
            let p = dir.path().join(name);
            write_mesh(&m, &p).unwrap();
            assert!(max_dev(&m, &read_mesh(&p).unwrap()) < 1e-6);
        }
        assert!(matches!(write_mesh(&m, &dir.path().join("m.stl")), Err(MeshIoError::UnknownFormat(_))));
        assert!(matches!(read_mesh(&dir.path().join("missing.obj")), Err(MeshIoError::Io { .. })));
    }
}
