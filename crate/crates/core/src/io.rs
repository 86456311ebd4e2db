use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Reads a point cloud, dispatching on the file extension
/// (`.xyz`, `.ply`, `.obj`).
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let cloud = match ext.as_str() {
        "xyz" => read_xyz(path),
        "ply" => read_ply(path),
        "obj" => read_obj(path),
        other => Err(Error::InvalidParameter(format!(
            "unsupported cloud format \"{other}\" ({})",
            path.display()
        ))),
    }?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("cloud")
        .to_string();
    Ok(cloud.with_id(id))
}

/// Writes a point cloud; `.xyz` gets plain triples, anything else ASCII PLY.
pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "xyz" => write_xyz(path, cloud),
        _ => write_ply_ascii(path, cloud),
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut coord = [0.0f64; 3];
        for c in &mut coord {
            let tok = it
                .next()
                .ok_or_else(|| parse_err(path, ln + 1, "expected three coordinates"))?;
            *c = tok
                .parse()
                .map_err(|_| parse_err(path, ln + 1, format!("bad number \"{tok}\"")))?;
        }
        points.push(Vector3::new(coord[0], coord[1], coord[2]));
    }
    PointCloud::new(points)
}

pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut out = String::new();
    for p in cloud.points() {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if !line.starts_with("v ") && !line.starts_with("v\t") {
            continue;
        }
        let mut it = line.split_whitespace().skip(1);
        let mut coord = [0.0f64; 3];
        for c in &mut coord {
            let tok = it
                .next()
                .ok_or_else(|| parse_err(path, ln + 1, "vertex record needs x y z"))?;
            *c = tok
                .parse()
                .map_err(|_| parse_err(path, ln + 1, format!("bad number \"{tok}\"")))?;
        }
        points.push(Vector3::new(coord[0], coord[1], coord[2]));
    }
    PointCloud::new(points)
}

#[derive(Clone, Copy, PartialEq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(tok: &str) -> Option<Self> {
        Some(match tok {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            Self::I8 => bytes[0] as i8 as f64,
            Self::U8 => bytes[0] as f64,
            Self::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Self::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Self::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

enum PlyProp {
    Scalar { name: String, ty: PlyType },
    List { count_ty: PlyType, item_ty: PlyType },
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProp>,
}

/// Reads vertex positions from an ASCII or binary-little-endian PLY file.
/// Faces and all non-position properties are skipped.
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let data = fs::read(path)?;

    // Header is ASCII lines terminated by "end_header".
    let mut offset = 0usize;
    let mut lines = Vec::new();
    let mut line_start = 0usize;
    while offset < data.len() {
        if data[offset] == b'\n' {
            let raw = &data[line_start..offset];
            let text = std::str::from_utf8(raw)
                .map_err(|_| parse_err(path, lines.len() + 1, "non-UTF8 header"))?
                .trim_end_matches('\r')
                .trim()
                .to_string();
            let done = text == "end_header";
            lines.push(text);
            offset += 1;
            line_start = offset;
            if done {
                break;
            }
        } else {
            offset += 1;
        }
    }

    if lines.first().map(String::as_str) != Some("ply") {
        return Err(parse_err(path, 1, "missing ply magic"));
    }
    let mut binary = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for (ln, line) in lines.iter().enumerate().skip(1) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                binary = match toks.get(1).copied() {
                    Some("ascii") => Some(false),
                    Some("binary_little_endian") => Some(true),
                    other => {
                        return Err(parse_err(
                            path,
                            ln + 1,
                            format!("unsupported format {other:?}"),
                        ))
                    }
                };
            }
            Some("element") => {
                let count = toks
                    .get(2)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(path, ln + 1, "bad element count"))?;
                elements.push(PlyElement {
                    name: toks.get(1).unwrap_or(&"").to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, ln + 1, "property before element"))?;
                if toks.get(1).copied() == Some("list") {
                    let count_ty = toks
                        .get(2)
                        .and_then(|t| PlyType::parse(t))
                        .ok_or_else(|| parse_err(path, ln + 1, "bad list count type"))?;
                    let item_ty = toks
                        .get(3)
                        .and_then(|t| PlyType::parse(t))
                        .ok_or_else(|| parse_err(path, ln + 1, "bad list item type"))?;
                    elem.props.push(PlyProp::List { count_ty, item_ty });
                } else {
                    let ty = toks
                        .get(1)
                        .and_then(|t| PlyType::parse(t))
                        .ok_or_else(|| parse_err(path, ln + 1, "bad property type"))?;
                    elem.props.push(PlyProp::Scalar {
                        name: toks.get(2).unwrap_or(&"").to_string(),
                        ty,
                    });
                }
            }
            Some("comment") | Some("obj_info") | Some("end_header") | None => {}
            Some(other) => {
                return Err(parse_err(
                    path,
                    ln + 1,
                    format!("unknown header record \"{other}\""),
                ));
            }
        }
    }
    let binary =
        binary.ok_or_else(|| parse_err(path, 1, "header missing format declaration"))?;

    let mut points = Vec::new();
    if binary {
        let mut cur = offset;
        for elem in &elements {
            let is_vertex = elem.name == "vertex";
            let xyz = vertex_xyz_slots(elem, path)?;
            for _ in 0..elem.count {
                let mut coord = [f64::NAN; 3];
                for (pi, prop) in elem.props.iter().enumerate() {
                    match prop {
                        PlyProp::Scalar { ty, .. } => {
                            let sz = ty.size();
                            if cur + sz > data.len() {
                                return Err(parse_err(path, 0, "truncated binary body"));
                            }
                            let val = ty.read_le(&data[cur..cur + sz]);
                            cur += sz;
                            if is_vertex {
                                if let Some(slot) = xyz.iter().position(|&s| s == Some(pi)) {
                                    coord[slot] = val;
                                }
                            }
                        }
                        PlyProp::List { count_ty, item_ty } => {
                            let csz = count_ty.size();
                            if cur + csz > data.len() {
                                return Err(parse_err(path, 0, "truncated binary body"));
                            }
                            let n = count_ty.read_le(&data[cur..cur + csz]) as usize;
                            cur += csz + n * item_ty.size();
                            if cur > data.len() {
                                return Err(parse_err(path, 0, "truncated binary body"));
                            }
                        }
                    }
                }
                if is_vertex {
                    push_vertex(&mut points, coord, path)?;
                }
            }
            if is_vertex && points.len() == elem.count {
                // Vertices read; later elements are irrelevant.
                break;
            }
        }
    } else {
        let body = std::str::from_utf8(&data[offset..])
            .map_err(|_| parse_err(path, 0, "non-UTF8 ascii body"))?;
        let mut body_lines = body.lines().filter(|l| !l.trim().is_empty());
        for elem in &elements {
            let is_vertex = elem.name == "vertex";
            let xyz = vertex_xyz_slots(elem, path)?;
            for row in 0..elem.count {
                let line = body_lines
                    .next()
                    .ok_or_else(|| parse_err(path, 0, "truncated ascii body"))?;
                if !is_vertex {
                    continue;
                }
                let toks: Vec<&str> = line.split_whitespace().collect();
                let mut coord = [f64::NAN; 3];
                let mut cursor = 0usize;
                for (pi, prop) in elem.props.iter().enumerate() {
                    match prop {
                        PlyProp::Scalar { .. } => {
                            let tok = toks.get(cursor).ok_or_else(|| {
                                parse_err(path, 0, format!("vertex row {row} too short"))
                            })?;
                            if let Some(slot) = xyz.iter().position(|&s| s == Some(pi)) {
                                coord[slot] = tok.parse().map_err(|_| {
                                    parse_err(path, 0, format!("bad number \"{tok}\""))
                                })?;
                            }
                            cursor += 1;
                        }
                        PlyProp::List { .. } => {
                            let n: usize = toks
                                .get(cursor)
                                .and_then(|t| t.parse().ok())
                                .ok_or_else(|| parse_err(path, 0, "bad list count"))?;
                            cursor += 1 + n;
                        }
                    }
                }
                push_vertex(&mut points, coord, path)?;
            }
            if is_vertex {
                break;
            }
        }
    }

    PointCloud::new(points)
}

// Positions of the x, y, z scalar properties within a vertex element.
fn vertex_xyz_slots(elem: &PlyElement, path: &Path) -> Result<[Option<usize>; 3]> {
    if elem.name != "vertex" {
        return Ok([None, None, None]);
    }
    let mut slots = [None, None, None];
    for (pi, prop) in elem.props.iter().enumerate() {
        if let PlyProp::Scalar { name, .. } = prop {
            match name.as_str() {
                "x" => slots[0] = Some(pi),
                "y" => slots[1] = Some(pi),
                "z" => slots[2] = Some(pi),
                _ => {}
            }
        }
    }
    if slots.iter().any(|s| s.is_none()) {
        return Err(parse_err(path, 0, "vertex element lacks x/y/z properties"));
    }
    Ok(slots)
}

fn push_vertex(points: &mut Vec<Vector3<f64>>, coord: [f64; 3], path: &Path) -> Result<()> {
    if coord.iter().any(|c| c.is_nan()) {
        return Err(parse_err(path, 0, "vertex with missing coordinate"));
    }
    points.push(Vector3::new(coord[0], coord[1], coord[2]));
    Ok(())
}

/// Writes an ASCII PLY with double-precision positions, so coordinates
/// round-trip exactly.
pub fn write_ply_ascii(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    writeln!(w, "end_header")?;
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sample_points(n: usize) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect()
    }

    #[test]
    fn xyz_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let cloud = PointCloud::new(sample_points(37)).unwrap();
        write_xyz(&path, &cloud).unwrap();
        let back = read_xyz(&path).unwrap();
        assert_eq!(cloud.points(), back.points());
    }

    #[test]
    fn xyz_skips_comments_and_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        fs::write(&path, "# header\n\n1 2 3\n  4 5 6 \n").unwrap();
        let cloud = read_xyz(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_relative_eq!(cloud.points()[1].z, 6.0);
    }

    #[test]
    fn xyz_rejects_junk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        fs::write(&path, "1 2\n").unwrap();
        assert!(matches!(read_xyz(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn ply_ascii_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let cloud = PointCloud::new(sample_points(25)).unwrap();
        write_ply_ascii(&path, &cloud).unwrap();
        let back = read_ply(&path).unwrap();
        assert_eq!(cloud.points(), back.points());
    }

    #[test]
    fn ply_ascii_with_extra_props_and_faces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let text = "ply\nformat ascii 1.0\ncomment made by hand\n\
                    element vertex 2\nproperty float x\nproperty float y\n\
                    property float z\nproperty uchar red\n\
                    element face 1\nproperty list uchar int vertex_indices\n\
                    end_header\n1 2 3 255\n4 5 6 0\n3 0 1 0\n";
        fs::write(&path, text).unwrap();
        let cloud = read_ply(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_relative_eq!(cloud.points()[0].y, 2.0);
        assert_relative_eq!(cloud.points()[1].x, 4.0);
    }

    #[test]
    fn ply_binary_le_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let pts = [[1.5f32, -2.0, 0.25], [10.0, 20.0, 30.0]];
        let mut bytes = Vec::new();
        bytes.extend_from_slice(
            b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n\
              property float x\nproperty float y\nproperty float z\nend_header\n",
        );
        for p in &pts {
            for c in p {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
        fs::write(&path, bytes).unwrap();
        let cloud = read_ply(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_relative_eq!(cloud.points()[0].x, 1.5);
        assert_relative_eq!(cloud.points()[1].z, 30.0);
    }

    #[test]
    fn ply_binary_with_preceding_list_element() {
        // An element with list properties before the vertices must be
        // skipped byte-exactly.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(
            b"ply\nformat binary_little_endian 1.0\n\
              element tag 1\nproperty list uchar int ids\n\
              element vertex 1\nproperty double x\nproperty double y\n\
              property double z\nend_header\n",
        );
        bytes.push(2); // list of two ints
        bytes.extend_from_slice(&7i32.to_le_bytes());
        bytes.extend_from_slice(&9i32.to_le_bytes());
        for c in [0.5f64, 0.25, -0.125] {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
        fs::write(&path, bytes).unwrap();
        let cloud = read_ply(&path).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_relative_eq!(cloud.points()[0].z, -0.125);
    }

    #[test]
    fn obj_reads_vertices_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.obj");
        fs::write(
            &path,
            "# comment\nv 1 2 3\nvn 0 0 1\nv 4 5 6\nf 1 2\nvt 0 0\n",
        )
        .unwrap();
        let cloud = read_obj(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_relative_eq!(cloud.points()[1].y, 5.0);
    }

    #[test]
    fn dispatch_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud::new(sample_points(9)).unwrap();
        let ply = dir.path().join("a.ply");
        write_cloud(&ply, &cloud).unwrap();
        assert_eq!(read_cloud(&ply).unwrap().points(), cloud.points());
        let xyz = dir.path().join("a.xyz");
        write_cloud(&xyz, &cloud).unwrap();
        assert_eq!(read_cloud(&xyz).unwrap().points(), cloud.points());
        assert!(read_cloud(dir.path().join("a.bad")).is_err());
        assert_eq!(read_cloud(&ply).unwrap().id, "a");
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.xyz");
        fs::write(&path, "").unwrap();
        assert!(matches!(read_xyz(&path), Err(Error::EmptyCloud)));
    }
}
