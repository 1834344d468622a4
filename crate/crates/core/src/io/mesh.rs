use std::fmt::Write as _;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{read_bytes, write_atomic};
use crate::error::{GeomError, Result};
use crate::math::Vec3;
use crate::mesh::Mesh;

/// Wavefront OBJ text. Colours, when present, are written as `v x y z r g b`.
pub fn to_obj(mesh: &Mesh) -> String {
    let mut s = String::new();
    let colors = mesh.vertex_colors();
    for (i, v) in mesh.vertices().iter().enumerate() {
        match colors {
            Some(c) => writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[i][0], c[i][1], c[i][2]),
            None => writeln!(s, "v {} {} {}", v.x, v.y, v.z),
        }
        .unwrap();
    }
    for f in mesh.faces() {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    s
}

fn obj_index(token: &str, n: usize) -> Option<u32> {
    let raw: i64 = token.split('/').next()?.parse().ok()?;
    let idx = if raw > 0 { raw - 1 } else { n as i64 + raw };
    (idx >= 0 && (idx as usize) < n).then_some(idx as u32)
}

/// Parse OBJ vertices (optionally with colours) and faces; polygons are fan
/// triangulated. Vertex order is preserved.
pub fn parse_obj(text: &str, path: &Path, instance_id: u32) -> Result<Mesh> {
    let mut verts = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let err = |msg: &str| GeomError::parse(path, format!("line {}: {msg}", ln + 1));
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let vals: Vec<f64> = it.map(|t| t.parse().map_err(|_| err("bad number"))).collect::<Result<_>>()?;
                match vals.len() {
                    3 | 4 => verts.push(Vec3::new(vals[0], vals[1], vals[2])),
                    6 | 7 => {
                        verts.push(Vec3::new(vals[0], vals[1], vals[2]));
                        colors.push([vals[3], vals[4], vals[5]]);
                    }
                    _ => return Err(err("vertex needs 3 or 6 values")),
                }
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| obj_index(t, verts.len()).ok_or_else(|| err("face index out of range")))
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if !colors.is_empty() && colors.len() != verts.len() {
        return Err(GeomError::parse(path, "only some vertices carry colours"));
    }
    let mesh = Mesh::new(verts, faces, instance_id)?;
    if colors.is_empty() {
        Ok(mesh)
    } else {
        mesh.with_colors(colors)
    }
}

/// Binary little-endian PLY with float positions, optional uchar colours and
/// an optional int `part_label`.
pub fn to_ply(mesh: &Mesh) -> Vec<u8> {
    let colors = mesh.vertex_colors();
    let labels = mesh.part_labels();
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        mesh.vertices().len()
    );
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if labels.is_some() {
        header.push_str("property int part_label\n");
    }
    header.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.faces().len()
    ));
    let mut out = header.into_bytes();
    for (i, v) in mesh.vertices().iter().enumerate() {
        for c in [v.x, v.y, v.z] {
            out.write_f32::<LittleEndian>(c as f32).unwrap();
        }
        if let Some(c) = colors {
            for ch in c[i] {
                out.push((ch.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        if let Some(l) = labels {
            out.write_i32::<LittleEndian>(l[i] as i32).unwrap();
        }
    }
    for f in mesh.faces() {
        out.push(3);
        for &i in f {
            out.write_i32::<LittleEndian>(i as i32).unwrap();
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn read(self, r: &mut Cursor<&[u8]>) -> std::io::Result<f64> {
        Ok(match self {
            Scalar::I8 => r.read_i8()? as f64,
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::I16 => r.read_i16::<LittleEndian>()? as f64,
            Scalar::U16 => r.read_u16::<LittleEndian>()? as f64,
            Scalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            Scalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            Scalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            Scalar::F64 => r.read_f64::<LittleEndian>()?,
        })
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

fn parse_header(bytes: &[u8], path: &Path) -> Result<(Vec<Element>, usize)> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| GeomError::parse(path, "missing end_header"))?
        + END.len();
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| GeomError::parse(path, "header is not text"))?;
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(GeomError::parse(path, "not a PLY file"));
    }
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => {
                return Err(GeomError::parse(path, format!("unsupported PLY format {other}")));
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| GeomError::parse(path, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let (c, i) = Scalar::parse(c)
                    .zip(Scalar::parse(i))
                    .ok_or_else(|| GeomError::parse(path, "bad list property type"))?;
                elements
                    .last_mut()
                    .ok_or_else(|| GeomError::parse(path, "property before element"))?
                    .props
                    .push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| GeomError::parse(path, format!("bad property type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| GeomError::parse(path, "property before element"))?
                    .props
                    .push(Property::Scalar(name.to_string(), ty));
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            _ => return Err(GeomError::parse(path, format!("unexpected header line {line:?}"))),
        }
    }
    Ok((elements, end))
}

/// Parse a binary little-endian PLY mesh. Unknown elements and properties
/// are skipped; polygons are fan triangulated.
pub fn parse_ply(bytes: &[u8], path: &Path, instance_id: u32) -> Result<Mesh> {
    let (elements, start) = parse_header(bytes, path)?;
    let mut r = Cursor::new(bytes);
    r.set_position(start as u64);
    let truncated = |_| GeomError::parse(path, "file ends inside the data section");
    let mut verts = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            let mut rgb = [None; 3];
            let mut label = None;
            for p in &el.props {
                match p {
                    Property::Scalar(name, ty) => {
                        let v = ty.read(&mut r).map_err(truncated)?;
                        let scale = if *ty == Scalar::U8 { 255.0 } else { 1.0 };
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            "red" => rgb[0] = Some(v / scale),
                            "green" => rgb[1] = Some(v / scale),
                            "blue" => rgb[2] = Some(v / scale),
                            "part_label" => label = Some(v),
                            _ => {}
                        }
                    }
                    Property::List(name, count_ty, item_ty) => {
                        let n = count_ty.read(&mut r).map_err(truncated)? as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(item_ty.read(&mut r).map_err(truncated)?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            if n < 3 {
                                return Err(GeomError::parse(path, "face with fewer than 3 vertices"));
                            }
                            for k in 1..n - 1 {
                                faces.push([items[0], items[k], items[k + 1]]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                verts.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                if let [Some(a), Some(b), Some(c)] = rgb {
                    colors.push([a, b, c]);
                }
                if let Some(l) = label {
                    if l < 0.0 {
                        return Err(GeomError::parse(path, "negative part label"));
                    }
                    labels.push(l as u32);
                }
            }
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| GeomError::io(path, e))?;
    if !rest.is_empty() {
        return Err(GeomError::parse(path, "trailing bytes after the data section"));
    }
    let n = verts.len();
    let faces = faces
        .into_iter()
        .map(|f| {
            let mut out = [0u32; 3];
            for (o, i) in out.iter_mut().zip(f) {
                if !(i >= 0.0 && (i as usize) < n) {
                    return Err(GeomError::parse(path, "face index out of range"));
                }
                *o = i as u32;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mesh = Mesh::new(verts, faces, instance_id)?;
    if colors.len() == n && n > 0 {
        mesh = mesh.with_colors(colors)?;
    }
    if labels.len() == n && n > 0 {
        mesh = mesh.with_part_labels(labels)?;
    }
    Ok(mesh)
}

/// Load an `.obj` or `.ply` mesh.
pub fn read_mesh(path: &Path, instance_id: u32) -> Result<Mesh> {
    match extension(path).as_deref() {
        Some("obj") => {
            let bytes = read_bytes(path)?;
            let text = String::from_utf8(bytes).map_err(|_| GeomError::parse(path, "OBJ is not UTF-8"))?;
            parse_obj(&text, path, instance_id)
        }
        Some("ply") => parse_ply(&read_bytes(path)?, path, instance_id),
        _ => Err(GeomError::parse(path, "unknown mesh extension (expected .obj or .ply)")),
    }
}

pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    match extension(path).as_deref() {
        Some("obj") => write_atomic(path, to_obj(mesh).as_bytes()),
        Some("ply") => write_atomic(path, &to_ply(mesh)),
        _ => Err(GeomError::InvalidParameter(format!(
            "unknown mesh extension for {} (expected .obj or .ply)",
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::{capsule, icosphere, merge};

    fn sample() -> Mesh {
        let a = icosphere(Vec3::zeros(), 0.5, 1, 3).unwrap();
        let b = capsule(Vec3::new(0.6, 0.0, 0.0), Vec3::new(1.2, 0.1, 0.0), 0.1, 6, 2, 2, 3).unwrap();
        let m = merge(&[a, b], &[0, 4], 3).unwrap();
        let n = m.vertices().len();
        m.with_colors((0..n).map(|i| [(i % 256) as f64 / 255.0, 0.5, 1.0]).collect()).unwrap()
    }

    #[test]
    fn obj_round_trip_is_exact() {
        let m = sample();
        let back = parse_obj(&to_obj(&m), Path::new("m.obj"), 3).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.faces(), m.faces());
        assert_eq!(back.vertex_colors(), m.vertex_colors());
    }

    #[test]
    fn obj_polygons_and_negative_indices() {
        let text = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\nf -4 -3 -1\n";
        let m = parse_obj(text, Path::new("q.obj"), 1).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3], [0, 1, 3]]);
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n", Path::new("bad.obj"), 1).is_err());
        assert!(parse_obj("v 0 0\n", Path::new("bad.obj"), 1).is_err());
    }

    #[test]
    fn ply_round_trip_keeps_labels_and_colours() {
        let m = sample();
        let back = parse_ply(&to_ply(&m), Path::new("m.ply"), 3).unwrap();
        assert_eq!(back.faces(), m.faces());
        assert_eq!(back.part_labels(), m.part_labels());
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert!((a - b).norm() < 1e-6);
        }
        for (a, b) in back.vertex_colors().unwrap().iter().zip(m.vertex_colors().unwrap()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        // a second round trip is bit-exact
        assert_eq!(to_ply(&back), to_ply(&m));
    }

    #[test]
    fn ply_rejects_truncated_and_ascii_files() {
        let bytes = to_ply(&sample());
        assert!(parse_ply(&bytes[..bytes.len() - 3], Path::new("t.ply"), 1).is_err());
        let ascii = b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
        assert!(parse_ply(ascii, Path::new("a.ply"), 1).is_err());
        assert!(parse_ply(b"not a ply", Path::new("x.ply"), 1).is_err());
    }

    #[test]
    fn files_dispatch_on_extension() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample();
        for name in ["m.ply", "m.obj"] {
            let p = dir.path().join(name);
            write_mesh(&p, &m).unwrap();
            assert_eq!(read_mesh(&p, 3).unwrap().faces(), m.faces());
        }
        assert!(write_mesh(&dir.path().join("m.stl"), &m).is_err());
        assert!(matches!(read_mesh(&dir.path().join("missing.ply"), 1), Err(GeomError::Io { .. })));
    }
}
