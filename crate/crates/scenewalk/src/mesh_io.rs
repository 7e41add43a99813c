//! OBJ and PLY triangle meshes.

use std::fmt::Write as _;
use std::path::Path;

use scenewalk_core::math::Vec3;
use scenewalk_core::scene::SceneMesh;

use crate::error::{Error, Result};

/// Vertices and triangles as read, before validation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl RawMesh {
    /// Validates into a scene mesh, logging dropped degenerate faces.
    pub fn into_scene(self) -> Result<SceneMesh> {
        let (mesh, dropped) = SceneMesh::from_raw(self.vertices, self.faces)?;
        if dropped > 0 {
            log::warn!("dropped {dropped} degenerate triangles");
        }
        Ok(mesh)
    }
}

fn fan(poly: &[u32], faces: &mut Vec<[u32; 3]>) {
    for i in 1..poly.len() - 1 {
        faces.push([poly[0], poly[i], poly[i + 1]]);
    }
}

/// `v` and `f` records; polygons are fanned, negative indices count back
/// from the latest vertex, texture and normal indices are ignored.
pub fn parse_obj(text: &str, src: &str) -> Result<RawMesh> {
    let err = |line: usize, msg: String| Error::Parse { src: src.to_string(), line, msg };
    let mut out = RawMesh::default();
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = line.split('#').next().unwrap_or("");
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut v = [0.0; 3];
                for c in &mut v {
                    let tok = it.next().ok_or_else(|| err(ln, "vertex needs three coordinates".into()))?;
                    *c = tok.parse().map_err(|_| err(ln, format!("bad coordinate {tok:?}")))?;
                }
                out.vertices.push(v);
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| err(ln, format!("bad face index {tok:?}")))?;
                    let n = out.vertices.len() as i64;
                    let idx = if i > 0 { i - 1 } else { n + i };
                    if i == 0 || idx < 0 || idx >= n {
                        return Err(err(ln, format!("face index {i} out of range (have {n} vertices)")));
                    }
                    poly.push(idx as u32);
                }
                if poly.len() < 3 {
                    return Err(err(ln, "face needs at least three vertices".into()));
                }
                fan(&poly, &mut out.faces);
            }
            _ => {}
        }
    }
    Ok(out)
}

pub fn write_obj(vertices: &[Vec3], faces: &[[u32; 3]]) -> String {
    let mut s = String::with_capacity(32 * (vertices.len() + faces.len()));
    for v in vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
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

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

/// One decoded element instance: scalar values and lists, by property order.
enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

fn vertex_and_face(elements: &[Element], values: Vec<Vec<Vec<Value>>>, src: &str) -> Result<RawMesh> {
    let mut out = RawMesh::default();
    for (el, rows) in elements.iter().zip(values) {
        match el.name.as_str() {
            "vertex" => {
                let pos = |axis: &str| {
                    el.props.iter().position(|p| matches!(p, Property::Scalar(n, _) if n == axis)).ok_or_else(|| {
                        Error::Parse { src: src.to_string(), line: 0, msg: format!("vertex element has no {axis} property") }
                    })
                };
                let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);
                for row in rows {
                    let get = |i: usize| match &row[i] {
                        Value::Scalar(v) => *v,
                        Value::List(_) => f64::NAN,
                    };
                    out.vertices.push([get(ix), get(iy), get(iz)]);
                }
            }
            "face" => {
                let li = el
                    .props
                    .iter()
                    .position(|p| matches!(p, Property::List(n, ..) if n == "vertex_indices" || n == "vertex_index"))
                    .ok_or_else(|| Error::Parse {
                        src: src.to_string(),
                        line: 0,
                        msg: "face element has no vertex_indices list".into(),
                    })?;
                for (fi, row) in rows.into_iter().enumerate() {
                    let Value::List(idx) = &row[li] else { unreachable!("list property decoded as list") };
                    if idx.len() < 3 || idx.iter().any(|i| *i < 0.0) {
                        return Err(Error::Parse { src: src.to_string(), line: 0, msg: format!("face {fi} is malformed") });
                    }
                    let poly: Vec<u32> = idx.iter().map(|i| *i as u32).collect();
                    fan(&poly, &mut out.faces);
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// ASCII and binary little-endian PLY. Elements other than `vertex` and
/// `face` are skipped.
pub fn parse_ply(bytes: &[u8], src: &str) -> Result<RawMesh> {
    let perr = |line: usize, msg: String| Error::Parse { src: src.to_string(), line, msg };
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Option<(usize, String)> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| *pos + e);
        let s = String::from_utf8_lossy(&bytes[*pos..end]).trim_end_matches('\r').to_string();
        *pos = (end + 1).min(bytes.len());
        line_no += 1;
        Some((line_no, s))
    };
    match next_line(&mut pos) {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(perr(1, "missing ply magic".into())),
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut header_lines = 1;
    loop {
        let (ln, line) = next_line(&mut pos).ok_or_else(|| perr(header_lines, "header has no end_header".into()))?;
        header_lines = ln;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLe),
            ["format", f, ..] => return Err(perr(ln, format!("unsupported format {f}"))),
            ["element", name, count] => {
                let count = count.parse().map_err(|_| perr(ln, format!("bad element count {count:?}")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            ["property", "list", c, t, name] => {
                let (c, t) = match (Scalar::parse(c), Scalar::parse(t)) {
                    (Some(c), Some(t)) => (c, t),
                    _ => return Err(perr(ln, format!("unknown list types {c} {t}"))),
                };
                let el = elements.last_mut().ok_or_else(|| perr(ln, "property before element".into()))?;
                el.props.push(Property::List(name.to_string(), c, t));
            }
            ["property", t, name] => {
                let t = Scalar::parse(t).ok_or_else(|| perr(ln, format!("unknown property type {t}")))?;
                let el = elements.last_mut().ok_or_else(|| perr(ln, "property before element".into()))?;
                el.props.push(Property::Scalar(name.to_string(), t));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(perr(ln, format!("unexpected header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| perr(header_lines, "header has no format line".into()))?;

    let mut values = Vec::with_capacity(elements.len());
    match format {
        PlyFormat::Ascii => {
            let body = String::from_utf8_lossy(&bytes[pos..]);
            let mut lines = body.lines().enumerate().map(|(i, l)| (header_lines + 1 + i, l)).filter(|(_, l)| !l.trim().is_empty());
            for el in &elements {
                let mut rows = Vec::with_capacity(el.count);
                for _ in 0..el.count {
                    let (ln, line) = lines.next().ok_or_else(|| perr(header_lines, format!("file ends inside element {}", el.name)))?;
                    let mut toks = line.split_whitespace();
                    let mut num = || -> Result<f64> {
                        let t = toks.next().ok_or_else(|| perr(ln, "too few values".into()))?;
                        t.parse().map_err(|_| perr(ln, format!("bad number {t:?}")))
                    };
                    let mut row = Vec::with_capacity(el.props.len());
                    for p in &el.props {
                        row.push(match p {
                            Property::Scalar(..) => Value::Scalar(num()?),
                            Property::List(..) => {
                                let n = num()?;
                                if n < 0.0 {
                                    return Err(perr(ln, "negative list length".into()));
                                }
                                Value::List((0..n as usize).map(|_| num()).collect::<Result<_>>()?)
                            }
                        });
                    }
                    rows.push(row);
                }
                values.push(rows);
            }
        }
        PlyFormat::BinaryLe => {
            let berr = |offset: usize, msg: String| Error::Binary { src: src.to_string(), offset, msg };
            let read = |t: Scalar, pos: &mut usize| -> Result<f64> {
                let end = *pos + t.size();
                if end > bytes.len() {
                    return Err(berr(*pos, "unexpected end of data".into()));
                }
                let v = t.read_le(&bytes[*pos..end]);
                *pos = end;
                Ok(v)
            };
            for el in &elements {
                let mut rows = Vec::with_capacity(el.count.min(1 << 24));
                for _ in 0..el.count {
                    let mut row = Vec::with_capacity(el.props.len());
                    for p in &el.props {
                        row.push(match p {
                            Property::Scalar(_, t) => Value::Scalar(read(*t, &mut pos)?),
                            Property::List(_, c, t) => {
                                let at = pos;
                                let n = read(*c, &mut pos)?;
                                if n < 0.0 || n > 1e6 {
                                    return Err(berr(at, format!("implausible list length {n}")));
                                }
                                Value::List((0..n as usize).map(|_| read(*t, &mut pos)).collect::<Result<_>>()?)
                            }
                        });
                    }
                    rows.push(row);
                }
                values.push(rows);
            }
        }
    }
    vertex_and_face(&elements, values, src)
}

/// Binary little-endian PLY with float vertices and int faces.
pub fn write_ply(vertices: &[Vec3], faces: &[[u32; 3]]) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        vertices.len(),
        faces.len()
    )
    .into_bytes();
    for v in vertices {
        for c in v {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    for f in faces {
        out.push(3);
        for i in f {
            out.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    out
}

/// Reads by extension: `.obj` or `.ply`.
pub fn read_mesh(path: &Path) -> Result<SceneMesh> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    let src = path.display().to_string();
    let raw = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("obj") => parse_obj(&String::from_utf8_lossy(&bytes), &src)?,
        Some("ply") => parse_ply(&bytes, &src)?,
        _ => return Err(Error::Usage(format!("{src}: expected a .obj or .ply mesh"))),
    };
    raw.into_scene()
}
