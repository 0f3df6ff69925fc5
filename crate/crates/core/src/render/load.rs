//! PLY (ascii, binary little-endian) and OBJ (`v`/`f` records) readers.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use crate::geom::{MeshError, MeshModel};

#[derive(Debug, Error)]
pub enum MeshLoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error(transparent)]
    Invalid(#[from] MeshError),
}

impl MeshLoadError {
    fn parse(offset: usize, message: impl Into<String>) -> Self {
        MeshLoadError::Parse {
            offset,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Ply,
    Obj,
}

/// Reads a PLY or OBJ file. The format comes from the extension, falling back
/// to sniffing the `ply` magic line.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<MeshModel, MeshLoadError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| MeshLoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let format = match ext.as_deref() {
        Some("ply") => MeshFormat::Ply,
        Some("obj") => MeshFormat::Obj,
        _ if bytes.starts_with(b"ply") => MeshFormat::Ply,
        _ => MeshFormat::Obj,
    };
    parse_mesh(&bytes, format)
}

pub fn parse_mesh(bytes: &[u8], format: MeshFormat) -> Result<MeshModel, MeshLoadError> {
    let (vertices, triangles) = match format {
        MeshFormat::Ply => parse_ply(bytes)?,
        MeshFormat::Obj => parse_obj(bytes)?,
    };
    Ok(MeshModel::new(vertices, triangles)?)
}

type Soup = (Vec<Vector3<f64>>, Vec<[u32; 3]>);

fn fan(polygon: &[u32], triangles: &mut Vec<[u32; 3]>) {
    for i in 1..polygon.len().saturating_sub(1) {
        triangles.push([polygon[0], polygon[i], polygon[i + 1]]);
    }
}

/// Iterates `(byte offset, line)` pairs, without the line terminator.
fn lines_with_offsets(bytes: &[u8]) -> impl Iterator<Item = (usize, &[u8])> {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= bytes.len() {
            return None;
        }
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |p| start + p);
        let mut line = &bytes[start..end];
        if line.last() == Some(&b'\r') {
            line = &line[..line.len() - 1];
        }
        let item = (start, line);
        start = end + 1;
        Some(item)
    })
}

/// Whitespace-separated tokens of a line with their absolute offsets.
fn tokens(offset: usize, line: &[u8]) -> impl Iterator<Item = (usize, &str)> {
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < line.len() && line[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= line.len() {
            return None;
        }
        let s = i;
        while i < line.len() && !line[i].is_ascii_whitespace() {
            i += 1;
        }
        Some((
            offset + s,
            std::str::from_utf8(&line[s..i]).unwrap_or("\u{fffd}"),
        ))
    })
}

fn parse_f64(offset: usize, tok: &str) -> Result<f64, MeshLoadError> {
    tok.parse::<f64>()
        .map_err(|_| MeshLoadError::parse(offset, format!("expected a number, found {tok:?}")))
}

fn parse_obj(bytes: &[u8]) -> Result<Soup, MeshLoadError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (offset, line) in lines_with_offsets(bytes) {
        let mut toks = tokens(offset, line);
        match toks.next() {
            Some((_, "v")) => {
                let mut xyz = [0.0; 3];
                for c in &mut xyz {
                    let (o, t) = toks.next().ok_or_else(|| {
                        MeshLoadError::parse(
                            offset + line.len(),
                            "vertex record needs 3 coordinates",
                        )
                    })?;
                    *c = parse_f64(o, t)?;
                }
                vertices.push(Vector3::from(xyz));
            }
            Some((_, "f")) => {
                let mut polygon = Vec::new();
                for (o, t) in toks {
                    let index_tok = t.split('/').next().unwrap_or("");
                    let raw: i64 = index_tok
                        .parse()
                        .map_err(|_| MeshLoadError::parse(o, format!("bad face index {t:?}")))?;
                    let resolved = match raw {
                        0 => return Err(MeshLoadError::parse(o, "face index 0 is invalid in OBJ")),
                        r if r > 0 => r - 1,
                        r => vertices.len() as i64 + r,
                    };
                    if resolved < 0 || resolved > u32::MAX as i64 {
                        return Err(MeshLoadError::parse(
                            o,
                            format!("face index {raw} out of range"),
                        ));
                    }
                    polygon.push(resolved as u32);
                }
                if polygon.len() < 3 {
                    return Err(MeshLoadError::parse(
                        offset,
                        "face needs at least 3 vertices",
                    ));
                }
                fan(&polygon, &mut triangles);
            }
            _ => {}
        }
    }
    Ok((vertices, triangles))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Scalar> {
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

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
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
    properties: Vec<Property>,
}

/// Reads one value at a time from the PLY body, ascii or binary.
enum BodyReader<'a> {
    Ascii { bytes: &'a [u8], pos: usize },
    Binary { bytes: &'a [u8], pos: usize },
}

impl BodyReader<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64, MeshLoadError> {
        match self {
            BodyReader::Ascii { bytes, pos } => {
                while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                    *pos += 1;
                }
                if *pos >= bytes.len() {
                    return Err(MeshLoadError::parse(
                        bytes.len(),
                        "unexpected end of file in PLY body",
                    ));
                }
                let start = *pos;
                while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
                    *pos += 1;
                }
                let tok = std::str::from_utf8(&bytes[start..*pos]).unwrap_or("\u{fffd}");
                parse_f64(start, tok)
            }
            BodyReader::Binary { bytes, pos } => {
                let n = ty.size();
                if *pos + n > bytes.len() {
                    return Err(MeshLoadError::parse(
                        *pos,
                        format!(
                            "unexpected end of data: needed {n} bytes, {} remain",
                            bytes.len() - *pos
                        ),
                    ));
                }
                let v = ty.decode_le(&bytes[*pos..*pos + n]);
                *pos += n;
                Ok(v)
            }
        }
    }
}

fn parse_ply(bytes: &[u8]) -> Result<Soup, MeshLoadError> {
    let mut lines = lines_with_offsets(bytes);
    match lines.next() {
        Some((_, b"ply")) => {}
        _ => return Err(MeshLoadError::parse(0, "missing 'ply' magic line")),
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut body_start = None;
    for (offset, line) in lines.by_ref() {
        let toks: Vec<(usize, &str)> = tokens(offset, line).collect();
        let words: Vec<&str> = toks.iter().map(|t| t.1).collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, ..] => {
                return Err(MeshLoadError::parse(
                    toks[1].0,
                    format!("unsupported PLY format {other:?}"),
                ))
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| {
                    MeshLoadError::parse(toks[2].0, format!("bad element count {count:?}"))
                })?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count_ty, item_ty, name] => {
                let c = Scalar::parse(count_ty).ok_or_else(|| {
                    MeshLoadError::parse(toks[2].0, format!("unknown type {count_ty:?}"))
                })?;
                let i = Scalar::parse(item_ty).ok_or_else(|| {
                    MeshLoadError::parse(toks[3].0, format!("unknown type {item_ty:?}"))
                })?;
                elements
                    .last_mut()
                    .ok_or_else(|| MeshLoadError::parse(offset, "property before any element"))?
                    .properties
                    .push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let s = Scalar::parse(ty).ok_or_else(|| {
                    MeshLoadError::parse(toks[1].0, format!("unknown type {ty:?}"))
                })?;
                elements
                    .last_mut()
                    .ok_or_else(|| MeshLoadError::parse(offset, "property before any element"))?
                    .properties
                    .push(Property::Scalar(name.to_string(), s));
            }
            ["end_header"] => {
                body_start = Some((offset + line.len() + 1).min(bytes.len()));
                // a CRLF header leaves the '\r' inside `line`'s span
                if bytes.get(offset + line.len()) == Some(&b'\r') {
                    body_start = Some((offset + line.len() + 2).min(bytes.len()));
                }
                break;
            }
            _ => {
                return Err(MeshLoadError::parse(
                    offset,
                    format!(
                        "unrecognized PLY header line {:?}",
                        String::from_utf8_lossy(line)
                    ),
                ))
            }
        }
    }
    let body_start = body_start
        .ok_or_else(|| MeshLoadError::parse(bytes.len(), "PLY header has no end_header"))?;
    let binary = binary.ok_or_else(|| MeshLoadError::parse(0, "PLY header has no format line"))?;
    let mut reader = if binary {
        BodyReader::Binary {
            bytes,
            pos: body_start,
        }
    } else {
        BodyReader::Ascii {
            bytes,
            pos: body_start,
        }
    };

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for element in &elements {
        let is_vertex = element.name == "vertex";
        let is_face = element.name == "face";
        let axis_of = |name: &str| match name {
            "x" => Some(0),
            "y" => Some(1),
            "z" => Some(2),
            _ => None,
        };
        if is_vertex {
            let names: Vec<&str> = element
                .properties
                .iter()
                .filter_map(|p| match p {
                    Property::Scalar(n, _) => Some(n.as_str()),
                    _ => None,
                })
                .collect();
            if !["x", "y", "z"].iter().all(|a| names.contains(a)) {
                return Err(MeshLoadError::parse(
                    0,
                    "vertex element lacks x/y/z properties",
                ));
            }
        }
        for _ in 0..element.count {
            let mut xyz = [0.0; 3];
            for prop in &element.properties {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = reader.next(*ty)?;
                        if is_vertex {
                            if let Some(a) = axis_of(name) {
                                xyz[a] = v;
                            }
                        }
                    }
                    Property::List(name, count_ty, item_ty) => {
                        let n = reader.next(*count_ty)?;
                        if !(n >= 0.0) || n.fract() != 0.0 {
                            return Err(MeshLoadError::parse(0, format!("bad list length {n}")));
                        }
                        let mut polygon = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            let idx = reader.next(*item_ty)?;
                            if !(idx >= 0.0) || idx.fract() != 0.0 || idx > u32::MAX as f64 {
                                return Err(MeshLoadError::parse(
                                    0,
                                    format!("bad vertex index {idx}"),
                                ));
                            }
                            polygon.push(idx as u32);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            if polygon.len() < 3 {
                                return Err(MeshLoadError::parse(
                                    0,
                                    "face needs at least 3 vertices",
                                ));
                            }
                            fan(&polygon, &mut triangles);
                        }
                    }
                }
            }
            if is_vertex {
                vertices.push(Vector3::from(xyz));
            }
        }
    }
    Ok((vertices, triangles))
}

/// Serializes a mesh as a minimal OBJ document.
pub fn write_obj(mesh: &MeshModel) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}
