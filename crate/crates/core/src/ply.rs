//! Minimal PLY reader/writer covering the ascii and binary little-endian
//! encodings with scalar and list properties.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

    fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
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
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn write_le(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Self::I8 => out.push(v as i8 as u8),
            Self::U8 => out.push(v as u8),
            Self::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            Self::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            Self::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Self::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            Self::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Self::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Self::F32 | Self::F64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Property {
    pub name: String,
    pub kind: PropertyKind,
}

impl Property {
    pub fn scalar(name: &str, ty: ScalarType) -> Self {
        Self {
            name: name.to_string(),
            kind: PropertyKind::Scalar(ty),
        }
    }

    pub fn list(name: &str, count: ScalarType, item: ScalarType) -> Self {
        Self {
            name: name.to_string(),
            kind: PropertyKind::List { count, item },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Scalar(f64),
    List(Vec<f64>),
}

impl Field {
    pub fn as_scalar(&self) -> f64 {
        match self {
            Field::Scalar(v) => *v,
            Field::List(_) => f64::NAN,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub name: String,
    pub properties: Vec<Property>,
    pub rows: Vec<Vec<Field>>,
}

impl Element {
    pub fn new(name: &str, properties: Vec<Property>) -> Self {
        Self {
            name: name.to_string(),
            properties,
            rows: Vec::new(),
        }
    }

    pub fn property_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p.name == name)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ply {
    pub elements: Vec<Element>,
}

impl Ply {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }
}

pub fn write_ply(path: &Path, ply: &Ply, format: PlyFormat) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"ply\n");
    out.extend_from_slice(match format {
        PlyFormat::Ascii => b"format ascii 1.0\n".as_slice(),
        PlyFormat::BinaryLittleEndian => b"format binary_little_endian 1.0\n".as_slice(),
    });
    for el in &ply.elements {
        out.extend_from_slice(format!("element {} {}\n", el.name, el.rows.len()).as_bytes());
        for p in &el.properties {
            let line = match &p.kind {
                PropertyKind::Scalar(t) => format!("property {} {}\n", t.name(), p.name),
                PropertyKind::List { count, item } => {
                    format!("property list {} {} {}\n", count.name(), item.name(), p.name)
                }
            };
            out.extend_from_slice(line.as_bytes());
        }
    }
    out.extend_from_slice(b"end_header\n");
    for el in &ply.elements {
        for row in &el.rows {
            debug_assert_eq!(row.len(), el.properties.len());
            match format {
                PlyFormat::Ascii => {
                    let mut parts = Vec::with_capacity(row.len());
                    for (p, f) in el.properties.iter().zip(row) {
                        match (&p.kind, f) {
                            (PropertyKind::Scalar(t), Field::Scalar(v)) => parts.push(fmt_ascii(*t, *v)),
                            (PropertyKind::List { item, .. }, Field::List(vs)) => {
                                parts.push(vs.len().to_string());
                                parts.extend(vs.iter().map(|v| fmt_ascii(*item, *v)));
                            }
                            _ => return Err(Error::Failed(format!("field/property mismatch for {}", p.name))),
                        }
                    }
                    out.extend_from_slice(parts.join(" ").as_bytes());
                    out.push(b'\n');
                }
                PlyFormat::BinaryLittleEndian => {
                    for (p, f) in el.properties.iter().zip(row) {
                        match (&p.kind, f) {
                            (PropertyKind::Scalar(t), Field::Scalar(v)) => t.write_le(*v, &mut out),
                            (PropertyKind::List { count, item }, Field::List(vs)) => {
                                count.write_le(vs.len() as f64, &mut out);
                                for v in vs {
                                    item.write_le(*v, &mut out);
                                }
                            }
                            _ => return Err(Error::Failed(format!("field/property mismatch for {}", p.name))),
                        }
                    }
                }
            }
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn fmt_ascii(t: ScalarType, v: f64) -> String {
    if t.is_integer() {
        format!("{}", v as i64)
    } else {
        // shortest representation that round-trips
        format!("{v:?}")
    }
}

pub fn read_ply(path: &Path) -> Result<Ply> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(path, &bytes)
}

fn parse_ply(path: &Path, bytes: &[u8]) -> Result<Ply> {
    let header_end = find_subslice(bytes, b"end_header")
        .ok_or_else(|| Error::parse(path, 1, "missing end_header"))?;
    let body_start = bytes[header_end..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| header_end + p + 1)
        .ok_or_else(|| Error::parse(path, 1, "truncated header"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::parse(path, 1, "header is not utf-8"))?;

    let mut format = None;
    let mut elements: Vec<(Element, usize)> = Vec::new();
    for (lineno, line) in header.lines().enumerate() {
        let line_no = lineno + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["ply"] if lineno == 0 => {}
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, _] => {
                return Err(Error::parse(path, line_no, format!("unsupported PLY format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(path, line_no, "bad element count"))?;
                elements.push((Element::new(name, Vec::new()), count));
            }
            ["property", "list", ct, it, name] => {
                let (el, _) = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, line_no, "property before element"))?;
                let count = ScalarType::parse(ct)
                    .ok_or_else(|| Error::parse(path, line_no, format!("unknown type {ct}")))?;
                let item = ScalarType::parse(it)
                    .ok_or_else(|| Error::parse(path, line_no, format!("unknown type {it}")))?;
                el.properties.push(Property::list(name, count, item));
            }
            ["property", ty, name] => {
                let (el, _) = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, line_no, "property before element"))?;
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| Error::parse(path, line_no, format!("unknown type {ty}")))?;
                el.properties.push(Property::scalar(name, ty));
            }
            _ => return Err(Error::parse(path, line_no, format!("unrecognized header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| Error::parse(path, 1, "missing format line"))?;
    let body = &bytes[body_start..];
    let header_lines = header.lines().count() + 1;

    let mut out = Ply::default();
    match format {
        PlyFormat::BinaryLittleEndian => {
            let mut pos = 0usize;
            let truncated = || Error::Decode {
                path: path.to_path_buf(),
                msg: "truncated PLY body".into(),
            };
            for (mut el, count) in elements {
                el.rows.reserve(count);
                for _ in 0..count {
                    let mut row = Vec::with_capacity(el.properties.len());
                    for p in &el.properties {
                        match p.kind {
                            PropertyKind::Scalar(t) => {
                                let b = body.get(pos..pos + t.size()).ok_or_else(truncated)?;
                                row.push(Field::Scalar(t.read_le(b)));
                                pos += t.size();
                            }
                            PropertyKind::List { count, item } => {
                                let b = body.get(pos..pos + count.size()).ok_or_else(truncated)?;
                                let n = count.read_le(b) as usize;
                                pos += count.size();
                                let mut vs = Vec::with_capacity(n);
                                for _ in 0..n {
                                    let b = body.get(pos..pos + item.size()).ok_or_else(truncated)?;
                                    vs.push(item.read_le(b));
                                    pos += item.size();
                                }
                                row.push(Field::List(vs));
                            }
                        }
                    }
                    el.rows.push(row);
                }
                out.elements.push(el);
            }
        }
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::parse(path, header_lines, "body is not utf-8"))?;
            let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
            for (mut el, count) in elements {
                for _ in 0..count {
                    let (i, line) = lines
                        .next()
                        .ok_or_else(|| Error::parse(path, header_lines, "truncated PLY body"))?;
                    let line_no = header_lines + i + 1;
                    let mut toks = line.split_whitespace().map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| Error::parse(path, line_no, format!("bad number '{t}'")))
                    });
                    let mut next = || toks.next().unwrap_or_else(|| Err(Error::parse(path, line_no, "missing value")));
                    let mut row = Vec::with_capacity(el.properties.len());
                    for p in &el.properties {
                        match p.kind {
                            PropertyKind::Scalar(_) => row.push(Field::Scalar(next()?)),
                            PropertyKind::List { .. } => {
                                let n = next()? as usize;
                                let vs = (0..n).map(|_| next()).collect::<Result<Vec<_>>>()?;
                                row.push(Field::List(vs));
                            }
                        }
                    }
                    el.rows.push(row);
                }
                out.elements.push(el);
            }
        }
    }
    Ok(out)
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}
