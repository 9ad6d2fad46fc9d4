use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use super::{io_err, Mesh, MeshError, Result};
use crate::labels::LabelState;

/// Face colours for texture (1), non-texture (0) and excluded (-1) facets.
pub const LABEL_COLORS: [(i8, [u8; 3]); 3] = [
    (1, [0, 0, 255]),
    (0, [255, 255, 0]),
    (-1, [128, 128, 128]),
];

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
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, PartialEq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

/// Parses an ASCII or binary little-endian PLY. Only the vertex positions
/// and face vertex lists are read; other elements and properties are skipped.
pub fn parse_ply(bytes: &[u8]) -> Result<Mesh> {
    let (encoding, elements, body_start, header_lines) = parse_header(bytes)?;
    let mut vertices = Vec::new();
    let mut faces: Vec<Vec<i64>> = Vec::new();

    match encoding {
        Encoding::Ascii => {
            let body = String::from_utf8_lossy(&bytes[body_start..]);
            let mut lines = body
                .lines()
                .enumerate()
                .map(|(i, l)| (i + header_lines + 1, l))
                .filter(|(_, l)| !l.trim().is_empty());
            for el in &elements {
                for _ in 0..el.count {
                    let (line, text) = lines.next().ok_or_else(|| MeshError::Parse {
                        line: header_lines,
                        message: format!("file ends before all '{}' records", el.name),
                    })?;
                    let mut nums = text.split_whitespace().map(|t| {
                        t.parse::<f64>().map_err(|_| MeshError::Parse {
                            line,
                            message: format!("bad number '{t}'"),
                        })
                    });
                    let mut next = || {
                        nums.next().unwrap_or_else(|| {
                            Err(MeshError::Parse {
                                line,
                                message: "too few values".into(),
                            })
                        })
                    };
                    let mut record = Record::default();
                    for p in &el.props {
                        match p {
                            Property::Scalar { name, .. } => record.scalar(name, next()?),
                            Property::List { name, .. } => {
                                let n = next()? as usize;
                                let mut items = Vec::with_capacity(n);
                                for _ in 0..n {
                                    items.push(next()?);
                                }
                                record.list(name, items);
                            }
                        }
                    }
                    record.commit(el, line, &mut vertices, &mut faces)?;
                }
            }
        }
        Encoding::BinaryLe => {
            let mut pos = body_start;
            let mut take = |n: usize| -> Result<&[u8]> {
                if pos + n > bytes.len() {
                    return Err(MeshError::Parse {
                        line: header_lines,
                        message: "binary body is truncated".into(),
                    });
                }
                let s = &bytes[pos..pos + n];
                pos += n;
                Ok(s)
            };
            for el in &elements {
                for _ in 0..el.count {
                    let mut record = Record::default();
                    for p in &el.props {
                        match p {
                            Property::Scalar { name, ty } => {
                                let v = ty.read_le(take(ty.size())?);
                                record.scalar(name, v);
                            }
                            Property::List { name, count, item } => {
                                let n = count.read_le(take(count.size())?) as usize;
                                let mut items = Vec::with_capacity(n);
                                for _ in 0..n {
                                    items.push(item.read_le(take(item.size())?));
                                }
                                record.list(name, items);
                            }
                        }
                    }
                    record.commit(el, header_lines, &mut vertices, &mut faces)?;
                }
            }
        }
    }

    let n = vertices.len();
    let mut facets = Vec::with_capacity(faces.len());
    for poly in faces {
        let tris: Vec<[i64; 3]> = match poly.len() {
            3 => vec![[poly[0], poly[1], poly[2]]],
            4 => vec![[poly[0], poly[1], poly[2]], [poly[0], poly[2], poly[3]]],
            k => {
                return Err(MeshError::Parse {
                    line: header_lines,
                    message: format!("face with {k} vertices (only triangles and quads are supported)"),
                })
            }
        };
        for tri in tris {
            for &i in &tri {
                if i < 0 || i as usize >= n {
                    return Err(MeshError::InvalidIndex {
                        facet: facets.len(),
                        index: i,
                        vertex_count: n,
                    });
                }
            }
            facets.push([tri[0] as usize, tri[1] as usize, tri[2] as usize]);
        }
    }
    Mesh::new(vertices, facets)
}

#[derive(Default)]
struct Record {
    x: Option<f64>,
    y: Option<f64>,
    z: Option<f64>,
    indices: Option<Vec<f64>>,
}

impl Record {
    fn scalar(&mut self, name: &str, v: f64) {
        match name {
            "x" => self.x = Some(v),
            "y" => self.y = Some(v),
            "z" => self.z = Some(v),
            _ => {}
        }
    }

    fn list(&mut self, name: &str, items: Vec<f64>) {
        if name == "vertex_indices" || name == "vertex_index" {
            self.indices = Some(items);
        }
    }

    fn commit(
        self,
        el: &Element,
        line: usize,
        vertices: &mut Vec<Point3<f64>>,
        faces: &mut Vec<Vec<i64>>,
    ) -> Result<()> {
        match el.name.as_str() {
            "vertex" => match (self.x, self.y, self.z) {
                (Some(x), Some(y), Some(z)) => vertices.push(Point3::new(x, y, z)),
                _ => {
                    return Err(MeshError::Parse {
                        line,
                        message: "vertex element lacks x/y/z".into(),
                    })
                }
            },
            "face" => {
                let idx = self.indices.ok_or_else(|| MeshError::Parse {
                    line,
                    message: "face element lacks a vertex index list".into(),
                })?;
                faces.push(idx.into_iter().map(|v| v as i64).collect());
            }
            _ => {}
        }
        Ok(())
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Encoding, Vec<Element>, usize, usize)> {
    let mut pos = 0;
    let mut lineno = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| MeshError::Parse {
                line: lineno + 1,
                message: "header is not terminated by end_header".into(),
            })?;
        let line = String::from_utf8_lossy(&bytes[pos..pos + end]).trim().to_string();
        pos += end + 1;
        lineno += 1;
        let err = |m: &str| MeshError::Parse {
            line: lineno,
            message: m.to_string(),
        };
        if lineno == 1 {
            if line != "ply" {
                return Err(err("missing 'ply' magic"));
            }
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLe),
            ["format", other, _] => return Err(err(&format!("unsupported PLY format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| err("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or_else(|| err("property before element"))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count).ok_or_else(|| err("bad list count type"))?,
                    item: Scalar::parse(item).ok_or_else(|| err("bad list item type"))?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| err("property before element"))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty).ok_or_else(|| err(&format!("bad property type '{ty}'")))?,
                });
            }
            ["end_header"] => break,
            _ => return Err(err(&format!("unrecognised header line '{line}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| MeshError::Parse {
        line: lineno,
        message: "missing format line".into(),
    })?;
    if let Some(v) = elements.iter().find(|e| e.name == "vertex") {
        for axis in ["x", "y", "z"] {
            if !v.props.iter().any(|p| p.name() == axis) {
                return Err(MeshError::Parse {
                    line: lineno,
                    message: format!("vertex element has no '{axis}' property"),
                });
            }
        }
    }
    Ok((encoding, elements, pos, lineno))
}

fn header(mesh: &Mesh, with_color: bool) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", mesh.vertex_count());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(out, "element face {}", mesh.facet_count());
    out.push_str("property list uchar int vertex_indices\n");
    if with_color {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.push_str("end_header\n");
    out
}

fn body_vertices(mesh: &Mesh, out: &mut String) {
    for v in mesh.vertices() {
        let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
    }
}

/// Plain ASCII PLY.
pub fn write_ply(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = header(mesh, false);
    body_vertices(mesh, &mut out);
    for [a, b, c] in mesh.facets() {
        let _ = writeln!(out, "3 {a} {b} {c}");
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// ASCII PLY with a per-face colour encoding each facet's label.
pub fn write_labeled_ply(mesh: &Mesh, labels: &LabelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if labels.len() != mesh.facet_count() {
        return Err(MeshError::LengthMismatch {
            expected: mesh.facet_count(),
            found: labels.len(),
        });
    }
    let mut out = header(mesh, true);
    body_vertices(mesh, &mut out);
    for ([a, b, c], &l) in mesh.facets().iter().zip(labels.labels()) {
        let [r, g, bl] = color_of(l);
        let _ = writeln!(out, "3 {a} {b} {c} {r} {g} {bl}");
    }
    std::fs::write(path, out).map_err(io_err(path))
}

fn color_of(label: i8) -> [u8; 3] {
    LABEL_COLORS
        .iter()
        .find(|(l, _)| *l == label)
        .map(|(_, c)| *c)
        .unwrap_or([128, 128, 128])
}
