use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use super::{io_err, Mesh, MeshError, Result};

/// Parses Wavefront OBJ text. Only `v` and `f` records are used; quads are
/// fan-split, larger polygons are rejected.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces: Vec<(usize, [i64; 3])> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        match tag {
            "v" => {
                let mut xyz = [0.0f64; 3];
                for c in xyz.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| parse_err(line, "vertex needs 3 coordinates"))?;
                    *c = tok
                        .parse()
                        .map_err(|_| parse_err(line, &format!("bad coordinate '{tok}'")))?;
                }
                vertices.push(Point3::from(xyz));
            }
            "f" => {
                let mut idx = Vec::with_capacity(4);
                for tok in tokens {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| parse_err(line, &format!("bad face index '{tok}'")))?;
                    if i == 0 {
                        return Err(parse_err(line, "face index 0 is not valid (indices are 1-based)"));
                    }
                    // negative indices count back from the most recent vertex
                    let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                    idx.push(resolved);
                }
                match idx.len() {
                    3 => faces.push((line, [idx[0], idx[1], idx[2]])),
                    4 => {
                        faces.push((line, [idx[0], idx[1], idx[2]]));
                        faces.push((line, [idx[0], idx[2], idx[3]]));
                    }
                    n => {
                        return Err(parse_err(
                            line,
                            &format!("face with {n} vertices (only triangles and quads are supported)"),
                        ))
                    }
                }
            }
            _ => {}
        }
    }

    let n = vertices.len();
    let mut facets = Vec::with_capacity(faces.len());
    for (f, (_, tri)) in faces.iter().enumerate() {
        for &i in tri {
            if i < 0 || i as usize >= n {
                return Err(MeshError::InvalidIndex {
                    facet: f,
                    index: if i < 0 { i } else { i + 1 },
                    vertex_count: n,
                });
            }
        }
        facets.push([tri[0] as usize, tri[1] as usize, tri[2] as usize]);
    }
    Mesh::new(vertices, facets)
}

fn parse_err(line: usize, message: &str) -> MeshError {
    MeshError::Parse {
        line,
        message: message.to_string(),
    }
}

/// Writes the mesh as OBJ with shortest round-trip float formatting.
pub fn write_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(mesh.vertex_count() * 40 + mesh.facet_count() * 24);
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for [a, b, c] in mesh.facets() {
        let _ = writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1);
    }
    std::fs::write(path, out).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_triangle() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(mesh.vertex_count(), 3);
        assert_eq!(mesh.facet_count(), 1);
    }

    #[test]
    fn out_of_range_face_index() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n").unwrap_err();
        assert!(matches!(err, MeshError::InvalidIndex { index: 9, .. }), "{err}");
    }

    #[test]
    fn quad_is_fan_split_and_extras_ignored() {
        let text = "mtllib a.mtl\no quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nusemtl m\nf 1/1/1 2/1/1 3//1 4\n";
        let mesh = parse_obj(text).unwrap();
        assert_eq!(mesh.facets(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn negative_indices() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(mesh.facets(), &[[0, 1, 2]]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_obj("v 0 0 0\nv 1 zero 0\n").unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 2, .. }), "{err}");
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nv 2 2 2\nf 1 2 3 4 5\n").unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 6, .. }), "{err}");
    }

    #[test]
    fn no_faces_is_empty() {
        assert!(matches!(parse_obj("v 0 0 0\n"), Err(MeshError::EmptyMesh)));
    }
}
