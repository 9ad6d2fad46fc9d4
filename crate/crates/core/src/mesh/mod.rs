//! Triangle meshes: storage, validation, per-facet geometry and file IO.

mod adjacency;
pub mod primitives;
mod obj;
mod ply;

use std::path::Path;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub use adjacency::{Adjacency, EdgeKey};
pub use obj::{parse_obj, write_obj};
pub use ply::{parse_ply, write_labeled_ply, write_ply, LABEL_COLORS};

/// Facets with an area below this are degenerate.
pub const MIN_FACET_AREA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("facet {facet} references vertex {index}, but the mesh has {vertex_count} vertices")]
    InvalidIndex {
        facet: usize,
        index: i64,
        vertex_count: usize,
    },
    #[error("mesh has no facets")]
    EmptyMesh,
    #[error("facet {facet} is degenerate")]
    DegenerateFacet { facet: usize },
    #[error("non-manifold edge ({}, {}) is shared by {count} facets", .edge.0, .edge.1)]
    NonManifold { edge: (usize, usize), count: usize },
    #[error("expected {expected} labels, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("cannot detect mesh format of {0}")]
    UnknownFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = MeshError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
    Auto,
}

impl std::str::FromStr for MeshFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            "auto" => Ok(Self::Auto),
            other => Err(format!("unknown mesh format '{other}'")),
        }
    }
}

/// Centroid, unit normal and area of one facet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetGeometry {
    pub centroid: Point3<f64>,
    pub normal: Vector3<f64>,
    pub area: f64,
}

/// An indexed triangle mesh. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point3<f64>>,
    facets: Vec<[usize; 3]>,
}

impl Mesh {
    /// Builds a mesh, checking index ranges and rejecting facets that repeat
    /// a vertex.
    pub fn new(vertices: Vec<Point3<f64>>, facets: Vec<[usize; 3]>) -> Result<Self> {
        if facets.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        let n = vertices.len();
        for (f, tri) in facets.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(MeshError::InvalidIndex {
                        facet: f,
                        index: i as i64,
                        vertex_count: n,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::DegenerateFacet { facet: f });
            }
        }
        Ok(Self { vertices, facets })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn facets(&self) -> &[[usize; 3]] {
        &self.facets
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn facet_count(&self) -> usize {
        self.facets.len()
    }

    pub fn facet_vertices(&self, facet: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.facets[facet];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn centroid(&self, facet: usize) -> Point3<f64> {
        let [a, b, c] = self.facet_vertices(facet);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    /// Centroid, unit normal (following the vertex winding) and area.
    pub fn facet_geometry(&self, facet: usize) -> Result<FacetGeometry> {
        let [a, b, c] = self.facet_vertices(facet);
        let cross = (b - a).cross(&(c - a));
        let norm = cross.norm();
        let area = 0.5 * norm;
        if !(area >= MIN_FACET_AREA) {
            return Err(MeshError::DegenerateFacet { facet });
        }
        Ok(FacetGeometry {
            centroid: Point3::from((a.coords + b.coords + c.coords) / 3.0),
            normal: cross / norm,
            area,
        })
    }

    /// Indices of facets whose area is below [`MIN_FACET_AREA`].
    pub fn degenerate_facets(&self) -> Vec<usize> {
        (0..self.facet_count())
            .filter(|&f| self.facet_geometry(f).is_err())
            .collect()
    }

    /// Applies `f` to every vertex, keeping connectivity.
    pub fn map_vertices(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            facets: self.facets.clone(),
        }
    }

    /// Returns a copy without the given facets, plus the map from new facet
    /// index to old facet index. Vertices are kept as-is.
    pub fn without_facets(&self, drop: &[usize]) -> Result<(Self, Vec<usize>)> {
        let mut keep = vec![true; self.facet_count()];
        for &f in drop {
            keep[f] = false;
        }
        let kept: Vec<usize> = (0..self.facet_count()).filter(|&f| keep[f]).collect();
        let facets = kept.iter().map(|&f| self.facets[f]).collect();
        Ok((Self::new(self.vertices.clone(), facets)?, kept))
    }
}

/// Loads an OBJ or PLY file. `Auto` picks the parser from the extension,
/// falling back to sniffing the `ply` magic line.
pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<Mesh> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let format = match format {
        MeshFormat::Auto => detect_format(path, &bytes)?,
        f => f,
    };
    match format {
        MeshFormat::Obj => {
            let text = String::from_utf8_lossy(&bytes);
            parse_obj(&text)
        }
        MeshFormat::Ply => parse_ply(&bytes),
        MeshFormat::Auto => unreachable!(),
    }
}

fn detect_format(path: &Path, bytes: &[u8]) -> Result<MeshFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("obj") => Ok(MeshFormat::Obj),
        Some("ply") => Ok(MeshFormat::Ply),
        _ if bytes.starts_with(b"ply") => Ok(MeshFormat::Ply),
        _ if bytes.iter().take(4096).all(|b| b.is_ascii()) => Ok(MeshFormat::Obj),
        _ => Err(MeshError::UnknownFormat(path.display().to_string())),
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MeshError + '_ {
    move |source| MeshError::Io {
        path: path.display().to_string(),
        source,
    }
}
