use std::collections::HashMap;

use super::{Mesh, MeshError, Result};

/// Undirected edge key with the smaller vertex first.
pub type EdgeKey = (usize, usize);

fn key(a: usize, b: usize) -> EdgeKey {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Facet connectivity of a manifold mesh.
///
/// `across[f][i]` is the facet on the other side of edge `i` of facet `f`,
/// where edge `i` joins local vertices `i` and `(i + 1) % 3`.
#[derive(Debug, Clone)]
pub struct Adjacency {
    across: Vec<[Option<usize>; 3]>,
    vertex_facets: Vec<Vec<usize>>,
    boundary: Vec<bool>,
}

impl Adjacency {
    /// Fails with `NonManifold` on the first edge (in facet order) shared by
    /// three or more facets.
    pub fn build(mesh: &Mesh) -> Result<Self> {
        let edges = edge_map(mesh);
        for tri in mesh.facets() {
            for i in 0..3 {
                let edge = key(tri[i], tri[(i + 1) % 3]);
                let count = edges[&edge].len();
                if count > 2 {
                    return Err(MeshError::NonManifold { edge, count });
                }
            }
        }

        let mut across = vec![[None; 3]; mesh.facet_count()];
        for (f, tri) in mesh.facets().iter().enumerate() {
            for i in 0..3 {
                let k = key(tri[i], tri[(i + 1) % 3]);
                across[f][i] = edges[&k].iter().copied().find(|&g| g != f);
            }
        }
        let mut vertex_facets = vec![Vec::new(); mesh.vertex_count()];
        for (f, tri) in mesh.facets().iter().enumerate() {
            for &v in tri {
                vertex_facets[v].push(f);
            }
        }
        let boundary = across.iter().map(|a| a.iter().any(Option::is_none)).collect();
        Ok(Self {
            across,
            vertex_facets,
            boundary,
        })
    }

    /// Facets to drop so that no edge is shared by more than two facets:
    /// on each over-shared edge the two lowest-index facets are kept.
    pub fn non_manifold_facets(mesh: &Mesh) -> Vec<usize> {
        let edges = edge_map(mesh);
        let mut drop: Vec<usize> = edges
            .values()
            .filter(|fs| fs.len() > 2)
            .flat_map(|fs| {
                let mut fs = fs.clone();
                fs.sort_unstable();
                fs.into_iter().skip(2)
            })
            .collect();
        drop.sort_unstable();
        drop.dedup();
        drop
    }

    pub fn facet_count(&self) -> usize {
        self.across.len()
    }

    /// Facet across local edge `i` of `facet`.
    pub fn across(&self, facet: usize, edge: usize) -> Option<usize> {
        self.across[facet][edge]
    }

    /// Edge neighbours in local edge order.
    pub fn edge_neighbors(&self, facet: usize) -> Vec<usize> {
        self.across[facet].iter().flatten().copied().collect()
    }

    /// Facets sharing at least one vertex with `facet`, ascending, excluding itself.
    pub fn vertex_neighbors(&self, mesh: &Mesh, facet: usize) -> Vec<usize> {
        let mut out: Vec<usize> = mesh.facets()[facet]
            .iter()
            .flat_map(|&v| self.vertex_facets[v].iter().copied())
            .filter(|&g| g != facet)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn vertex_facets(&self, vertex: usize) -> &[usize] {
        &self.vertex_facets[vertex]
    }

    pub fn is_boundary(&self, facet: usize) -> bool {
        self.boundary[facet]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    /// Facet across the edge `(a, b)` of `facet`, if that edge belongs to it.
    pub fn across_edge(&self, mesh: &Mesh, facet: usize, a: usize, b: usize) -> Option<usize> {
        let tri = mesh.facets()[facet];
        (0..3)
            .find(|&i| key(tri[i], tri[(i + 1) % 3]) == key(a, b))
            .and_then(|i| self.across[facet][i])
    }
}

fn edge_map(mesh: &Mesh) -> HashMap<EdgeKey, Vec<usize>> {
    let mut edges: HashMap<EdgeKey, Vec<usize>> = HashMap::with_capacity(mesh.facet_count() * 3 / 2);
    for (f, tri) in mesh.facets().iter().enumerate() {
        for i in 0..3 {
            edges.entry(key(tri[i], tri[(i + 1) % 3])).or_default().push(f);
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn mesh(v: usize, facets: Vec<[usize; 3]>) -> Mesh {
        let verts = (0..v)
            .map(|i| Point3::new(i as f64, (i * i % 7) as f64, (i % 3) as f64))
            .collect();
        Mesh::new(verts, facets).unwrap()
    }

    #[test]
    fn isolated_triangle() {
        let m = mesh(3, vec![[0, 1, 2]]);
        let adj = Adjacency::build(&m).unwrap();
        assert!(adj.edge_neighbors(0).is_empty());
        assert_eq!(adj.boundary_flags(), &[true]);
    }

    #[test]
    fn shared_edge_is_symmetric() {
        let m = mesh(4, vec![[0, 1, 2], [2, 1, 3]]);
        let adj = Adjacency::build(&m).unwrap();
        assert_eq!(adj.edge_neighbors(0), vec![1]);
        assert_eq!(adj.edge_neighbors(1), vec![0]);
    }

    #[test]
    fn three_facets_on_one_edge() {
        let m = mesh(5, vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]]);
        match Adjacency::build(&m) {
            Err(MeshError::NonManifold { edge, count }) => {
                assert_eq!(edge, (0, 1));
                assert_eq!(count, 3);
            }
            other => panic!("expected NonManifold, got {other:?}"),
        }
        assert_eq!(Adjacency::non_manifold_facets(&m), vec![2]);
    }
}
