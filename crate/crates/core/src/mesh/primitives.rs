//! Procedural meshes: regular grids and icospheres.

use std::collections::HashMap;

use nalgebra::Point3;

use super::Mesh;

/// `side × side` vertex grid in the z = 0 plane, vertex `(i, j)` at
/// `(i·spacing, j·spacing, 0)` with index `j·side + i`. Every quad is split
/// along the same diagonal, so interior vertices have valence 6.
pub fn grid(side: usize, spacing: f64) -> Mesh {
    assert!(side >= 2, "grid needs at least 2×2 vertices");
    let mut vertices = Vec::with_capacity(side * side);
    for j in 0..side {
        for i in 0..side {
            vertices.push(Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    let mut facets = Vec::with_capacity(2 * (side - 1) * (side - 1));
    for j in 0..side - 1 {
        for i in 0..side - 1 {
            let v00 = j * side + i;
            let v10 = v00 + 1;
            let v01 = v00 + side;
            let v11 = v01 + 1;
            facets.push([v00, v10, v11]);
            facets.push([v00, v11, v01]);
        }
    }
    Mesh::new(vertices, facets).expect("grid construction is valid")
}

/// Index of triangle `k ∈ {0, 1}` of quad `(i, j)` in [`grid`].
pub fn grid_facet(side: usize, i: usize, j: usize, k: usize) -> usize {
    2 * (j * (side - 1) + i) + k
}

/// Regular icosahedron inscribed in the unit sphere, outward winding.
pub fn icosahedron() -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let vertices = raw
        .iter()
        .map(|p| Point3::from(nalgebra::Vector3::from(*p).normalize()))
        .collect();
    let facets = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    Mesh::new(vertices, facets).expect("icosahedron is valid")
}

/// Icosahedron subdivided `levels` times (each facet split in four) and
/// projected onto a sphere of `radius`.
pub fn icosphere(levels: usize, radius: f64) -> Mesh {
    let base = icosahedron();
    let mut vertices: Vec<Point3<f64>> = base.vertices().to_vec();
    let mut facets: Vec<[usize; 3]> = base.facets().to_vec();
    for _ in 0..levels {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point3<f64>>| {
            let k = (a.min(b), a.max(b));
            *mid.entry(k).or_insert_with(|| {
                let p = (vertices[a].coords + vertices[b].coords).normalize();
                vertices.push(Point3::from(p));
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(facets.len() * 4);
        for [a, b, c] in facets {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        facets = next;
    }
    let vertices = vertices
        .into_iter()
        .map(|p| Point3::from(p.coords * radius))
        .collect();
    Mesh::new(vertices, facets).expect("icosphere is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Adjacency;

    #[test]
    fn grid_counts() {
        let m = grid(64, 1.0);
        assert_eq!(m.facet_count(), 2 * 63 * 63);
        assert_eq!(m.vertex_count(), 64 * 64);
    }

    #[test]
    fn icosahedron_facets_have_three_edge_neighbours() {
        let m = icosahedron();
        assert_eq!((m.vertex_count(), m.facet_count()), (12, 20));
        let adj = Adjacency::build(&m).unwrap();
        // brute force: two facets are edge neighbours iff they share two vertices
        for f in 0..20 {
            let brute: Vec<usize> = (0..20)
                .filter(|&g| g != f)
                .filter(|&g| {
                    m.facets()[g]
                        .iter()
                        .filter(|v| m.facets()[f].contains(v))
                        .count()
                        == 2
                })
                .collect();
            assert_eq!(brute.len(), 3);
            let mut got = adj.edge_neighbors(f);
            got.sort_unstable();
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn icosphere_normals_point_outward() {
        let m = icosphere(2, 2.0);
        for f in 0..m.facet_count() {
            let g = m.facet_geometry(f).unwrap();
            assert!(g.normal.dot(&g.centroid.coords) > 0.0);
        }
    }
}
