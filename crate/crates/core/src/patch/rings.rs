//! Ordered ring facets: concentric, cyclically ordered facet rings around a
//! centre facet.

use std::collections::{HashMap, HashSet};

use super::PatchError;
use crate::mesh::{Adjacency, Mesh};

/// Ring 0 is the centre; ring `r` holds the facets sharing a vertex with
/// ring `r - 1` that are not in an inner ring, in counter-clockwise order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedRings {
    center: usize,
    rings: Vec<Vec<usize>>,
}

impl OrderedRings {
    pub fn center(&self) -> usize {
        self.center
    }

    pub fn rings(&self) -> &[Vec<usize>] {
        &self.rings
    }

    /// Number of rings beyond the centre.
    pub fn ring_count(&self) -> usize {
        self.rings.len() - 1
    }

    pub fn facets(&self) -> impl Iterator<Item = usize> + '_ {
        self.rings.iter().flatten().copied()
    }

    /// Builds rings from explicit lists, e.g. for resampling tests.
    pub fn from_rings(rings: Vec<Vec<usize>>) -> Self {
        Self {
            center: rings.first().and_then(|r| r.first()).copied().unwrap_or(0),
            rings,
        }
    }
}

/// Extracts `ring_count` ordered rings around `center`.
///
/// Ring `r` is walked along the boundary loop of the disc formed by rings
/// `0..r`: for each loop vertex, the facets of its fan outside the disc are
/// appended in rotation order, so consecutive facets share a vertex. The
/// ring then starts at the lowest-index facet sharing an edge with the
/// first facet of the previous ring. Fails with `IncompleteRing` when the
/// disc reaches the mesh boundary or stops being a topological disc.
pub fn extract_ordered_rings(
    mesh: &Mesh,
    adj: &Adjacency,
    center: usize,
    ring_count: usize,
) -> Result<OrderedRings, PatchError> {
    if center >= mesh.facet_count() {
        return Err(PatchError::InvalidFacet(center));
    }
    let mut rings = vec![vec![center]];
    let mut disc: HashSet<usize> = HashSet::with_capacity(16 * ring_count * ring_count + 1);
    disc.insert(center);

    for r in 1..=ring_count {
        let incomplete = |reason: &'static str| PatchError::IncompleteRing {
            center,
            ring: r,
            reason,
        };
        let facets = mesh.facets();

        // directed boundary edges of the disc, oriented by facet winding
        let mut next: HashMap<usize, (usize, usize)> = HashMap::new();
        for &f in &rings[r - 1] {
            let tri = facets[f];
            for i in 0..3 {
                let outer = adj.across(f, i).ok_or_else(|| incomplete("mesh boundary"))?;
                if disc.contains(&outer) {
                    continue;
                }
                let (a, b) = (tri[i], tri[(i + 1) % 3]);
                if next.insert(a, (b, outer)).is_some() {
                    return Err(incomplete("disc boundary is not a simple loop"));
                }
            }
        }
        if next.is_empty() {
            return Err(incomplete("disc covers a closed surface"));
        }

        // single boundary loop, starting from its smallest vertex
        let start = *next.keys().min().unwrap();
        let mut loop_vertices = Vec::with_capacity(next.len());
        let mut outers = Vec::with_capacity(next.len());
        let mut v = start;
        loop {
            let &(w, outer) = next.get(&v).ok_or_else(|| incomplete("disc boundary is open"))?;
            loop_vertices.push(v);
            outers.push(outer);
            v = w;
            if v == start {
                break;
            }
            if loop_vertices.len() > next.len() {
                return Err(incomplete("disc boundary is not a simple loop"));
            }
        }
        if loop_vertices.len() != next.len() {
            return Err(incomplete("disc boundary has several loops"));
        }

        let m = loop_vertices.len();
        let mut ring = Vec::with_capacity(3 * m);
        let mut seen: HashSet<usize> = HashSet::with_capacity(3 * m);
        for i in 0..m {
            let pivot = loop_vertices[(i + 1) % m];
            let target = outers[(i + 1) % m];
            let mut cur = outers[i];
            if seen.insert(cur) {
                ring.push(cur);
            }
            let mut steps = 0;
            let limit = adj.vertex_facets(pivot).len();
            while cur != target {
                let tri = facets[cur];
                let k = tri
                    .iter()
                    .position(|&x| x == pivot)
                    .ok_or_else(|| incomplete("fan walk left the pivot vertex"))?;
                let b = tri[(k + 2) % 3];
                let nxt = adj
                    .across_edge(mesh, cur, pivot, b)
                    .ok_or_else(|| incomplete("mesh boundary"))?;
                if disc.contains(&nxt) {
                    return Err(incomplete("fan walk re-entered the disc"));
                }
                steps += 1;
                if steps > limit {
                    return Err(incomplete("fan walk did not close"));
                }
                cur = nxt;
                if cur != target && seen.insert(cur) {
                    ring.push(cur);
                }
            }
        }

        let start = ring_start(mesh, adj, &rings[r - 1][0], &ring);
        ring.rotate_left(start);
        disc.extend(ring.iter().copied());
        rings.push(ring);
    }

    Ok(OrderedRings { center, rings })
}

/// Position in `ring` of the lowest-index facet sharing an edge with
/// `anchor`, else sharing a vertex with it, else of the lowest-index facet.
fn ring_start(mesh: &Mesh, adj: &Adjacency, anchor: &usize, ring: &[usize]) -> usize {
    let edge_nb = adj.edge_neighbors(*anchor);
    let anchor_verts = mesh.facets()[*anchor];
    let pick = |pred: &dyn Fn(usize) -> bool| {
        ring.iter()
            .enumerate()
            .filter(|(_, &f)| pred(f))
            .min_by_key(|(_, &f)| f)
            .map(|(i, _)| i)
    };
    pick(&|f| edge_nb.contains(&f))
        .or_else(|| pick(&|f| mesh.facets()[f].iter().any(|v| anchor_verts.contains(v))))
        .or_else(|| pick(&|_| true))
        .unwrap_or(0)
}

/// Breadth-first vertex-sharing levels around `center`, `depth` levels deep,
/// without ordering. Each level is sorted ascending.
pub fn vertex_levels(mesh: &Mesh, adj: &Adjacency, center: usize, depth: usize) -> Vec<Vec<usize>> {
    let mut seen: HashSet<usize> = HashSet::new();
    seen.insert(center);
    let mut levels = vec![vec![center]];
    for _ in 0..depth {
        let mut level: Vec<usize> = levels
            .last()
            .unwrap()
            .iter()
            .flat_map(|&f| adj.vertex_neighbors(mesh, f))
            .filter(|g| !seen.contains(g))
            .collect();
        level.sort_unstable();
        level.dedup();
        if level.is_empty() {
            break;
        }
        seen.extend(level.iter().copied());
        levels.push(level);
    }
    levels
}
