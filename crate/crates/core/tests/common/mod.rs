//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use nalgebra::{Point3, Rotation3, Vector3};
use rand::Rng;
use texseg::eval::{ConfusionCounts, Metrics};
use texseg::mesh::{primitives, Adjacency, Mesh};
use texseg::patch::{compute_descriptor, extract_ordered_rings, vertex_levels, DescriptorKind, PatchError};

/// Vertex-sharing BFS levels around `center`, from the facet list alone.
pub fn bfs_levels(mesh: &Mesh, center: usize, depth: usize) -> Vec<BTreeSet<usize>> {
    let mut by_vertex: HashMap<usize, Vec<usize>> = HashMap::new();
    for (f, tri) in mesh.facets().iter().enumerate() {
        for &v in tri {
            by_vertex.entry(v).or_default().push(f);
        }
    }
    let mut seen = BTreeSet::from([center]);
    let mut levels = vec![BTreeSet::from([center])];
    for _ in 0..depth {
        let mut next = BTreeSet::new();
        for &f in levels.last().unwrap() {
            for v in mesh.facets()[f] {
                for &g in &by_vertex[&v] {
                    if !seen.contains(&g) {
                        next.insert(g);
                    }
                }
            }
        }
        seen.extend(next.iter().copied());
        levels.push(next);
    }
    levels
}

fn share_vertex(mesh: &Mesh, a: usize, b: usize) -> bool {
    let fa = mesh.facets()[a];
    mesh.facets()[b].iter().any(|v| fa.contains(v))
}

/// Checks every facet with complete rings against the BFS oracle and
/// returns how many were checked.
pub fn check_orf(mesh: &Mesh, rings: usize, facets: impl Iterator<Item = usize>) -> Result<usize, String> {
    let adj = Adjacency::build(mesh).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for f in facets {
        let orf = match extract_ordered_rings(mesh, &adj, f, rings) {
            Ok(o) => o,
            Err(PatchError::IncompleteRing { .. }) => continue,
            Err(e) => return Err(format!("facet {f}: {e}")),
        };
        let oracle = bfs_levels(mesh, f, rings);
        if orf.rings().len() != rings + 1 {
            return Err(format!("facet {f}: {} rings", orf.rings().len()));
        }
        let mut all = BTreeSet::new();
        for (r, ring) in orf.rings().iter().enumerate() {
            let set: BTreeSet<usize> = ring.iter().copied().collect();
            if set.len() != ring.len() {
                return Err(format!("facet {f} ring {r}: duplicate facets"));
            }
            if set != oracle[r] {
                return Err(format!("facet {f} ring {r}: differs from the BFS level"));
            }
            if !set.is_disjoint(&all) {
                return Err(format!("facet {f} ring {r}: overlaps an inner ring"));
            }
            all.extend(set);
            if r > 0 {
                for i in 0..ring.len() {
                    if !share_vertex(mesh, ring[i], ring[(i + 1) % ring.len()]) {
                        return Err(format!("facet {f} ring {r}: break in cyclic order at {i}"));
                    }
                }
            }
        }
        checked += 1;
    }
    Ok(checked)
}

pub const RAW_KINDS: [DescriptorKind; 4] = [
    DescriptorKind::LocalDepth,
    DescriptorKind::SurfaceVariation,
    DescriptorKind::MeanCurvature,
    DescriptorKind::ShapeIndex,
];

pub fn support(mesh: &Mesh, adj: &Adjacency, f: usize, depth: usize) -> Vec<usize> {
    vertex_levels(mesh, adj, f, depth).concat()
}

pub fn descriptors(mesh: &Mesh, facets: &[usize], depth: usize) -> Vec<[f64; 4]> {
    let adj = Adjacency::build(mesh).unwrap();
    facets
        .iter()
        .map(|&f| {
            let nb = support(mesh, &adj, f, depth);
            RAW_KINDS.map(|k| compute_descriptor(mesh, f, &nb, k).unwrap())
        })
        .collect()
}

/// Relative difference with a floor below which values count as zero.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-9)
}

/// A smooth bumpy surface used for invariance checks.
pub fn bumpy_grid(side: usize) -> Mesh {
    primitives::grid(side, 0.1).map_vertices(|p| {
        Point3::new(p.x, p.y, 0.3 * (1.3 * p.x).sin() * (0.9 * p.y).cos() + 0.05 * p.x * p.y)
    })
}

pub fn random_rigid(r: &mut impl Rng) -> impl Fn(&Point3<f64>) -> Point3<f64> {
    let axis = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    let rot = Rotation3::new(axis.normalize() * r.random_range(0.1..3.0));
    let t = Vector3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
    move |p| rot * p + t
}

/// Worst relative change of the raw descriptors under `f`.
pub fn invariance_error(mesh: &Mesh, facets: &[usize], f: impl Fn(&Point3<f64>) -> Point3<f64>) -> f64 {
    let a = descriptors(mesh, facets, 2);
    let b = descriptors(&mesh.map_vertices(f), facets, 2);
    a.iter()
        .zip(&b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| rel(u, v)))
        .fold(0.0, f64::max)
}

/// Brute-force confusion counts and metrics with exact rational
/// comparison semantics: each ratio is formed from integer counts once.
pub fn brute_metrics(pred: &[i8], truth: &[i8]) -> (ConfusionCounts, Metrics) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..pred.len() {
        if pred[i] < 0 || truth[i] < 0 {
            continue;
        }
        match (pred[i] == 1, truth[i] == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    let iou_t = ratio(tp, tp + fp + fn_);
    let iou_n = ratio(tn, tn + fp + fn_);
    (
        ConfusionCounts { tp, fp, fn_, tn },
        Metrics {
            precision,
            recall,
            f1,
            miou: (iou_t + iou_n) / 2.0,
        },
    )
}
