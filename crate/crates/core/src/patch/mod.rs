//! Surface patch images: ordered rings around a facet rasterised into a
//! grid, one channel per geometric descriptor.

pub mod descriptors;
mod rings;

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::Point3;
use thiserror::Error;

use crate::binfmt::{BinError, Reader, Writer};
use crate::mesh::{Adjacency, Mesh};
pub use descriptors::{compute_descriptor, local_shape, DescriptorKind, LocalFrame, LocalShape, Quadric};
pub use rings::{extract_ordered_rings, vertex_levels, OrderedRings};

pub const PATCH_FILE_VERSION: u16 = 1;
pub const MIN_GRID: usize = 4;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PatchError {
    #[error("facet {0} does not exist")]
    InvalidFacet(usize),
    #[error("facet {0} is degenerate")]
    DegenerateFacet(usize),
    #[error("ring {ring} around facet {center} is incomplete: {reason}")]
    IncompleteRing {
        center: usize,
        ring: usize,
        reason: &'static str,
    },
    #[error("grid size {0} is too small (minimum {MIN_GRID})")]
    BadGridSize(usize),
    #[error("neighbourhood has {found} facets, need at least {required}")]
    InsufficientNeighborhood { found: usize, required: usize },
    #[error("neighbourhood covariance is rank deficient")]
    SingularFit,
}

/// `n × n` facet indices, row `r` sampled from ring `r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FacetGrid {
    n: usize,
    cells: Vec<usize>,
}

impl FacetGrid {
    pub fn side(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn cell(&self, row: usize, col: usize) -> usize {
        self.cells[row * self.n + col]
    }
}

/// Nearest-neighbour resampling of a cyclic ring to `n` entries: sample `j`
/// takes position `⌊j·len/n⌋`.
pub fn resample_ring(ring: &[usize], n: usize) -> Vec<usize> {
    (0..n).map(|j| ring[j * ring.len() / n]).collect()
}

/// Lays `n` rings (centre included) out as an `n × n` grid.
pub fn rings_to_grid(rings: &OrderedRings, n: usize) -> Result<FacetGrid, PatchError> {
    if n < MIN_GRID {
        return Err(PatchError::BadGridSize(n));
    }
    if rings.rings().len() < n {
        return Err(PatchError::IncompleteRing {
            center: rings.center(),
            ring: rings.rings().len(),
            reason: "fewer rings than grid rows",
        });
    }
    let cells = rings.rings()[..n].iter().flat_map(|r| resample_ring(r, n)).collect();
    Ok(FacetGrid { n, cells })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchConfig {
    /// Grid side; also the number of rings (centre included).
    pub grid: usize,
    pub channels: Vec<DescriptorKind>,
    /// Per-channel zero mean / unit variance over the patch.
    pub standardize: bool,
    /// Vertex-sharing depth of the per-facet support used for SV, Cur and SI.
    pub support_rings: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            grid: 24,
            channels: vec![
                DescriptorKind::SurfaceVariation,
                DescriptorKind::LocalDepth,
                DescriptorKind::MeanCurvature,
            ],
            standardize: true,
            support_rings: 2,
        }
    }
}

/// `c × n × n` descriptor image of one facet, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchImage {
    pub center: usize,
    pub channel_ids: Vec<DescriptorKind>,
    pub n: usize,
    pub data: Vec<f64>,
}

impl PatchImage {
    pub fn channels(&self) -> usize {
        self.channel_ids.len()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let sz = self.n * self.n;
        &self.data[c * sz..(c + 1) * sz]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels(), self.n, self.n)
    }
}

/// Lazily computed per-facet curvature descriptors shared by all patches of
/// a mesh. Safe to use from several threads.
pub struct ShapeCache<'m> {
    mesh: &'m Mesh,
    adj: &'m Adjacency,
    support_rings: usize,
    cells: Vec<OnceLock<Result<LocalShape, PatchError>>>,
}

impl<'m> ShapeCache<'m> {
    pub fn new(mesh: &'m Mesh, adj: &'m Adjacency, support_rings: usize) -> Self {
        Self {
            mesh,
            adj,
            support_rings,
            cells: (0..mesh.facet_count()).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn get(&self, facet: usize) -> Result<LocalShape, PatchError> {
        self.cells[facet]
            .get_or_init(|| {
                let support = vertex_levels(self.mesh, self.adj, facet, self.support_rings).concat();
                local_shape(self.mesh, facet, &support).map(|(_, s)| s)
            })
            .clone()
    }
}

/// Builds the patch image centred on `center`.
pub fn build_patch_image(
    mesh: &Mesh,
    adj: &Adjacency,
    center: usize,
    cfg: &PatchConfig,
) -> Result<PatchImage, PatchError> {
    let cache = ShapeCache::new(mesh, adj, cfg.support_rings);
    build_patch_image_cached(&cache, center, cfg)
}

pub fn build_patch_image_cached(
    cache: &ShapeCache<'_>,
    center: usize,
    cfg: &PatchConfig,
) -> Result<PatchImage, PatchError> {
    let (mesh, adj) = (cache.mesh, cache.adj);
    if cfg.grid < MIN_GRID {
        return Err(PatchError::BadGridSize(cfg.grid));
    }
    let rings = extract_ordered_rings(mesh, adj, center, cfg.grid - 1)?;
    let grid = rings_to_grid(&rings, cfg.grid)?;

    let center_geom = mesh
        .facet_geometry(center)
        .map_err(|_| PatchError::DegenerateFacet(center))?;
    let points: Vec<Point3<f64>> = rings.facets().map(|f| mesh.centroid(f)).collect();
    let dir = mesh.centroid(rings.rings()[1][0]) - center_geom.centroid;
    let frame = LocalFrame::fit(&points, &center_geom.normal, Some(&dir))?;

    let nn = cfg.grid * cfg.grid;
    let mut data = Vec::with_capacity(cfg.channels.len() * nn);
    let mut normals: HashMap<usize, (f64, f64)> = HashMap::new();
    for &kind in &cfg.channels {
        let start = data.len();
        for &cell in grid.cells() {
            let v = match kind {
                DescriptorKind::LocalDepth => frame.signed_distance(&mesh.centroid(cell)),
                DescriptorKind::SurfaceVariation => cache.get(cell)?.variation,
                DescriptorKind::MeanCurvature => cache.get(cell)?.mean_curvature,
                DescriptorKind::ShapeIndex => cache.get(cell)?.shape_index,
                DescriptorKind::Azimuth | DescriptorKind::Elevation => {
                    let (az, el) = match normals.get(&cell) {
                        Some(&ae) => ae,
                        None => {
                            let n = mesh
                                .facet_geometry(cell)
                                .map_err(|_| PatchError::DegenerateFacet(cell))?
                                .normal;
                            let ae = frame.azimuth_elevation(&n);
                            normals.insert(cell, ae);
                            ae
                        }
                    };
                    if kind == DescriptorKind::Azimuth {
                        az
                    } else {
                        el
                    }
                }
            };
            data.push(v);
        }
        if cfg.standardize {
            standardize(&mut data[start..]);
        }
    }
    Ok(PatchImage {
        center,
        channel_ids: cfg.channels.clone(),
        n: cfg.grid,
        data,
    })
}

/// Zero mean, unit variance; a channel with (near) zero variance becomes all
/// zeros.
pub fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-9 * (1.0 + mean.abs()) {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

/// Patch images of every facet whose ordered rings are complete.
#[derive(Debug, Clone, Default)]
pub struct PatchSet {
    pub images: Vec<PatchImage>,
    /// Facets without a complete patch, with the reason.
    pub excluded: Vec<(usize, PatchError)>,
}

/// Builds patches for all facets, fanning out over available threads.
/// Output order is by facet index regardless of thread count.
pub fn extract_patches(mesh: &Mesh, adj: &Adjacency, cfg: &PatchConfig) -> PatchSet {
    let cache = ShapeCache::new(mesh, adj, cfg.support_rings);
    let results = par_map(mesh.facet_count(), |f| build_patch_image_cached(&cache, f, cfg));
    let mut set = PatchSet::default();
    for (f, r) in results.into_iter().enumerate() {
        match r {
            Ok(img) => set.images.push(img),
            Err(e) => set.excluded.push((f, e)),
        }
    }
    set
}

pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = std::thread::available_parallelism().map_or(1, |t| t.get()).min(n.max(1));
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let f = &f;
                s.spawn(move || (t * chunk..((t + 1) * chunk).min(n)).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    })
}

/// Serialises patches (all with the same shape) into the patch cache format.
pub fn encode_patches(images: &[PatchImage]) -> Result<Vec<u8>, BinError> {
    let (c, n) = images.first().map_or((0, 0), |i| (i.channels(), i.n));
    let mut w = Writer::with_header(PATCH_FILE_VERSION);
    w.u32(images.len() as u32);
    w.u16(c as u16);
    w.u16(n as u16);
    for img in images {
        if img.channels() != c || img.n != n {
            return Err(BinError::Malformed("patches differ in shape".into()));
        }
        w.u32(img.center as u32);
        for &v in &img.data {
            w.f32(v as f32);
        }
    }
    Ok(w.buf)
}

/// Parses the patch cache format. The file does not record descriptor kinds,
/// so the caller supplies them.
pub fn decode_patches(bytes: &[u8], channel_ids: &[DescriptorKind]) -> Result<Vec<PatchImage>, BinError> {
    let mut r = Reader::open(bytes, PATCH_FILE_VERSION)?;
    let count = r.u32()? as usize;
    let c = r.u16()? as usize;
    let n = r.u16()? as usize;
    if c != channel_ids.len() {
        return Err(BinError::Malformed(format!(
            "file has {c} channels, caller expects {}",
            channel_ids.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let center = r.u32()? as usize;
        let data = r.f32s(c * n * n)?.into_iter().map(f64::from).collect();
        out.push(PatchImage {
            center,
            channel_ids: channel_ids.to_vec(),
            n,
            data,
        });
    }
    Ok(out)
}

pub fn write_patches(images: &[PatchImage], path: impl AsRef<Path>) -> std::io::Result<()> {
    let bytes = encode_patches(images).map_err(std::io::Error::other)?;
    std::fs::write(path, bytes)
}

pub fn read_patches(path: impl AsRef<Path>, channel_ids: &[DescriptorKind]) -> std::io::Result<Vec<PatchImage>> {
    let bytes = std::fs::read(path)?;
    decode_patches(&bytes, channel_ids).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn resampling_rule_by_hand() {
        let ring: Vec<usize> = (100..112).collect();
        assert_eq!(resample_ring(&ring, 3), vec![100, 104, 108]);
    }

    #[test]
    fn grid_rows_follow_rings() {
        let rings = OrderedRings::from_rings(vec![
            vec![7],
            (10..22).collect(),
            (30..54).collect(),
            (60..96).collect(),
        ]);
        let grid = rings_to_grid(&rings, 4).unwrap();
        assert_eq!(&grid.cells()[..4], &[7, 7, 7, 7]);
        assert_eq!(&grid.cells()[4..8], &[10, 13, 16, 19]);
        assert_eq!(grid.cell(3, 1), 69);
    }

    #[test]
    fn grid_contract_violations() {
        let rings = OrderedRings::from_rings(vec![vec![0], (1..13).collect(), (13..37).collect()]);
        assert!(matches!(rings_to_grid(&rings, 3), Err(PatchError::BadGridSize(3))));
        assert!(matches!(
            rings_to_grid(&rings, 24),
            Err(PatchError::IncompleteRing { .. })
        ));
    }

    #[test]
    fn default_patch_shape() {
        let mesh = primitives::grid(60, 1.0);
        let adj = Adjacency::build(&mesh).unwrap();
        let center = primitives::grid_facet(60, 29, 29, 0);
        let img = build_patch_image(&mesh, &adj, center, &PatchConfig::default()).unwrap();
        assert_eq!(img.shape(), (3, 24, 24));
    }

    #[test]
    fn flat_mesh_raw_channels_are_zero() {
        let mesh = primitives::grid(40, 0.7);
        let adj = Adjacency::build(&mesh).unwrap();
        let cfg = PatchConfig {
            grid: 12,
            standardize: false,
            ..PatchConfig::default()
        };
        let img = build_patch_image(&mesh, &adj, primitives::grid_facet(40, 19, 19, 1), &cfg).unwrap();
        assert!(img.data.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn constant_field_fills_every_cell() {
        // every facet of a flat grid has the same descriptor value
        let mesh = primitives::grid(30, 1.0);
        let adj = Adjacency::build(&mesh).unwrap();
        let rings = extract_ordered_rings(&mesh, &adj, primitives::grid_facet(30, 14, 14, 0), 5).unwrap();
        let grid = rings_to_grid(&rings, 6).unwrap();
        let cache = ShapeCache::new(&mesh, &adj, 2);
        for &f in grid.cells() {
            assert!(cache.get(f).unwrap().variation.abs() < 1e-9);
        }
    }

    #[test]
    fn standardize_guards_zero_variance() {
        let mut v = vec![2.5; 9];
        standardize(&mut v);
        assert!(v.iter().all(|&x| x == 0.0));
        let mut w = vec![1.0, 2.0, 3.0];
        standardize(&mut w);
        assert!((w.iter().sum::<f64>()).abs() < 1e-12);
        assert!((w.iter().map(|x| x * x).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn patch_file_errors() {
        let img = PatchImage {
            center: 3,
            channel_ids: vec![DescriptorKind::LocalDepth],
            n: 4,
            data: (0..16).map(|i| i as f64 * 0.5).collect(),
        };
        let bytes = encode_patches(std::slice::from_ref(&img)).unwrap();
        let back = decode_patches(&bytes, &[DescriptorKind::LocalDepth]).unwrap();
        assert_eq!(back, vec![img]);
        assert!(matches!(
            decode_patches(&bytes[..bytes.len() - 1], &[DescriptorKind::LocalDepth]),
            Err(BinError::TruncatedFile(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_patches(&bad, &[DescriptorKind::LocalDepth]),
            Err(BinError::BadMagic(_))
        ));
    }
}
