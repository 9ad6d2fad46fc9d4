//! Geometric descriptors of a facet over a neighbourhood of facet centroids.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, SymmetricEigen, Vector3};

use super::PatchError;
use crate::mesh::Mesh;

/// Minimum neighbourhood size for the plane and quadric fits.
pub const MIN_NEIGHBORHOOD: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DescriptorKind {
    /// Signed distance to the fitted plane, model units.
    LocalDepth,
    /// λ₀ / (λ₀ + λ₁ + λ₂) of the centroid covariance, in `[0, 1/3]`.
    SurfaceVariation,
    /// Mean curvature from a quadric fit, positive on convex regions.
    MeanCurvature,
    /// Shape index in `[-1, 1]`.
    ShapeIndex,
    /// Normal azimuth in the local frame, radians.
    Azimuth,
    /// Normal elevation in the local frame, radians.
    Elevation,
}

impl DescriptorKind {
    pub const ALL: [DescriptorKind; 6] = [
        Self::LocalDepth,
        Self::SurfaceVariation,
        Self::MeanCurvature,
        Self::ShapeIndex,
        Self::Azimuth,
        Self::Elevation,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Self::LocalDepth => "LD",
            Self::SurfaceVariation => "SV",
            Self::MeanCurvature => "Cur",
            Self::ShapeIndex => "SI",
            Self::Azimuth => "AZ",
            Self::Elevation => "EL",
        }
    }

    /// Stable numeric tag used in binary files.
    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|&k| k == self).unwrap() as u8
    }
}

impl std::str::FromStr for DescriptorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.short_name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown descriptor '{s}' (expected one of LD, SV, Cur, SI, AZ, EL)"))
    }
}

impl std::fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Principal-axis frame of a point set.
///
/// `axes` columns are (tangent u, tangent v, normal); the normal is the
/// smallest-variance direction, oriented to agree with a reference normal.
#[derive(Debug, Clone)]
pub struct LocalFrame {
    pub mean: Point3<f64>,
    pub axes: Matrix3<f64>,
    /// Covariance eigenvalues, ascending.
    pub eigenvalues: [f64; 3],
}

impl LocalFrame {
    /// Fits the total-least-squares plane of `points`. `reference_dir` fixes
    /// the first tangent axis (projected onto the plane).
    pub fn fit(
        points: &[Point3<f64>],
        reference_normal: &Vector3<f64>,
        reference_dir: Option<&Vector3<f64>>,
    ) -> Result<Self, PatchError> {
        if points.len() < 3 {
            return Err(PatchError::InsufficientNeighborhood {
                found: points.len(),
                required: 3,
            });
        }
        let n = points.len() as f64;
        let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p.coords - mean;
            cov += d * d.transpose();
        }
        cov /= n;
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order.map(|i| eig.eigenvalues[i].max(0.0));
        if eigenvalues[1] <= 1e-12 * eigenvalues[2].max(f64::MIN_POSITIVE) {
            return Err(PatchError::SingularFit);
        }
        let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
        if normal.dot(reference_normal) < 0.0 {
            normal = -normal;
        }
        let mut u = reference_dir
            .map(|d| d - normal * normal.dot(d))
            .filter(|d| d.norm() > 1e-12)
            .unwrap_or_else(|| eig.eigenvectors.column(order[2]).into_owned());
        u.normalize_mut();
        let v = normal.cross(&u);
        Ok(Self {
            mean: Point3::from(mean),
            axes: Matrix3::from_columns(&[u, v, normal]),
            eigenvalues,
        })
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.axes.column(2).into_owned()
    }

    /// Coordinates of `p` in the frame, relative to `origin`.
    pub fn local(&self, origin: &Point3<f64>, p: &Point3<f64>) -> Vector3<f64> {
        self.axes.transpose() * (p - origin)
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        (p - self.mean).dot(&self.normal())
    }

    pub fn surface_variation(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            0.0
        } else {
            self.eigenvalues[0] / total
        }
    }

    /// Azimuth and elevation of a direction expressed in this frame.
    pub fn azimuth_elevation(&self, dir: &Vector3<f64>) -> (f64, f64) {
        let l = self.axes.transpose() * dir.normalize();
        (l.y.atan2(l.x), l.z.clamp(-1.0, 1.0).asin())
    }
}

/// Height field `z = a x² + b xy + c y² + d x + e y + f` in a local frame.
#[derive(Debug, Clone, Copy)]
pub struct Quadric {
    pub coef: [f64; 6],
}

impl Quadric {
    /// Least-squares fit to local coordinates.
    pub fn fit(local: &[Vector3<f64>]) -> Result<Self, PatchError> {
        if local.len() < MIN_NEIGHBORHOOD {
            return Err(PatchError::InsufficientNeighborhood {
                found: local.len(),
                required: MIN_NEIGHBORHOOD,
            });
        }
        // normalise coordinates so the fit is scale-free
        let scale = local
            .iter()
            .map(|p| p.x.hypot(p.y))
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let a = DMatrix::from_fn(local.len(), 6, |r, c| {
            let (x, y) = (local[r].x / scale, local[r].y / scale);
            match c {
                0 => x * x,
                1 => x * y,
                2 => y * y,
                3 => x,
                4 => y,
                _ => 1.0,
            }
        });
        let z = DVector::from_iterator(local.len(), local.iter().map(|p| p.z / scale));
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-10 * smax {
            return Err(PatchError::SingularFit);
        }
        let sol = svd.solve(&z, 0.0).map_err(|_| PatchError::SingularFit)?;
        // undo normalisation: z = s·ẑ(x/s, y/s)
        Ok(Self {
            coef: [
                sol[0] / scale,
                sol[1] / scale,
                sol[2] / scale,
                sol[3],
                sol[4],
                sol[5] * scale,
            ],
        })
    }

    /// Mean and Gaussian curvature at the local origin. Mean curvature is
    /// positive where the surface bends away from the frame normal, so a
    /// sphere with outward normals reads `+1/r`.
    pub fn curvatures(&self) -> (f64, f64) {
        let [a, b, c, d, e, _] = self.coef;
        let (fxx, fxy, fyy, fx, fy) = (2.0 * a, b, 2.0 * c, d, e);
        let w = 1.0 + fx * fx + fy * fy;
        let h = ((1.0 + fy * fy) * fxx - 2.0 * fx * fy * fxy + (1.0 + fx * fx) * fyy) / (2.0 * w.powf(1.5));
        let k = (fxx * fyy - fxy * fxy) / (w * w);
        (-h, k)
    }

    /// Principal curvatures `(k1, k2)`, `k1 ≥ k2`, in the same sign convention.
    pub fn principal(&self) -> (f64, f64) {
        let (h, k) = self.curvatures();
        let disc = (h * h - k).max(0.0).sqrt();
        (h + disc, h - disc)
    }
}

/// Shape index from principal curvatures `k1 ≥ k2`.
pub fn shape_index(k1: f64, k2: f64) -> f64 {
    if k1 == 0.0 && k2 == 0.0 {
        return 0.0;
    }
    (2.0 / std::f64::consts::PI) * (k1 + k2).atan2(k1 - k2)
}

/// Curvature-type descriptors of one facet over its support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalShape {
    pub depth: f64,
    pub variation: f64,
    pub mean_curvature: f64,
    pub shape_index: f64,
}

/// Plane and quadric fit of `neighborhood` centroids around `facet`.
pub fn local_shape(mesh: &Mesh, facet: usize, neighborhood: &[usize]) -> Result<(LocalFrame, LocalShape), PatchError> {
    if neighborhood.len() < MIN_NEIGHBORHOOD {
        return Err(PatchError::InsufficientNeighborhood {
            found: neighborhood.len(),
            required: MIN_NEIGHBORHOOD,
        });
    }
    let geom = mesh
        .facet_geometry(facet)
        .map_err(|_| PatchError::DegenerateFacet(facet))?;
    let points: Vec<Point3<f64>> = neighborhood.iter().map(|&f| mesh.centroid(f)).collect();
    let dir = neighborhood
        .iter()
        .map(|&f| mesh.centroid(f) - geom.centroid)
        .find(|d| d.norm() > 1e-12);
    let frame = LocalFrame::fit(&points, &geom.normal, dir.as_ref())?;
    let local: Vec<Vector3<f64>> = points.iter().map(|p| frame.local(&geom.centroid, p)).collect();
    let quadric = Quadric::fit(&local)?;
    let (h, _) = quadric.curvatures();
    let (k1, k2) = quadric.principal();
    Ok((
        frame.clone(),
        LocalShape {
            depth: frame.signed_distance(&geom.centroid),
            variation: frame.surface_variation(),
            mean_curvature: h,
            shape_index: shape_index(k1, k2),
        },
    ))
}

/// One descriptor of `facet` over `neighborhood` (facet indices whose
/// centroids form the support; at least [`MIN_NEIGHBORHOOD`]).
pub fn compute_descriptor(
    mesh: &Mesh,
    facet: usize,
    neighborhood: &[usize],
    kind: DescriptorKind,
) -> Result<f64, PatchError> {
    let (frame, shape) = local_shape(mesh, facet, neighborhood)?;
    Ok(match kind {
        DescriptorKind::LocalDepth => shape.depth,
        DescriptorKind::SurfaceVariation => shape.variation,
        DescriptorKind::MeanCurvature => shape.mean_curvature,
        DescriptorKind::ShapeIndex => shape.shape_index,
        DescriptorKind::Azimuth | DescriptorKind::Elevation => {
            let n = mesh
                .facet_geometry(facet)
                .map_err(|_| PatchError::DegenerateFacet(facet))?
                .normal;
            let (az, el) = frame.azimuth_elevation(&n);
            if kind == DescriptorKind::Azimuth {
                az
            } else {
                el
            }
        }
    })
}
