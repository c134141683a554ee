//! Camera and error geometry for in-plane servoing.
//!
//! Every camera observes the in-plane error only along one direction, the
//! error direction `u = l × v / |l × v|`, where `l` is the insertion direction
//! and `v` the view vector from the camera to the (approximate) insertion
//! point. The scalar error seen by a camera is `q = e · u`, normalized for
//! learning as `y = q f / (r z)`. Two or more cameras give a linear system
//! `U ê = q` whose minimum-norm least-squares solution is the in-plane error.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Positions and directions, millimeters.
pub type Vec3 = Vector3<f64>;

/// Tolerance used for unit-norm and orthogonality checks.
pub const UNIT_TOL: f64 = 1e-9;

/// Singular-value ratio below which the reconstruction system is flagged.
pub const RANK_RATIO: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("view vector is parallel to the insertion direction")]
    DegenerateView,
    #[error("need at least 2 views for reconstruction, got {0}")]
    InsufficientViews(usize),
    #[error("direction and scalar error lists differ in length ({dirs} vs {qs})")]
    LengthMismatch { dirs: usize, qs: usize },
    #[error("point lies behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

impl GeometryError {
    pub fn kind(&self) -> &'static str {
        match self {
            GeometryError::DegenerateView => "DegenerateView",
            GeometryError::InsufficientViews(_) => "InsufficientViews",
            GeometryError::LengthMismatch { .. } => "LengthMismatch",
            GeometryError::BehindCamera(_) => "BehindCamera",
            GeometryError::InvalidCamera(_) => "InvalidCamera",
        }
    }
}

/// Pinhole camera with a square image.
///
/// `orientation` maps world vectors into the camera frame; its rows are the
/// image x axis, image y axis and optical axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub position: Vec3,
    pub orientation: Matrix3<f64>,
    /// Focal length in pixels.
    pub focal_length: f64,
    /// Image side length in pixels.
    pub resolution: u32,
    /// Approximate distance from camera to the insertion, mm.
    pub nominal_depth: f64,
}

impl CameraModel {
    /// Builds a camera at `position` aimed at `target`.
    ///
    /// The image x axis is the error direction for insertion direction `l`,
    /// the optical axis points at `target`, and the image y axis completes a
    /// right-handed frame. The nominal depth is the distance to `target`.
    pub fn looking_at(
        position: Vec3,
        target: Vec3,
        l: &Vec3,
        focal_length: f64,
        resolution: u32,
    ) -> Result<Self, GeometryError> {
        let view = target - position;
        let u = error_direction(l, &view)?;
        let axis = view.normalize();
        let y_axis = axis.cross(&u);
        let orientation = Matrix3::from_rows(&[u.transpose(), y_axis.transpose(), axis.transpose()]);
        let cam = CameraModel {
            position,
            orientation,
            focal_length,
            resolution,
            nominal_depth: view.norm(),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal_length > 0.0 && self.focal_length.is_finite()) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal length must be positive, got {}",
                self.focal_length
            )));
        }
        if self.resolution == 0 {
            return Err(GeometryError::InvalidCamera("resolution must be positive".into()));
        }
        if !(self.nominal_depth > 0.0 && self.nominal_depth.is_finite()) {
            return Err(GeometryError::InvalidCamera(format!(
                "nominal depth must be positive, got {}",
                self.nominal_depth
            )));
        }
        let rows: Vec<Vec3> = (0..3).map(|i| self.orientation.row(i).transpose()).collect();
        for (i, a) in rows.iter().enumerate() {
            if (a.norm() - 1.0).abs() > UNIT_TOL {
                return Err(GeometryError::InvalidCamera(format!("orientation row {i} is not unit")));
            }
            for b in rows.iter().skip(i + 1) {
                if a.dot(b).abs() > UNIT_TOL {
                    return Err(GeometryError::InvalidCamera("orientation rows are not orthogonal".into()));
                }
            }
        }
        Ok(())
    }

    /// Image x axis in world coordinates.
    pub fn image_x_axis(&self) -> Vec3 {
        self.orientation.row(0).transpose()
    }

    pub fn optical_axis(&self) -> Vec3 {
        self.orientation.row(2).transpose()
    }

    /// Pixels per millimeter at the nominal depth.
    pub fn pixels_per_mm(&self) -> f64 {
        self.focal_length / self.nominal_depth
    }
}

/// Camera-specific error direction `l × v / |l × v|`.
pub fn error_direction(l: &Vec3, view: &Vec3) -> Result<Vec3, GeometryError> {
    let c = l.cross(view);
    let n = c.norm();
    if !(n > UNIT_TOL * view.norm()) {
        return Err(GeometryError::DegenerateView);
    }
    Ok(c / n)
}

/// Scalar error along an error direction.
pub fn scalar_error(e: &Vec3, u: &Vec3) -> f64 {
    e.dot(u)
}

/// `y = q f / (r z)`.
pub fn normalize_error(q: f64, cam: &CameraModel) -> f64 {
    q * cam.focal_length / (cam.resolution as f64 * cam.nominal_depth)
}

/// `q = y r z / f`.
pub fn denormalize_error(y: f64, cam: &CameraModel) -> f64 {
    y * cam.resolution as f64 * cam.nominal_depth / cam.focal_length
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conditioning {
    WellConditioned,
    /// Row space has numerical rank below 2; the error is only known along
    /// one direction.
    IllConditioned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub error: Vec3,
    pub rank: usize,
    pub conditioning: Conditioning,
}

impl Reconstruction {
    pub fn is_ill_conditioned(&self) -> bool {
        self.conditioning == Conditioning::IllConditioned
    }
}

/// Minimum-norm least-squares solution of `U ê = q`.
///
/// Rows of `U` are error directions. When every row is perpendicular to the
/// insertion direction the solution lies in their span and is therefore
/// in-plane.
pub fn reconstruct_error(dirs: &[Vec3], qs: &[f64]) -> Result<Reconstruction, GeometryError> {
    if dirs.len() != qs.len() {
        return Err(GeometryError::LengthMismatch { dirs: dirs.len(), qs: qs.len() });
    }
    if dirs.len() < 2 {
        return Err(GeometryError::InsufficientViews(dirs.len()));
    }
    let n = dirs.len();
    let u = DMatrix::from_fn(n, 3, |i, j| dirs[i][j]);
    let q = DVector::from_column_slice(qs);
    // Singular values and right vectors come from the eigen-decomposition of
    // UᵀU. nalgebra's SVD loses accuracy on rank-deficient tall matrices.
    let eig = (u.transpose() * &u).symmetric_eigen();
    let sigmas: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let s_max = sigmas.iter().cloned().fold(0.0, f64::max);
    let cutoff = RANK_RATIO * s_max;
    let rank = sigmas.iter().filter(|&&s| s > cutoff).count();
    let utq = u.transpose() * q;
    // ê = V Σ⁺² Vᵀ Uᵀ q over the retained singular values.
    let mut e = Vec3::zeros();
    for (k, &s) in sigmas.iter().enumerate() {
        if s <= cutoff {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let coef = v.dot(&utq) / (s * s);
        for j in 0..3 {
            e[j] += coef * v[j];
        }
    }
    Ok(Reconstruction {
        error: e,
        rank,
        conditioning: if rank >= 2 { Conditioning::WellConditioned } else { Conditioning::IllConditioned },
    })
}

/// Pinhole projection to pixel coordinates, principal point at `(r/2, r/2)`.
pub fn project(cam: &CameraModel, world_point: &Vec3) -> Result<(f64, f64), GeometryError> {
    let pc = cam.orientation * (world_point - cam.position);
    if !(pc.z > 0.0) {
        return Err(GeometryError::BehindCamera(pc.z));
    }
    let half = cam.resolution as f64 / 2.0;
    Ok((cam.focal_length * pc.x / pc.z + half, cam.focal_length * pc.y / pc.z + half))
}

/// Orthonormal in-plane basis `(e1, e2)` for insertion direction `l`, with
/// `e1 × e2 = -l`.
pub fn plane_basis(l: &Vec3) -> (Vec3, Vec3) {
    let l = l.normalize();
    let seed = if l.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (seed - l * l.dot(&seed)).normalize();
    let e2 = (-l).cross(&e1);
    (e1, e2)
}

/// Component of `v` perpendicular to `l`.
pub fn in_plane(v: &Vec3, l: &Vec3) -> Vec3 {
    v - l * v.dot(l)
}
