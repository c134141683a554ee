//! Simulated robot cell.
//!
//! A [`WorldState`] holds the hidden ground truth of one insertion scene: the
//! true hole position, the peg-in-gripper offset and per-scene appearance.
//! The robot only knows the nominal hole. TCP motion is restricted to the
//! alignment plane at constant orientation; insertion attempts give binary
//! feedback.

mod render;
mod style;
mod timing;

pub use render::{render, render_with_geometry, Observation, RenderGeometry};
pub use style::{ComponentStyle, Glyph, GlyphShape};
pub use timing::TimingModel;

use nalgebra::Matrix3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{in_plane, plane_basis, CameraModel, GeometryError, Vec3};
use crate::search::SearchPattern;
use crate::seeds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("camera index {index} out of range ({count} cameras)")]
    BadCameraIndex { index: usize, count: usize },
    #[error("TCP motion leaves the alignment plane (Δp·l = {0})")]
    OutOfPlaneMotion(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl SimError {
    pub fn kind(&self) -> &'static str {
        match self {
            SimError::InvalidConfig(_) => "InvalidConfig",
            SimError::BadCameraIndex { .. } => "BadCameraIndex",
            SimError::OutOfPlaneMotion(_) => "OutOfPlaneMotion",
            SimError::Geometry(e) => e.kind(),
        }
    }
}

/// Camera placement as written in config files. The camera is aimed at
/// `target` (default: the nominal hole).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub position: Vec3,
    #[serde(default)]
    pub target: Option<Vec3>,
    pub focal_length: f64,
    pub resolution: u32,
}

impl CameraSpec {
    pub fn build(&self, l: &Vec3, nominal_hole: &Vec3) -> Result<CameraModel, GeometryError> {
        let target = self.target.unwrap_or(*nominal_hole);
        CameraModel::looking_at(self.position, target, l, self.focal_length, self.resolution)
    }

    /// Camera on a sphere around `target`: `azimuth` about the vertical,
    /// `elevation` above the horizontal plane, both in degrees.
    pub fn orbit(target: Vec3, distance: f64, azimuth_deg: f64, elevation_deg: f64, focal_length: f64, resolution: u32) -> Self {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let position = target + distance * Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        CameraSpec { position, target: Some(target), focal_length, resolution }
    }
}

pub fn default_cameras() -> Vec<CameraSpec> {
    vec![
        CameraSpec::orbit(Vec3::zeros(), 250.0, -45.0, 45.0, 4000.0, 64),
        CameraSpec::orbit(Vec3::zeros(), 250.0, 45.0, 45.0, 4000.0, 64),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Insertion tolerance ε, mm.
    pub tolerance: f64,
    /// Std of the true hole offset from nominal, per in-plane axis, mm.
    pub hole_uncertainty_sigma: f64,
    /// Std of the peg-in-gripper offset, per in-plane axis, mm.
    pub grasp_uncertainty_sigma: f64,
    /// Radius of the uniform-disc start error added per experiment, mm.
    pub extra_error_radius: f64,
    pub insertion_direction: Vec3,
    pub nominal_hole: Vec3,
    pub cameras: Vec<CameraSpec>,
    pub component_style: ComponentStyle,
    pub seed: u64,
    /// TCP height above the hole plane while servoing and searching, mm.
    pub hover_height: f64,
    /// Draw the peg with the background level (uninformative images).
    pub peg_matches_background: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            tolerance: 0.1,
            hole_uncertainty_sigma: 0.01,
            grasp_uncertainty_sigma: 0.01,
            extra_error_radius: 1.0,
            insertion_direction: Vec3::new(0.0, 0.0, -1.0),
            nominal_hole: Vec3::zeros(),
            cameras: default_cameras(),
            component_style: ComponentStyle::PH,
            seed: 0,
            hover_height: 0.5,
            peg_matches_background: false,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return bad(format!("tolerance must be positive, got {}", self.tolerance));
        }
        for (name, v) in [
            ("hole_uncertainty_sigma", self.hole_uncertainty_sigma),
            ("grasp_uncertainty_sigma", self.grasp_uncertainty_sigma),
            ("extra_error_radius", self.extra_error_radius),
            ("hover_height", self.hover_height),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.cameras.len() < 2 {
            return bad(format!("need at least 2 cameras, got {}", self.cameras.len()));
        }
        if (self.insertion_direction.norm() - 1.0).abs() > 1e-9 {
            return bad("insertion_direction must be a unit vector".into());
        }
        self.build_cameras()?;
        Ok(())
    }

    pub fn build_cameras(&self) -> Result<Vec<CameraModel>, SimError> {
        self.cameras
            .iter()
            .map(|c| c.build(&self.insertion_direction, &self.nominal_hole).map_err(SimError::from))
            .collect()
    }
}

/// Per-scene render nuisances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub background: f64,
    pub peg_scale: f64,
    pub hole_scale: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionKind {
    InPlane,
    Stroke,
    Approach,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub from: Vec3,
    pub to: Vec3,
    pub kind: MotionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub config: WorldConfig,
    /// True camera models of the cell.
    pub cameras: Vec<CameraModel>,
    pub true_hole: Vec3,
    pub grasp_offset: [f64; 2],
    pub nominal_hole: Vec3,
    /// Sampled start error, in the plane basis.
    pub start_offset: [f64; 2],
    pub tcp: Vec3,
    pub orientation: Matrix3<f64>,
    pub appearance: Appearance,
    pub rng: ChaCha8Rng,
    pub clock: f64,
    pub attempts: u32,
    pub trajectory: Vec<Motion>,
    basis: (Vec3, Vec3),
}

fn gaussian2(rng: &mut ChaCha8Rng, sigma: f64) -> [f64; 2] {
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    [sigma * a, sigma * b]
}

/// Uniform sample in a disc of the given radius.
pub fn sample_disc<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> [f64; 2] {
    let t = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    let m = radius * rng.random::<f64>().sqrt();
    [m * t.cos(), m * t.sin()]
}

pub fn new_world(config: WorldConfig) -> Result<WorldState, SimError> {
    config.validate()?;
    let cameras = config.build_cameras()?;
    let l = config.insertion_direction;
    let basis = plane_basis(&l);
    let mut rng = seeds::rng(config.seed, &[0x574f_524c_44]);
    let hole = gaussian2(&mut rng, config.hole_uncertainty_sigma);
    let grasp_offset = gaussian2(&mut rng, config.grasp_uncertainty_sigma);
    let appearance = Appearance {
        background: rng.random_range(0.4..0.6),
        peg_scale: rng.random_range(0.95..1.05),
        hole_scale: rng.random_range(0.95..1.05),
        noise_seed: rng.random(),
    };
    let start_offset = sample_disc(&mut rng, config.extra_error_radius);
    let nominal_hole = config.nominal_hole;
    let true_hole = nominal_hole + hole[0] * basis.0 + hole[1] * basis.1;
    let tcp = nominal_hole + start_offset[0] * basis.0 + start_offset[1] * basis.1 - config.hover_height * l;
    Ok(WorldState {
        config,
        cameras,
        true_hole,
        grasp_offset,
        nominal_hole,
        start_offset,
        tcp,
        orientation: Matrix3::identity(),
        appearance,
        rng,
        clock: 0.0,
        attempts: 0,
        trajectory: Vec::new(),
        basis,
    })
}

impl WorldState {
    pub fn l(&self) -> Vec3 {
        self.config.insertion_direction
    }

    pub fn tolerance(&self) -> f64 {
        self.config.tolerance
    }

    pub fn basis(&self) -> (Vec3, Vec3) {
        self.basis
    }

    pub fn plane_vector(&self, o: [f64; 2]) -> Vec3 {
        o[0] * self.basis.0 + o[1] * self.basis.1
    }

    /// Nominal hole at hover height: where the robot would start without
    /// any added error.
    pub fn nominal_tcp(&self) -> Vec3 {
        self.nominal_hole - self.config.hover_height * self.l()
    }

    /// Peg tip position for a given TCP.
    pub fn peg_position(&self, tcp: &Vec3) -> Vec3 {
        tcp + self.plane_vector(self.grasp_offset)
    }

    /// In-plane vector from peg to true hole: the correction still needed.
    pub fn in_plane_error(&self, tcp: &Vec3) -> Vec3 {
        in_plane(&(self.true_hole - self.peg_position(tcp)), &self.l())
    }

    /// Height of the TCP above the hole plane.
    pub fn height(&self, tcp: &Vec3) -> f64 {
        -(tcp - self.true_hole).dot(&self.l())
    }

    /// Whether an attempt at `tcp` would insert. Does not count.
    pub fn would_insert(&self, tcp: &Vec3) -> bool {
        self.in_plane_error(tcp).norm() <= self.config.tolerance
    }

    /// Insertion attempt with binary feedback.
    pub fn attempt_insertion(&mut self, tcp: &Vec3) -> bool {
        self.attempts += 1;
        self.trajectory.push(Motion { from: *tcp, to: *tcp, kind: MotionKind::Stroke });
        self.would_insert(tcp)
    }

    /// Moves the TCP within the alignment plane.
    pub fn move_in_plane(&mut self, target: Vec3) -> Result<(), SimError> {
        let along = (target - self.tcp).dot(&self.l());
        if along.abs() > 1e-9 {
            return Err(SimError::OutOfPlaneMotion(along));
        }
        self.trajectory.push(Motion { from: self.tcp, to: target, kind: MotionKind::InPlane });
        self.tcp = target;
        Ok(())
    }

    /// Unconstrained repositioning, e.g. changing hover height.
    pub fn approach(&mut self, target: Vec3) {
        self.trajectory.push(Motion { from: self.tcp, to: target, kind: MotionKind::Approach });
        self.tcp = target;
    }

    pub fn camera(&self, index: usize) -> Result<&CameraModel, SimError> {
        self.cameras.get(index).ok_or(SimError::BadCameraIndex { index, count: self.cameras.len() })
    }
}

/// Result of one insertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionOutcome {
    pub success: bool,
    pub attempts: u32,
    pub simulated_time: f64,
    pub final_tcp: Vec3,
    /// In-plane distance from the start position (before any servoing) to
    /// the successful position; `None` when the search failed.
    pub retrospective_error: Option<f64>,
    /// In-plane distance from the post-servo position to the successful
    /// position.
    pub post_servo_retrospective_error: Option<f64>,
    /// Ground-truth initial in-plane error, diagnostics only.
    pub true_initial_error: f64,
    pub servo_residuals: Vec<f64>,
    pub servo_time: f64,
    pub search_time: f64,
}

/// Attempts insertions at `start_tcp + offset` for every pattern offset in
/// order until one succeeds.
pub fn spiral_insert(world: &mut WorldState, start_tcp: Vec3, pattern: &SearchPattern, timing: &TimingModel) -> InsertionOutcome {
    if (pattern.tolerance - world.tolerance()).abs() > 1e-12 {
        log::warn!(
            "search pattern tolerance {} differs from world tolerance {}",
            pattern.tolerance,
            world.tolerance()
        );
    }
    if start_tcp != world.tcp {
        world.approach(start_tcp);
    }
    let true_initial_error = world.in_plane_error(&start_tcp).norm();
    let mut attempts = 0u32;
    let mut success = None;
    for offset in &pattern.offsets {
        let candidate = start_tcp + world.plane_vector(*offset);
        world
            .move_in_plane(candidate)
            .expect("pattern offsets are in-plane by construction");
        attempts += 1;
        if world.attempt_insertion(&candidate) {
            success = Some(offset);
            break;
        }
    }
    let search_time = attempts as f64 * timing.t_attempt;
    world.clock += search_time;
    let retrospective_error = success.map(|o| (o[0] * o[0] + o[1] * o[1]).sqrt());
    InsertionOutcome {
        success: success.is_some(),
        attempts,
        simulated_time: search_time,
        final_tcp: world.tcp,
        retrospective_error,
        post_servo_retrospective_error: None,
        true_initial_error,
        servo_residuals: Vec::new(),
        servo_time: 0.0,
        search_time,
    }
}
