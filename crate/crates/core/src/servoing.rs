//! In-plane visual servoing.
//!
//! Each iteration captures one image per camera, predicts the normalized
//! error along that camera's error direction, converts it to millimeters and
//! solves for the in-plane correction by least squares. The loop runs a
//! fixed number of iterations.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{denormalize_error, error_direction, in_plane, reconstruct_error, CameraModel, GeometryError, Vec3};
use crate::perception::{PerceptionError, RegressorModel};
use crate::sim::{render, SimError, TimingModel, WorldState};

pub const DEFAULT_CLAMP_MM: f64 = 2.0;

#[derive(Debug, Error)]
pub enum ServoError {
    #[error("invalid servo config: {0}")]
    InvalidConfig(String),
    #[error("error directions span fewer than two dimensions")]
    IllConditioned,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

impl ServoError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServoError::InvalidConfig(_) => "InvalidConfig",
            ServoError::IllConditioned => "IllConditioned",
            ServoError::Geometry(e) => e.kind(),
            ServoError::Sim(e) => e.kind(),
            ServoError::Perception(e) => e.kind(),
        }
    }
}

/// What the controller believes about the cell, plus its models.
#[derive(Debug, Clone)]
pub struct ServoConfig {
    pub n_iters: usize,
    /// One model per camera, same order as `cameras`.
    pub models: Vec<RegressorModel>,
    pub l: Vec3,
    /// Nominal hole position.
    pub h: Vec3,
    /// Calibrated camera models. They may differ from the simulator's true
    /// cameras.
    pub cameras: Vec<CameraModel>,
    pub clamp_mm: f64,
    pub timing: TimingModel,
}

impl ServoConfig {
    /// Config that believes the world's own camera calibration.
    pub fn for_world(world: &WorldState, models: Vec<RegressorModel>, n_iters: usize, timing: TimingModel) -> Self {
        ServoConfig {
            n_iters,
            models,
            l: world.l(),
            h: world.nominal_hole,
            cameras: world.cameras.clone(),
            clamp_mm: DEFAULT_CLAMP_MM,
            timing,
        }
    }

    pub fn validate(&self) -> Result<(), ServoError> {
        let bad = |m: String| Err(ServoError::InvalidConfig(m));
        if self.n_iters == 0 {
            return bad("n_iters must be at least 1".into());
        }
        if self.cameras.len() < 2 {
            return bad(format!("need at least 2 cameras, got {}", self.cameras.len()));
        }
        if self.models.len() != self.cameras.len() {
            return bad(format!("{} models for {} cameras", self.models.len(), self.cameras.len()));
        }
        if (self.l.norm() - 1.0).abs() > 1e-9 {
            return bad("insertion direction must be a unit vector".into());
        }
        if !(self.clamp_mm > 0.0) {
            return bad("clamp must be positive".into());
        }
        self.timing.validate().map_err(|e| ServoError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraReading {
    pub y: f64,
    pub q: f64,
    pub u: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoStep {
    pub new_tcp: Vec3,
    /// Applied correction (after clamping).
    pub correction: Vec3,
    pub per_camera: Vec<CameraReading>,
    /// The reconstructed correction exceeded the clamp and was shortened.
    pub saturated: bool,
}

pub fn servo_step<R: Rng + ?Sized>(world: &mut WorldState, cfg: &ServoConfig, rng: &mut R) -> Result<ServoStep, ServoError> {
    cfg.validate()?;
    let tcp = world.tcp;
    let mut per_camera = Vec::with_capacity(cfg.cameras.len());
    for (j, (cam, model)) in cfg.cameras.iter().zip(&cfg.models).enumerate() {
        let obs = render(world, j, &tcp)?;
        let y = model.predict(&obs, rng)?;
        let u = error_direction(&cfg.l, &(cfg.h - cam.position))?;
        per_camera.push(CameraReading { y, q: denormalize_error(y, cam), u });
    }
    let dirs: Vec<Vec3> = per_camera.iter().map(|c| c.u).collect();
    let qs: Vec<f64> = per_camera.iter().map(|c| c.q).collect();
    let rec = reconstruct_error(&dirs, &qs)?;
    if rec.is_ill_conditioned() {
        return Err(ServoError::IllConditioned);
    }
    let mut correction = in_plane(&rec.error, &cfg.l);
    let mag = correction.norm();
    let saturated = mag > cfg.clamp_mm;
    if saturated {
        log::warn!("servo correction of {mag:.3} mm clamped to {} mm", cfg.clamp_mm);
        correction *= cfg.clamp_mm / mag;
    }
    let new_tcp = tcp + correction;
    world.move_in_plane(new_tcp)?;
    world.clock += cfg.timing.servo_step_time(cfg.cameras.len());
    Ok(ServoStep { new_tcp, correction, per_camera, saturated })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoRun {
    pub final_tcp: Vec3,
    /// True in-plane error magnitude after each step, mm.
    pub residuals: Vec<f64>,
    pub steps: Vec<ServoStep>,
    pub time: f64,
}

impl ServoRun {
    /// One row per iteration and camera.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,camera,y,q_mm,correction_x,correction_y,correction_z,residual_mm,saturated")?;
        for (i, (step, res)) in self.steps.iter().zip(&self.residuals).enumerate() {
            for (j, c) in step.per_camera.iter().enumerate() {
                let e = step.correction;
                writeln!(w, "{},{},{},{},{},{},{},{},{}", i + 1, j, c.y, c.q, e.x, e.y, e.z, res, step.saturated)?;
            }
        }
        Ok(())
    }
}

/// Runs exactly `cfg.n_iters` servo steps.
pub fn visual_servo<R: Rng + ?Sized>(world: &mut WorldState, cfg: &ServoConfig, rng: &mut R) -> Result<ServoRun, ServoError> {
    let start = world.clock;
    let mut residuals = Vec::with_capacity(cfg.n_iters);
    let mut steps = Vec::with_capacity(cfg.n_iters);
    for _ in 0..cfg.n_iters {
        let step = servo_step(world, cfg, rng)?;
        residuals.push(world.in_plane_error(&world.tcp).norm());
        steps.push(step);
    }
    Ok(ServoRun { final_tcp: world.tcp, residuals, steps, time: world.clock - start })
}
