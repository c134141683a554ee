//! Flat-shaded synthetic camera images.
//!
//! The crop is centered on the projection of the nominal hole. The true hole
//! is a dark disc; the peg glyph is drawn over it at the projected peg tip.
//! Edges are anti-aliased so that glyph positions vary smoothly at sub-pixel
//! scale.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GlyphShape, SimError, WorldState};
use crate::geometry::{normalize_error, project, Vec3};
use crate::seeds;

pub const HOLE_LEVEL: f64 = 0.1;
pub const PEG_LEVEL: f64 = 0.9;
pub const PIN_LEVEL: f64 = 0.7;
pub const PIXEL_NOISE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Row-major `resolution × resolution` grayscale values in `[0, 1]`.
    pub pixels: Vec<f32>,
    pub resolution: u32,
    pub camera_index: usize,
    /// Simulation-only ground truth: the normalized correction along this
    /// camera's error direction. Only the oracle regressor reads it.
    #[serde(default)]
    pub true_label: f64,
}

impl Observation {
    pub fn pixel(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.resolution as usize + x]
    }

    /// Binary 8-bit PGM.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.resolution, self.resolution)?;
        let bytes: Vec<u8> = self.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        w.write_all(&bytes)
    }
}

/// Pixel positions of the drawn hole and peg centers, in crop coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderGeometry {
    pub hole_px: (f64, f64),
    pub peg_px: (f64, f64),
}

pub fn render(world: &WorldState, camera_index: usize, tcp: &Vec3) -> Result<Observation, SimError> {
    render_with_geometry(world, camera_index, tcp).map(|(o, _)| o)
}

fn disc_coverage(px: f64, py: f64, cx: f64, cy: f64, radius: f64) -> f64 {
    let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
    (radius - d + 0.5).clamp(0.0, 1.0)
}

/// Exact area overlap of the unit pixel centered at `(px, py)` with an
/// axis-aligned rectangle.
fn rect_coverage(px: f64, py: f64, cx: f64, cy: f64, hw: f64, hh: f64) -> f64 {
    let ox = ((px + 0.5).min(cx + hw) - (px - 0.5).max(cx - hw)).clamp(0.0, 1.0);
    let oy = ((py + 0.5).min(cy + hh) - (py - 0.5).max(cy - hh)).clamp(0.0, 1.0);
    ox * oy
}

pub fn render_with_geometry(world: &WorldState, camera_index: usize, tcp: &Vec3) -> Result<(Observation, RenderGeometry), SimError> {
    let cam = world.camera(camera_index)?;
    let r = cam.resolution as usize;
    let half = cam.resolution as f64 / 2.0;
    let (cx, cy) = project(cam, &world.nominal_hole)?;
    let to_crop = |p: (f64, f64)| (p.0 - cx + half, p.1 - cy + half);
    let peg = world.peg_position(tcp);
    let hole_px = to_crop(project(cam, &world.true_hole)?);
    let peg_px = to_crop(project(cam, &peg)?);

    let ppm = cam.pixels_per_mm();
    let glyph = world.config.component_style.glyph();
    let app = &world.appearance;
    let hole_r = glyph.hole_radius * app.hole_scale * ppm;
    let peg_scale = app.peg_scale * ppm;
    let pin_r = glyph.pin_radius * peg_scale;
    let pins: Vec<(f64, f64)> = glyph
        .pins
        .iter()
        .map(|&(dx, dy)| (peg_px.0 + dx * peg_scale, peg_px.1 + dy * peg_scale))
        .collect();
    let background = app.background;
    let (peg_level, pin_level) = if world.config.peg_matches_background {
        (background, background)
    } else {
        (PEG_LEVEL, PIN_LEVEL)
    };

    let mut rng = seeds::rng(
        app.noise_seed,
        &[camera_index as u64, tcp.x.to_bits(), tcp.y.to_bits(), tcp.z.to_bits()],
    );
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("valid std");

    let mut pixels = Vec::with_capacity(r * r);
    for iy in 0..r {
        let py = iy as f64 + 0.5;
        for ix in 0..r {
            let px = ix as f64 + 0.5;
            let mut v = background;
            let ch = disc_coverage(px, py, hole_px.0, hole_px.1, hole_r);
            v += (HOLE_LEVEL - v) * ch;
            let cp = match glyph.shape {
                GlyphShape::Disc { radius } => disc_coverage(px, py, peg_px.0, peg_px.1, radius * peg_scale),
                GlyphShape::Rect { half_width, half_height } => {
                    rect_coverage(px, py, peg_px.0, peg_px.1, half_width * peg_scale, half_height * peg_scale)
                }
            };
            if cp > 0.0 {
                v += (peg_level - v) * cp;
                let pin = pins
                    .iter()
                    .map(|&(qx, qy)| disc_coverage(px, py, qx, qy, pin_r))
                    .fold(0.0, f64::max);
                v += (pin_level - v) * pin * cp;
            }
            let n: f64 = noise.sample(&mut rng);
            pixels.push((v + n).clamp(0.0, 1.0) as f32);
        }
    }

    let q = (world.true_hole - peg).dot(&cam.image_x_axis());
    let obs = Observation {
        pixels,
        resolution: cam.resolution,
        camera_index,
        true_label: normalize_error(q, cam),
    };
    Ok((obs, RenderGeometry { hole_px, peg_px }))
}
