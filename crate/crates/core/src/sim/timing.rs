use serde::{Deserialize, Serialize};

/// Simulated time constants, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingModel {
    /// One insertion attempt including approach and retract.
    pub t_attempt: f64,
    /// Image capture, per image.
    pub t_capture: f64,
    /// Model inference, per image.
    pub t_infer: f64,
    /// One servo motion.
    pub t_move: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel { t_attempt: 0.5, t_capture: 0.083, t_infer: 0.067, t_move: 0.133 }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("t_attempt", self.t_attempt),
            ("t_capture", self.t_capture),
            ("t_infer", self.t_infer),
            ("t_move", self.t_move),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    /// Proportionality constant of `t = k (|e|/ε)²` for search on the
    /// isometric grid: the lattice has `2/(√3 s²)` points per unit area with
    /// `s = ε√3`, so a disc of radius `|e|` holds `2π/(3√3) (|e|/ε)²` attempts.
    pub fn k(&self) -> f64 {
        self.t_attempt * 2.0 * std::f64::consts::PI / (3.0 * 3f64.sqrt())
    }

    /// Time for one servo iteration with `n_cams` cameras.
    pub fn servo_step_time(&self, n_cams: usize) -> f64 {
        n_cams as f64 * (self.t_capture + self.t_infer) + self.t_move
    }

    pub fn servo_time(&self, n_iters: usize, n_cams: usize) -> f64 {
        n_iters as f64 * self.servo_step_time(n_cams)
    }
}
