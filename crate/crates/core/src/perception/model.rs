use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::{InputSpec, PerceptionError};
use crate::sim::{ComponentStyle, Observation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelKind {
    /// Returns the simulator's true label plus Gaussian noise (normalized units).
    Oracle { noise_sigma: f64 },
    Ridge { weights: Vec<f64>, bias: f64, lambda: f64 },
    Mlp(Mlp),
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Oracle { .. } => "oracle",
            ModelKind::Ridge { .. } => "ridge",
            ModelKind::Mlp(_) => "mlp",
        }
    }
}

/// Where a model came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Provenance {
    pub seed: u64,
    pub style: Option<ComponentStyle>,
    pub camera_index: Option<usize>,
    pub train_insertions: Vec<u32>,
    pub val_insertions: Vec<u32>,
    pub epochs_run: usize,
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub kind: ModelKind,
    pub input: InputSpec,
    #[serde(default)]
    pub provenance: Provenance,
}

impl RegressorModel {
    pub fn oracle(resolution: u32, noise_sigma: f64) -> Self {
        RegressorModel {
            kind: ModelKind::Oracle { noise_sigma },
            input: InputSpec::bare(resolution),
            provenance: Provenance::default(),
        }
    }

    /// Ridge model with zero weights that always predicts `value`.
    pub fn constant(resolution: u32, value: f64) -> Self {
        let input = InputSpec::bare(resolution);
        RegressorModel {
            kind: ModelKind::Ridge { weights: vec![0.0; input.dim()], bias: value, lambda: 0.0 },
            input,
            provenance: Provenance::default(),
        }
    }

    pub fn resolution(&self) -> u32 {
        self.input.resolution
    }

    fn check_shape(&self, obs: &Observation) -> Result<(), PerceptionError> {
        let n = self.input.resolution as usize * self.input.resolution as usize;
        if obs.resolution != self.input.resolution || obs.pixels.len() != n {
            return Err(PerceptionError::ShapeMismatch { expected: n, got: obs.pixels.len() });
        }
        Ok(())
    }

    /// Normalized error prediction. Only the oracle draws from `rng`.
    pub fn predict<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Result<f64, PerceptionError> {
        self.check_shape(obs)?;
        Ok(match &self.kind {
            ModelKind::Oracle { noise_sigma } => {
                if *noise_sigma > 0.0 {
                    let n = Normal::new(0.0, *noise_sigma).map_err(|e| PerceptionError::InvalidHyper(e.to_string()))?;
                    obs.true_label + n.sample(rng)
                } else {
                    obs.true_label
                }
            }
            ModelKind::Ridge { weights, bias, .. } => {
                let x = self.input.encode(&obs.pixels);
                bias + weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>()
            }
            ModelKind::Mlp(m) => m.forward(&self.input.encode(&obs.pixels)),
        })
    }

    /// Checks parameter shapes against the input spec and finiteness.
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let d = self.input.dim();
        if !self.input.mean.is_empty() && self.input.mean.len() != d {
            return Err(PerceptionError::ShapeMismatch { expected: d, got: self.input.mean.len() });
        }
        let finite = match &self.kind {
            ModelKind::Oracle { noise_sigma } => noise_sigma.is_finite() && *noise_sigma >= 0.0,
            ModelKind::Ridge { weights, bias, lambda } => {
                if weights.len() != d {
                    return Err(PerceptionError::ShapeMismatch { expected: d, got: weights.len() });
                }
                bias.is_finite() && lambda.is_finite() && weights.iter().all(|w| w.is_finite())
            }
            ModelKind::Mlp(m) => {
                if m.input_dim() != d {
                    return Err(PerceptionError::ShapeMismatch { expected: d, got: m.input_dim() });
                }
                if m.params.len() != Mlp::param_count(&m.sizes) || m.sizes.last() != Some(&1) {
                    return Err(PerceptionError::Format("mlp parameter count does not match layer sizes".into()));
                }
                m.is_finite()
            }
        };
        if finite && self.input.scale.is_finite() && self.input.scale > 0.0 {
            Ok(())
        } else {
            Err(PerceptionError::Format("non-finite model parameters".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn obs(r: u32, v: f32) -> Observation {
        Observation { pixels: vec![v; (r * r) as usize], resolution: r, camera_index: 0, true_label: 0.25 }
    }

    #[test]
    fn constant_ridge_predicts_bias() {
        let m = RegressorModel::constant(8, 0.01);
        let mut rng = seeds::rng(0, &[]);
        assert_eq!(m.predict(&obs(8, 0.3), &mut rng).unwrap(), 0.01);
        assert_eq!(m.predict(&obs(8, 0.9), &mut rng).unwrap(), 0.01);
    }

    #[test]
    fn shape_mismatch() {
        let m = RegressorModel::constant(8, 0.0);
        let err = m.predict(&obs(16, 0.3), &mut seeds::rng(0, &[])).unwrap_err();
        assert!(matches!(err, PerceptionError::ShapeMismatch { expected: 64, got: 256 }));
    }

    #[test]
    fn oracle_noise_variance() {
        let sigma = 0.01;
        let m = RegressorModel::oracle(4, sigma);
        let mut rng = seeds::rng(3, &[]);
        let o = obs(4, 0.5);
        let n = 10_000;
        let mse = (0..n).map(|_| (m.predict(&o, &mut rng).unwrap() - 0.25).powi(2)).sum::<f64>() / n as f64;
        assert!((mse / (sigma * sigma) - 1.0).abs() < 0.1, "{mse}");
    }

    #[test]
    fn validate_rejects_bad_shapes() {
        let mut m = RegressorModel::constant(4, 0.0);
        assert!(m.validate().is_ok());
        if let ModelKind::Ridge { weights, .. } = &mut m.kind {
            weights.pop();
        }
        assert!(m.validate().is_err());
    }
}
