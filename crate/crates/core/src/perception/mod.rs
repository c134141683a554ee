//! Learned mapping from a camera crop to the normalized scalar error along
//! that camera's error direction.
//!
//! Three regressor kinds share one interface: a noisy oracle that reads the
//! simulator's ground truth, closed-form ridge regression and a small
//! multilayer perceptron. Training minimizes mean squared error and keeps the
//! parameters with the lowest validation loss.

pub mod features;
pub mod io;
pub mod mlp;
mod model;
mod ridge;
mod train;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{denormalize_error, normalize_error, CameraModel};
use crate::sim::{ComponentStyle, Observation};

pub use features::{FeatureMap, InputSpec};
pub use model::{ModelKind, Provenance, RegressorModel};
pub use train::{gradient_check, train, TrainHyper, TrainKind, TrainReport};

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("insertion {0} appears in both training and validation data")]
    LeakedInsertion(u32),
    #[error("{0} models have no gradient to check")]
    NotDifferentiableKind(&'static str),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

impl PerceptionError {
    pub fn kind(&self) -> &'static str {
        match self {
            PerceptionError::ShapeMismatch { .. } => "ShapeMismatch",
            PerceptionError::EmptyDataset => "EmptyDataset",
            PerceptionError::LeakedInsertion(_) => "LeakedInsertion",
            PerceptionError::NotDifferentiableKind(_) => "NotDifferentiableKind",
            PerceptionError::InvalidHyper(_) => "InvalidHyper",
            PerceptionError::Io(_) => "IoError",
            PerceptionError::Format(_) => "FormatError",
        }
    }
}

/// In-plane offset that generated a sample, kept for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OffsetTruth {
    /// Offset component along the camera's error direction, mm.
    pub q_mm: f64,
    /// Height above the insertion plane, mm.
    pub height_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub observation: Observation,
    pub label: f64,
    pub insertion_id: u32,
    pub camera_index: usize,
    pub offset_truth: OffsetTruth,
}

/// Samples grouped by the insertion that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Camera models the labels were normalized with, indexed by `camera_index`.
    pub cameras: Vec<CameraModel>,
    pub style: ComponentStyle,
}

impl Dataset {
    pub fn new(cameras: Vec<CameraModel>, style: ComponentStyle) -> Self {
        Dataset { samples: Vec::new(), cameras, style }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample indices per insertion id.
    pub fn groups(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut g: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            g.entry(s.insertion_id).or_default().push(i);
        }
        g
    }

    pub fn insertion_ids(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.insertion_id).collect()
    }

    /// Resolution shared by all observations, if any.
    pub fn resolution(&self) -> Option<u32> {
        self.samples.first().map(|s| s.observation.resolution)
    }

    fn filtered(&self, keep: impl Fn(&Sample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            cameras: self.cameras.clone(),
            style: self.style,
        }
    }

    pub fn subset(&self, ids: &BTreeSet<u32>) -> Dataset {
        self.filtered(|s| ids.contains(&s.insertion_id))
    }

    pub fn for_camera(&self, camera_index: usize) -> Dataset {
        self.filtered(|s| s.camera_index == camera_index)
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Checks resolutions and camera indices, and that each label agrees
    /// with its stored offset truth. Returns the largest label deviation.
    pub fn validate(&self) -> Result<f64, PerceptionError> {
        let Some(r) = self.resolution() else {
            return Err(PerceptionError::EmptyDataset);
        };
        let mut worst: f64 = 0.0;
        for s in &self.samples {
            let n = r as usize * r as usize;
            if s.observation.resolution != r || s.observation.pixels.len() != n {
                return Err(PerceptionError::ShapeMismatch { expected: n, got: s.observation.pixels.len() });
            }
            let cam = self.cameras.get(s.camera_index).ok_or_else(|| {
                PerceptionError::Format(format!("camera index {} out of range", s.camera_index))
            })?;
            worst = worst.max((normalize_error(s.offset_truth.q_mm, cam) - s.label).abs());
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    /// Mean absolute error in mm, denormalized with each sample's camera.
    pub mae_mm_at_nominal: f64,
}

pub fn evaluate<R: Rng + ?Sized>(model: &RegressorModel, data: &Dataset, rng: &mut R) -> Result<Metrics, PerceptionError> {
    if data.is_empty() {
        return Err(PerceptionError::EmptyDataset);
    }
    let (mut se, mut ae, mut ae_mm) = (0.0, 0.0, 0.0);
    for s in &data.samples {
        let pred = model.predict(&s.observation, rng)?;
        let d = pred - s.label;
        se += d * d;
        ae += d.abs();
        let cam = data
            .cameras
            .get(s.camera_index)
            .ok_or_else(|| PerceptionError::Format(format!("camera index {} out of range", s.camera_index)))?;
        ae_mm += denormalize_error(d, cam).abs();
    }
    let n = data.len() as f64;
    Ok(Metrics { mse: se / n, mae: ae / n, mae_mm_at_nominal: ae_mm / n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use crate::sim::{new_world, render, WorldConfig};

    pub(crate) fn tiny_dataset(n_insertions: u32, per: usize) -> Dataset {
        let w = new_world(WorldConfig::default()).unwrap();
        let mut d = Dataset::new(w.cameras.clone(), w.config.component_style);
        let mut rng = seeds::rng(9, &[]);
        for id in 0..n_insertions {
            for _ in 0..per {
                let o = crate::sim::sample_disc(&mut rng, 0.5);
                let tcp = w.nominal_tcp() + w.plane_vector(o);
                let obs = render(&w, 0, &tcp).unwrap();
                let label = obs.true_label;
                let q = denormalize_error(label, &w.cameras[0]);
                d.samples.push(Sample {
                    observation: obs,
                    label,
                    insertion_id: id,
                    camera_index: 0,
                    offset_truth: OffsetTruth { q_mm: q, height_mm: 0.5 },
                });
            }
        }
        d
    }

    #[test]
    fn grouping_and_subsets() {
        let d = tiny_dataset(3, 4);
        let g = d.groups();
        assert_eq!(g.len(), 3);
        assert!(g.values().all(|v| v.len() == 4));
        let ids: BTreeSet<u32> = [0, 2].into_iter().collect();
        assert_eq!(d.subset(&ids).len(), 8);
        assert_eq!(d.for_camera(1).len(), 0);
        assert!(d.validate().unwrap() < 1e-9);
    }

    #[test]
    fn noiseless_oracle_is_exact() {
        let d = tiny_dataset(2, 5);
        let m = RegressorModel::oracle(64, 0.0);
        let mut rng = seeds::rng(0, &[]);
        for s in &d.samples {
            assert_eq!(m.predict(&s.observation, &mut rng).unwrap(), s.label);
        }
        let met = evaluate(&m, &d, &mut rng).unwrap();
        assert_eq!(met.mse, 0.0);
        assert_eq!(met.mae_mm_at_nominal, 0.0);
    }

    #[test]
    fn constant_zero_model_mse_is_second_moment() {
        let d = tiny_dataset(2, 20);
        let m = RegressorModel::constant(64, 0.0);
        let ys = d.labels();
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let met = evaluate(&m, &d, &mut seeds::rng(0, &[])).unwrap();
        assert!((met.mse - (var + mean * mean)).abs() < 1e-9);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let d = Dataset::new(Vec::new(), ComponentStyle::PH);
        let m = RegressorModel::oracle(64, 0.0);
        assert!(matches!(evaluate(&m, &d, &mut seeds::rng(0, &[])), Err(PerceptionError::EmptyDataset)));
    }
}
