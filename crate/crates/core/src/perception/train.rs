use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{max_gradient_deviation, Adam, Mlp};
use super::ridge::fit_path;
use super::{Dataset, FeatureMap, InputSpec, ModelKind, PerceptionError, Provenance, RegressorModel};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainKind {
    #[default]
    Ridge,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub kind: TrainKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Ridge: start of the regularization path, relative to the mean
    /// eigenvalue of the Gram matrix. Each epoch divides λ by √10.
    pub lambda: f64,
    pub seed: u64,
    pub feature_map: FeatureMap,
    /// Hidden layer widths of the perceptron.
    pub hidden: Vec<usize>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            kind: TrainKind::Ridge,
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 500,
            patience: 20,
            lambda: 1.0,
            seed: 0,
            feature_map: FeatureMap::default(),
            hidden: vec![128, 128],
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let bad = |m: &str| Err(PerceptionError::InvalidHyper(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must have at least one unit");
        }
        if let FeatureMap::ContrastChannels { threshold } = self.feature_map {
            if !(threshold >= 0.0 && threshold.is_finite()) {
                return bad("feature threshold must be non-negative");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    pub stopped_early: bool,
}

fn check_disjoint(train: &Dataset, val: &Dataset) -> Result<(BTreeSet<u32>, BTreeSet<u32>), PerceptionError> {
    let t = train.insertion_ids();
    let v = val.insertion_ids();
    if let Some(&id) = t.intersection(&v).next() {
        return Err(PerceptionError::LeakedInsertion(id));
    }
    Ok((t, v))
}

fn raw_features(data: &Dataset, fm: FeatureMap, r: u32) -> Result<Vec<Vec<f64>>, PerceptionError> {
    let n = r as usize * r as usize;
    data.samples
        .iter()
        .map(|s| {
            if s.observation.resolution != r || s.observation.pixels.len() != n {
                return Err(PerceptionError::ShapeMismatch { expected: n, got: s.observation.pixels.len() });
            }
            Ok(fm.apply(&s.observation.pixels))
        })
        .collect()
}

fn standardize(rows: &mut [Vec<f64>], spec: &InputSpec) {
    for r in rows {
        for (v, m) in r.iter_mut().zip(&spec.mean) {
            *v = (*v - m) / spec.scale;
        }
    }
}

fn single_camera(data: &Dataset) -> Option<usize> {
    let first = data.samples.first()?.camera_index;
    data.samples.iter().all(|s| s.camera_index == first).then_some(first)
}

/// Fits a regressor on `train`, monitoring `val` for early stopping. The
/// returned model holds the parameters of the best validation epoch.
pub fn train(train: &Dataset, val: &Dataset, hyper: &TrainHyper) -> Result<(RegressorModel, TrainReport), PerceptionError> {
    hyper.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(PerceptionError::EmptyDataset);
    }
    let (train_ids, val_ids) = check_disjoint(train, val)?;
    let r = train.resolution().expect("non-empty");

    let mut xs = raw_features(train, hyper.feature_map, r)?;
    let mut xv = raw_features(val, hyper.feature_map, r)?;
    let input = InputSpec::fit(r, hyper.feature_map, &xs);
    standardize(&mut xs, &input);
    standardize(&mut xv, &input);
    let ys = train.labels();
    let yv = val.labels();

    let (kind, report) = match hyper.kind {
        TrainKind::Ridge => {
            let d = input.dim();
            let x = DMatrix::from_fn(xs.len(), d, |i, j| xs[i][j]);
            let v = DMatrix::from_fn(xv.len(), d, |i, j| xv[i][j]);
            drop(xs);
            let fit = fit_path(&x, &ys, &v, &yv, hyper.lambda, hyper.max_epochs, hyper.patience);
            (ModelKind::Ridge { weights: fit.weights, bias: fit.bias, lambda: fit.lambda }, fit.report)
        }
        TrainKind::Mlp => {
            let (mlp, report) = train_mlp(&xs, &ys, &xv, &yv, input.dim(), hyper);
            (ModelKind::Mlp(mlp), report)
        }
    };
    let provenance = Provenance {
        seed: hyper.seed,
        style: Some(train.style),
        camera_index: single_camera(train),
        train_insertions: train_ids.into_iter().collect(),
        val_insertions: val_ids.into_iter().collect(),
        epochs_run: report.epochs_run,
        best_val_loss: Some(report.best_val_loss),
    };
    Ok((RegressorModel { kind, input, provenance }, report))
}

fn train_mlp(xs: &[Vec<f64>], ys: &[f64], xv: &[Vec<f64>], yv: &[f64], d: usize, hyper: &TrainHyper) -> (Mlp, TrainReport) {
    let mut rng = seeds::rng(hyper.seed, &[0x4d4c50]);
    let mut sizes = vec![d];
    sizes.extend(&hyper.hidden);
    sizes.push(1);
    let mut mlp = Mlp::new(sizes, &mut rng);
    let mut opt = Adam::new(mlp.params.len(), hyper.learning_rate);
    let val_refs: Vec<&[f64]> = xv.iter().map(|x| x.as_slice()).collect();

    let mut report = TrainReport { best_val_loss: f64::INFINITY, ..Default::default() };
    let mut best_params = mlp.params.clone();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut since_best = 0;
    for epoch in 0..hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let (loss, grad) = mlp.loss_and_grad(&bx, &by);
            opt.step(&mut mlp.params, &grad);
            epoch_loss += loss * chunk.len() as f64;
        }
        let val_loss = mlp.loss(&val_refs, yv);
        report.train_curve.push(epoch_loss / xs.len() as f64);
        report.val_curve.push(val_loss);
        report.epochs_run = epoch + 1;
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best_params.clone_from(&mlp.params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    mlp.params = best_params;
    (mlp, report)
}

/// Largest relative deviation between analytic and central-difference
/// gradients of the MSE loss on `batch`, over `n_params` random parameters.
pub fn gradient_check(model: &RegressorModel, batch: &Dataset, n_params: usize, seed: u64) -> Result<f64, PerceptionError> {
    let mlp = match &model.kind {
        ModelKind::Mlp(m) => m,
        other => return Err(PerceptionError::NotDifferentiableKind(other.name())),
    };
    if batch.is_empty() {
        return Err(PerceptionError::EmptyDataset);
    }
    let n = model.input.resolution as usize * model.input.resolution as usize;
    let xs: Vec<Vec<f64>> = batch
        .samples
        .iter()
        .map(|s| {
            if s.observation.pixels.len() != n {
                return Err(PerceptionError::ShapeMismatch { expected: n, got: s.observation.pixels.len() });
            }
            Ok(model.input.encode(&s.observation.pixels))
        })
        .collect::<Result<_, _>>()?;
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let mut rng = seeds::rng(seed, &[0x4743]);
    Ok(max_gradient_deviation(mlp, &refs, &batch.labels(), n_params, &mut rng))
}
