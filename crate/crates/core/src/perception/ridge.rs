//! Ridge regression along a decreasing regularization path.
//!
//! One eigendecomposition of the Gram matrix (features × features when there
//! are at least as many samples as features, samples × samples otherwise)
//! makes every point on the path cheap. Each path step plays the role of an
//! epoch: the validation loss is monitored and the best step is kept.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::TrainReport;

/// Relative eigenvalue cutoff; smaller components are treated as null space.
const EIGEN_CUTOFF: f64 = 1e-10;
/// The path ends once λ falls this far below the mean eigenvalue.
const LAMBDA_FLOOR: f64 = 1e-12;

pub(super) struct RidgeFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub report: TrainReport,
}

fn mse(pred: &DVector<f64>, offset: f64, y: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    pred.iter().zip(y).map(|(p, t)| (p + offset - t).powi(2)).sum::<f64>() / n
}

/// `x` holds centered training features (one row per sample), `xv` the
/// validation features transformed the same way.
pub(super) fn fit_path(
    x: &DMatrix<f64>,
    y: &[f64],
    xv: &DMatrix<f64>,
    yv: &[f64],
    lambda0: f64,
    max_epochs: usize,
    patience: usize,
) -> RidgeFit {
    let (n, d) = x.shape();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    // For coefficients a(λ) = c / (Λ + λ):
    //   w = wmap · a, train predictions = tmap · a, val predictions = vmap · a.
    let (eig, c, wmap, tmap) = if d <= n {
        let g = x.transpose() * x;
        let e = SymmetricEigen::new(g);
        let v = e.eigenvectors;
        let c = v.transpose() * (x.transpose() * &yc);
        let tmap = x * &v;
        (e.eigenvalues, c, v, tmap)
    } else {
        let k = x * x.transpose();
        let e = SymmetricEigen::new(k);
        let u = e.eigenvectors;
        let c = u.transpose() * &yc;
        let wmap = x.transpose() * &u;
        let mut tmap = u;
        for (j, mut col) in tmap.column_iter_mut().enumerate() {
            col *= e.eigenvalues[j].max(0.0);
        }
        (e.eigenvalues, c, wmap, tmap)
    };
    let vmap = xv * &wmap;

    let max_eig = eig.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<bool> = eig.iter().map(|&l| l > EIGEN_CUTOFF * max_eig).collect();
    let m = keep.iter().filter(|&&k| k).count().max(1);
    let mean_eig = eig.iter().zip(&keep).filter(|(_, &k)| k).map(|(l, _)| *l).sum::<f64>() / m as f64;

    let coeffs = |lambda: f64| {
        DVector::from_iterator(
            eig.len(),
            eig.iter().zip(c.iter()).zip(&keep).map(|((&l, &ci), &k)| if k { ci / (l + lambda) } else { 0.0 }),
        )
    };

    let mut report = TrainReport::default();
    let mut best: Option<(f64, f64)> = None;
    let mut since_best = 0;
    for epoch in 0..max_epochs {
        let lambda = lambda0 * mean_eig * 10f64.powf(-(epoch as f64) / 2.0);
        if mean_eig > 0.0 && lambda < LAMBDA_FLOOR * mean_eig {
            break;
        }
        let a = coeffs(lambda);
        let train_loss = mse(&(&tmap * &a), y_mean, y);
        let val_loss = mse(&(&vmap * &a), y_mean, yv);
        report.train_curve.push(train_loss);
        report.val_curve.push(val_loss);
        report.epochs_run = epoch + 1;
        if best.is_none_or(|(b, _)| val_loss < b) {
            best = Some((val_loss, lambda));
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= patience {
                report.stopped_early = true;
                break;
            }
        }
        if max_eig == 0.0 {
            // No variance in the features: every λ gives the same model.
            break;
        }
    }
    let (best_val, lambda) = best.unwrap_or((f64::INFINITY, lambda0));
    report.best_val_loss = best_val;
    let weights = (&wmap * coeffs(lambda)).iter().copied().collect();
    RidgeFit { weights, bias: y_mean, lambda, report }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    fn centered(rows: &[Vec<f64>], mean: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), mean.len(), |i, j| rows[i][j] - mean[j])
    }

    fn planted(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = seeds::rng(seed, &[]);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let y = rows.iter().map(|r| 0.7 * r[2] - 0.3 * r[d - 1] + 0.05).collect();
        (rows, y)
    }

    fn check(n: usize, d: usize) {
        let (rows, y) = planted(n, d, 1);
        let (vrows, vy) = planted(50, d, 2);
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let fit = fit_path(&centered(&rows, &mean), &y, &centered(&vrows, &mean), &vy, 1.0, 500, 20);
        assert!(fit.report.best_val_loss < 1e-10, "{}", fit.report.best_val_loss);
        assert!((fit.weights[2] - 0.7).abs() < 1e-4);
        let best = fit.report.val_curve.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(best, fit.report.best_val_loss);
    }

    #[test]
    fn primal_recovers_planted_weights() {
        check(200, 10);
    }

    #[test]
    fn dual_recovers_planted_weights() {
        // Underdetermined, but the minimum-norm interpolant still fits the
        // sparse planted model on fresh data only approximately; check the
        // training fit instead.
        let (rows, y) = planted(30, 60, 3);
        let mean: Vec<f64> = (0..60).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 30.0).collect();
        let x = centered(&rows, &mean);
        let fit = fit_path(&x, &y, &x, &y, 1.0, 500, 20);
        assert!(fit.report.best_val_loss < 1e-12, "{}", fit.report.best_val_loss);
    }

    #[test]
    fn constant_target() {
        let (rows, _) = planted(40, 5, 4);
        let y = vec![0.0; 40];
        let mean = vec![0.5; 5];
        let x = centered(&rows, &mean);
        let fit = fit_path(&x, &y, &x, &y, 1.0, 500, 20);
        assert_eq!(fit.bias, 0.0);
        assert!(fit.weights.iter().all(|&w| w == 0.0));
        assert_eq!(fit.report.best_val_loss, 0.0);
        assert!(fit.report.stopped_early);
    }
}
