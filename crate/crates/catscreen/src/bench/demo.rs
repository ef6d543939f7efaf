//! Self-contained synthetic demos of the uncertainty-aware surrogate:
//! a 1-D regression with a gap in the training support and a 2-D two-cluster
//! classification with far-away probes. Both exercise the distance-sensitive
//! predictive variance without any dataset on disk.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::BenchError;
use crate::upnet::{fit, ModelConfig, PointCloudTensor, Targets, TrainSet};

/// Repeated-row tensor for a scalar input; the demos do not use the mask.
fn tensor_1d(x: f64) -> PointCloudTensor {
    let rows: Vec<DVector<f64>> = (0..4)
        .map(|j| DVector::from_vec(vec![x, 0.25 * j as f64]))
        .collect();
    PointCloudTensor::from_valid_rows(&rows, 4)
}

fn tensor_2d(x: f64, y: f64) -> PointCloudTensor {
    let rows: Vec<DVector<f64>> = (0..4)
        .map(|j| DVector::from_vec(vec![x, y, 0.25 * j as f64]))
        .collect();
    PointCloudTensor::from_valid_rows(&rows, 4)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GridPoint1d {
    pub x: f64,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Regression1dDemo {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub grid: Vec<GridPoint1d>,
    /// RMSE of the posterior mean on the training inputs.
    pub train_rmse: f64,
    /// Mean predictive sigma at the training inputs.
    pub mean_sigma_train: f64,
    /// Mean predictive sigma in the interpolation gap (|x| < 0.25).
    pub mean_sigma_gap: f64,
    /// Mean predictive sigma far outside the data (|x| > 2.5).
    pub mean_sigma_far: f64,
}

impl Regression1dDemo {
    pub fn write_csv(&self, path: &Path) -> Result<(), BenchError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "x,mu,sigma")?;
        for g in &self.grid {
            writeln!(w, "{},{},{}", g.x, g.mu, g.sigma)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fit `y = sin(2.5 x)` on two disjoint intervals and sweep a grid over
/// `[-3, 3]`. A calibrated surrogate fits the supported intervals with a
/// small sigma and inflates sigma in the gap and beyond the data.
pub fn regression_1d(seed: u64) -> Result<Regression1dDemo, BenchError> {
    let mut train_x: Vec<f64> = linspace(-1.5, -0.5, 30);
    train_x.extend(linspace(0.5, 1.5, 30));
    let train_y: Vec<f64> = train_x.iter().map(|x| (2.5 * x).sin()).collect();

    let mut config = ModelConfig::regression_default(2);
    config.n_blocks = 3;
    config.hidden_width = 32;
    config.rff_dim = 256;
    config.rff_scale = 1.5;
    config.obs_noise = Some(1e-3);
    config.training.epochs = 400;
    config.training.learning_rate = 3e-3;
    config.training.seed = seed;

    let train = TrainSet {
        tensors: train_x.iter().map(|&x| tensor_1d(x)).collect(),
        targets: Targets::Regression(train_y.clone()),
    };
    let model = fit(&train, &config)?;

    let mut sq_err = 0.0;
    let mut sigma_train = 0.0;
    for (x, y) in train_x.iter().zip(&train_y) {
        let p = model.predict_regression(&tensor_1d(*x), false)?;
        sq_err += (p.mean - y).powi(2);
        sigma_train += p.variance.sqrt();
    }
    let train_rmse = (sq_err / train_x.len() as f64).sqrt();
    let mean_sigma_train = sigma_train / train_x.len() as f64;

    let mut grid = Vec::new();
    let mut gap = Vec::new();
    let mut far = Vec::new();
    for x in linspace(-3.0, 3.0, 121) {
        let p = model.predict_regression(&tensor_1d(x), false)?;
        let sigma = p.variance.sqrt();
        if x.abs() < 0.25 {
            gap.push(sigma);
        }
        if x.abs() > 2.5 {
            far.push(sigma);
        }
        grid.push(GridPoint1d { x, mu: p.mean, sigma });
    }
    Ok(Regression1dDemo {
        train_x,
        train_y,
        grid,
        train_rmse,
        mean_sigma_train,
        mean_sigma_gap: gap.iter().sum::<f64>() / gap.len() as f64,
        mean_sigma_far: far.iter().sum::<f64>() / far.len() as f64,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbePoint {
    pub x: f64,
    pub y: f64,
    pub p1: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification2dDemo {
    pub train_accuracy: f64,
    /// Mean |p1 - 0.5| on the training points.
    pub mean_train_confidence: f64,
    /// Mean |p1 - 0.5| on the far-away probes.
    pub mean_probe_confidence: f64,
    /// Largest |p1 - 0.5| over the probes.
    pub max_probe_confidence: f64,
    pub median_sigma_train: f64,
    pub median_sigma_probe: f64,
    pub probes: Vec<ProbePoint>,
    pub grid: Vec<ProbePoint>,
}

impl Classification2dDemo {
    pub fn write_csv(&self, path: &Path) -> Result<(), BenchError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "x,y,p1,sigma")?;
        for g in self.grid.iter().chain(&self.probes) {
            writeln!(w, "{},{},{},{}", g.x, g.y, g.p1, g.sigma)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Two well-separated Gaussian clusters plus probes at radius 6. The
/// mean-field probabilities should be confident inside the clusters and
/// collapse toward 0.5 at the probes as the variance grows.
pub fn classification_2d(seed: u64) -> Result<Classification2dDemo, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut classes = Vec::new();
    for (cx, class) in [(-1.5, 0usize), (1.5, 1usize)] {
        for _ in 0..40 {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            points.push((cx + 0.3 * dx, 0.3 * dy));
            classes.push(class);
        }
    }

    let mut config = ModelConfig::classification_default(3);
    config.n_blocks = 3;
    config.hidden_width = 32;
    config.rff_dim = 256;
    config.rff_scale = 1.5;
    config.ridge_prior = 0.02;
    config.training.epochs = 120;
    config.training.learning_rate = 2e-3;
    config.training.seed = seed;

    let train = TrainSet {
        tensors: points.iter().map(|&(x, y)| tensor_2d(x, y)).collect(),
        targets: Targets::Classification(classes.clone()),
    };
    let model = fit(&train, &config)?;

    let median = |values: &mut Vec<f64>| {
        values.sort_by(f64::total_cmp);
        values[values.len() / 2]
    };

    let mut correct = 0usize;
    let mut conf_train = 0.0;
    let mut sigma_train = Vec::new();
    for (&(x, y), &class) in points.iter().zip(&classes) {
        let p = model.predict_class(&tensor_2d(x, y))?;
        if (p.probs[1] > 0.5) == (class == 1) {
            correct += 1;
        }
        conf_train += (p.probs[1] - 0.5).abs();
        sigma_train.push(p.variance.sqrt());
    }

    let mut probes = Vec::new();
    let mut conf_probe = 0.0;
    let mut max_conf_probe: f64 = 0.0;
    let mut sigma_probe = Vec::new();
    let n_probes = 12;
    for k in 0..n_probes {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / n_probes as f64;
        let (x, y) = (6.0 * angle.cos(), 6.0 * angle.sin());
        let p = model.predict_class(&tensor_2d(x, y))?;
        conf_probe += (p.probs[1] - 0.5).abs();
        max_conf_probe = max_conf_probe.max((p.probs[1] - 0.5).abs());
        sigma_probe.push(p.variance.sqrt());
        probes.push(ProbePoint {
            x,
            y,
            p1: p.probs[1],
            sigma: p.variance.sqrt(),
        });
    }

    let mut grid = Vec::new();
    for x in linspace(-3.0, 3.0, 31) {
        for y in linspace(-3.0, 3.0, 31) {
            let p = model.predict_class(&tensor_2d(x, y))?;
            grid.push(ProbePoint {
                x,
                y,
                p1: p.probs[1],
                sigma: p.variance.sqrt(),
            });
        }
    }

    Ok(Classification2dDemo {
        train_accuracy: correct as f64 / points.len() as f64,
        mean_train_confidence: conf_train / points.len() as f64,
        mean_probe_confidence: conf_probe / n_probes as f64,
        max_probe_confidence: max_conf_probe,
        median_sigma_train: median(&mut sigma_train),
        median_sigma_probe: median(&mut sigma_probe),
        probes,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensors_have_expected_shape() {
        let t = tensor_1d(0.7);
        assert_eq!(t.n_valid(), 4);
        assert_eq!(t.matrix.ncols(), 2);
        let t = tensor_2d(0.1, -0.2);
        assert_eq!(t.matrix.ncols(), 3);
    }

    #[test]
    fn linspace_endpoints() {
        let xs = linspace(-3.0, 3.0, 121);
        assert_eq!(xs.len(), 121);
        assert_eq!(xs[0], -3.0);
        assert_eq!(*xs.last().unwrap(), 3.0);
        assert!((xs[60]).abs() < 1e-12);
    }
}
