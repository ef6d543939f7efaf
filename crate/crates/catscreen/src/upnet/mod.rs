//! The uncertainty-aware surrogate: a permutation-invariant per-point
//! residual network with spectral normalization, masked global max pooling,
//! and a random-Fourier-feature Gaussian-process head with a Laplace
//! posterior.
//!
//! Each "convolution" of the original architecture has kernel size 1 by the
//! feature width, which is a shared dense map applied independently to every
//! point; it is implemented as exactly that. The first block changes width,
//! so its identity shortcut is omitted by default (an optional linear
//! projection shortcut is available via [`ModelConfig::first_block_projection`]).

mod checkpoint;
mod network;
mod rff;
mod spectral;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, load_model, save_checkpoint, save_model};
pub use network::{forward_latent, layer_norm, Block, NetGrads, NetParams};
pub use rff::RffLayer;
pub use spectral::{spectral_normalize, PowerIter};
pub use tensor::{encode, PointCloudTensor, Standardizer};
pub use train::{fit, fit_warm, loss_and_grads, Targets, TrainSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UpnetError {
    #[error("element {0} not in schema vocabulary")]
    UnknownElement(String),
    #[error("structure has {n_atoms} atoms, schema allows {max_atoms}")]
    TooManyAtoms { n_atoms: usize, max_atoms: usize },
    #[error("input width {got} does not match model width {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("operation requires the {0:?} head")]
    HeadMismatch(Head),
    #[error("training set is empty or too small (need at least 2 samples)")]
    EmptyDataset,
    #[error("training diverged: non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Output head: one regression target or two-class feasibility logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Regression,
    Classification,
}

impl Head {
    pub fn out_dim(self) -> usize {
        match self {
            Head::Regression => 1,
            Head::Classification => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub head: Head,
    /// Input feature width (schema `feature_width`).
    pub in_width: usize,
    pub n_blocks: usize,
    pub hidden_width: usize,
    /// Upper bound on the spectral norm of every block weight.
    pub spectral_bound: f64,
    /// Power iterations per normalization during training.
    pub power_iterations: usize,
    /// Learn a linear projection shortcut for the width-changing first block.
    pub first_block_projection: bool,
    /// Random-feature dimension of the GP head.
    pub rff_dim: usize,
    pub rff_scale: f64,
    /// Ridge prior precision tau of the Laplace posterior.
    pub ridge_prior: f64,
    /// Observation noise variance for the regression posterior;
    /// `None` uses the training MSE (floored at 1e-6).
    pub obs_noise: Option<f64>,
    pub training: TrainingConfig,
}

impl ModelConfig {
    /// Regression defaults: 5 blocks of width 64, spectral bound 0.95,
    /// lr 1e-5, batch 32, 500 epochs.
    pub fn regression_default(in_width: usize) -> Self {
        Self {
            head: Head::Regression,
            in_width,
            n_blocks: 5,
            hidden_width: 64,
            spectral_bound: 0.95,
            power_iterations: 5,
            first_block_projection: false,
            rff_dim: 1024,
            rff_scale: 1.0,
            ridge_prior: 1.0,
            obs_noise: None,
            training: TrainingConfig {
                learning_rate: 1e-5,
                batch_size: 32,
                epochs: 500,
                seed: 0,
            },
        }
    }

    /// Classification defaults: as regression but 300 epochs.
    pub fn classification_default(in_width: usize) -> Self {
        let mut c = Self::regression_default(in_width);
        c.head = Head::Classification;
        c.training.epochs = 300;
        c
    }

    pub fn validate(&self) -> Result<(), UpnetError> {
        if self.n_blocks == 0 {
            return Err(UpnetError::InvalidConfig("n_blocks must be >= 1".into()));
        }
        if self.in_width == 0 || self.hidden_width == 0 {
            return Err(UpnetError::InvalidConfig("zero width".into()));
        }
        if !(self.spectral_bound > 0.0 && self.spectral_bound <= 1.0) {
            return Err(UpnetError::InvalidConfig(
                "spectral_bound must lie in (0, 1]".into(),
            ));
        }
        if self.rff_dim < self.hidden_width {
            return Err(UpnetError::InvalidConfig(
                "rff_dim must be >= hidden_width".into(),
            ));
        }
        if self.training.epochs == 0 {
            return Err(UpnetError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.training.batch_size == 0 {
            return Err(UpnetError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.ridge_prior <= 0.0 {
            return Err(UpnetError::InvalidConfig("ridge_prior must be > 0".into()));
        }
        Ok(())
    }
}

/// Regression prediction with posterior variance and the pooled latent.
#[derive(Debug, Clone)]
pub struct RegressionPrediction {
    pub mean: f64,
    pub variance: f64,
    pub latent: DVector<f64>,
}

/// Classification prediction: mean-field probabilities, per-logit means,
/// mean per-logit variance, and the pooled latent.
#[derive(Debug, Clone)]
pub struct ClassPrediction {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    pub variance: f64,
    pub latent: DVector<f64>,
}

/// A trained surrogate. Immutable after `fit`; prediction is pure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub config: ModelConfig,
    pub standardizer: Standardizer,
    pub net: NetParams,
    pub rff: RffLayer,
    /// Posterior mean of the GP head weights, `rff_dim x out_dim`.
    pub beta: DMatrix<f64>,
    /// Laplace posterior precision, `rff_dim x rff_dim`.
    pub precision: DMatrix<f64>,
    /// Cached lower Cholesky factor of `precision`.
    pub chol_lower: DMatrix<f64>,
    /// Resolved observation noise variance (regression head).
    pub obs_noise_var: f64,
}

impl SurrogateModel {
    fn check_shape(&self, x: &PointCloudTensor) -> Result<(), UpnetError> {
        if x.matrix.ncols() != self.config.in_width {
            return Err(UpnetError::ShapeMismatch {
                expected: self.config.in_width,
                got: x.matrix.ncols(),
            });
        }
        Ok(())
    }

    /// Standardized valid rows of an input tensor.
    fn input_rows(&self, x: &PointCloudTensor) -> Vec<DVector<f64>> {
        x.valid_rows()
            .map(|r| self.standardizer.apply_row(&r))
            .collect()
    }

    /// Pooled latent after the residual block stack and masked max pooling.
    pub fn forward_features(&self, x: &PointCloudTensor) -> Result<DVector<f64>, UpnetError> {
        self.check_shape(x)?;
        let rows = self.input_rows(x);
        let (latent, _) = forward_latent(&self.net, &rows);
        Ok(latent)
    }

    /// Alias for [`forward_features`](Self::forward_features); the exported
    /// per-candidate feature vector.
    pub fn latent(&self, x: &PointCloudTensor) -> Result<DVector<f64>, UpnetError> {
        self.forward_features(x)
    }

    /// GP-head features of an input: (pooled latent, random Fourier features).
    pub fn gp_features(
        &self,
        x: &PointCloudTensor,
    ) -> Result<(DVector<f64>, DVector<f64>), UpnetError> {
        let latent = self.forward_features(x)?;
        let (z, _) = layer_norm(&latent);
        let (phi, _) = self.rff.embed(&z);
        Ok((latent, phi))
    }

    /// Posterior variance of the latent GP at features `phi`, via the
    /// Cholesky factor of the precision.
    pub fn gp_variance(&self, phi: &DVector<f64>) -> f64 {
        let y = forward_substitute(&self.chol_lower, phi);
        y.dot(&y).max(0.0)
    }

    pub fn predict_regression(
        &self,
        x: &PointCloudTensor,
        include_noise: bool,
    ) -> Result<RegressionPrediction, UpnetError> {
        if self.config.head != Head::Regression {
            return Err(UpnetError::HeadMismatch(Head::Regression));
        }
        let (latent, phi) = self.gp_features(x)?;
        let mean = self.beta.column(0).dot(&phi);
        let mut variance = self.gp_variance(&phi);
        if include_noise {
            variance += self.obs_noise_var;
        }
        Ok(RegressionPrediction {
            mean,
            variance,
            latent,
        })
    }

    pub fn predict_class(&self, x: &PointCloudTensor) -> Result<ClassPrediction, UpnetError> {
        if self.config.head != Head::Classification {
            return Err(UpnetError::HeadMismatch(Head::Classification));
        }
        let (latent, phi) = self.gp_features(x)?;
        let logits: Vec<f64> = (0..self.beta.ncols())
            .map(|k| self.beta.column(k).dot(&phi))
            .collect();
        // Per-logit variance: shared quadratic form (cross-logit covariance
        // is ignored, matching the per-logit mean-field adjustment).
        let var = self.gp_variance(&phi);
        let vars = vec![var; logits.len()];
        let probs = mean_field_probs(&logits, &vars);
        Ok(ClassPrediction {
            probs,
            logits,
            variance: var,
            latent,
        })
    }
}

/// Mean-field adjusted softmax of Gaussian logits: each logit mean is scaled
/// by `1/sqrt(1 + (pi/8) * variance)` before the softmax.
pub fn mean_field_probs(means: &[f64], variances: &[f64]) -> Vec<f64> {
    assert_eq!(means.len(), variances.len());
    let scaled: Vec<f64> = means
        .iter()
        .zip(variances)
        .map(|(&m, &v)| m / (1.0 + std::f64::consts::FRAC_PI_8 * v).sqrt())
        .collect();
    softmax(&scaled)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Solve `L y = b` for lower-triangular `L`.
pub(crate) fn forward_substitute(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * y[j];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solve `L^T x = b` for lower-triangular `L`.
pub(crate) fn back_substitute(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve `P x = b` given the lower Cholesky factor of `P`.
pub(crate) fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    back_substitute(l, &forward_substitute(l, b))
}
