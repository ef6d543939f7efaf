//! Training: Adam over minibatches with a spectral-norm projection after
//! every update, then a single Laplace pass that turns the trained network
//! into a Gaussian-process head with closed-form predictive variance.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::network::{backward_latent, forward_latent, layer_norm, layer_norm_backward, NetGrads, NetParams};
use super::rff::RffLayer;
use super::spectral::PowerIter;
use super::tensor::{PointCloudTensor, Standardizer};
use super::{softmax, Head, ModelConfig, SurrogateModel, UpnetError};

#[derive(Debug, Clone)]
pub enum Targets {
    Regression(Vec<f64>),
    Classification(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(v) => v.len(),
            Targets::Classification(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn head(&self) -> Head {
        match self {
            Targets::Regression(_) => Head::Regression,
            Targets::Classification(_) => Head::Classification,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSet {
    pub tensors: Vec<PointCloudTensor>,
    pub targets: Targets,
}

/// Mean loss and gradients over `indices`. Regression uses squared error,
/// classification uses softmax cross entropy. Exposed so independent
/// finite-difference oracles can probe the analytic gradients.
pub fn loss_and_grads(
    net: &NetParams,
    rff: &RffLayer,
    beta: &DMatrix<f64>,
    samples: &[Vec<DVector<f64>>],
    targets: &Targets,
    indices: &[usize],
) -> (f64, NetGrads, DMatrix<f64>) {
    let scale = 1.0 / indices.len() as f64;
    let mut loss = 0.0;
    let mut net_grads = NetGrads::zeros_like(net);
    let mut beta_grad = DMatrix::zeros(beta.nrows(), beta.ncols());

    for &i in indices {
        let (latent, cache) = forward_latent(net, &samples[i]);
        let (z, ln_cache) = layer_norm(&latent);
        let (phi, u) = rff.embed(&z);
        let out: Vec<f64> = (0..beta.ncols()).map(|k| beta.column(k).dot(&phi)).collect();

        let d_out: Vec<f64> = match targets {
            Targets::Regression(ys) => {
                let err = out[0] - ys[i];
                loss += scale * err * err;
                vec![scale * 2.0 * err]
            }
            Targets::Classification(ys) => {
                let p = softmax(&out);
                loss += -scale * p[ys[i]].max(1e-300).ln();
                p.iter()
                    .enumerate()
                    .map(|(k, &pk)| scale * (pk - if k == ys[i] { 1.0 } else { 0.0 }))
                    .collect()
            }
        };

        let mut d_phi = DVector::zeros(phi.len());
        for (k, &g) in d_out.iter().enumerate() {
            beta_grad.column_mut(k).axpy(g, &phi, 1.0);
            d_phi.axpy(g, &beta.column(k).clone_owned(), 1.0);
        }
        let dz = rff.backward(&u, &d_phi);
        let dg = layer_norm_backward(&ln_cache, &dz);
        backward_latent(net, &cache, &dg, &mut net_grads);
    }
    (loss, net_grads, beta_grad)
}

struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Train a surrogate on labeled tensors. Deterministic for a given seed:
/// the seed controls weight init, the RFF draws, and minibatch shuffling.
pub fn fit(train: &TrainSet, config: &ModelConfig) -> Result<SurrogateModel, UpnetError> {
    fit_warm(train, config, None)
}

/// Like [`fit`], but optionally starting from the weights, RFF draws, and
/// head of a previously trained model instead of a fresh init.
pub fn fit_warm(
    train: &TrainSet,
    config: &ModelConfig,
    warm: Option<&SurrogateModel>,
) -> Result<SurrogateModel, UpnetError> {
    config.validate()?;
    let n = train.tensors.len();
    if n < 2 {
        return Err(UpnetError::EmptyDataset);
    }
    if train.targets.len() != n {
        return Err(UpnetError::InvalidConfig(format!(
            "{} tensors but {} targets",
            n,
            train.targets.len()
        )));
    }
    if train.targets.head() != config.head {
        return Err(UpnetError::HeadMismatch(config.head));
    }
    if let Targets::Classification(ys) = &train.targets {
        if ys.iter().any(|&y| y > 1) {
            return Err(UpnetError::InvalidConfig("class labels must be 0 or 1".into()));
        }
    }
    for t in &train.tensors {
        if t.matrix.ncols() != config.in_width {
            return Err(UpnetError::ShapeMismatch {
                expected: config.in_width,
                got: t.matrix.ncols(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.training.seed);
    let standardizer = Standardizer::fit(&train.tensors);
    let samples: Vec<Vec<DVector<f64>>> = train
        .tensors
        .iter()
        .map(|t| t.valid_rows().map(|r| standardizer.apply_row(&r)).collect())
        .collect();

    let out_dim = config.head.out_dim();
    let (mut net, rff, mut beta) = match warm {
        Some(prev) => {
            if prev.config.head != config.head
                || prev.config.in_width != config.in_width
                || prev.config.hidden_width != config.hidden_width
                || prev.config.n_blocks != config.n_blocks
                || prev.config.rff_dim != config.rff_dim
            {
                return Err(UpnetError::InvalidConfig(
                    "warm-start model shape does not match config".into(),
                ));
            }
            (prev.net.clone(), prev.rff.clone(), prev.beta.clone())
        }
        None => {
            let net = NetParams::init(
                config.n_blocks,
                config.in_width,
                config.hidden_width,
                config.first_block_projection,
                &mut rng,
            );
            let rff =
                RffLayer::init(config.rff_dim, config.hidden_width, config.rff_scale, &mut rng);
            let beta = DMatrix::from_fn(config.rff_dim, out_dim, |_, _| {
                0.05 * rng.sample::<f64, _>(StandardNormal)
            });
            (net, rff, beta)
        }
    };

    let mut block_iters: Vec<PowerIter> = net
        .blocks
        .iter()
        .map(|_| PowerIter::new(config.hidden_width, &mut rng))
        .collect();
    let mut proj_iter = net
        .proj
        .as_ref()
        .map(|_| PowerIter::new(config.hidden_width, &mut rng));

    let c = config.spectral_bound;
    let normalize_all = |net: &mut NetParams,
                             block_iters: &mut Vec<PowerIter>,
                             proj_iter: &mut Option<PowerIter>,
                             iters: usize| {
        for (block, pi) in net.blocks.iter_mut().zip(block_iters.iter_mut()) {
            pi.normalize(&mut block.w, c, iters);
        }
        if let (Some(p), Some(pi)) = (net.proj.as_mut(), proj_iter.as_mut()) {
            pi.normalize(p, c, iters);
        }
    };
    normalize_all(&mut net, &mut block_iters, &mut proj_iter, 30);

    let mut sizes: Vec<usize> = Vec::new();
    for b in &net.blocks {
        sizes.push(b.w.len());
        sizes.push(b.b.len());
    }
    if let Some(p) = &net.proj {
        sizes.push(p.len());
    }
    sizes.push(beta.len());
    let mut adam = AdamState::new(config.training.learning_rate, &sizes);

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.training.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.training.batch_size) {
            let (loss, ngrads, bgrad) =
                loss_and_grads(&net, &rff, &beta, &samples, &train.targets, chunk);
            if !loss.is_finite() {
                return Err(UpnetError::NonFiniteLoss(epoch));
            }
            let mut params: Vec<&mut [f64]> = Vec::new();
            let mut grads: Vec<&[f64]> = Vec::new();
            for (b, g) in net.blocks.iter_mut().zip(&ngrads.blocks) {
                params.push(b.w.as_mut_slice());
                grads.push(g.w.as_slice());
                params.push(b.b.as_mut_slice());
                grads.push(g.b.as_slice());
            }
            if let (Some(p), Some(g)) = (net.proj.as_mut(), ngrads.proj.as_ref()) {
                params.push(p.as_mut_slice());
                grads.push(g.as_slice());
            }
            params.push(beta.as_mut_slice());
            grads.push(bgrad.as_slice());
            adam.step(params, grads);

            normalize_all(&mut net, &mut block_iters, &mut proj_iter, config.power_iterations);
        }
        // guard against power-iteration drift
        normalize_all(&mut net, &mut block_iters, &mut proj_iter, 30);
    }

    // Laplace pass over the training set with the final weights.
    let phis: Vec<DVector<f64>> = samples
        .iter()
        .map(|rows| {
            let (latent, _) = forward_latent(&net, rows);
            let (z, _) = layer_norm(&latent);
            rff.embed(&z).0
        })
        .collect();

    let d = config.rff_dim;
    let tau = config.ridge_prior;
    let mut precision = DMatrix::identity(d, d) * tau;
    let mut obs_noise_var = 0.0;
    match &train.targets {
        Targets::Regression(ys) => {
            let mse = phis
                .iter()
                .zip(ys)
                .map(|(phi, &y)| {
                    let e = beta.column(0).dot(phi) - y;
                    e * e
                })
                .sum::<f64>()
                / n as f64;
            obs_noise_var = config.obs_noise.unwrap_or(mse.max(1e-6));
            let inv_noise = 1.0 / obs_noise_var;
            let mut rhs = DVector::zeros(d);
            for (phi, &y) in phis.iter().zip(ys) {
                precision.ger(inv_noise, phi, phi, 1.0);
                rhs.axpy(inv_noise * y, phi, 1.0);
            }
            let chol = precision
                .clone()
                .cholesky()
                .ok_or_else(|| UpnetError::Checkpoint("posterior precision not SPD".into()))?;
            let lower = chol.l();
            beta.set_column(0, &super::cholesky_solve(&lower, &rhs));
            return Ok(SurrogateModel {
                config: config.clone(),
                standardizer,
                net,
                rff,
                beta,
                precision,
                chol_lower: lower,
                obs_noise_var,
            });
        }
        Targets::Classification(_) => {
            for phi in &phis {
                let p1 = {
                    let out: Vec<f64> = (0..out_dim).map(|k| beta.column(k).dot(phi)).collect();
                    softmax(&out)[1]
                };
                let w = (p1 * (1.0 - p1)).max(1e-12);
                precision.ger(w, phi, phi, 1.0);
            }
        }
    }
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| UpnetError::Checkpoint("posterior precision not SPD".into()))?;
    let lower = chol.l();
    Ok(SurrogateModel {
        config: config.clone(),
        standardizer,
        net,
        rff,
        beta,
        precision,
        chol_lower: lower,
        obs_noise_var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_tensor(seed: u64, n_rows: usize, width: usize) -> PointCloudTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<DVector<f64>> = (0..n_rows)
            .map(|_| DVector::from_fn(width, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        PointCloudTensor::from_valid_rows(&rows, n_rows + 2)
    }

    fn small_config(head: Head, seed: u64) -> ModelConfig {
        let mut c = match head {
            Head::Regression => ModelConfig::regression_default(4),
            Head::Classification => ModelConfig::classification_default(4),
        };
        c.n_blocks = 2;
        c.hidden_width = 8;
        c.rff_dim = 32;
        c.training.epochs = 30;
        c.training.learning_rate = 1e-2;
        c.training.seed = seed;
        c
    }

    #[test]
    fn constant_labels_are_fit() {
        let tensors: Vec<_> = (0..6).map(|i| tiny_tensor(i, 3, 4)).collect();
        let y0 = 0.4;
        let train = TrainSet {
            tensors: tensors.clone(),
            targets: Targets::Regression(vec![y0; 6]),
        };
        let mut config = small_config(Head::Regression, 1);
        config.training.epochs = 200;
        let model = fit(&train, &config).unwrap();
        for t in &tensors {
            let p = model.predict_regression(t, false).unwrap();
            assert!((p.mean - y0).abs() < 0.05, "mean {} vs {}", p.mean, y0);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let tensors: Vec<_> = (0..5).map(|i| tiny_tensor(i + 10, 3, 4)).collect();
        let train = TrainSet {
            tensors,
            targets: Targets::Regression(vec![0.1, 0.9, 0.4, 0.6, 0.2]),
        };
        let config = small_config(Head::Regression, 7);
        let a = fit(&train, &config).unwrap();
        let b = fit(&train, &config).unwrap();
        assert_eq!(a.beta, b.beta);
        for (x, y) in a.net.blocks.iter().zip(&b.net.blocks) {
            assert_eq!(x.w, y.w);
            assert_eq!(x.b, y.b);
        }
        assert_eq!(a.precision, b.precision);
    }

    #[test]
    fn empty_or_tiny_dataset_rejected() {
        let train = TrainSet {
            tensors: vec![tiny_tensor(0, 2, 4)],
            targets: Targets::Regression(vec![0.5]),
        };
        let config = small_config(Head::Regression, 1);
        assert!(matches!(fit(&train, &config), Err(UpnetError::EmptyDataset)));
    }

    #[test]
    fn head_mismatch_rejected() {
        let train = TrainSet {
            tensors: (0..4).map(|i| tiny_tensor(i, 2, 4)).collect(),
            targets: Targets::Classification(vec![0, 1, 0, 1]),
        };
        let config = small_config(Head::Regression, 1);
        assert!(matches!(
            fit(&train, &config),
            Err(UpnetError::HeadMismatch(_))
        ));
    }

    #[test]
    fn classification_learns_separable_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut tensors = Vec::new();
        let mut ys = Vec::new();
        for i in 0..40 {
            let offset = if i % 2 == 0 { 2.0 } else { -2.0 };
            let rows: Vec<DVector<f64>> = (0..3)
                .map(|_| {
                    DVector::from_fn(4, |_, _| offset + 0.3 * rng.sample::<f64, _>(StandardNormal))
                })
                .collect();
            tensors.push(PointCloudTensor::from_valid_rows(&rows, 5));
            ys.push(if i % 2 == 0 { 1usize } else { 0 });
        }
        let train = TrainSet {
            tensors: tensors.clone(),
            targets: Targets::Classification(ys.clone()),
        };
        let mut config = small_config(Head::Classification, 3);
        config.training.epochs = 150;
        let model = fit(&train, &config).unwrap();
        let correct = tensors
            .iter()
            .zip(&ys)
            .filter(|(t, &y)| {
                let p = model.predict_class(t).unwrap();
                (p.probs[1] > 0.5) == (y == 1)
            })
            .count();
        assert!(correct >= 36, "only {correct}/40 correct");
    }

    #[test]
    fn posterior_precision_is_spd_with_tau_floor() {
        let train = TrainSet {
            tensors: (0..5).map(|i| tiny_tensor(i, 3, 4)).collect(),
            targets: Targets::Regression(vec![0.1, 0.2, 0.3, 0.4, 0.5]),
        };
        let config = small_config(Head::Regression, 5);
        let model = fit(&train, &config).unwrap();
        let p = &model.precision;
        assert!((p - p.transpose()).norm() < 1e-9);
        let eig = p.clone().symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e >= config.ridge_prior - 1e-6));
    }
}
