//! Random Fourier features: a frozen cosine expansion whose inner products
//! approximate a Gaussian kernel over the latent space.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffLayer {
    /// Frozen Gaussian draws, `rff_dim x hidden_width`.
    pub w: DMatrix<f64>,
    /// Frozen uniform phases in `[0, 2pi)`.
    pub b: DVector<f64>,
    /// Inverse-lengthscale multiplier on the projection.
    pub scale: f64,
}

impl RffLayer {
    pub fn init<R: Rng>(rff_dim: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let w = DMatrix::from_fn(rff_dim, hidden, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DVector::from_fn(rff_dim, |_, _| rng.gen::<f64>() * std::f64::consts::TAU);
        Self { w, b, scale }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// `phi = sqrt(2/D) * cos(scale * W z + b)`. Also returns the cosine
    /// argument for backprop.
    pub fn embed(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let u = (&self.w * z) * self.scale + &self.b;
        let amp = (2.0 / self.dim() as f64).sqrt();
        let phi = u.map(|v| amp * v.cos());
        (phi, u)
    }

    /// Gradient of `dot(d_phi, phi)` with respect to `z`.
    pub fn backward(&self, u: &DVector<f64>, d_phi: &DVector<f64>) -> DVector<f64> {
        let amp = (2.0 / self.dim() as f64).sqrt();
        let du = d_phi.zip_map(u, |g, ui| -amp * ui.sin() * g);
        self.w.transpose() * du * self.scale
    }
}
