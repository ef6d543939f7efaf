//! Spectral-norm estimation by power iteration and the projection that keeps
//! block weights within the configured bound.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Power-iteration state for one weight matrix. The left iterate is
/// persisted across calls so a single iteration per training step tracks
/// the top singular pair as the weights drift.
#[derive(Debug, Clone)]
pub struct PowerIter {
    u: DVector<f64>,
}

impl PowerIter {
    pub fn new<R: Rng>(rows: usize, rng: &mut R) -> Self {
        let mut u = DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = u.norm();
        if n > 0.0 {
            u /= n;
        } else {
            u[0] = 1.0;
        }
        Self { u }
    }

    /// Estimate the largest singular value of `w` with `iters` power
    /// iterations, updating the persisted iterate. Returns 0 for a zero
    /// matrix.
    pub fn estimate(&mut self, w: &DMatrix<f64>, iters: usize) -> f64 {
        debug_assert_eq!(w.nrows(), self.u.len());
        let mut sigma = 0.0;
        for _ in 0..iters.max(1) {
            let mut v = w.transpose() * &self.u;
            let vn = v.norm();
            if vn == 0.0 {
                return 0.0;
            }
            v /= vn;
            let mut u = w * &v;
            let un = u.norm();
            if un == 0.0 {
                return 0.0;
            }
            u /= un;
            sigma = u.dot(&(w * &v));
            self.u = u;
        }
        sigma
    }

    /// Scale `w` down to spectral norm `c` when the estimate exceeds the
    /// bound; below-bound matrices are left unchanged.
    pub fn normalize(&mut self, w: &mut DMatrix<f64>, c: f64, iters: usize) -> f64 {
        let sigma = self.estimate(w, iters);
        if sigma > c {
            *w *= c / sigma;
            c
        } else {
            sigma
        }
    }
}

/// One-shot spectral normalization with a fresh iterate.
pub fn spectral_normalize(w: &DMatrix<f64>, c: f64, iters: usize) -> DMatrix<f64> {
    assert!(c > 0.0);
    // deterministic start: unit vector along the largest row
    let mut u = DVector::zeros(w.nrows());
    let start = (0..w.nrows())
        .max_by(|&a, &b| w.row(a).norm().total_cmp(&w.row(b).norm()))
        .unwrap_or(0);
    u[start] = 1.0;
    let mut pi = PowerIter { u };
    let mut out = w.clone();
    pi.normalize(&mut out, c, iters);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn svd_sigma_max(w: &DMatrix<f64>) -> f64 {
        w.clone().svd(false, false).singular_values[0]
    }

    #[test]
    fn diagonal_matrix_scaled_to_bound() {
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        let out = spectral_normalize(&w, 0.95, 100);
        assert!((out[(0, 0)] - 0.95).abs() < 1e-9);
        assert!((out[(1, 1)] - 0.2375).abs() < 1e-9);
    }

    #[test]
    fn below_bound_unchanged() {
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.1]));
        let out = spectral_normalize(&w, 0.95, 100);
        assert_eq!(out, w);
    }

    #[test]
    fn zero_matrix_unchanged() {
        let w = DMatrix::zeros(3, 4);
        let out = spectral_normalize(&w, 0.95, 10);
        assert_eq!(out, w);
    }

    #[test]
    fn random_matrix_matches_svd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let w = DMatrix::from_fn(64, 45, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.3);
            let target = svd_sigma_max(&w).min(0.95);
            let out = spectral_normalize(&w, 0.95, 300);
            assert!((svd_sigma_max(&out) - target).abs() < 1e-3);
        }
    }

    #[test]
    fn persisted_iterate_tracks_drifting_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = DMatrix::from_fn(16, 16, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5);
        let mut pi = PowerIter::new(16, &mut rng);
        pi.normalize(&mut w, 0.95, 50);
        for _ in 0..200 {
            // small drift, then a single-iteration renormalization
            for v in w.iter_mut() {
                *v += 0.01 * rng.sample::<f64, _>(StandardNormal);
            }
            pi.normalize(&mut w, 0.95, 1);
        }
        assert!(svd_sigma_max(&w) <= 0.95 + 1e-3);
    }
}
