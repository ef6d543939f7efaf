//! Per-point residual block stack, masked global max pooling, and the
//! layer normalization feeding the GP head, with exact backpropagation.
//!
//! Every valid row is pushed through the same affine maps. The first block
//! maps the input width to the hidden width (no identity shortcut unless a
//! projection is configured); later blocks apply `h <- relu(W h + b) + h`.
//! The pooled latent is the per-dimension max over valid rows, which makes
//! the whole stack exactly permutation invariant and keeps padded rows inert.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    /// `blocks[0]` is `hidden x in`; the rest are `hidden x hidden`.
    pub blocks: Vec<Block>,
    /// Optional projection shortcut for the width-changing first block.
    pub proj: Option<DMatrix<f64>>,
}

impl NetParams {
    pub fn init<R: Rng>(
        n_blocks: usize,
        in_width: usize,
        hidden: usize,
        projection: bool,
        rng: &mut R,
    ) -> Self {
        let he = |fan_in: usize, rng: &mut R| (2.0 / fan_in as f64).sqrt() * rng.sample::<f64, _>(StandardNormal);
        let mut blocks = Vec::with_capacity(n_blocks);
        for l in 0..n_blocks {
            let fan_in = if l == 0 { in_width } else { hidden };
            blocks.push(Block {
                w: DMatrix::from_fn(hidden, fan_in, |_, _| he(fan_in, rng)),
                b: DVector::zeros(hidden),
            });
        }
        let proj = projection
            .then(|| DMatrix::from_fn(hidden, in_width, |_, _| he(in_width, rng)));
        Self { blocks, proj }
    }

    pub fn hidden_width(&self) -> usize {
        self.blocks[0].w.nrows()
    }
}

/// Gradients with the same shapes as [`NetParams`].
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub blocks: Vec<Block>,
    pub proj: Option<DMatrix<f64>>,
}

impl NetGrads {
    pub fn zeros_like(p: &NetParams) -> Self {
        Self {
            blocks: p
                .blocks
                .iter()
                .map(|b| Block {
                    w: DMatrix::zeros(b.w.nrows(), b.w.ncols()),
                    b: DVector::zeros(b.b.len()),
                })
                .collect(),
            proj: p
                .proj
                .as_ref()
                .map(|p| DMatrix::zeros(p.nrows(), p.ncols())),
        }
    }
}

struct RowCache {
    /// Standardized input row.
    x: DVector<f64>,
    /// Pre-activations per layer.
    pre: Vec<DVector<f64>>,
    /// Post-residual activations per layer.
    h: Vec<DVector<f64>>,
}

pub struct ForwardCache {
    rows: Vec<RowCache>,
    /// For each latent dimension, the row index that won the max pool.
    argmax: Vec<usize>,
}

/// Forward pass over the valid (already standardized) rows of one sample.
/// Returns the pooled latent and the cache needed for backprop.
pub fn forward_latent(params: &NetParams, rows: &[DVector<f64>]) -> (DVector<f64>, ForwardCache) {
    assert!(!rows.is_empty(), "tensor must have at least one valid row");
    let hidden = params.hidden_width();
    let n_layers = params.blocks.len();
    let mut caches = Vec::with_capacity(rows.len());
    let mut latent = DVector::from_element(hidden, f64::NEG_INFINITY);
    let mut argmax = vec![0usize; hidden];

    for (ri, x) in rows.iter().enumerate() {
        let mut pre = Vec::with_capacity(n_layers);
        let mut hs = Vec::with_capacity(n_layers);
        let a0 = &params.blocks[0].w * x + &params.blocks[0].b;
        let mut h = a0.map(|v| v.max(0.0));
        if let Some(p) = &params.proj {
            h += p * x;
        }
        pre.push(a0);
        hs.push(h.clone());
        for block in &params.blocks[1..] {
            let a = &block.w * &h + &block.b;
            let r = a.map(|v| v.max(0.0));
            h = r + &h;
            pre.push(a);
            hs.push(h.clone());
        }
        for d in 0..hidden {
            if h[d] > latent[d] {
                latent[d] = h[d];
                argmax[d] = ri;
            }
        }
        caches.push(RowCache {
            x: x.clone(),
            pre,
            h: hs,
        });
    }
    (latent, ForwardCache { rows: caches, argmax })
}

/// Backpropagate `d_latent` through max pooling and the block stack,
/// accumulating into `grads`.
pub fn backward_latent(params: &NetParams, cache: &ForwardCache, d_latent: &DVector<f64>, grads: &mut NetGrads) {
    let hidden = params.hidden_width();
    let n_layers = params.blocks.len();
    // route pooled gradient to the winning rows
    let mut d_rows: Vec<Option<DVector<f64>>> = vec![None; cache.rows.len()];
    for d in 0..hidden {
        if d_latent[d] != 0.0 {
            let ri = cache.argmax[d];
            let slot = d_rows[ri].get_or_insert_with(|| DVector::zeros(hidden));
            slot[d] += d_latent[d];
        }
    }
    for (ri, dh_top) in d_rows.into_iter().enumerate() {
        let Some(mut dh) = dh_top else { continue };
        let rc = &cache.rows[ri];
        for l in (1..n_layers).rev() {
            let da = dh.zip_map(&rc.pre[l], |g, a| if a > 0.0 { g } else { 0.0 });
            grads.blocks[l].w += &da * rc.h[l - 1].transpose();
            grads.blocks[l].b += &da;
            // residual shortcut passes dh through unchanged
            dh += params.blocks[l].w.transpose() * &da;
        }
        let da = dh.zip_map(&rc.pre[0], |g, a| if a > 0.0 { g } else { 0.0 });
        grads.blocks[0].w += &da * rc.x.transpose();
        grads.blocks[0].b += &da;
        if let Some(gp) = &mut grads.proj {
            *gp += &dh * rc.x.transpose();
        }
    }
}

const LN_EPS: f64 = 1e-6;

pub struct LayerNormCache {
    pub z: DVector<f64>,
    pub inv_std: f64,
}

/// Per-sample layer normalization of the pooled latent (no learned affine).
/// Keeps the GP-head input at a data-independent scale.
pub fn layer_norm(g: &DVector<f64>) -> (DVector<f64>, LayerNormCache) {
    let n = g.len() as f64;
    let mean = g.mean();
    let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let z = g.map(|v| (v - mean) * inv_std);
    (z.clone(), LayerNormCache { z, inv_std })
}

pub fn layer_norm_backward(cache: &LayerNormCache, dz: &DVector<f64>) -> DVector<f64> {
    let n = dz.len() as f64;
    let mean_dz = dz.mean();
    let mean_dz_z = dz.dot(&cache.z) / n;
    DVector::from_fn(dz.len(), |i, _| {
        cache.inv_std * (dz[i] - mean_dz - cache.z[i] * mean_dz_z)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, width: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| DVector::from_fn(width, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    #[test]
    fn duplicate_rows_do_not_change_latent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = NetParams::init(3, 6, 8, false, &mut rng);
        let rows = random_rows(4, 6, 2);
        let (latent, _) = forward_latent(&params, &rows);
        let mut dup = rows.clone();
        dup.push(rows[1].clone());
        let (latent_dup, _) = forward_latent(&params, &dup);
        assert_eq!(latent, latent_dup);
    }

    #[test]
    fn row_permutation_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = NetParams::init(4, 5, 8, false, &mut rng);
        let rows = random_rows(6, 5, 9);
        let (latent, _) = forward_latent(&params, &rows);
        let mut perm = rows;
        perm.reverse();
        perm.swap(1, 3);
        let (latent_p, _) = forward_latent(&params, &perm);
        assert_eq!(latent, latent_p);
    }

    #[test]
    fn single_row_matches_reference_stack() {
        // reference forward-pass oracle: scalar loops, no shared code paths
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = NetParams::init(3, 4, 5, false, &mut rng);
        let x = random_rows(1, 4, 3).pop().unwrap();

        let relu = |v: f64| if v > 0.0 { v } else { 0.0 };
        let mut h = vec![0.0f64; 5];
        for i in 0..5 {
            let mut a = params.blocks[0].b[i];
            for j in 0..4 {
                a += params.blocks[0].w[(i, j)] * x[j];
            }
            h[i] = relu(a);
        }
        for block in &params.blocks[1..] {
            let mut next = h.clone();
            for i in 0..5 {
                let mut a = block.b[i];
                for j in 0..5 {
                    a += block.w[(i, j)] * h[j];
                }
                next[i] = relu(a) + h[i];
            }
            h = next;
        }

        let (latent, _) = forward_latent(&params, &[x]);
        for i in 0..5 {
            assert!((latent[i] - h[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let g = DVector::from_vec(vec![1.0, 4.0, -3.0, 2.0, 0.5]);
        let (z, _) = layer_norm(&g);
        assert!(z.mean().abs() < 1e-12);
        let var = z.iter().map(|v| v * v).sum::<f64>() / 5.0;
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dz = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (_, cache) = layer_norm(&g);
        let dg = layer_norm_backward(&cache, &dz);
        let eps = 1e-6;
        for i in 0..6 {
            let mut gp = g.clone();
            gp[i] += eps;
            let mut gm = g.clone();
            gm[i] -= eps;
            let (zp, _) = layer_norm(&gp);
            let (zm, _) = layer_norm(&gm);
            let fd = (dz.dot(&zp) - dz.dot(&zm)) / (2.0 * eps);
            assert!((dg[i] - fd).abs() < 1e-6, "dim {i}: {} vs {}", dg[i], fd);
        }
    }
}
