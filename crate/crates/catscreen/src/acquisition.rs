//! Expected improvement, its constrained variant, and batch argmax selection
//! over a finite candidate pool.
//!
//! Maximization convention throughout: improvement is measured above the
//! incumbent best observed objective. Minimization problems negate the
//! objective.

use std::collections::HashSet;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("sigma must be nonnegative, got {0}")]
    NegativeSigma(f64),
    #[error("pool has fewer than {wanted} unobserved candidates ({available} left)")]
    PoolExhausted { wanted: usize, available: usize },
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(z / std::f64::consts::SQRT_2))
}

/// Standard normal PDF.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement of a Gaussian predictive `N(mu, sigma^2)` over the
/// incumbent `f_best`. The `sigma = 0` case is the continuous limit
/// `max(mu - f_best, 0)`.
pub fn expected_improvement(mu: f64, sigma: f64, f_best: f64) -> Result<f64, AcquisitionError> {
    if sigma < 0.0 {
        return Err(AcquisitionError::NegativeSigma(sigma));
    }
    let delta = mu - f_best;
    if sigma == 0.0 {
        return Ok(delta.max(0.0));
    }
    let z = delta / sigma;
    Ok((delta * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0))
}

/// Constrained expected improvement: the EI weighted by the predicted
/// probability that the constraint is satisfied.
pub fn constrained_ei(ei: f64, p_feasible: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p_feasible));
    debug_assert!(ei >= 0.0);
    p_feasible * ei
}

/// Audit row for one pool candidate.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateScore {
    pub id: String,
    pub mu: f64,
    pub sigma: f64,
    pub p_feasible: Option<f64>,
    pub ei: f64,
    pub score: f64,
}

/// Deterministic per-candidate tiebreak, a pure function of (seed, id) so
/// that repeated top-1 selection with exclusion equals top-q selection.
fn tiebreak(tie_seed: u64, id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(tie_seed.to_le_bytes());
    hasher.update(id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Top-`q` unobserved candidates by score, descending; ties broken by a
/// seeded uniform draw. Never returns an observed id.
pub fn select_batch(
    pool_scores: &[(String, f64)],
    observed: &HashSet<String>,
    q: usize,
    tie_seed: u64,
) -> Result<Vec<String>, AcquisitionError> {
    let mut candidates: Vec<(&String, f64, u64)> = pool_scores
        .iter()
        .filter(|(id, _)| !observed.contains(id))
        .map(|(id, s)| (id, *s, tiebreak(tie_seed, id)))
        .collect();
    if candidates.len() < q {
        return Err(AcquisitionError::PoolExhausted {
            wanted: q,
            available: candidates.len(),
        });
    }
    candidates.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.2.cmp(&b.2))
            .then(a.0.cmp(b.0))
    });
    Ok(candidates.into_iter().take(q).map(|(id, _, _)| id.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ei_at_incumbent_is_pdf_at_zero() {
        let ei = expected_improvement(0.3, 1.0, 0.3).unwrap();
        assert!((ei - 0.3989422804014327).abs() < 1e-9);
    }

    #[test]
    fn ei_zero_sigma_limit() {
        assert_eq!(expected_improvement(-1.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(expected_improvement(1.5, 0.0, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(matches!(
            expected_improvement(0.0, -0.1, 0.0),
            Err(AcquisitionError::NegativeSigma(_))
        ));
    }

    #[test]
    fn constrained_ei_product() {
        assert_eq!(constrained_ei(0.2, 0.0), 0.0);
        assert_eq!(constrained_ei(0.2, 1.0), 0.2);
        assert!((constrained_ei(0.2, 0.37) - 0.074).abs() < 1e-15);
    }

    #[test]
    fn unique_maximum_selected() {
        let pool = vec![
            ("a".to_string(), 0.1),
            ("b".to_string(), 0.9),
            ("c".to_string(), 0.5),
        ];
        let picked = select_batch(&pool, &HashSet::new(), 1, 0).unwrap();
        assert_eq!(picked, vec!["b"]);
    }

    #[test]
    fn ties_broken_reproducibly() {
        let pool: Vec<(String, f64)> = (0..10).map(|i| (format!("c{i}"), 1.0)).collect();
        let a = select_batch(&pool, &HashSet::new(), 1, 99).unwrap();
        let b = select_batch(&pool, &HashSet::new(), 1, 99).unwrap();
        assert_eq!(a, b);
        // a different seed should (eventually) break ties differently
        let picks: HashSet<_> = (0..20)
            .map(|s| select_batch(&pool, &HashSet::new(), 1, s).unwrap()[0].clone())
            .collect();
        assert!(picks.len() > 1);
    }

    #[test]
    fn observed_never_selected() {
        let pool = vec![("a".to_string(), 1.0), ("b".to_string(), 0.0)];
        let observed: HashSet<String> = ["a".to_string()].into();
        let picked = select_batch(&pool, &observed, 1, 0).unwrap();
        assert_eq!(picked, vec!["b"]);
    }

    #[test]
    fn pool_exhaustion_reported() {
        let pool = vec![("a".to_string(), 1.0)];
        assert!(matches!(
            select_batch(&pool, &HashSet::new(), 2, 0),
            Err(AcquisitionError::PoolExhausted { wanted: 2, available: 1 })
        ));
    }

    #[test]
    fn top_q_equals_repeated_top_one() {
        // brute-force equivalence oracle on a 50-candidate pool with ties
        let mut pool = Vec::new();
        for i in 0..50 {
            pool.push((format!("c{i:02}"), (i % 7) as f64));
        }
        let seed = 1234;
        let top5 = select_batch(&pool, &HashSet::new(), 5, seed).unwrap();
        let mut observed = HashSet::new();
        let mut sequential = Vec::new();
        for _ in 0..5 {
            let pick = select_batch(&pool, &observed, 1, seed).unwrap().remove(0);
            observed.insert(pick.clone());
            sequential.push(pick);
        }
        assert_eq!(top5, sequential);
    }

    proptest! {
        #[test]
        fn ei_dominates_zero_sigma_and_grows_with_sigma(
            mu in -5.0..5.0f64,
            f_best in -5.0..5.0f64,
            s1 in 0.0..3.0f64,
            ds in 0.0..3.0f64,
        ) {
            let lo = expected_improvement(mu, s1, f_best).unwrap();
            let hi = expected_improvement(mu, s1 + ds, f_best).unwrap();
            prop_assert!(lo >= (mu - f_best).max(0.0) - 1e-12);
            prop_assert!(hi >= lo - 1e-12);
        }

        #[test]
        fn ei_translation_equivariant(
            mu in -5.0..5.0f64,
            sigma in 0.0..3.0f64,
            f_best in -5.0..5.0f64,
            shift in -10.0..10.0f64,
        ) {
            let a = expected_improvement(mu, sigma, f_best).unwrap();
            let b = expected_improvement(mu + shift, sigma, f_best + shift).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn constrained_never_exceeds_plain(
            ei in 0.0..10.0f64,
            p in 0.0..1.0f64,
        ) {
            prop_assert!(constrained_ei(ei, p) <= ei);
        }

        #[test]
        fn batch_disjoint_from_observed(q in 1usize..5) {
            let pool: Vec<(String, f64)> = (0..12).map(|i| (format!("c{i}"), (i * 13 % 5) as f64)).collect();
            let observed: HashSet<String> = ["c1".to_string(), "c4".to_string()].into();
            let picked = select_batch(&pool, &observed, q, 7).unwrap();
            let set: HashSet<_> = picked.iter().cloned().collect();
            prop_assert_eq!(set.len(), picked.len());
            prop_assert!(set.is_disjoint(&observed));
        }
    }
}
