//! Screening metrics, the repeated-seed experiment harness, the
//! OOD-uncertainty report, and the synthetic demos.
//!
//! Everything here is CSV-first: the harness emits the per-seed and
//! aggregate series behind the screening-efficiency comparisons; plotting is
//! external.

pub mod demo;

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bo::{run, CampaignConfig, CampaignError, CampaignHistory, Observation, Pool};
use crate::upnet::{PointCloudTensor, SurrogateModel, UpnetError};
use crate::volcano::LabelRule;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least 2 seeds, got {0}")]
    TooFewSeeds(usize),
    #[error("campaign with seed {seed} failed: {source}")]
    SeedFailed {
        seed: u64,
        #[source]
        source: CampaignError,
    },
    #[error("set {0} is empty")]
    EmptySet(String),
    #[error("id {0} appears in more than one set")]
    OverlappingSets(String),
    #[error(transparent)]
    Surrogate(#[from] UpnetError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-iteration screening metrics over all observed points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricEntry {
    /// High activity and high selectivity.
    pub n_solutions_both: usize,
    pub n_high_activity: usize,
    pub n_high_selectivity: usize,
    /// Mean of the 10 largest activity-selectivity products observed
    /// (mean over all observed when fewer than 10).
    pub top10_avg_product: f64,
}

/// Metrics over the observed set. `strict_selectivity` counts only
/// selectivity exactly 1 as high; the default interprets "high selectivity"
/// as the feasibility class, since normalized selectivity rarely hits 1.
pub fn compute_metrics(observed: &[Observation], rule: &LabelRule, strict_selectivity: bool) -> MetricEntry {
    let high_sel = |o: &Observation| {
        if strict_selectivity {
            o.selectivity == 1.0
        } else {
            o.feasible
        }
    };
    let high_act = |o: &Observation| o.activity > rule.activity_threshold;
    let mut products: Vec<f64> = observed.iter().map(|o| o.activity * o.selectivity).collect();
    products.sort_by(f64::total_cmp);
    let top: Vec<f64> = products.into_iter().rev().take(10).collect();
    let top10_avg_product = if top.is_empty() {
        0.0
    } else {
        top.iter().sum::<f64>() / top.len() as f64
    };
    MetricEntry {
        n_solutions_both: observed.iter().filter(|o| high_act(o) && high_sel(o)).count(),
        n_high_activity: observed.iter().filter(|o| high_act(o)).count(),
        n_high_selectivity: observed.iter().filter(|o| high_sel(o)).count(),
        top10_avg_product,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateEntry {
    pub mean: f64,
    /// 2.5th empirical percentile across seeds.
    pub lo: f64,
    /// 97.5th empirical percentile across seeds.
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub n_solutions_both: AggregateEntry,
    pub n_high_activity: AggregateEntry,
    pub n_high_selectivity: AggregateEntry,
    pub top10_avg_product: AggregateEntry,
}

#[derive(Debug, Clone)]
pub struct AggregateResult {
    pub n_seeds: usize,
    /// One entry per iteration, truncated to the shortest run.
    pub iterations: Vec<AggregateMetrics>,
    pub per_seed: Vec<CampaignHistory>,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn aggregate_entry(values: &[f64]) -> AggregateEntry {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    AggregateEntry {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        lo: percentile(&sorted, 0.025),
        hi: percentile(&sorted, 0.975),
    }
}

/// Fold per-seed histories into per-iteration means and 95% percentile
/// bounds. Permutation-invariant over the histories.
pub fn aggregate(histories: &[CampaignHistory]) -> AggregateResult {
    let min_len = histories.iter().map(|h| h.iterations.len()).min().unwrap_or(0);
    let mut iterations = Vec::with_capacity(min_len);
    for t in 0..min_len {
        let col = |f: &dyn Fn(&MetricEntry) -> f64| -> Vec<f64> {
            histories.iter().map(|h| f(&h.iterations[t].metrics)).collect()
        };
        iterations.push(AggregateMetrics {
            n_solutions_both: aggregate_entry(&col(&|m| m.n_solutions_both as f64)),
            n_high_activity: aggregate_entry(&col(&|m| m.n_high_activity as f64)),
            n_high_selectivity: aggregate_entry(&col(&|m| m.n_high_selectivity as f64)),
            top10_avg_product: aggregate_entry(&col(&|m| m.top10_avg_product)),
        });
    }
    AggregateResult {
        n_seeds: histories.len(),
        iterations,
        per_seed: histories.to_vec(),
    }
}

/// Run `n_seeds` campaigns with seeds `base+0..n_seeds-1` and a shared
/// initial design (the config's `init_seed` is held fixed), then aggregate.
/// Seeds run in parallel; a failed seed aborts with its seed reported.
pub fn repeat_runs(
    config: &CampaignConfig,
    pool: &Pool,
    n_seeds: usize,
) -> Result<AggregateResult, BenchError> {
    if n_seeds < 2 {
        return Err(BenchError::TooFewSeeds(n_seeds));
    }
    let histories: Vec<CampaignHistory> = (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            let mut c = config.clone();
            c.seed = config.seed + i as u64;
            run(&c, pool).map_err(|source| BenchError::SeedFailed {
                seed: c.seed,
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(aggregate(&histories))
}

impl AggregateResult {
    /// One CSV per metric panel: iteration, mean, lo, hi.
    pub fn write_csv(&self, dir: &Path, prefix: &str) -> Result<(), BenchError> {
        let panels: [(&str, &dyn Fn(&AggregateMetrics) -> AggregateEntry); 4] = [
            ("n_solutions_both", &|m| m.n_solutions_both),
            ("n_high_activity", &|m| m.n_high_activity),
            ("n_high_selectivity", &|m| m.n_high_selectivity),
            ("top10_avg_product", &|m| m.top10_avg_product),
        ];
        for (name, get) in panels {
            let mut w = std::io::BufWriter::new(std::fs::File::create(
                dir.join(format!("{prefix}_{name}.csv")),
            )?);
            writeln!(w, "iteration,mean,lo,hi")?;
            for (t, m) in self.iterations.iter().enumerate() {
                let e = get(m);
                writeln!(w, "{},{},{},{}", t + 1, e.mean, e.lo, e.hi)?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

/// One named set of candidates for the OOD report.
pub struct OodSet<'a> {
    pub name: &'a str,
    pub ids: Vec<String>,
    pub tensors: Vec<&'a PointCloudTensor>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SetSummary {
    pub name: String,
    pub n: usize,
    pub median_sigma: f64,
    pub q25_sigma: f64,
    pub q75_sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OodReport {
    pub sets: Vec<SetSummary>,
}

impl OodReport {
    pub fn summary(&self, name: &str) -> Option<&SetSummary> {
        self.sets.iter().find(|s| s.name == name)
    }
}

/// Predictive-sigma distributions per set, with an optional CSV export of
/// per-point `(id, set, sigma, latent...)` rows for external embedding.
/// The sets must partition their ids (no id in two sets).
pub fn ood_report(
    model: &SurrogateModel,
    sets: &[OodSet<'_>],
    csv: Option<&Path>,
) -> Result<OodReport, BenchError> {
    let mut seen = HashSet::new();
    for s in sets {
        if s.tensors.is_empty() {
            return Err(BenchError::EmptySet(s.name.to_string()));
        }
        for id in &s.ids {
            if !seen.insert(id.clone()) {
                return Err(BenchError::OverlappingSets(id.clone()));
            }
        }
    }
    let mut writer = match csv {
        Some(path) => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            let width = model.config.hidden_width;
            let latent_cols: Vec<String> = (0..width).map(|i| format!("latent_{i}")).collect();
            writeln!(w, "id,set,sigma,{}", latent_cols.join(","))?;
            Some(w)
        }
        None => None,
    };
    let mut summaries = Vec::new();
    for s in sets {
        let mut sigmas = Vec::with_capacity(s.tensors.len());
        for (id, t) in s.ids.iter().zip(&s.tensors) {
            let (latent, phi) = model.gp_features(t)?;
            let sigma = model.gp_variance(&phi).sqrt();
            sigmas.push(sigma);
            if let Some(w) = writer.as_mut() {
                let latent_str: Vec<String> = latent.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{},{},{},{}", id, s.name, sigma, latent_str.join(","))?;
            }
        }
        sigmas.sort_by(f64::total_cmp);
        summaries.push(SetSummary {
            name: s.name.to_string(),
            n: sigmas.len(),
            median_sigma: percentile(&sigmas, 0.5),
            q25_sigma: percentile(&sigmas, 0.25),
            q75_sigma: percentile(&sigmas, 0.75),
        });
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    Ok(OodReport { sets: summaries })
}

/// Partition a pool the way the latent-space study does: compositions with
/// more than 25 structures become training data (one structure per such
/// composition held out as in-distribution test), and single-structure
/// compositions are the out-of-distribution set.
pub fn ood_partition(pool: &Pool) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, comp) in pool.compositions.iter().enumerate() {
        groups.entry(comp).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut in_test = Vec::new();
    let mut ood = Vec::new();
    for (_, members) in groups {
        if members.len() > 25 {
            in_test.push(members[0]);
            train.extend(&members[1..]);
        } else if members.len() == 1 {
            ood.push(members[0]);
        }
    }
    (train, in_test, ood)
}

/// Synthetic labeled pool for end-to-end screening comparisons: 25
/// compositions of 20 candidates each, a latent 2-D parameter per candidate
/// encoded (with jitter) into the point rows, a smooth activity peak, and a
/// feasible disk covering roughly 15% of the pool that only partially
/// overlaps the peak.
pub fn synthetic_pool(seed: u64) -> Pool {
    use nalgebra::DVector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigmoid = |u: f64| 1.0 / (1.0 + (-u).exp());
    let mut pool = Pool {
        ids: Vec::new(),
        compositions: Vec::new(),
        tensors: Vec::new(),
        labels: Vec::new(),
    };
    for i in 0..500usize {
        let theta = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let rows: Vec<DVector<f64>> = (0..5)
            .map(|j| {
                DVector::from_vec(vec![
                    theta.0 + 0.01 * rng.gen_range(-1.0..1.0),
                    theta.1 + 0.01 * rng.gen_range(-1.0..1.0),
                    0.25 * j as f64,
                ])
            })
            .collect();
        let d2_peak = (theta.0 - 0.55).powi(2) + (theta.1 - 0.55).powi(2);
        let activity = (-d2_peak / 0.8).exp();
        let r_feas = ((theta.0 - 0.25).powi(2) + (theta.1 - 0.25).powi(2)).sqrt();
        let selectivity = sigmoid((0.62 - r_feas) / 0.08);
        pool.ids.push(format!("syn{i:03}"));
        pool.compositions.push(format!("comp{:02}", i / 20));
        pool.tensors.push(PointCloudTensor::from_valid_rows(&rows, 8));
        pool.labels.push(crate::data::Labels {
            activity,
            selectivity,
            feasible: selectivity >= 0.9,
        });
    }
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(activity: f64, selectivity: f64, feasible: bool) -> Observation {
        Observation {
            id: format!("o{activity}-{selectivity}"),
            activity,
            selectivity,
            feasible,
            iteration: 1,
        }
    }

    #[test]
    fn counts_empty_when_no_high_activity() {
        let observed = vec![obs(0.5, 0.95, true), obs(0.7, 0.2, false)];
        let m = compute_metrics(&observed, &LabelRule::default(), false);
        assert_eq!(m.n_solutions_both, 0);
        assert_eq!(m.n_high_activity, 0);
        assert_eq!(m.n_high_selectivity, 1);
    }

    #[test]
    fn top10_matches_sort_oracle() {
        let observed: Vec<Observation> = (0..12)
            .map(|i| {
                let a = (i as f64 * 7.3) % 1.0;
                let s = (i as f64 * 3.1) % 1.0;
                obs(a, s, false)
            })
            .collect();
        let m = compute_metrics(&observed, &LabelRule::default(), false);
        let mut products: Vec<f64> = observed.iter().map(|o| o.activity * o.selectivity).collect();
        products.sort_by(|a, b| b.total_cmp(a));
        let oracle = products[..10].iter().sum::<f64>() / 10.0;
        assert_eq!(m.top10_avg_product, oracle);
    }

    #[test]
    fn ideal_product_is_one() {
        let observed: Vec<Observation> = (0..11).map(|_| obs(1.0, 1.0, true)).collect();
        let m = compute_metrics(&observed, &LabelRule::default(), false);
        assert_eq!(m.top10_avg_product, 1.0);
    }

    #[test]
    fn strict_selectivity_mode() {
        let observed = vec![obs(0.9, 1.0, true), obs(0.9, 0.95, true)];
        let strict = compute_metrics(&observed, &LabelRule::default(), true);
        let class = compute_metrics(&observed, &LabelRule::default(), false);
        assert_eq!(strict.n_high_selectivity, 1);
        assert_eq!(class.n_high_selectivity, 2);
    }

    #[test]
    fn fewer_than_ten_uses_all() {
        let observed = vec![obs(0.5, 0.5, false), obs(1.0, 1.0, true)];
        let m = compute_metrics(&observed, &LabelRule::default(), false);
        assert_eq!(m.top10_avg_product, (0.25 + 1.0) / 2.0);
    }

    #[test]
    fn synthetic_pool_shape_and_feasible_fraction() {
        let pool = synthetic_pool(0);
        assert_eq!(pool.len(), 500);
        let feasible = pool.labels.iter().filter(|l| l.feasible).count();
        assert!((40..=120).contains(&feasible), "feasible = {feasible}");
        let both = pool
            .labels
            .iter()
            .filter(|l| l.feasible && l.activity > 0.85)
            .count();
        assert!(both >= 5, "both-criteria candidates = {both}");
        let comps: std::collections::HashSet<_> = pool.compositions.iter().collect();
        assert_eq!(comps.len(), 25);
    }

    #[test]
    fn percentile_bounds_contain_mean() {
        let e = aggregate_entry(&[1.0, 2.0, 3.0, 10.0]);
        assert!(e.lo <= e.mean && e.mean <= e.hi);
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let vals = [3.0, 1.0, 4.0, 1.5, 9.0];
        let mut rev = vals;
        rev.reverse();
        assert_eq!(aggregate_entry(&vals), aggregate_entry(&rev));
    }
}
