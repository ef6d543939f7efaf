//! The screening campaign: initial design, per-iteration retraining of the
//! surrogates, pool scoring, batch selection, label revelation, and stopping.
//!
//! Label revelation is a table lookup against the pre-labeled pool, which
//! stands in for the expensive simulation oracle and keeps campaigns
//! dataset-driven and desk-scale.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acquisition::{constrained_ei, expected_improvement, select_batch, AcquisitionError};
use crate::bench::{compute_metrics, MetricEntry};
use crate::data::{Dataset, FeatureSchema, Labels};
use crate::upnet::{
    encode, fit_warm, ModelConfig, PointCloudTensor, SurrogateModel, Targets, TrainSet, UpnetError,
};
use crate::volcano::LabelRule;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("pool is empty")]
    EmptyPool,
    #[error("candidate {0} has no labels; the campaign needs a fully labeled pool")]
    MissingLabels(String),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Surrogate(#[from] UpnetError),
    #[error(transparent)]
    Encode(#[from] crate::data::DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ConstrainedBo,
    UnconstrainedBo,
    RandomSearch,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::ConstrainedBo => "cbo",
            Mode::UnconstrainedBo => "bo",
            Mode::RandomSearch => "random",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cbo" | "constrained" => Ok(Mode::ConstrainedBo),
            "bo" | "unconstrained" => Ok(Mode::UnconstrainedBo),
            "random" => Ok(Mode::RandomSearch),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Which incumbent feeds the expected improvement in constrained mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncumbentRule {
    /// Best observed objective among constraint-satisfying points
    /// (falls back to the global best before any feasible observation).
    FeasibleBest,
    /// Best observed objective overall.
    GlobalBest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub mode: Mode,
    /// Total iterations.
    pub budget: usize,
    /// Samples revealed per iteration.
    pub q: usize,
    /// Drives per-iteration training, tie-breaking, and random picks.
    pub seed: u64,
    /// Drives the initial design only, so different campaign seeds can share
    /// the same initial samples.
    pub init_seed: u64,
    pub rule: LabelRule,
    pub incumbent: IncumbentRule,
    /// Reuse the previous iteration's weights instead of retraining from
    /// scratch.
    pub warm_start: bool,
    pub regression: ModelConfig,
    pub classification: ModelConfig,
}

impl CampaignConfig {
    pub fn new(mode: Mode, in_width: usize) -> Self {
        Self {
            mode,
            budget: 80,
            q: 1,
            seed: 0,
            init_seed: 0,
            rule: LabelRule::default(),
            incumbent: IncumbentRule::FeasibleBest,
            warm_start: false,
            regression: ModelConfig::regression_default(in_width),
            classification: ModelConfig::classification_default(in_width),
        }
    }
}

/// A fully labeled, pre-encoded candidate pool.
#[derive(Debug, Clone)]
pub struct Pool {
    pub ids: Vec<String>,
    pub compositions: Vec<String>,
    pub tensors: Vec<PointCloudTensor>,
    pub labels: Vec<Labels>,
}

impl Pool {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Encode every structure of a labeled dataset against `schema`.
    /// Feasibility is recomputed from `rule` so the pool and the campaign
    /// always agree on the threshold.
    pub fn from_dataset(
        dataset: &Dataset,
        schema: &FeatureSchema,
        rule: &LabelRule,
    ) -> Result<Self, CampaignError> {
        if dataset.is_empty() {
            return Err(CampaignError::EmptyPool);
        }
        let mut ids = Vec::new();
        let mut compositions = Vec::new();
        let mut tensors = Vec::new();
        let mut labels = Vec::new();
        for s in &dataset.structures {
            let l = dataset
                .labels
                .get(&s.id)
                .ok_or_else(|| CampaignError::MissingLabels(s.id.clone()))?;
            ids.push(s.id.clone());
            compositions.push(s.composition.clone());
            tensors.push(encode(s, schema)?);
            labels.push(Labels {
                feasible: l.selectivity >= rule.selectivity_threshold,
                ..*l
            });
        }
        Ok(Self {
            ids,
            compositions,
            tensors,
            labels,
        })
    }

    fn index_of(&self, id: &str) -> usize {
        self.ids.iter().position(|i| i == id).expect("id in pool")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Observation {
    pub id: String,
    pub activity: f64,
    pub selectivity: f64,
    pub feasible: bool,
    /// 0 for the initial design, 1.. for campaign iterations.
    pub iteration: usize,
}

#[derive(Debug, Clone, Default)]
pub struct CampaignState {
    pub observed: Vec<Observation>,
    pub observed_ids: HashSet<String>,
    /// Best feasible activity so far.
    pub incumbent: Option<f64>,
    pub iteration: usize,
    regression_model: Option<SurrogateModel>,
    classification_model: Option<SurrogateModel>,
}

impl CampaignState {
    fn reveal(&mut self, pool: &Pool, id: &str, iteration: usize) {
        let idx = pool.index_of(id);
        let l = &pool.labels[idx];
        self.observed.push(Observation {
            id: id.to_string(),
            activity: l.activity,
            selectivity: l.selectivity,
            feasible: l.feasible,
            iteration,
        });
        self.observed_ids.insert(id.to_string());
        if l.feasible {
            self.incumbent = Some(match self.incumbent {
                Some(cur) => cur.max(l.activity),
                None => l.activity,
            });
        }
    }

    fn best_overall(&self) -> Option<f64> {
        self.observed
            .iter()
            .map(|o| o.activity)
            .max_by(f64::total_cmp)
    }

    /// Regression surrogate from the most recent iteration, if any.
    pub fn regression_model(&self) -> Option<&SurrogateModel> {
        self.regression_model.as_ref()
    }

    /// Feasibility classifier from the most recent iteration, if any.
    pub fn classification_model(&self) -> Option<&SurrogateModel> {
        self.classification_model.as_ref()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectedRecord {
    pub id: String,
    pub activity: f64,
    pub selectivity: f64,
    pub feasible: bool,
    /// Acquisition score (or NaN for random picks).
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub selected: Vec<SelectedRecord>,
    pub incumbent: Option<f64>,
    pub metrics: MetricEntry,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignHistory {
    pub mode: Mode,
    pub init_ids: Vec<String>,
    pub iterations: Vec<IterationRecord>,
    /// Instrumentation: number of classifier trainings over the campaign.
    pub classifier_trainings: usize,
}

impl CampaignHistory {
    pub fn final_metrics(&self) -> Option<&MetricEntry> {
        self.iterations.last().map(|r| &r.metrics)
    }

    /// History CSV: one row per selected candidate, metrics repeated per
    /// iteration. Byte-stable for identical campaigns.
    pub fn write_csv(&self, path: &Path) -> Result<(), CampaignError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "iteration,selected_id,activity,selectivity,feasible,score,incumbent,\
             n_solutions_both,n_high_activity,n_high_selectivity,top10_avg_product"
        )?;
        for rec in &self.iterations {
            for s in &rec.selected {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    rec.iteration,
                    s.id,
                    s.activity,
                    s.selectivity,
                    s.feasible as u8,
                    s.score,
                    rec.incumbent.map_or(String::new(), |v| v.to_string()),
                    rec.metrics.n_solutions_both,
                    rec.metrics.n_high_activity,
                    rec.metrics.n_high_selectivity,
                    rec.metrics.top10_avg_product,
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Deterministic sub-seed for one purpose within one iteration.
fn sub_seed(seed: u64, iteration: usize, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((iteration as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Initial design: one structure, chosen uniformly at random, from every
/// composition represented by strictly more than 10 structures.
pub fn init_design(pool: &Pool, init_seed: u64) -> Result<Vec<String>, CampaignError> {
    if pool.is_empty() {
        return Err(CampaignError::EmptyPool);
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, comp) in pool.compositions.iter().enumerate() {
        groups.entry(comp).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut picked = Vec::new();
    for (_, members) in groups {
        if members.len() > 10 {
            let &idx = members.choose(&mut rng).expect("non-empty group");
            picked.push(pool.ids[idx].clone());
        }
    }
    Ok(picked)
}

fn unobserved_indices(pool: &Pool, state: &CampaignState) -> Vec<usize> {
    (0..pool.len())
        .filter(|&i| !state.observed_ids.contains(&pool.ids[i]))
        .collect()
}

fn train_set(pool: &Pool, state: &CampaignState, targets: Targets) -> TrainSet {
    let tensors = state
        .observed
        .iter()
        .map(|o| pool.tensors[pool.index_of(&o.id)].clone())
        .collect();
    TrainSet { tensors, targets }
}

/// One campaign iteration: retrain per the mode, score the unobserved pool,
/// select `q` candidates, and reveal their labels.
pub fn step(
    state: &mut CampaignState,
    config: &CampaignConfig,
    pool: &Pool,
    history: &mut CampaignHistory,
) -> Result<(), CampaignError> {
    state.iteration += 1;
    let iter = state.iteration;
    let unobserved = unobserved_indices(pool, state);
    if unobserved.is_empty() {
        return Err(AcquisitionError::PoolExhausted {
            wanted: config.q,
            available: 0,
        }
        .into());
    }
    let q = config.q.min(unobserved.len());

    // Cold start: with fewer than 2 observations no surrogate can be
    // trained, so fall back to random picks.
    let effective_mode = if state.observed.len() < 2 && config.mode != Mode::RandomSearch {
        Mode::RandomSearch
    } else {
        config.mode
    };

    let selected: Vec<(String, f64)> = match effective_mode {
        Mode::RandomSearch => {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, iter, "rand"));
            let mut pool_ids: Vec<&String> = unobserved.iter().map(|&i| &pool.ids[i]).collect();
            pool_ids.shuffle(&mut rng);
            pool_ids
                .into_iter()
                .take(q)
                .map(|id| (id.clone(), f64::NAN))
                .collect()
        }
        Mode::ConstrainedBo | Mode::UnconstrainedBo => {
            let mut reg_config = config.regression.clone();
            reg_config.training.seed = sub_seed(config.seed, iter, "reg");
            let activities: Vec<f64> = state.observed.iter().map(|o| o.activity).collect();
            let reg_model = fit_warm(
                &train_set(pool, state, Targets::Regression(activities)),
                &reg_config,
                config
                    .warm_start
                    .then_some(state.regression_model.as_ref())
                    .flatten(),
            )?;

            let cls_model = if effective_mode == Mode::ConstrainedBo {
                let mut cls_config = config.classification.clone();
                cls_config.training.seed = sub_seed(config.seed, iter, "cls");
                let classes: Vec<usize> =
                    state.observed.iter().map(|o| o.feasible as usize).collect();
                let m = fit_warm(
                    &train_set(pool, state, Targets::Classification(classes)),
                    &cls_config,
                    config
                        .warm_start
                        .then_some(state.classification_model.as_ref())
                        .flatten(),
                )?;
                history.classifier_trainings += 1;
                Some(m)
            } else {
                None
            };

            let f_best = match (effective_mode, config.incumbent) {
                (Mode::ConstrainedBo, IncumbentRule::FeasibleBest) => state
                    .incumbent
                    .or_else(|| state.best_overall())
                    .expect("non-empty observations"),
                _ => state.best_overall().expect("non-empty observations"),
            };

            let mut scores = Vec::with_capacity(unobserved.len());
            for &i in &unobserved {
                let pred = reg_model.predict_regression(&pool.tensors[i], false)?;
                let ei = expected_improvement(pred.mean, pred.variance.sqrt(), f_best)?;
                let score = match &cls_model {
                    Some(cls) => {
                        let p1 = cls.predict_class(&pool.tensors[i])?.probs[1];
                        constrained_ei(ei, p1)
                    }
                    None => ei,
                };
                scores.push((pool.ids[i].clone(), score));
            }
            state.regression_model = Some(reg_model);
            state.classification_model = cls_model;

            let tie_seed = sub_seed(config.seed, iter, "tie");
            let picked = select_batch(&scores, &state.observed_ids, q, tie_seed)?;
            picked
                .into_iter()
                .map(|id| {
                    let score = scores.iter().find(|(i, _)| *i == id).unwrap().1;
                    (id, score)
                })
                .collect()
        }
    };

    let mut records = Vec::with_capacity(selected.len());
    for (id, score) in selected {
        state.reveal(pool, &id, iter);
        let o = state.observed.last().unwrap();
        records.push(SelectedRecord {
            id: o.id.clone(),
            activity: o.activity,
            selectivity: o.selectivity,
            feasible: o.feasible,
            score,
        });
    }
    history.iterations.push(IterationRecord {
        iteration: iter,
        selected: records,
        incumbent: state.incumbent,
        metrics: compute_metrics(&state.observed, &config.rule, false),
    });
    Ok(())
}

/// Run a full campaign: initial design, then `budget` iterations, stopping
/// early if the pool runs dry.
pub fn run(config: &CampaignConfig, pool: &Pool) -> Result<CampaignHistory, CampaignError> {
    run_with_state(config, pool).map(|(h, _)| h)
}

/// Like [`run`], also returning the final state (observations and the last
/// trained surrogates).
pub fn run_with_state(
    config: &CampaignConfig,
    pool: &Pool,
) -> Result<(CampaignHistory, CampaignState), CampaignError> {
    let mut state = CampaignState::default();
    let init_ids = init_design(pool, config.init_seed)?;
    for id in &init_ids {
        state.reveal(pool, id, 0);
    }
    let mut history = CampaignHistory {
        mode: config.mode,
        init_ids,
        iterations: Vec::new(),
        classifier_trainings: 0,
    };
    for _ in 0..config.budget {
        if unobserved_indices(pool, &state).is_empty() {
            break;
        }
        step(&mut state, config, pool, &mut history)?;
    }
    Ok((history, state))
}
