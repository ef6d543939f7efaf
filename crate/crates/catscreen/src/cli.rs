//! The `catscreen` command line: one binary, one subcommand per pipeline
//! stage, and a single TOML config file shared by all of them.
//!
//! Precedence for every setting is CLI flag > config file > built-in
//! default. The config file path comes from `--config` or the
//! `CATSCREEN_CONFIG` environment variable. Every subcommand that produces
//! an output directory writes a `manifest.json` there recording the tool
//! version, the fully resolved configuration, the dataset content hash, and
//! the seeds, so a run can be reproduced bit-for-bit from the manifest
//! alone (given the same build).

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{demo, ood_partition, ood_report, repeat_runs, synthetic_pool, OodSet};
use crate::bo::{run_with_state, CampaignConfig, IncumbentRule, Mode, Pool};
use crate::data::{
    build_schema, load_dataset, parse_property_table, write_dataset, Dataset, ExternalFormat,
    FeatureSchema, BUNDLED_PROPERTY_TABLE, DEFAULT_MAX_ATOMS,
};
use crate::upnet::{
    encode, fit, load_checkpoint, save_checkpoint, Head, ModelConfig, SurrogateModel, Targets,
    TrainSet,
};
use crate::volcano::{label, LabelRule, VolcanoMap};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "CATSCREEN_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "catscreen", version = crate::VERSION, about = "Pool-based catalyst screening with an uncertainty-aware surrogate")]
pub struct Cli {
    /// TOML config file; CLI flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert an external dump into the canonical dataset format.
    Convert {
        /// Source format tag (currently `gaspy-jsonl`).
        #[arg(long = "from")]
        from: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Attach activity/selectivity labels from volcano map files.
    Label {
        /// Directory holding `activity.json` and `selectivity.json`;
        /// bundled maps are used when omitted.
        #[arg(long)]
        maps: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Train one surrogate head on a labeled dataset.
    Train {
        /// `reg` (activity regression) or `cls` (feasibility classifier).
        #[arg(long)]
        head: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict over a dataset with a trained checkpoint.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Run one screening campaign.
    Screen {
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        init_seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long = "out")]
        out_dir: PathBuf,
    },
    /// Repeated-seed mode comparison with aggregate CSVs.
    Bench {
        /// Comma-separated list, e.g. `cbo,bo,random`.
        #[arg(long, default_value = "cbo,bo,random")]
        modes: String,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        /// Use the built-in 500-candidate synthetic pool instead of a dataset.
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long = "out")]
        out_dir: PathBuf,
    },
    /// Uncertainty report over the composition-based OOD partition.
    OodReport {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long = "out")]
        out_dir: PathBuf,
    },
    /// Synthetic uncertainty demos.
    Demo {
        /// `reg1d` or `cls2d`.
        #[arg(long)]
        task: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "out")]
        out_dir: PathBuf,
    },
}

/// Partial settings from the TOML config file; anything absent falls back
/// to the built-in defaults.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub label: LabelOverrides,
    #[serde(default)]
    pub regression: ModelOverrides,
    #[serde(default)]
    pub classification: ModelOverrides,
    #[serde(default)]
    pub campaign: CampaignOverrides,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelOverrides {
    pub selectivity_threshold: Option<f64>,
    pub activity_threshold: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub n_blocks: Option<usize>,
    pub hidden_width: Option<usize>,
    pub spectral_bound: Option<f64>,
    pub power_iterations: Option<usize>,
    pub first_block_projection: Option<bool>,
    pub rff_dim: Option<usize>,
    pub rff_scale: Option<f64>,
    pub ridge_prior: Option<f64>,
    pub obs_noise: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignOverrides {
    pub budget: Option<usize>,
    pub q: Option<usize>,
    pub seed: Option<u64>,
    pub init_seed: Option<u64>,
    /// `feasible_best` or `global_best`.
    pub incumbent: Option<String>,
    pub warm_start: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn label_rule(&self) -> LabelRule {
        let mut rule = LabelRule::default();
        if let Some(v) = self.label.selectivity_threshold {
            rule.selectivity_threshold = v;
        }
        if let Some(v) = self.label.activity_threshold {
            rule.activity_threshold = v;
        }
        rule
    }
}

impl ModelOverrides {
    pub fn apply(&self, config: &mut ModelConfig) {
        if let Some(v) = self.n_blocks {
            config.n_blocks = v;
        }
        if let Some(v) = self.hidden_width {
            config.hidden_width = v;
        }
        if let Some(v) = self.spectral_bound {
            config.spectral_bound = v;
        }
        if let Some(v) = self.power_iterations {
            config.power_iterations = v;
        }
        if let Some(v) = self.first_block_projection {
            config.first_block_projection = v;
        }
        if let Some(v) = self.rff_dim {
            config.rff_dim = v;
        }
        if let Some(v) = self.rff_scale {
            config.rff_scale = v;
        }
        if let Some(v) = self.ridge_prior {
            config.ridge_prior = v;
        }
        if let Some(v) = self.obs_noise {
            config.obs_noise = Some(v);
        }
        if let Some(v) = self.learning_rate {
            config.training.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            config.training.batch_size = v;
        }
        if let Some(v) = self.epochs {
            config.training.epochs = v;
        }
    }
}

impl CampaignOverrides {
    fn apply(&self, config: &mut CampaignConfig) -> anyhow::Result<()> {
        if let Some(v) = self.budget {
            config.budget = v;
        }
        if let Some(v) = self.q {
            config.q = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.init_seed {
            config.init_seed = v;
        }
        if let Some(v) = &self.incumbent {
            config.incumbent = match v.as_str() {
                "feasible_best" => IncumbentRule::FeasibleBest,
                "global_best" => IncumbentRule::GlobalBest,
                other => bail!("unknown incumbent rule {other:?}"),
            };
        }
        if let Some(v) = self.warm_start {
            config.warm_start = v;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct RunManifest {
    version: String,
    subcommand: String,
    config: serde_json::Value,
    dataset_sha256: Option<String>,
    seeds: Vec<u64>,
    started: String,
    finished: Option<String>,
    complete: bool,
}

impl RunManifest {
    fn new(subcommand: &str, config: serde_json::Value, dataset_sha256: Option<String>, seeds: Vec<u64>) -> Self {
        Self {
            version: crate::VERSION.to_string(),
            subcommand: subcommand.to_string(),
            config,
            dataset_sha256,
            seeds,
            started: chrono::Utc::now().to_rfc3339(),
            finished: None,
            complete: false,
        }
    }

    fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    fn finalize(mut self, dir: &Path) -> anyhow::Result<()> {
        self.finished = Some(chrono::Utc::now().to_rfc3339());
        self.complete = true;
        self.write(dir)
    }
}

fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn load_file_config(cli_path: &Option<PathBuf>) -> anyhow::Result<FileConfig> {
    let path = cli_path
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    match path {
        Some(p) => FileConfig::load(&p),
        None => Ok(FileConfig::default()),
    }
}

fn load_labeled_pool(
    data: &Path,
    rule: &LabelRule,
) -> anyhow::Result<(Dataset, FeatureSchema, Pool)> {
    let dataset = load_dataset(data, DEFAULT_MAX_ATOMS)?;
    let table = parse_property_table(BUNDLED_PROPERTY_TABLE)?;
    let schema = build_schema(&dataset, &table, DEFAULT_MAX_ATOMS)?;
    let pool = Pool::from_dataset(&dataset, &schema, rule)?;
    Ok((dataset, schema, pool))
}

fn campaign_config(
    mode: Mode,
    in_width: usize,
    file: &FileConfig,
    budget: Option<usize>,
    q: Option<usize>,
    seed: Option<u64>,
    init_seed: Option<u64>,
    epochs: Option<usize>,
) -> anyhow::Result<CampaignConfig> {
    let mut config = CampaignConfig::new(mode, in_width);
    config.rule = file.label_rule();
    file.regression.apply(&mut config.regression);
    file.classification.apply(&mut config.classification);
    file.campaign.apply(&mut config)?;
    if let Some(v) = budget {
        config.budget = v;
    }
    if let Some(v) = q {
        config.q = v;
    }
    if let Some(v) = seed {
        config.seed = v;
    }
    if let Some(v) = init_seed {
        config.init_seed = v;
    }
    if let Some(v) = epochs {
        config.regression.training.epochs = v;
        config.classification.training.epochs = v;
    }
    config.regression.validate()?;
    config.classification.validate()?;
    Ok(config)
}

/// Final-model acquisition audit over the unobserved pool:
/// `id,mu,sigma,p_feasible,ei,cei`.
fn write_score_audit(
    path: &Path,
    reg: &SurrogateModel,
    cls: Option<&SurrogateModel>,
    f_best: f64,
    pool: &Pool,
    observed: &std::collections::HashSet<String>,
) -> anyhow::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "id,mu,sigma,p_feasible,ei,cei")?;
    for (i, id) in pool.ids.iter().enumerate() {
        if observed.contains(id) {
            continue;
        }
        let pred = reg.predict_regression(&pool.tensors[i], false)?;
        let sigma = pred.variance.sqrt();
        let ei = crate::acquisition::expected_improvement(pred.mean, sigma, f_best)?;
        let (p, cei) = match cls {
            Some(c) => {
                let p1 = c.predict_class(&pool.tensors[i])?.probs[1];
                (p1.to_string(), crate::acquisition::constrained_ei(ei, p1))
            }
            None => (String::new(), ei),
        };
        writeln!(w, "{},{},{},{},{},{}", id, pred.mean, sigma, p, ei, cei)?;
    }
    w.flush()?;
    Ok(())
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let file = load_file_config(&cli.config)?;
    match cli.command {
        Command::Convert { from, input, output } => {
            let format: ExternalFormat = from.parse()?;
            let report = crate::data::convert_external(
                &input,
                format,
                &output,
                &VolcanoMap::default_activity(),
                &VolcanoMap::default_selectivity(),
            )?;
            println!(
                "read {} records; wrote {} pairs ({} out of range, {} unpaired CO, {} unpaired H)",
                report.records_read,
                report.pairs_written,
                report.dropped_out_of_range,
                report.unpaired_co,
                report.unpaired_h
            );
            Ok(())
        }
        Command::Label { maps, input, output } => {
            let (act, sel) = match maps {
                Some(dir) => (
                    VolcanoMap::load(&dir.join("activity.json"))?,
                    VolcanoMap::load(&dir.join("selectivity.json"))?,
                ),
                None => (
                    VolcanoMap::default_activity(),
                    VolcanoMap::default_selectivity(),
                ),
            };
            let rule = file.label_rule();
            let mut dataset = load_dataset(&input, DEFAULT_MAX_ATOMS)?;
            let mut labels = HashMap::new();
            for s in &dataset.structures {
                let l = label(s, &act, &sel, &rule)
                    .with_context(|| format!("labeling {}", s.id))?;
                labels.insert(s.id.clone(), l);
            }
            dataset.set_labels(labels)?;
            write_dataset(&dataset, &output)?;
            println!("labeled {} structures", dataset.len());
            Ok(())
        }
        Command::Train { head, data, output, seed, epochs } => {
            let rule = file.label_rule();
            let (_, schema, pool) = load_labeled_pool(&data, &rule)?;
            let (mut config, targets) = match head.as_str() {
                "reg" => (
                    ModelConfig::regression_default(schema.feature_width()),
                    Targets::Regression(pool.labels.iter().map(|l| l.activity).collect()),
                ),
                "cls" => (
                    ModelConfig::classification_default(schema.feature_width()),
                    Targets::Classification(
                        pool.labels.iter().map(|l| l.feasible as usize).collect(),
                    ),
                ),
                other => bail!("unknown head {other:?}; expected reg or cls"),
            };
            match config.head {
                Head::Regression => file.regression.apply(&mut config),
                Head::Classification => file.classification.apply(&mut config),
            }
            if let Some(v) = seed {
                config.training.seed = v;
            }
            if let Some(v) = epochs {
                config.training.epochs = v;
            }
            config.validate()?;
            let train = TrainSet {
                tensors: pool.tensors.clone(),
                targets,
            };
            let model = fit(&train, &config)?;
            save_checkpoint(&model, Some(&schema), &output)?;
            println!("trained {head} head on {} samples -> {}", pool.len(), output.display());
            Ok(())
        }
        Command::Predict { ckpt, data, output } => {
            let (model, schema) = load_checkpoint(&ckpt)?;
            let dataset = load_dataset(&data, DEFAULT_MAX_ATOMS)?;
            let schema = match schema {
                Some(s) => s,
                None => {
                    let table = parse_property_table(BUNDLED_PROPERTY_TABLE)?;
                    build_schema(&dataset, &table, DEFAULT_MAX_ATOMS)?
                }
            };
            let mut w = std::io::BufWriter::new(std::fs::File::create(&output)?);
            let latent_cols: Vec<String> = (0..model.config.hidden_width)
                .map(|i| format!("latent_{i}"))
                .collect();
            let value_col = match model.config.head {
                Head::Regression => "mu",
                Head::Classification => "p1",
            };
            writeln!(w, "id,{value_col},sigma,{}", latent_cols.join(","))?;
            for s in &dataset.structures {
                let tensor = encode(s, &schema)?;
                let (value, sigma, latent) = match model.config.head {
                    Head::Regression => {
                        let p = model.predict_regression(&tensor, false)?;
                        (p.mean, p.variance.sqrt(), p.latent)
                    }
                    Head::Classification => {
                        let p = model.predict_class(&tensor)?;
                        (p.probs[1], p.variance.sqrt(), p.latent)
                    }
                };
                let latent_str: Vec<String> = latent.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{},{},{},{}", s.id, value, sigma, latent_str.join(","))?;
            }
            w.flush()?;
            println!("wrote predictions for {} structures", dataset.len());
            Ok(())
        }
        Command::Screen { mode, data, budget, q, seed, init_seed, epochs, out_dir } => {
            let rule = file.label_rule();
            let (_, schema, pool) = load_labeled_pool(&data, &rule)?;
            let config = campaign_config(
                mode,
                schema.feature_width(),
                &file,
                budget,
                q,
                seed,
                init_seed,
                epochs,
            )?;
            std::fs::create_dir_all(&out_dir)?;
            let manifest = RunManifest::new(
                "screen",
                serde_json::to_value(&config)?,
                Some(file_sha256(&data)?),
                vec![config.seed, config.init_seed],
            );
            manifest.write(&out_dir)?;

            let (history, state) = run_with_state(&config, &pool)?;
            history.write_csv(&out_dir.join("history.csv"))?;
            if let Some(m) = state.regression_model() {
                save_checkpoint(m, Some(&schema), &out_dir.join("model_regression.json"))?;
                let f_best = history
                    .iterations
                    .last()
                    .and_then(|r| r.incumbent)
                    .unwrap_or(0.0);
                write_score_audit(
                    &out_dir.join("scores.csv"),
                    m,
                    state.classification_model(),
                    f_best,
                    &pool,
                    &state.observed_ids,
                )?;
            }
            if let Some(m) = state.classification_model() {
                save_checkpoint(m, Some(&schema), &out_dir.join("model_classification.json"))?;
            }
            manifest.finalize(&out_dir)?;
            println!(
                "screened {} iterations ({} observations) -> {}",
                history.iterations.len(),
                state.observed.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Bench { modes, seeds, data, synthetic, budget, q, seed, epochs, out_dir } => {
            let n_seeds = seeds.unwrap_or(20);
            let rule = file.label_rule();
            let (pool, dataset_sha256) = if synthetic {
                (synthetic_pool(0), None)
            } else {
                let data = data.context("either --data or --synthetic is required")?;
                let (_, _, pool) = load_labeled_pool(&data, &rule)?;
                let sha = file_sha256(&data)?;
                (pool, Some(sha))
            };
            let in_width = pool.tensors[0].matrix.ncols();
            std::fs::create_dir_all(&out_dir)?;
            let mode_list: Vec<Mode> = modes
                .split(',')
                .map(|m| m.trim().parse().map_err(anyhow::Error::msg))
                .collect::<anyhow::Result<_>>()?;

            let base = campaign_config(
                Mode::ConstrainedBo,
                in_width,
                &file,
                budget,
                q,
                seed,
                None,
                epochs,
            )?;
            let seed_list: Vec<u64> = (0..n_seeds as u64).map(|i| base.seed + i).collect();
            let manifest = RunManifest::new(
                "bench",
                serde_json::json!({
                    "modes": mode_list,
                    "n_seeds": n_seeds,
                    "synthetic": synthetic,
                    "campaign": serde_json::to_value(&base)?,
                }),
                dataset_sha256,
                seed_list,
            );
            manifest.write(&out_dir)?;

            for mode in mode_list {
                let mut config = base.clone();
                config.mode = mode;
                let result = repeat_runs(&config, &pool, n_seeds)?;
                for (i, h) in result.per_seed.iter().enumerate() {
                    h.write_csv(&out_dir.join(format!("{mode}_seed{}.csv", base.seed + i as u64)))?;
                }
                result.write_csv(&out_dir, &mode.to_string())?;
                println!(
                    "{mode}: {} seeds, final mean n_solutions_both = {:.2}",
                    result.n_seeds,
                    result
                        .iterations
                        .last()
                        .map_or(0.0, |m| m.n_solutions_both.mean)
                );
            }
            manifest.finalize(&out_dir)?;
            Ok(())
        }
        Command::OodReport { data, seed, epochs, out_dir } => {
            let rule = file.label_rule();
            let (_, schema, pool) = load_labeled_pool(&data, &rule)?;
            let (train_idx, in_test_idx, ood_idx) = ood_partition(&pool);
            if train_idx.is_empty() || ood_idx.is_empty() {
                bail!(
                    "partition needs compositions with >25 structures and single-structure \
                     compositions (got {} train, {} ood)",
                    train_idx.len(),
                    ood_idx.len()
                );
            }
            let mut config = ModelConfig::regression_default(schema.feature_width());
            file.regression.apply(&mut config);
            if let Some(v) = seed {
                config.training.seed = v;
            }
            if let Some(v) = epochs {
                config.training.epochs = v;
            }
            config.validate()?;
            std::fs::create_dir_all(&out_dir)?;
            let manifest = RunManifest::new(
                "ood-report",
                serde_json::to_value(&config)?,
                Some(file_sha256(&data)?),
                vec![config.training.seed],
            );
            manifest.write(&out_dir)?;

            let train = TrainSet {
                tensors: train_idx.iter().map(|&i| pool.tensors[i].clone()).collect(),
                targets: Targets::Regression(
                    train_idx.iter().map(|&i| pool.labels[i].activity).collect(),
                ),
            };
            let model = fit(&train, &config)?;
            let make_set = |name: &'static str, idx: &[usize]| OodSet {
                name,
                ids: idx.iter().map(|&i| pool.ids[i].clone()).collect(),
                tensors: idx.iter().map(|&i| &pool.tensors[i]).collect(),
            };
            let sets = [
                make_set("train", &train_idx),
                make_set("in_test", &in_test_idx),
                make_set("ood", &ood_idx),
            ];
            let report = ood_report(&model, &sets, Some(&out_dir.join("ood.csv")))?;
            std::fs::write(
                out_dir.join("ood_summary.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            manifest.finalize(&out_dir)?;
            for s in &report.sets {
                println!("{}: n={} median sigma={:.4}", s.name, s.n, s.median_sigma);
            }
            Ok(())
        }
        Command::Demo { task, seed, out_dir } => {
            let seed = seed.unwrap_or(7);
            std::fs::create_dir_all(&out_dir)?;
            let manifest = RunManifest::new(
                "demo",
                serde_json::json!({ "task": task }),
                None,
                vec![seed],
            );
            manifest.write(&out_dir)?;
            match task.as_str() {
                "reg1d" => {
                    let d = demo::regression_1d(seed)?;
                    d.write_csv(&out_dir.join("reg1d.csv"))?;
                    std::fs::write(
                        out_dir.join("reg1d_summary.json"),
                        serde_json::to_string_pretty(&serde_json::json!({
                            "train_rmse": d.train_rmse,
                            "mean_sigma_train": d.mean_sigma_train,
                            "mean_sigma_gap": d.mean_sigma_gap,
                            "mean_sigma_far": d.mean_sigma_far,
                        }))?,
                    )?;
                    println!(
                        "reg1d: rmse={:.4} sigma train={:.4} gap={:.4} far={:.4}",
                        d.train_rmse, d.mean_sigma_train, d.mean_sigma_gap, d.mean_sigma_far
                    );
                }
                "cls2d" => {
                    let d = demo::classification_2d(seed)?;
                    d.write_csv(&out_dir.join("cls2d.csv"))?;
                    std::fs::write(
                        out_dir.join("cls2d_summary.json"),
                        serde_json::to_string_pretty(&serde_json::json!({
                            "train_accuracy": d.train_accuracy,
                            "mean_train_confidence": d.mean_train_confidence,
                            "mean_probe_confidence": d.mean_probe_confidence,
                            "max_probe_confidence": d.max_probe_confidence,
                            "median_sigma_train": d.median_sigma_train,
                            "median_sigma_probe": d.median_sigma_probe,
                        }))?,
                    )?;
                    println!(
                        "cls2d: acc={:.3} probe |p-0.5| max={:.3} sigma medians {:.3} -> {:.3}",
                        d.train_accuracy,
                        d.max_probe_confidence,
                        d.median_sigma_train,
                        d.median_sigma_probe
                    );
                }
                other => bail!("unknown demo task {other:?}; expected reg1d or cls2d"),
            }
            manifest.finalize(&out_dir)?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_precedence_flag_over_file_over_default() {
        let file: FileConfig = toml::from_str(
            "[campaign]\nbudget = 30\n\n[regression]\nepochs = 7\n",
        )
        .unwrap();
        // file overrides default
        let c = campaign_config(Mode::RandomSearch, 4, &file, None, None, None, None, None)
            .unwrap();
        assert_eq!(c.budget, 30);
        assert_eq!(c.regression.training.epochs, 7);
        // flag overrides file
        let c =
            campaign_config(Mode::RandomSearch, 4, &file, Some(12), None, None, None, Some(3))
                .unwrap();
        assert_eq!(c.budget, 12);
        assert_eq!(c.regression.training.epochs, 3);
        assert_eq!(c.classification.training.epochs, 3);
        // default when neither is given
        let c = campaign_config(
            Mode::RandomSearch,
            4,
            &FileConfig::default(),
            None,
            None,
            None,
            None,
            None,
        )
        .unwrap();
        assert_eq!(c.budget, 80);
    }

    #[test]
    fn unknown_config_key_rejected() {
        assert!(toml::from_str::<FileConfig>("[campaign]\nbudgets = 3\n").is_err());
    }

    #[test]
    fn label_rule_from_file() {
        let file: FileConfig =
            toml::from_str("[label]\nselectivity_threshold = 0.8\n").unwrap();
        let rule = file.label_rule();
        assert_eq!(rule.selectivity_threshold, 0.8);
        assert_eq!(rule.activity_threshold, 0.85);
    }

    #[test]
    fn cli_parses_screen() {
        let cli = Cli::try_parse_from([
            "catscreen", "screen", "--mode", "cbo", "--data", "d.jsonl", "--budget", "5",
            "--out", "outdir",
        ])
        .unwrap();
        match cli.command {
            Command::Screen { mode, budget, .. } => {
                assert_eq!(mode, Mode::ConstrainedBo);
                assert_eq!(budget, Some(5));
            }
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn unknown_flag_is_parse_error() {
        assert!(Cli::try_parse_from(["catscreen", "demo", "--bogus"]).is_err());
    }
}
