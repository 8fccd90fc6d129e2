//! Experiment stages with content-addressed artifacts.
//!
//! Every run lives in `<out>/<task>-<label>-<hash>/`, where the hash covers
//! all training settings. A stage whose outputs already exist is loaded
//! instead of recomputed.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::artifacts::{export_bias_heatmaps, export_heatmaps};
use super::config::{short_hash, ExperimentConfig, Method};
use super::report::{render_table, EvalReport, LengthResult};
use super::train::{require_interpolation, scored_accuracy, train_until, BiasCache, TrainOptions, TrainOutcome};
use crate::abc_calibration::{calibrate, retrain_with_bias, Calibration};
use crate::error::{LabError, Result};
use crate::kv::{self, KvMap};
use crate::task_data::{gen_extrapolation_set, gen_interpolation_split, DatasetSplit};
use crate::transformer::{AttentionSite, BiasProvider, Checkpoint, ModelConfig, Trainer, Transformer};

/// Result of one training stage.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub checkpoint: Checkpoint,
    pub steps: u64,
    pub reached: bool,
    pub best_accuracy: f64,
}

impl StageResult {
    pub fn model(&self) -> Result<Transformer<f32>> {
        self.checkpoint.to_model()
    }

    pub fn checkpoint_id(&self) -> Result<String> {
        let mut bytes = Vec::new();
        self.checkpoint.write_to(&mut bytes)?;
        Ok(short_hash(&bytes))
    }
}

/// Output of the full calibration pipeline.
#[derive(Debug, Clone)]
pub struct AbcRun {
    pub interpolation: StageResult,
    pub calibration: Calibration<f32>,
    pub retrained: StageResult,
    pub report: EvalReport,
}

pub fn run_dir(cfg: &ExperimentConfig, out: &Path) -> PathBuf {
    out.join(format!("{}-{}-{}", cfg.task, cfg.label(), cfg.training_hash()))
}

pub fn dataset(cfg: &ExperimentConfig) -> Result<DatasetSplit> {
    gen_interpolation_split(cfg.task, cfg.seed, cfg.range_max(), cfg.base, cfg.aligned())
}

fn train_options(cfg: &ExperimentConfig, budget: u64) -> TrainOptions {
    TrainOptions {
        batch_size: cfg.batch_size,
        budget,
        eval_every: cfg.eval_every,
        target_accuracy: cfg.target_accuracy,
        patience: cfg.patience,
        seed: cfg.seed ^ 0x5eed,
    }
}

fn stage_meta(outcome: &TrainOutcome) -> KvMap {
    let mut m = KvMap::new();
    m.insert("steps".into(), outcome.steps.to_string());
    m.insert("reached".into(), outcome.reached.to_string());
    m.insert("best_accuracy".into(), outcome.best_accuracy.to_string());
    m
}

/// Runs (or reloads) a training stage named `name` inside `dir`.
fn cached_stage(
    dir: &Path,
    name: &str,
    train: impl FnOnce() -> Result<(Trainer<f32>, TrainOutcome)>,
) -> Result<StageResult> {
    let ckpt_path = dir.join(format!("{name}.abck"));
    let done_path = dir.join(format!("{name}.done"));
    if ckpt_path.exists() && done_path.exists() {
        let meta = kv::parse(&fs::read_to_string(&done_path)?)?;
        info!("reusing {}", ckpt_path.display());
        return Ok(StageResult {
            checkpoint: Checkpoint::load(&ckpt_path)?,
            steps: kv::require(&meta, "steps")?,
            reached: kv::require(&meta, "reached")?,
            best_accuracy: kv::require(&meta, "best_accuracy")?,
        });
    }
    fs::create_dir_all(dir)?;
    let (trainer, outcome) = train()?;
    let checkpoint = Checkpoint::from_trainer(&trainer);
    checkpoint.save(&ckpt_path)?;
    fs::write(dir.join(format!("{name}_log.csv")), outcome.log_csv())?;
    fs::write(&done_path, kv::render(&stage_meta(&outcome)))?;
    Ok(StageResult {
        checkpoint,
        steps: outcome.steps,
        reached: outcome.reached,
        best_accuracy: outcome.best_accuracy,
    })
}

fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    Ok(())
}

fn train_fresh(
    model: ModelConfig,
    split: &DatasetSplit,
    provider: Option<&dyn BiasProvider<f32>>,
    opts: &TrainOptions,
) -> Result<(Trainer<f32>, TrainOutcome)> {
    let mut trainer = Trainer::new(Transformer::new(model)?);
    let outcome = train_until(&mut trainer, &split.train, &split.validation, provider, opts)?;
    Ok((trainer, outcome))
}

/// Trains the configured model (with scaffolding for ABS runs) until it
/// interpolates. Fails with [`LabError::BudgetExhausted`] otherwise; the
/// checkpoint is kept on disk either way.
pub fn run_interpolation(cfg: &ExperimentConfig, out: &Path) -> Result<StageResult> {
    let stage = interpolation_stage(cfg, out)?;
    require_interpolation_result(&stage, cfg.interp_budget)?;
    Ok(stage)
}

fn require_interpolation_result(stage: &StageResult, budget: u64) -> Result<()> {
    require_interpolation(
        &TrainOutcome {
            steps: stage.steps,
            reached: stage.reached,
            best_accuracy: stage.best_accuracy,
            log: Vec::new(),
        },
        budget,
    )
}

/// The interpolation stage without the success requirement.
pub fn interpolation_stage(cfg: &ExperimentConfig, out: &Path) -> Result<StageResult> {
    cfg.validate()?;
    let dir = run_dir(cfg, out);
    write_config(cfg, &dir)?;
    let scaffold = cfg.scaffold();
    let provider: Option<&dyn BiasProvider<f32>> = match cfg.method {
        Method::Abs => Some(&scaffold),
        _ => None,
    };
    cached_stage(&dir, "interp", || {
        let split = dataset(cfg)?;
        info!(
            "{} {}: {} train / {} validation samples, width {}",
            cfg.task,
            cfg.label(),
            split.train.len(),
            split.validation.len(),
            split.width
        );
        train_fresh(cfg.model.clone(), &split, provider, &train_options(cfg, cfg.interp_budget))
    })
}

/// Exact-match accuracy at each configured length on freshly sampled
/// extrapolation sets (fixed seed per length).
pub fn run_eval(
    model: &Transformer<f32>,
    provider: Option<&dyn BiasProvider<f32>>,
    cfg: &ExperimentConfig,
    checkpoint_id: &str,
) -> Result<EvalReport> {
    let mut biases = BiasCache::new(provider, model.config.heads);
    let mut results = Vec::new();
    for &len in &cfg.eval_lengths {
        let samples = gen_extrapolation_set(cfg.task, len, cfg.base, cfg.eval_cap, cfg.eval_seed, cfg.aligned())?;
        let acc = scored_accuracy(model, &samples, &mut biases, 128, cfg.eval_scoring)?;
        info!("{} {} length {len}: {:.4} on {}", cfg.task, cfg.label(), acc, samples.len());
        results.push(LengthResult {
            length: len,
            accuracy: acc,
            samples: samples.len(),
        });
    }
    Ok(EvalReport {
        task: cfg.task.to_string(),
        model: cfg.label(),
        config_hash: cfg.full_hash(),
        checkpoint_id: checkpoint_id.to_string(),
        results,
    })
}

/// Evaluates and writes `report.txt` / `report.csv`, or reloads them.
fn cached_eval(
    cfg: &ExperimentConfig,
    dir: &Path,
    stage: &StageResult,
    provider: Option<&dyn BiasProvider<f32>>,
) -> Result<EvalReport> {
    let csv_path = dir.join(format!("report-{}.csv", cfg.full_hash()));
    if csv_path.exists() {
        if let Some(r) = EvalReport::parse_csv(&fs::read_to_string(&csv_path)?)?.pop() {
            return Ok(r);
        }
    }
    let report = run_eval(&stage.model()?, provider, cfg, &stage.checkpoint_id()?)?;
    fs::write(&csv_path, report.to_csv())?;
    fs::write(dir.join("report.csv"), report.to_csv())?;
    fs::write(dir.join("report.txt"), render_table(std::slice::from_ref(&report)))?;
    Ok(report)
}

/// Vanilla or scaffolded training followed by evaluation.
pub fn run_abs(cfg: &ExperimentConfig, out: &Path) -> Result<(StageResult, EvalReport)> {
    if cfg.method == Method::Abc {
        return Err(LabError::Config("run_abs needs method vanilla or abs".into()));
    }
    let stage = run_interpolation(cfg, out)?;
    let dir = run_dir(cfg, out);
    let scaffold = cfg.scaffold();
    let provider: Option<&dyn BiasProvider<f32>> = match cfg.method {
        Method::Abs => Some(&scaffold),
        _ => None,
    };
    if let Some(p) = provider {
        let split_width = dataset(cfg)?.width;
        let heads = cfg.model.heads;
        let dec = cfg.task.output_width(split_width) + 1;
        let enc = if cfg.aligned() {
            cfg.task.aligned_input_len(split_width)
        } else {
            cfg.task.input_len(split_width)
        };
        let heat = dir.join("heatmaps");
        if !heat.exists() {
            export_bias_heatmaps(&p.bias_for(heads, dec, enc)?, &heat)?;
        }
    }
    let report = cached_eval(cfg, &dir, &stage, provider)?;
    Ok((stage, report))
}

/// Interpolate, calibrate, retrain with the calibrated biases, evaluate.
/// A retraining run that misses the stopping rule is evaluated anyway.
pub fn run_abc_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<AbcRun> {
    if cfg.method != Method::Abc {
        return Err(LabError::Config("run_abc_pipeline needs method abc".into()));
    }
    let dir = run_dir(cfg, out);
    let interpolation = run_interpolation(cfg, out)?;
    let split = dataset(cfg)?;

    let cal_dir = dir.join("calibration");
    let calibration = if cal_dir.join("meta").exists() {
        Calibration::load(&cal_dir)?
    } else {
        let model = interpolation.model()?;
        let mut pool = split.train.clone();
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xca1));
        let cal = calibrate(&model, &pool, &cfg.calibration_options())?;
        cal.save(&cal_dir)?;
        let heat = dir.join("heatmaps");
        for sc in &cal.sites {
            export_heatmaps(&sc.sources, &heat, &format!("attn_{}", sc.site.name()))?;
        }
        let longest = *cfg.eval_lengths.iter().max().unwrap_or(&split.width);
        let width = longest.max(split.width);
        let dec = cfg.task.output_width(width) + 1;
        export_bias_heatmaps(&cal.bias_set(dec, cfg.task.input_len(width))?, &heat)?;
        cal
    };
    for site in [AttentionSite::SelfAttn, AttentionSite::Cross] {
        let t = calibration.transparent_heads(site);
        if !t.is_empty() {
            info!("{} transparent heads: {t:?}", site.name());
        }
    }

    let retrained = cached_stage(&dir, "retrain", || {
        let warm = if cfg.abc.warm_start {
            Some(interpolation.model()?)
        } else {
            None
        };
        retrain_with_bias(
            cfg.retrain_model(),
            &split,
            &calibration,
            &train_options(cfg, cfg.retrain_budget),
            warm,
        )
    })?;
    if !retrained.reached {
        // still evaluated; callers decide via `retrained.reached`
        warn!(
            "retraining did not interpolate within {} steps (best {:.4})",
            cfg.retrain_budget, retrained.best_accuracy
        );
    }
    let report = cached_eval(cfg, &dir, &retrained, Some(&calibration))?;
    Ok(AbcRun {
        interpolation,
        calibration,
        retrained,
        report,
    })
}
