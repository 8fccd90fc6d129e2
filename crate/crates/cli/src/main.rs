use std::fs;
use std::path::{Path, PathBuf};

use abc_lab::abc_calibration::Calibration;
use abc_lab::harness::{
    export_bias_heatmaps, export_heatmaps, interpolation_stage, load_bias_set, render_table, resolve_out_dir,
    run_abc_pipeline, run_abs, run_eval, EvalReport, ExperimentConfig, Method,
};
use abc_lab::kv::{self, KvMap};
use abc_lab::task_data::make_sample;
use abc_lab::transformer::{BiasProvider, Checkpoint};
use abc_lab::{BiasSet32, Model};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use num_bigint::BigUint;

#[derive(Parser)]
#[command(name = "abc-lab", version, about = "Length-generalization experiments with attention biases")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by all subcommands. Flags override the config file.
#[derive(Args, Clone, Default)]
struct Common {
    /// `key=value` config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    task: Option<String>,
    #[arg(long, global = true)]
    base: Option<u32>,
    /// sinusoidal | nope | rope | alibi
    #[arg(long, global = true)]
    pe: Option<String>,
    /// window half-width
    #[arg(long, global = true)]
    w: Option<usize>,
    /// cyclic position period; `none` disables
    #[arg(long, global = true)]
    cpi_period: Option<String>,
    /// comma-separated deltas, e.g. `1,-1,0`
    #[arg(long, global = true, allow_hyphen_values = true)]
    directions: Option<String>,
    /// outlier cut-off in standard deviations; `none` keeps all lines
    #[arg(long, global = true)]
    threshold_mult: Option<String>,
    /// smoke | full
    #[arg(long, global = true)]
    scale: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// extra `key=value` overrides
    #[arg(long = "set", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train to interpolation (vanilla, or scaffolded with --method abs)
    Train {
        #[arg(long)]
        method: Option<String>,
    },
    /// Interpolate, calibrate, retrain and evaluate
    Abc,
    /// Train with window scaffolding and evaluate
    Abs {
        /// validation configuration A, B, C or D
        #[arg(long)]
        abs_config: Option<char>,
    },
    /// Evaluate a checkpoint at the configured lengths
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// bias-set directory
        #[arg(long, conflicts_with_all = ["calibration", "scaffold"])]
        bias: Option<PathBuf>,
        /// calibration directory
        #[arg(long, conflicts_with = "scaffold")]
        calibration: Option<PathBuf>,
        /// apply the configured window scaffold
        #[arg(long)]
        scaffold: bool,
    },
    /// Export per-head heatmaps (PGM + CSV)
    Heatmap {
        /// bias-set or calibration directory to render
        #[arg(long)]
        bias: Option<PathBuf>,
        /// checkpoint whose last-layer attention to render
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// comma-separated operands for the attention sample
        #[arg(long, default_value = "1234")]
        operands: String,
        /// sizes for calibrated biases: decoder,encoder
        #[arg(long)]
        dims: Option<String>,
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Collect every report under the output directory into one table
    Report,
}

fn overrides(common: &Common) -> Result<KvMap> {
    let mut map = match &common.config {
        Some(path) => kv::parse(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?,
        None => KvMap::new(),
    };
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    };
    put("task", common.task.clone());
    put("base", common.base.map(|b| b.to_string()));
    put("pe", common.pe.clone());
    put("w", common.w.map(|w| w.to_string()));
    put("cpi_period", common.cpi_period.clone());
    put("directions", common.directions.clone());
    put("threshold_mult", common.threshold_mult.clone());
    put("scale", common.scale.clone());
    put("seed", common.seed.map(|s| s.to_string()));
    for item in &common.set {
        let (k, v) = item
            .split_once('=')
            .with_context(|| format!("--set expects key=value, got {item:?}"))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn experiment(common: &Common, method: Option<Method>) -> Result<ExperimentConfig> {
    let mut map = overrides(common)?;
    if let Some(m) = method {
        map.insert("method".into(), m.to_string());
    }
    if !map.contains_key("task") {
        bail!("no task given (use --task or a config file)");
    }
    Ok(ExperimentConfig::from_kv(&map)?)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let from_config = match &common.config {
        Some(path) => kv::parse(&fs::read_to_string(path)?)?.get("out_dir").map(PathBuf::from),
        None => None,
    };
    Ok(resolve_out_dir(common.out_dir.as_deref().or(from_config.as_deref())))
}

fn print_report(report: &EvalReport) {
    print!("{}", render_table(std::slice::from_ref(report)));
}

fn load_provider(path: &Path) -> Result<Box<dyn BiasProvider<f32>>> {
    let meta = kv::parse(&fs::read_to_string(path.join("meta"))?)?;
    Ok(match meta.get("kind").map(String::as_str) {
        Some("calibration") => Box::new(Calibration::<f32>::load(path)?),
        _ => Box::new(load_bias_set::<f32>(path)?),
    })
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once(',').context("--dims expects decoder,encoder")?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Cli { common, command } = Cli::parse();
    let out = out_dir(&common)?;
    match command {
        Command::Train { method } => {
            let method = method.map(|m| m.parse()).transpose()?;
            let cfg = experiment(&common, method)?;
            let stage = interpolation_stage(&cfg, &out)?;
            println!(
                "{} {}: {} steps, interpolated={}, best validation accuracy {:.4}",
                cfg.task,
                cfg.label(),
                stage.steps,
                stage.reached,
                stage.best_accuracy
            );
            if !stage.reached {
                bail!("did not reach interpolation within {} steps", cfg.interp_budget);
            }
        }
        Command::Abc => {
            let cfg = experiment(&common, Some(Method::Abc))?;
            let run = run_abc_pipeline(&cfg, &out)?;
            println!(
                "interpolation {} steps, retraining {} steps (interpolated={}), {} samples calibrated",
                run.interpolation.steps, run.retrained.steps, run.retrained.reached, run.calibration.samples_used
            );
            print_report(&run.report);
        }
        Command::Abs { abs_config } => {
            let mut cfg = experiment(&common, Some(Method::Abs))?;
            if let Some(c) = abs_config {
                cfg = cfg.abs_variant(c)?;
            }
            let (stage, report) = run_abs(&cfg, &out)?;
            println!("{} steps to interpolation", stage.steps);
            print_report(&report);
        }
        Command::Eval {
            checkpoint,
            bias,
            calibration,
            scaffold,
        } => {
            let cfg = experiment(&common, None)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let model: Model = ckpt.to_model()?;
            let scaffold_provider = cfg.scaffold();
            let loaded: Option<Box<dyn BiasProvider<f32>>> = match (bias, calibration) {
                (Some(p), _) => Some(Box::new(load_bias_set::<f32>(&p)?)),
                (_, Some(p)) => Some(Box::new(Calibration::<f32>::load(&p)?)),
                _ => None,
            };
            let provider: Option<&dyn BiasProvider<f32>> = if scaffold {
                Some(&scaffold_provider)
            } else {
                loaded.as_deref()
            };
            let mut bytes = Vec::new();
            ckpt.write_to(&mut bytes)?;
            let id = abc_lab::harness::config::short_hash(&bytes);
            let report = run_eval(&model, provider, &cfg, &id)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join(format!("eval-{id}.csv")), report.to_csv())?;
            print_report(&report);
        }
        Command::Heatmap {
            bias,
            checkpoint,
            operands,
            dims,
            dest,
        } => {
            let dest = dest.unwrap_or_else(|| out.join("heatmaps"));
            let mut written = Vec::new();
            if let Some(path) = &bias {
                let set: BiasSet32 = match dims {
                    Some(d) => {
                        let (dec, enc) = parse_dims(&d)?;
                        let heads = kv::require(&kv::parse(&fs::read_to_string(path.join("meta"))?)?, "heads")?;
                        load_provider(path)?.bias_for(heads, dec, enc)?
                    }
                    None => load_bias_set(path).context("calibration directories need --dims")?,
                };
                written.extend(export_bias_heatmaps(&set, &dest)?);
            }
            if let Some(path) = &checkpoint {
                let cfg = experiment(&common, None)?;
                let model: Model = Checkpoint::load(path)?.to_model()?;
                let ops: Vec<BigUint> = operands
                    .split(',')
                    .map(|t| t.trim().parse::<BigUint>())
                    .collect::<std::result::Result<_, _>>()?;
                let base = cfg.task.effective_base(cfg.base);
                let width = ops.iter().map(|o| o.to_str_radix(base).len()).max().unwrap_or(1);
                let sample = make_sample(cfg.task, &ops, base, width, cfg.aligned())?;
                let (self_t, cross_t, correct) = model.extract_last_layer_attention(&sample, None)?;
                println!(
                    "input {} target {} decoded correctly: {correct}",
                    sample.input_string(),
                    sample.target_string()
                );
                written.extend(export_heatmaps(&self_t.heads, &dest, "attn_self")?);
                written.extend(export_heatmaps(&cross_t.heads, &dest, "attn_cross")?);
            }
            if bias.is_none() && checkpoint.is_none() {
                bail!("heatmap needs --bias and/or --checkpoint");
            }
            println!("wrote {} files to {}", written.len(), dest.display());
        }
        Command::Report => {
            let mut reports = Vec::new();
            if out.exists() {
                for entry in fs::read_dir(&out)? {
                    let path = entry?.path().join("report.csv");
                    if path.exists() {
                        reports.extend(EvalReport::parse_csv(&fs::read_to_string(&path)?)?);
                    }
                }
            }
            reports.sort_by(|a, b| (&a.task, &a.model).cmp(&(&b.task, &b.model)));
            let table = render_table(&reports);
            let mut csv = format!("{}\n", EvalReport::CSV_HEADER);
            for r in &reports {
                csv.push_str(&r.csv_rows());
            }
            fs::create_dir_all(&out)?;
            fs::write(out.join("summary.txt"), &table)?;
            fs::write(out.join("summary.csv"), csv)?;
            print!("{table}");
        }
    }
    Ok(())
}
