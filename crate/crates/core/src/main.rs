//! Command-line entry point: train, evaluate, leave-one-out, synthetic
//! data generation and the gradient-check suite.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use crowdcast::config::RunConfig;
use crowdcast::data::{parse_trajectory_file, prepare_samples, DatasetProfile, PreparedSample};
use crowdcast::eval::{
    self, evaluate, evaluate_baseline, render_table, EvalMode, MetricReport,
};
use crowdcast::model::{load_checkpoint, save_checkpoint, InferMode, Model};
use crowdcast::synth::{generate, write_scene, Scenario};
use crowdcast::train::{train_with_checkpoints, Variant};

#[derive(Parser)]
#[command(
    name = "crowdcast",
    about = "Pedestrian trajectory forecasting: training, evaluation and synthetic benchmarks"
)]
struct Cli {
    /// Configuration file (section.key = value); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model on a trajectory file and write checkpoint + loss log.
    Train {
        /// Trajectory file (frame ped x y per line).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// full, no-edge or no-cvae.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate a checkpoint on a trajectory file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// deterministic, stochastic or zero-latent.
        #[arg(long)]
        mode: Option<String>,
        /// Draw count for stochastic mode.
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated horizons in seconds, e.g. "1,2,3".
        #[arg(long)]
        horizons: Option<String>,
    },
    /// Leave-one-out protocol over a directory of trajectory files.
    Loo {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        horizons: Option<String>,
    },
    /// Generate a synthetic trajectory file.
    Synth {
        /// linear, turning, crossing or mixed.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        episodes: Option<usize>,
        /// Position jitter in meters.
        #[arg(long)]
        noise: Option<f64>,
        /// Output file path.
        #[arg(long)]
        path: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("run.seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }

    match cli.cmd {
        Cmd::Train {
            data,
            epochs,
            variant,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(v) = variant {
                cfg.train.variant = parse_variant(&v)?;
            }
            cmd_train(&cfg, data.as_deref())
        }
        Cmd::Evaluate {
            checkpoint,
            data,
            mode,
            n,
            horizons,
        } => {
            apply_eval_flags(&mut cfg, mode, n, horizons)?;
            cmd_evaluate(&cfg, &checkpoint, data.as_deref())
        }
        Cmd::Loo {
            data_dir,
            epochs,
            mode,
            n,
            horizons,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            apply_eval_flags(&mut cfg, mode, n, horizons)?;
            cmd_loo(&cfg, &data_dir)
        }
        Cmd::Synth {
            scenario,
            episodes,
            noise,
            path,
        } => cmd_synth(&cfg, &scenario, episodes.unwrap_or(100), noise.unwrap_or(0.05), &path),
        Cmd::Gradcheck => cmd_gradcheck(cfg.seed),
    }
}

fn apply_eval_flags(
    cfg: &mut RunConfig,
    mode: Option<String>,
    n: Option<usize>,
    horizons: Option<String>,
) -> Result<()> {
    if let Some(m) = mode {
        cfg.set("eval.mode", &m)?;
    }
    if let Some(n) = n {
        cfg.eval.n = n;
    }
    if let Some(h) = horizons {
        cfg.set("eval.horizons", &h)?;
    }
    Ok(())
}

fn parse_variant(name: &str) -> Result<Variant> {
    match name {
        "full" => Ok(Variant::Full),
        "no-edge" => Ok(Variant::NoEdge),
        "no-cvae" => Ok(Variant::NoCvae),
        _ => bail!("unknown variant '{name}'; available: full, no-edge, no-cvae"),
    }
}

fn eval_mode(cfg: &RunConfig) -> EvalMode {
    match cfg.eval.mode.as_str() {
        "stochastic" => EvalMode::BestOf(cfg.eval.n),
        "zero-latent" => EvalMode::ZeroLatent,
        _ => EvalMode::Deterministic,
    }
}

fn load_samples(
    path: &Path,
    profile: &DatasetProfile,
) -> Result<Vec<PreparedSample>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read dataset {}", path.display()))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let scene = parse_trajectory_file(&text, &stem, profile.dt)?;
    let samples = prepare_samples(&scene, profile)?;
    if samples.is_empty() {
        bail!(
            "dataset {} yields no complete {}+{}-frame windows",
            path.display(),
            profile.obs_len,
            profile.pred_len
        );
    }
    Ok(samples)
}

fn data_path<'a>(cfg: &'a RunConfig, flag: Option<&'a Path>) -> Result<&'a Path> {
    flag.or(cfg.data.as_deref())
        .ok_or_else(|| anyhow!("no dataset given; pass --data or set paths.data"))
}

fn cmd_train(cfg: &RunConfig, data: Option<&Path>) -> Result<()> {
    let path = data_path(cfg, data)?;
    let samples = load_samples(path, &cfg.profile)?;
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create output dir {}", cfg.out.display()))?;
    let mut model = Model::new(cfg.model_config(), cfg.seed)?;
    let logs = train_with_checkpoints(&mut model, &samples, &cfg.train, Some(&cfg.out))?;
    let log_text: String = logs.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(cfg.out.join("loss_log.txt"), &log_text)?;
    save_checkpoint(&model, &cfg.out.join("model.ckpt"))?;
    print!("{log_text}");
    println!("wrote {}", cfg.out.join("model.ckpt").display());
    Ok(())
}

fn check_compatible(model: &Model, profile: &DatasetProfile) -> Result<()> {
    let m = &model.cfg;
    if m.obs_len != profile.obs_len || m.pred_len != profile.pred_len {
        bail!(
            "checkpoint expects {}+{} frame windows but the dataset profile is {}+{}",
            m.obs_len,
            m.pred_len,
            profile.obs_len,
            profile.pred_len
        );
    }
    Ok(())
}

fn write_reports(cfg: &RunConfig, reports: &[MetricReport], name: &str) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    let records: String = reports
        .iter()
        .flat_map(|r| r.records())
        .map(|l| l + "\n")
        .collect();
    let table = render_table(reports);
    std::fs::write(cfg.out.join(format!("{name}_records.txt")), &records)?;
    std::fs::write(cfg.out.join(format!("{name}_table.txt")), format!("{table}\n"))?;
    println!("{table}");
    Ok(())
}

fn dump_trajectories(
    cfg: &RunConfig,
    model: &Model,
    samples: &[PreparedSample],
) -> Result<()> {
    let mut out = String::new();
    for (i, s) in samples.iter().enumerate() {
        let pred = model.predict_world(s, &InferMode::Deterministic)?;
        for (k, (p, t)) in pred.iter().zip(s.future_world.iter()).enumerate() {
            out.push_str(&format!(
                "sample={i} step={k} pred={} {} true={} {}\n",
                p[0], p[1], t[0], t[1]
            ));
        }
    }
    std::fs::write(cfg.out.join("trajectories.txt"), out)?;
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, data: Option<&Path>) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    check_compatible(&model, &cfg.profile)?;
    let path = data_path(cfg, data)?;
    let samples = load_samples(path, &cfg.profile)?;
    let dataset = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let report = evaluate(
        &model,
        &samples,
        eval_mode(cfg),
        &cfg.eval.horizons,
        cfg.profile.dt,
        cfg.seed,
        &dataset,
    )?;
    let baseline = evaluate_baseline(&samples, &cfg.eval.horizons, cfg.profile.dt, &dataset)?;
    write_reports(cfg, &[report, baseline], "report")?;
    dump_trajectories(cfg, &model, &samples)?;
    Ok(())
}

fn cmd_loo(cfg: &RunConfig, data_dir: &Path) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(data_dir)
        .with_context(|| format!("cannot read dataset dir {}", data_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.len() < 2 {
        bail!(
            "leave-one-out needs at least 2 dataset files in {}, found {}",
            data_dir.display(),
            paths.len()
        );
    }
    let mut datasets = Vec::new();
    for p in &paths {
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string());
        datasets.push((name, load_samples(p, &cfg.profile)?));
    }
    let model_cfg = cfg.model_config();
    let train_cfg = cfg.train.clone();
    let reports = eval::leave_one_out(
        &datasets,
        &cfg.eval.horizons,
        cfg.profile.dt,
        cfg.seed,
        eval_mode(cfg),
        |train_set, _held_out| {
            let mut model = Model::new(model_cfg, train_cfg.seed)
                .map_err(crowdcast::train::TrainError::from)?;
            crowdcast::train::train(&mut model, train_set, &train_cfg)?;
            Ok(model)
        },
    )?;
    std::fs::create_dir_all(&cfg.out)?;
    for r in &reports {
        let body: String = r.records().into_iter().map(|l| l + "\n").collect();
        std::fs::write(cfg.out.join(format!("loo_{}.txt", r.dataset)), body)?;
    }
    println!("{}", render_table(&reports));
    Ok(())
}

fn cmd_synth(
    cfg: &RunConfig,
    scenario: &str,
    episodes: usize,
    noise: f64,
    path: &Path,
) -> Result<()> {
    let scenario = Scenario::from_name(scenario).ok_or_else(|| {
        anyhow!(
            "unknown scenario '{scenario}'; available: {}",
            Scenario::ALL.join(", ")
        )
    })?;
    let scene = generate(scenario, episodes, noise, cfg.seed, &cfg.profile);
    write_scene(&scene, path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote {} records to {}", scene.records.len(), path.display());
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let reports = crowdcast::gradcheck::run_suite(seed);
    let mut ok = true;
    for r in &reports {
        println!("{r}");
        ok &= r.pass;
    }
    if !ok {
        bail!("gradient checks failed");
    }
    Ok(())
}
