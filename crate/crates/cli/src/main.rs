use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Axis;
use riemcf::config::{DatasetKind, RunConfig};
use riemcf::geometry::{EnhancedMetric, PullbackMetric};
use riemcf::pipeline::{self, IN_CLOUD_RADIUS};
use riemcf::{Error, Result};

#[derive(Parser)]
#[command(name = "riemcf", version, about = "Counterfactual explanations by Riemannian latent descent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier for every seed.
    TrainClassifier(Common),
    /// Warm up the VAE and fit its decoder variance for every seed.
    TrainVae(Common),
    /// Generate counterfactual trajectories for every grid cell.
    GenerateCe(Common),
    /// Evaluate stored trajectories and write the report tables.
    Evaluate(Common),
    /// Train on the synthetic surface and emit cost maps and paths.
    SynthDemo(Common),
    /// Write latent cost maps for a trained 2-d model.
    MetricMap(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// adult, gmc or surface.
    #[arg(long)]
    dataset: Option<String>,
    /// Run a single root seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    raw_path: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainClassifier(_) => "train-classifier",
            Command::TrainVae(_) => "train-vae",
            Command::GenerateCe(_) => "generate-ce",
            Command::Evaluate(_) => "evaluate",
            Command::SynthDemo(_) => "synth-demo",
            Command::MetricMap(_) => "metric-map",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::TrainClassifier(c)
            | Command::TrainVae(c)
            | Command::GenerateCe(c)
            | Command::Evaluate(c)
            | Command::SynthDemo(c)
            | Command::MetricMap(c) => c,
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let dataset = common.dataset.as_deref().map(DatasetKind::parse).transpose()?;
    let mut cfg = match (&common.config, dataset) {
        (Some(path), d) => RunConfig::load(path, d)?,
        (None, Some(d)) => RunConfig::for_dataset(d),
        (None, None) => return Err(Error::Config("pass --config or --dataset".into())),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(p) = common.parallelism {
        cfg.parallelism = p;
    }
    if let Some(raw) = &common.raw_path {
        cfg.raw_path = Some(raw.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Work left undone that should still fail the command.
struct Flagged(String);

fn run(command: &Command, cfg: &RunConfig) -> Result<Option<Flagged>> {
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("config.toml"), cfg.to_toml_string()?)?;
    match command {
        Command::TrainClassifier(_) => {
            for &seed in &cfg.seeds {
                let data = pipeline::prepare_data(cfg, seed)?;
                let (_, log) = pipeline::run_train_classifier(cfg, seed, &data)?;
                let last = log.last().expect("epoch 0 is always logged");
                println!(
                    "seed {seed}: balanced accuracy train {:.4} test {:.4}",
                    last.train_balanced_accuracy,
                    last.test_balanced_accuracy.unwrap_or(f64::NAN)
                );
            }
        }
        Command::TrainVae(_) => {
            for &seed in &cfg.seeds {
                let data = pipeline::prepare_data(cfg, seed)?;
                let run = pipeline::run_train_vae(cfg, seed, &data)?;
                println!(
                    "seed {seed}: reconstruction {:.6} -> {:.6}, variance nll {:.4} -> {:.4}",
                    run.warmup[0].reconstruction,
                    run.warmup.last().map_or(f64::NAN, |e| e.reconstruction),
                    run.variance[0].nll,
                    run.variance.last().map_or(f64::NAN, |e| e.nll)
                );
            }
        }
        Command::GenerateCe(_) => {
            let mut invalid = 0;
            for &seed in &cfg.seeds {
                pipeline::check_manifest(cfg, seed)?;
                let (vae, clf) = pipeline::load_models(cfg, seed)?;
                let data = pipeline::prepare_data(cfg, seed)?;
                let rows = pipeline::select_factuals(cfg, seed, &clf, &data.test)?;
                let factuals = data.test.x.select(Axis(0), &rows);
                let summary = pipeline::run_generate(cfg, seed, &vae, &clf, &factuals)?;
                println!("seed {seed}: {} factuals, {} new cell groups, {} invalid", rows.len(), summary.groups, summary.invalid);
                invalid += summary.invalid;
            }
            if invalid > 0 {
                return Ok(Some(Flagged(format!("{invalid} trajectories were flagged invalid"))));
            }
        }
        Command::Evaluate(_) => {
            let rows = pipeline::run_evaluate(cfg)?;
            for r in &rows {
                let s = &r.summary;
                println!(
                    "it={:<4} constraints={:<5} {:<7} seed={:<7} L_D={:.3} L2={:.3} FR={:.3} conf={:.3} viol={:.3}",
                    r.n_iter,
                    r.constraints,
                    r.optimizer,
                    r.seed.map_or_else(|| "pooled".into(), |v| v.to_string()),
                    s.l_d.mean,
                    s.l2.mean,
                    s.flip_ratio,
                    s.confidence.mean,
                    s.violation
                );
            }
        }
        Command::SynthDemo(_) => {
            let mut invalid = 0;
            for &seed in &cfg.seeds {
                let demo = pipeline::run_synth_demo(cfg, seed)?;
                println!(
                    "seed {seed}: mean sqrt det hole {:.4e} vs data {:.4e}; {} factuals",
                    demo.hole_volume,
                    demo.data_volume,
                    demo.factual_rows.len()
                );
                for &opt in &cfg.ce_optimizers {
                    let f = demo.in_cloud_fraction(opt, IN_CLOUD_RADIUS, cfg.parallelism)?;
                    println!("  {opt}: {:.1}% of path points within {IN_CLOUD_RADIUS} of the training cloud", 100.0 * f);
                }
                invalid += demo.trajectories.iter().flat_map(|(_, t)| t).filter(|t| t.flags.invalid).count();
            }
            if invalid > 0 {
                return Ok(Some(Flagged(format!("{invalid} trajectories were flagged invalid"))));
            }
        }
        Command::MetricMap(_) => {
            for &seed in &cfg.seeds {
                pipeline::check_manifest(cfg, seed)?;
                let (vae, clf) = pipeline::load_models(cfg, seed)?;
                let data = pipeline::prepare_data(cfg, seed)?;
                let latent = vae.encode_batch(data.train.x.view())?;
                let dir = cfg.seed_dir(seed);
                let n = cfg.grid_size;
                pipeline::write_grid_csv(&dir.join("metric_map_rsgd.csv"), &pipeline::metric_map(&PullbackMetric(&vae), &latent, n, cfg.parallelism)?)?;
                pipeline::write_grid_csv(
                    &dir.join("metric_map_rsgd_c.csv"),
                    &pipeline::metric_map(&EnhancedMetric(&vae, &clf), &latent, n, cfg.parallelism)?,
                )?;
                println!("seed {seed}: wrote {n}x{n} cost maps to {}", dir.display());
            }
        }
    }
    Ok(None)
}

fn write_error_record(dir: &Path, command: &str, kind: &str, message: &str) {
    let record = serde_json::json!({ "command": command, "kind": kind, "message": message });
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = std::fs::write(dir.join("error.json"), serde_json::to_vec_pretty(&record).unwrap_or_default());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let name = cli.command.name();
    let common = cli.command.common();
    let fallback_out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let cfg = match resolve(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            write_error_record(&fallback_out, name, e.kind(), &e.to_string());
            return ExitCode::from(2);
        }
    };
    match run(&cli.command, &cfg) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Flagged(msg))) => {
            eprintln!("error: {msg}");
            write_error_record(&cfg.out, name, "invalid_artifact", &msg);
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            write_error_record(&cfg.out, name, e.kind(), &e.to_string());
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
