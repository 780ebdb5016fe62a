//! End-to-end stages shared by the command-line tool and the acceptance
//! runs: data preparation, training, counterfactual generation, evaluation
//! and the synthetic-surface demonstration.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetKind, RunConfig};
use crate::counterfactual::{generate_batch, read_jsonl, write_jsonl, CeOptimizer, CeTrajectory};
use crate::data::{generate_surface, load_adult, load_gmc, split, GmcOptions, Normalizer, TabularDataset};
use crate::error::{Error, Result};
use crate::eval::{build_report, ctr_curve, evaluate_trajectories, write_ctr_csv, write_report, CellResult, EvalContext, ReportRow};
use crate::geometry::{metric_volume, volume_grid, EnhancedMetric, GridCell, LatentMetric, PullbackMetric};
use crate::models::{
    fit_decoder_variance, train_classifier, train_vae_warmup, ClassifierEpoch, ClassifierModel, RbfEpoch, VaeEpoch, VaeModel,
};
use crate::nn::Checkpoint;
use crate::rng::derived;

pub const CLASSIFIER_FILE: &str = "classifier.ckpt";
pub const VAE_FILE: &str = "vae.ckpt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Normalized train and test splits of one seed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: TabularDataset,
    pub test: TabularDataset,
}

impl PreparedData {
    pub fn normalizer(&self) -> Result<Normalizer> {
        self.train.normalizer()
    }
}

pub fn prepare_data(cfg: &RunConfig, seed: u64) -> Result<PreparedData> {
    let raw = match cfg.dataset {
        DatasetKind::Surface => generate_surface(&cfg.surface_spec(seed))?.data,
        DatasetKind::Adult | DatasetKind::Gmc => {
            let path = cfg
                .raw_path
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{} needs raw_path", cfg.dataset.name())))?;
            if !path.exists() {
                return Err(Error::Config(format!("raw data path {} does not exist", path.display())));
            }
            if cfg.dataset == DatasetKind::Adult {
                load_adult(path)?
            } else {
                load_gmc(path, &GmcOptions { flip_label: cfg.gmc_flip_label })?
            }
        }
    };
    if raw.rejected > 0 {
        log::warn!("{}: {} rows could not be mapped and were dropped", raw.name, raw.rejected);
    }
    let s = split(&raw, RunConfig::component_seed(seed, "split"))?;
    if s.clamped > 0 {
        log::info!("{}: clamped {} test entries to the train range", raw.name, s.clamped);
    }
    Ok(PreparedData { train: s.train, test: s.test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: DatasetKind,
    pub seed: u64,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_manifest(cfg: &RunConfig, seed: u64) -> Result<()> {
    let dir = cfg.seed_dir(seed);
    ensure_dir(&dir)?;
    let m = Manifest { dataset: cfg.dataset, seed };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&m)?)?;
    Ok(())
}

/// Refuses seed directories produced for another dataset.
pub fn check_manifest(cfg: &RunConfig, seed: u64) -> Result<()> {
    let path = cfg.seed_dir(seed).join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.dataset != cfg.dataset || m.seed != seed {
        return Err(Error::Config(format!(
            "{} belongs to dataset {} seed {}, not {} seed {seed}",
            path.display(),
            m.dataset.name(),
            m.seed,
            cfg.dataset.name()
        )));
    }
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_train_classifier(cfg: &RunConfig, seed: u64, data: &PreparedData) -> Result<(ClassifierModel, Vec<ClassifierEpoch>)> {
    let dir = cfg.seed_dir(seed);
    ensure_dir(&dir)?;
    write_manifest(cfg, seed)?;
    let (clf, log) = train_classifier(&data.train, Some(&data.test), &cfg.classifier_config(seed))?;
    clf.to_checkpoint().save(&dir.join(CLASSIFIER_FILE))?;
    write_csv(&dir.join("classifier_log.csv"), &log)?;
    Ok((clf, log))
}

pub struct VaeRun {
    pub vae: VaeModel,
    pub warmup: Vec<VaeEpoch>,
    pub variance: Vec<RbfEpoch>,
}

pub fn run_train_vae(cfg: &RunConfig, seed: u64, data: &PreparedData) -> Result<VaeRun> {
    let dir = cfg.seed_dir(seed);
    ensure_dir(&dir)?;
    write_manifest(cfg, seed)?;
    let (warm, warmup) = train_vae_warmup(&data.train, &cfg.vae_config(seed))?;
    let (vae, variance) = fit_decoder_variance(&warm, &data.train, &cfg.rbf_config(seed)?)?;
    vae.to_checkpoint().save(&dir.join(VAE_FILE))?;
    write_csv(&dir.join("vae_warmup_log.csv"), &warmup)?;
    write_csv(&dir.join("vae_variance_log.csv"), &variance)?;
    Ok(VaeRun { vae, warmup, variance })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Config(format!("missing checkpoint {}", path.display())));
    }
    Checkpoint::load(path)
}

pub fn load_models(cfg: &RunConfig, seed: u64) -> Result<(VaeModel, ClassifierModel)> {
    let dir = cfg.seed_dir(seed);
    let vae = VaeModel::from_checkpoint(&load_checkpoint(&dir.join(VAE_FILE))?)?;
    let clf = ClassifierModel::from_checkpoint(&load_checkpoint(&dir.join(CLASSIFIER_FILE))?)?;
    if vae.variance.is_none() {
        return Err(Error::Config(format!("{} has no fitted decoder variance", dir.join(VAE_FILE).display())));
    }
    Ok((vae, clf))
}

/// Test rows of the non-target class that the classifier also assigns to
/// the non-target class, capped at `ce_max_factuals` by a seeded subsample
/// kept in row order.
pub fn select_factuals(cfg: &RunConfig, seed: u64, clf: &ClassifierModel, test: &TabularDataset) -> Result<Vec<usize>> {
    let source = 1 - cfg.ce_target;
    let predicted = clf.predict(test.x.view())?;
    let mut rows: Vec<usize> = (0..test.len()).filter(|&i| test.y[i] == source && predicted[i] == source).collect();
    if cfg.ce_max_factuals > 0 && rows.len() > cfg.ce_max_factuals {
        let mut rng = derived(seed, "factuals");
        let mut keep: Vec<usize> = sample(&mut rng, rows.len(), cfg.ce_max_factuals).into_vec();
        keep.sort_unstable();
        rows = keep.into_iter().map(|k| rows[k]).collect();
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenerateSummary {
    /// (optimizer, α) groups generated in this call.
    pub groups: usize,
    /// Trajectories flagged invalid among them.
    pub invalid: usize,
}

pub fn trajectory_file(dir: &Path, optimizer: CeOptimizer, iterations: usize, alpha: f64) -> PathBuf {
    dir.join("trajectories").join(format!("{optimizer}_it{iterations}_alpha{alpha}.jsonl"))
}

/// Runs every (optimizer, α) pair for the largest iteration budget and
/// stores each budget as a prefix of that run. Groups whose files all exist
/// are skipped.
pub fn run_generate(cfg: &RunConfig, seed: u64, vae: &VaeModel, clf: &ClassifierModel, factuals: &Array2<f64>) -> Result<GenerateSummary> {
    let dir = cfg.seed_dir(seed);
    ensure_dir(&dir.join("trajectories"))?;
    let max_iter = *cfg.ce_iterations.iter().max().expect("validated non-empty");
    let mut summary = GenerateSummary::default();
    for &opt in &cfg.ce_optimizers {
        for &alpha in &cfg.ce_alphas {
            let files: Vec<(usize, PathBuf)> =
                cfg.ce_iterations.iter().map(|&it| (it, trajectory_file(&dir, opt, it, alpha))).collect();
            if files.iter().all(|(_, p)| p.exists()) {
                log::info!("seed {seed}: {opt} α={alpha} already generated");
                continue;
            }
            let ce = cfg.ce_config(opt, max_iter, alpha);
            let trajs = generate_batch(vae, clf, factuals.view(), &ce, cfg.parallelism)?;
            summary.invalid += trajs.iter().filter(|t| t.flags.invalid).count();
            for (it, path) in files {
                let cut: Vec<CeTrajectory> = trajs.iter().map(|t| t.truncated(it)).collect();
                write_jsonl(&path, &cut)?;
            }
            summary.groups += 1;
        }
    }
    Ok(summary)
}

/// Evaluates every cell of every seed, writes `report.csv`, `report.json`
/// and per-seed CTR curves, and returns the report rows.
pub fn run_evaluate(cfg: &RunConfig) -> Result<Vec<ReportRow>> {
    let mut cells = Vec::new();
    let max_iter = *cfg.ce_iterations.iter().max().expect("validated non-empty");
    for &seed in &cfg.seeds {
        check_manifest(cfg, seed)?;
        let dir = cfg.seed_dir(seed);
        let data = prepare_data(cfg, seed)?;
        let (_, clf) = load_models(cfg, seed)?;
        let mask = data.train.immutable_mask();
        let ctx = EvalContext { classifier: &clf, train: data.train.x.view(), immutable: &mask, tau0: cfg.tau0, target: cfg.ce_target };
        for &opt in &cfg.ce_optimizers {
            for &alpha in &cfg.ce_alphas {
                for &it in &cfg.ce_iterations {
                    let path = trajectory_file(&dir, opt, it, alpha);
                    if !path.exists() {
                        return Err(Error::Config(format!("missing trajectories {}", path.display())));
                    }
                    let trajs = read_jsonl(&path)?;
                    if trajs.iter().any(|t| t.factual.len() != data.train.dim()) {
                        return Err(Error::Config(format!("{} does not match the {} feature layout", path.display(), cfg.dataset.name())));
                    }
                    let records = evaluate_trajectories(&ctx, &trajs, cfg.parallelism)?;
                    cells.push(CellResult { iterations: it, alpha, optimizer: opt, seed, records });
                    if it == max_iter {
                        let curve = ctr_curve(&trajs, &cfg.ce_thresholds, data.train.x.view(), cfg.parallelism)?;
                        write_ctr_csv(&dir.join(format!("ctr_{opt}_alpha{alpha}.csv")), &curve)?;
                    }
                }
            }
        }
    }
    let rows = build_report(&cells);
    ensure_dir(&cfg.out)?;
    write_report(&cfg.out.join("report.csv"), &cfg.out.join("report.json"), &rows)?;
    Ok(rows)
}

/// Whole pipeline for every seed: train both models, generate and evaluate.
pub fn run_all(cfg: &RunConfig) -> Result<Vec<ReportRow>> {
    for &seed in &cfg.seeds {
        let data = prepare_data(cfg, seed)?;
        let (clf, _) = run_train_classifier(cfg, seed, &data)?;
        let run = run_train_vae(cfg, seed, &data)?;
        let rows = select_factuals(cfg, seed, &clf, &data.test)?;
        run_generate(cfg, seed, &run.vae, &clf, &data.test.x.select(Axis(0), &rows))?;
    }
    run_evaluate(cfg)
}

/// `sqrt(det M)` over an `n × n` grid covering the training latent codes
/// with a 25% margin on each side.
pub fn metric_map(metric: &dyn LatentMetric, latent: &Array2<f64>, n: usize, threads: usize) -> Result<Vec<GridCell>> {
    if latent.ncols() != 2 {
        return Err(Error::Config(format!("cost maps need a 2-d latent space, got {}", latent.ncols())));
    }
    let lo = latent.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b));
    let hi = latent.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
    let pad = (&hi - &lo) * 0.25;
    Ok(volume_grid(metric, [lo[0] - pad[0], lo[1] - pad[1]], [hi[0] + pad[0], hi[1] + pad[1]], n, threads))
}

pub fn write_grid_csv(path: &Path, cells: &[GridCell]) -> Result<()> {
    write_csv(path, cells)
}

/// Latent codes of noise-free sheet points on an `n × n` grid over the
/// hole's bounding square, keeping those strictly inside `shrink · r`.
pub fn hole_latent_codes(cfg: &RunConfig, seed: u64, vae: &VaeModel, norm: &Normalizer, n: usize, shrink: f64) -> Result<Array2<f64>> {
    let spec = cfg.surface_spec(seed);
    let r = spec.hole_radius * shrink;
    let mut rows = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let a = -r + 2.0 * r * (i as f64 + 0.5) / n as f64;
            let b = -r + 2.0 * r * (j as f64 + 0.5) / n as f64;
            if a * a + b * b >= r * r {
                continue;
            }
            let p = crate::data::surface_point([spec.hole_center[0] + a, spec.hole_center[1] + b], spec.amplitude);
            let (x, _) = norm.apply(&Array2::from_shape_vec((1, 3), p.to_vec()).expect("3 values"));
            rows.push(vae.encode(x.row(0))?);
        }
    }
    let mut out = Array2::zeros((rows.len(), vae.latent_dim()));
    for (k, z) in rows.iter().enumerate() {
        out.row_mut(k).assign(z);
    }
    Ok(out)
}

pub fn mean_volume(metric: &dyn LatentMetric, codes: &Array2<f64>, threads: usize) -> Result<f64> {
    let rows: Vec<Array1<f64>> = codes.rows().into_iter().map(|r| r.to_owned()).collect();
    let vols: Vec<Result<f64>> = crate::parallel::map_indexed(&rows, threads, |_, z| metric.metric_at(z.view()).map(|m| metric_volume(&m)));
    let vols: Vec<f64> = vols.into_iter().collect::<Result<_>>()?;
    Ok(crate::linalg::pairwise_sum(&vols) / vols.len().max(1) as f64)
}

/// Test negatives whose straight path to the positive region crosses the
/// hole: below it and within half a radius of its vertical axis, in raw
/// coordinates.
pub fn surface_factuals_below_hole(cfg: &RunConfig, seed: u64, clf: &ClassifierModel, test: &TabularDataset) -> Result<Vec<usize>> {
    let spec = cfg.surface_spec(seed);
    let norm = test.normalizer()?;
    let candidates = select_factuals(&RunConfig { ce_max_factuals: 0, ..cfg.clone() }, seed, clf, test)?;
    Ok(candidates
        .into_iter()
        .filter(|&i| {
            let raw = norm.invert(test.x.row(i));
            (raw[0] - spec.hole_center[0]).abs() < 0.5 * spec.hole_radius && raw[1] < spec.hole_center[1] - 1.5 * spec.hole_radius
        })
        .collect())
}

/// Raw ambient distance under which a surface path point counts as on the
/// training cloud.
pub const IN_CLOUD_RADIUS: f64 = 0.15;

/// Fraction of points within `radius` of the nearest row of `cloud`.
pub fn fraction_near(points: &[Array1<f64>], cloud: &Array2<f64>, radius: f64, threads: usize) -> Result<f64> {
    let d: Vec<Result<f64>> =
        crate::parallel::map_indexed(points, threads, |_, p| crate::eval::realism_distance(p.view(), cloud.view()));
    let d: Vec<f64> = d.into_iter().collect::<Result<_>>()?;
    Ok(d.iter().filter(|&&v| v <= radius).count() as f64 / d.len().max(1) as f64)
}

/// Outputs of [`run_synth_demo`].
pub struct SynthDemo {
    pub data: PreparedData,
    pub vae: VaeModel,
    pub classifier: ClassifierModel,
    pub factual_rows: Vec<usize>,
    pub trajectories: Vec<(CeOptimizer, Vec<CeTrajectory>)>,
    pub hole_volume: f64,
    pub data_volume: f64,
}

impl SynthDemo {
    /// Fraction of all trajectory points of `optimizer` (decoded, in raw
    /// coordinates) within `radius` of the raw training cloud.
    pub fn in_cloud_fraction(&self, optimizer: CeOptimizer, radius: f64, threads: usize) -> Result<f64> {
        let norm = self.data.normalizer()?;
        let cloud = norm.invert_batch(self.data.train.x.view());
        let trajs = self
            .trajectories
            .iter()
            .find(|(o, _)| *o == optimizer)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Config(format!("no {optimizer} trajectories in this run")))?;
        let points: Vec<Array1<f64>> =
            trajs.iter().flat_map(|t| t.steps.iter().map(|s| norm.invert(ArrayView1::from(&s.x_hat[..])))).collect();
        fraction_near(&points, &cloud, radius, threads)
    }
}

/// Trains surface models for one seed, writes the cost maps
/// (`metric_map_rsgd.csv`, `metric_map_rsgd_c.csv`) and one trajectory CSV
/// per optimizer.
pub fn run_synth_demo(cfg: &RunConfig, seed: u64) -> Result<SynthDemo> {
    if cfg.dataset != DatasetKind::Surface {
        return Err(Error::Config("synth-demo runs on the surface dataset".into()));
    }
    if cfg.vae_latent != 2 {
        return Err(Error::Config("synth-demo needs vae_latent = 2".into()));
    }
    let dir = cfg.seed_dir(seed);
    let data = prepare_data(cfg, seed)?;
    let (clf, _) = run_train_classifier(cfg, seed, &data)?;
    let run = run_train_vae(cfg, seed, &data)?;
    let vae = run.vae;
    let latent = vae.encode_batch(data.train.x.view())?;
    let threads = cfg.parallelism;

    let pull = PullbackMetric(&vae);
    let enh = EnhancedMetric(&vae, &clf);
    write_grid_csv(&dir.join("metric_map_rsgd.csv"), &metric_map(&pull, &latent, cfg.grid_size, threads)?)?;
    write_grid_csv(&dir.join("metric_map_rsgd_c.csv"), &metric_map(&enh, &latent, cfg.grid_size, threads)?)?;

    let norm = data.normalizer()?;
    let hole = hole_latent_codes(cfg, seed, &vae, &norm, cfg.grid_size, 0.8)?;
    let hole_volume = mean_volume(&enh, &hole, threads)?;
    let data_volume = mean_volume(&enh, &latent, threads)?;

    let rows = surface_factuals_below_hole(cfg, seed, &clf, &data.test)?;
    let factuals = data.test.x.select(Axis(0), &rows);
    let iterations = *cfg.ce_iterations.iter().max().expect("validated non-empty");
    let alpha = cfg.ce_alphas[0];
    let mut trajectories = Vec::new();
    for &opt in &cfg.ce_optimizers {
        let trajs = generate_batch(&vae, &clf, factuals.view(), &cfg.ce_config(opt, iterations, alpha), threads)?;
        write_surface_paths(&dir.join(format!("paths_{opt}.csv")), &trajs, &norm)?;
        trajectories.push((opt, trajs));
    }
    Ok(SynthDemo { data, vae, classifier: clf, factual_rows: rows, trajectories, hole_volume, data_volume })
}

#[derive(Serialize)]
struct PathRow {
    trajectory: usize,
    step: usize,
    z1: f64,
    z2: f64,
    x1: f64,
    x2: f64,
    x3: f64,
    confidence: f64,
}

fn write_surface_paths(path: &Path, trajs: &[CeTrajectory], norm: &Normalizer) -> Result<()> {
    let mut rows = Vec::new();
    for (t, traj) in trajs.iter().enumerate() {
        for (s, step) in traj.steps.iter().enumerate() {
            let x = norm.invert(ArrayView1::from(&step.x_hat[..]));
            rows.push(PathRow { trajectory: t, step: s, z1: step.z[0], z2: step.z[1], x1: x[0], x2: x[1], x3: x[2], confidence: step.confidence });
        }
    }
    write_csv(path, &rows)
}
