//! Latent-space counterfactual search: plain gradient descent (SGD) and
//! Riemannian descent under the decoder pull-back metric (RSGD) or the
//! classifier-enhanced metric (RSGD-C).

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::geometry::{riemannian_gradient, EnhancedMetric, LatentMetric, PullbackMetric};
use crate::models::{ClassifierModel, VaeModel};
use crate::nn::{sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeOptimizer {
    Sgd,
    Rsgd,
    RsgdC,
}

impl CeOptimizer {
    pub const ALL: [CeOptimizer; 3] = [CeOptimizer::Sgd, CeOptimizer::Rsgd, CeOptimizer::RsgdC];

    pub fn name(self) -> &'static str {
        match self {
            CeOptimizer::Sgd => "sgd",
            CeOptimizer::Rsgd => "rsgd",
            CeOptimizer::RsgdC => "rsgd_c",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(CeOptimizer::Sgd),
            "rsgd" => Ok(CeOptimizer::Rsgd),
            "rsgd_c" | "rsgd-c" => Ok(CeOptimizer::RsgdC),
            other => Err(Error::Config(format!("unknown counterfactual optimizer {other:?}"))),
        }
    }
}

impl std::fmt::Display for CeOptimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeConfig {
    pub optimizer: CeOptimizer,
    pub step_size: f64,
    pub iterations: usize,
    /// Weight of the `‖μ(z) − x‖₂` fidelity term.
    pub alpha: f64,
    pub target: u8,
    /// Scale every update direction to unit length (all optimizers).
    pub normalize_gradient: bool,
}

impl Default for CeConfig {
    fn default() -> Self {
        Self { optimizer: CeOptimizer::Rsgd, step_size: 0.1, iterations: 100, alpha: 0.0, target: 1, normalize_gradient: true }
    }
}

impl CeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("fidelity weight must be non-negative, got {}", self.alpha)));
        }
        if self.target > 1 {
            return Err(Error::Config(format!("target label must be 0 or 1, got {}", self.target)));
        }
        Ok(())
    }
}

/// Loss, latent gradient and the decoded point at one latent code.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub gradient: Array1<f64>,
    pub x_hat: Array1<f64>,
    /// `c(x̂)` oriented toward the target label.
    pub confidence: f64,
}

/// `BCE(c(μ(z)), y) + α‖μ(z) − x‖₂` and its gradient in `z`. The fidelity
/// term contributes a zero subgradient where `μ(z) = x`.
pub fn ce_loss(
    vae: &VaeModel,
    clf: &ClassifierModel,
    z: ArrayView1<f64>,
    factual: ArrayView1<f64>,
    target: u8,
    alpha: f64,
) -> Result<LossEval> {
    if factual.len() != vae.ambient_dim() {
        return shape_err(format!("factual has {} features, the decoder emits {}", factual.len(), vae.ambient_dim()));
    }
    let (x_hat, jmu) = vae.decode_mean_with_jacobian(z)?;
    let (logit, dlogit, _) = clf.logit_with_jacobian(x_hat.view())?;
    let y = f64::from(target);
    let p = sigmoid(logit);
    let diff = &x_hat - &factual;
    let dist = diff.dot(&diff).sqrt();
    let loss = y * softplus(-logit) + (1.0 - y) * softplus(logit) + alpha * dist;
    let mut dx = dlogit * (p - y);
    if alpha > 0.0 && dist > 0.0 {
        dx = dx + diff * (alpha / dist);
    }
    let gradient = jmu.t().dot(&dx);
    if !loss.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite counterfactual loss at z = {:?}", z.to_vec())));
    }
    let confidence = if target == 1 { p } else { 1.0 - p };
    Ok(LossEval { loss, gradient, x_hat, confidence })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeStep {
    pub z: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub confidence: f64,
    pub loss: f64,
    /// Norm of the Euclidean latent gradient at this point.
    pub grad_norm: f64,
    /// Diagonal jitter of the metric used to leave this point.
    pub jitter: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryFlags {
    pub invalid: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeTrajectory {
    pub factual: Vec<f64>,
    /// Initial point followed by one entry per update.
    pub steps: Vec<CeStep>,
    pub flags: TrajectoryFlags,
}

impl CeTrajectory {
    fn failed(factual: ArrayView1<f64>, err: &Error) -> Self {
        Self {
            factual: factual.to_vec(),
            steps: Vec::new(),
            flags: TrajectoryFlags { invalid: true, error: Some(err.to_string()) },
        }
    }

    /// Decoded point after the last update.
    pub fn counterfactual(&self) -> Option<&[f64]> {
        self.steps.last().map(|s| s.x_hat.as_slice())
    }

    pub fn final_confidence(&self) -> Option<f64> {
        self.steps.last().map(|s| s.confidence)
    }

    /// The first `iterations` updates of this trajectory.
    pub fn truncated(&self, iterations: usize) -> CeTrajectory {
        CeTrajectory {
            factual: self.factual.clone(),
            steps: self.steps.iter().take(iterations + 1).cloned().collect(),
            flags: self.flags.clone(),
        }
    }
}

/// Runs the configured optimizer from the posterior mean of `factual`.
pub fn generate_ce(vae: &VaeModel, clf: &ClassifierModel, factual: ArrayView1<f64>, config: &CeConfig) -> Result<CeTrajectory> {
    match config.optimizer {
        CeOptimizer::Sgd => generate_ce_with_metric(vae, clf, factual, config, None),
        CeOptimizer::Rsgd => generate_ce_with_metric(vae, clf, factual, config, Some(&PullbackMetric(vae))),
        CeOptimizer::RsgdC => generate_ce_with_metric(vae, clf, factual, config, Some(&EnhancedMetric(vae, clf))),
    }
}

/// Descent with update `z ← z − η r/‖r‖`, where `r = M(z)⁻¹ ∇f` when a
/// metric is given and `r = ∇f` otherwise. A metric that cannot be
/// factorized ends the run early with the trajectory flagged invalid.
pub fn generate_ce_with_metric(
    vae: &VaeModel,
    clf: &ClassifierModel,
    factual: ArrayView1<f64>,
    config: &CeConfig,
    metric: Option<&dyn LatentMetric>,
) -> Result<CeTrajectory> {
    config.validate()?;
    let mut z = vae.encode(factual)?;
    let mut eval = ce_loss(vae, clf, z.view(), factual, config.target, config.alpha)?;
    let mut steps = Vec::with_capacity(config.iterations + 1);
    let mut flags = TrajectoryFlags::default();
    let record = |z: &Array1<f64>, e: &LossEval| CeStep {
        z: z.to_vec(),
        x_hat: e.x_hat.to_vec(),
        confidence: e.confidence,
        loss: e.loss,
        grad_norm: e.gradient.dot(&e.gradient).sqrt(),
        jitter: 0.0,
    };
    steps.push(record(&z, &eval));
    for _ in 0..config.iterations {
        let direction = match metric {
            None => eval.gradient.clone(),
            Some(m) => match m.metric_at(z.view()) {
                Ok(tensor) => {
                    steps.last_mut().expect("initial step").jitter = tensor.jitter;
                    riemannian_gradient(&tensor, eval.gradient.view())?
                }
                Err(err @ Error::SingularMetric { .. }) => {
                    flags = TrajectoryFlags { invalid: true, error: Some(err.to_string()) };
                    break;
                }
                Err(err) => return Err(err),
            },
        };
        let norm = direction.dot(&direction).sqrt();
        let update = if config.normalize_gradient {
            if norm > 0.0 {
                direction * (config.step_size / norm)
            } else {
                direction
            }
        } else {
            direction * config.step_size
        };
        z = &z - &update;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("latent iterate became non-finite".into()));
        }
        eval = ce_loss(vae, clf, z.view(), factual, config.target, config.alpha)?;
        steps.push(record(&z, &eval));
    }
    Ok(CeTrajectory { factual: factual.to_vec(), steps, flags })
}

/// First post-update step whose confidence reaches `tau`, with its index.
pub fn extract_at_threshold(traj: &CeTrajectory, tau: f64) -> Option<(&[f64], usize)> {
    traj.steps
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, s)| s.confidence >= tau)
        .map(|(i, s)| (s.x_hat.as_slice(), i))
}

/// One trajectory per factual row, in row order. Failures become flagged
/// trajectories instead of aborting the batch.
pub fn generate_batch(
    vae: &VaeModel,
    clf: &ClassifierModel,
    factuals: ArrayView2<f64>,
    config: &CeConfig,
    threads: usize,
) -> Result<Vec<CeTrajectory>> {
    config.validate()?;
    let rows: Vec<ArrayView1<f64>> = factuals.rows().into_iter().collect();
    Ok(crate::parallel::map_indexed(&rows, threads, |_, x| {
        generate_ce(vae, clf, *x, config).unwrap_or_else(|e| CeTrajectory::failed(*x, &e))
    }))
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    z: Vec<f64>,
    x_hat: Vec<f64>,
    confidence: f64,
    loss: f64,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    factual: Vec<f64>,
    steps: Vec<StepRecord>,
    flags: TrajectoryFlags,
}

/// One JSON object per line: `{factual, steps: [{z, x_hat, confidence, loss}], flags}`.
pub fn write_jsonl(path: &Path, trajectories: &[CeTrajectory]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for t in trajectories {
            let rec = TrajectoryRecord {
                factual: t.factual.clone(),
                steps: t
                    .steps
                    .iter()
                    .map(|s| StepRecord { z: s.z.clone(), x_hat: s.x_hat.clone(), confidence: s.confidence, loss: s.loss })
                    .collect(),
                flags: t.flags.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Reads trajectories written by [`write_jsonl`]. Gradient norms and jitter
/// are not stored and come back as zero.
pub fn read_jsonl(path: &Path) -> Result<Vec<CeTrajectory>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(CeTrajectory {
            factual: rec.factual,
            steps: rec
                .steps
                .into_iter()
                .map(|s| CeStep { z: s.z, x_hat: s.x_hat, confidence: s.confidence, loss: s.loss, grad_norm: 0.0, jitter: 0.0 })
                .collect(),
            flags: rec.flags,
        });
    }
    Ok(out)
}
