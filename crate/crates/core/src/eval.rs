//! Counterfactual quality metrics, confidence-threshold curves and report
//! tables.

use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::counterfactual::{extract_at_threshold, CeOptimizer, CeTrajectory};
use crate::error::{shape_err, Error, Result};
use crate::linalg::pairwise_sum;
use crate::models::ClassifierModel;

/// Coordinates that differ by more than this count as changed.
pub const DEFAULT_CHANGE_TOLERANCE: f64 = 1e-5;

/// Euclidean distance from `x` to its nearest training row (exact).
pub fn realism_distance(x: ArrayView1<f64>, train: ArrayView2<f64>) -> Result<f64> {
    if train.nrows() == 0 {
        return Err(Error::Config("realism distance needs a non-empty training set".into()));
    }
    if train.ncols() != x.len() {
        return shape_err(format!("query has {} features, training rows have {}", x.len(), train.ncols()));
    }
    let mut best = f64::INFINITY;
    for row in train.rows() {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += (a - b) * (a - b);
            if acc >= best {
                break;
            }
        }
        if acc < best {
            best = acc;
        }
    }
    Ok(best.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Closeness {
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

pub fn closeness(x_ce: ArrayView1<f64>, factual: ArrayView1<f64>, tau0: f64) -> Closeness {
    let mut c = Closeness { l0: 0.0, l1: 0.0, l2: 0.0, linf: 0.0 };
    for (a, b) in x_ce.iter().zip(factual) {
        let d = (a - b).abs();
        if d > tau0 {
            c.l0 += 1.0;
        }
        c.l1 += d;
        c.l2 += d * d;
        c.linf = c.linf.max(d);
    }
    c.l2 = c.l2.sqrt();
    c
}

/// Whether `x_ce` is classified as `target`, and the classifier confidence
/// toward `target`.
pub fn validity(clf: &ClassifierModel, x_ce: ArrayView1<f64>, target: u8) -> Result<(bool, f64)> {
    let p = clf.classify(x_ce)?;
    let confidence = if target == 1 { p } else { 1.0 - p };
    Ok((confidence >= 0.5, confidence))
}

pub fn violation_count(x_ce: ArrayView1<f64>, factual: ArrayView1<f64>, immutable: &[bool], tau0: f64) -> usize {
    x_ce.iter()
        .zip(factual)
        .zip(immutable)
        .filter(|((a, b), &m)| m && (*a - *b).abs() > tau0)
        .count()
}

/// Metrics of one counterfactual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeRecord {
    pub l_d: f64,
    pub closeness: Closeness,
    pub confidence: f64,
    pub flipped: bool,
    pub violation: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub classifier: &'a ClassifierModel,
    pub train: ArrayView2<'a, f64>,
    pub immutable: &'a [bool],
    pub tau0: f64,
    pub target: u8,
}

pub fn evaluate_ce(ctx: &EvalContext<'_>, x_ce: ArrayView1<f64>, factual: ArrayView1<f64>) -> Result<CeRecord> {
    let (flipped, confidence) = validity(ctx.classifier, x_ce, ctx.target)?;
    Ok(CeRecord {
        l_d: realism_distance(x_ce, ctx.train)?,
        closeness: closeness(x_ce, factual, ctx.tau0),
        confidence,
        flipped,
        violation: violation_count(x_ce, factual, ctx.immutable, ctx.tau0),
    })
}

/// Metrics of each trajectory's final point. Trajectories that never
/// produced a step (failed runs) yield `None`.
pub fn evaluate_trajectories(ctx: &EvalContext<'_>, trajectories: &[CeTrajectory], threads: usize) -> Result<Vec<Option<CeRecord>>> {
    crate::parallel::map_indexed(trajectories, threads, |_, t| match t.counterfactual() {
        Some(x) => evaluate_ce(ctx, ArrayView1::from(x), ArrayView1::from(&t.factual[..])).map(Some),
        None => Ok(None),
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population mean and standard deviation with pairwise summation;
    /// `NaN` for an empty sample.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = pairwise_sum(values) / n;
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        Self { mean, std: (pairwise_sum(&sq) / n).sqrt() }
    }
}

/// Aggregates over a set of counterfactuals. Distances and violations are
/// taken over flipped counterfactuals only; confidence over all of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeSummary {
    pub total: usize,
    pub flipped: usize,
    pub l_d: MeanStd,
    pub l0: MeanStd,
    pub l1: MeanStd,
    pub l2: MeanStd,
    pub linf: MeanStd,
    pub confidence: MeanStd,
    pub flip_ratio: f64,
    pub violation: f64,
}

impl CeSummary {
    /// Failed runs (`None`) count as produced but not flipped.
    pub fn from_records(records: &[Option<CeRecord>]) -> Self {
        let valid: Vec<&CeRecord> = records.iter().flatten().filter(|r| r.flipped).collect();
        let pick = |f: &dyn Fn(&CeRecord) -> f64| -> Vec<f64> { valid.iter().map(|r| f(r)).collect() };
        let conf: Vec<f64> = records.iter().flatten().map(|r| r.confidence).collect();
        let viol: Vec<f64> = valid.iter().map(|r| r.violation as f64).collect();
        let total = records.len();
        Self {
            total,
            flipped: valid.len(),
            l_d: MeanStd::of(&pick(&|r| r.l_d)),
            l0: MeanStd::of(&pick(&|r| r.closeness.l0)),
            l1: MeanStd::of(&pick(&|r| r.closeness.l1)),
            l2: MeanStd::of(&pick(&|r| r.closeness.l2)),
            linf: MeanStd::of(&pick(&|r| r.closeness.linf)),
            confidence: MeanStd::of(&conf),
            flip_ratio: if total == 0 { f64::NAN } else { valid.len() as f64 / total as f64 },
            violation: MeanStd::of(&viol).mean,
        }
    }
}

/// One point of a confidence-threshold curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrPoint {
    pub threshold: f64,
    /// Fraction of trajectories that ever reach the threshold.
    pub ctr: f64,
    pub l_d: f64,
    pub l2: f64,
    pub iters: f64,
}

/// For every threshold, the share of trajectories reaching it and the mean
/// realism distance, L2 distance and step index of the first hits.
pub fn ctr_curve(trajectories: &[CeTrajectory], thresholds: &[f64], train: ArrayView2<f64>, threads: usize) -> Result<Vec<CtrPoint>> {
    if thresholds.is_empty() {
        return Err(Error::Config("no confidence thresholds given".into()));
    }
    let per_traj: Vec<Result<Vec<Option<(f64, f64, usize)>>>> = crate::parallel::map_indexed(trajectories, threads, |_, t| {
        thresholds
            .iter()
            .map(|&tau| match extract_at_threshold(t, tau) {
                Some((x, i)) => {
                    let x = ArrayView1::from(x);
                    let l_d = realism_distance(x, train)?;
                    let l2 = closeness(x, ArrayView1::from(&t.factual[..]), 0.0).l2;
                    Ok(Some((l_d, l2, i)))
                }
                None => Ok(None),
            })
            .collect()
    });
    let per_traj: Vec<Vec<Option<(f64, f64, usize)>>> = per_traj.into_iter().collect::<Result<_>>()?;
    Ok(thresholds
        .iter()
        .enumerate()
        .map(|(k, &threshold)| {
            let hits: Vec<(f64, f64, usize)> = per_traj.iter().filter_map(|v| v[k]).collect();
            let mean = |f: &dyn Fn(&(f64, f64, usize)) -> f64| MeanStd::of(&hits.iter().map(f).collect::<Vec<_>>()).mean;
            CtrPoint {
                threshold,
                ctr: if trajectories.is_empty() { f64::NAN } else { hits.len() as f64 / trajectories.len() as f64 },
                l_d: mean(&|h| h.0),
                l2: mean(&|h| h.1),
                iters: mean(&|h| h.2 as f64),
            }
        })
        .collect())
}

pub fn write_ctr_csv(path: &Path, curve: &[CtrPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "ctr", "l_d", "l2", "iters"])?;
    for p in curve {
        w.write_record([p.threshold, p.ctr, p.l_d, p.l2, p.iters].map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step confidence, realism and L2 distance of one trajectory.
pub fn write_trajectory_csv(path: &Path, trajectory: &CeTrajectory, train: ArrayView2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "confidence", "l_d", "l2"])?;
    let f = ArrayView1::from(&trajectory.factual[..]);
    for (i, s) in trajectory.steps.iter().enumerate() {
        let x = ArrayView1::from(&s.x_hat[..]);
        let l_d = realism_distance(x, train)?;
        let l2 = closeness(x, f, 0.0).l2;
        w.write_record([i.to_string(), s.confidence.to_string(), l_d.to_string(), l2.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Results of one (iterations, α, optimizer, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub iterations: usize,
    pub alpha: f64,
    pub optimizer: CeOptimizer,
    pub seed: u64,
    pub records: Vec<Option<CeRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n_iter: usize,
    pub constraints: bool,
    pub optimizer: CeOptimizer,
    /// `None` for rows pooled over seeds.
    pub seed: Option<u64>,
    pub summary: CeSummary,
}

pub const REPORT_COLUMNS: [&str; 18] = [
    "n_iter",
    "constraints",
    "optimizer",
    "L_D_mean",
    "L_D_std",
    "L0_mean",
    "L0_std",
    "L1_mean",
    "L1_std",
    "L2_mean",
    "L2_std",
    "Linf_mean",
    "Linf_std",
    "confidence_mean",
    "confidence_std",
    "FR",
    "violation",
    "seed",
];

/// One row per cell and seed, plus a pooled row per cell when more than
/// one seed contributed. Rows are sorted by iterations, constraint flag,
/// optimizer and seed.
pub fn build_report(cells: &[CellResult]) -> Vec<ReportRow> {
    use std::collections::BTreeMap;
    type Key = (usize, bool, CeOptimizer);
    let mut groups: BTreeMap<Key, BTreeMap<u64, Vec<Option<CeRecord>>>> = BTreeMap::new();
    for c in cells {
        groups
            .entry((c.iterations, c.alpha > 0.0, c.optimizer))
            .or_default()
            .entry(c.seed)
            .or_default()
            .extend(c.records.iter().copied());
    }
    let mut rows = Vec::new();
    for ((n_iter, constraints, optimizer), seeds) in groups {
        for (&seed, records) in &seeds {
            rows.push(ReportRow { n_iter, constraints, optimizer, seed: Some(seed), summary: CeSummary::from_records(records) });
        }
        if seeds.len() > 1 {
            let pooled: Vec<Option<CeRecord>> = seeds.values().flatten().copied().collect();
            rows.push(ReportRow { n_iter, constraints, optimizer, seed: None, summary: CeSummary::from_records(&pooled) });
        }
    }
    rows
}

pub fn write_report(csv_path: &Path, json_path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        let s = &r.summary;
        let mut rec = vec![r.n_iter.to_string(), r.constraints.to_string(), r.optimizer.to_string()];
        for m in [s.l_d, s.l0, s.l1, s.l2, s.linf, s.confidence] {
            rec.push(m.mean.to_string());
            rec.push(m.std.to_string());
        }
        rec.push(s.flip_ratio.to_string());
        rec.push(s.violation.to_string());
        rec.push(r.seed.map_or_else(|| "pooled".to_string(), |v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    std::fs::write(json_path, serde_json::to_string_pretty(rows)?)?;
    Ok(())
}
