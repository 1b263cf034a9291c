//! Evaluation metrics: the uncertainty-volume measure, held-out risk
//! reports, per-tile volume maps, coverage deviation diagnostics, and the
//! multi-split replication harness that checks the calibration guarantees
//! empirically.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::approximation::{ApproxError, PrincipalBasis};
use crate::calibration::{
    adaptive_k, coverage_loss, reconstruction_loss, run_calibration, CalibrationError,
    CalibrationResult, ChosenParams, Method, PatchContext, PipelineParams, RiskConfig, ScaledIntervals,
};
use crate::samplers::{generate_dataset, DatasetPair, GaussianTask, PosteriorSampler, SamplerError};
use crate::seed::SeedSpec;
use crate::tensor::FlatVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("epsilon must be positive")]
    BadEpsilon,
    #[error("volume needs at least one axis")]
    NoAxes,
    #[error("negative or non-finite interval width")]
    BadWidth,
    #[error("calibration abstained; nothing to evaluate")]
    Abstained,
    #[error("test set is empty")]
    NoInstances,
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Numerical-stability offset for the volume computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeConfig {
    pub epsilon: f64,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        Self { epsilon: 1e-10 }
    }
}

/// d-th root of the product of interval widths, computed in the log
/// domain: `exp(mean(ln(width_i + ε))) − ε`, clamped at zero. Axes beyond
/// the active ones must be passed as zero widths.
pub fn uncertainty_volume(widths: &[f64], epsilon: f64) -> Result<f64, MetricsError> {
    if epsilon <= 0.0 {
        return Err(MetricsError::BadEpsilon);
    }
    if widths.is_empty() {
        return Err(MetricsError::NoAxes);
    }
    if widths.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(MetricsError::BadWidth);
    }
    let log_sum: f64 = widths.iter().map(|w| (w + epsilon).ln()).sum();
    Ok(((log_sum / widths.len() as f64).exp() - epsilon).max(0.0))
}

/// Volume from a precomputed sum of `ln(width + ε)` over `active_k` axes,
/// padding the remaining `dim - active_k` axes at width zero. Used by the
/// grid scans, where the per-axis log sums are shared across grid points.
pub(crate) fn volume_from_log_sum(active_log_sum: f64, active_k: usize, dim: usize, epsilon: f64) -> f64 {
    let total = active_log_sum + (dim - active_k) as f64 * epsilon.ln();
    ((total / dim as f64).exp() - epsilon).max(0.0)
}

/// Per-axis boundary deviations of one instance: `h_i` is the distance of
/// the projected ground truth past its scaled interval (0 inside), `b_i`
/// the miss indicator, and the energy weights squared deviations by the
/// squared singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationDiagnostics {
    pub h: Vec<f64>,
    pub b: Vec<bool>,
    pub energy: f64,
}

pub fn deviation_diagnostics(
    basis: &PrincipalBasis,
    y: &FlatVector,
    lambda: f64,
) -> Result<DeviationDiagnostics, MetricsError> {
    let proj = basis.project(y)?;
    let k = basis.k();
    let mut h = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    let mut energy = 0.0;
    for i in 0..k {
        let over = (proj[i] - lambda * basis.hi()[i]).max(0.0);
        let under = (lambda * basis.lo()[i] - proj[i]).max(0.0);
        let dev = over + under;
        h.push(dev);
        b.push(dev > 0.0);
        energy += basis.singular_values()[i].powi(2) * dev.powi(2);
    }
    Ok(DeviationDiagnostics { h, b, energy })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Five-number-ish summary for the per-instance retained dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistSummary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl DistSummary {
    pub fn from_counts(values: &[usize]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0, median: 0.0, min: 0.0, max: 0.0 };
        }
        let as_f: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let stats = Stats::from_values(&as_f);
        let mut sorted = as_f.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        Self {
            mean: stats.mean,
            std: stats.std,
            median,
            min: sorted[0],
            max: *sorted.last().expect("nonempty"),
        }
    }
}

/// Held-out risk report for one calibrated pipeline on one test split.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub method: Method,
    pub abstained: bool,
    pub n_instances: usize,
    pub chosen: Option<ChosenParams>,
    /// Mean/std over instances of the weighted coverage loss at the
    /// chosen parameters.
    pub coverage_risk: Stats,
    /// Mean/std over instances of the reconstruction loss at the chosen
    /// parameters (zero up to roundoff for the exact procedures).
    pub recon_risk: Stats,
    /// Mean/std over instances of the uncertainty volume.
    pub volume: Stats,
    /// Interval sizes pooled over active axes only.
    pub interval_active: Stats,
    /// Interval sizes pooled over all `d` axes, inactive ones at zero.
    pub interval_padded: Stats,
    /// Distribution of the per-instance retained dimension k̂.
    pub k_hat: DistSummary,
    /// Calibrated axis budget K̂ (reduced procedure only).
    pub k_cap: Option<usize>,
    /// Number of axes built per instance at evaluation time.
    pub k_budget: usize,
}

impl RiskReport {
    fn abstention(method: Method, n_instances: usize) -> Self {
        let zero = Stats { mean: 0.0, std: 0.0 };
        Self {
            method,
            abstained: true,
            n_instances,
            chosen: None,
            coverage_risk: zero,
            recon_risk: zero,
            volume: zero,
            interval_active: zero,
            interval_padded: zero,
            k_hat: DistSummary::from_counts(&[]),
            k_cap: None,
            k_budget: 0,
        }
    }
}

/// Test-time pipeline parameters: the reduced procedure evaluates with the
/// calibrated axis budget K̂ and draws exactly K̂ samples.
fn test_params(params: &PipelineParams, chosen: &ChosenParams) -> PipelineParams {
    let mut p = params.clone();
    if let Some(k_cap) = chosen.k_cap {
        p.k = k_cap;
        p.n_samples = k_cap;
    }
    p
}

/// Applies a calibrated pipeline to held-out pairs: fresh samples and a
/// fresh approximation per instance, losses and volumes at the chosen
/// parameters.
pub fn evaluate(
    test: &[DatasetPair],
    sampler: &dyn PosteriorSampler,
    seed: &SeedSpec,
    params: &PipelineParams,
    calres: &CalibrationResult,
    patch: Option<&PatchContext>,
) -> Result<RiskReport, MetricsError> {
    let chosen = calres.chosen.as_ref().ok_or(MetricsError::Abstained)?;
    if test.is_empty() {
        return Err(MetricsError::NoInstances);
    }
    let eff = test_params(params, chosen);
    let instances = crate::calibration::approximate_pairs(test, sampler, seed, &eff, patch)?;

    let lambda = chosen.lambda2;
    let mut cov = Vec::with_capacity(instances.len());
    let mut recon = Vec::with_capacity(instances.len());
    let mut vols = Vec::with_capacity(instances.len());
    let mut khats = Vec::with_capacity(instances.len());
    let mut active_widths = Vec::new();
    let mut padded_widths = Vec::new();
    for inst in &instances {
        let k_active = match chosen.lambda1 {
            Some(l1) => adaptive_k(inst.basis.weights(), l1),
            None => inst.basis.k(),
        };
        cov.push(coverage_loss(&inst.basis, &inst.y, lambda, k_active)?.clamp(0.0, 1.0));
        recon.push(reconstruction_loss(&inst.basis, &inst.y, k_active, params.risk.q)?.clamp(0.0, 1.0));
        let intervals = ScaledIntervals::new(&inst.basis, lambda, k_active)?;
        let padded = intervals.padded_widths(inst.basis.dim());
        vols.push(uncertainty_volume(&padded, eff.epsilon)?);
        active_widths.extend_from_slice(&padded[..k_active]);
        padded_widths.extend_from_slice(&padded);
        khats.push(k_active);
    }

    Ok(RiskReport {
        method: calres.method,
        abstained: false,
        n_instances: instances.len(),
        chosen: Some(*chosen),
        coverage_risk: Stats::from_values(&cov),
        recon_risk: Stats::from_values(&recon),
        volume: Stats::from_values(&vols),
        interval_active: Stats::from_values(&active_widths),
        interval_padded: Stats::from_values(&padded_widths),
        k_hat: DistSummary::from_counts(&khats),
        k_cap: chosen.k_cap,
        k_budget: eff.k,
    })
}

/// Mean per-tile uncertainty volume over an image dataset, as a
/// `rows × cols` grid in tile order. Requires a patch context.
pub fn volume_map(
    pairs: &[DatasetPair],
    sampler: &dyn PosteriorSampler,
    seed: &SeedSpec,
    params: &PipelineParams,
    calres: &CalibrationResult,
    ctx: &PatchContext,
) -> Result<Vec<Vec<f64>>, MetricsError> {
    let chosen = calres.chosen.as_ref().ok_or(MetricsError::Abstained)?;
    if pairs.is_empty() {
        return Err(MetricsError::NoInstances);
    }
    let (rows, cols) = ctx
        .spec
        .tile_grid(ctx.height, ctx.width)
        .map_err(|_| MetricsError::Calibration(CalibrationError::MixedShapes))?;
    let eff = test_params(params, chosen);
    let instances = crate::calibration::approximate_pairs(pairs, sampler, seed, &eff, Some(ctx))?;
    let tiles = rows * cols;

    let mut sums = vec![0.0; tiles];
    for (i, inst) in instances.iter().enumerate() {
        let k_active = match chosen.lambda1 {
            Some(l1) => adaptive_k(inst.basis.weights(), l1),
            None => inst.basis.k(),
        };
        let intervals = ScaledIntervals::new(&inst.basis, chosen.lambda2, k_active)?;
        let vol = uncertainty_volume(&intervals.padded_widths(inst.basis.dim()), eff.epsilon)?;
        sums[i % tiles] += vol;
    }
    let n_images = pairs.len() as f64;
    Ok((0..rows)
        .map(|r| (0..cols).map(|c| sums[r * cols + c] / n_images).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictStatus {
    Pass,
    Fail,
    Insufficient,
}

/// Empirical check of the calibration guarantee over replicates: the
/// fraction of replicates whose held-out risks exceed their caps must stay
/// within `delta` plus Monte-Carlo slack `2·sqrt(delta(1-delta)/R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub replicates: usize,
    pub abstentions: usize,
    pub coverage_violations: usize,
    pub recon_violations: usize,
    pub joint_violations: usize,
    pub violation_fraction: f64,
    pub bound: f64,
    pub status: VerdictStatus,
}

pub fn verdict(reports: &[RiskReport], risk: &RiskConfig) -> Verdict {
    let r = reports.len();
    let mut abstentions = 0;
    let mut cov_v = 0;
    let mut rec_v = 0;
    let mut joint = 0;
    for report in reports {
        if report.abstained {
            abstentions += 1;
            continue;
        }
        let cov_bad = report.coverage_risk.mean > risk.alpha;
        let rec_bad = report.method.dual_risk() && report.recon_risk.mean > risk.beta;
        cov_v += usize::from(cov_bad);
        rec_v += usize::from(rec_bad);
        joint += usize::from(cov_bad || rec_bad);
    }
    let fraction = if r == 0 { 0.0 } else { joint as f64 / r as f64 };
    let bound = risk.delta + 2.0 * (risk.delta * (1.0 - risk.delta) / r.max(1) as f64).sqrt();
    let status = if r == 0 {
        VerdictStatus::Insufficient
    } else if fraction <= bound {
        VerdictStatus::Pass
    } else {
        VerdictStatus::Fail
    };
    Verdict {
        replicates: r,
        abstentions,
        coverage_violations: cov_v,
        recon_violations: rec_v,
        joint_violations: joint,
        violation_fraction: fraction,
        bound,
        status,
    }
}

/// Task, pipeline and split sizes for replicated runs.
#[derive(Debug, Clone)]
pub struct ReplicateSetup<'a> {
    pub task: &'a GaussianTask,
    pub params: &'a PipelineParams,
    pub n_cal: usize,
    pub n_test: usize,
    pub patch: Option<PatchContext>,
}

/// One independent calibration/test split: generates a fresh dataset from
/// the replicate's child seed, calibrates, and evaluates. Abstention is a
/// first-class outcome, not an error.
pub fn run_replicate(setup: &ReplicateSetup, rep: u64, seed: &SeedSpec) -> Result<RiskReport, MetricsError> {
    let child = seed.child(rep, "replicate");
    let pairs = generate_dataset(setup.task, setup.n_cal + setup.n_test, &child);
    let (cal, test) = pairs.split_at(setup.n_cal);
    let calres = run_calibration(cal, setup.task, &child, setup.params, setup.patch.as_ref())?;
    if calres.abstained() {
        let tiles = setup.patch.as_ref().map_or(1, |ctx| {
            let (r, c) = ctx.spec.tile_grid(ctx.height, ctx.width).unwrap_or((1, 1));
            r * c
        });
        return Ok(RiskReport::abstention(calres.method, setup.n_test * tiles));
    }
    evaluate(test, setup.task, &child, setup.params, &calres, setup.patch.as_ref())
}

/// Sequential replication harness: `n_replicates` independent splits plus
/// the guarantee verdict. Replicate `r` depends only on `seed.child(r)`,
/// so any parallel driver that merges by index reproduces this output.
pub fn replicate(
    setup: &ReplicateSetup,
    n_replicates: usize,
    seed: &SeedSpec,
) -> Result<(Vec<RiskReport>, Verdict), MetricsError> {
    let reports: Vec<RiskReport> = (0..n_replicates)
        .map(|r| run_replicate(setup, r as u64, seed))
        .collect::<Result<_, _>>()?;
    let v = verdict(&reports, &setup.params.risk);
    Ok((reports, v))
}
