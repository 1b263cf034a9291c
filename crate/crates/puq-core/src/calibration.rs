//! Calibration phase: pick interval scalings (and, in the adaptive
//! variants, how many axes to keep) that are certified by Learn-then-Test
//! to control the coverage and reconstruction risks, then choose the
//! certified point with the smallest mean uncertainty volume.
//!
//! Three procedures:
//! * exact (`e_puq_calibrate`) — all `d` axes are kept, only the interval
//!   scale `λ` is tuned; the loss is monotone in `λ`, so a fixed-sequence
//!   test over the grid controls the family-wise error without a
//!   grid-size correction. Also drives the pixelwise baseline.
//! * dimension-adaptive (`da_puq_calibrate`) — `K ≤ d` axes are built; a
//!   weight-mass threshold `λ1` picks a per-instance prefix `k̂(x)` of
//!   axes and `λ2` scales the intervals; both a reconstruction risk and a
//!   coverage risk are certified jointly (Bonferroni over the grid).
//! * reduced dimension-adaptive (`rda_puq_calibrate`) — additionally
//!   calibrates the number of axes `K̂ = ⌊K·λ3⌋` built in the first
//!   place, re-running the approximation on a prefix of one cached
//!   sample stack per instance.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::approximation::{approximate, pixelwise_baseline, ApproxError, BasisKind, PrincipalBasis};
use crate::ltt::{bonferroni_select, fixed_sequence_select, hb_pvalue, multi_risk_pvalue};
use crate::metrics::volume_from_log_sum;
use crate::samplers::{DatasetPair, PosteriorSampler, SampleStack, SamplerError};
use crate::seed::SeedSpec;
use crate::tensor::{FlatVector, PatchSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("calibration set is empty")]
    NoInstances,
    #[error("lambda grid is empty or not sorted ascending")]
    BadGrid,
    #[error("invalid risk configuration: {0}")]
    BadConfig(&'static str),
    #[error("instances disagree on dimension or axis count")]
    MixedShapes,
    #[error("component count {k} invalid here: {reason}")]
    BadK { k: usize, reason: &'static str },
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Risk levels shared by all procedures: miss-coverage `alpha`,
/// reconstruction cap `beta` over the best `q` fraction of pixels, and
/// calibration error level `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskConfig {
    pub alpha: f64,
    pub beta: f64,
    pub q: f64,
    pub delta: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.05, q: 0.9, delta: 0.1 }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CalibrationError::BadConfig("alpha must be in (0, 1)"));
        }
        // beta = 1 is allowed as the vacuous reconstruction constraint
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(CalibrationError::BadConfig("beta must be in (0, 1]"));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(CalibrationError::BadConfig("q must be in (0, 1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CalibrationError::BadConfig("delta must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Scanned parameter values. `lambda1` thresholds the cumulative weight
/// mass (in `[0,1]`), `lambda2` scales intervals (positive), `lambda3`
/// fractions the axis budget (in `(0,1]`). All ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub lambda3: Vec<f64>,
}

fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| lo * (ratio * i as f64).exp()).collect()
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self {
            lambda1: linear_grid(0.5, 1.0, 50),
            lambda2: geometric_grid(0.25, 8.0, 101),
            lambda3: linear_grid(0.05, 1.0, 20),
        }
    }
}

impl LambdaGrid {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]) && v.iter().all(|x| x.is_finite());
        if self.lambda2.is_empty() || !sorted(&self.lambda2) || self.lambda2[0] <= 0.0 {
            return Err(CalibrationError::BadGrid);
        }
        if self.lambda1.is_empty()
            || !sorted(&self.lambda1)
            || self.lambda1[0] < 0.0
            || *self.lambda1.last().expect("nonempty") > 1.0
        {
            return Err(CalibrationError::BadGrid);
        }
        if self.lambda3.is_empty()
            || !sorted(&self.lambda3)
            || self.lambda3[0] <= 0.0
            || *self.lambda3.last().expect("nonempty") > 1.0
        {
            return Err(CalibrationError::BadGrid);
        }
        Ok(())
    }
}

/// Clamps per-axis interval endpoints to the `[0,1]` dynamic range. Used
/// for reported pixel-basis intervals only; principal-axis projections
/// live outside `[0,1]` and are never clamped. Never increases width.
pub fn clamp_to_dynamic_range(lo: f64, hi: f64) -> (f64, f64) {
    (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))
}

/// Intervals of one instance at a given scale: axis `i ≤ active_k` spans
/// `[v_iᵀμ̂ + λ·lo_i, v_iᵀμ̂ + λ·hi_i]` (clamped to `[0,1]` for the
/// standard basis); axes beyond `active_k` are fixed to zero width.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledIntervals {
    pub active_k: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ScaledIntervals {
    pub fn new(basis: &PrincipalBasis, lambda: f64, active_k: usize) -> Result<Self, CalibrationError> {
        if active_k > basis.k() {
            return Err(CalibrationError::BadK { k: active_k, reason: "active_k exceeds basis K" });
        }
        let mut lower = Vec::with_capacity(active_k);
        let mut upper = Vec::with_capacity(active_k);
        for i in 0..active_k {
            let center = axis_center(basis, i);
            let (mut lo, mut hi) = (center + lambda * basis.lo()[i], center + lambda * basis.hi()[i]);
            if basis.kind() == BasisKind::Standard {
                (lo, hi) = clamp_to_dynamic_range(lo, hi);
            }
            lower.push(lo);
            upper.push(hi);
        }
        Ok(Self { active_k, lower, upper })
    }

    pub fn widths(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }

    /// Widths padded with zeros up to the full dimension.
    pub fn padded_widths(&self, dim: usize) -> Vec<f64> {
        let mut w = self.widths();
        w.resize(dim, 0.0);
        w
    }
}

fn axis_center(basis: &PrincipalBasis, i: usize) -> f64 {
    let col = basis.components().column(i);
    let mean = basis.mean().as_slice();
    col.iter().zip(mean).map(|(v, m)| v * m).sum()
}

/// Width of axis `i` at scale `lambda`, with the standard basis clamped
/// to the dynamic range.
fn scaled_axis_width(kind: BasisKind, center: f64, lo: f64, hi: f64, lambda: f64) -> f64 {
    match kind {
        BasisKind::PrincipalComponents => lambda * (hi - lo),
        BasisKind::Standard => {
            let (a, b) = clamp_to_dynamic_range(center + lambda * lo, center + lambda * hi);
            b - a
        }
    }
}

/// Weighted coverage loss over the first `active_k` axes: the weight mass
/// of axes whose projected ground truth leaves its scaled interval.
/// Weights are not renormalized to the prefix, so the loss is bounded by
/// the prefix weight mass. Intervals are closed.
pub fn coverage_loss(
    basis: &PrincipalBasis,
    y: &FlatVector,
    lambda: f64,
    active_k: usize,
) -> Result<f64, CalibrationError> {
    if active_k > basis.k() {
        return Err(CalibrationError::BadK { k: active_k, reason: "active_k exceeds basis K" });
    }
    let proj = basis.project(y)?;
    let mut loss = 0.0;
    for i in 0..active_k {
        if axis_misses(proj[i], lambda * basis.lo()[i], lambda * basis.hi()[i]) {
            loss += basis.weights()[i];
        }
    }
    Ok(loss)
}

#[inline]
fn axis_misses(proj: f64, lo: f64, hi: f64) -> bool {
    proj < lo || proj > hi
}

/// Reconstruction loss: the `q`-quantile of the `d` per-pixel absolute
/// errors left after reconstructing the centered ground truth from the
/// first `k` axes.
pub fn reconstruction_loss(
    basis: &PrincipalBasis,
    y: &FlatVector,
    k: usize,
    q: f64,
) -> Result<f64, CalibrationError> {
    if k > basis.k() {
        return Err(CalibrationError::BadK { k, reason: "k exceeds basis K" });
    }
    let proj = basis.project(y)?;
    let rebuilt = basis.reconstruct(&proj, k)?;
    let errors: Vec<f64> = rebuilt
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(r, t)| (r - t).abs())
        .collect();
    Ok(crate::approximation::empirical_quantile(&errors, q)?)
}

/// Smallest `k` whose cumulative weight mass reaches `lambda1`; falls back
/// to `K` when even the full prefix never reaches it (all-zero weights).
pub fn adaptive_k(weights: &[f64], lambda1: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if acc >= lambda1 {
            return i + 1;
        }
    }
    weights.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    EPuq,
    DaPuq,
    RdaPuq,
    PixelwiseBaseline,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::EPuq => "e-puq",
            Method::DaPuq => "da-puq",
            Method::RdaPuq => "rda-puq",
            Method::PixelwiseBaseline => "pixelwise-baseline",
        }
    }

    /// Whether the reconstruction risk is part of the certified guarantee.
    pub fn dual_risk(&self) -> bool {
        matches!(self, Method::DaPuq | Method::RdaPuq)
    }
}

/// One prepared calibration instance: the approximation-phase basis built
/// from that instance's samples, plus its ground truth.
#[derive(Debug, Clone)]
pub struct CalInstance {
    pub basis: PrincipalBasis,
    pub y: FlatVector,
}

/// One prepared instance for the reduced procedure, which re-approximates
/// from prefixes of the cached stack.
#[derive(Debug, Clone)]
pub struct RdaInstance {
    pub stack: SampleStack,
    pub y: FlatVector,
}

/// Selected parameters of a calibration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChosenParams {
    /// Weight-mass threshold (adaptive procedures only).
    pub lambda1: Option<f64>,
    /// Interval scale (the single `λ` of the exact procedure).
    pub lambda2: f64,
    /// Axis-budget fraction (reduced procedure only).
    pub lambda3: Option<f64>,
    /// `K̂ = ⌊K·λ3⌋` (reduced procedure only).
    pub k_cap: Option<usize>,
}

/// Per-grid-point diagnostics retained for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDiagnostic {
    pub index: usize,
    pub lambda1: Option<f64>,
    pub lambda2: f64,
    pub lambda3: Option<f64>,
    pub mean_recon_loss: Option<f64>,
    pub p_recon: Option<f64>,
    pub mean_coverage_loss: f64,
    pub p_coverage: f64,
    pub p_combined: f64,
    pub valid: bool,
    pub mean_volume: f64,
    pub mean_k_hat: Option<f64>,
    /// Mean prefix weight mass Σ_{i≤k̂} w_i; the coverage loss can never
    /// exceed it, which is worth surfacing when k̂ is small.
    pub mean_active_weight: Option<f64>,
    /// Axis budget K̂ at this grid point (reduced procedure only).
    pub k_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub method: Method,
    pub n_cal: usize,
    /// p-value threshold applied per grid point.
    pub p_threshold: f64,
    /// Indices of certified grid points (empty means abstention).
    pub valid: Vec<usize>,
    /// `None` on abstention.
    pub chosen: Option<ChosenParams>,
    /// Mean uncertainty volume at the chosen point.
    pub mean_volume: Option<f64>,
    pub diagnostics: Vec<GridDiagnostic>,
}

impl CalibrationResult {
    pub fn abstained(&self) -> bool {
        self.chosen.is_none()
    }
}

fn check_instances(instances: &[CalInstance]) -> Result<(usize, usize), CalibrationError> {
    let first = instances.first().ok_or(CalibrationError::NoInstances)?;
    let (d, k) = (first.basis.dim(), first.basis.k());
    for inst in instances {
        if inst.basis.dim() != d || inst.basis.k() != k || inst.y.dim() != d {
            return Err(CalibrationError::MixedShapes);
        }
    }
    Ok((d, k))
}

/// Exact procedure: keep all `d` axes, scale intervals by `λ`, certify
/// `E[coverage loss] ≤ alpha` by a fixed-sequence walk from the widest
/// scale down (the loss is monotone in `λ`), and pick the smallest-volume
/// certified scale. Also used verbatim for the pixelwise baseline.
pub fn e_puq_calibrate(
    instances: &[CalInstance],
    lambda_grid: &[f64],
    cfg: &RiskConfig,
    epsilon: f64,
) -> Result<CalibrationResult, CalibrationError> {
    cfg.validate()?;
    if epsilon <= 0.0 {
        return Err(CalibrationError::BadConfig("epsilon must be positive"));
    }
    if lambda_grid.is_empty() || lambda_grid.windows(2).any(|w| w[0] > w[1]) || lambda_grid[0] <= 0.0 {
        return Err(CalibrationError::BadGrid);
    }
    let (d, k) = check_instances(instances)?;
    if k != d {
        return Err(CalibrationError::BadK { k, reason: "exact procedure requires K = d axes" });
    }
    let method = match instances[0].basis.kind() {
        BasisKind::PrincipalComponents => Method::EPuq,
        BasisKind::Standard => Method::PixelwiseBaseline,
    };
    let n = instances.len();
    let g = lambda_grid.len();

    let mut mean_loss = vec![0.0; g];
    let mut mean_vol = vec![0.0; g];
    for inst in instances {
        let proj = inst.basis.project(&inst.y)?;
        let kind = inst.basis.kind();
        let centers: Vec<f64> = (0..k).map(|i| axis_center(&inst.basis, i)).collect();
        for (j, &lambda) in lambda_grid.iter().enumerate() {
            let mut loss = 0.0;
            let mut log_sum = 0.0;
            for i in 0..k {
                let (lo, hi) = (inst.basis.lo()[i], inst.basis.hi()[i]);
                if axis_misses(proj[i], lambda * lo, lambda * hi) {
                    loss += inst.basis.weights()[i];
                }
                let width = scaled_axis_width(kind, centers[i], lo, hi, lambda);
                log_sum += (width + epsilon).ln();
            }
            mean_loss[j] += loss.clamp(0.0, 1.0);
            mean_vol[j] += volume_from_log_sum(log_sum, k, d, epsilon);
        }
    }
    for v in mean_loss.iter_mut().chain(mean_vol.iter_mut()) {
        *v /= n as f64;
    }

    let pvals: Vec<f64> = mean_loss.iter().map(|&m| hb_pvalue(m, n, cfg.alpha)).collect();
    // test from the widest scale down; certified set is a suffix of the grid
    let pvals_desc: Vec<f64> = pvals.iter().rev().cloned().collect();
    let accepted = fixed_sequence_select(&pvals_desc, cfg.delta).len();
    let valid: Vec<usize> = (g - accepted..g).collect();

    let chosen = valid
        .iter()
        .map(|&j| (mean_vol[j], lambda_grid[j], j))
        .min_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).expect("finite"))
        .map(|(vol, lambda, _)| (vol, lambda));

    let diagnostics = (0..g)
        .map(|j| GridDiagnostic {
            index: j,
            lambda1: None,
            lambda2: lambda_grid[j],
            lambda3: None,
            mean_recon_loss: None,
            p_recon: None,
            mean_coverage_loss: mean_loss[j],
            p_coverage: pvals[j],
            p_combined: pvals[j],
            valid: valid.contains(&j),
            mean_volume: mean_vol[j],
            mean_k_hat: None,
            mean_active_weight: None,
            k_cap: None,
        })
        .collect();

    Ok(CalibrationResult {
        method,
        n_cal: n,
        p_threshold: cfg.delta,
        valid,
        chosen: chosen.map(|(_, lambda)| ChosenParams { lambda1: None, lambda2: lambda, lambda3: None, k_cap: None }),
        mean_volume: chosen.map(|(vol, _)| vol),
        diagnostics,
    })
}

/// Per-instance quantities reused across the adaptive grid scans.
struct InstanceScan {
    proj: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    weights: Vec<f64>,
    centers: Vec<f64>,
    kind: BasisKind,
    /// k̂ per λ1 grid entry (nondecreasing).
    khat: Vec<usize>,
    /// reconstruction loss per λ1 grid entry, clamped into [0,1].
    recon: Vec<f64>,
    /// prefix weight mass per λ1 grid entry.
    active_weight: Vec<f64>,
}

impl InstanceScan {
    fn new(basis: &PrincipalBasis, y: &FlatVector, lambda1_grid: &[f64], q: f64) -> Result<Self, CalibrationError> {
        let k = basis.k();
        let proj = basis.project(y)?;
        let mut cumw = vec![0.0; k + 1];
        for i in 0..k {
            cumw[i + 1] = cumw[i] + basis.weights()[i];
        }
        let mut khat = Vec::with_capacity(lambda1_grid.len());
        let mut recon = Vec::with_capacity(lambda1_grid.len());
        let mut active_weight = Vec::with_capacity(lambda1_grid.len());
        let mut last_k = usize::MAX;
        let mut last_recon = 0.0;
        for &l1 in lambda1_grid {
            let kh = adaptive_k(basis.weights(), l1);
            if kh != last_k {
                last_recon = reconstruction_loss(basis, y, kh, q)?.clamp(0.0, 1.0);
                last_k = kh;
            }
            khat.push(kh);
            recon.push(last_recon);
            active_weight.push(cumw[kh]);
        }
        Ok(Self {
            proj,
            lo: basis.lo().to_vec(),
            hi: basis.hi().to_vec(),
            weights: basis.weights().to_vec(),
            centers: (0..k).map(|i| axis_center(basis, i)).collect(),
            kind: basis.kind(),
            khat,
            recon,
            active_weight,
        })
    }
}

/// Mean losses and volumes over a (λ1, λ2) grid, flattened λ1-major.
struct GridScan {
    mean_recon: Vec<f64>,
    mean_cov: Vec<f64>,
    mean_vol: Vec<f64>,
    mean_khat: Vec<f64>,
    mean_active_weight: Vec<f64>,
}

fn scan_grid(
    scans: &[InstanceScan],
    dim: usize,
    k: usize,
    grid1: &[f64],
    grid2: &[f64],
    epsilon: f64,
) -> GridScan {
    let (g1, g2) = (grid1.len(), grid2.len());
    let n = scans.len() as f64;
    let mut mean_recon = vec![0.0; g1];
    let mut mean_khat = vec![0.0; g1];
    let mut mean_active_weight = vec![0.0; g1];
    let mut mean_cov = vec![0.0; g1 * g2];
    let mut mean_vol = vec![0.0; g1 * g2];

    for scan in scans {
        for i1 in 0..g1 {
            mean_recon[i1] += scan.recon[i1];
            mean_khat[i1] += scan.khat[i1] as f64;
            mean_active_weight[i1] += scan.active_weight[i1];
        }
        let mut miss_prefix = vec![0.0; k + 1];
        let mut log_prefix = vec![0.0; k + 1];
        for (i2, &lambda2) in grid2.iter().enumerate() {
            for i in 0..k {
                let (lo, hi) = (scan.lo[i], scan.hi[i]);
                let miss = axis_misses(scan.proj[i], lambda2 * lo, lambda2 * hi);
                miss_prefix[i + 1] = miss_prefix[i] + if miss { scan.weights[i] } else { 0.0 };
                let width = scaled_axis_width(scan.kind, scan.centers[i], lo, hi, lambda2);
                log_prefix[i + 1] = log_prefix[i] + (width + epsilon).ln();
            }
            let mut last_k = usize::MAX;
            let mut last_vol = 0.0;
            for i1 in 0..g1 {
                let kh = scan.khat[i1];
                if kh != last_k {
                    last_vol = volume_from_log_sum(log_prefix[kh], kh, dim, epsilon);
                    last_k = kh;
                }
                let idx = i1 * g2 + i2;
                mean_cov[idx] += miss_prefix[kh].clamp(0.0, 1.0);
                mean_vol[idx] += last_vol;
            }
        }
    }
    for v in mean_recon.iter_mut().chain(&mut mean_khat).chain(&mut mean_active_weight) {
        *v /= n;
    }
    for v in mean_cov.iter_mut().chain(&mut mean_vol) {
        *v /= n;
    }
    GridScan { mean_recon, mean_cov, mean_vol, mean_khat, mean_active_weight }
}

/// Dimension-adaptive procedure over the `(λ1, λ2)` grid with a Bonferroni
/// correction: a point is certified only when both the reconstruction
/// p-value (level `beta`) and the coverage p-value (level `alpha`) clear
/// `delta / |grid|`. Ties in volume prefer smaller `λ2`, then smaller `λ1`.
pub fn da_puq_calibrate(
    instances: &[CalInstance],
    grid: &LambdaGrid,
    cfg: &RiskConfig,
    epsilon: f64,
) -> Result<CalibrationResult, CalibrationError> {
    cfg.validate()?;
    grid.validate()?;
    if epsilon <= 0.0 {
        return Err(CalibrationError::BadConfig("epsilon must be positive"));
    }
    let (d, k) = check_instances(instances)?;
    if instances[0].basis.kind() != BasisKind::PrincipalComponents {
        return Err(CalibrationError::BadK { k, reason: "adaptive procedures require principal axes" });
    }
    let n = instances.len();
    let scans: Vec<InstanceScan> = instances
        .iter()
        .map(|inst| InstanceScan::new(&inst.basis, &inst.y, &grid.lambda1, cfg.q))
        .collect::<Result<_, _>>()?;
    let scan = scan_grid(&scans, d, k, &grid.lambda1, &grid.lambda2, epsilon);

    let (g1, g2) = (grid.lambda1.len(), grid.lambda2.len());
    let p_recon: Vec<f64> = scan.mean_recon.iter().map(|&m| hb_pvalue(m, n, cfg.beta)).collect();

    let mut diagnostics = Vec::with_capacity(g1 * g2);
    for i1 in 0..g1 {
        for i2 in 0..g2 {
            let idx = i1 * g2 + i2;
            let p_cov = hb_pvalue(scan.mean_cov[idx], n, cfg.alpha);
            diagnostics.push(GridDiagnostic {
                index: idx,
                lambda1: Some(grid.lambda1[i1]),
                lambda2: grid.lambda2[i2],
                lambda3: None,
                mean_recon_loss: Some(scan.mean_recon[i1]),
                p_recon: Some(p_recon[i1]),
                mean_coverage_loss: scan.mean_cov[idx],
                p_coverage: p_cov,
                p_combined: multi_risk_pvalue(p_recon[i1], p_cov),
                valid: false,
                mean_volume: scan.mean_vol[idx],
                mean_k_hat: Some(scan.mean_khat[i1]),
                mean_active_weight: Some(scan.mean_active_weight[i1]),
                k_cap: None,
            });
        }
    }
    select_by_bonferroni(Method::DaPuq, n, cfg.delta, diagnostics)
}

/// Bonferroni selection plus the volume argmin with the tie order
/// (volume, λ2, λ1, λ3); marks validity in the diagnostics in place.
fn select_by_bonferroni(
    method: Method,
    n: usize,
    delta: f64,
    mut diagnostics: Vec<GridDiagnostic>,
) -> Result<CalibrationResult, CalibrationError> {
    let pvals: Vec<f64> = diagnostics.iter().map(|d| d.p_combined).collect();
    let valid = bonferroni_select(&pvals, delta);
    for &idx in &valid {
        diagnostics[idx].valid = true;
    }
    let best = valid
        .iter()
        .map(|&idx| {
            let d = &diagnostics[idx];
            ((d.mean_volume, d.lambda2, d.lambda1.unwrap_or(0.0), d.lambda3.unwrap_or(0.0)), d)
        })
        .min_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"))
        .map(|(_, d)| d.clone());

    Ok(CalibrationResult {
        method,
        n_cal: n,
        p_threshold: delta / pvals.len().max(1) as f64,
        valid,
        chosen: best.as_ref().map(|d| ChosenParams {
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            lambda3: d.lambda3,
            k_cap: d.k_cap,
        }),
        mean_volume: best.as_ref().map(|d| d.mean_volume),
        diagnostics,
    })
}

/// Reduced dimension-adaptive procedure: an outer sweep over `λ3` re-runs
/// the approximation phase with `K̂ = ⌊K·λ3⌋` samples (prefixes of one
/// cached `K`-sample stack per instance), applies the dimension-adaptive
/// scan inside, and Bonferroni-corrects over the triple grid. Volume ties
/// prefer smaller `λ2`, then `λ1`, then `λ3`.
pub fn rda_puq_calibrate(
    instances: &[RdaInstance],
    k_max: usize,
    grid: &LambdaGrid,
    cfg: &RiskConfig,
    epsilon: f64,
) -> Result<CalibrationResult, CalibrationError> {
    cfg.validate()?;
    grid.validate()?;
    if epsilon <= 0.0 {
        return Err(CalibrationError::BadConfig("epsilon must be positive"));
    }
    let first = instances.first().ok_or(CalibrationError::NoInstances)?;
    let d = first.stack.dim();
    if k_max == 0 || k_max > d {
        return Err(CalibrationError::BadK { k: k_max, reason: "K must satisfy 1 <= K <= d" });
    }
    for inst in instances {
        if inst.stack.dim() != d || inst.y.dim() != d || inst.stack.n() < k_max {
            return Err(CalibrationError::MixedShapes);
        }
    }
    let k_caps: Vec<usize> = grid.lambda3.iter().map(|l3| (k_max as f64 * l3).floor() as usize).collect();
    if k_caps.iter().any(|&kc| kc == 0) {
        return Err(CalibrationError::BadK { k: 0, reason: "lambda3 too small: floor(K*lambda3) must be >= 1" });
    }

    let n = instances.len();
    let (g1, g2, g3) = (grid.lambda1.len(), grid.lambda2.len(), grid.lambda3.len());

    let mut diagnostics = Vec::with_capacity(g1 * g2 * g3);
    for (i3, (&lambda3, &k_cap)) in grid.lambda3.iter().zip(&k_caps).enumerate() {
        let scans: Vec<InstanceScan> = instances
            .iter()
            .map(|inst| {
                let basis = approximate(&inst.stack.prefix(k_cap)?, k_cap, cfg.alpha)?;
                InstanceScan::new(&basis, &inst.y, &grid.lambda1, cfg.q)
            })
            .collect::<Result<_, _>>()?;
        let scan = scan_grid(&scans, d, k_cap, &grid.lambda1, &grid.lambda2, epsilon);
        let p_recon: Vec<f64> = scan.mean_recon.iter().map(|&m| hb_pvalue(m, n, cfg.beta)).collect();
        for i1 in 0..g1 {
            for i2 in 0..g2 {
                let inner = i1 * g2 + i2;
                let idx = (i3 * g1 + i1) * g2 + i2;
                let p_cov = hb_pvalue(scan.mean_cov[inner], n, cfg.alpha);
                diagnostics.push(GridDiagnostic {
                    index: idx,
                    lambda1: Some(grid.lambda1[i1]),
                    lambda2: grid.lambda2[i2],
                    lambda3: Some(lambda3),
                    mean_recon_loss: Some(scan.mean_recon[i1]),
                    p_recon: Some(p_recon[i1]),
                    mean_coverage_loss: scan.mean_cov[inner],
                    p_coverage: p_cov,
                    p_combined: multi_risk_pvalue(p_recon[i1], p_cov),
                    valid: false,
                    mean_volume: scan.mean_vol[inner],
                    mean_k_hat: Some(scan.mean_khat[i1]),
                    mean_active_weight: Some(scan.mean_active_weight[i1]),
                    k_cap: Some(k_cap),
                });
            }
        }
    }
    select_by_bonferroni(Method::RdaPuq, n, cfg.delta, diagnostics)
}

/// Everything a calibration or evaluation run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub method: Method,
    /// Number of axes: `d` for the exact procedures, `K` for the adaptive
    /// one, `K_max` for the reduced one.
    pub k: usize,
    /// Samples drawn per instance; at least `k`. The reduced procedure
    /// draws exactly `k` so stack prefixes are reusable.
    pub n_samples: usize,
    pub risk: RiskConfig,
    pub grid: LambdaGrid,
    pub epsilon: f64,
}

impl PipelineParams {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        self.risk.validate()?;
        self.grid.validate()?;
        if self.k == 0 {
            return Err(CalibrationError::BadK { k: 0, reason: "K must be positive" });
        }
        if self.n_samples < self.k {
            return Err(CalibrationError::BadK { k: self.k, reason: "need at least K samples per instance" });
        }
        if self.method == Method::RdaPuq && self.n_samples != self.k {
            return Err(CalibrationError::BadK {
                k: self.k,
                reason: "reduced procedure draws exactly K samples per instance",
            });
        }
        if self.epsilon <= 0.0 {
            return Err(CalibrationError::BadConfig("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Patch context for image-valued tasks: the sampler produces whole
/// images; every tile of every image becomes one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchContext {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub spec: PatchSpec,
}

impl PatchContext {
    pub fn patch_dim(&self) -> usize {
        let (ph, pw) = self.spec.tile_size(self.height, self.width);
        ph * pw * self.channels
    }
}

/// Dimension of one instance as seen by the calibration: the tile
/// dimension under a patch context, the sampler dimension otherwise.
pub fn instance_dim(sampler_dim: usize, patch: Option<&PatchContext>) -> usize {
    patch.map_or(sampler_dim, |ctx| ctx.patch_dim())
}

fn tile_targets(pair: &DatasetPair, ctx: &PatchContext) -> Result<Vec<FlatVector>, CalibrationError> {
    let img = crate::tensor::ImageTensor::new(ctx.height, ctx.width, ctx.channels, pair.y.as_slice().to_vec())
        .map_err(|_| CalibrationError::MixedShapes)?;
    crate::tensor::extract_patches(&img, &ctx.spec).map_err(|_| CalibrationError::MixedShapes)
}

/// Draws one stack per instance (stream `(id, "stack")`) and runs the
/// approximation phase, splitting images into per-tile instances when a
/// patch context is given.
pub fn approximate_pairs(
    pairs: &[DatasetPair],
    sampler: &dyn PosteriorSampler,
    seed: &SeedSpec,
    params: &PipelineParams,
    patch: Option<&PatchContext>,
) -> Result<Vec<CalInstance>, CalibrationError> {
    let make = |stack: &SampleStack| -> Result<PrincipalBasis, CalibrationError> {
        Ok(match params.method {
            Method::PixelwiseBaseline => pixelwise_baseline(stack, params.risk.alpha)?,
            _ => approximate(stack, params.k, params.risk.alpha)?,
        })
    };
    let mut out = Vec::new();
    for pair in pairs {
        let mut rng = seed.stream(pair.id, "stack");
        let stack = sampler.sample_stack(pair.id, &pair.x, params.n_samples, &mut rng)?;
        match patch {
            None => out.push(CalInstance { basis: make(&stack)?, y: pair.y.clone() }),
            Some(ctx) => {
                let tiles = stack.split_patches(ctx.height, ctx.width, ctx.channels, &ctx.spec)?;
                let targets = tile_targets(pair, ctx)?;
                for (tile, y) in tiles.iter().zip(targets) {
                    out.push(CalInstance { basis: make(tile)?, y });
                }
            }
        }
    }
    Ok(out)
}

/// Cached stacks for the reduced procedure (per tile under a patch context).
pub fn collect_stacks(
    pairs: &[DatasetPair],
    sampler: &dyn PosteriorSampler,
    seed: &SeedSpec,
    params: &PipelineParams,
    patch: Option<&PatchContext>,
) -> Result<Vec<RdaInstance>, CalibrationError> {
    let mut out = Vec::new();
    for pair in pairs {
        let mut rng = seed.stream(pair.id, "stack");
        let stack = sampler.sample_stack(pair.id, &pair.x, params.n_samples, &mut rng)?;
        match patch {
            None => out.push(RdaInstance { stack, y: pair.y.clone() }),
            Some(ctx) => {
                let tiles = stack.split_patches(ctx.height, ctx.width, ctx.channels, &ctx.spec)?;
                let targets = tile_targets(pair, ctx)?;
                for (tile, y) in tiles.into_iter().zip(targets) {
                    out.push(RdaInstance { stack: tile, y });
                }
            }
        }
    }
    Ok(out)
}

/// End-to-end calibration for any method: sample, approximate, certify,
/// select. Deterministic given `(pairs, seed, params)`.
pub fn run_calibration(
    pairs: &[DatasetPair],
    sampler: &dyn PosteriorSampler,
    seed: &SeedSpec,
    params: &PipelineParams,
    patch: Option<&PatchContext>,
) -> Result<CalibrationResult, CalibrationError> {
    params.validate()?;
    let d = instance_dim(sampler.dim(), patch);
    match params.method {
        Method::EPuq | Method::PixelwiseBaseline => {
            if params.k != d {
                return Err(CalibrationError::BadK { k: params.k, reason: "exact procedure requires K = d" });
            }
            let instances = approximate_pairs(pairs, sampler, seed, params, patch)?;
            e_puq_calibrate(&instances, &params.grid.lambda2, &params.risk, params.epsilon)
        }
        Method::DaPuq => {
            if params.k > d {
                return Err(CalibrationError::BadK { k: params.k, reason: "K must not exceed d" });
            }
            let instances = approximate_pairs(pairs, sampler, seed, params, patch)?;
            da_puq_calibrate(&instances, &params.grid, &params.risk, params.epsilon)
        }
        Method::RdaPuq => {
            if params.k > d {
                return Err(CalibrationError::BadK { k: params.k, reason: "K must not exceed d" });
            }
            let instances = collect_stacks(pairs, sampler, seed, params, patch)?;
            rda_puq_calibrate(&instances, params.k, &params.grid, &params.risk, params.epsilon)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximation::{approximate, empirical_quantile};
    use crate::samplers::{generate_dataset, CovarianceModel, GaussianTask, GaussianTaskSpec};
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::RngCore;

    fn identity_basis(weights: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> PrincipalBasis {
        let d = weights.len();
        let mut cols = vec![0.0; d * d];
        for i in 0..d {
            cols[i * d + i] = 1.0;
        }
        let mut sv: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        sv.sort_unstable_by(|a, b| b.total_cmp(a));
        PrincipalBasis::from_parts(
            BasisKind::PrincipalComponents,
            d,
            d,
            FlatVector::zeros(d),
            cols,
            sv,
            weights,
            lo,
            hi,
            0.1,
        )
        .unwrap()
    }

    fn random_stack(n: usize, d: usize, seed: u64) -> SampleStack {
        let mut rng = SeedSpec::new(seed).stream(0, "stack");
        let data: Vec<f64> = (0..n * d).map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64).collect();
        SampleStack::new(n, d, data).unwrap()
    }

    fn task(rho: f64, d: usize, seed: u64) -> GaussianTask {
        GaussianTask::new(
            GaussianTaskSpec {
                dim: d,
                input_dim: 3,
                covariance: CovarianceModel::Equicorrelation { rho, tau2: 0.01 },
                sampler_scale: 1.0,
            },
            &SeedSpec::new(seed),
        )
        .unwrap()
    }

    fn params(method: Method, k: usize, n_samples: usize) -> PipelineParams {
        PipelineParams {
            method,
            k,
            n_samples,
            risk: RiskConfig::default(),
            grid: LambdaGrid::default(),
            epsilon: 1e-10,
        }
    }

    #[test]
    fn adaptive_k_examples() {
        assert_eq!(adaptive_k(&[0.7, 0.2, 0.1], 0.85), 2);
        assert_eq!(adaptive_k(&[0.7, 0.2, 0.1], 0.0), 1);
        assert_eq!(adaptive_k(&[0.7, 0.2, 0.1], 1.0), 3);
        // degenerate all-zero weights fall back to K
        assert_eq!(adaptive_k(&[0.0, 0.0], 0.5), 2);
    }

    #[test]
    fn dynamic_range_clamp() {
        assert_eq!(clamp_to_dynamic_range(-0.2, 1.3), (0.0, 1.0));
        assert_eq!(clamp_to_dynamic_range(0.2, 0.9), (0.2, 0.9));
        let (lo, hi) = clamp_to_dynamic_range(1.1, 1.4);
        assert!(hi - lo <= 0.3 + 1e-15 && hi >= lo);
    }

    #[test]
    fn coverage_loss_cases() {
        let basis = identity_basis(vec![0.8, 0.2], vec![-1.0, -1.0], vec![1.0, 1.0]);
        // mean inside all intervals
        assert_eq!(coverage_loss(&basis, &FlatVector::zeros(2), 1.0, 2).unwrap(), 0.0);
        // axis 1 misses, axis 2 covered
        let y = FlatVector::new(vec![2.0, 0.5]);
        assert_relative_eq!(coverage_loss(&basis, &y, 1.0, 2).unwrap(), 0.8);
        // huge scale covers everything
        assert_eq!(coverage_loss(&basis, &y, 100.0, 2).unwrap(), 0.0);
        // closed interval: projection exactly on the bound is covered
        let on_edge = FlatVector::new(vec![1.0, -1.0]);
        assert_eq!(coverage_loss(&basis, &on_edge, 1.0, 2).unwrap(), 0.0);
    }

    #[test]
    fn reconstruction_loss_cases() {
        let s = random_stack(12, 5, 8);
        let basis = approximate(&s, 5, 0.1).unwrap();
        let y = FlatVector::new(s.row(3).to_vec());
        // full rank is exact
        assert!(reconstruction_loss(&basis, &y, 5, 0.9).unwrap() < 1e-9);
        // zero axes leave the centered magnitudes
        let errs: Vec<f64> =
            y.as_slice().iter().zip(basis.mean().as_slice()).map(|(a, b)| (a - b).abs()).collect();
        let want = empirical_quantile(&errs, 0.9).unwrap();
        assert_relative_eq!(reconstruction_loss(&basis, &y, 0, 0.9).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn reconstruction_loss_off_axis_point() {
        let s = SampleStack::new(2, 2, vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        let basis = approximate(&s, 2, 0.1).unwrap();
        let y = FlatVector::new(vec![1.0, -1.0]);
        for q in [0.1, 0.5, 0.9] {
            assert_relative_eq!(reconstruction_loss(&basis, &y, 1, q).unwrap(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn tiny_calibration_set_abstains() {
        let t = task(0.5, 3, 1);
        let seed = SeedSpec::new(2);
        let pairs = generate_dataset(&t, 5, &seed);
        let res = run_calibration(&pairs, &t, &seed, &params(Method::EPuq, 3, 3), None).unwrap();
        assert!(res.abstained());
        assert!(res.valid.is_empty());
        assert!(res.mean_volume.is_none());
    }

    #[test]
    fn zero_loss_everywhere_selects_smallest_scale() {
        // y set to the sample mean lies inside every interval at any scale
        let mut instances = Vec::new();
        for i in 0..300 {
            let s = random_stack(8, 3, i);
            let basis = approximate(&s, 3, 0.1).unwrap();
            let y = basis.mean().clone();
            instances.push(CalInstance { basis, y });
        }
        let grid = LambdaGrid::default().lambda2;
        let res = e_puq_calibrate(&instances, &grid, &RiskConfig::default(), 1e-10).unwrap();
        assert_eq!(res.valid.len(), grid.len());
        assert_relative_eq!(res.chosen.unwrap().lambda2, grid[0]);
    }

    #[test]
    fn chosen_point_is_valid_and_volume_minimal() {
        let t = task(0.9, 4, 3);
        let seed = SeedSpec::new(4);
        let pairs = generate_dataset(&t, 300, &seed);
        let res = run_calibration(&pairs, &t, &seed, &params(Method::EPuq, 4, 4), None).unwrap();
        let chosen = res.chosen.unwrap();
        let row = res
            .diagnostics
            .iter()
            .find(|d| d.lambda2 == chosen.lambda2)
            .expect("chosen point has a diagnostics row");
        assert!(row.valid);
        assert!(res.valid.contains(&row.index));
        assert!(row.p_combined <= res.p_threshold);
        let best_vol = res
            .valid
            .iter()
            .map(|&j| res.diagnostics[j].mean_volume)
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(res.mean_volume.unwrap(), best_vol);
    }

    #[test]
    fn calibration_is_deterministic() {
        let t = task(0.8, 4, 5);
        let seed = SeedSpec::new(6);
        let pairs = generate_dataset(&t, 80, &seed);
        let p = params(Method::DaPuq, 3, 4);
        let a = run_calibration(&pairs, &t, &seed, &p, None).unwrap();
        let b = run_calibration(&pairs, &t, &seed, &p, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vacuous_reconstruction_cap_reduces_to_coverage_only() {
        let t = task(0.9, 5, 7);
        let seed = SeedSpec::new(8);
        let pairs = generate_dataset(&t, 300, &seed);
        let instances =
            approximate_pairs(&pairs, &t, &seed, &params(Method::DaPuq, 5, 5), None).unwrap();
        let grid = LambdaGrid { lambda1: vec![0.8], ..LambdaGrid::default() };
        let strict = RiskConfig { beta: 0.01, ..RiskConfig::default() };
        let vacuous = RiskConfig { beta: 1.0, ..RiskConfig::default() };
        let res_strict = da_puq_calibrate(&instances, &grid, &strict, 1e-10).unwrap();
        let res_vacuous = da_puq_calibrate(&instances, &grid, &vacuous, 1e-10).unwrap();
        // beta = 1 certifies a superset: only the coverage test can reject
        for idx in &res_strict.valid {
            assert!(res_vacuous.valid.contains(idx));
        }
        for d in &res_vacuous.diagnostics {
            assert_eq!(d.p_recon, Some(0.0));
            assert_eq!(d.p_combined, d.p_coverage);
        }
    }

    #[test]
    fn forcing_full_prefix_costs_at_least_exact_volume() {
        // same bases; adaptive procedure with λ1 = 1 keeps all K = d axes but
        // pays the grid correction, so its certified volume cannot be smaller
        let t = task(0.9, 6, 9);
        let seed = SeedSpec::new(10);
        let pairs = generate_dataset(&t, 300, &seed);
        // more samples than axes so the K-th weight is genuinely positive
        // and λ1 = 1 cannot satisfy itself on a shorter prefix
        let p = params(Method::EPuq, 6, 12);
        let instances = approximate_pairs(&pairs, &t, &seed, &p, None).unwrap();
        let exact = e_puq_calibrate(&instances, &p.grid.lambda2, &p.risk, 1e-10).unwrap();
        let grid = LambdaGrid { lambda1: vec![1.0], ..LambdaGrid::default() };
        let adaptive = da_puq_calibrate(&instances, &grid, &p.risk, 1e-10).unwrap();
        let (ev, av) = (exact.mean_volume.unwrap(), adaptive.mean_volume.unwrap());
        assert!(av >= ev - 1e-12, "adaptive {av} vs exact {ev}");
        // and with all axes active the k̂ statistics confirm the full prefix
        assert_eq!(adaptive.diagnostics[0].mean_k_hat, Some(6.0));
    }

    #[test]
    fn degenerate_axis_budget_grid_matches_dimension_adaptive() {
        let t = task(0.95, 8, 11);
        let seed = SeedSpec::new(12);
        let pairs = generate_dataset(&t, 200, &seed);
        let k = 6;
        // generous risk caps so this small split certifies something
        let risk = RiskConfig { beta: 0.5, q: 0.7, ..RiskConfig::default() };
        let mut da_params = params(Method::DaPuq, k, k);
        da_params.risk = risk;
        let da = run_calibration(&pairs, &t, &seed, &da_params, None).unwrap();
        let mut rda_params = params(Method::RdaPuq, k, k);
        rda_params.risk = risk;
        rda_params.grid.lambda3 = vec![1.0];
        let rda = run_calibration(&pairs, &t, &seed, &rda_params, None).unwrap();
        assert!(!da.abstained());
        let (dc, rc) = (da.chosen.unwrap(), rda.chosen.unwrap());
        assert_eq!(dc.lambda1, rc.lambda1);
        assert_eq!(dc.lambda2, rc.lambda2);
        assert_eq!(rc.k_cap, Some(k));
        assert_eq!(da.mean_volume, rda.mean_volume);
        assert_eq!(da.valid.len(), rda.valid.len());
        assert_eq!(da.p_threshold, rda.p_threshold);
    }

    #[test]
    fn single_sample_axes_cannot_pass_reconstruction_on_isotropic_task() {
        // floor(K·λ3) = 1 leaves one arbitrary axis; on an isotropic task the
        // reconstruction risk stays near the raw deviation, far above beta
        let d = 24;
        let t = GaussianTask::new(
            GaussianTaskSpec {
                dim: d,
                input_dim: 3,
                covariance: CovarianceModel::Diagonal { variances: vec![0.04; 24] },
                sampler_scale: 1.0,
            },
            &SeedSpec::new(13),
        )
        .unwrap();
        let seed = SeedSpec::new(14);
        let pairs = generate_dataset(&t, 80, &seed);
        let mut p = params(Method::RdaPuq, 20, 20);
        p.grid.lambda3 = vec![0.05, 1.0];
        p.grid.lambda1 = vec![0.9];
        let res = run_calibration(&pairs, &t, &seed, &p, None).unwrap();
        for row in res.diagnostics.iter().filter(|r| r.k_cap == Some(1)) {
            assert_eq!(row.p_recon, Some(1.0), "k_cap=1 must fail the reconstruction test");
            assert!(!row.valid);
        }
    }

    #[test]
    fn lambda3_below_one_axis_is_rejected() {
        let t = task(0.5, 8, 15);
        let seed = SeedSpec::new(16);
        let pairs = generate_dataset(&t, 10, &seed);
        let mut p = params(Method::RdaPuq, 4, 4);
        p.grid.lambda3 = vec![0.1, 1.0]; // floor(4·0.1) = 0
        assert!(matches!(
            run_calibration(&pairs, &t, &seed, &p, None),
            Err(CalibrationError::BadK { .. })
        ));
    }

    #[test]
    fn exact_procedure_requires_full_dimension() {
        let t = task(0.5, 4, 17);
        let seed = SeedSpec::new(18);
        let pairs = generate_dataset(&t, 10, &seed);
        assert!(matches!(
            run_calibration(&pairs, &t, &seed, &params(Method::EPuq, 3, 3), None),
            Err(CalibrationError::BadK { .. })
        ));
        assert!(matches!(
            run_calibration(&pairs, &t, &seed, &params(Method::DaPuq, 5, 5), None),
            Err(CalibrationError::BadK { .. })
        ));
    }

    #[test]
    fn pixelwise_method_is_labeled_and_clamped() {
        let t = task(0.5, 3, 19);
        let seed = SeedSpec::new(20);
        let pairs = generate_dataset(&t, 60, &seed);
        let res =
            run_calibration(&pairs, &t, &seed, &params(Method::PixelwiseBaseline, 3, 3), None).unwrap();
        assert_eq!(res.method, Method::PixelwiseBaseline);
        // reported pixel intervals stay inside the dynamic range
        let instances =
            approximate_pairs(&pairs, &t, &seed, &params(Method::PixelwiseBaseline, 3, 3), None).unwrap();
        let si = ScaledIntervals::new(&instances[0].basis, 50.0, 3).unwrap();
        assert!(si.lower.iter().all(|&l| l >= 0.0));
        assert!(si.upper.iter().all(|&u| u <= 1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn coverage_loss_monotone_in_lambda(seed in any::<u64>(), n in 3usize..10, d in 2usize..6) {
            let s = random_stack(n, d, seed);
            let k = n.min(d);
            let basis = approximate(&s, k, 0.2).unwrap();
            let mut rng = SeedSpec::new(seed ^ 1).stream(1, "y");
            let y = FlatVector::new((0..d).map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64).collect());
            let lambdas = [0.1, 0.5, 1.0, 1.5, 2.0, 4.0, 8.0];
            let losses: Vec<f64> = lambdas
                .iter()
                .map(|&l| coverage_loss(&basis, &y, l, k).unwrap())
                .collect();
            prop_assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-15), "{losses:?}");
            let active_mass: f64 = basis.weights()[..k].iter().sum();
            for loss in losses {
                prop_assert!(loss >= 0.0 && loss <= active_mass + 1e-12);
            }
        }

        #[test]
        fn scaled_intervals_are_ordered(seed in any::<u64>(), n in 3usize..8, d in 1usize..5,
                                        lambda in 0.01f64..10.0) {
            let s = random_stack(n, d, seed);
            let basis = approximate(&s, n.min(d), 0.1).unwrap();
            let si = ScaledIntervals::new(&basis, lambda, basis.k()).unwrap();
            prop_assert!(si.lower.iter().zip(&si.upper).all(|(l, u)| l <= u));
            prop_assert!(si.widths().iter().all(|&w| w >= 0.0));
        }
    }
}
