//! Approximation phase: turn a stack of posterior samples into uncertainty
//! axes and raw intervals.
//!
//! The principal-component route takes the thin SVD of the centered sample
//! matrix and keeps the top `K` left singular vectors as axes, with
//! importance weights `σ_i² / Σ σ_j²` and per-axis empirical quantiles of
//! the projected samples as raw interval bounds. The standard-basis route
//! (`pixelwise_baseline`) keeps pixel axes with uniform weights and
//! per-coordinate quantiles, which is the classical pixelwise-interval
//! approach the principal axes are compared against.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::samplers::SampleStack;
use crate::tensor::FlatVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("cannot take a quantile of an empty list")]
    EmptyQuantile,
    #[error("quantile level {0} outside [0, 1]")]
    BadQuantile(f64),
    #[error("component count {k} outside 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("miss-coverage ratio {0} outside [0, 1)")]
    BadAlpha(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid basis: {0}")]
    Invalid(&'static str),
}

/// Empirical quantile: the smallest listed value `z` such that
/// `#{v  ≤ z} / N ≥ q`. `q = 0` returns the minimum, `q = 1` the maximum.
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64, ApproxError> {
    if values.is_empty() {
        return Err(ApproxError::EmptyQuantile);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(ApproxError::BadQuantile(q));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut i = 0;
    while i < sorted.len() {
        // end of the tie run: #{v <= sorted[i]} counts the whole run
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        if (j + 1) as f64 / n >= q {
            return Ok(sorted[i]);
        }
        i = j + 1;
    }
    Ok(*sorted.last().expect("nonempty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    PrincipalComponents,
    /// One-hot pixel axes `e_1..e_d` in natural order.
    Standard,
}

/// Output of the approximation phase for one instance: conditional mean,
/// `K` orthonormal axes with importance weights, and raw per-axis bounds
/// `lo_i ≤ hi_i` on the projected samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalBasis {
    kind: BasisKind,
    dim: usize,
    k: usize,
    mean: FlatVector,
    /// d×K, orthonormal columns, sign-fixed so each column's largest-|entry|
    /// element is nonnegative.
    components: DMatrix<f64>,
    singular_values: Vec<f64>,
    weights: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    alpha_used: f64,
}

impl PrincipalBasis {
    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mean(&self) -> &FlatVector {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn alpha_used(&self) -> f64 {
        self.alpha_used
    }

    /// Raw (unscaled) interval widths `hi_i - lo_i`.
    pub fn raw_widths(&self) -> Vec<f64> {
        self.hi.iter().zip(&self.lo).map(|(h, l)| h - l).collect()
    }

    /// Projections of `y` onto the axes: `v_iᵀ (y - mean)`.
    pub fn project(&self, y: &FlatVector) -> Result<Vec<f64>, ApproxError> {
        if y.dim() != self.dim {
            return Err(ApproxError::DimMismatch { expected: self.dim, got: y.dim() });
        }
        let mut out = vec![0.0; self.k];
        let ys = y.as_slice();
        let ms = self.mean.as_slice();
        for (i, o) in out.iter_mut().enumerate() {
            let col = self.components.column(i);
            let mut acc = 0.0;
            for l in 0..self.dim {
                acc += col[l] * (ys[l] - ms[l]);
            }
            *o = acc;
        }
        Ok(out)
    }

    /// `mean + Σ_{i<k} coeffs_i · v_i`, using the first `k` axes.
    pub fn reconstruct(&self, coeffs: &[f64], k: usize) -> Result<FlatVector, ApproxError> {
        if k > self.k {
            return Err(ApproxError::KOutOfRange { k, max: self.k });
        }
        if coeffs.len() < k {
            return Err(ApproxError::DimMismatch { expected: k, got: coeffs.len() });
        }
        let mut out = self.mean.as_slice().to_vec();
        for i in 0..k {
            let col = self.components.column(i);
            for l in 0..self.dim {
                out[l] += coeffs[i] * col[l];
            }
        }
        Ok(FlatVector::new(out))
    }

    /// Rebuilds a basis from its raw fields (used when loading caches),
    /// re-checking the structural invariants.
    pub fn from_parts(
        kind: BasisKind,
        dim: usize,
        k: usize,
        mean: FlatVector,
        components_col_major: Vec<f64>,
        singular_values: Vec<f64>,
        weights: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
        alpha_used: f64,
    ) -> Result<Self, ApproxError> {
        if mean.dim() != dim || components_col_major.len() != dim * k {
            return Err(ApproxError::Invalid("field lengths inconsistent with dim/k"));
        }
        if singular_values.len() != k || weights.len() != k || lo.len() != k || hi.len() != k {
            return Err(ApproxError::Invalid("per-axis field lengths inconsistent with k"));
        }
        let components = DMatrix::from_column_slice(dim, k, &components_col_major);
        let basis = Self { kind, dim, k, mean, components, singular_values, weights, lo, hi, alpha_used };
        basis.validate()?;
        Ok(basis)
    }

    /// Structural invariants: orthonormal columns (1e-8), nonincreasing
    /// singular values for principal axes, weights summing to 0 or 1,
    /// ordered bounds.
    pub fn validate(&self) -> Result<(), ApproxError> {
        let gram = self.components.transpose() * &self.components;
        for i in 0..self.k {
            for j in 0..self.k {
                let want = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - want).abs() > 1e-8 {
                    return Err(ApproxError::Invalid("columns are not orthonormal"));
                }
            }
        }
        if self.kind == BasisKind::PrincipalComponents {
            if self.singular_values.windows(2).any(|w| w[1] > w[0]) {
                return Err(ApproxError::Invalid("singular values not nonincreasing"));
            }
        }
        if self.singular_values.iter().any(|&s| s < 0.0) || self.weights.iter().any(|&w| w < 0.0) {
            return Err(ApproxError::Invalid("negative singular value or weight"));
        }
        let wsum: f64 = self.weights.iter().sum();
        if wsum != 0.0 && (wsum - 1.0).abs() > 1e-12 {
            return Err(ApproxError::Invalid("weights do not sum to 1"));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| l > h) {
            return Err(ApproxError::Invalid("lower bound above upper bound"));
        }
        Ok(())
    }
}

fn row_mean(stack: &SampleStack) -> Vec<f64> {
    let mut mean = vec![0.0; stack.dim()];
    for row in stack.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = stack.n() as f64;
    for m in &mut mean {
        *m /= n;
    }
    // a coordinate that is constant across samples must center to exactly
    // zero; summation rounding would otherwise fabricate spread on
    // degenerate axes
    let first = stack.row(0);
    for j in 0..stack.dim() {
        if stack.rows().all(|r| r[j] == first[j]) {
            mean[j] = first[j];
        }
    }
    mean
}

fn centered_matrix(stack: &SampleStack, mean: &[f64]) -> DMatrix<f64> {
    let (n, d) = (stack.n(), stack.dim());
    let mut centered = DMatrix::zeros(d, n);
    for (j, row) in stack.rows().enumerate() {
        for i in 0..d {
            centered[(i, j)] = row[i] - mean[i];
        }
    }
    centered
}

/// Flips each column so its largest-magnitude entry is nonnegative (first
/// such entry on ties). Resolves the sign ambiguity of the SVD so repeated
/// runs produce identical bases; must happen before quantiles are taken.
fn fix_signs(components: &mut DMatrix<f64>) {
    for mut col in components.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Approximation phase for one instance: SVD of the centered sample
/// matrix, top-`k` sign-fixed axes, variance-share weights, and raw bounds
/// from the `alpha/2` and `1 - alpha/2` quantiles of the projected samples.
pub fn approximate(stack: &SampleStack, k: usize, alpha: f64) -> Result<PrincipalBasis, ApproxError> {
    let (n, d) = (stack.n(), stack.dim());
    let max_k = n.min(d);
    if k == 0 || k > max_k {
        return Err(ApproxError::KOutOfRange { k, max: max_k });
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(ApproxError::BadAlpha(alpha));
    }
    let mean = row_mean(stack);
    let centered = centered_matrix(stack, &mean);

    let mut components;
    let mut singulars = vec![0.0; k];
    if centered.iter().all(|&v| v == 0.0) {
        // no spread at all; any orthonormal set will do, pick pixel axes
        components = DMatrix::zeros(d, k);
        for i in 0..k {
            components[(i, i)] = 1.0;
        }
    } else {
        // Left singular vectors via the d×d scatter matrix. nalgebra's SVD
        // pairs u columns with the wrong singular values on tall inputs
        // (null directions come back visibly off-axis), while the
        // symmetric eigensolver stays self-consistent, so PCA goes through
        // the scatter route.
        let scatter = &centered * centered.transpose();
        let eig = nalgebra::linalg::SymmetricEigen::new(scatter);
        let lam_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        // eigenvalue dust for rank-deficient stacks is O(d·machine-eps·λmax)
        let tol = 1e-12 * lam_max;
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        components = DMatrix::zeros(d, k);
        for (slot, &src) in order.iter().take(k).enumerate() {
            components.set_column(slot, &eig.eigenvectors.column(src));
            let lam = eig.eigenvalues[src];
            singulars[slot] = if lam <= tol { 0.0 } else { lam.sqrt() };
        }
    }
    fix_signs(&mut components);

    finish_basis(BasisKind::PrincipalComponents, stack, mean, components, singulars, alpha)
}

/// Singular values within roundoff of zero (relative to the largest) are
/// degenerate axes; snapping them to exact zero gives them zero weight and
/// point intervals instead of rounding dust.
fn zero_degenerate(singulars: &mut [f64]) {
    let max = singulars.iter().cloned().fold(0.0_f64, f64::max);
    let tol = 1e-12 * max;
    for s in singulars.iter_mut() {
        if *s <= tol {
            *s = 0.0;
        }
    }
}

/// Standard-basis (pixelwise) counterpart: pixel axes in natural order,
/// uniform weights `1/d`, per-coordinate quantiles as raw bounds.
pub fn pixelwise_baseline(stack: &SampleStack, alpha: f64) -> Result<PrincipalBasis, ApproxError> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(ApproxError::BadAlpha(alpha));
    }
    let d = stack.dim();
    let mean = row_mean(stack);
    let components = DMatrix::identity(d, d);
    let mut singulars = vec![0.0; d];
    for row in stack.rows() {
        for i in 0..d {
            let c = row[i] - mean[i];
            singulars[i] += c * c;
        }
    }
    for s in &mut singulars {
        *s = s.sqrt();
    }
    zero_degenerate(&mut singulars);
    finish_basis(BasisKind::Standard, stack, mean, components, singulars, alpha)
}

fn finish_basis(
    kind: BasisKind,
    stack: &SampleStack,
    mean: Vec<f64>,
    components: DMatrix<f64>,
    singulars: Vec<f64>,
    alpha: f64,
) -> Result<PrincipalBasis, ApproxError> {
    let k = components.ncols();
    let d = stack.dim();
    let energy: f64 = singulars.iter().map(|s| s * s).sum();
    let weights: Vec<f64> = match kind {
        BasisKind::PrincipalComponents if energy > 0.0 => singulars.iter().map(|s| s * s / energy).collect(),
        BasisKind::PrincipalComponents => vec![0.0; k],
        BasisKind::Standard => vec![1.0 / d as f64; d],
    };

    let mean = FlatVector::new(mean);
    let centered = centered_matrix(stack, mean.as_slice());
    let projections = components.transpose() * &centered;

    let mut lo = vec![0.0; k];
    let mut hi = vec![0.0; k];
    let (q_lo, q_hi) = (alpha / 2.0, 1.0 - alpha / 2.0);
    for i in 0..k {
        // axes with no spread get degenerate point intervals exactly at zero
        if singulars[i] == 0.0 {
            continue;
        }
        let vals: Vec<f64> = projections.row(i).iter().cloned().collect();
        lo[i] = empirical_quantile(&vals, q_lo)?;
        hi[i] = empirical_quantile(&vals, q_hi)?;
    }

    Ok(PrincipalBasis { kind, dim: d, k, mean, components, singular_values: singulars, weights, lo, hi, alpha_used: alpha })
}
