//! Posterior samplers: the `f(x, z)` abstraction that produces candidate
//! solutions for one input instance, plus an analytic Gaussian task whose
//! true posterior is known exactly.
//!
//! The Gaussian task draws ground truth from `N(m(x), C)` and sampler
//! output from `N(m(x), s²·C)`. The scale `s` is a misspecification knob:
//! `s = 1` is a perfect sampler, anything else models a generative model
//! that under- or over-estimates the posterior spread and must be fixed
//! by calibration.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::seed::SeedSpec;
use crate::tensor::FlatVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("sample stack needs at least one row")]
    EmptyStack,
    #[error("stack data length {got} does not match {n} x {dim}")]
    DataLength { n: usize, dim: usize, got: usize },
    #[error("non-finite value in sample stack")]
    NonFinite,
    #[error("covariance is not positive semi-definite (eigenvalue {eigenvalue:.3e})")]
    NotPsd { eigenvalue: f64 },
    #[error("input has dimension {got}, task expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("invalid task parameter: {0}")]
    BadParameter(&'static str),
    #[error("sampler cannot produce {requested} samples for instance {instance}: {reason}")]
    Unavailable { instance: u64, requested: usize, reason: &'static str },
}

/// `n` posterior samples for one instance, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStack {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl SampleStack {
    pub fn new(n: usize, dim: usize, data: Vec<f64>) -> Result<Self, SamplerError> {
        if n == 0 || dim == 0 {
            return Err(SamplerError::EmptyStack);
        }
        if data.len() != n * dim {
            return Err(SamplerError::DataLength { n, dim, got: data.len() });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SamplerError::NonFinite);
        }
        Ok(Self { n, dim, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Stack made of the first `k` rows.
    pub fn prefix(&self, k: usize) -> Result<SampleStack, SamplerError> {
        if k == 0 || k > self.n {
            return Err(SamplerError::EmptyStack);
        }
        Ok(SampleStack { n: k, dim: self.dim, data: self.data[..k * self.dim].to_vec() })
    }

    /// Per-tile stacks for image-valued samples: row `i` of tile `t` is the
    /// `t`-th patch of row `i`.
    pub fn split_patches(
        &self,
        height: usize,
        width: usize,
        channels: usize,
        spec: &crate::tensor::PatchSpec,
    ) -> Result<Vec<SampleStack>, SamplerError> {
        if height * width * channels != self.dim {
            return Err(SamplerError::DataLength { n: self.n, dim: height * width * channels, got: self.dim });
        }
        let mut tiles: Vec<Vec<f64>> = Vec::new();
        for row in self.rows() {
            let img = crate::tensor::ImageTensor::new(height, width, channels, row.to_vec())
                .map_err(|_| SamplerError::NonFinite)?;
            let patches = crate::tensor::extract_patches(&img, spec)
                .map_err(|_| SamplerError::BadParameter("patch spec does not tile sample shape"))?;
            if tiles.is_empty() {
                tiles.resize(patches.len(), Vec::new());
            }
            for (t, p) in patches.into_iter().enumerate() {
                tiles[t].extend_from_slice(p.as_slice());
            }
        }
        tiles
            .into_iter()
            .map(|data| {
                let dim = data.len() / self.n;
                SampleStack::new(self.n, dim, data)
            })
            .collect()
    }
}

/// A stochastic solver for an inverse problem: given an input instance it
/// draws approximate samples from the posterior over solutions.
///
/// Implementations must be deterministic given the stream state, and every
/// sample must live in the same `dim()`-dimensional space.
pub trait PosteriorSampler {
    fn dim(&self) -> usize;

    /// Draws `n` samples for the instance identified by `instance` with
    /// measurement `x`. Pure samplers ignore `instance`; replay-based ones
    /// (e.g. stacks precomputed by an external model) ignore `x` and `rng`.
    fn sample_stack(
        &self,
        instance: u64,
        x: &FlatVector,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<SampleStack, SamplerError>;
}

/// Covariance structure of the synthetic Gaussian task.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceModel {
    /// Constant pairwise correlation `rho`, per-coordinate variance `tau2`.
    Equicorrelation { rho: f64, tau2: f64 },
    /// `cov(p, q) = tau2 · exp(-dist(p, q) / length_scale)` over pixel
    /// positions of an `h×w×c` grid; channels are independent.
    SpatialExponential { length_scale: f64, tau2: f64, height: usize, width: usize, channels: usize },
    /// Independent coordinates with the given variances.
    Diagonal { variances: Vec<f64> },
}

impl CovarianceModel {
    pub fn dim_hint(&self) -> Option<usize> {
        match self {
            CovarianceModel::Equicorrelation { .. } => None,
            CovarianceModel::SpatialExponential { height, width, channels, .. } => Some(height * width * channels),
            CovarianceModel::Diagonal { variances } => Some(variances.len()),
        }
    }

    pub fn matrix(&self, dim: usize) -> Result<DMatrix<f64>, SamplerError> {
        match self {
            CovarianceModel::Equicorrelation { rho, tau2 } => {
                if !(0.0..1.0).contains(rho) {
                    return Err(SamplerError::BadParameter("equicorrelation rho must be in [0, 1)"));
                }
                if *tau2 < 0.0 {
                    return Err(SamplerError::NotPsd { eigenvalue: *tau2 });
                }
                Ok(DMatrix::from_fn(dim, dim, |i, j| if i == j { *tau2 } else { tau2 * rho }))
            }
            CovarianceModel::SpatialExponential { length_scale, tau2, height, width, channels } => {
                if *length_scale <= 0.0 {
                    return Err(SamplerError::BadParameter("length scale must be positive"));
                }
                if *tau2 < 0.0 {
                    return Err(SamplerError::NotPsd { eigenvalue: *tau2 });
                }
                let d = height * width * channels;
                if d != dim {
                    return Err(SamplerError::BadParameter("spatial covariance shape does not match dim"));
                }
                let (w, c) = (*width, *channels);
                Ok(DMatrix::from_fn(d, d, |a, b| {
                    let (pa, ca) = (a / c, a % c);
                    let (pb, cb) = (b / c, b % c);
                    if ca != cb {
                        return 0.0;
                    }
                    let (ra, cola) = ((pa / w) as f64, (pa % w) as f64);
                    let (rb, colb) = ((pb / w) as f64, (pb % w) as f64);
                    let dist = ((ra - rb).powi(2) + (cola - colb).powi(2)).sqrt();
                    tau2 * (-dist / length_scale).exp()
                }))
            }
            CovarianceModel::Diagonal { variances } => {
                if variances.len() != dim {
                    return Err(SamplerError::BadParameter("diagonal variance length does not match dim"));
                }
                Ok(DMatrix::from_fn(dim, dim, |i, j| if i == j { variances[i] } else { 0.0 }))
            }
        }
    }
}

/// Factor `A` with `A·Aᵀ = C`: Cholesky when `C` is positive definite,
/// otherwise a symmetric eigendecomposition with eigenvalues clamped at
/// zero (tolerance `1e-12·λ_max`; anything more negative is an error).
fn factorize(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, SamplerError> {
    if let Some(chol) = nalgebra::linalg::Cholesky::new(cov.clone()) {
        return Ok(chol.unpack());
    }
    let eig = nalgebra::linalg::SymmetricEigen::new(cov.clone());
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let tol = 1e-12 * lambda_max;
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -tol {
            return Err(SamplerError::NotPsd { eigenvalue: lambda });
        }
        let s = lambda.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(scaled)
}

/// Parameters of the synthetic Gaussian task.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTaskSpec {
    pub dim: usize,
    pub input_dim: usize,
    pub covariance: CovarianceModel,
    /// Multiplier on the *sampler's* covariance only; ground truth is unaffected.
    pub sampler_scale: f64,
}

/// Synthetic inverse problem with posterior `y | x ~ N(W·x + b, C)`.
///
/// The affine mean map is drawn once from the seed (tag `"mean-map"`) and
/// scaled so that `m(x) ∈ [0.35, 0.65]^d` for `x ∈ [0,1]^k`, keeping
/// posteriors well inside the nominal `[0,1]` dynamic range.
#[derive(Debug, Clone)]
pub struct GaussianTask {
    spec: GaussianTaskSpec,
    mean_w: DMatrix<f64>,
    mean_b: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianTask {
    pub fn new(spec: GaussianTaskSpec, seed: &SeedSpec) -> Result<Self, SamplerError> {
        if spec.dim == 0 || spec.input_dim == 0 {
            return Err(SamplerError::BadParameter("dim and input_dim must be positive"));
        }
        if let Some(hint) = spec.covariance.dim_hint() {
            if hint != spec.dim {
                return Err(SamplerError::BadParameter("covariance shape does not match dim"));
            }
        }
        if !(spec.sampler_scale > 0.0) {
            return Err(SamplerError::BadParameter("sampler scale must be positive"));
        }
        let cov = spec.covariance.matrix(spec.dim)?;
        let factor = factorize(&cov)?;

        let mut rng = seed.stream(0, "mean-map");
        let mut mean_w = DMatrix::zeros(spec.dim, spec.input_dim);
        let mut mean_b = DVector::zeros(spec.dim);
        for j in 0..spec.dim {
            let raw: Vec<f64> = (0..spec.input_dim).map(|_| 2.0 * random_unit(&mut rng) - 1.0).collect();
            let l1: f64 = raw.iter().map(|v| v.abs()).sum();
            let scale = if l1 > 0.0 { 0.3 / l1 } else { 0.0 };
            let mut sum = 0.0;
            for (i, v) in raw.iter().enumerate() {
                let w = v * scale;
                mean_w[(j, i)] = w;
                sum += w;
            }
            mean_b[j] = 0.5 - sum / 2.0;
        }
        Ok(Self { spec, mean_w, mean_b, factor })
    }

    pub fn spec(&self) -> &GaussianTaskSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Posterior mean `m(x) = W·x + b`.
    pub fn mean(&self, x: &FlatVector) -> Result<FlatVector, SamplerError> {
        if x.dim() != self.spec.input_dim {
            return Err(SamplerError::InputDim { expected: self.spec.input_dim, got: x.dim() });
        }
        let xv = DVector::from_column_slice(x.as_slice());
        let m = &self.mean_w * xv + &self.mean_b;
        Ok(FlatVector::new(m.as_slice().to_vec()))
    }

    fn draw(&self, x: &FlatVector, scale: f64, rng: &mut dyn RngCore) -> Result<DVector<f64>, SamplerError> {
        if x.dim() != self.spec.input_dim {
            return Err(SamplerError::InputDim { expected: self.spec.input_dim, got: x.dim() });
        }
        let xv = DVector::from_column_slice(x.as_slice());
        let mut m = &self.mean_w * xv + &self.mean_b;
        let z = DVector::from_fn(self.spec.dim, |_, _| StandardNormal.sample(rng));
        m += (&self.factor * z) * scale;
        Ok(m)
    }

    /// One draw from the *true* posterior `N(m(x), C)`; the sampler scale
    /// does not apply here.
    pub fn ground_truth(&self, x: &FlatVector, rng: &mut dyn RngCore) -> Result<FlatVector, SamplerError> {
        Ok(FlatVector::new(self.draw(x, 1.0, rng)?.as_slice().to_vec()))
    }

    /// Input measurement drawn uniformly on `[0,1]^input_dim`.
    pub fn draw_input(&self, rng: &mut dyn RngCore) -> FlatVector {
        FlatVector::new((0..self.spec.input_dim).map(|_| random_unit(rng)).collect())
    }
}

fn random_unit(rng: &mut dyn RngCore) -> f64 {
    // 53 random bits into [0, 1)
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl PosteriorSampler for GaussianTask {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    /// i.i.d. rows from `N(m(x), s²·C)`.
    fn sample_stack(
        &self,
        _instance: u64,
        x: &FlatVector,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<SampleStack, SamplerError> {
        if n == 0 {
            return Err(SamplerError::EmptyStack);
        }
        let mut data = Vec::with_capacity(n * self.spec.dim);
        for _ in 0..n {
            let row = self.draw(x, self.spec.sampler_scale, rng)?;
            data.extend_from_slice(row.as_slice());
        }
        SampleStack::new(n, self.spec.dim, data)
    }
}

/// One calibration or test instance: measurement, ground truth, id.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub id: u64,
    pub x: FlatVector,
    pub y: FlatVector,
}

/// Draws `n_instances` i.i.d. pairs `(x, y)` with `x` from the task input
/// distribution and `y` from the true posterior. Instance `i` uses stream
/// `(i, "dataset")`, so datasets replay exactly for a fixed seed.
pub fn generate_dataset(task: &GaussianTask, n_instances: usize, seed: &SeedSpec) -> Vec<DatasetPair> {
    (0..n_instances)
        .map(|i| {
            let mut rng = seed.stream(i as u64, "dataset");
            let x = task.draw_input(&mut rng);
            let y = task.ground_truth(&x, &mut rng).expect("input drawn with task dimension");
            DatasetPair { id: i as u64, x, y }
        })
        .collect()
}
