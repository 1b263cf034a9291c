//! Run configuration: a single JSON file with documented defaults for
//! every field. Unknown keys are rejected. Command-line flags override
//! individual fields after loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use puq_core::calibration::{LambdaGrid, Method, PatchContext, PipelineParams, RiskConfig};
use puq_core::samplers::{CovarianceModel, GaussianTask, GaussianTaskSpec};
use puq_core::seed::SeedSpec;
use puq_core::tensor::{PatchMode, PatchSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    #[default]
    EPuq,
    DaPuq,
    RdaPuq,
    PixelwiseBaseline,
}

impl MethodName {
    pub fn to_core(self) -> Method {
        match self {
            MethodName::EPuq => Method::EPuq,
            MethodName::DaPuq => Method::DaPuq,
            MethodName::RdaPuq => Method::RdaPuq,
            MethodName::PixelwiseBaseline => Method::PixelwiseBaseline,
        }
    }
}

impl std::str::FromStr for MethodName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "e-puq" => Ok(MethodName::EPuq),
            "da-puq" => Ok(MethodName::DaPuq),
            "rda-puq" => Ok(MethodName::RdaPuq),
            "pixelwise-baseline" => Ok(MethodName::PixelwiseBaseline),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovarianceConfig {
    /// Constant pairwise correlation `rho`, per-coordinate variance `tau2`.
    Equicorrelation { rho: f64, tau2: f64 },
    /// `tau2 · exp(-pixel distance / length_scale)`; requires `task.shape`.
    SpatialExponential { length_scale: f64, tau2: f64 },
    /// Independent coordinates with explicit variances.
    Diagonal { variances: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskConfig {
    /// Synthetic Gaussian task with an analytically known posterior.
    Gaussian {
        #[serde(default)]
        dim: Option<usize>,
        /// `[height, width, channels]`; required for patch mode and
        /// spatial covariances. `dim` is derived from it when present.
        #[serde(default)]
        shape: Option<[usize; 3]>,
        #[serde(default = "default_input_dim")]
        input_dim: usize,
        covariance: CovarianceConfig,
        #[serde(default = "default_scale")]
        sampler_scale: f64,
    },
    /// Externally generated data: a dataset file plus one stored sample
    /// stack per instance.
    File { dataset: PathBuf, stacks_dir: PathBuf },
}

fn default_input_dim() -> usize {
    4
}

fn default_scale() -> f64 {
    1.0
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::Gaussian {
            dim: Some(12),
            shape: None,
            input_dim: default_input_dim(),
            covariance: CovarianceConfig::Equicorrelation { rho: 0.9, tau2: 0.01 },
            sampler_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchModeName {
    Local,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    pub mode: PatchModeName,
}

/// One lambda grid: either explicit values or a generated range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Values { values: Vec<f64> },
    Range { kind: GridKind, min: f64, max: f64, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Linear,
    Geometric,
}

impl GridSpec {
    pub fn resolve(&self) -> Result<Vec<f64>, ConfigError> {
        match self {
            GridSpec::Values { values } => {
                if values.is_empty() {
                    return Err(invalid("grid values must be nonempty"));
                }
                Ok(values.clone())
            }
            GridSpec::Range { kind, min, max, count } => {
                if *count < 2 || !(min < max) {
                    return Err(invalid("grid range needs count >= 2 and min < max"));
                }
                let n = *count;
                Ok(match kind {
                    GridKind::Linear => (0..n)
                        .map(|i| min + (max - min) * i as f64 / (n - 1) as f64)
                        .collect(),
                    GridKind::Geometric => {
                        if *min <= 0.0 {
                            return Err(invalid("geometric grid needs min > 0"));
                        }
                        let step = (max / min).ln() / (n - 1) as f64;
                        (0..n).map(|i| min * (step * i as f64).exp()).collect()
                    }
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    #[serde(default = "default_grid1")]
    pub lambda1: GridSpec,
    #[serde(default = "default_grid2")]
    pub lambda2: GridSpec,
    #[serde(default = "default_grid3")]
    pub lambda3: GridSpec,
}

fn default_grid1() -> GridSpec {
    GridSpec::Range { kind: GridKind::Linear, min: 0.5, max: 1.0, count: 50 }
}

fn default_grid2() -> GridSpec {
    GridSpec::Range { kind: GridKind::Geometric, min: 0.25, max: 8.0, count: 101 }
}

fn default_grid3() -> GridSpec {
    GridSpec::Range { kind: GridKind::Linear, min: 0.05, max: 1.0, count: 20 }
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { lambda1: default_grid1(), lambda2: default_grid2(), lambda3: default_grid3() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSettings {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    0.05
}
fn default_q() -> f64 {
    0.9
}
fn default_delta() -> f64 {
    0.1
}

impl Default for RiskSettings {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.05, q: 0.9, delta: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Optional everywhere except `replicate`, which refuses
    /// to run without one.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Worker threads for replicated runs; 0 means all available cores.
    /// Results are independent of this value.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub patch: Option<PatchConfig>,
    #[serde(default)]
    pub method: MethodName,
    #[serde(default)]
    pub risk: RiskSettings,
    #[serde(default)]
    pub grid: GridSettings,
    /// Axis count: K for the adaptive procedure, K_max for the reduced
    /// one; must equal the instance dimension for the exact procedures.
    /// Defaults to the instance dimension.
    #[serde(default)]
    pub k: Option<usize>,
    /// Samples drawn per instance; defaults to `k`.
    #[serde(default)]
    pub samples_per_instance: Option<usize>,
    #[serde(default = "default_n_cal")]
    pub n_cal: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("puq-out")
}
fn default_n_cal() -> usize {
    300
}
fn default_n_test() -> usize {
    300
}
fn default_replicates() -> usize {
    20
}
fn default_epsilon() -> f64 {
    1e-10
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Image shape, when the task declares one.
    pub fn shape(&self) -> Option<[usize; 3]> {
        match &self.task {
            TaskConfig::Gaussian { shape, .. } => *shape,
            TaskConfig::File { .. } => None,
        }
    }

    /// Dimension of the sampler output space.
    pub fn task_dim(&self) -> Result<usize, ConfigError> {
        match &self.task {
            TaskConfig::Gaussian { dim, shape, covariance, .. } => {
                if let Some([h, w, c]) = shape {
                    let d = h * w * c;
                    if dim.is_some_and(|x| x != d) {
                        return Err(invalid("task.dim contradicts task.shape"));
                    }
                    return Ok(d);
                }
                if let Some(d) = dim {
                    return Ok(*d);
                }
                if let CovarianceConfig::Diagonal { variances } = covariance {
                    return Ok(variances.len());
                }
                Err(invalid("task needs dim, shape, or diagonal variances to fix a dimension"))
            }
            TaskConfig::File { dataset, .. } => {
                let header = crate::io::read_dataset_header(dataset)
                    .map_err(|e| invalid(format!("cannot read dataset header: {e}")))?;
                Ok(header.dim)
            }
        }
    }

    pub fn patch_context(&self) -> Result<Option<PatchContext>, ConfigError> {
        let Some(patch) = &self.patch else { return Ok(None) };
        let Some([h, w, c]) = self.shape() else {
            return Err(invalid("patch mode requires task.shape"));
        };
        let spec = match patch.mode {
            PatchModeName::Local => PatchSpec { patch_h: patch.patch_h, patch_w: patch.patch_w, mode: PatchMode::Local },
            PatchModeName::Global => PatchSpec::global(),
        };
        spec.tile_grid(h, w).map_err(|e| invalid(format!("patch spec: {e}")))?;
        Ok(Some(PatchContext { height: h, width: w, channels: c, spec }))
    }

    /// Dimension of one calibration instance (tile dimension in patch mode).
    pub fn instance_dim(&self) -> Result<usize, ConfigError> {
        let d = self.task_dim()?;
        Ok(match self.patch_context()? {
            Some(ctx) => ctx.patch_dim(),
            None => d,
        })
    }

    pub fn resolved_k(&self) -> Result<usize, ConfigError> {
        Ok(self.k.unwrap_or(self.instance_dim()?))
    }

    pub fn resolved_samples(&self) -> Result<usize, ConfigError> {
        Ok(self.samples_per_instance.unwrap_or(self.resolved_k()?))
    }

    pub fn pipeline_params(&self) -> Result<PipelineParams, ConfigError> {
        let params = PipelineParams {
            method: self.method.to_core(),
            k: self.resolved_k()?,
            n_samples: self.resolved_samples()?,
            risk: RiskConfig {
                alpha: self.risk.alpha,
                beta: self.risk.beta,
                q: self.risk.q,
                delta: self.risk.delta,
            },
            grid: LambdaGrid {
                lambda1: self.grid.lambda1.resolve()?,
                lambda2: self.grid.lambda2.resolve()?,
                lambda3: self.grid.lambda3.resolve()?,
            },
            epsilon: self.epsilon,
        };
        params.validate().map_err(|e| invalid(format!("{e}")))?;
        Ok(params)
    }

    pub fn gaussian_task(&self, seed: &SeedSpec) -> Result<GaussianTask, ConfigError> {
        match &self.task {
            TaskConfig::Gaussian { input_dim, covariance, sampler_scale, .. } => {
                let dim = self.task_dim()?;
                let cov = match covariance {
                    CovarianceConfig::Equicorrelation { rho, tau2 } => {
                        CovarianceModel::Equicorrelation { rho: *rho, tau2: *tau2 }
                    }
                    CovarianceConfig::SpatialExponential { length_scale, tau2 } => {
                        let Some([h, w, c]) = self.shape() else {
                            return Err(invalid("spatial-exponential covariance requires task.shape"));
                        };
                        CovarianceModel::SpatialExponential {
                            length_scale: *length_scale,
                            tau2: *tau2,
                            height: h,
                            width: w,
                            channels: c,
                        }
                    }
                    CovarianceConfig::Diagonal { variances } => {
                        CovarianceModel::Diagonal { variances: variances.clone() }
                    }
                };
                GaussianTask::new(
                    GaussianTaskSpec { dim, input_dim: *input_dim, covariance: cov, sampler_scale: *sampler_scale },
                    seed,
                )
                .map_err(|e| invalid(format!("task: {e}")))
            }
            TaskConfig::File { .. } => Err(invalid("not a gaussian task")),
        }
    }

    /// Fully-resolved copy: the echo written next to run outputs, which
    /// reloads to an equivalent configuration.
    pub fn resolved(&self, seed: u64) -> Result<RunConfig, ConfigError> {
        let mut echo = self.clone();
        echo.seed = Some(seed);
        echo.k = Some(self.resolved_k()?);
        echo.samples_per_instance = Some(self.resolved_samples()?);
        Ok(echo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_object() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.n_cal, 300);
        assert_eq!(cfg.method, MethodName::EPuq);
        assert_eq!(cfg.task_dim().unwrap(), 12);
        assert_eq!(cfg.resolved_k().unwrap(), 12);
        assert_eq!(cfg.epsilon, 1e-10);
        let params = cfg.pipeline_params().unwrap();
        assert_eq!(params.grid.lambda2.len(), 101);
        assert_eq!(params.grid.lambda1.len(), 50);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"not_a_field": 1}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<RunConfig>(r#"{"risk": {"alpha": 0.1, "gamma": 2}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn grid_specs_resolve() {
        let spec = GridSpec::Range { kind: GridKind::Geometric, min: 0.25, max: 8.0, count: 101 };
        let g = spec.resolve().unwrap();
        assert_eq!(g.len(), 101);
        assert!((g[0] - 0.25).abs() < 1e-12 && (g[100] - 8.0).abs() < 1e-9);
        let vals = GridSpec::Values { values: vec![0.5, 1.0] }.resolve().unwrap();
        assert_eq!(vals, vec![0.5, 1.0]);
    }

    #[test]
    fn resolved_echo_roundtrips() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 7, "n_cal": 10}"#).unwrap();
        let echo = cfg.resolved(7).unwrap();
        let text = serde_json::to_string_pretty(&echo).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(echo, back);
        assert_eq!(back.k, Some(12));
    }

    #[test]
    fn shape_drives_dimensions() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{
                "task": {"kind": "gaussian", "shape": [2, 2, 3],
                         "covariance": {"model": "equicorrelation", "rho": 0.5, "tau2": 0.01}},
                "patch": {"patch_h": 1, "patch_w": 2, "mode": "local"}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.task_dim().unwrap(), 12);
        assert_eq!(cfg.instance_dim().unwrap(), 6);
        let ctx = cfg.patch_context().unwrap().unwrap();
        assert_eq!(ctx.patch_dim(), 6);
    }

    #[test]
    fn patch_requires_shape() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"patch": {"patch_h": 1, "patch_w": 1, "mode": "local"}}"#,
        )
        .unwrap();
        assert!(cfg.patch_context().is_err());
    }
}
