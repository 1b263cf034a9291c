//! File formats: sample-stack manifests with raw little-endian blobs,
//! JSON-lines datasets with base64 payloads, per-instance basis caches,
//! calibration results with CSV diagnostics, and risk reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use puq_core::approximation::{BasisKind, PrincipalBasis};
use puq_core::calibration::{CalibrationResult, ChosenParams, GridDiagnostic, Method};
use puq_core::metrics::{DistSummary, RiskReport, Stats, Verdict, VerdictStatus};
use puq_core::samplers::{DatasetPair, PosteriorSampler, SampleStack, SamplerError};
use puq_core::tensor::FlatVector;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Format { path: path.to_path_buf(), reason: reason.into() }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(file_err(path))
}

// ---------------------------------------------------------------------------
// sample stacks: JSON manifest + raw little-endian blob

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackManifest {
    pub dtype: String,
    pub endianness: String,
    pub shape: Vec<usize>,
    pub blob: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<u64>,
}

impl StackManifest {
    /// `(n, d)` with 4-long shapes flattened channel-fastest.
    pub fn stack_shape(&self, path: &Path) -> Result<(usize, usize), IoError> {
        match self.shape.as_slice() {
            [n, d] => Ok((*n, *d)),
            [n, h, w, c] => Ok((*n, h * w * c)),
            other => Err(format_err(path, format!("shape must have 2 or 4 entries, got {}", other.len()))),
        }
    }
}

pub fn stack_manifest_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("stack_{id:06}.json"))
}

/// Writes a stack as `stack_<id>.json` + `stack_<id>.bin` (f64, little
/// endian, row-major, channel fastest) and returns the manifest.
pub fn save_stack(
    dir: &Path,
    id: u64,
    stack: &SampleStack,
    image_shape: Option<[usize; 3]>,
) -> Result<StackManifest, IoError> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let blob_name = format!("stack_{id:06}.bin");
    let shape = match image_shape {
        Some([h, w, c]) if h * w * c == stack.dim() => vec![stack.n(), h, w, c],
        _ => vec![stack.n(), stack.dim()],
    };
    let manifest = StackManifest {
        dtype: "f64".into(),
        endianness: "little".into(),
        shape,
        blob: blob_name.clone(),
        instance_id: Some(id),
    };
    let blob_path = dir.join(&blob_name);
    let mut bytes = Vec::with_capacity(stack.as_slice().len() * 8);
    for v in stack.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&blob_path, bytes).map_err(file_err(&blob_path))?;
    write_json(&stack_manifest_path(dir, id), &manifest)?;
    Ok(manifest)
}

/// Loads a stack through its manifest, promoting f32 blobs to f64 and
/// rejecting length mismatches and non-finite payloads.
pub fn load_stack(manifest_path: &Path) -> Result<SampleStack, IoError> {
    let manifest: StackManifest = read_json(manifest_path)?;
    if manifest.endianness != "little" {
        return Err(format_err(manifest_path, "endianness must be \"little\""));
    }
    let (n, d) = manifest.stack_shape(manifest_path)?;
    let elem = n * d;
    let blob_path = manifest_path.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
    let bytes = fs::read(&blob_path).map_err(file_err(&blob_path))?;
    let data: Vec<f64> = match manifest.dtype.as_str() {
        "f64" => {
            if bytes.len() != elem * 8 {
                return Err(format_err(&blob_path, format!("expected {} bytes, found {}", elem * 8, bytes.len())));
            }
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect()
        }
        "f32" => {
            if bytes.len() != elem * 4 {
                return Err(format_err(&blob_path, format!("expected {} bytes, found {}", elem * 4, bytes.len())));
            }
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64).collect()
        }
        other => return Err(format_err(manifest_path, format!("unsupported dtype {other:?}"))),
    };
    SampleStack::new(n, d, data).map_err(IoError::from)
}

/// Replays stored stacks as a posterior sampler: instance ids map to
/// manifests under one directory. The stream argument is unused; stored
/// stacks cannot be resampled, requests beyond the stored count fail.
pub struct FileSampler {
    dir: PathBuf,
    dim: usize,
}

impl FileSampler {
    pub fn new(dir: PathBuf, dim: usize) -> Self {
        Self { dir, dim }
    }
}

impl PosteriorSampler for FileSampler {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_stack(
        &self,
        instance: u64,
        _x: &FlatVector,
        n: usize,
        _rng: &mut dyn rand::RngCore,
    ) -> Result<SampleStack, SamplerError> {
        let path = stack_manifest_path(&self.dir, instance);
        let stack = load_stack(&path).map_err(|_| SamplerError::Unavailable {
            instance,
            requested: n,
            reason: "no readable stack file for this instance",
        })?;
        if stack.dim() != self.dim {
            return Err(SamplerError::InputDim { expected: self.dim, got: stack.dim() });
        }
        if stack.n() < n {
            return Err(SamplerError::Unavailable {
                instance,
                requested: n,
                reason: "stored stack has fewer samples than requested",
            });
        }
        stack.prefix(n)
    }
}

// ---------------------------------------------------------------------------
// datasets: JSON lines, header first, base64 little-endian f64 payloads

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub kind: String,
    pub version: u32,
    pub input_dim: usize,
    pub dim: usize,
    pub count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    id: u64,
    x: String,
    y: String,
}

fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_f64s(text: &str, path: &Path) -> Result<Vec<f64>, IoError> {
    let bytes = B64.decode(text).map_err(|e| format_err(path, format!("base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(format_err(path, "payload length not a multiple of 8"));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

pub fn write_dataset(path: &Path, pairs: &[DatasetPair], input_dim: usize, dim: usize) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(file_err(parent))?;
    }
    let mut out = Vec::new();
    let header = DatasetHeader {
        kind: "puq-dataset".into(),
        version: 1,
        input_dim,
        dim,
        count: pairs.len(),
    };
    serde_json::to_writer(&mut out, &header).map_err(|source| IoError::Json { path: path.into(), source })?;
    out.push(b'\n');
    for pair in pairs {
        let record = DatasetRecord {
            id: pair.id,
            x: encode_f64s(pair.x.as_slice()),
            y: encode_f64s(pair.y.as_slice()),
        };
        serde_json::to_writer(&mut out, &record).map_err(|source| IoError::Json { path: path.into(), source })?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(file_err(path))
}

pub fn read_dataset_header(path: &Path) -> Result<DatasetHeader, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let first = text.lines().next().ok_or_else(|| format_err(path, "empty dataset file"))?;
    let header: DatasetHeader =
        serde_json::from_str(first).map_err(|source| IoError::Json { path: path.into(), source })?;
    if header.kind != "puq-dataset" {
        return Err(format_err(path, format!("not a dataset file (kind {:?})", header.kind)));
    }
    Ok(header)
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<DatasetPair>), IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| format_err(path, "empty dataset file"))?;
    let header: DatasetHeader =
        serde_json::from_str(first).map_err(|source| IoError::Json { path: path.into(), source })?;
    if header.kind != "puq-dataset" {
        return Err(format_err(path, format!("not a dataset file (kind {:?})", header.kind)));
    }
    let mut pairs = Vec::with_capacity(header.count);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let record: DatasetRecord =
            serde_json::from_str(line).map_err(|source| IoError::Json { path: path.into(), source })?;
        let x = decode_f64s(&record.x, path)?;
        let y = decode_f64s(&record.y, path)?;
        if x.len() != header.input_dim || y.len() != header.dim {
            return Err(format_err(path, format!("record {} has inconsistent dimensions", record.id)));
        }
        pairs.push(DatasetPair { id: record.id, x: FlatVector::new(x), y: FlatVector::new(y) });
    }
    if pairs.len() != header.count {
        return Err(format_err(path, format!("header says {} records, found {}", header.count, pairs.len())));
    }
    Ok((header, pairs))
}

// ---------------------------------------------------------------------------
// basis caches: JSON manifest + blob of concatenated f64 fields

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisManifest {
    pub kind: String,
    pub dim: usize,
    pub k: usize,
    pub alpha: f64,
    pub blob: String,
    pub layout: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile: Option<usize>,
}

pub fn basis_manifest_path(dir: &Path, id: u64, tile: usize) -> PathBuf {
    dir.join(format!("basis_{id:06}_{tile:04}.json"))
}

fn basis_layout(d: usize, k: usize) -> Vec<String> {
    vec![
        format!("mean:{d}"),
        format!("components:{d}x{k}:col-major"),
        format!("singular_values:{k}"),
        format!("weights:{k}"),
        format!("lo:{k}"),
        format!("hi:{k}"),
    ]
}

pub fn save_basis(dir: &Path, id: u64, tile: usize, basis: &PrincipalBasis) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let (d, k) = (basis.dim(), basis.k());
    let blob_name = format!("basis_{id:06}_{tile:04}.bin");
    let manifest = BasisManifest {
        kind: match basis.kind() {
            BasisKind::PrincipalComponents => "pc".into(),
            BasisKind::Standard => "standard".into(),
        },
        dim: d,
        k,
        alpha: basis.alpha_used(),
        blob: blob_name.clone(),
        layout: basis_layout(d, k),
        instance_id: Some(id),
        tile: Some(tile),
    };
    let mut values = Vec::with_capacity(d + d * k + 4 * k);
    values.extend_from_slice(basis.mean().as_slice());
    for col in basis.components().column_iter() {
        values.extend(col.iter());
    }
    values.extend_from_slice(basis.singular_values());
    values.extend_from_slice(basis.weights());
    values.extend_from_slice(basis.lo());
    values.extend_from_slice(basis.hi());
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in &values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let blob_path = dir.join(&blob_name);
    fs::write(&blob_path, bytes).map_err(file_err(&blob_path))?;
    write_json(&basis_manifest_path(dir, id, tile), &manifest)
}

pub fn load_basis(dir: &Path, id: u64, tile: usize) -> Result<PrincipalBasis, IoError> {
    let manifest_path = basis_manifest_path(dir, id, tile);
    let manifest: BasisManifest = read_json(&manifest_path)?;
    let (d, k) = (manifest.dim, manifest.k);
    let kind = match manifest.kind.as_str() {
        "pc" => BasisKind::PrincipalComponents,
        "standard" => BasisKind::Standard,
        other => return Err(format_err(&manifest_path, format!("unknown basis kind {other:?}"))),
    };
    let blob_path = dir.join(&manifest.blob);
    let bytes = fs::read(&blob_path).map_err(file_err(&blob_path))?;
    let expect = (d + d * k + 4 * k) * 8;
    if bytes.len() != expect {
        return Err(format_err(&blob_path, format!("expected {} bytes, found {}", expect, bytes.len())));
    }
    let values: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    let mut at = 0;
    let mut take = |len: usize| {
        let slice = values[at..at + len].to_vec();
        at += len;
        slice
    };
    let mean = take(d);
    let components = take(d * k);
    let singular = take(k);
    let weights = take(k);
    let lo = take(k);
    let hi = take(k);
    PrincipalBasis::from_parts(kind, d, k, FlatVector::new(mean), components, singular, weights, lo, hi, manifest.alpha)
        .map_err(|e| format_err(&manifest_path, format!("invalid basis: {e}")))
}

// ---------------------------------------------------------------------------
// calibration results and diagnostics

fn method_name(m: Method) -> &'static str {
    m.name()
}

fn parse_method(name: &str, path: &Path) -> Result<Method, IoError> {
    match name {
        "e-puq" => Ok(Method::EPuq),
        "da-puq" => Ok(Method::DaPuq),
        "rda-puq" => Ok(Method::RdaPuq),
        "pixelwise-baseline" => Ok(Method::PixelwiseBaseline),
        other => Err(format_err(path, format!("unknown method {other:?}"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChosenDto {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    pub lambda2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_cap: Option<usize>,
}

impl From<ChosenParams> for ChosenDto {
    fn from(c: ChosenParams) -> Self {
        Self { lambda1: c.lambda1, lambda2: c.lambda2, lambda3: c.lambda3, k_cap: c.k_cap }
    }
}

impl ChosenDto {
    fn to_core(&self) -> ChosenParams {
        ChosenParams { lambda1: self.lambda1, lambda2: self.lambda2, lambda3: self.lambda3, k_cap: self.k_cap }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub method: String,
    pub n_cal: usize,
    pub p_threshold: f64,
    pub abstained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen: Option<ChosenDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_volume: Option<f64>,
    pub valid_count: usize,
    pub valid: Vec<usize>,
}

pub fn write_calibration(path: &Path, result: &CalibrationResult) -> Result<(), IoError> {
    let file = CalibrationFile {
        method: method_name(result.method).into(),
        n_cal: result.n_cal,
        p_threshold: result.p_threshold,
        abstained: result.abstained(),
        chosen: result.chosen.map(ChosenDto::from),
        mean_volume: result.mean_volume,
        valid_count: result.valid.len(),
        valid: result.valid.clone(),
    };
    write_json(path, &file)
}

/// Reloads the parts of a calibration result needed to evaluate it
/// (diagnostics stay in their CSV side-file).
pub fn read_calibration(path: &Path) -> Result<CalibrationResult, IoError> {
    let file: CalibrationFile = read_json(path)?;
    Ok(CalibrationResult {
        method: parse_method(&file.method, path)?,
        n_cal: file.n_cal,
        p_threshold: file.p_threshold,
        valid: file.valid,
        chosen: file.chosen.as_ref().map(ChosenDto::to_core),
        mean_volume: file.mean_volume,
        diagnostics: Vec::new(),
    })
}

fn cell_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_diagnostics_csv(path: &Path, rows: &[GridDiagnostic]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "index",
        "lambda1",
        "lambda2",
        "lambda3",
        "k_cap",
        "mean_recon_loss",
        "p_recon",
        "mean_coverage_loss",
        "p_coverage",
        "p_combined",
        "valid",
        "mean_volume",
        "mean_k_hat",
        "mean_active_weight",
    ])?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            cell_opt(r.lambda1),
            r.lambda2.to_string(),
            cell_opt(r.lambda3),
            r.k_cap.map(|k| k.to_string()).unwrap_or_default(),
            cell_opt(r.mean_recon_loss),
            cell_opt(r.p_recon),
            r.mean_coverage_loss.to_string(),
            r.p_coverage.to_string(),
            r.p_combined.to_string(),
            r.valid.to_string(),
            r.mean_volume.to_string(),
            cell_opt(r.mean_k_hat),
            cell_opt(r.mean_active_weight),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| format_err(path, format!("csv: {e}")))?;
    fs::write(path, bytes).map_err(file_err(path))
}

// ---------------------------------------------------------------------------
// risk reports

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StatsDto {
    pub mean: f64,
    pub std: f64,
}

impl From<Stats> for StatsDto {
    fn from(s: Stats) -> Self {
        Self { mean: s.mean, std: s.std }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DistDto {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl From<DistSummary> for DistDto {
    fn from(d: DistSummary) -> Self {
        Self { mean: d.mean, std: d.std, median: d.median, min: d.min, max: d.max }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RiskReportDto {
    pub method: String,
    pub abstained: bool,
    pub n_instances: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen: Option<ChosenDto>,
    pub coverage_risk: StatsDto,
    pub recon_risk: StatsDto,
    pub volume: StatsDto,
    pub interval_active: StatsDto,
    pub interval_padded: StatsDto,
    pub k_hat: DistDto,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_cap: Option<usize>,
    #[serde(default)]
    pub k_budget: usize,
}

impl From<&RiskReport> for RiskReportDto {
    fn from(r: &RiskReport) -> Self {
        Self {
            method: method_name(r.method).into(),
            abstained: r.abstained,
            n_instances: r.n_instances,
            chosen: r.chosen.map(ChosenDto::from),
            coverage_risk: r.coverage_risk.into(),
            recon_risk: r.recon_risk.into(),
            volume: r.volume.into(),
            interval_active: r.interval_active.into(),
            interval_padded: r.interval_padded.into(),
            k_hat: r.k_hat.into(),
            k_cap: r.k_cap,
            k_budget: r.k_budget,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VerdictDto {
    pub replicates: usize,
    pub abstentions: usize,
    pub coverage_violations: usize,
    pub recon_violations: usize,
    pub joint_violations: usize,
    pub violation_fraction: f64,
    pub bound: f64,
    pub status: String,
}

impl From<&Verdict> for VerdictDto {
    fn from(v: &Verdict) -> Self {
        Self {
            replicates: v.replicates,
            abstentions: v.abstentions,
            coverage_violations: v.coverage_violations,
            recon_violations: v.recon_violations,
            joint_violations: v.joint_violations,
            violation_fraction: v.violation_fraction,
            bound: v.bound,
            status: match v.status {
                VerdictStatus::Pass => "pass".into(),
                VerdictStatus::Fail => "fail".into(),
                VerdictStatus::Insufficient => "insufficient".into(),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReportMeta {
    pub seed: u64,
    /// Unix seconds at write time; excluded from determinism comparisons.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub meta: ReportMeta,
    pub report: RiskReportDto,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReplicateFile {
    pub meta: ReportMeta,
    pub verdict: VerdictDto,
    pub reports: Vec<RiskReportDto>,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_report(path: &Path, seed: u64, report: &RiskReport) -> Result<(), IoError> {
    write_json(path, &ReportFile { meta: ReportMeta { seed, timestamp: now_unix() }, report: report.into() })
}

pub fn write_replicate_report(
    path: &Path,
    seed: u64,
    verdict: &Verdict,
    reports: &[RiskReport],
) -> Result<(), IoError> {
    let file = ReplicateFile {
        meta: ReportMeta { seed, timestamp: now_unix() },
        verdict: verdict.into(),
        reports: reports.iter().map(RiskReportDto::from).collect(),
    };
    write_json(path, &file)
}

/// Report bytes with the timestamp normalized to zero, for byte-level
/// determinism comparisons.
pub fn normalized_report_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    let mut value: serde_json::Value = read_json(path)?;
    if let Some(ts) = value.pointer_mut("/meta/timestamp") {
        *ts = serde_json::Value::from(0u64);
    }
    Ok(serde_json::to_vec_pretty(&value).map_err(|source| IoError::Json { path: path.into(), source })?)
}

pub fn write_volume_map_csv(path: &Path, grid: &[Vec<f64>]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in grid {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| format_err(path, format!("csv: {e}")))?;
    fs::write(path, bytes).map_err(file_err(path))
}

/// Writes one CSV row per replicate for downstream analysis.
pub fn write_replicates_csv(path: &Path, reports: &[RiskReport]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "replicate",
        "abstained",
        "coverage_risk",
        "recon_risk",
        "mean_volume",
        "k_hat_median",
        "k_cap",
        "lambda1",
        "lambda2",
        "lambda3",
    ])?;
    for (i, r) in reports.iter().enumerate() {
        let chosen = r.chosen;
        w.write_record([
            i.to_string(),
            r.abstained.to_string(),
            r.coverage_risk.mean.to_string(),
            r.recon_risk.mean.to_string(),
            r.volume.mean.to_string(),
            r.k_hat.median.to_string(),
            r.k_cap.map(|k| k.to_string()).unwrap_or_default(),
            cell_opt(chosen.and_then(|c| c.lambda1)),
            cell_opt(chosen.map(|c| c.lambda2)),
            cell_opt(chosen.and_then(|c| c.lambda3)),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| format_err(path, format!("csv: {e}")))?;
    fs::write(path, bytes).map_err(file_err(path))
}

pub fn read_report_any(path: &Path) -> Result<(ReportMeta, Vec<RiskReportDto>, Option<VerdictDto>), IoError> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("reports").is_some() {
        let file: ReplicateFile =
            serde_json::from_value(value).map_err(|source| IoError::Json { path: path.into(), source })?;
        Ok((file.meta, file.reports, Some(file.verdict)))
    } else {
        let file: ReportFile =
            serde_json::from_value(value).map_err(|source| IoError::Json { path: path.into(), source })?;
        Ok((file.meta, vec![file.report], None))
    }
}

/// Echo of the resolved run configuration.
pub fn write_resolved_config(path: &Path, config: &crate::config::RunConfig) -> Result<(), IoError> {
    write_json(path, config)
}
