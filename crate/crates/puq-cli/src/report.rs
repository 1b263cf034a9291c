//! Human-readable summary tables for risk reports.

use crate::io::{RiskReportDto, VerdictDto};

/// One table row: aggregates a batch of reports (a single evaluation or
/// all replicates of a run).
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub label: String,
    pub method: String,
    pub replicates: usize,
    pub abstentions: usize,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub recon_mean: f64,
    pub recon_std: f64,
    pub k_hat_mean: f64,
    pub k_hat_std: f64,
    pub k_budget: f64,
    pub volume_mean: f64,
    pub volume_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub fn summarize(label: &str, reports: &[RiskReportDto]) -> SummaryRow {
    let live: Vec<&RiskReportDto> = reports.iter().filter(|r| !r.abstained).collect();
    let collect = |f: fn(&RiskReportDto) -> f64| -> Vec<f64> { live.iter().map(|r| f(r)).collect() };
    let (coverage_mean, coverage_std) = mean_std(&collect(|r| r.coverage_risk.mean));
    let (recon_mean, recon_std) = mean_std(&collect(|r| r.recon_risk.mean));
    let (volume_mean, volume_std) = mean_std(&collect(|r| r.volume.mean));
    let (k_hat_mean, k_hat_std) = mean_std(&collect(|r| r.k_hat.mean));
    let (k_budget, _) = mean_std(&collect(|r| r.k_budget as f64));
    SummaryRow {
        label: label.to_string(),
        method: reports.first().map(|r| r.method.clone()).unwrap_or_default(),
        replicates: reports.len(),
        abstentions: reports.len() - live.len(),
        coverage_mean,
        coverage_std,
        recon_mean,
        recon_std,
        k_hat_mean,
        k_hat_std,
        k_budget,
        volume_mean,
        volume_std,
    }
}

pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:<20} {:>6} {:>22} {:>22} {:>16} {:>24}\n",
        "Run", "Method", "Reps", "Coverage Risk", "Recons. Risk", "Dim k-hat/K", "Uncert. Volume"
    ));
    for r in rows {
        let dim = if r.k_hat_mean.is_nan() {
            "-".to_string()
        } else {
            format!("{:.1}±{:.1}/{:.0}", r.k_hat_mean, r.k_hat_std, r.k_budget)
        };
        let fmt_pm = |m: f64, s: f64| {
            if m.is_nan() {
                "abstained".to_string()
            } else {
                format!("{m:.4} ± {s:.4}")
            }
        };
        let vol = if r.volume_mean.is_nan() {
            "abstained".to_string()
        } else {
            format!("{:.4e} ± {:.4e}", r.volume_mean, r.volume_std)
        };
        out.push_str(&format!(
            "{:<24} {:<20} {:>6} {:>22} {:>22} {:>16} {:>24}\n",
            r.label,
            r.method,
            r.replicates,
            fmt_pm(r.coverage_mean, r.coverage_std),
            fmt_pm(r.recon_mean, r.recon_std),
            dim,
            vol
        ));
    }
    out
}

/// Volume ratios of every row against the first (baseline) row.
pub fn render_ratios(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let Some(first) = rows.first() else { return out };
    if first.volume_mean.is_nan() || first.volume_mean == 0.0 {
        return out;
    }
    for r in rows.iter().skip(1) {
        if r.volume_mean.is_nan() {
            continue;
        }
        out.push_str(&format!(
            "volume ratio {} / {} = {:.6}\n",
            r.label,
            first.label,
            r.volume_mean / first.volume_mean
        ));
    }
    out
}

pub fn render_verdict(v: &VerdictDto) -> String {
    format!(
        "verdict: {} ({} of {} replicates violated, fraction {:.4} vs bound {:.4}, {} abstentions)\n",
        v.status, v.joint_violations, v.replicates, v.violation_fraction, v.bound, v.abstentions
    )
}
