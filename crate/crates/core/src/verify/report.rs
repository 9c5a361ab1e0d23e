//! Test-set verification summary.

use std::fmt::Write as _;

use super::bound::{loss_upper_bound, significant_bit_probability, BoundSpec, Probability};
use super::stats::{mae, residual_stats, residuals, ResidualStats};
use crate::error::{Error, Result};
use crate::xbar::NormRange;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportThresholds {
    /// Largest accepted `|mean| / std` of the residuals.
    pub mean_ratio: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl Default for ReportThresholds {
    fn default() -> Self {
        ReportThresholds {
            mean_ratio: 0.1,
            skewness: 0.5,
            excess_kurtosis: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub samples: usize,
    pub outputs: usize,
    pub mse: f64,
    pub mae: f64,
    pub mae_volts: f64,
    pub per_output_mse: Vec<f64>,
    pub per_output_mae: Vec<f64>,
    pub bound_spec: BoundSpec,
    pub bound: f64,
    pub probability: Probability,
    pub stats: ResidualStats,
    pub within_bound: bool,
    /// Empirical probability strictly above `p`.
    pub probability_met: bool,
    /// Empirical probability at least `p - 3 SE`.
    pub probability_consistent: bool,
    pub mean_centered: bool,
    pub skewness_ok: bool,
    pub kurtosis_ok: bool,
}

impl VerificationReport {
    /// `pred` and `target` are row-major `(samples, outputs)` in normalized
    /// units; `output` maps them back to volts.
    pub fn new(
        pred: &[f64],
        target: &[f64],
        outputs: usize,
        output: NormRange,
        bound_spec: BoundSpec,
        thresholds: ReportThresholds,
    ) -> Result<Self> {
        if outputs == 0 || !pred.len().is_multiple_of(outputs) {
            return Err(Error::shape(format!("multiple of {outputs}"), pred.len()));
        }
        if pred.iter().chain(target).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite prediction or target".into()));
        }
        let z = residuals(pred, target)?;
        let mse = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        let mae_n = mae(pred, target)?;
        let stats = residual_stats(&z)?;
        // Jensen and the variance decomposition; tolerate rounding only
        let slack = 1.0 + 1e-12;
        if mae_n * mae_n > mse * slack || stats.mean * stats.mean > mse * slack {
            return Err(Error::Parameter(format!("inconsistent moments: mse {mse}, mae {mae_n}, mean {}", stats.mean)));
        }
        let mut per_output_mse = vec![0.0; outputs];
        let mut per_output_mae = vec![0.0; outputs];
        for row in z.chunks_exact(outputs) {
            for (j, &v) in row.iter().enumerate() {
                per_output_mse[j] += v * v;
                per_output_mae[j] += v.abs();
            }
        }
        let samples = z.len() / outputs;
        for v in per_output_mse.iter_mut().chain(per_output_mae.iter_mut()) {
            *v /= samples as f64;
        }
        let bound = loss_upper_bound(&bound_spec)?;
        let probability = significant_bit_probability(&z, &bound_spec)?;
        Ok(VerificationReport {
            samples,
            outputs,
            mse,
            mae: mae_n,
            mae_volts: mae_n * output.span(),
            per_output_mse,
            per_output_mae,
            bound_spec,
            bound,
            probability,
            stats,
            within_bound: mse <= bound,
            probability_met: probability.value > bound_spec.p,
            probability_consistent: probability.value >= bound_spec.p - 3.0 * probability.std_error,
            mean_centered: stats.mean.abs() <= thresholds.mean_ratio * stats.std,
            skewness_ok: stats.skewness.is_some_and(|v| v.abs() <= thresholds.skewness),
            kurtosis_ok: stats.excess_kurtosis.is_some_and(|v| v.abs() <= thresholds.excess_kurtosis),
        })
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "degenerate".into());
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        vec![
            ("samples", self.samples.to_string()),
            ("outputs", self.outputs.to_string()),
            ("mse", self.mse.to_string()),
            ("mae", self.mae.to_string()),
            ("mae_volts", self.mae_volts.to_string()),
            ("per_output_mse", join(&self.per_output_mse)),
            ("per_output_mae", join(&self.per_output_mae)),
            ("bound_s", self.bound_spec.s.to_string()),
            ("bound_p", self.bound_spec.p.to_string()),
            ("tolerance", self.bound_spec.tolerance().to_string()),
            ("bound", self.bound.to_string()),
            ("probability", self.probability.value.to_string()),
            ("probability_se", self.probability.std_error.to_string()),
            ("residual_mean", self.stats.mean.to_string()),
            ("residual_std", self.stats.std.to_string()),
            ("residual_skewness", opt(self.stats.skewness)),
            ("residual_excess_kurtosis", opt(self.stats.excess_kurtosis)),
            ("within_bound", self.within_bound.to_string()),
            ("probability_met", self.probability_met.to_string()),
            ("probability_consistent", self.probability_consistent.to_string()),
            ("mean_centered", self.mean_centered.to_string()),
            ("skewness_ok", self.skewness_ok.to_string()),
            ("kurtosis_ok", self.kurtosis_ok.to_string()),
        ]
    }

    /// One `key=value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Header line plus one data row.
    pub fn to_csv(&self) -> String {
        let (keys, values): (Vec<_>, Vec<_>) = self.fields().into_iter().unzip();
        format!("{}\n{}\n", keys.join(","), values.join(","))
    }
}
