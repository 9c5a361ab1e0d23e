//! Residual moments, MAE and error histograms.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `target - prediction`, element-wise.
pub fn residuals(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != target.len() {
        return Err(Error::shape(target.len(), pred.len()));
    }
    Ok(target.iter().zip(pred).map(|(t, p)| t - p).collect())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Parameter("no values".into()));
    }
    let r = residuals(pred, target)?;
    Ok(r.iter().map(|z| z.abs()).sum::<f64>() / r.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    /// `m3 / m2^1.5`; `None` for constant residuals.
    pub skewness: Option<f64>,
    /// `m4 / m2^2 - 3`; `None` for constant residuals.
    pub excess_kurtosis: Option<f64>,
}

pub fn residual_stats(z: &[f64]) -> Result<ResidualStats> {
    let n = z.len();
    if n < 4 {
        return Err(Error::Parameter(format!("need at least 4 residuals, got {n}")));
    }
    let nf = n as f64;
    let mean = z.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in z {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let std = (m2 / (nf - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    // spread below rounding noise of the mean counts as constant
    let degenerate = m2 == 0.0 || m2.sqrt() <= 1e-12 * mean.abs();
    Ok(ResidualStats {
        n,
        mean,
        std,
        skewness: (!degenerate).then(|| m3 / m2.powf(1.5)),
        excess_kurtosis: (!degenerate).then(|| m4 / (m2 * m2) - 3.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins spanning `[min, max]` of the data; the last bin is closed.
pub fn histogram(z: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if z.is_empty() || bins == 0 {
        return Err(Error::Parameter("histogram needs data and at least one bin".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("non-finite residual".into()));
    }
    let mut lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        let pad = if lo == 0.0 { 1e-12 } else { lo.abs() * 1e-9 };
        lo -= pad;
        hi += pad;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in z {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: lo + i as f64 * width,
            hi: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
            count,
        })
        .collect())
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{}", b.lo, b.hi, b.count);
    }
    s
}
