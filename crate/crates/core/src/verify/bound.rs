//! Significant-bit loss bound for Gaussian residuals.
//!
//! If residuals are `N(0, sigma^2)`, then `P(|Z| < t) = erf(t / sqrt(2 sigma^2))`.
//! Requiring that probability to exceed `p` gives
//! `sigma^2 < (t / erf_inv(p))^2 / 2`, which bounds the MSE.

use super::special::erf_inv;
use crate::error::{Error, Result};

/// Which error magnitude counts as "correct to `s` digits".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Threshold {
    /// `|z| < 10^-s`.
    #[default]
    Proof,
    /// `|z| < 0.5 * 10^-s`.
    Statement,
}

impl Threshold {
    pub fn value(self, s: u32) -> f64 {
        let t = 10f64.powi(-(s as i32));
        match self {
            Threshold::Proof => t,
            Threshold::Statement => 0.5 * t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSpec {
    /// Number of decimal digits that must be correct.
    pub s: u32,
    /// Required probability of meeting that precision.
    pub p: f64,
    pub threshold: Threshold,
}

impl BoundSpec {
    pub fn new(s: u32, p: f64) -> Result<Self> {
        let spec = BoundSpec {
            s,
            p,
            threshold: Threshold::Proof,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Domain(format!("probability {} must lie in (0, 1)", self.p)));
        }
        if self.s > 300 {
            return Err(Error::Domain(format!("significant digits {} out of range", self.s)));
        }
        Ok(())
    }

    pub fn tolerance(&self) -> f64 {
        self.threshold.value(self.s)
    }
}

/// Largest MSE (normalized units squared) compatible with the spec.
pub fn loss_upper_bound(spec: &BoundSpec) -> Result<f64> {
    spec.validate()?;
    let z = erf_inv(spec.p)?;
    Ok(0.5 * (spec.tolerance() / z).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probability {
    pub value: f64,
    /// Binomial standard error `sqrt(p (1 - p) / n)`.
    pub std_error: f64,
    pub n: usize,
}

/// Fraction of residuals strictly inside the tolerance of `spec`.
pub fn significant_bit_probability(residuals: &[f64], spec: &BoundSpec) -> Result<Probability> {
    if residuals.is_empty() {
        return Err(Error::Parameter("no residuals".into()));
    }
    let t = spec.tolerance();
    let n = residuals.len();
    let hits = residuals.iter().filter(|z| z.abs() < t).count();
    let value = hits as f64 / n as f64;
    Ok(Probability {
        value,
        std_error: (value * (1.0 - value) / n as f64).sqrt(),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::special::erf;

    #[test]
    fn numeric_anchor() {
        let b = loss_upper_bound(&BoundSpec::new(3, 0.3).unwrap()).unwrap();
        assert!((6.6e-6..=6.8e-6).contains(&b), "{b}");
        // direct algebra with the independently checked erf_inv(0.3)
        assert!((b - 0.5 * (1e-3 / 0.272_462_714_726_754_3f64).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn one_sigma_case() {
        let p = erf(std::f64::consts::FRAC_1_SQRT_2);
        let b = loss_upper_bound(&BoundSpec::new(0, p).unwrap()).unwrap();
        assert!((b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_and_monotonicity() {
        let b3 = loss_upper_bound(&BoundSpec::new(3, 0.3).unwrap()).unwrap();
        let b4 = loss_upper_bound(&BoundSpec::new(4, 0.3).unwrap()).unwrap();
        assert!((b3 / b4 - 100.0).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for i in 1..99 {
            let b = loss_upper_bound(&BoundSpec::new(3, i as f64 / 100.0).unwrap()).unwrap();
            assert!(b < prev);
            prev = b;
        }
        let statement = BoundSpec {
            threshold: Threshold::Statement,
            ..BoundSpec::new(3, 0.3).unwrap()
        };
        assert!((loss_upper_bound(&statement).unwrap() * 4.0 - b3).abs() < 1e-18);
    }

    #[test]
    fn invalid_specs() {
        for p in [0.0, 1.0, -0.2, f64::NAN] {
            assert!(matches!(BoundSpec::new(3, p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn probability_examples() {
        let spec = BoundSpec::new(3, 0.3).unwrap();
        let p = significant_bit_probability(&[0.0; 10], &spec).unwrap();
        assert_eq!((p.value, p.std_error), (1.0, 0.0));
        let p = significant_bit_probability(&[2e-3, -2e-3], &spec).unwrap();
        assert_eq!(p.value, 0.0);
        // strict inequality at the threshold
        assert_eq!(significant_bit_probability(&[1e-3], &spec).unwrap().value, 0.0);
        let p = significant_bit_probability(&[0.0, 0.0, 1.0, 1.0], &spec).unwrap();
        assert_eq!(p.value, 0.5);
        assert!((p.std_error - 0.25).abs() < 1e-15);
        assert!(significant_bit_probability(&[], &spec).is_err());
    }
}
