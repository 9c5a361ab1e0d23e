//! Error function and its inverse.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Error function (fdlibm algorithm, via the `libm` crate).
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Inverse error function on `(-1, 1)`.
///
/// Starts from Giles' single-precision polynomial ("Approximating the erfinv
/// function", GPU Computing Gems, 2011) and applies one Newton step on
/// [`erf`], which brings the round-trip error to about 1e-15.
pub fn erf_inv(p: f64) -> Result<f64> {
    if !(p > -1.0 && p < 1.0) {
        return Err(Error::Domain(format!("erf_inv({p}) is defined only on (-1, 1)")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let w = -((1.0 - p) * (1.0 + p)).ln();
    let y0 = if w < 5.0 {
        let w = w - 2.5;
        let c = [
            2.810_226_36e-08,
            3.432_739_39e-07,
            -3.523_387_7e-06,
            -4.391_506_54e-06,
            2.185_808_7e-04,
            -1.253_725_03e-03,
            -4.177_681_64e-03,
            2.466_407_27e-01,
            1.501_409_41,
        ];
        c.iter().fold(0.0, |acc, &k| acc * w + k) * p
    } else {
        let w = w.sqrt() - 3.0;
        let c = [
            -2.002_142_57e-04,
            1.009_505_58e-04,
            1.349_343_22e-03,
            -3.673_428_44e-03,
            5.739_507_73e-03,
            -7.622_461_3e-03,
            9.438_870_47e-03,
            1.001_674_06,
            2.832_976_82,
        ];
        c.iter().fold(0.0, |acc, &k| acc * w + k) * p
    };
    let slope = 2.0 / PI.sqrt() * (-y0 * y0).exp();
    Ok(y0 - (erf(y0) - p) / slope)
}
