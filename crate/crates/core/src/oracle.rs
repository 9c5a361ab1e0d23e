//! Ground-truth simulator of the analog MAC block.
//!
//! Each 1T1R cell is a linear memristor in series with a square-law access
//! transistor. The cell's input voltage drives the memristor terminal, the
//! transistor gate sits at the word-line bias `v_read`, and the transistor
//! source is the column line. A cell therefore conducts like its memristor
//! at small input voltage and saturates at `(k/2)(v_read - v_th)^alpha` once
//! the voltage across the transistor exceeds the overdrive.
//!
//! The internal drain node of every cell is found with safeguarded
//! Newton-Raphson. With a resistive column line (`r_col > 0`) the column
//! voltage is a second, outer fixed point, also solved by Newton-Raphson
//! on a guaranteed bracket.

use crate::error::{Error, Result};
use crate::xbar::{
    denormalize, BlockConfig, CrossbarTensor, DeviceParams, FEATURE_CONDUCTANCE, FEATURE_VOLTAGE,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Absolute residual tolerance, amperes.
    pub tol: f64,
    pub max_iter: u32,
    /// Fall back to bisection when a Newton step leaves the bracket.
    pub bisection_fallback: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-12,
            max_iter: 64,
            bisection_fallback: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter < 8 {
            return Err(Error::Config(format!(
                "solver needs tol > 0 and max_iter >= 8, got tol={} max_iter={}",
                self.tol, self.max_iter
            )));
        }
        Ok(())
    }
}

/// Drain current of the square-law transistor.
///
/// The triode branch is scaled by `vov^(alpha-2)` so that it meets the
/// saturation branch with matching value and slope at `v_ds = vov`.
pub fn transistor_current(v_gs: f64, v_ds: f64, dev: &DeviceParams) -> f64 {
    let vov = v_gs - dev.v_th;
    if vov <= 0.0 || v_ds <= 0.0 {
        return 0.0;
    }
    if v_ds >= vov {
        0.5 * dev.k * vov.powf(dev.alpha)
    } else {
        dev.k * (vov * v_ds - 0.5 * v_ds * v_ds) * vov.powf(dev.alpha - 2.0)
    }
}

/// Partial derivatives `(dI/dv_gs, dI/dv_ds)` of [`transistor_current`].
fn transistor_partials(v_gs: f64, v_ds: f64, dev: &DeviceParams) -> (f64, f64) {
    let vov = v_gs - dev.v_th;
    if vov <= 0.0 || v_ds < 0.0 {
        return (0.0, 0.0);
    }
    if v_ds >= vov {
        (0.5 * dev.k * dev.alpha * vov.powf(dev.alpha - 1.0), 0.0)
    } else {
        let scale = vov.powf(dev.alpha - 2.0);
        let body = vov * v_ds - 0.5 * v_ds * v_ds;
        let d_gs = dev.k * (v_ds * scale + body * (dev.alpha - 2.0) * vov.powf(dev.alpha - 3.0));
        let d_ds = dev.k * (vov - v_ds) * scale;
        (d_gs, d_ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSolution {
    pub current: f64,
    pub v_drain: f64,
    pub iterations: u32,
    /// `dI/dv_col` at the solution.
    pub d_current_d_vcol: f64,
}

impl CellSolution {
    fn off(v_col: f64) -> Self {
        CellSolution {
            current: 0.0,
            v_drain: v_col,
            iterations: 0,
            d_current_d_vcol: 0.0,
        }
    }
}

/// Solves one cell in physical units: `v` is the applied voltage, `g` the
/// memristor conductance and `v_col` the column-line voltage.
///
/// Finds the drain node `u` in `[v_col, v]` with
/// `g (v - u) = transistor_current(v_read - v_col, u - v_col)`.
pub fn solve_cell(v: f64, g: f64, v_col: f64, dev: &DeviceParams, opts: &SolverOptions) -> Result<CellSolution> {
    let v_gs = dev.v_read - v_col;
    if v <= v_col || g <= 0.0 || v_gs <= dev.v_th {
        return Ok(CellSolution::off(v_col));
    }
    let residual = |u: f64| g * (v - u) - transistor_current(v_gs, u - v_col, dev);

    // The residual is convex and decreasing in u, so Newton from the left
    // end of the bracket approaches the root monotonically.
    let (mut lo, mut hi) = (v_col, v);
    let mut u = v_col;
    let mut f = residual(u);
    let mut iterations = 0;
    while f.abs() > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::Solver {
                iterations,
                lo,
                hi,
                residual: f,
            });
        }
        iterations += 1;
        if f > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let (_, d_ds) = transistor_partials(v_gs, u - v_col, dev);
        let slope = -g - d_ds;
        let mut next = u - f / slope;
        if !(next > lo && next < hi) {
            if !opts.bisection_fallback {
                return Err(Error::Solver {
                    iterations,
                    lo,
                    hi,
                    residual: f,
                });
            }
            next = 0.5 * (lo + hi);
        }
        if next == u {
            break;
        }
        u = next;
        f = residual(u);
    }

    let (d_gs, d_ds) = transistor_partials(v_gs, u - v_col, dev);
    Ok(CellSolution {
        current: g * (v - u),
        v_drain: u,
        iterations,
        d_current_d_vcol: -g * (d_gs + d_ds) / (g + d_ds),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnSolution {
    pub current: f64,
    pub v_col: f64,
    /// Cell-level Newton iterations summed over every solve.
    pub cell_iterations: u32,
    /// Outer iterations on the column voltage (0 for an ideal column).
    pub column_iterations: u32,
}

fn column_sum(cells: &[(f64, f64)], v_col: f64, dev: &DeviceParams, opts: &SolverOptions) -> Result<(f64, f64, u32)> {
    let mut current = 0.0;
    let mut slope = 0.0;
    let mut iterations = 0;
    for &(v, g) in cells {
        let s = solve_cell(v, g, v_col, dev, opts)?;
        current += s.current;
        slope += s.d_current_d_vcol;
        iterations += s.iterations;
    }
    Ok((current, slope, iterations))
}

/// Total current of one column line given its cells' physical `(V, G)`.
///
/// For `r_col > 0` the column voltage satisfies
/// `v_col = r_col * sum_i I_i(v_col)`; `v_col_seed` is the Newton start
/// point and is clamped into the bracket.
pub fn column_current(
    cells: &[(f64, f64)],
    v_col_seed: f64,
    dev: &DeviceParams,
    opts: &SolverOptions,
) -> Result<ColumnSolution> {
    if dev.r_col == 0.0 {
        let (current, _, cell_iterations) = column_sum(cells, 0.0, dev, opts)?;
        return Ok(ColumnSolution {
            current,
            v_col: 0.0,
            cell_iterations,
            column_iterations: 0,
        });
    }

    let v_max = cells.iter().map(|&(v, _)| v).fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, v_max.min(dev.v_read - dev.v_th));
    let tol = opts.tol * dev.r_col;
    let mut total_cell_iterations = 0;

    let mut vc = v_col_seed.clamp(lo, hi);
    let (mut current, mut slope, it) = column_sum(cells, vc, dev, opts)?;
    total_cell_iterations += it;
    let mut h = vc - dev.r_col * current;
    let mut iterations = 0;
    while h.abs() > tol {
        if iterations >= opts.max_iter {
            return Err(Error::Solver {
                iterations,
                lo,
                hi,
                residual: h,
            });
        }
        iterations += 1;
        if h < 0.0 {
            lo = vc;
        } else {
            hi = vc;
        }
        let dh = 1.0 - dev.r_col * slope;
        let mut next = vc - h / dh;
        if !(next > lo && next < hi) {
            if !opts.bisection_fallback {
                return Err(Error::Solver {
                    iterations,
                    lo,
                    hi,
                    residual: h,
                });
            }
            next = 0.5 * (lo + hi);
        }
        if next == vc {
            break;
        }
        vc = next;
        let (c, s, it) = column_sum(cells, vc, dev, opts)?;
        total_cell_iterations += it;
        current = c;
        slope = s;
        h = vc - dev.r_col * current;
    }
    Ok(ColumnSolution {
        current,
        v_col: vc,
        cell_iterations: total_cell_iterations,
        column_iterations: iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput {
    /// Output voltages, one per column pair.
    pub voltages: Vec<f64>,
    /// Column currents indexed `tile * c + column`.
    pub column_currents: Vec<f64>,
    /// Total cell-level Newton iterations per column, same indexing.
    pub column_iterations: Vec<u32>,
}

/// Evaluates the block: pair `j` of every tile is summed into output `j`,
/// `v_out = clamp(v_ref + (I_pos - I_neg) t_int / c_int, 0, v_dd)`.
pub fn block_output(x: &CrossbarTensor, cfg: &BlockConfig, opts: &SolverOptions) -> Result<BlockOutput> {
    if x.geometry() != cfg.geometry {
        return Err(Error::Config(format!(
            "tensor geometry {:?} does not match configuration {:?}",
            x.geometry(),
            cfg.geometry
        )));
    }
    block_output_raw(x.data(), cfg, opts)
}

pub(crate) fn block_output_raw(data: &[f64], cfg: &BlockConfig, opts: &SolverOptions) -> Result<BlockOutput> {
    let geo = cfg.geometry;
    debug_assert_eq!(data.len(), geo.len());
    let plane = geo.cells();
    let mut column_currents = Vec::with_capacity(geo.t * geo.c);
    let mut column_iterations = Vec::with_capacity(geo.t * geo.c);
    let mut cells = Vec::with_capacity(geo.r);
    for tile in 0..geo.t {
        for col in 0..geo.c {
            cells.clear();
            for row in 0..geo.r {
                let i = (tile * geo.r + row) * geo.c + col;
                let v = denormalize(data[FEATURE_VOLTAGE * plane + i], cfg.norm.voltage);
                let g = denormalize(data[FEATURE_CONDUCTANCE * plane + i], cfg.norm.conductance);
                cells.push((v, g));
            }
            let sol = column_current(&cells, 0.0, &cfg.device, opts)?;
            column_currents.push(sol.current);
            column_iterations.push(sol.cell_iterations);
        }
    }

    let gain = cfg.peripheral.gain();
    let voltages = (0..geo.o)
        .map(|j| {
            let diff: f64 = (0..geo.t)
                .map(|tile| column_currents[tile * geo.c + 2 * j] - column_currents[tile * geo.c + 2 * j + 1])
                .sum();
            (cfg.peripheral.v_ref + diff * gain).clamp(0.0, cfg.peripheral.v_dd)
        })
        .collect();
    Ok(BlockOutput {
        voltages,
        column_currents,
        column_iterations,
    })
}

/// Block configuration bundled with solver options.
#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub cfg: BlockConfig,
    pub opts: SolverOptions,
}

impl Oracle {
    pub fn new(cfg: BlockConfig, opts: SolverOptions) -> Result<Self> {
        cfg.validate()?;
        opts.validate()?;
        Ok(Oracle { cfg, opts })
    }

    pub fn block_output(&self, x: &CrossbarTensor) -> Result<BlockOutput> {
        block_output(x, &self.cfg, &self.opts)
    }

    /// Normalized outputs for a flat normalized input.
    pub fn targets(&self, data: &[f64]) -> Result<Vec<f64>> {
        if data.len() != self.cfg.geometry.len() {
            return Err(Error::shape(self.cfg.geometry.len(), data.len()));
        }
        let out = block_output_raw(data, &self.cfg, &self.opts)?;
        Ok(out.voltages.iter().map(|&v| self.cfg.normalize_output(v)).collect())
    }

    /// Current of one cell from normalized `(V, G)` at column voltage `v_col`.
    pub fn cell_current(&self, v_in: f64, g: f64, v_col: f64) -> Result<f64> {
        for (feature, value) in [("V", v_in), ("G", g)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Range {
                    feature,
                    value,
                    min: 0.0,
                    max: 1.0,
                });
            }
        }
        let v = denormalize(v_in, self.cfg.norm.voltage);
        let g = denormalize(g, self.cfg.norm.conductance);
        Ok(solve_cell(v, g, v_col, &self.cfg.device, &self.opts)?.current)
    }
}
