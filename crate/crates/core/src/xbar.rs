//! Crossbar data model: block geometry, the 4-axis input tensor, device and
//! peripheral parameters, and the normalization between physical and unit
//! ranges.
//!
//! The input tensor is laid out as `(feature, tile, row, column)`, which is
//! also the `(C, D, H, W)` layout the emulator consumes. Feature 0 is the
//! applied cell voltage, feature 1 the memristor conductance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature channel holding the applied cell voltage.
pub const FEATURE_VOLTAGE: usize = 0;
/// Feature channel holding the cell conductance.
pub const FEATURE_CONDUCTANCE: usize = 1;

/// Shape of an analog computing block.
///
/// Columns come in differential pairs `(2j, 2j + 1)` inside every tile; pair
/// `j` of every tile feeds output `j`, so `o = c / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockGeometry {
    pub f: usize,
    pub t: usize,
    pub r: usize,
    pub c: usize,
    pub o: usize,
}

impl BlockGeometry {
    /// Geometry with the output count derived from the column pairing.
    pub fn new(f: usize, t: usize, r: usize, c: usize) -> Result<Self> {
        let g = BlockGeometry { f, t, r, c, o: c / 2 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let BlockGeometry { f, t, r, c, o } = *self;
        if f == 0 || t == 0 || r == 0 || c == 0 || o == 0 {
            return Err(Error::Config(format!(
                "geometry axes must be >= 1, got (f={f}, t={t}, r={r}, c={c}, o={o})"
            )));
        }
        if c % 2 != 0 {
            return Err(Error::Config(format!(
                "column count must be even (differential pairs), got {c}"
            )));
        }
        if o != c / 2 {
            return Err(Error::Config(format!(
                "output count must equal the number of column pairs per tile ({}), got {o}",
                c / 2
            )));
        }
        Ok(())
    }

    /// Number of cells, `t * r * c`.
    pub fn cells(&self) -> usize {
        self.t * self.r * self.c
    }

    /// Number of tensor elements, `f * t * r * c`.
    pub fn len(&self) -> usize {
        self.f * self.cells()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(C, D, H, W)` shape seen by the emulator.
    pub fn input_shape(&self) -> [usize; 4] {
        [self.f, self.t, self.r, self.c]
    }

    /// Row-major flat offset, feature outermost and column innermost.
    pub fn index(&self, feature: usize, tile: usize, row: usize, col: usize) -> Result<usize> {
        check_axis("feature", feature, self.f)?;
        check_axis("tile", tile, self.t)?;
        check_axis("row", row, self.r)?;
        check_axis("column", col, self.c)?;
        Ok(((feature * self.t + tile) * self.r + row) * self.c + col)
    }

    pub fn check_cell(&self, cell: CellPosition) -> Result<()> {
        check_axis("tile", cell.tile, self.t)?;
        check_axis("row", cell.row, self.r)?;
        check_axis("column", cell.col, self.c)
    }
}

fn check_axis(axis: &'static str, index: usize, size: usize) -> Result<()> {
    if index >= size {
        Err(Error::Index { axis, index, size })
    } else {
        Ok(())
    }
}

/// A cell address inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellPosition {
    pub tile: usize,
    pub row: usize,
    pub col: usize,
}

/// Normalized block input.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarTensor {
    geometry: BlockGeometry,
    data: Vec<f64>,
}

impl CrossbarTensor {
    pub fn new(geometry: BlockGeometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::shape(geometry.len(), data.len()));
        }
        if let Some(&bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range {
                feature: "normalized input",
                value: bad,
                min: 0.0,
                max: 1.0,
            });
        }
        Ok(CrossbarTensor { geometry, data })
    }

    pub fn zeros(geometry: BlockGeometry) -> Self {
        CrossbarTensor {
            geometry,
            data: vec![0.0; geometry.len()],
        }
    }

    pub fn geometry(&self) -> BlockGeometry {
        self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, feature: usize, tile: usize, row: usize, col: usize) -> Result<f64> {
        Ok(self.data[self.geometry.index(feature, tile, row, col)?])
    }

    pub fn set(&mut self, feature: usize, tile: usize, row: usize, col: usize, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Range {
                feature: "normalized input",
                value,
                min: 0.0,
                max: 1.0,
            });
        }
        let i = self.geometry.index(feature, tile, row, col)?;
        self.data[i] = value;
        Ok(())
    }

    /// Sets the `(V, G)` pair of one cell.
    pub fn set_cell(&mut self, cell: CellPosition, v: f64, g: f64) -> Result<()> {
        self.set(FEATURE_VOLTAGE, cell.tile, cell.row, cell.col, v)?;
        self.set(FEATURE_CONDUCTANCE, cell.tile, cell.row, cell.col, g)
    }
}

/// Access-transistor and memristor parameters, shared by every cell.
///
/// `v_read` is the word-line bias on the transistor gate during a read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Transconductance, A/V^alpha.
    pub k: f64,
    pub v_th: f64,
    pub alpha: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub v_read: f64,
    /// Lumped column-line resistance, ohms.
    pub r_col: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            k: 3.0e-4,
            v_th: 0.4,
            alpha: 2.0,
            g_min: 10.0e-6,
            g_max: 100.0e-6,
            v_read: 0.6,
            r_col: 0.0,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k > 0.0
            && self.alpha >= 1.0
            && self.g_min > 0.0
            && self.g_min <= self.g_max
            && self.v_th >= 0.0
            && self.v_read > self.v_th
            && self.r_col >= 0.0
            && [self.k, self.v_th, self.alpha, self.g_min, self.g_max, self.v_read, self.r_col]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid device parameters: {self:?}")))
        }
    }

    /// Largest current one cell can carry: the saturation current at full
    /// gate bias.
    pub fn saturation_current(&self) -> f64 {
        0.5 * self.k * (self.v_read - self.v_th).powf(self.alpha)
    }
}

/// Current-difference integrator that turns the accumulated column currents
/// into an output voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeripheralParams {
    pub v_ref: f64,
    pub v_dd: f64,
    pub t_int: f64,
    pub c_int: f64,
}

impl PeripheralParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.v_ref >= 0.0
            && self.v_ref <= self.v_dd
            && self.t_int > 0.0
            && self.c_int > 0.0
            && [self.v_ref, self.v_dd, self.t_int, self.c_int].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid peripheral parameters: {self:?}")))
        }
    }

    /// Volts per ampere of accumulated current difference.
    pub fn gain(&self) -> f64 {
        self.t_int / self.c_int
    }
}

/// A physical interval mapped linearly onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRange {
    pub min: f64,
    pub max: f64,
}

impl NormRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::Config(format!("normalization range needs max > min, got [{min}, {max}]")));
        }
        Ok(NormRange { min, max })
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

/// Normalizes a physical value; `feature` names the quantity in errors.
pub fn normalize(x: f64, range: NormRange, feature: &'static str) -> Result<f64> {
    if !(x >= range.min && x <= range.max) {
        return Err(Error::Range {
            feature,
            value: x,
            min: range.min,
            max: range.max,
        });
    }
    Ok(((x - range.min) / range.span()).clamp(0.0, 1.0))
}

pub fn denormalize(u: f64, range: NormRange) -> f64 {
    range.min + u * range.span()
}

/// Physical ranges behind the normalized inputs and targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSpec {
    pub voltage: NormRange,
    pub conductance: NormRange,
    pub output: NormRange,
}

impl NormSpec {
    pub fn validate(&self) -> Result<()> {
        for r in [self.voltage, self.conductance, self.output] {
            NormRange::new(r.min, r.max)?;
        }
        Ok(())
    }

    /// The eight bounds persisted in dataset files: V, G and output ranges,
    /// followed by the normalized target interval (always [0, 1]).
    pub fn to_bounds(&self) -> [f64; 8] {
        [
            self.voltage.min,
            self.voltage.max,
            self.conductance.min,
            self.conductance.max,
            self.output.min,
            self.output.max,
            0.0,
            1.0,
        ]
    }

    pub fn from_bounds(b: [f64; 8]) -> Result<Self> {
        if b[6] != 0.0 || b[7] != 1.0 {
            return Err(Error::Format {
                field: "norm",
                detail: format!("normalized interval must be [0, 1], got [{}, {}]", b[6], b[7]),
            });
        }
        let spec = NormSpec {
            voltage: NormRange { min: b[0], max: b[1] },
            conductance: NormRange { min: b[2], max: b[3] },
            output: NormRange { min: b[4], max: b[5] },
        };
        spec.validate().map_err(|e| Error::Format {
            field: "norm",
            detail: e.to_string(),
        })?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct NormFile {
    v_min: f64,
    v_max: f64,
    g_min: f64,
    g_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ConfigFile {
    geometry: BlockGeometry,
    device: DeviceParams,
    peripheral: PeripheralParams,
    norm: NormFile,
}

/// Complete block description, serialized as JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigFile", into = "ConfigFile")]
pub struct BlockConfig {
    pub geometry: BlockGeometry,
    pub device: DeviceParams,
    pub peripheral: PeripheralParams,
    pub norm: NormSpec,
}

impl TryFrom<ConfigFile> for BlockConfig {
    type Error = Error;

    fn try_from(f: ConfigFile) -> Result<Self> {
        let cfg = BlockConfig {
            geometry: f.geometry,
            device: f.device,
            peripheral: f.peripheral,
            norm: NormSpec {
                voltage: NormRange { min: f.norm.v_min, max: f.norm.v_max },
                conductance: NormRange { min: f.norm.g_min, max: f.norm.g_max },
                output: NormRange { min: 0.0, max: f.peripheral.v_dd },
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<BlockConfig> for ConfigFile {
    fn from(c: BlockConfig) -> Self {
        ConfigFile {
            geometry: c.geometry,
            device: c.device,
            peripheral: c.peripheral,
            norm: NormFile {
                v_min: c.norm.voltage.min,
                v_max: c.norm.voltage.max,
                g_min: c.norm.conductance.min,
                g_max: c.norm.conductance.max,
            },
        }
    }
}

impl BlockConfig {
    /// Default device, a 0.5 V resting output and an integrator gain that
    /// maps one fully saturated column to 0.8 V.
    pub fn with_defaults(geometry: BlockGeometry) -> Result<Self> {
        geometry.validate()?;
        let device = DeviceParams::default();
        let v_dd = 1.0;
        let c_int = 1.0e-12;
        let full_scale = geometry.r as f64 * device.saturation_current();
        let peripheral = PeripheralParams {
            v_ref: 0.5 * v_dd,
            v_dd,
            t_int: 0.8 * v_dd * c_int / full_scale,
            c_int,
        };
        let cfg = BlockConfig {
            geometry,
            device,
            peripheral,
            norm: NormSpec {
                voltage: NormRange { min: 0.0, max: 1.0 },
                conductance: NormRange { min: device.g_min, max: device.g_max },
                output: NormRange { min: 0.0, max: v_dd },
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.geometry.f != 2 {
            return Err(Error::Config(format!(
                "cells carry exactly 2 features (V, G), geometry has f={}",
                self.geometry.f
            )));
        }
        self.device.validate()?;
        self.peripheral.validate()?;
        self.norm.validate()?;
        if self.norm.voltage.min < 0.0 {
            return Err(Error::Config("voltage range must be non-negative".into()));
        }
        if self.norm.conductance.min < self.device.g_min || self.norm.conductance.max > self.device.g_max {
            return Err(Error::Config(format!(
                "conductance range [{}, {}] exceeds device bounds [{}, {}]",
                self.norm.conductance.min, self.norm.conductance.max, self.device.g_min, self.device.g_max
            )));
        }
        if self.norm.output != (NormRange { min: 0.0, max: self.peripheral.v_dd }) {
            return Err(Error::Config("output range must be [0, v_dd]".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Target normalization: output volts onto [0, 1].
    pub fn normalize_output(&self, v: f64) -> f64 {
        (v - self.norm.output.min) / self.norm.output.span()
    }
}
