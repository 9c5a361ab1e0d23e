//! Oracle-labelled datasets: sampling, labelling, splitting, persistence and
//! the single-cell `(V, G)` grid sweeps behind the heatmaps.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "SEMU" | version u32 = 1 | f t r c o N (u32 each) | 8 x f64 norm bounds
//! N records of f*t*r*c f32 inputs followed by o f32 targets
//! ```

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::oracle::{Oracle, SolverOptions};
use crate::xbar::{BlockConfig, BlockGeometry, CellPosition, CrossbarTensor, NormSpec, FEATURE_CONDUCTANCE, FEATURE_VOLTAGE};

pub const MAGIC: &[u8; 4] = b"SEMU";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 6 * 4 + 8 * 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleStrategy {
    /// Every V and G i.i.d. uniform on [0, 1].
    Uniform,
    /// Uniform, then each cell's V is zeroed with probability `1 - density`.
    SparseActive { density: f64 },
    /// One cell sweeps an `m x m` grid over `(V, G)`; all other cells keep a
    /// single seeded uniform draw. Produces exactly `m^2` records.
    GridSweep { resolution: usize, cell: CellPosition },
}

impl SampleStrategy {
    pub fn validate(&self, geometry: &BlockGeometry) -> Result<()> {
        match *self {
            SampleStrategy::Uniform => Ok(()),
            SampleStrategy::SparseActive { density } => {
                if density > 0.0 && density <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!("sparse-active density must be in (0, 1], got {density}")))
                }
            }
            SampleStrategy::GridSweep { resolution, cell } => {
                if resolution < 2 {
                    return Err(Error::Parameter(format!("grid resolution must be >= 2, got {resolution}")));
                }
                geometry
                    .check_cell(cell)
                    .map_err(|e| Error::Parameter(format!("sweep cell: {e}")))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    None,
    Train,
    Test,
}

/// Paired records of normalized inputs and targets, stored as `f32`.
///
/// `seed` and `split` describe provenance and are not persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub geometry: BlockGeometry,
    pub norm: NormSpec,
    inputs: Vec<f32>,
    targets: Vec<f32>,
    pub seed: Option<u64>,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(geometry: BlockGeometry, norm: NormSpec, inputs: Vec<f32>, targets: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        let n = inputs.len() / geometry.len().max(1);
        if n == 0 || inputs.len() != n * geometry.len() || targets.len() != n * geometry.o {
            return Err(Error::shape(
                format!("N x ({} inputs + {} targets) with N >= 1", geometry.len(), geometry.o),
                format!("{} inputs, {} targets", inputs.len(), targets.len()),
            ));
        }
        if let Some(&bad) = inputs.iter().chain(&targets).find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range {
                feature: "normalized record value",
                value: bad as f64,
                min: 0.0,
                max: 1.0,
            });
        }
        Ok(Dataset {
            geometry,
            norm,
            inputs,
            targets,
            seed: None,
            split: SplitTag::None,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len() / self.geometry.o
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_len(&self) -> usize {
        self.geometry.len()
    }

    pub fn input(&self, i: usize) -> &[f32] {
        let l = self.input_len();
        &self.inputs[i * l..(i + 1) * l]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        let o = self.geometry.o;
        &self.targets[i * o..(i + 1) * o]
    }

    pub fn inputs(&self) -> &[f32] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f32] {
        &self.targets
    }

    pub fn tensor(&self, i: usize) -> CrossbarTensor {
        let data = self.input(i).iter().map(|&v| v as f64).collect();
        CrossbarTensor::new(self.geometry, data).expect("stored records are normalized")
    }

    /// Records in the given order; indices may repeat.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Parameter("cannot select an empty dataset".into()));
        }
        let mut inputs = Vec::with_capacity(indices.len() * self.input_len());
        let mut targets = Vec::with_capacity(indices.len() * self.geometry.o);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index {
                    axis: "record",
                    index: i,
                    size: self.len(),
                });
            }
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
        }
        Ok(Dataset {
            inputs,
            targets,
            ..self.clone_header()
        })
    }

    /// The first `n` records.
    pub fn prefix(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::Parameter(format!("prefix length {n} outside 1..={}", self.len())));
        }
        Ok(Dataset {
            inputs: self.inputs[..n * self.input_len()].to_vec(),
            targets: self.targets[..n * self.geometry.o].to_vec(),
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            geometry: self.geometry,
            norm: self.norm,
            inputs: Vec::new(),
            targets: Vec::new(),
            seed: self.seed,
            split: self.split,
        }
    }

    /// Equality of geometry, normalization and record values, ignoring
    /// provenance.
    pub fn same_records(&self, other: &Dataset) -> bool {
        self.geometry == other.geometry
            && self.norm == other.norm
            && self.inputs.iter().map(|v| v.to_bits()).eq(other.inputs.iter().map(|v| v.to_bits()))
            && self.targets.iter().map(|v| v.to_bits()).eq(other.targets.iter().map(|v| v.to_bits()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let g = self.geometry;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.inputs.len() + self.targets.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [g.f, g.t, g.r, g.c, g.o, self.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for b in self.norm.to_bounds() {
            out.extend_from_slice(&b.to_le_bytes());
        }
        for i in 0..self.len() {
            for v in self.input(i).iter().chain(self.target(i)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Length {
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format {
                field: "magic",
                detail: format!("expected {:?}, found {:?}", MAGIC, &bytes[..4]),
            });
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::Format {
                field: "version",
                detail: format!("unsupported version {version}"),
            });
        }
        let dims: Vec<usize> = (0..6).map(|i| u32_at(8 + 4 * i) as usize).collect();
        let geometry = BlockGeometry {
            f: dims[0],
            t: dims[1],
            r: dims[2],
            c: dims[3],
            o: dims[4],
        };
        geometry.validate().map_err(|e| Error::Format {
            field: "geometry",
            detail: e.to_string(),
        })?;
        let n = dims[5];
        if n == 0 {
            return Err(Error::Format {
                field: "N",
                detail: "dataset must hold at least one record".into(),
            });
        }
        let mut bounds = [0.0; 8];
        for (i, b) in bounds.iter_mut().enumerate() {
            let off = 32 + 8 * i;
            *b = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        }
        let norm = NormSpec::from_bounds(bounds)?;

        let record = geometry.len() + geometry.o;
        let expected = HEADER_LEN as u64 + 4 * (n as u64) * (record as u64);
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(Error::Length { expected, actual });
        }
        if actual > expected {
            return Err(Error::Format {
                field: "payload",
                detail: format!("{} trailing bytes after {n} records", actual - expected),
            });
        }
        let mut inputs = Vec::with_capacity(n * geometry.len());
        let mut targets = Vec::with_capacity(n * geometry.o);
        for (k, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if k % record < geometry.len() {
                inputs.push(v);
            } else {
                targets.push(v);
            }
        }
        Dataset::new(geometry, norm, inputs, targets).map_err(|e| Error::Format {
            field: "records",
            detail: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), |w| w.write_all(&self.to_bytes()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::from_bytes(&fs::read(path)?)
    }

    /// CSV with one header row and one record per line, inputs then targets.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let g = self.geometry;
        let mut header = Vec::with_capacity(g.len() + g.o);
        for f in 0..g.f {
            for t in 0..g.t {
                for r in 0..g.r {
                    for c in 0..g.c {
                        header.push(format!("in_f{f}_t{t}_r{r}_c{c}"));
                    }
                }
            }
        }
        header.extend((0..g.o).map(|j| format!("out_{j}")));
        writeln!(w, "{}", header.join(","))?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            for (k, v) in self.input(i).iter().chain(self.target(i)).enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn sample_record(rng: &mut ChaCha8Rng, geometry: &BlockGeometry, strategy: &SampleStrategy, out: &mut [f32]) {
    for v in out.iter_mut() {
        *v = rng.gen::<f32>();
    }
    if let SampleStrategy::SparseActive { density } = *strategy {
        let plane = geometry.cells();
        let voltages = &mut out[FEATURE_VOLTAGE * plane..(FEATURE_VOLTAGE + 1) * plane];
        for v in voltages {
            if !rng.gen_bool(density) {
                *v = 0.0;
            }
        }
    }
}

/// Grid coordinate `i` of an `m`-point sweep over [0, 1], rounded to `f32`.
pub fn grid_value(i: usize, m: usize) -> f32 {
    (i as f64 / (m - 1) as f64) as f32
}

fn sample_all(seed: u64, geometry: &BlockGeometry, strategy: &SampleStrategy, n: usize) -> Result<Vec<f32>> {
    if n == 0 {
        return Err(Error::Parameter("sample count must be >= 1".into()));
    }
    strategy.validate(geometry)?;
    let len = geometry.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0f32; n * len];
    match *strategy {
        SampleStrategy::GridSweep { resolution: m, cell } => {
            if n != m * m {
                return Err(Error::Parameter(format!("grid sweep of resolution {m} yields {} records, not {n}", m * m)));
            }
            let mut background = vec![0.0f32; len];
            sample_record(&mut rng, geometry, &SampleStrategy::Uniform, &mut background);
            let v_at = geometry.index(FEATURE_VOLTAGE, cell.tile, cell.row, cell.col)?;
            let g_at = geometry.index(FEATURE_CONDUCTANCE, cell.tile, cell.row, cell.col)?;
            for (k, rec) in data.chunks_exact_mut(len).enumerate() {
                rec.copy_from_slice(&background);
                rec[v_at] = grid_value(k / m, m);
                rec[g_at] = grid_value(k % m, m);
            }
        }
        _ => {
            for rec in data.chunks_exact_mut(len) {
                sample_record(&mut rng, geometry, strategy, rec);
            }
        }
    }
    Ok(data)
}

/// Draws `n` block inputs; deterministic in `(seed, strategy, n)`.
pub fn sample_inputs(seed: u64, cfg: &BlockConfig, strategy: &SampleStrategy, n: usize) -> Result<Vec<CrossbarTensor>> {
    let data = sample_all(seed, &cfg.geometry, strategy, n)?;
    data.chunks_exact(cfg.geometry.len())
        .map(|rec| CrossbarTensor::new(cfg.geometry, rec.iter().map(|&v| v as f64).collect()))
        .collect()
}

/// Labels raw `f32` inputs with the oracle, in parallel, keeping order.
pub fn label(oracle: &Oracle, inputs: &[f32]) -> Result<Vec<f32>> {
    let len = oracle.cfg.geometry.len();
    let per_record: Vec<Vec<f32>> = inputs
        .par_chunks_exact(len)
        .enumerate()
        .map(|(i, rec)| {
            let x: Vec<f64> = rec.iter().map(|&v| v as f64).collect();
            oracle
                .targets(&x)
                .map(|t| t.into_iter().map(|v| v as f32).collect())
                .map_err(|e| Error::Record {
                    record: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    Ok(per_record.concat())
}

/// Samples `n` inputs and labels each with the oracle.
pub fn generate(cfg: &BlockConfig, strategy: &SampleStrategy, n: usize, seed: u64, opts: &SolverOptions) -> Result<Dataset> {
    let oracle = Oracle::new(*cfg, *opts)?;
    let inputs = sample_all(seed, &cfg.geometry, strategy, n)?;
    let targets = label(&oracle, &inputs)?;
    let mut ds = Dataset::new(cfg.geometry, cfg.norm, inputs, targets)?;
    ds.seed = Some(seed);
    Ok(ds)
}

/// Sweeps one cell over an `m x m` `(V, G)` grid, V outer and G inner.
pub fn grid_sweep(cfg: &BlockConfig, cell: CellPosition, m: usize, seed: u64, opts: &SolverOptions) -> Result<Dataset> {
    generate(cfg, &SampleStrategy::GridSweep { resolution: m, cell }, m.saturating_mul(m).max(1), seed, opts)
}

/// Default held-out fraction.
pub const DEFAULT_TEST_FRACTION: f64 = 0.1;

/// Seeded shuffle into `(train, test)`; the test set takes
/// `floor(N * test_fraction)` records.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Parameter(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let n = dataset.len();
    let n_test = (n as f64 * test_fraction).floor() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::Parameter(format!(
            "test fraction {test_fraction} of {n} records leaves an empty partition"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = dataset.select(&order[..n_test])?;
    let mut train = dataset.select(&order[n_test..])?;
    test.split = SplitTag::Test;
    train.split = SplitTag::Train;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn cfg(t: usize, r: usize, c: usize) -> BlockConfig {
        BlockConfig::with_defaults(BlockGeometry::new(2, t, r, c).unwrap()).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = cfg(2, 4, 2);
        let a = sample_inputs(7, &cfg, &SampleStrategy::Uniform, 3).unwrap();
        let b = sample_inputs(7, &cfg, &SampleStrategy::Uniform, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_inputs(8, &cfg, &SampleStrategy::Uniform, 3).unwrap());
    }

    #[test]
    fn uniform_voltage_mean() {
        let cfg = cfg(4, 64, 2);
        let xs = sample_inputs(1, &cfg, &SampleStrategy::Uniform, 200).unwrap();
        let plane = cfg.geometry.cells();
        let vs: Vec<f64> = xs.iter().flat_map(|x| x.data()[..plane].to_vec()).collect();
        assert!(vs.len() >= 100_000);
        let mean = vs.iter().sum::<f64>() / vs.len() as f64;
        assert!((0.497..=0.503).contains(&mean), "{mean}");
    }

    #[test]
    fn sparse_active_density() {
        let cfg = cfg(4, 64, 2);
        assert!(sample_inputs(1, &cfg, &SampleStrategy::SparseActive { density: 0.0 }, 1).is_err());
        assert!(sample_inputs(1, &cfg, &SampleStrategy::Uniform, 0).is_err());
        let xs = sample_inputs(2, &cfg, &SampleStrategy::SparseActive { density: 0.25 }, 50).unwrap();
        let plane = cfg.geometry.cells();
        let active = xs.iter().flat_map(|x| x.data()[..plane].to_vec()).filter(|&v| v != 0.0).count();
        let frac = active as f64 / (50 * plane) as f64;
        assert!((frac - 0.25).abs() < 0.02, "{frac}");
        // conductances untouched
        assert!(xs[0].data()[plane..].iter().all(|&g| g != 0.0));
    }

    #[test]
    fn zero_voltage_record_targets_v_ref() {
        let cfg = cfg(2, 4, 2);
        let oracle = Oracle::new(cfg, SolverOptions::default()).unwrap();
        let t = oracle.targets(&vec![0.0; cfg.geometry.len()]).unwrap();
        assert_eq!(t, vec![cfg.normalize_output(cfg.peripheral.v_ref)]);
    }

    #[test]
    fn generate_matches_fresh_oracle_and_is_reproducible() {
        let cfg = cfg(2, 4, 4);
        let opts = SolverOptions::default();
        let ds = generate(&cfg, &SampleStrategy::Uniform, 40, 3, &opts).unwrap();
        assert_eq!(ds.len(), 40);
        let oracle = Oracle::new(cfg, opts).unwrap();
        for i in 0..ds.len() {
            let fresh = oracle.targets(ds.tensor(i).data()).unwrap();
            let stored: Vec<f32> = fresh.iter().map(|&v| v as f32).collect();
            assert_eq!(stored.as_slice(), ds.target(i));
        }
        let again = generate(&cfg, &SampleStrategy::Uniform, 40, 3, &opts).unwrap();
        assert_eq!(ds.to_bytes(), again.to_bytes());
    }

    #[test]
    fn full_scale_record_shape() {
        let cfg = cfg(4, 64, 2);
        let ds = generate(&cfg, &SampleStrategy::Uniform, 8, 0, &SolverOptions::default()).unwrap();
        assert_eq!(ds.input_len(), 1024);
        assert_eq!(ds.target(0).len(), 1);
    }

    #[test]
    fn split_sizes_and_partition() {
        let cfg = cfg(1, 2, 2);
        let ds = generate(&cfg, &SampleStrategy::Uniform, 10, 1, &SolverOptions::default()).unwrap();
        let (train, test) = split(&ds, 0.1, 4).unwrap();
        assert_eq!((train.len(), test.len()), (9, 1));
        let (train2, test2) = split(&ds, 0.1, 4).unwrap();
        assert!(train.same_records(&train2) && test.same_records(&test2));
        assert!(split(&ds, 0.0, 1).is_err());
        assert!(split(&ds, 1.0, 1).is_err());
        assert_eq!((50_000f64 * 0.1).floor() as usize, 5_000);
    }

    #[test]
    fn split_is_a_permutation() {
        let cfg = cfg(1, 2, 2);
        let ds = generate(&cfg, &SampleStrategy::Uniform, 57, 9, &SolverOptions::default()).unwrap();
        let (train, test) = split(&ds, 0.3, 2).unwrap();
        let key = |d: &Dataset, i: usize| d.input(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let mut all: Vec<_> = (0..train.len()).map(|i| key(&train, i)).chain((0..test.len()).map(|i| key(&test, i))).collect();
        let mut orig: Vec<_> = (0..ds.len()).map(|i| key(&ds, i)).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn persistence_is_bit_exact_for_ten_thousand_records() {
        let cfg = cfg(1, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 10_000;
        let inputs: Vec<f32> = (0..n * cfg.geometry.len()).map(|_| rng.gen()).collect();
        let targets: Vec<f32> = (0..n * cfg.geometry.o).map(|_| rng.gen()).collect();
        let ds = Dataset::new(cfg.geometry, cfg.norm, inputs, targets).unwrap();
        let back = Dataset::from_bytes(&ds.to_bytes()).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.inputs()), bits(ds.inputs()));
        assert_eq!(bits(back.targets()), bits(ds.targets()));
    }

    #[test]
    fn persistence_round_trip_and_errors() {
        let cfg = cfg(2, 4, 2);
        let ds = generate(&cfg, &SampleStrategy::Uniform, 3, 5, &SolverOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.semu");
        ds.save(&path).unwrap();
        assert!(Dataset::load(&path).unwrap().same_records(&ds));

        let mut bytes = ds.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Dataset::from_bytes(&bytes), Err(Error::Format { field: "magic", .. })));

        let mut bytes = ds.to_bytes();
        bytes[4] = 2;
        assert!(matches!(Dataset::from_bytes(&bytes), Err(Error::Format { field: "version", .. })));

        let bytes = ds.to_bytes();
        let record = 4 * (cfg.geometry.len() + 1);
        assert!(matches!(Dataset::from_bytes(&bytes[..bytes.len() - record]), Err(Error::Length { .. })));
        assert!(matches!(Dataset::from_bytes(&bytes[..10]), Err(Error::Length { .. })));

        let mut bytes = ds.to_bytes();
        bytes[8 + 4 * 4] = 3; // o no longer c/2
        assert!(matches!(Dataset::from_bytes(&bytes), Err(Error::Format { field: "geometry", .. })));
    }

    #[test]
    fn header_claims_more_records_than_payload() {
        let cfg = cfg(1, 2, 2);
        let ds = generate(&cfg, &SampleStrategy::Uniform, 99, 5, &SolverOptions::default()).unwrap();
        let mut bytes = ds.to_bytes();
        bytes[28..32].copy_from_slice(&100u32.to_le_bytes());
        assert!(matches!(Dataset::from_bytes(&bytes), Err(Error::Length { .. })));
    }

    #[test]
    fn csv_export_shape() {
        let cfg = cfg(1, 2, 2);
        let ds = generate(&cfg, &SampleStrategy::Uniform, 4, 5, &SolverOptions::default()).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("in_f0_t0_r0_c0,") && lines[0].ends_with(",out_0"));
        assert!(lines.iter().all(|l| l.split(',').count() == cfg.geometry.len() + 1));
    }

    #[test]
    fn grid_sweep_grid_and_background() {
        let cfg = cfg(2, 4, 2);
        let opts = SolverOptions::default();
        let cell = CellPosition { tile: 1, row: 2, col: 0 };
        let ds = grid_sweep(&cfg, cell, 2, 42, &opts).unwrap();
        assert_eq!(ds.len(), 4);
        let geo = cfg.geometry;
        let vi = geo.index(0, 1, 2, 0).unwrap();
        let gi = geo.index(1, 1, 2, 0).unwrap();
        let pairs: Vec<(f32, f32)> = (0..4).map(|k| (ds.input(k)[vi], ds.input(k)[gi])).collect();
        assert_eq!(pairs, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]);
        let other = grid_sweep(&cfg, cell, 3, 42, &opts).unwrap();
        for k in 0..geo.len() {
            if k != vi && k != gi {
                assert_eq!(ds.input(0)[k], other.input(5)[k]);
            }
        }
        assert!(grid_sweep(&cfg, CellPosition { tile: 2, row: 0, col: 0 }, 4, 1, &opts).is_err());
        assert!(grid_sweep(&cfg, cell, 1, 1, &opts).is_err());
    }

    #[test]
    fn grid_sweep_monotone_in_g_for_positive_cell() {
        let cfg = cfg(2, 4, 2);
        let m = 9;
        let ds = grid_sweep(&cfg, CellPosition { tile: 0, row: 1, col: 0 }, m, 3, &SolverOptions::default()).unwrap();
        for vi in 1..3 {
            let row: Vec<f32> = (0..m).map(|gi| ds.target(vi * m + gi)[0]).collect();
            assert!(row.windows(2).all(|w| w[1] >= w[0]), "{row:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn persistence_is_bit_exact(seed in any::<u64>(), n in 1usize..40) {
            let geometry = BlockGeometry::new(2, 1, 3, 2).unwrap();
            let cfg = BlockConfig::with_defaults(geometry).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<f32> = (0..n * geometry.len()).map(|_| rng.gen()).collect();
            let targets: Vec<f32> = (0..n).map(|_| rng.gen()).collect();
            let ds = Dataset::new(geometry, cfg.norm, inputs, targets).unwrap();
            prop_assert!(Dataset::from_bytes(&ds.to_bytes()).unwrap().same_records(&ds));
        }
    }
}
