//! Oracle versus emulator wall-clock comparison.

use std::hint::black_box;
use std::time::Instant;

use crate::dataset::{sample_inputs, SampleStrategy};
use crate::error::{Error, Result};
use crate::net::{predict, NetworkSpec, Params};
use crate::oracle::{Oracle, SolverOptions};
use crate::xbar::BlockConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedReport {
    pub samples: usize,
    pub batch: usize,
    /// Median seconds per oracle solve.
    pub oracle_per_sample: f64,
    /// Median over batches of batch time divided by batch size.
    pub emulator_per_sample: f64,
    pub speedup: f64,
}

impl SpeedReport {
    pub fn to_csv(&self) -> String {
        format!(
            "samples,batch,oracle_s_per_sample,emulator_s_per_sample,speedup\n{},{},{},{},{}\n",
            self.samples, self.batch, self.oracle_per_sample, self.emulator_per_sample, self.speedup
        )
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median per-sample time of `run`, called on consecutive chunks of
/// `batch` samples out of `m`; `run` receives `(start, len)`.
pub fn time_per_sample(m: usize, batch: usize, mut run: impl FnMut(usize, usize) -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(m.div_ceil(batch));
    let mut start = 0;
    while start < m {
        let len = batch.min(m - start);
        let t = Instant::now();
        run(start, len)?;
        times.push(t.elapsed().as_secs_f64() / len as f64);
        start += len;
    }
    Ok(median(&mut times))
}

/// Times `m` uniform samples through the oracle one at a time and through
/// the emulator in batches of `batch`.
pub fn speed_benchmark(
    params: &Params,
    spec: &NetworkSpec,
    cfg: &BlockConfig,
    opts: &SolverOptions,
    m: usize,
    batch: usize,
    seed: u64,
) -> Result<SpeedReport> {
    if m < 100 || batch == 0 {
        return Err(Error::Parameter(format!("benchmark needs m >= 100 and a positive batch, got m={m} batch={batch}")));
    }
    if spec.input_len() != cfg.geometry.len() {
        return Err(Error::shape(cfg.geometry.len(), spec.input_len()));
    }
    let oracle = Oracle::new(*cfg, *opts)?;
    let inputs = sample_inputs(seed, cfg, &SampleStrategy::Uniform, m)?;
    let flat: Vec<f64> = inputs.iter().flat_map(|x| x.data().iter().copied()).collect();
    let il = spec.input_len();

    // warm caches and page in both code paths
    black_box(oracle.block_output(&inputs[0])?);
    black_box(predict(params, spec, &flat[..il * batch.min(m)], batch.min(m))?);

    let oracle_per_sample = time_per_sample(m, 1, |i, _| {
        black_box(oracle.block_output(&inputs[i])?);
        Ok(())
    })?;
    let emulator_per_sample = time_per_sample(m, batch, |i, len| {
        black_box(predict(params, spec, &flat[i * il..(i + len) * il], len)?);
        Ok(())
    })?;
    Ok(SpeedReport {
        samples: m,
        batch,
        oracle_per_sample,
        emulator_per_sample,
        speedup: oracle_per_sample / emulator_per_sample,
    })
}
