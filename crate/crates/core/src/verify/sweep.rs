//! Final training loss as a function of dataset size.

use std::fmt::Write as _;

use crate::dataset::{generate, Dataset, SampleStrategy};
use crate::error::{Error, Result};
use crate::net::{build_arch, train, NetworkSpec, TrainConfig};
use crate::oracle::SolverOptions;
use crate::xbar::BlockConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub n: usize,
    /// Epoch-mean train MSE of the last epoch.
    pub train_loss: f64,
}

/// Trains a fresh model on the first `n` records of `dataset` for every `n`.
/// All runs share `train_cfg`, including its seed.
pub fn sweep_dataset(dataset: &Dataset, ns: &[usize], spec: &NetworkSpec, train_cfg: &TrainConfig) -> Result<Vec<SweepPoint>> {
    if ns.is_empty() || ns.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Parameter(format!("sizes {ns:?} must be non-empty and ascending")));
    }
    ns.iter()
        .map(|&n| {
            let wrap = |e: Error| Error::Sweep { n, source: Box::new(e) };
            let subset = dataset.prefix(n).map_err(wrap)?;
            let out = train(&subset, None, spec, train_cfg).map_err(wrap)?;
            let train_loss = out.history.last().map(|r| r.train_mse).unwrap_or(f64::NAN);
            Ok(SweepPoint { n, train_loss })
        })
        .collect()
}

/// Generates one dataset of the largest size at `data_seed` and sweeps its
/// prefixes, so smaller runs see a subset of the larger runs' data.
pub fn data_requirement_sweep(
    cfg: &BlockConfig,
    strategy: &SampleStrategy,
    ns: &[usize],
    data_seed: u64,
    opts: &SolverOptions,
    train_cfg: &TrainConfig,
) -> Result<Vec<SweepPoint>> {
    let max = ns.iter().copied().max().ok_or_else(|| Error::Parameter("no dataset sizes".into()))?;
    let spec = build_arch(&cfg.geometry)?;
    let dataset = generate(cfg, strategy, max, data_seed, opts)?;
    sweep_dataset(&dataset, ns, &spec, train_cfg)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("n,train_loss\n");
    for p in points {
        let _ = writeln!(s, "{},{}", p.n, p.train_loss);
    }
    s
}
