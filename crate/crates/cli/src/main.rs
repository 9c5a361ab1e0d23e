//! `xbaremu`: generate crossbar datasets, train and evaluate the emulator.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use manifest::Manifest;
use xbaremu::dataset::{self, write_atomic, Dataset, SampleStrategy};
use xbaremu::net::{self, build_arch, load_checkpoint, save_checkpoint, train::predict_dataset, TrainConfig};
use xbaremu::oracle::SolverOptions;
use xbaremu::verify::{self, stats::histogram_csv, sweep::sweep_csv, BoundSpec, ReportThresholds, Threshold, VerificationReport};
use xbaremu::xbar::{BlockConfig, BlockGeometry, CellPosition, FEATURE_CONDUCTANCE, FEATURE_VOLTAGE};
use xbaremu::{threads, Error};

#[derive(Parser)]
#[command(name = "xbaremu", version, about = "Crossbar MAC block oracle and neural emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a block configuration with default device parameters.
    InitConfig {
        /// Geometry as `F,T,R,C`.
        #[arg(long, value_parser = parse_geometry)]
        geometry: BlockGeometry,
        /// Column-line resistance in ohms.
        #[arg(long, default_value_t = 0.0)]
        r_col: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample inputs and label them with the circuit solver.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `uniform` or `sparse:<density>`.
        #[arg(long, default_value = "uniform", value_parser = parse_strategy)]
        strategy: SampleStrategy,
        #[arg(long)]
        out: PathBuf,
        /// Also write the records as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the emulator on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = dataset::DEFAULT_TEST_FRACTION)]
        test_frac: f64,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[command(flatten)]
        bound: BoundArgs,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        out_history: PathBuf,
        /// Write the held-out split for later evaluation.
        #[arg(long)]
        out_test: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        bound: BoundArgs,
        #[arg(long)]
        out_report: PathBuf,
        /// Report as a single CSV row.
        #[arg(long)]
        out_report_csv: Option<PathBuf>,
        /// Residual histogram CSV.
        #[arg(long)]
        out_residuals: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Oracle and emulator outputs over a (V, G) grid for one cell.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Cell as `tile,row,col`.
        #[arg(long, value_parser = parse_cell)]
        cell: CellPosition,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Final train loss against dataset size.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated ascending sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Time the circuit solver against batched emulator inference.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        m: usize,
        #[arg(long, default_value_t = 250)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Run manifest path (default: `<primary output>.manifest.json`).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    /// Significant decimal digits of error.
    #[arg(long)]
    bound_s: Option<u32>,
    /// Probability of meeting that precision.
    #[arg(long)]
    bound_p: Option<f64>,
    #[arg(long, value_enum, default_value_t = ThresholdArg::Proof)]
    threshold: ThresholdArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ThresholdArg {
    /// |z| < 10^-s
    Proof,
    /// |z| < 0.5 * 10^-s
    Statement,
}

impl BoundArgs {
    fn spec(&self) -> Result<Option<BoundSpec>> {
        let threshold = match self.threshold {
            ThresholdArg::Proof => Threshold::Proof,
            ThresholdArg::Statement => Threshold::Statement,
        };
        match (self.bound_s, self.bound_p) {
            (Some(s), Some(p)) => Ok(Some(BoundSpec { threshold, ..BoundSpec::new(s, p)? })),
            (None, None) => Ok(None),
            _ => Err(usage("--bound-s and --bound-p must be given together")),
        }
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Usage(msg.into()).into()
}

fn parse_list<const N: usize>(s: &str) -> std::result::Result<[usize; N], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected {N} comma-separated integers"))
}

fn parse_geometry(s: &str) -> std::result::Result<BlockGeometry, String> {
    let [f, t, r, c] = parse_list::<4>(s)?;
    BlockGeometry::new(f, t, r, c).map_err(|e| e.to_string())
}

fn parse_cell(s: &str) -> std::result::Result<CellPosition, String> {
    let [tile, row, col] = parse_list::<3>(s)?;
    Ok(CellPosition { tile, row, col })
}

fn parse_strategy(s: &str) -> std::result::Result<SampleStrategy, String> {
    match s.split_once(':') {
        None if s == "uniform" => Ok(SampleStrategy::Uniform),
        Some(("sparse", d)) => d
            .parse::<f64>()
            .map(|density| SampleStrategy::SparseActive { density })
            .map_err(|e| format!("density `{d}`: {e}")),
        _ => Err(format!("unknown strategy `{s}` (use `uniform` or `sparse:<density>`)")),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let core = err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::root);
    match core {
        Some(Error::Solver { .. }) => 3,
        Some(Error::Divergence { .. }) => 4,
        _ => 2,
    }
}

fn manifest_path(common: &Common, primary: &Path) -> PathBuf {
    common.manifest.clone().unwrap_or_else(|| {
        let mut name = primary.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        primary.with_file_name(name)
    })
}

fn load_config(path: &Path) -> Result<BlockConfig> {
    BlockConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| std::io::Write::write_all(w, text.as_bytes())).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let threads = threads::init_pool();
    let opts = SolverOptions::default();
    match cli.command {
        Command::InitConfig { geometry, r_col, out } => {
            let mut cfg = BlockConfig::with_defaults(geometry)?;
            cfg.device.r_col = r_col;
            cfg.validate()?;
            write_text(&out, &(cfg.to_json() + "\n"))?;
        }
        Command::Generate { config, n, seed, strategy, out, csv, common } => {
            if n == 0 {
                return Err(usage("--n must be at least 1"));
            }
            let cfg = load_config(&config)?;
            let ds = dataset::generate(&cfg, &strategy, n, seed, &opts)?;
            ds.save(&out)?;
            let mut m = Manifest::new("generate", started, threads);
            m.config(&config).seed("data", seed).output(&out);
            m.extra("records", json!(n)).extra("strategy", json!(format!("{strategy:?}")));
            if let Some(csv) = csv {
                write_atomic(&csv, |w| ds.write_csv(w))?;
                m.output(&csv);
            }
            m.write(&manifest_path(&common, &out))?;
        }
        Command::Train {
            data,
            test_frac,
            epochs,
            seed,
            batch,
            lr,
            bound,
            out_checkpoint,
            out_history,
            out_test,
            common,
        } => {
            let ds = load_dataset(&data)?;
            let (train_set, test_set) = dataset::split(&ds, test_frac, seed)?;
            let spec = build_arch(&ds.geometry)?;
            let mut tc = TrainConfig::new(epochs, seed);
            tc.batch_size = batch;
            tc.lr = lr;
            let gate = bound.spec()?.map(|b| verify::loss_upper_bound(&b)).transpose()?;
            tc.stop_below = gate;
            let out = net::train::train_with(&train_set, Some(&test_set), &spec, &tc, |r| {
                if r.epoch % 50 == 0 || r.epoch + 1 == epochs {
                    eprintln!("epoch {:>5}  lr {:.3e}  train {:.4e}  test {:.4e}", r.epoch, r.lr, r.train_mse, r.test_mse.unwrap_or(f64::NAN));
                }
            })?;
            save_checkpoint(&out_checkpoint, &spec, &out.params)?;
            out.history.save_csv(&out_history)?;
            let mut m = Manifest::new("train", started, threads);
            m.seed("train", seed).output(&out_checkpoint).output(&out_history);
            m.extra("data", json!(data.display().to_string()))
                .extra("architecture", json!(spec.describe()))
                .extra("epochs_run", json!(out.history.records.len()))
                .extra("stopped_early", json!(out.stopped_early))
                .extra("final_test_mse", json!(out.history.last().and_then(|r| r.test_mse)));
            if let Some(g) = gate {
                m.extra("gate", json!(g));
            }
            if let Some(path) = out_test {
                test_set.save(&path)?;
                m.output(&path);
            }
            m.write(&manifest_path(&common, &out_checkpoint))?;
        }
        Command::Eval {
            checkpoint,
            data,
            bound,
            out_report,
            out_report_csv,
            out_residuals,
            bins,
            common,
        } => {
            let (spec, params) = load_checkpoint(&checkpoint)?;
            let ds = load_dataset(&data)?;
            if build_arch(&ds.geometry)? != spec {
                bail!(Error::Config(format!("dataset geometry {:?} does not match the checkpoint architecture", ds.geometry)));
            }
            let pred = predict_dataset(&params, &spec, &ds)?;
            let target: Vec<f64> = ds.targets().iter().map(|&v| v as f64).collect();
            let bspec = bound.spec()?.unwrap_or(BoundSpec::new(3, 0.3)?);
            let report = VerificationReport::new(&pred, &target, spec.output_size(), ds.norm.output, bspec, ReportThresholds::default())?;
            write_text(&out_report, &report.to_text())?;
            let mut m = Manifest::new("eval", started, threads);
            m.output(&out_report).extra("checkpoint", json!(checkpoint.display().to_string()));
            if let Some(p) = out_report_csv {
                write_text(&p, &report.to_csv())?;
                m.output(&p);
            }
            if let Some(p) = out_residuals {
                let z = verify::residuals(&pred, &target)?;
                write_text(&p, &histogram_csv(&verify::histogram(&z, bins)?))?;
                m.output(&p);
            }
            println!("{}", report.to_text().trim_end());
            m.write(&manifest_path(&common, &out_report))?;
        }
        Command::Heatmap {
            checkpoint,
            config,
            cell,
            resolution,
            seed,
            out,
            common,
        } => {
            let cfg = load_config(&config)?;
            let (spec, params) = load_checkpoint(&checkpoint)?;
            if build_arch(&cfg.geometry)? != spec {
                bail!(Error::Config("config geometry does not match the checkpoint architecture".into()));
            }
            if resolution == 0 {
                return Err(usage("--resolution must be at least 1"));
            }
            let ds = dataset::grid_sweep(&cfg, cell, resolution, seed, &opts)?;
            let pred = predict_dataset(&params, &spec, &ds)?;
            let g = &cfg.geometry;
            let vi = g.index(FEATURE_VOLTAGE, cell.tile, cell.row, cell.col)?;
            let gi = g.index(FEATURE_CONDUCTANCE, cell.tile, cell.row, cell.col)?;
            let j = cell.col / 2;
            let o = g.o;
            let mut text = String::from("V,G,oracle_out,emulator_out,abs_err\n");
            for i in 0..ds.len() {
                let x = ds.input(i);
                let v = xbaremu::xbar::denormalize(x[vi] as f64, cfg.norm.voltage);
                let gg = xbaremu::xbar::denormalize(x[gi] as f64, cfg.norm.conductance);
                let oracle = ds.target(i)[j] as f64;
                let emu = pred[i * o + j];
                text.push_str(&format!("{v},{gg},{oracle},{emu},{}\n", (oracle - emu).abs()));
            }
            write_text(&out, &text)?;
            let mut m = Manifest::new("heatmap", started, threads);
            m.config(&config).seed("background", seed).output(&out);
            m.extra("cell", json!([cell.tile, cell.row, cell.col]));
            m.write(&manifest_path(&common, &out))?;
        }
        Command::Sweep {
            config,
            ns,
            seed,
            epochs,
            batch,
            lr,
            out,
            common,
        } => {
            let cfg = load_config(&config)?;
            let mut tc = TrainConfig::new(epochs, seed);
            tc.batch_size = batch;
            tc.lr = lr;
            let points = verify::data_requirement_sweep(&cfg, &SampleStrategy::Uniform, &ns, seed, &opts, &tc)?;
            write_text(&out, &sweep_csv(&points))?;
            let mut m = Manifest::new("sweep", started, threads);
            m.config(&config).seed("data", seed).seed("train", seed).output(&out);
            m.write(&manifest_path(&common, &out))?;
        }
        Command::Bench {
            checkpoint,
            config,
            m: samples,
            batch,
            seed,
            out,
            common,
        } => {
            let cfg = load_config(&config)?;
            let (spec, params) = load_checkpoint(&checkpoint)?;
            let report = verify::speed_benchmark(&params, &spec, &cfg, &opts, samples, batch, seed)?;
            write_text(&out, &report.to_csv())?;
            println!(
                "oracle {:.3e} s/sample, emulator {:.3e} s/sample, speedup {:.2}x",
                report.oracle_per_sample, report.emulator_per_sample, report.speedup
            );
            let mut m = Manifest::new("bench", started, threads);
            m.config(&config).seed("inputs", seed).output(&out);
            m.extra("speedup", json!(report.speedup));
            m.write(&manifest_path(&common, &out))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
