//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs criteria sequentially; the desk-scale training run
//! is shared by criteria 5, 6, 9 and 10.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use xbaremu::dataset::{generate, grid_sweep, grid_value, split, Dataset, SampleStrategy};
use xbaremu::net::train::predict_dataset;
use xbaremu::net::{backward, build_arch, forward, mse_loss, predict, train, NetworkSpec, Params, TrainConfig, TrainOutcome};
use xbaremu::oracle::SolverOptions;
use xbaremu::verify::stats::histogram_csv;
use xbaremu::verify::sweep::data_requirement_sweep;
use xbaremu::verify::{
    histogram, loss_upper_bound, residuals, significant_bit_probability, speed_benchmark, BoundSpec, ReportThresholds,
    VerificationReport,
};
use xbaremu::xbar::{BlockConfig, BlockGeometry, CellPosition};

const DESK: (usize, usize, usize, usize) = (2, 2, 16, 2);
const DESK_N: usize = 20_000;
const DESK_DATA_SEED: u64 = 7;
const DESK_TRAIN_SEED: u64 = 3;
const DESK_EPOCHS: usize = 800;
const DESK_LR: f64 = 3e-3;
const DESK_BATCH: usize = 128;
/// Sweep runs use fewer epochs; only the trend across N is judged.
const SWEEP_EPOCHS: usize = 400;

struct Suite {
    failed: Vec<u32>,
}

impl Suite {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!("{} [{id:>2}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id);
        }
    }
}

fn geometry((f, t, r, c): (usize, usize, usize, usize)) -> BlockGeometry {
    BlockGeometry::new(f, t, r, c).unwrap()
}

fn bound_spec() -> BoundSpec {
    BoundSpec::new(3, 0.3).unwrap()
}

fn criterion_1(suite: &mut Suite) {
    let b = loss_upper_bound(&bound_spec()).unwrap();
    suite.record(1, "loss bound anchor", (6.6e-6..=6.8e-6).contains(&b), format!("bound(s=3,p=0.3)={b:.6e} in [6.6e-6, 6.8e-6]"));
}

fn criterion_2(suite: &mut Suite) {
    let spec = bound_spec();
    let var = loss_upper_bound(&spec).unwrap();
    let normal = Normal::new(0.0, var.sqrt()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
    let p = significant_bit_probability(&z, &spec).unwrap();
    suite.record(2, "bound/probability consistency", (p.value - 0.3).abs() <= 0.01, format!("P(|Z|<1e-3)={:.4} (0.30 +/- 0.01)", p.value));
}

fn loss_of(params: &Params, spec: &NetworkSpec, x: &[f64], y: &[f64], batch: usize) -> f64 {
    mse_loss(&predict(params, spec, x, batch).unwrap(), y).unwrap().0
}

fn criterion_3(suite: &mut Suite) {
    let spec = build_arch(&geometry((2, 1, 4, 2))).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..20 {
        let params = Params::init(&spec, &mut rng);
        let batch = 2;
        let x: Vec<f64> = (0..batch * spec.input_len()).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..batch * spec.output_size()).map(|_| rng.gen()).collect();
        let (pred, cache) = forward(&params, &spec, &x, batch).unwrap();
        let (_, d) = mse_loss(&pred, &y).unwrap();
        let analytic = backward(&params, &spec, cache, &d).unwrap().flat();
        let mut idx = 0;
        for li in 0..spec.layers().len() {
            let nw = params.layers()[li].weight.len();
            let total = nw + params.layers()[li].bias.len();
            for k in 0..total {
                let bump = |delta: f64| {
                    let mut p = params.clone();
                    let l = &mut p.layers_mut()[li];
                    if k < nw {
                        l.weight[k] += delta;
                    } else {
                        l.bias[k - nw] += delta;
                    }
                    loss_of(&p, &spec, &x, &y, batch)
                };
                let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                let a = analytic[idx];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
                idx += 1;
                checked += 1;
            }
        }
    }
    suite.record(3, "gradient correctness", worst < 1e-4, format!("{checked} gradients over 20 draws, worst relative error {worst:.2e} (< 1e-4)"));
}

fn criterion_4(suite: &mut Suite) {
    let expected = "Conv3d(2,16,(1,1,1),(1,1,1))-CELU-Conv3d(16,8,(1,2,1),(1,2,1))-CELU-Conv3d(8,4,(1,4,1),(1,4,1))-CELU-\
                    Conv3d(4,32,(1,8,1),(1,8,1))-CELU-Conv3d(32,32,(1,1,2),(1,1,1))-CELU-Linear(128,32)-CELU-Linear(32,16)-CELU-Linear(16,1)";
    let a = build_arch(&geometry((2, 4, 64, 2))).unwrap();
    let b = build_arch(&geometry((2, 2, 64, 8))).unwrap();
    let a_ok = a.describe() == expected && a.flatten_size() == Some(128);
    let b_ok = b.flatten_size() == Some(256)
        && b.describe().contains("Conv3d(32,32,(1,1,2),(1,1,2))-CELU-Linear(256,32)-CELU-Linear(32,16)-CELU-Linear(16,4)");
    suite.record(
        4,
        "architecture shape contract",
        a_ok && b_ok,
        format!("(2,4,64,2) flatten {:?} chain match {}; (2,2,64,8) flatten {:?}", a.flatten_size(), a.describe() == expected, b.flatten_size()),
    );
}

struct DeskRun {
    cfg: BlockConfig,
    spec: NetworkSpec,
    outcome: TrainOutcome,
    test: Dataset,
    seconds: f64,
}

fn desk_train_config() -> TrainConfig {
    let mut tc = TrainConfig::new(DESK_EPOCHS, DESK_TRAIN_SEED);
    tc.lr = DESK_LR;
    tc.batch_size = DESK_BATCH;
    tc
}

fn desk_run() -> DeskRun {
    let started = Instant::now();
    let cfg = BlockConfig::with_defaults(geometry(DESK)).unwrap();
    let ds = generate(&cfg, &SampleStrategy::Uniform, DESK_N, DESK_DATA_SEED, &SolverOptions::default()).unwrap();
    let (train_set, test) = split(&ds, 0.1, DESK_DATA_SEED).unwrap();
    let spec = build_arch(&cfg.geometry).unwrap();
    let outcome = train(&train_set, Some(&test), &spec, &desk_train_config()).unwrap();
    DeskRun {
        cfg,
        spec,
        outcome,
        test,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn desk_report(run: &DeskRun) -> (Vec<f64>, Vec<f64>, VerificationReport) {
    let pred = predict_dataset(&run.outcome.params, &run.spec, &run.test).unwrap();
    let target: Vec<f64> = run.test.targets().iter().map(|&v| v as f64).collect();
    let report = VerificationReport::new(&pred, &target, run.spec.output_size(), run.test.norm.output, bound_spec(), ReportThresholds::default()).unwrap();
    (pred, target, report)
}

fn criterion_5(suite: &mut Suite, run: &DeskRun, report: &VerificationReport) {
    let bound = 6.74e-6;
    let pass = report.mse <= bound && report.probability.value > 0.3 && report.mae <= 2e-3 && run.seconds <= 1800.0;
    suite.record(
        5,
        "desk-scale emulation",
        pass,
        format!(
            "test_mse={:.3e} (<= {bound:.2e}), P(|err|<1e-3)={:.4} (> 0.3), mae={:.3e} (<= 2e-3), {} epochs in {:.0}s",
            report.mse,
            report.probability.value,
            report.mae,
            run.outcome.history.records.len(),
            run.seconds
        ),
    );
}

fn criterion_6(suite: &mut Suite, run: &DeskRun) {
    let m = 32;
    let cell = CellPosition { tile: 0, row: 0, col: 0 };
    let grid = grid_sweep(&run.cfg, cell, m, 61, &SolverOptions::default()).unwrap();
    let pred = predict_dataset(&run.outcome.params, &run.spec, &grid).unwrap();
    let o = run.spec.output_size();
    // records are V-major: row i holds V = grid_value(i), G sweeping
    let emu = |i: usize, j: usize| pred[(i * m + j) * o];
    let orc = |i: usize, j: usize| grid.target(i * m + j)[0] as f64;
    let mean_err = (0..m * m).map(|k| (emu(k / m, k % m) - orc(k / m, k % m)).abs()).sum::<f64>() / (m * m) as f64;
    let spread = |f: &dyn Fn(usize) -> f64| {
        let v: Vec<f64> = (0..m).map(f).collect();
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let low = (0..m).min_by(|&a, &b| (grid_value(a, m) - 0.25).abs().total_cmp(&(grid_value(b, m) - 0.25).abs())).unwrap();
    let hi_emu = spread(&|j| emu(m - 1, j));
    let low_emu = spread(&|j| emu(low, j));
    let ratio = hi_emu / low_emu;
    let oracle_ratio = spread(&|j| orc(m - 1, j)) / spread(&|j| orc(low, j));
    suite.record(
        6,
        "heatmap fidelity",
        mean_err <= 3e-3 && ratio < 0.2,
        format!(
            "mean|err|={mean_err:.3e} (<= 3e-3), G-variation at V=1 / at V={:.3}: emulator {ratio:.3} (< 0.2), oracle {oracle_ratio:.3}",
            grid_value(low, m)
        ),
    );
}

fn criterion_7(suite: &mut Suite) {
    let started = Instant::now();
    let cfg = BlockConfig::with_defaults(geometry(DESK)).unwrap();
    let mut tc = desk_train_config();
    tc.epochs = SWEEP_EPOCHS;
    tc.halve_at = xbaremu::net::train::default_schedule(SWEEP_EPOCHS);
    let ns = [500, 2_000, 8_000, 20_000];
    let points = data_requirement_sweep(&cfg, &SampleStrategy::Uniform, &ns, 11, &SolverOptions::default(), &tc).unwrap();
    let losses: Vec<f64> = points.iter().map(|p| p.train_loss).collect();
    let banded = losses.windows(2).all(|w| w[1] <= 2.0 * w[0]);
    let drop = losses[0] / losses[3];
    let secs = started.elapsed().as_secs_f64();
    suite.record(
        7,
        "data-requirement trend",
        banded && drop >= 5.0 && secs <= 3600.0,
        format!(
            "train loss by N {}: non-increasing within 2x {banded}, N=500/N=20000 ratio {drop:.1} (>= 5), {secs:.0}s",
            points.iter().map(|p| format!("{}:{:.2e}", p.n, p.train_loss)).collect::<Vec<_>>().join(" ")
        ),
    );
}

fn criterion_8(suite: &mut Suite) {
    let geo = geometry((2, 4, 64, 2));
    let mut cfg = BlockConfig::with_defaults(geo).unwrap();
    cfg.device.r_col = 100.0;
    let spec = build_arch(&geo).unwrap();
    let params = Params::init(&spec, &mut ChaCha8Rng::seed_from_u64(8));
    let r = speed_benchmark(&params, &spec, &cfg, &SolverOptions::default(), 1000, 250, 8).unwrap();
    suite.record(
        8,
        "oracle vs emulator speedup",
        r.speedup >= 20.0,
        format!(
            "oracle {:.2e} s/sample, emulator {:.2e} s/sample, speedup {:.2}x (>= 20x)",
            r.oracle_per_sample, r.emulator_per_sample, r.speedup
        ),
    );
}

fn criterion_9(suite: &mut Suite, pred: &[f64], target: &[f64], report: &VerificationReport) {
    let z = residuals(pred, target).unwrap();
    let bins = histogram(&z, 50).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("residual_histogram.csv");
    std::fs::write(&path, histogram_csv(&bins)).unwrap();
    let written = std::fs::read_to_string(&path).unwrap();
    let counted: usize = written.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    let s = report.stats;
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "degenerate".into());
    suite.record(
        9,
        "residual diagnostics",
        s.mean.abs() <= 0.1 * s.std && counted == z.len(),
        format!(
            "mean={:.2e}, std={:.2e} (|mean| <= 0.1 std), histogram {} bins / {counted} residuals, skewness {}, excess kurtosis {}",
            s.mean,
            s.std,
            bins.len(),
            fmt(s.skewness),
            fmt(s.excess_kurtosis)
        ),
    );
}

fn criterion_10(suite: &mut Suite, first: &DeskRun) {
    let second = desk_run();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    first.outcome.history.save_csv(&a).unwrap();
    second.outcome.history.save_csv(&b).unwrap();
    let same = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    suite.record(
        10,
        "determinism",
        same && first.outcome.params == second.outcome.params,
        format!("repeat of run 5 ({:.0}s): history byte-identical {same}", second.seconds),
    );
}

fn main() {
    // libtest-style flags (e.g. from `cargo test -- --list`) are ignored
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let started = Instant::now();
    let mut suite = Suite { failed: Vec::new() };
    criterion_1(&mut suite);
    criterion_2(&mut suite);
    criterion_3(&mut suite);
    criterion_4(&mut suite);
    let run = desk_run();
    let (pred, target, report) = desk_report(&run);
    criterion_5(&mut suite, &run, &report);
    criterion_6(&mut suite, &run);
    criterion_7(&mut suite);
    criterion_8(&mut suite);
    criterion_9(&mut suite, &pred, &target, &report);
    criterion_10(&mut suite, &run);
    println!("acceptance: {} of 10 criteria passed in {:.0}s", 10 - suite.failed.len(), started.elapsed().as_secs_f64());
    if !suite.failed.is_empty() {
        println!("acceptance: failed criteria {:?}", suite.failed);
        std::process::exit(1);
    }
}
