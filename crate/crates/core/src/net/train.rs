//! MSE training with Adam and a step learning-rate schedule.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::NetworkSpec;
use super::layers::{backward, forward, predict, Params};
use crate::dataset::{write_atomic, Dataset};
use crate::error::{Error, Result};

/// Rows evaluated per chunk when no gradient is needed.
const EVAL_CHUNK: usize = 1024;

/// Mean squared error over all elements and its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(format!("{} non-empty values", pred.len()), target.len()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Parameter(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates, laid out like the parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Params,
    v: Params,
    step: u64,
}

impl OptimizerState {
    pub fn new(spec: &NetworkSpec) -> Self {
        OptimizerState {
            m: Params::zeros(spec),
            v: Params::zeros(spec),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut OptimizerState, cfg: &AdamConfig, lr: f64) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::Parameter(format!("learning rate {lr} must be finite and non-negative")));
    }
    if params.layers().len() != grads.layers().len() || params.layers().len() != state.m.layers().len() {
        return Err(Error::shape(params.layers().len(), grads.layers().len()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let layers = params.layers_mut().iter_mut();
    let moments = state.m.layers_mut().iter_mut().zip(state.v.layers_mut().iter_mut());
    for ((p, g), (m, v)) in layers.zip(grads.layers()).zip(moments) {
        let p_iter = p.weight.iter_mut().chain(p.bias.iter_mut());
        let g_iter = g.weight.iter().chain(&g.bias);
        let m_iter = m.weight.iter_mut().chain(m.bias.iter_mut());
        let v_iter = v.weight.iter_mut().chain(v.bias.iter_mut());
        for (((p, &g), m), v) in p_iter.zip(g_iter).zip(m_iter).zip(v_iter) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Learning rate at `epoch` (0-based): halved once for every entry of
/// `halve_at` that is `<= epoch`.
pub fn lr_at(base: f64, halve_at: &[usize], epoch: usize) -> f64 {
    let halvings = halve_at.iter().filter(|&&e| e <= epoch).count();
    base * 0.5f64.powi(halvings as i32)
}

/// Halving epochs at 50%, 75% and 90% of the run.
pub fn default_schedule(epochs: usize) -> Vec<usize> {
    let mut at: Vec<usize> = [0.5, 0.75, 0.9].iter().map(|f| (epochs as f64 * f) as usize).filter(|&e| e > 0).collect();
    at.dedup();
    at
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub halve_at: Vec<usize>,
    pub adam: AdamConfig,
    /// Seeds parameter initialization and batch shuffling.
    pub seed: u64,
    /// Stop once the test MSE (or the train MSE without a test set) drops to
    /// this value.
    pub stop_below: Option<f64>,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 256,
            lr: 1e-3,
            halve_at: default_schedule(epochs),
            adam: AdamConfig::default(),
            seed,
            stop_below: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("epochs and batch size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Parameter(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if let Some(b) = self.stop_below {
            if !(b > 0.0) {
                return Err(Error::Parameter(format!("stop threshold {b} must be positive")));
            }
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_mse,test_mse\n");
        for r in &self.records {
            let test = r.test_mse.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.lr, r.train_mse, test);
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = self.to_csv();
        write_atomic(path.as_ref(), |w| std::io::Write::write_all(w, text.as_bytes()))
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Params,
    pub history: History,
    pub stopped_early: bool,
}

fn check_dataset(spec: &NetworkSpec, ds: &Dataset) -> Result<()> {
    if ds.input_len() != spec.input_len() || ds.geometry.o != spec.output_size() {
        return Err(Error::shape(
            format!("{} inputs / {} outputs", spec.input_len(), spec.output_size()),
            format!("{} inputs / {} outputs", ds.input_len(), ds.geometry.o),
        ));
    }
    if ds.is_empty() {
        return Err(Error::Usage("dataset is empty".into()));
    }
    Ok(())
}

fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// Emulator predictions for every record, row-major `(N, O)`.
pub fn predict_dataset(params: &Params, spec: &NetworkSpec, ds: &Dataset) -> Result<Vec<f64>> {
    check_dataset(spec, ds)?;
    let il = ds.input_len();
    let mut out = Vec::with_capacity(ds.len() * spec.output_size());
    for chunk in ds.inputs().chunks(EVAL_CHUNK * il) {
        out.extend(predict(params, spec, &widen(chunk), chunk.len() / il)?);
    }
    Ok(out)
}

/// MSE of the emulator on a dataset, in normalized units.
pub fn evaluate(params: &Params, spec: &NetworkSpec, ds: &Dataset) -> Result<f64> {
    let pred = predict_dataset(params, spec, ds)?;
    Ok(mse_loss(&pred, &widen(ds.targets()))?.0)
}

pub fn train(train_set: &Dataset, test_set: Option<&Dataset>, spec: &NetworkSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(train_set, test_set, spec, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(spec, train_set)?;
    if let Some(t) = test_set {
        check_dataset(spec, t)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Params::init(spec, &mut rng);
    let mut state = OptimizerState::new(spec);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let il = train_set.input_len();
    let ol = spec.output_size();
    let mut history = History::default();
    let mut x = Vec::with_capacity(cfg.batch_size * il);
    let mut y = Vec::with_capacity(cfg.batch_size * ol);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg.lr, &cfg.halve_at, epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            x.clear();
            y.clear();
            for &i in batch {
                x.extend(train_set.input(i).iter().map(|&v| v as f64));
                y.extend(train_set.target(i).iter().map(|&v| v as f64));
            }
            let (pred, cache) = forward(&params, spec, &x, batch.len())?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            sum += loss * batch.len() as f64;
            let grads = backward(&params, spec, cache, &grad)?;
            adam_step(&mut params, &grads, &mut state, &cfg.adam, lr)?;
        }
        let train_mse = sum / train_set.len() as f64;
        let test_mse = test_set.map(|t| evaluate(&params, spec, t)).transpose()?;
        if let Some(l) = test_mse.filter(|l| !l.is_finite()) {
            return Err(Error::Divergence { epoch, loss: l });
        }
        let record = EpochRecord { epoch, lr, train_mse, test_mse };
        on_epoch(&record);
        history.records.push(record);
        if let Some(bound) = cfg.stop_below {
            if test_mse.unwrap_or(train_mse) <= bound {
                return Ok(TrainOutcome { params, history, stopped_early: true });
            }
        }
    }
    Ok(TrainOutcome { params, history, stopped_early: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::arch::build_arch;
    use crate::xbar::{BlockConfig, BlockGeometry};
    use rand::Rng;

    #[test]
    fn mse_examples() {
        let (l, g) = mse_loss(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g, vec![1.0, 2.0]);
        assert_eq!(mse_loss(&[0.3; 5], &[0.3; 5]).unwrap().0, 0.0);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn lr_schedule() {
        let at = [100, 150, 180];
        assert_eq!(lr_at(1e-3, &at, 0), 1e-3);
        assert_eq!(lr_at(1e-3, &at, 99), 1e-3);
        assert_eq!(lr_at(1e-3, &at, 100), 5e-4);
        assert_eq!(lr_at(1e-3, &at, 179), 2.5e-4);
        assert_eq!(lr_at(1e-3, &at, 199), 1.25e-4);
        assert_eq!(default_schedule(200), vec![100, 150, 180]);
        assert_eq!(default_schedule(1), Vec::<usize>::new());
    }

    fn tiny_spec() -> NetworkSpec {
        build_arch(&BlockGeometry::new(2, 1, 4, 2).unwrap()).unwrap()
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let spec = tiny_spec();
        let mut p = Params::zeros(&spec);
        let mut g = Params::zeros(&spec);
        for (i, l) in g.layers_mut().iter_mut().enumerate() {
            for (j, w) in l.weight.iter_mut().enumerate() {
                *w = if (i + j) % 2 == 0 { 3.0 } else { -0.01 };
            }
        }
        let mut st = OptimizerState::new(&spec);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default(), 1e-3).unwrap();
        // bias-corrected first step is lr * sign(g) up to eps
        for (pl, gl) in p.layers().iter().zip(g.layers()) {
            for (&w, &gw) in pl.weight.iter().zip(&gl.weight) {
                assert!((w + 1e-3 * gw.signum()).abs() < 1e-8);
            }
            assert!(pl.bias.iter().all(|&b| b == 0.0));
        }
        assert_eq!(st.step(), 1);
        assert!(adam_step(&mut p, &g, &mut st, &AdamConfig::default(), -1.0).is_err());
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let spec = tiny_spec();
        let mut p = Params::init(&spec, &mut ChaCha8Rng::seed_from_u64(1));
        let before = p.clone();
        let g = Params::init(&spec, &mut ChaCha8Rng::seed_from_u64(2));
        let mut st = OptimizerState::new(&spec);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default(), 0.0).unwrap();
        assert_eq!(p, before);
    }

    fn synthetic(n: usize, seed: u64) -> Dataset {
        let geo = BlockGeometry::new(2, 1, 4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<f32> = (0..n * geo.len()).map(|_| rng.gen()).collect();
        // smooth target: mean input scaled into the unit interval
        let targets = inputs.chunks(geo.len()).map(|x| 0.25 + 0.5 * x.iter().sum::<f32>() / x.len() as f32).collect();
        Dataset::new(geo, BlockConfig::with_defaults(geo).unwrap().norm, inputs, targets).unwrap()
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let spec = tiny_spec();
        let ds = synthetic(64, 5);
        let mut cfg = TrainConfig::new(500, 9);
        cfg.batch_size = 16;
        let a = train(&ds, None, &spec, &cfg).unwrap();
        let first = a.history.records[0].train_mse;
        let last = a.history.last().unwrap().train_mse;
        assert!(last * 10.0 <= first, "{first} -> {last}");
        let b = train(&ds, None, &spec, &cfg).unwrap();
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_lr_keeps_initial_params() {
        let spec = tiny_spec();
        let ds = synthetic(32, 1);
        let mut cfg = TrainConfig::new(3, 4);
        cfg.lr = 0.0;
        let out = train(&ds, Some(&ds), &spec, &cfg).unwrap();
        let init = Params::init(&spec, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(out.params, init);
        let h = &out.history.records;
        assert!(h.iter().all(|r| r.test_mse == h[0].test_mse));
    }

    #[test]
    fn early_stop_and_history_csv() {
        let spec = tiny_spec();
        let ds = synthetic(32, 2);
        let mut cfg = TrainConfig::new(50, 1);
        cfg.stop_below = Some(1e3);
        let out = train(&ds, Some(&ds), &spec, &cfg).unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.history.records.len(), 1);
        let csv = out.history.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,lr,train_mse,test_mse"));
        assert_eq!(lines.next().unwrap().split(',').count(), 4);
    }

    #[test]
    fn divergence_is_reported() {
        let spec = tiny_spec();
        let ds = synthetic(16, 3);
        let mut cfg = TrainConfig::new(5, 1);
        cfg.lr = 1e300;
        assert!(matches!(train(&ds, None, &spec, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let spec = build_arch(&BlockGeometry::new(2, 1, 4, 4).unwrap()).unwrap();
        let ds = synthetic(8, 1);
        assert!(matches!(train(&ds, None, &spec, &TrainConfig::new(1, 0)), Err(Error::Shape { .. })));
    }
}
