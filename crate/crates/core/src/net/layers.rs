//! Batched forward and reverse passes for the emulator layer kinds.
//!
//! Volume activations are stored channels-last, `(batch, D, H, W, C)`, so a
//! convolution is an im2col gather followed by one GEMM. Kernels and weights
//! use the conventional `(out, in, kD, kH, kW)` layout and flatten emits
//! features in `(C, D, H, W)` order. All reductions run in a fixed order, so
//! results are bit-identical between runs.

use rand::Rng;

use super::arch::{LayerSpec, NetworkSpec, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Trainable parameters, one entry per spec layer (empty for CELU and
/// flatten). The generation counter changes on every mutable access so a
/// stale forward cache can be detected.
#[derive(Debug, Clone)]
pub struct Params {
    layers: Vec<LayerParams>,
    generation: u64,
}

impl PartialEq for Params {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Params {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = spec
            .layers()
            .iter()
            .map(|l| {
                let (w, b) = l.param_counts();
                LayerParams {
                    weight: vec![0.0; w],
                    bias: vec![0.0; b],
                }
            })
            .collect();
        Params { layers, generation: 0 }
    }

    /// Weights uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
    pub fn init<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let mut p = Params::zeros(spec);
        for (layer, lp) in spec.layers().iter().zip(&mut p.layers) {
            if layer.is_trainable() {
                let bound = 1.0 / (layer.fan_in() as f64).sqrt();
                for w in &mut lp.weight {
                    *w = rng.gen_range(-bound..bound);
                }
            }
        }
        p
    }

    pub fn from_layers(spec: &NetworkSpec, layers: Vec<LayerParams>) -> Result<Self> {
        if layers.len() != spec.layers().len() {
            return Err(Error::shape(spec.layers().len(), layers.len()));
        }
        for (i, (l, p)) in spec.layers().iter().zip(&layers).enumerate() {
            let (w, b) = l.param_counts();
            if p.weight.len() != w || p.bias.len() != b {
                return Err(Error::shape(
                    format!("layer {i}: {w} weights + {b} biases"),
                    format!("{} + {}", p.weight.len(), p.bias.len()),
                ));
            }
            if p.weight.iter().chain(&p.bias).any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("layer {i} holds non-finite parameters")));
            }
        }
        Ok(Params { layers, generation: 0 })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// All values in layer order, weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias).copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for l in self.layers_mut() {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v *= factor;
            }
        }
    }
}

#[derive(Debug)]
enum Saved {
    /// im2col matrix of a convolution.
    Patches(Vec<f64>),
    /// CELU output.
    Activation(Vec<f64>),
    /// Linear-layer input.
    Input(Vec<f64>),
    Nothing,
}

/// Intermediate values from [`forward`], consumed by [`backward`].
#[derive(Debug)]
pub struct ForwardCache {
    generation: u64,
    digest: [u8; 32],
    batch: usize,
    saved: Vec<Saved>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// `c = a * b (+ c if accumulate)` with explicit strides; `a` is `m x k`,
/// `b` is `k x n`, `c` is `m x n` row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn celu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        // absolute error ~1e-16 near zero, and much cheaper than exp_m1
        x.exp() - 1.0
    }
}

pub fn celu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

struct ConvGeom {
    c_in: usize,
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    fn out_positions(&self) -> usize {
        self.out_dims.iter().product()
    }

    /// Visits `(patch column, source element offset)` for every output row
    /// `m` of one sample-relative im2col, calling `f(row, col, src)`.
    fn for_each_tap(&self, batch: usize, mut f: impl FnMut(usize, usize, usize)) {
        let [d, h, w] = self.in_dims;
        let [od, oh, ow] = self.out_dims;
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let c = self.c_in;
        let kvol = kd * kh * kw;
        let mut row = 0;
        for b in 0..batch {
            for z in 0..od {
                for y in 0..oh {
                    for x in 0..ow {
                        for i in 0..kd {
                            for j in 0..kh {
                                for l in 0..kw {
                                    let pos = ((b * d + z * sd + i) * h + y * sh + j) * w + x * sw + l;
                                    let tap = (i * kh + j) * kw + l;
                                    for ch in 0..c {
                                        f(row, ch * kvol + tap, pos * c + ch);
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let k = self.k();
        let mut p = vec![0.0; batch * self.out_positions() * k];
        self.for_each_tap(batch, |row, col, src| p[row * k + col] = x[src]);
        p
    }

    fn col2im(&self, dp: &[f64], batch: usize) -> Vec<f64> {
        let k = self.k();
        let mut dx = vec![0.0; batch * self.in_dims.iter().product::<usize>() * self.c_in];
        self.for_each_tap(batch, |row, col, src| dx[src] += dp[row * k + col]);
        dx
    }
}

fn conv_geom(layer: &LayerSpec, input: Shape, output: Shape) -> ConvGeom {
    match (*layer, input, output) {
        (LayerSpec::Conv3d { kernel, stride, .. }, Shape::Volume([c, d, h, w]), Shape::Volume([_, od, oh, ow])) => ConvGeom {
            c_in: c,
            in_dims: [d, h, w],
            out_dims: [od, oh, ow],
            kernel,
            stride,
        },
        _ => unreachable!("spec validated conv shapes"),
    }
}

/// `y = x * W^T + bias` for `rows` rows of width `k` and `n` outputs.
fn affine(x: &[f64], rows: usize, k: usize, p: &LayerParams, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * n];
    for row in y.chunks_exact_mut(n) {
        row.copy_from_slice(&p.bias);
    }
    if k <= 4 {
        // too thin for the packed kernel to pay off
        for (yr, xr) in y.chunks_exact_mut(n).zip(x.chunks_exact(k)) {
            for (o, yo) in yr.iter_mut().enumerate() {
                let w = &p.weight[o * k..(o + 1) * k];
                *yo += w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        return y;
    }
    gemm(rows, k, n, x, (k, 1), &p.weight, (1, k), &mut y, true);
    y
}

/// Gradients of `affine`: accumulates into `grad`, returns `dx` if wanted.
#[allow(clippy::too_many_arguments)]
fn affine_backward(x: &[f64], dy: &[f64], rows: usize, k: usize, n: usize, p: &LayerParams, grad: &mut LayerParams, want_dx: bool) -> Option<Vec<f64>> {
    gemm(n, rows, k, dy, (1, n), x, (k, 1), &mut grad.weight, true);
    for row in dy.chunks_exact(n) {
        for (g, &d) in grad.bias.iter_mut().zip(row) {
            *g += d;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![0.0; rows * k];
        gemm(rows, n, k, dy, (n, 1), &p.weight, (k, 1), &mut dx, false);
        dx
    })
}

fn to_channels_last(x: &[f64], batch: usize, [c, d, h, w]: [usize; 4]) -> Vec<f64> {
    let plane = d * h * w;
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        let src = &x[b * c * plane..(b + 1) * c * plane];
        let dst = &mut out[b * c * plane..(b + 1) * c * plane];
        for ch in 0..c {
            for p in 0..plane {
                dst[p * c + ch] = src[ch * plane + p];
            }
        }
    }
    out
}

fn to_channels_first(x: &[f64], batch: usize, [c, d, h, w]: [usize; 4]) -> Vec<f64> {
    let plane = d * h * w;
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        let src = &x[b * c * plane..(b + 1) * c * plane];
        let dst = &mut out[b * c * plane..(b + 1) * c * plane];
        for p in 0..plane {
            for ch in 0..c {
                dst[ch * plane + p] = src[p * c + ch];
            }
        }
    }
    out
}

fn check_input(spec: &NetworkSpec, inputs: &[f64], batch: usize) -> Result<()> {
    if batch == 0 || inputs.len() != batch * spec.input_len() {
        return Err(Error::shape(
            format!("batch x {}", Shape::Volume(spec.input_shape())),
            format!("{} values for batch {batch}", inputs.len()),
        ));
    }
    Ok(())
}

fn run(params: &Params, spec: &NetworkSpec, inputs: &[f64], batch: usize, keep: bool) -> Result<(Vec<f64>, Vec<Saved>)> {
    check_input(spec, inputs, batch)?;
    if params.layers.len() != spec.layers().len() {
        return Err(Error::shape(spec.layers().len(), params.layers.len()));
    }
    let mut cur = to_channels_last(inputs, batch, spec.input_shape());
    let mut saved = Vec::with_capacity(if keep { spec.layers().len() } else { 0 });
    for (i, layer) in spec.layers().iter().enumerate() {
        let input = spec.input_shape_of(i);
        let output = spec.shapes()[i];
        let p = &params.layers[i];
        let (next, save) = match *layer {
            LayerSpec::Conv3d { out_ch, kernel, stride, .. } => {
                let g = conv_geom(layer, input, output);
                // a pointwise conv reads channels-last activations as-is
                let patches = if kernel == [1, 1, 1] && stride == [1, 1, 1] {
                    std::mem::take(&mut cur)
                } else {
                    g.im2col(&cur, batch)
                };
                let y = affine(&patches, batch * g.out_positions(), g.k(), p, out_ch);
                (y, if keep { Saved::Patches(patches) } else { Saved::Nothing })
            }
            LayerSpec::Celu => {
                let mut y = std::mem::take(&mut cur);
                y.iter_mut().for_each(|v| *v = celu(*v));
                let s = if keep { Saved::Activation(y.clone()) } else { Saved::Nothing };
                (y, s)
            }
            LayerSpec::Flatten => match input {
                Shape::Volume(s) => (to_channels_first(&cur, batch, s), Saved::Nothing),
                Shape::Flat(_) => unreachable!(),
            },
            LayerSpec::Linear { in_features, out_features } => {
                let y = affine(&cur, batch, in_features, p, out_features);
                (y, if keep { Saved::Input(std::mem::take(&mut cur)) } else { Saved::Nothing })
            }
        };
        if keep {
            saved.push(save);
        }
        cur = next;
    }
    Ok((cur, saved))
}

/// Predictions `(batch, O)` plus the cache needed by [`backward`].
pub fn forward(params: &Params, spec: &NetworkSpec, inputs: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
    let (y, saved) = run(params, spec, inputs, batch, true)?;
    Ok((
        y,
        ForwardCache {
            generation: params.generation,
            digest: spec.digest(),
            batch,
            saved,
        },
    ))
}

/// Samples per inference pass; keeps intermediate activations cache-resident.
const PREDICT_CHUNK: usize = 16;

/// Predictions only.
pub fn predict(params: &Params, spec: &NetworkSpec, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
    check_input(spec, inputs, batch)?;
    let mut out = Vec::with_capacity(batch * spec.output_size());
    for chunk in inputs.chunks(PREDICT_CHUNK * spec.input_len()) {
        out.extend(run(params, spec, chunk, chunk.len() / spec.input_len(), false)?.0);
    }
    Ok(out)
}

/// Parameter gradients given `d_pred = dLoss/dPrediction`, shape `(batch, O)`.
pub fn backward(params: &Params, spec: &NetworkSpec, cache: ForwardCache, d_pred: &[f64]) -> Result<Params> {
    if cache.generation != params.generation || cache.digest != spec.digest() || cache.saved.len() != spec.layers().len() {
        return Err(Error::Usage("forward cache does not belong to these parameters".into()));
    }
    let batch = cache.batch;
    if d_pred.len() != batch * spec.output_size() {
        return Err(Error::shape(batch * spec.output_size(), d_pred.len()));
    }
    let mut grads = Params::zeros(spec);
    let mut delta = d_pred.to_vec();
    for (i, (layer, saved)) in spec.layers().iter().zip(cache.saved).enumerate().rev() {
        let input = spec.input_shape_of(i);
        let output = spec.shapes()[i];
        let p = &params.layers[i];
        let want_dx = i > 0;
        delta = match (*layer, saved) {
            (LayerSpec::Conv3d { out_ch, .. }, Saved::Patches(patches)) => {
                let g = conv_geom(layer, input, output);
                let rows = batch * g.out_positions();
                match affine_backward(&patches, &delta, rows, g.k(), out_ch, p, &mut grads.layers[i], want_dx) {
                    Some(dp) => g.col2im(&dp, batch),
                    None => Vec::new(),
                }
            }
            (LayerSpec::Celu, Saved::Activation(y)) => delta
                .iter()
                .zip(&y)
                .map(|(&d, &y)| if y > 0.0 { d } else { d * (y + 1.0) })
                .collect(),
            (LayerSpec::Flatten, _) => match input {
                Shape::Volume(s) => to_channels_last(&delta, batch, s),
                Shape::Flat(_) => unreachable!(),
            },
            (LayerSpec::Linear { in_features, out_features }, Saved::Input(x)) => {
                affine_backward(&x, &delta, batch, in_features, out_features, p, &mut grads.layers[i], want_dx)
                    .unwrap_or_default()
            }
            _ => return Err(Error::Usage("forward cache layout does not match the spec".into())),
        };
    }
    Ok(grads)
}

/// Output of the convolutional prefix (everything before flatten) in
/// `(C, D, H, W)` order per sample.
pub fn conv_features(params: &Params, spec: &NetworkSpec, inputs: &[f64], batch: usize) -> Result<(Vec<f64>, [usize; 4])> {
    let cut = spec
        .layers()
        .iter()
        .position(|l| matches!(l, LayerSpec::Flatten))
        .ok_or_else(|| Error::Architecture("network has no flatten layer".into()))?;
    let shape = match spec.input_shape_of(cut) {
        Shape::Volume(s) => s,
        Shape::Flat(_) => unreachable!(),
    };
    let prefix = NetworkSpec::new(spec.input_shape(), spec.layers()[..=cut].to_vec(), shape.iter().product())?;
    let sub = Params {
        layers: params.layers[..=cut].to_vec(),
        generation: 0,
    };
    Ok((predict(&sub, &prefix, inputs, batch)?, shape))
}
