use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::xbar::BlockGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    /// 3D convolution with zero padding; kernel and stride are `(D, H, W)`.
    Conv3d {
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
    },
    Celu,
    Flatten,
    Linear { in_features: usize, out_features: usize },
}

impl LayerSpec {
    /// `(weight, bias)` element counts; zero for parameter-free layers.
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv3d { in_ch, out_ch, kernel, .. } => (out_ch * in_ch * kernel.iter().product::<usize>(), out_ch),
            LayerSpec::Linear { in_features, out_features } => (out_features * in_features, out_features),
            LayerSpec::Celu | LayerSpec::Flatten => (0, 0),
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv3d { in_ch, kernel, .. } => in_ch * kernel.iter().product::<usize>(),
            LayerSpec::Linear { in_features, .. } => in_features,
            LayerSpec::Celu | LayerSpec::Flatten => 0,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerSpec::Conv3d { .. } | LayerSpec::Linear { .. })
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv3d { in_ch, out_ch, kernel: k, stride: s } => write!(
                f,
                "Conv3d({in_ch},{out_ch},({},{},{}),({},{},{}))",
                k[0], k[1], k[2], s[0], s[1], s[2]
            ),
            LayerSpec::Celu => write!(f, "CELU"),
            LayerSpec::Flatten => write!(f, "Flatten"),
            LayerSpec::Linear { in_features, out_features } => write!(f, "Linear({in_features},{out_features})"),
        }
    }
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `(C, D, H, W)`
    Volume([usize; 4]),
    Flat(usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match self {
            Shape::Volume(s) => s.iter().product(),
            Shape::Flat(n) => *n,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Volume([c, d, h, w]) => write!(f, "({c},{d},{h},{w})"),
            Shape::Flat(n) => write!(f, "({n})"),
        }
    }
}

/// A validated layer chain with its inferred activation shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    input_shape: [usize; 4],
    layers: Vec<LayerSpec>,
    output_size: usize,
    shapes: Vec<Shape>,
}

impl NetworkSpec {
    pub fn new(input_shape: [usize; 4], layers: Vec<LayerSpec>, output_size: usize) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(Error::Architecture(format!("empty input shape {input_shape:?}")));
        }
        let mut shape = Shape::Volume(input_shape);
        let mut shapes = Vec::with_capacity(layers.len());
        let mut seen_conv = false;
        for (i, layer) in layers.iter().enumerate() {
            let bad = |msg: String| Error::Architecture(format!("layer {i} ({layer}): {msg}"));
            shape = match (*layer, shape) {
                (LayerSpec::Conv3d { in_ch, out_ch, kernel, stride }, Shape::Volume([c, d, h, w])) => {
                    if in_ch != c {
                        return Err(bad(format!("expects {in_ch} channels, input has {c}")));
                    }
                    if out_ch == 0 || kernel.contains(&0) || stride.contains(&0) {
                        return Err(bad("channels, kernel and stride must be >= 1".into()));
                    }
                    if kernel[0] != 1 {
                        return Err(bad("kernel depth must be 1".into()));
                    }
                    if !seen_conv && kernel != [1, 1, 1] {
                        return Err(bad("first convolution must use a unit kernel".into()));
                    }
                    seen_conv = true;
                    let mut out = [out_ch, 0, 0, 0];
                    for (axis, &n) in [d, h, w].iter().enumerate() {
                        if n < kernel[axis] {
                            return Err(bad(format!("input {shape} smaller than kernel")));
                        }
                        out[axis + 1] = (n - kernel[axis]) / stride[axis] + 1;
                    }
                    Shape::Volume(out)
                }
                (LayerSpec::Celu, s) => s,
                (LayerSpec::Flatten, Shape::Volume(s)) => Shape::Flat(s.iter().product()),
                (LayerSpec::Linear { in_features, out_features }, Shape::Flat(n)) => {
                    if in_features != n {
                        return Err(bad(format!("expects {in_features} features, input has {n}")));
                    }
                    if out_features == 0 {
                        return Err(bad("out_features must be >= 1".into()));
                    }
                    Shape::Flat(out_features)
                }
                (_, s) => return Err(bad(format!("cannot consume shape {s}"))),
            };
            shapes.push(shape);
        }
        if shape != Shape::Flat(output_size) {
            return Err(Error::Architecture(format!("network ends in {shape}, expected ({output_size})")));
        }
        Ok(NetworkSpec {
            input_shape,
            layers,
            output_size,
            shapes,
        })
    }

    pub fn input_shape(&self) -> [usize; 4] {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn output_size(&self) -> usize {
        self.output_size
    }

    /// Output shape of every layer.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn input_shape_of(&self, layer: usize) -> Shape {
        if layer == 0 {
            Shape::Volume(self.input_shape)
        } else {
            self.shapes[layer - 1]
        }
    }

    /// Size of the activation entering the first linear layer.
    pub fn flatten_size(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Flatten))
            .map(|i| self.shapes[i].numel())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| {
            let (w, b) = l.param_counts();
            w + b
        }).sum()
    }

    /// Layer chain in the `Conv3d(...)-CELU-Linear(...)` notation, with the
    /// implicit flatten omitted.
    pub fn describe(&self) -> String {
        self.layers
            .iter()
            .filter(|l| !matches!(l, LayerSpec::Flatten))
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Canonical little-endian encoding, shared with the checkpoint header.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut put = |v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        for &d in &self.input_shape {
            put(d);
        }
        put(self.output_size);
        put(self.layers.len());
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv3d { in_ch, out_ch, kernel, stride } => {
                    put(0);
                    for v in [in_ch, out_ch].into_iter().chain(kernel).chain(stride) {
                        put(v);
                    }
                }
                LayerSpec::Celu => put(1),
                LayerSpec::Flatten => put(2),
                LayerSpec::Linear { in_features, out_features } => {
                    put(3);
                    put(in_features);
                    put(out_features);
                }
            }
        }
        out
    }

    pub fn digest(&self) -> [u8; 32] {
        let d = Sha256::digest(self.encode());
        let mut out = [0u8; 32];
        out.copy_from_slice(&d);
        out
    }
}

/// Splits `h` into three stride factors whose logs are closest to the
/// 1:2:3 proportions of the `(2, 4, 8)` chain used for 64 rows.
pub fn row_reduction_chain(h: usize) -> Result<[usize; 3]> {
    if h == 0 {
        return Err(Error::Architecture("row count must be >= 1".into()));
    }
    let ln_h = (h as f64).ln();
    let targets = [ln_h / 6.0, ln_h / 3.0, ln_h / 2.0];
    let mut best: Option<([usize; 3], f64)> = None;
    for a in (1..=h).filter(|a| h.is_multiple_of(*a)) {
        let rest = h / a;
        for b in (1..=rest).filter(|b| rest.is_multiple_of(*b)) {
            let chain = [a, b, rest / b];
            let cost: f64 = chain
                .iter()
                .zip(targets)
                .map(|(&k, t)| ((k as f64).ln() - t).powi(2))
                .sum();
            if best.is_none_or(|(_, c)| cost < c - 1e-12) {
                best = Some((chain, cost));
            }
        }
    }
    Ok(best.expect("h >= 1 has a factorization").0)
}

/// The emulator chain for a block geometry: unit-kernel feature extraction,
/// three row-reducing convolutions, a column-pair convolution, and a
/// three-layer fully connected head with one output per column pair.
pub fn build_arch(geometry: &BlockGeometry) -> Result<NetworkSpec> {
    geometry.validate()?;
    let [c, _, h, w] = geometry.input_shape();
    if w < 2 {
        return Err(Error::Architecture(format!("need at least 2 columns, got {w}")));
    }
    let [s1, s2, s3] = row_reduction_chain(h)?;
    let pair_stride = if w > 2 { 2 } else { 1 };
    let conv = |in_ch, out_ch, kernel: [usize; 3], stride: [usize; 3]| LayerSpec::Conv3d {
        in_ch,
        out_ch,
        kernel,
        stride,
    };
    let mut layers = vec![
        conv(c, 16, [1, 1, 1], [1, 1, 1]),
        LayerSpec::Celu,
        conv(16, 8, [1, s1, 1], [1, s1, 1]),
        LayerSpec::Celu,
        conv(8, 4, [1, s2, 1], [1, s2, 1]),
        LayerSpec::Celu,
        conv(4, 32, [1, s3, 1], [1, s3, 1]),
        LayerSpec::Celu,
        conv(32, 32, [1, 1, 2], [1, 1, pair_stride]),
        LayerSpec::Celu,
        LayerSpec::Flatten,
    ];
    // Flatten size follows from the conv stack; infer it before the head.
    let prefix = NetworkSpec::partial_shape(geometry.input_shape(), &layers)?;
    layers.extend([
        LayerSpec::Linear { in_features: prefix, out_features: 32 },
        LayerSpec::Celu,
        LayerSpec::Linear { in_features: 32, out_features: 16 },
        LayerSpec::Celu,
        LayerSpec::Linear { in_features: 16, out_features: geometry.o },
    ]);
    NetworkSpec::new(geometry.input_shape(), layers, geometry.o)
}

impl NetworkSpec {
    fn partial_shape(input: [usize; 4], layers: &[LayerSpec]) -> Result<usize> {
        let mut shape = [input[0], input[1], input[2], input[3]];
        for layer in layers {
            if let LayerSpec::Conv3d { out_ch, kernel, stride, .. } = *layer {
                shape[0] = out_ch;
                for axis in 0..3 {
                    if shape[axis + 1] < kernel[axis] {
                        return Err(Error::Architecture(format!("{layer} does not fit input {shape:?}")));
                    }
                    shape[axis + 1] = (shape[axis + 1] - kernel[axis]) / stride[axis] + 1;
                }
            }
        }
        Ok(shape.iter().product())
    }
}
