//! Flat-parameter networks for the two stage-1 routes.
//!
//! Parameters live in one `Vec<f64>`; each linear layer owns a row-major
//! `fan_out x fan_in` weight block followed by its bias.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MfccMatrix;
use crate::error::{Error, Result};
use crate::prob::ProbabilityVector;

pub const LEAKY_SLOPE: f64 = 0.01;
/// Added to the pooled variance before the square root.
pub const POOL_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    EmbeddingMlp,
    MfccTdnn,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::EmbeddingMlp => "embedding-mlp",
            Route::MfccTdnn => "mfcc-tdnn",
        }
    }
}

/// One dilated temporal convolution: frame offsets relative to the centre frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdnnLayer {
    pub offsets: Vec<i32>,
    pub channels: usize,
}

impl TdnnLayer {
    fn span(&self) -> usize {
        let lo = self.offsets.iter().min().copied().unwrap_or(0);
        let hi = self.offsets.iter().max().copied().unwrap_or(0);
        (hi - lo) as usize
    }

    fn lowest(&self) -> i32 {
        self.offsets.iter().min().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TdnnConfig {
    pub layers: Vec<TdnnLayer>,
    /// Widths of the fully connected layers after pooling.
    pub fc: Vec<usize>,
}

impl TdnnConfig {
    pub fn with_channels(channels: usize, fc: usize) -> Self {
        let layer = |offsets: &[i32]| TdnnLayer {
            offsets: offsets.to_vec(),
            channels,
        };
        Self {
            layers: vec![layer(&[-2, -1, 0, 1, 2]), layer(&[-2, 0, 2]), layer(&[-3, 0, 3])],
            fc: vec![fc, fc],
        }
    }
}

impl Default for TdnnConfig {
    fn default() -> Self {
        Self::with_channels(128, 256)
    }
}

/// Layer shapes of a stage-1 network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "route", rename_all = "kebab-case")]
pub enum Architecture {
    EmbeddingMlp {
        input_dim: usize,
        hidden: Vec<usize>,
        classes: usize,
    },
    MfccTdnn {
        n_coeffs: usize,
        tdnn: Vec<TdnnLayer>,
        fc: Vec<usize>,
        classes: usize,
    },
}

impl Architecture {
    pub fn route(&self) -> Route {
        match self {
            Architecture::EmbeddingMlp { .. } => Route::EmbeddingMlp,
            Architecture::MfccTdnn { .. } => Route::MfccTdnn,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Architecture::EmbeddingMlp { classes, .. } | Architecture::MfccTdnn { classes, .. } => {
                *classes
            }
        }
    }

    /// Width of one input row: embedding dimension or MFCC coefficients.
    pub fn input_width(&self) -> usize {
        match self {
            Architecture::EmbeddingMlp { input_dim, .. } => *input_dim,
            Architecture::MfccTdnn { n_coeffs, .. } => *n_coeffs,
        }
    }

    /// Fewest frames a TDNN input may have; 1 for the MLP.
    pub fn receptive_field(&self) -> usize {
        match self {
            Architecture::EmbeddingMlp { .. } => 1,
            Architecture::MfccTdnn { tdnn, .. } => 1 + tdnn.iter().map(TdnnLayer::span).sum::<usize>(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("network: {m}")));
        if self.classes() < 1 || self.input_width() < 1 {
            return bad("input and class dimensions must be positive");
        }
        match self {
            Architecture::EmbeddingMlp { hidden, .. } => {
                if hidden.contains(&0) {
                    return bad("hidden widths must be positive");
                }
            }
            Architecture::MfccTdnn { tdnn, fc, .. } => {
                if tdnn.is_empty() {
                    return bad("at least one TDNN layer is required");
                }
                if tdnn.iter().any(|l| l.channels == 0 || l.offsets.is_empty()) {
                    return bad("TDNN layers need channels and offsets");
                }
                if fc.contains(&0) {
                    return bad("fully connected widths must be positive");
                }
            }
        }
        Ok(())
    }
}

/// Input to a stage-1 network.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Vector(Vec<f64>),
    Frames(MfccMatrix),
}

impl Features {
    fn describe(&self) -> String {
        match self {
            Features::Vector(v) => format!("{}-dim vector", v.len()),
            Features::Frames(m) => format!("{}x{} MFCC matrix", m.frames, m.n_coeffs),
        }
    }
}

/// Per-dimension input standardisation fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Statistics over every vector, or every frame of every matrix.
    pub fn fit<'a>(width: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        for row in rows {
            n += 1;
            for ((s, q), &x) in sum.iter_mut().zip(sq.iter_mut()).zip(row) {
                *s += x;
                *q += x * x;
            }
        }
        if n == 0 {
            return Self::identity(width);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / nf - m * m).max(0.0).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    fn apply(&self, row: &[f64], out: &mut [f64]) {
        for (((o, &x), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.std) {
            *o = (x - m) / s;
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

impl Dense {
    fn weights<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.fan_out, self.fan_in), &params[self.w..self.b]).expect("layout")
    }

    fn bias<'a>(&self, params: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[self.b..self.b + self.fan_out])
    }

    fn forward(&self, params: &[f64], x: &Array2<f64>) -> Array2<f64> {
        let mut z = Array2::zeros((x.nrows(), self.fan_out));
        general_mat_mul(1.0, x, &self.weights(params).t(), 0.0, &mut z);
        z += &self.bias(params);
        z
    }

    /// Accumulate weight and bias gradients; returns the input gradient if asked.
    fn backward(
        &self,
        params: &[f64],
        x: &Array2<f64>,
        dz: &Array2<f64>,
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let (gw, gb) = grad[self.w..self.b + self.fan_out].split_at_mut(self.b - self.w);
        let mut gw = ArrayViewMut2::from_shape((self.fan_out, self.fan_in), gw).expect("layout");
        general_mat_mul(1.0, &dz.t(), x, 1.0, &mut gw);
        for (g, s) in gb.iter_mut().zip(dz.sum_axis(Axis(0))) {
            *g += s;
        }
        want_input.then(|| {
            let mut dx = Array2::zeros((dz.nrows(), self.fan_in));
            general_mat_mul(1.0, dz, &self.weights(params), 0.0, &mut dx);
            dx
        })
    }
}

fn leaky(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

fn leaky_backward(z: &Array2<f64>, da: &mut Array2<f64>) {
    da.zip_mut_with(z, |d, &v| {
        if v <= 0.0 {
            *d *= LEAKY_SLOPE;
        }
    });
}

/// Architecture plus parameter layout and input scaler.
#[derive(Debug, Clone)]
pub struct Network {
    pub arch: Architecture,
    pub scaler: Scaler,
    tdnn: Vec<(Dense, TdnnLayer)>,
    head: Vec<Dense>,
    param_count: usize,
}

struct TdnnStep {
    u: Array2<f64>,
    z: Array2<f64>,
    input_rows: usize,
    input_ranges: Vec<(usize, usize)>,
}

struct Trace {
    /// Per TDNN layer: im2col input, pre-activation, input row ranges.
    tdnn: Vec<TdnnStep>,
    /// Final TDNN activations and per-sample row ranges.
    frames: Option<(Array2<f64>, Vec<(usize, usize)>)>,
    pooled_std: Option<Array2<f64>>,
    /// Per head layer: input and pre-activation.
    head: Vec<(Array2<f64>, Array2<f64>)>,
    logits: Array2<f64>,
}

impl Network {
    pub fn new(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let mut cursor = 0usize;
        let mut dense = |fan_in: usize, fan_out: usize| {
            let d = Dense {
                fan_in,
                fan_out,
                w: cursor,
                b: cursor + fan_in * fan_out,
            };
            cursor = d.b + fan_out;
            d
        };
        let mut tdnn = Vec::new();
        let (head_in, hidden, classes) = match &arch {
            Architecture::EmbeddingMlp {
                input_dim,
                hidden,
                classes,
            } => (*input_dim, hidden.clone(), *classes),
            Architecture::MfccTdnn {
                n_coeffs,
                tdnn: layers,
                fc,
                classes,
            } => {
                let mut width = *n_coeffs;
                for layer in layers {
                    tdnn.push((dense(width * layer.offsets.len(), layer.channels), layer.clone()));
                    width = layer.channels;
                }
                (2 * width, fc.clone(), *classes)
            }
        };
        let mut head = Vec::new();
        let mut width = head_in;
        for &h in hidden.iter().chain(std::iter::once(&classes)) {
            head.push(dense(width, h));
            width = h;
        }
        let scaler = Scaler::identity(arch.input_width());
        Ok(Self {
            arch,
            scaler,
            tdnn,
            head,
            param_count: cursor,
        })
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Uniform in ±sqrt(6/(fan_in+fan_out)) for weights, zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.param_count];
        for d in self.tdnn.iter().map(|(d, _)| d).chain(&self.head) {
            let limit = (6.0 / (d.fan_in + d.fan_out) as f64).sqrt();
            for w in &mut params[d.w..d.b] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        params
    }

    pub fn check_input(&self, x: &Features) -> Result<()> {
        let mismatch = |expected: String| {
            Err(Error::Shape {
                expected,
                got: x.describe(),
            })
        };
        match (&self.arch, x) {
            (Architecture::EmbeddingMlp { input_dim, .. }, Features::Vector(v)) => {
                if v.len() != *input_dim {
                    return mismatch(format!("{input_dim}-dim vector"));
                }
            }
            (Architecture::MfccTdnn { n_coeffs, .. }, Features::Frames(m)) => {
                let need = self.arch.receptive_field();
                if m.n_coeffs != *n_coeffs || m.frames < need {
                    return mismatch(format!("MFCC matrix with {n_coeffs} coefficients and at least {need} frames"));
                }
            }
            (Architecture::EmbeddingMlp { input_dim, .. }, _) => {
                return mismatch(format!("{input_dim}-dim vector"))
            }
            (Architecture::MfccTdnn { n_coeffs, .. }, _) => {
                return mismatch(format!("MFCC matrix with {n_coeffs} coefficients"))
            }
        }
        if match x {
            Features::Vector(v) => v.iter().any(|v| !v.is_finite()),
            Features::Frames(m) => m.values.iter().any(|v| !v.is_finite()),
        } {
            return Err(Error::Data("non-finite input features".into()));
        }
        Ok(())
    }

    fn forward(&self, params: &[f64], inputs: &[&Features]) -> Trace {
        let mut trace = Trace {
            tdnn: Vec::new(),
            frames: None,
            pooled_std: None,
            head: Vec::new(),
            logits: Array2::zeros((0, 0)),
        };
        let width = self.arch.input_width();
        let mut x = match &self.arch {
            Architecture::EmbeddingMlp { .. } => {
                let mut x = Array2::zeros((inputs.len(), width));
                for (row, f) in x.rows_mut().into_iter().zip(inputs) {
                    let Features::Vector(v) = f else { unreachable!("checked input") };
                    self.scaler.apply(v, row.into_slice().expect("row-major"));
                }
                x
            }
            Architecture::MfccTdnn { .. } => self.tdnn_forward(params, inputs, &mut trace),
        };
        for (i, d) in self.head.iter().enumerate() {
            let z = d.forward(params, &x);
            let last = i + 1 == self.head.len();
            let next = if last { z.clone() } else { leaky(&z) };
            trace.head.push((x, z));
            x = next;
        }
        trace.logits = x;
        trace
    }

    fn tdnn_forward(&self, params: &[f64], inputs: &[&Features], trace: &mut Trace) -> Array2<f64> {
        let width = self.arch.input_width();
        let mut ranges = Vec::with_capacity(inputs.len());
        let total: usize = inputs
            .iter()
            .map(|f| match f {
                Features::Frames(m) => m.frames,
                Features::Vector(_) => unreachable!("checked input"),
            })
            .sum();
        let mut h = Array2::zeros((total, width));
        let mut row = 0;
        for f in inputs {
            let Features::Frames(m) = f else { unreachable!("checked input") };
            for t in 0..m.frames {
                let mut r = h.row_mut(row + t);
                self.scaler.apply(m.row(t), r.as_slice_mut().expect("row-major"));
            }
            ranges.push((row, row + m.frames));
            row += m.frames;
        }

        for (d, layer) in &self.tdnn {
            let span = layer.span();
            let lo = layer.lowest();
            let c_in = h.ncols();
            let out_rows: usize = ranges.iter().map(|(a, b)| b - a - span).sum();
            let mut u = Array2::zeros((out_rows, d.fan_in));
            let mut next_ranges = Vec::with_capacity(ranges.len());
            let mut r = 0;
            for &(a, b) in &ranges {
                let frames_out = b - a - span;
                for t in 0..frames_out {
                    let mut dst = u.row_mut(r + t);
                    let dst = dst.as_slice_mut().expect("row-major");
                    for (j, &o) in layer.offsets.iter().enumerate() {
                        let src = a + t + (o - lo) as usize;
                        dst[j * c_in..(j + 1) * c_in]
                            .copy_from_slice(h.row(src).as_slice().expect("row-major"));
                    }
                }
                next_ranges.push((r, r + frames_out));
                r += frames_out;
            }
            let z = d.forward(params, &u);
            let input_rows = h.nrows();
            h = leaky(&z);
            trace.tdnn.push(TdnnStep {
                u,
                z,
                input_rows,
                input_ranges: std::mem::replace(&mut ranges, next_ranges),
            });
        }

        let c = h.ncols();
        let mut pooled = Array2::zeros((ranges.len(), 2 * c));
        let mut stds = Array2::zeros((ranges.len(), c));
        for (s, &(a, b)) in ranges.iter().enumerate() {
            let n = (b - a) as f64;
            for ch in 0..c {
                let col = h.column(ch);
                let seg = col.slice(ndarray::s![a..b]);
                let mean = seg.sum() / n;
                let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let sd = (var + POOL_EPS).sqrt();
                pooled[[s, ch]] = mean;
                pooled[[s, c + ch]] = sd;
                stds[[s, ch]] = sd;
            }
        }
        trace.frames = Some((h, ranges));
        trace.pooled_std = Some(stds);
        pooled
    }

    fn backward(&self, params: &[f64], trace: &Trace, dlogits: Array2<f64>, grad: &mut [f64]) {
        let mut da = dlogits;
        let has_trunk = !self.tdnn.is_empty();
        for (i, d) in self.head.iter().enumerate().rev() {
            let (x, z) = &trace.head[i];
            if i + 1 != self.head.len() {
                leaky_backward(z, &mut da);
            }
            let want = i > 0 || has_trunk;
            match d.backward(params, x, &da, grad, want) {
                Some(dx) => da = dx,
                None => return,
            }
        }

        // statistics pooling
        let (h, ranges) = trace.frames.as_ref().expect("tdnn trace");
        let stds = trace.pooled_std.as_ref().expect("tdnn trace");
        let c = h.ncols();
        let mut dh = Array2::zeros(h.raw_dim());
        for (s, &(a, b)) in ranges.iter().enumerate() {
            let n = (b - a) as f64;
            for ch in 0..c {
                let dmean = da[[s, ch]];
                let dstd = da[[s, c + ch]];
                let sd = stds[[s, ch]];
                let mean = h.column(ch).slice(ndarray::s![a..b]).sum() / n;
                for t in a..b {
                    dh[[t, ch]] = dmean / n + dstd * (h[[t, ch]] - mean) / (n * sd);
                }
            }
        }

        for (l, (d, layer)) in self.tdnn.iter().enumerate().rev() {
            let step = &trace.tdnn[l];
            leaky_backward(&step.z, &mut dh);
            let Some(du) = d.backward(params, &step.u, &dh, grad, l > 0) else {
                return;
            };
            // col2im into the previous layer's frames
            let c_in = d.fan_in / layer.offsets.len();
            let lo = layer.lowest();
            let span = layer.span();
            let mut dprev = Array2::zeros((step.input_rows, c_in));
            let mut r = 0;
            for &(a, b) in &step.input_ranges {
                for t in 0..(b - a - span) {
                    let src = du.row(r + t);
                    for (j, &o) in layer.offsets.iter().enumerate() {
                        let mut dst = dprev.row_mut(a + t + (o - lo) as usize);
                        dst += &src.slice(ndarray::s![j * c_in..(j + 1) * c_in]);
                    }
                }
                r += b - a - span;
            }
            dh = dprev;
        }
    }

    /// Class probabilities for each input, one row per input.
    pub fn probabilities(&self, params: &[f64], inputs: &[&Features]) -> Vec<ProbabilityVector> {
        let trace = self.forward(params, inputs);
        trace
            .logits
            .rows()
            .into_iter()
            .map(|r| ProbabilityVector::softmax(r.as_slice().expect("row-major")))
            .collect()
    }

    /// Mean cross-entropy over the batch; gradient is added into `grad`.
    pub fn loss_and_gradient(
        &self,
        params: &[f64],
        inputs: &[&Features],
        labels: &[usize],
        grad: &mut [f64],
    ) -> f64 {
        let trace = self.forward(params, inputs);
        let n = inputs.len() as f64;
        let mut dlogits = Array2::zeros(trace.logits.raw_dim());
        let mut loss = 0.0;
        for ((row, mut drow), &y) in trace.logits.rows().into_iter().zip(dlogits.rows_mut()).zip(labels) {
            let p = ProbabilityVector::softmax(row.as_slice().expect("row-major"));
            loss -= p.as_slice()[y].max(f64::MIN_POSITIVE).ln();
            for (k, (d, &pk)) in drow.iter_mut().zip(p.as_slice()).enumerate() {
                *d = (pk - f64::from(u8::from(k == y))) / n;
            }
        }
        self.backward(params, &trace, dlogits, grad);
        loss / n
    }

    /// Mean cross-entropy without gradients.
    pub fn loss(&self, params: &[f64], inputs: &[&Features], labels: &[usize]) -> f64 {
        let probs = self.probabilities(params, inputs);
        -probs
            .iter()
            .zip(labels)
            .map(|(p, &y)| p.as_slice()[y].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / inputs.len() as f64
    }

    /// Statistics-pooling output (mean then std per channel) for one input.
    pub fn pooled(&self, params: &[f64], input: &Features) -> Option<Vec<f64>> {
        if self.tdnn.is_empty() {
            return None;
        }
        let trace = self.forward(params, &[input]);
        trace.head.first().map(|(x, _)| x.row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp(input: usize, hidden: &[usize], classes: usize) -> Network {
        Network::new(Architecture::EmbeddingMlp {
            input_dim: input,
            hidden: hidden.to_vec(),
            classes,
        })
        .unwrap()
    }

    fn tiny_tdnn() -> Network {
        Network::new(Architecture::MfccTdnn {
            n_coeffs: 3,
            tdnn: vec![
                TdnnLayer {
                    offsets: vec![-1, 0, 1],
                    channels: 4,
                },
                TdnnLayer {
                    offsets: vec![-2, 0, 2],
                    channels: 3,
                },
            ],
            fc: vec![5],
            classes: 3,
        })
        .unwrap()
    }

    fn frames(rows: usize, cols: usize, seed: u64) -> Features {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Features::Frames(MfccMatrix::new(rows, cols, values, 25.0, 10.0).unwrap())
    }

    #[test]
    fn mlp_parameter_count() {
        let expected = 192 * 256 + 256 + 256 * 256 + 256 + 256 * 2 + 2;
        assert_eq!(expected, 115_714);
        assert_eq!(mlp(192, &[256, 256], 2).param_count(), expected);
    }

    #[test]
    fn default_receptive_field() {
        let arch = Architecture::MfccTdnn {
            n_coeffs: 20,
            tdnn: TdnnConfig::default().layers,
            fc: vec![256, 256],
            classes: 2,
        };
        assert_eq!(arch.receptive_field(), 15);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let net = mlp(8, &[6, 6], 3);
        assert_eq!(net.init_params(3), net.init_params(3));
        assert_ne!(net.init_params(3), net.init_params(4));
        let p = net.init_params(3);
        assert!(p.iter().all(|w| w.abs() <= (6.0f64 / 9.0).sqrt()));
    }

    #[test]
    fn probabilities_are_normalised_even_for_huge_inputs() {
        let net = mlp(4, &[5, 5], 2);
        let params = net.init_params(1);
        let x = Features::Vector(vec![1e6, -1e6, 3e5, 0.0]);
        let p = &net.probabilities(&params, &[&x])[0];
        assert_eq!(p.len(), 2);
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shape_errors() {
        let net = mlp(4, &[3], 2);
        assert!(net.check_input(&Features::Vector(vec![0.0; 3])).is_err());
        assert!(net.check_input(&frames(20, 4, 0)).is_err());
        let t = tiny_tdnn();
        assert_eq!(t.arch.receptive_field(), 7);
        assert!(t.check_input(&frames(6, 3, 0)).is_err());
        assert!(t.check_input(&frames(7, 3, 0)).is_ok());
        assert!(t.check_input(&frames(9, 2, 0)).is_err());
    }

    fn grad_check(net: &Network, inputs: &[Features], labels: &[usize], seed: u64) {
        let params = net.init_params(seed);
        let refs: Vec<&Features> = inputs.iter().collect();
        let mut grad = vec![0.0; params.len()];
        net.loss_and_gradient(&params, &refs, labels, &mut grad);
        let h = 1e-5;
        let step = (params.len() / 40).max(1);
        for i in (0..params.len()).step_by(step) {
            let mut p = params.clone();
            p[i] += h;
            let up = net.loss(&p, &refs, labels);
            p[i] -= 2.0 * h;
            let down = net.loss(&p, &refs, labels);
            let numeric = (up - down) / (2.0 * h);
            let denom = numeric.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                (numeric - grad[i]).abs() / denom < 1e-4 || (numeric - grad[i]).abs() < 1e-9,
                "param {i}: analytic {} numeric {numeric}",
                grad[i]
            );
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let net = mlp(5, &[4, 3], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<Features> = (0..6)
            .map(|_| Features::Vector((0..5).map(|_| rng.random_range(-2.0..2.0)).collect()))
            .collect();
        grad_check(&net, &xs, &[0, 1, 2, 2, 1, 0], 11);
    }

    #[test]
    fn tdnn_gradient_matches_finite_differences() {
        let net = tiny_tdnn();
        let xs = vec![frames(9, 3, 1), frames(12, 3, 2), frames(7, 3, 3)];
        grad_check(&net, &xs, &[2, 0, 1], 5);
    }

    #[test]
    fn pooling_ignores_frame_order_of_trunk_output() {
        // a one-frame-context TDNN sees each frame independently, so permuting
        // input frames permutes trunk frames and leaves pooled stats unchanged
        let net = Network::new(Architecture::MfccTdnn {
            n_coeffs: 3,
            tdnn: vec![TdnnLayer {
                offsets: vec![0],
                channels: 4,
            }],
            fc: vec![4],
            classes: 2,
        })
        .unwrap();
        let params = net.init_params(2);
        let Features::Frames(m) = frames(10, 3, 4) else { unreachable!() };
        let mut rows: Vec<Vec<f64>> = (0..m.frames).map(|t| m.row(t).to_vec()).collect();
        rows.reverse();
        rows.swap(1, 6);
        let permuted = MfccMatrix::new(10, 3, rows.concat(), 25.0, 10.0).unwrap();
        let a = net.pooled(&params, &Features::Frames(m)).unwrap();
        let b = net.pooled(&params, &Features::Frames(permuted)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
