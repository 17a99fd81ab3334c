//! Bidirectional recurrent interpolators (SRNN, LSTM, GRU) with a
//! time-distributed affine output layer.
//!
//! All parameters of a model live in one flat `f64` buffer; typed views
//! into it are handed out by [`RnnModel::params`]. The buffer order is
//!
//! ```text
//! fwd.w_x (G*Q x K_in), fwd.w_h (G*Q x Q), fwd.b (G*Q),
//! bwd.w_x, bwd.w_h, bwd.b,
//! w_out (K_out x 2Q), b_out (K_out)
//! ```
//!
//! with gates stacked along the rows in the order SRNN `[h]`,
//! GRU `[z, r, c]`, LSTM `[i, f, g, o]`. Matrices are row-major.

pub(crate) mod cell;
pub(crate) mod forward;
mod io;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cell::{cell_step, CellState};
pub use forward::{birnn_forward, estimate_channel, forward_batch, SequenceActivations};
pub(crate) use io::sidecar_path;
pub use io::{read_model, read_model_from, write_model, write_model_to, MODEL_MAGIC, MODEL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Srnn,
    Lstm,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Srnn, CellKind::Lstm, CellKind::Gru];

    pub fn gates(self) -> usize {
        match self {
            CellKind::Srnn => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Srnn => "srnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }

    /// Estimator label, e.g. `ALS-Bi-GRU`.
    pub fn label(self) -> &'static str {
        match self {
            CellKind::Srnn => "ALS-Bi-SRNN",
            CellKind::Lstm => "ALS-Bi-LSTM",
            CellKind::Gru => "ALS-Bi-GRU",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "srnn" | "rnn" => Ok(CellKind::Srnn),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!("unknown cell `{other}`"))),
        }
    }
}

/// Candidate/state nonlinearity of the cell. The LSTM cell output is
/// always squashed with tanh; a ReLU there lets the state grow without bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub(crate) fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Architecture of a bidirectional model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub kind: CellKind,
    /// Hidden size Q per direction.
    pub hidden: usize,
    /// Input (and output) features per step, 2 K_on.
    pub features: usize,
    /// Frame length the model was built for.
    pub frame_len: usize,
    pub activation: Activation,
    /// Apply ReLU to the concatenated hidden states before the output layer.
    pub output_relu: bool,
}

impl ModelDims {
    pub fn new(kind: CellKind, hidden: usize, k_on: usize, frame_len: usize) -> Self {
        Self {
            kind,
            hidden,
            features: 2 * k_on,
            frame_len,
            activation: Activation::Relu,
            output_relu: false,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn k_on(&self) -> usize {
        self.features / 2
    }

    fn gq(&self) -> usize {
        self.kind.gates() * self.hidden
    }

    fn sizes(&self) -> [usize; 8] {
        let (gq, q, k) = (self.gq(), self.hidden, self.features);
        [gq * k, gq * q, gq, gq * k, gq * q, gq, k * 2 * q, k]
    }

    pub fn param_count(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.features == 0 || self.frame_len == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !self.features.is_multiple_of(2) {
            return Err(Error::Config("feature count must be even (real/imag stacking)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DirectionParams<'a> {
    pub w_x: ArrayView2<'a, f64>,
    pub w_h: ArrayView2<'a, f64>,
    pub b: ArrayView1<'a, f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ParamViews<'a> {
    pub fwd: DirectionParams<'a>,
    pub bwd: DirectionParams<'a>,
    pub w_out: ArrayView2<'a, f64>,
    pub b_out: ArrayView1<'a, f64>,
}

#[derive(Debug)]
pub struct DirectionParamsMut<'a> {
    pub w_x: ArrayViewMut2<'a, f64>,
    pub w_h: ArrayViewMut2<'a, f64>,
    pub b: ArrayViewMut1<'a, f64>,
}

#[derive(Debug)]
pub struct ParamViewsMut<'a> {
    pub fwd: DirectionParamsMut<'a>,
    pub bwd: DirectionParamsMut<'a>,
    pub w_out: ArrayViewMut2<'a, f64>,
    pub b_out: ArrayViewMut1<'a, f64>,
}

pub(crate) fn split_views<'a>(dims: &ModelDims, data: &'a [f64]) -> ParamViews<'a> {
    let [a, b, c, d, e, f, g, _] = dims.sizes();
    let (gq, q, k) = (dims.gq(), dims.hidden, dims.features);
    let (fwx, rest) = data.split_at(a);
    let (fwh, rest) = rest.split_at(b);
    let (fb, rest) = rest.split_at(c);
    let (bwx, rest) = rest.split_at(d);
    let (bwh, rest) = rest.split_at(e);
    let (bb, rest) = rest.split_at(f);
    let (wo, bo) = rest.split_at(g);
    let m = |s: &'a [f64], r: usize, c: usize| ArrayView2::from_shape((r, c), s).expect("layout");
    ParamViews {
        fwd: DirectionParams { w_x: m(fwx, gq, k), w_h: m(fwh, gq, q), b: ArrayView1::from(fb) },
        bwd: DirectionParams { w_x: m(bwx, gq, k), w_h: m(bwh, gq, q), b: ArrayView1::from(bb) },
        w_out: m(wo, k, 2 * q),
        b_out: ArrayView1::from(bo),
    }
}

pub(crate) fn split_views_mut<'a>(dims: &ModelDims, data: &'a mut [f64]) -> ParamViewsMut<'a> {
    let [a, b, c, d, e, f, g, _] = dims.sizes();
    let (gq, q, k) = (dims.gq(), dims.hidden, dims.features);
    let (fwx, rest) = data.split_at_mut(a);
    let (fwh, rest) = rest.split_at_mut(b);
    let (fb, rest) = rest.split_at_mut(c);
    let (bwx, rest) = rest.split_at_mut(d);
    let (bwh, rest) = rest.split_at_mut(e);
    let (bb, rest) = rest.split_at_mut(f);
    let (wo, bo) = rest.split_at_mut(g);
    fn m(s: &mut [f64], r: usize, c: usize) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((r, c), s).expect("layout")
    }
    ParamViewsMut {
        fwd: DirectionParamsMut { w_x: m(fwx, gq, k), w_h: m(fwh, gq, q), b: ArrayViewMut1::from(fb) },
        bwd: DirectionParamsMut { w_x: m(bwx, gq, k), w_h: m(bwh, gq, q), b: ArrayViewMut1::from(bb) },
        w_out: m(wo, k, 2 * q),
        b_out: ArrayViewMut1::from(bo),
    }
}

/// A bidirectional recurrent estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    dims: ModelDims,
    params: Vec<f64>,
}

impl RnnModel {
    /// All-zero parameters.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self { params: vec![0.0; dims.param_count()], dims })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        let (gq, q, k) = (dims.gq(), dims.hidden, dims.features);
        let mut fill = |view: &mut ArrayViewMut2<f64>, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            view.iter_mut().for_each(|w| *w = rng.random_range(-a..a));
        };
        let mut v = split_views_mut(&dims, &mut model.params);
        fill(&mut v.fwd.w_x, k, gq);
        fill(&mut v.fwd.w_h, q, gq);
        fill(&mut v.bwd.w_x, k, gq);
        fill(&mut v.bwd.w_h, q, gq);
        fill(&mut v.w_out, 2 * q, k);
        Ok(model)
    }

    pub fn from_parts(dims: ModelDims, params: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if params.len() != dims.param_count() {
            return Err(crate::error::shape_err(dims.param_count(), params.len()));
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn kind(&self) -> CellKind {
        self.dims.kind
    }

    pub fn params(&self) -> ParamViews<'_> {
        split_views(&self.dims, &self.params)
    }

    pub fn params_mut(&mut self) -> ParamViewsMut<'_> {
        split_views_mut(&self.dims, &mut self.params)
    }

    pub fn flat(&self) -> &[f64] {
        &self.params
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Same model with the two scan directions exchanged.
    pub fn swapped_directions(&self) -> Self {
        let [a, b, c, ..] = self.dims.sizes();
        let dir = a + b + c;
        let mut params = self.params.clone();
        params[..dir].copy_from_slice(&self.params[dir..2 * dir]);
        params[dir..2 * dir].copy_from_slice(&self.params[..dir]);
        // The output layer sees [h_fwd; h_bwd]; swap its column halves too.
        let q = self.dims.hidden;
        let mut out = Self { dims: self.dims, params };
        let orig = self.params();
        let mut v = out.params_mut();
        for r in 0..orig.w_out.nrows() {
            for j in 0..q {
                v.w_out[[r, j]] = orig.w_out[[r, q + j]];
                v.w_out[[r, q + j]] = orig.w_out[[r, j]];
            }
        }
        out
    }

    /// Hash of the parameter bits, used to tie activation caches to weights.
    pub(crate) fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            h ^= p.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(5);
        }
        h ^ self.params.len() as u64
    }
}

/// Gradient buffer with the same layout as [`RnnModel`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    dims: ModelDims,
    data: Vec<f64>,
}

impl Gradients {
    pub fn zeros(dims: ModelDims) -> Self {
        Self { data: vec![0.0; dims.param_count()], dims }
    }

    pub fn views(&self) -> ParamViews<'_> {
        split_views(&self.dims, &self.data)
    }

    pub(crate) fn views_mut(&mut self) -> ParamViewsMut<'_> {
        split_views_mut(&self.dims, &mut self.data)
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|g| *g *= s);
    }
}
