use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;

use super::cell::step_forward;
use super::{DirectionParams, ModelDims, RnnModel};
use crate::error::{shape_err, Error, Result};
use crate::estimators::{unstack_real, EstimatorInput};

/// Per-direction forward cache, rows laid out time-major (`t * B + b`).
#[derive(Debug, Clone)]
pub(crate) struct DirectionCache {
    pub h: Array2<f64>,
    pub gates: Array2<f64>,
    /// LSTM cell state and its activation.
    pub cell: Option<(Array2<f64>, Array2<f64>)>,
}

/// Everything the backward pass needs from one batched forward pass.
#[derive(Debug, Clone)]
pub struct SequenceActivations {
    pub(crate) fingerprint: u64,
    pub(crate) dims: ModelDims,
    pub(crate) batch: usize,
    pub(crate) steps: usize,
    /// `I*B x K_in` inputs.
    pub(crate) x: Array2<f64>,
    /// Whether any sequence has a non-zero input at step t.
    pub(crate) x_active: Vec<bool>,
    pub(crate) fwd: DirectionCache,
    pub(crate) bwd: DirectionCache,
    /// `I*B x K_out` predictions.
    pub(crate) outputs: Array2<f64>,
}

impl SequenceActivations {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Time-major predictions, `I*B x K_out`.
    pub fn outputs(&self) -> &Array2<f64> {
        &self.outputs
    }

    /// Prediction for sequence `b` as `K_out x I`.
    pub fn output_frame(&self, b: usize) -> Array2<f64> {
        let k = self.outputs.ncols();
        Array2::from_shape_fn((k, self.steps), |(f, t)| self.outputs[[t * self.batch + b, f]])
    }

    /// Hidden states of both directions at step `t` for sequence `b`.
    pub fn hidden(&self, t: usize, b: usize) -> (Vec<f64>, Vec<f64>) {
        let r = t * self.batch + b;
        (self.fwd.h.row(r).to_vec(), self.bwd.h.row(r).to_vec())
    }
}

pub(crate) fn rows(a: &Array2<f64>, t: usize, batch: usize) -> ArrayView2<'_, f64> {
    a.slice(s![t * batch..(t + 1) * batch, ..])
}

fn scan(
    dims: &ModelDims,
    p: &DirectionParams<'_>,
    x: &Array2<f64>,
    x_active: &[bool],
    batch: usize,
    reverse: bool,
) -> DirectionCache {
    let steps = x_active.len();
    let q = dims.hidden;
    let gq = p.b.len();
    let lstm = dims.kind == super::CellKind::Lstm;
    let mut h_all = Array2::zeros((steps * batch, q));
    let mut g_all = Array2::zeros((steps * batch, gq));
    let mut cell = lstm.then(|| (Array2::zeros((steps * batch, q)), Array2::zeros((steps * batch, q))));
    let mut h_prev = Array2::<f64>::zeros((batch, q));
    let mut c_prev = Array2::<f64>::zeros((batch, q));
    for s_idx in 0..steps {
        let t = if reverse { steps - 1 - s_idx } else { s_idx };
        let xt = x_active[t].then(|| rows(x, t, batch));
        let out = step_forward(
            dims.kind,
            dims.activation,
            p,
            xt,
            h_prev.view(),
            lstm.then(|| c_prev.view()),
        );
        let range = t * batch..(t + 1) * batch;
        h_all.slice_mut(s![range.clone(), ..]).assign(&out.h);
        g_all.slice_mut(s![range.clone(), ..]).assign(&out.gates);
        if let (Some((c_all, ca_all)), Some((c, ca))) = (cell.as_mut(), out.cell) {
            c_all.slice_mut(s![range.clone(), ..]).assign(&c);
            ca_all.slice_mut(s![range, ..]).assign(&ca);
            c_prev = c;
        }
        h_prev = out.h;
    }
    DirectionCache { h: h_all, gates: g_all, cell }
}

/// Hidden states as seen by the output layer.
pub(crate) fn output_hidden(dims: &ModelDims, h: &Array2<f64>) -> Array2<f64> {
    if dims.output_relu {
        h.mapv(|v| v.max(0.0))
    } else {
        h.clone()
    }
}

/// Batched forward pass over time-major inputs (`I*B x K_in`).
pub(crate) fn forward_time_major(
    model: &RnnModel,
    x: Array2<f64>,
    batch: usize,
) -> Result<SequenceActivations> {
    let dims = *model.dims();
    if batch == 0 || !x.nrows().is_multiple_of(batch) || x.ncols() != dims.features {
        return Err(shape_err(
            format!("I*{batch} x {}", dims.features),
            format!("{:?}", x.dim()),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input"));
    }
    let steps = x.nrows() / batch;
    let x_active: Vec<bool> = (0..steps)
        .map(|t| rows(&x, t, batch).iter().any(|v| *v != 0.0))
        .collect();
    let p = model.params();
    let fwd = scan(&dims, &p.fwd, &x, &x_active, batch, false);
    let bwd = scan(&dims, &p.bwd, &x, &x_active, batch, true);

    let q = dims.hidden;
    let mut outputs = Array2::from_shape_fn((steps * batch, dims.features), |(_, j)| p.b_out[j]);
    let hf = output_hidden(&dims, &fwd.h);
    let hb = output_hidden(&dims, &bwd.h);
    general_mat_mul(1.0, &hf, &p.w_out.slice(s![.., ..q]).t(), 1.0, &mut outputs);
    general_mat_mul(1.0, &hb, &p.w_out.slice(s![.., q..]).t(), 1.0, &mut outputs);

    Ok(SequenceActivations {
        fingerprint: model.fingerprint(),
        dims,
        batch,
        steps,
        x,
        x_active,
        fwd,
        bwd,
        outputs,
    })
}

/// Forward pass over a batch of `K_in x I` frames sharing the same length.
pub fn forward_batch(model: &RnnModel, frames: &[ArrayView2<'_, f64>]) -> Result<SequenceActivations> {
    let first = frames.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let (k, steps) = first.dim();
    if k != model.dims().features {
        return Err(shape_err(model.dims().features, k));
    }
    if frames.iter().any(|f| f.dim() != (k, steps)) {
        return Err(Error::Config("frames in a batch must share one shape".into()));
    }
    let batch = frames.len();
    let x = Array2::from_shape_fn((steps * batch, k), |(r, f)| frames[r % batch][[f, r / batch]]);
    forward_time_major(model, x, batch)
}

/// Full-frame real-stacked estimate (`2 K_on x I`) from the network input.
pub fn birnn_forward(model: &RnnModel, h_in: &Array2<f64>) -> Result<Array2<f64>> {
    let acts = forward_batch(model, &[h_in.view()])?;
    Ok(acts.output_frame(0))
}

/// Complex `K_on x I` channel estimate.
pub fn estimate_channel(model: &RnnModel, input: &EstimatorInput) -> Result<Array2<Complex64>> {
    let dims = model.dims();
    if input.h_in.dim() != (dims.features, dims.frame_len) {
        return Err(shape_err(
            format!("({}, {})", dims.features, dims.frame_len),
            format!("{:?}", input.h_in.dim()),
        ));
    }
    unstack_real(&birnn_forward(model, &input.h_in)?)
}
