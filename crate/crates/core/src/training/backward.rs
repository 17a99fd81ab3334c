//! Backpropagation through time for the bidirectional model.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis, Zip};

use crate::error::{shape_err, Error, Result};
use crate::rnn::cell::{step_backward, StepCache};
use crate::rnn::forward::{output_hidden, rows, DirectionCache};
use crate::rnn::{CellKind, DirectionParams, DirectionParamsMut, Gradients, ModelDims, RnnModel, SequenceActivations};

/// Exact gradients of a scalar loss given `dL/d outputs` (time-major,
/// same shape as [`SequenceActivations::outputs`]).
pub fn backward(model: &RnnModel, acts: &SequenceActivations, loss_grad: &Array2<f64>) -> Result<Gradients> {
    if acts.fingerprint != model.fingerprint() || acts.dims != *model.dims() {
        return Err(Error::StaleActivations);
    }
    if loss_grad.dim() != acts.outputs.dim() {
        return Err(shape_err(format!("{:?}", acts.outputs.dim()), format!("{:?}", loss_grad.dim())));
    }
    let dims = acts.dims;
    let q = dims.hidden;
    let p = model.params();
    let mut grads = Gradients::zeros(dims);
    let mut g = grads.views_mut();

    g.b_out.assign(&loss_grad.sum_axis(Axis(0)));
    let hf = output_hidden(&dims, &acts.fwd.h);
    let hb = output_hidden(&dims, &acts.bwd.h);
    general_mat_mul(1.0, &loss_grad.t(), &hf, 0.0, &mut g.w_out.slice_mut(s![.., ..q]));
    general_mat_mul(1.0, &loss_grad.t(), &hb, 0.0, &mut g.w_out.slice_mut(s![.., q..]));

    for (reverse, cache, w_half) in [(false, &acts.fwd, s![.., ..q]), (true, &acts.bwd, s![.., q..])] {
        let mut dh = loss_grad.dot(&p.w_out.slice(w_half));
        if dims.output_relu {
            Zip::from(&mut dh).and(&cache.h).for_each(|d, &h| {
                if h <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        let (pd, gd) = if reverse { (&p.bwd, &mut g.bwd) } else { (&p.fwd, &mut g.fwd) };
        direction_backward(&dims, pd, gd, acts, cache, &dh, reverse);
    }
    Ok(grads)
}

fn direction_backward(
    dims: &ModelDims,
    p: &DirectionParams<'_>,
    g: &mut DirectionParamsMut<'_>,
    acts: &SequenceActivations,
    cache: &DirectionCache,
    dh_out: &Array2<f64>,
    reverse: bool,
) {
    let (steps, batch, q) = (acts.steps, acts.batch, dims.hidden);
    let lstm = dims.kind == CellKind::Lstm;
    let zeros = Array2::<f64>::zeros((batch, q));
    let mut dh_carry = zeros.clone();
    let mut dc_carry: Option<Array2<f64>> = None;
    // Walk the scan order backwards; `s_idx` is the position in scan order.
    for s_idx in (0..steps).rev() {
        let t = if reverse { steps - 1 - s_idx } else { s_idx };
        let prev = (s_idx > 0).then(|| if reverse { t + 1 } else { t - 1 });
        let h_prev = prev.map_or(zeros.view(), |u| rows(&cache.h, u, batch));
        let c_prev = match (&cache.cell, prev) {
            (Some((c, _)), Some(u)) => Some(rows(c, u, batch)),
            _ if lstm => Some(zeros.view()),
            _ => None,
        };
        let step = StepCache {
            x: acts.x_active[t].then(|| rows(&acts.x, t, batch)),
            h_prev,
            c_prev,
            gates: rows(&cache.gates, t, batch),
            cell_act: cache.cell.as_ref().map(|(_, ca)| rows(ca, t, batch)),
        };
        let dh = &rows(dh_out, t, batch) + &dh_carry;
        let (dhp, dcp) = step_backward(dims.kind, dims.activation, p, g, &step, &dh, dc_carry.as_ref());
        dh_carry = dhp;
        dc_carry = dcp;
    }
}
