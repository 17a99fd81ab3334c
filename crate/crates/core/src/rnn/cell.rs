//! Batched single-step kernels for the three cell kinds.
//!
//! Batches are row-major `B x features`. Cached gate values are stored
//! post-activation; derivatives are recovered from them.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::{Activation, CellKind, DirectionParams, DirectionParamsMut};
use crate::error::{shape_err, Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) struct StepOutput {
    pub h: Array2<f64>,
    pub gates: Array2<f64>,
    /// LSTM only: cell state and its tanh.
    pub cell: Option<(Array2<f64>, Array2<f64>)>,
}

pub(crate) fn step_forward(
    kind: CellKind,
    act: Activation,
    p: &DirectionParams<'_>,
    x: Option<ArrayView2<'_, f64>>,
    h_prev: ArrayView2<'_, f64>,
    c_prev: Option<ArrayView2<'_, f64>>,
) -> StepOutput {
    let (batch, q) = h_prev.dim();
    let gq = p.b.len();
    let mut pre = Array2::from_shape_fn((batch, gq), |(_, j)| p.b[j]);
    if let Some(x) = x {
        general_mat_mul(1.0, &x, &p.w_x.t(), 1.0, &mut pre);
    }
    match kind {
        CellKind::Srnn => {
            general_mat_mul(1.0, &h_prev, &p.w_h.t(), 1.0, &mut pre);
            pre.mapv_inplace(|v| act.apply(v));
            StepOutput { h: pre.clone(), gates: pre, cell: None }
        }
        CellKind::Gru => {
            {
                let mut zr = pre.slice_mut(s![.., ..2 * q]);
                general_mat_mul(1.0, &h_prev, &p.w_h.slice(s![..2 * q, ..]).t(), 1.0, &mut zr);
                zr.mapv_inplace(sigmoid);
            }
            let rh = &h_prev * &pre.slice(s![.., q..2 * q]);
            {
                let mut c = pre.slice_mut(s![.., 2 * q..]);
                general_mat_mul(1.0, &rh, &p.w_h.slice(s![2 * q.., ..]).t(), 1.0, &mut c);
                c.mapv_inplace(|v| act.apply(v));
            }
            let mut h = Array2::zeros((batch, q));
            Zip::from(&mut h)
                .and(&h_prev)
                .and(pre.slice(s![.., ..q]))
                .and(pre.slice(s![.., 2 * q..]))
                .for_each(|h, &hp, &z, &c| *h = (1.0 - z) * hp + z * c);
            StepOutput { h, gates: pre, cell: None }
        }
        CellKind::Lstm => {
            general_mat_mul(1.0, &h_prev, &p.w_h.t(), 1.0, &mut pre);
            for (j, mut col) in pre.axis_iter_mut(Axis(1)).enumerate() {
                if (2 * q..3 * q).contains(&j) {
                    col.mapv_inplace(|v| act.apply(v));
                } else {
                    col.mapv_inplace(sigmoid);
                }
            }
            let mut c = Array2::zeros((batch, q));
            let mut ca = Array2::zeros((batch, q));
            let mut h = Array2::zeros((batch, q));
            let zero = Array2::zeros((batch, q));
            let c_prev = c_prev.unwrap_or(zero.view());
            Zip::from(&mut c)
                .and(&c_prev)
                .and(pre.slice(s![.., ..q]))
                .and(pre.slice(s![.., q..2 * q]))
                .and(pre.slice(s![.., 2 * q..3 * q]))
                .for_each(|c, &cp, &i, &f, &g| *c = f * cp + i * g);
            Zip::from(&mut ca)
                .and(&mut h)
                .and(&c)
                .and(pre.slice(s![.., 3 * q..]))
                .for_each(|ca, h, &c, &o| {
                    *ca = Activation::Tanh.apply(c);
                    *h = o * *ca;
                });
            StepOutput { h, gates: pre, cell: Some((c, ca)) }
        }
    }
}

pub(crate) struct StepCache<'a> {
    pub x: Option<ArrayView2<'a, f64>>,
    pub h_prev: ArrayView2<'a, f64>,
    pub c_prev: Option<ArrayView2<'a, f64>>,
    pub gates: ArrayView2<'a, f64>,
    pub cell_act: Option<ArrayView2<'a, f64>>,
}

/// Backpropagates one step. Accumulates parameter gradients into `g` and
/// returns the gradients w.r.t. the previous hidden (and cell) state.
pub(crate) fn step_backward(
    kind: CellKind,
    act: Activation,
    p: &DirectionParams<'_>,
    g: &mut DirectionParamsMut<'_>,
    cache: &StepCache<'_>,
    dh: &Array2<f64>,
    dc_next: Option<&Array2<f64>>,
) -> (Array2<f64>, Option<Array2<f64>>) {
    let (batch, q) = cache.h_prev.dim();
    let gq = p.b.len();
    let gates = &cache.gates;
    let mut dpre = Array2::<f64>::zeros((batch, gq));
    let mut dh_prev = Array2::<f64>::zeros((batch, q));
    let mut dc_prev = None;

    match kind {
        CellKind::Srnn => {
            Zip::from(&mut dpre)
                .and(dh)
                .and(gates)
                .for_each(|d, &dh, &h| *d = dh * act.grad_from_output(h));
            general_mat_mul(1.0, &dpre, &p.w_h, 0.0, &mut dh_prev);
            general_mat_mul(1.0, &dpre.t(), &cache.h_prev, 1.0, &mut g.w_h);
        }
        CellKind::Gru => {
            let z = gates.slice(s![.., ..q]);
            let r = gates.slice(s![.., q..2 * q]);
            let c = gates.slice(s![.., 2 * q..]);
            {
                let (mut dz, rest) = dpre.view_mut().split_at(Axis(1), q);
                let (_, mut dcand) = rest.split_at(Axis(1), q);
                Zip::from(&mut dz)
                    .and(&mut dh_prev)
                    .and(dh)
                    .and(&cache.h_prev)
                    .and(&z)
                    .and(&c)
                    .for_each(|dz, dhp, &dh, &hp, &z, &c| {
                        *dz = dh * (c - hp) * z * (1.0 - z);
                        *dhp = dh * (1.0 - z);
                    });
                Zip::from(&mut dcand)
                    .and(dh)
                    .and(&z)
                    .and(&c)
                    .for_each(|d, &dh, &z, &c| *d = dh * z * act.grad_from_output(c));
            }
            let rh = &cache.h_prev * &r;
            let mut d_rh = Array2::<f64>::zeros((batch, q));
            let w_hc = p.w_h.slice(s![2 * q.., ..]);
            general_mat_mul(1.0, &dpre.slice(s![.., 2 * q..]), &w_hc, 0.0, &mut d_rh);
            {
                let mut dr = dpre.slice_mut(s![.., q..2 * q]);
                Zip::from(&mut dr)
                    .and(&mut dh_prev)
                    .and(&d_rh)
                    .and(&cache.h_prev)
                    .and(&r)
                    .for_each(|dr, dhp, &drh, &hp, &r| {
                        *dr = drh * hp * r * (1.0 - r);
                        *dhp += drh * r;
                    });
            }
            let dzr = dpre.slice(s![.., ..2 * q]);
            general_mat_mul(1.0, &dzr, &p.w_h.slice(s![..2 * q, ..]), 1.0, &mut dh_prev);
            general_mat_mul(1.0, &dzr.t(), &cache.h_prev, 1.0, &mut g.w_h.slice_mut(s![..2 * q, ..]));
            general_mat_mul(
                1.0,
                &dpre.slice(s![.., 2 * q..]).t(),
                &rh,
                1.0,
                &mut g.w_h.slice_mut(s![2 * q.., ..]),
            );
        }
        CellKind::Lstm => {
            let i = gates.slice(s![.., ..q]);
            let f = gates.slice(s![.., q..2 * q]);
            let gg = gates.slice(s![.., 2 * q..3 * q]);
            let o = gates.slice(s![.., 3 * q..]);
            let ca = cache.cell_act.expect("LSTM cache has cell activations");
            let zero = Array2::zeros((batch, q));
            let c_prev = cache.c_prev.unwrap_or(zero.view());
            let mut dc = match dc_next {
                Some(d) => d.clone(),
                None => Array2::zeros((batch, q)),
            };
            Zip::from(&mut dc)
                .and(dh)
                .and(&o)
                .and(&ca)
                .for_each(|dc, &dh, &o, &ca| *dc += dh * o * Activation::Tanh.grad_from_output(ca));
            let (mut di, rest) = dpre.view_mut().split_at(Axis(1), q);
            let (mut df, rest) = rest.split_at(Axis(1), q);
            let (mut dg, mut d_o) = rest.split_at(Axis(1), q);
            Zip::from(&mut di)
                .and(&mut df)
                .and(&dc)
                .and(&i)
                .and(&f)
                .and(&gg)
                .for_each(|di, df, &dc, &i, &f, &g| {
                    *di = dc * g * i * (1.0 - i);
                    *df = dc * f * (1.0 - f);
                });
            Zip::from(&mut df).and(&c_prev).for_each(|df, &cp| *df *= cp);
            Zip::from(&mut dg)
                .and(&mut d_o)
                .and(&dc)
                .and(dh)
                .and(&i)
                .and(&gg)
                .for_each(|dg, d_o, &dc, &dh, &i, &g| {
                    *dg = dc * i * act.grad_from_output(g);
                    *d_o = dh;
                });
            Zip::from(&mut d_o)
                .and(&o)
                .and(&ca)
                .for_each(|d, &o, &ca| *d *= ca * o * (1.0 - o));
            dc_prev = Some(&dc * &f);
            general_mat_mul(1.0, &dpre, &p.w_h, 0.0, &mut dh_prev);
            general_mat_mul(1.0, &dpre.t(), &cache.h_prev, 1.0, &mut g.w_h);
        }
    }

    if let Some(x) = cache.x {
        general_mat_mul(1.0, &dpre.t(), &x, 1.0, &mut g.w_x);
    }
    g.b += &dpre.sum_axis(Axis(0));
    (dh_prev, dc_prev)
}

/// Recurrent state of one direction for a single sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    /// LSTM cell state; empty for the other kinds.
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        let c = if kind == CellKind::Lstm { vec![0.0; hidden] } else { Vec::new() };
        Self { h: vec![0.0; hidden], c }
    }
}

/// One recurrence step for a single input vector.
pub fn cell_step(
    kind: CellKind,
    activation: Activation,
    params: &DirectionParams<'_>,
    x: &[f64],
    state: &CellState,
) -> Result<CellState> {
    let (gq, k) = params.w_x.dim();
    let q = params.w_h.ncols();
    if gq != kind.gates() * q || x.len() != k || state.h.len() != q {
        return Err(shape_err(
            format!("x: {k}, h: {q}, gates: {}", kind.gates()),
            format!("x: {}, h: {}, rows: {gq}", x.len(), state.h.len()),
        ));
    }
    if kind == CellKind::Lstm && state.c.len() != q {
        return Err(shape_err(q, state.c.len()));
    }
    if x.iter().chain(&state.h).chain(&state.c).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cell input"));
    }
    let xv = ArrayView2::from_shape((1, k), x).expect("row");
    let hv = ArrayView2::from_shape((1, q), &state.h[..]).expect("row");
    let cv = (kind == CellKind::Lstm).then(|| ArrayView2::from_shape((1, q), &state.c[..]).expect("row"));
    let out = step_forward(kind, activation, params, Some(xv), hv, cv);
    Ok(CellState {
        h: out.h.into_iter().collect(),
        c: out.cell.map(|(c, _)| c.into_iter().collect()).unwrap_or_default(),
    })
}
