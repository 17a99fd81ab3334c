//! Dataset generation, MSE training with Adam, gradient verification.

mod backward;
mod dataset;

use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use backward::backward;
pub use dataset::{
    generate_dataset, read_dataset, read_dataset_from, write_dataset, write_dataset_to, Dataset, DatasetMeta,
    DatasetSpec, DATASET_MAGIC, DATASET_VERSION,
};

use crate::error::{shape_err, Error, Result};
use crate::rnn::forward::forward_time_major;
use crate::rnn::{Gradients, ModelDims, RnnModel};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub train_snr_db: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Optional max-norm gradient clip.
    pub clip_norm: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 128,
            train_samples: 16000,
            test_samples: 2000,
            train_snr_db: 40.0,
            adam: AdamConfig::default(),
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_samples == 0 || self.test_samples == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        self.validate_optimizer()
    }

    /// Checks only the fields [`train`] uses.
    pub fn validate_optimizer(&self) -> Result<()> {
        let a = &self.adam;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if self.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// Mean over all entries of the squared difference.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(shape_err(format!("{:?}", target.dim()), format!("{:?}", pred.dim())));
    }
    let n = pred.len().max(1) as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
}

fn mse_grad(pred: &Array2<f64>, target: &Array2<f64>) -> Array2<f64> {
    let scale = 2.0 / pred.len() as f64;
    (pred - target) * scale
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamMoments {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update; increments `moments.t` first.
pub fn adam_step(weights: &mut [f64], grads: &[f64], moments: &mut AdamMoments, hyper: &AdamConfig) -> Result<()> {
    let n = weights.len();
    if grads.len() != n || moments.m.len() != n || moments.v.len() != n {
        return Err(shape_err(n, grads.len()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Config(format!("non-finite gradient at parameter {i}: {}", grads[i])));
    }
    moments.t += 1;
    let t = moments.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (((w, &g), m), v) in weights.iter_mut().zip(grads).zip(&mut moments.m).zip(&mut moments.v) {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        *w -= hyper.lr * (*m / bc1) / ((*v / bc2).sqrt() + hyper.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss seen during the epoch.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest validation MSE (training MSE without a
    /// validation set).
    pub model: RnnModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Writes `epoch,train_mse,val_mse` rows.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut w: W) -> Result<()> {
    writeln!(w, "epoch,train_mse,val_mse")?;
    for r in history {
        match r.val_mse {
            Some(v) => writeln!(w, "{},{},{}", r.epoch, r.train_mse, v)?,
            None => writeln!(w, "{},{},", r.epoch, r.train_mse)?,
        }
    }
    Ok(())
}

fn check_compatible(dims: &ModelDims, ds: &Dataset) -> Result<()> {
    let m = ds.meta();
    if m.features() != dims.features || m.frame_len != dims.frame_len {
        return Err(shape_err(
            format!("features {} x frame {}", dims.features, dims.frame_len),
            format!("features {} x frame {}", m.features(), m.frame_len),
        ));
    }
    Ok(())
}

fn batch_tensors(ds: &Dataset, idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
    let rows = idx.len() * ds.meta().frame_len;
    let f = ds.meta().features();
    let mut x = Array2::zeros((rows, f));
    let mut y = Array2::zeros((rows, f));
    ds.fill_batch(idx, x.view_mut(), y.view_mut());
    (x, y)
}

/// Mean squared error of `model` over a whole dataset.
pub fn dataset_mse(model: &RnnModel, ds: &Dataset, batch_size: usize) -> Result<f64> {
    check_compatible(model.dims(), ds)?;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = batch_tensors(ds, chunk);
        let acts = forward_time_major(model, x, chunk.len())?;
        total += mse_loss(&acts.outputs, &y)? * chunk.len() as f64;
    }
    Ok(total / ds.len() as f64)
}

/// Loss and gradients on one minibatch.
pub fn batch_gradients(model: &RnnModel, ds: &Dataset, idx: &[usize]) -> Result<(f64, Gradients)> {
    let (x, y) = batch_tensors(ds, idx);
    let acts = forward_time_major(model, x, idx.len())?;
    let loss = mse_loss(&acts.outputs, &y)?;
    let grads = backward(model, &acts, &mse_grad(&acts.outputs, &y))?;
    Ok((loss, grads))
}

pub fn train(model_init: RnnModel, train_set: &Dataset, val_set: Option<&Dataset>, cfg: &TrainingConfig) -> Result<TrainOutcome> {
    train_with_progress(model_init, train_set, val_set, cfg, |_| {})
}

/// Minibatch Adam on the MSE. Shuffling is driven by `cfg.seed`; on a
/// non-finite loss training stops with [`Error::Diverged`].
pub fn train_with_progress(
    model_init: RnnModel,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainingConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate_optimizer()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    check_compatible(model_init.dims(), train_set)?;
    if let Some(v) = val_set {
        check_compatible(model_init.dims(), v)?;
    }

    let mut model = model_init;
    let mut moments = AdamMoments::new(model.flat().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, RnnModel)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, mut grads) = batch_gradients(&model, train_set, chunk)?;
            if !loss.is_finite() || !grads.is_finite() {
                history.push(EpochRecord { epoch, train_mse: f64::NAN, val_mse: None });
                return Err(Error::Diverged { epoch, history });
            }
            if let Some(c) = cfg.clip_norm {
                let n = grads.norm();
                if n > c {
                    grads.scale(c / n);
                }
            }
            adam_step(model.flat_mut(), grads.flat(), &mut moments, &cfg.adam)?;
            sum += loss * chunk.len() as f64;
        }
        let train_mse = sum / train_set.len() as f64;
        let val_mse = val_set.map(|v| dataset_mse(&model, v, cfg.batch_size)).transpose()?;
        let record = EpochRecord { epoch, train_mse, val_mse };
        history.push(record);
        progress(&record);
        let score = val_mse.unwrap_or(train_mse);
        if !score.is_finite() {
            return Err(Error::Diverged { epoch, history });
        }
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, history, best_epoch })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index where the maximum was reached.
    pub worst_param: usize,
    pub params: usize,
}

/// Compares [`backward`] with central finite differences (step 1e-6) on a
/// random model, a random batch of two sequences and a random target. One
/// input column is zeroed to exercise the skipped-input path.
///
/// The loss difference is evaluated as
/// `sum((p+ - p-) * (p+ + p- - 2t)) / N`, which equals `L(w+h) - L(w-h)`
/// exactly but cancels the unchanged output entries before rounding.
pub fn grad_check(dims: &ModelDims, seed: u64) -> Result<GradCheckReport> {
    grad_check_with_step(dims, seed, 1e-6)
}

pub(crate) fn grad_check_with_step(dims: &ModelDims, seed: u64, h: f64) -> Result<GradCheckReport> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = RnnModel::init(*dims, &mut rng)?;
    model.flat_mut().iter_mut().for_each(|w| *w += rng.random_range(-0.2..0.2));
    let batch = 2;
    let rows = batch * dims.frame_len;
    let mut x = Array2::from_shape_fn((rows, dims.features), |_| rng.random_range(-1.0..1.0));
    if dims.frame_len > 2 {
        let t = dims.frame_len / 2;
        x.slice_mut(ndarray::s![t * batch..(t + 1) * batch, ..]).fill(0.0);
    }
    let y = Array2::from_shape_fn((rows, dims.features), |_| rng.random_range(-1.0..1.0));

    let outputs = |m: &RnnModel| -> Result<Array2<f64>> { Ok(forward_time_major(m, x.clone(), batch)?.outputs) };
    let acts = forward_time_major(&model, x.clone(), batch)?;
    let analytic = backward(&model, &acts, &mse_grad(&acts.outputs, &y))?;

    let n = y.len() as f64;
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: 0, params: model.flat().len() };
    for i in 0..model.flat().len() {
        let w0 = model.flat()[i];
        model.flat_mut()[i] = w0 + h;
        let up = outputs(&model)?;
        model.flat_mut()[i] = w0 - h;
        let down = outputs(&model)?;
        model.flat_mut()[i] = w0;
        let diff: f64 = up.iter().zip(&down).zip(&y).map(|((u, d), t)| (u - d) * (u + d - 2.0 * t)).sum();
        let numeric = diff / n / (2.0 * h);
        let a = analytic.flat()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::{forward_batch, Activation, CellKind};

    #[test]
    fn defaults_are_the_reference_recipe() {
        let c = TrainingConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.train_samples, c.test_samples), (500, 128, 16000, 2000));
        assert_eq!(c.train_snr_db, 40.0);
        assert_eq!(c.adam, AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 });
        assert!(c.clip_norm.is_none());
        c.validate().unwrap();
    }

    #[test]
    fn mse_examples() {
        let a = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert!((mse_loss(&(&a + 1.0), &a).unwrap() - 1.0).abs() < 1e-15);
        let b = Array2::from_shape_fn((4, 3), |(i, j)| ((i + 2 * j) as f64).sin());
        let mut naive = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                naive += (a[[i, j]] - b[[i, j]]).powi(2);
            }
        }
        assert!((mse_loss(&a, &b).unwrap() - naive / 12.0).abs() < 1e-15);
        assert!(mse_loss(&a, &Array2::zeros((3, 4))).is_err());
    }

    #[test]
    fn adam_zero_gradient_and_fixed_point() {
        let hyper = AdamConfig::default();
        let mut w = vec![0.5, -1.0];
        let mut m = AdamMoments::new(2);
        m.m = vec![0.1, 0.2];
        m.v = vec![0.3, 0.4];
        let mut w0 = vec![0.0; 2];
        let mut zero = AdamMoments::new(2);
        adam_step(&mut w0, &[0.0, 0.0], &mut zero, &hyper).unwrap();
        assert_eq!(w0, vec![0.0, 0.0]);
        adam_step(&mut w, &[0.0, 0.0], &mut m, &hyper).unwrap();
        assert!((m.m[0] - 0.09).abs() < 1e-15 && (m.v[1] - 0.4 * 0.999).abs() < 1e-15);

        let mut w = vec![0.0];
        let mut m = AdamMoments::new(1);
        for _ in 0..2000 {
            let before = w[0];
            adam_step(&mut w, &[0.37], &mut m, &hyper).unwrap();
            let step = before - w[0];
            assert!((step - hyper.lr).abs() < 1e-10);
        }
        assert!(adam_step(&mut w, &[f64::NAN], &mut m, &hyper).is_err());
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let dims = ModelDims::new(CellKind::Gru, 3, 2, 4);
        let mut m = RnnModel::init(dims, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Array2::from_elem((4, 4), 0.5);
        let acts = forward_batch(&m, &[x.view()]).unwrap();
        let g = Array2::ones(acts.outputs().dim());
        assert!(backward(&m, &acts, &g).is_ok());
        m.flat_mut()[0] += 1.0;
        assert!(matches!(backward(&m, &acts, &g), Err(Error::StaleActivations)));
    }

    #[test]
    fn zero_loss_gradient_and_bias_sum() {
        let dims = ModelDims::new(CellKind::Lstm, 3, 2, 4);
        let m = RnnModel::init(dims, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = Array2::from_shape_fn((4, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let acts = forward_batch(&m, &[x.view(), x.view()]).unwrap();
        let zero = backward(&m, &acts, &Array2::zeros(acts.outputs().dim())).unwrap();
        assert!(zero.flat().iter().all(|g| *g == 0.0));
        let dy = Array2::from_shape_fn(acts.outputs().dim(), |(r, c)| ((r * 7 + c) as f64).cos());
        let g = backward(&m, &acts, &dy).unwrap();
        for f in 0..4 {
            let want: f64 = dy.column(f).sum();
            assert!((g.views().b_out[f] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_differences_all_variants() {
        // Larger step: keeps roundoff far below any real indexing or
        // chain-rule mistake, which shows up as O(1) relative error.
        for kind in CellKind::ALL {
            for act in [Activation::Relu, Activation::Tanh] {
                for relu_out in [false, true] {
                    for seed in 0..3 {
                        let mut dims = ModelDims::new(kind, 4, 3, 5).with_activation(act);
                        dims.output_relu = relu_out;
                        let r = grad_check_with_step(&dims, seed, 1e-4).unwrap();
                        assert!(r.max_rel_error < 1e-4, "{kind:?} {act:?} {relu_out} {seed}: {r:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn history_csv_format() {
        let h = [
            EpochRecord { epoch: 1, train_mse: 0.5, val_mse: Some(0.25) },
            EpochRecord { epoch: 2, train_mse: 0.125, val_mse: None },
        ];
        let mut out = Vec::new();
        write_history_csv(&h, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,train_mse,val_mse\n1,0.5,0.25\n2,0.125,\n");
    }
}
