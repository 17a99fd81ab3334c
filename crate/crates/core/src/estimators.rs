//! Classical pilot-symbol channel estimation and the recurrent network's
//! input assembly.
//!
//! * SLS: per-subcarrier division by the known pilot.
//! * ALS: SLS projected onto the span of the first `L` DFT columns of the
//!   active subcarriers, i.e. least-squares fitting of an `L`-tap impulse
//!   response followed by DFT interpolation back to all subcarriers.
//! * WI: data symbols as MMSE-weighted sums of the bounding pilot estimates
//!   under a Jakes time-correlation model.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::subcarrier_dft;
use crate::error::{shape_err, Error, Result};
use crate::modem::PilotConfig;
use crate::special::jakes_correlation;

/// Scaled DFT basis of the active subcarriers and its pseudo-inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct DftBasis {
    f_on: Array2<Complex64>,
    f_pinv: Array2<Complex64>,
}

impl DftBasis {
    pub fn new(active_bins: &[i64], fft_size: usize, taps: usize) -> Result<Self> {
        if taps == 0 || taps > active_bins.len() {
            return Err(Error::Config(format!(
                "basis length {taps} must be in 1..={}",
                active_bins.len()
            )));
        }
        let f_on = subcarrier_dft(active_bins, fft_size, taps);
        let f_h = f_on.t().mapv(|v| v.conj());
        let gram = f_h.dot(&f_on);
        let gram = DMatrix::from_fn(taps, taps, |r, c| gram[[r, c]]);
        let inv = gram
            .cholesky()
            .ok_or_else(|| Error::Config("DFT Gram matrix is singular".into()))?
            .inverse();
        let inv = Array2::from_shape_fn((taps, taps), |(r, c)| inv[(r, c)]);
        let f_pinv = inv.dot(&f_h);
        Ok(Self { f_on, f_pinv })
    }

    pub fn f_on(&self) -> &Array2<Complex64> {
        &self.f_on
    }

    pub fn f_pinv(&self) -> &Array2<Complex64> {
        &self.f_pinv
    }

    pub fn k_on(&self) -> usize {
        self.f_on.nrows()
    }

    pub fn taps(&self) -> usize {
        self.f_on.ncols()
    }
}

/// LS estimate at one pilot symbol: `y[k] / p[k]`.
pub fn ls_pilot(y_q: &[Complex64], pilot_values: &[Complex64]) -> Result<Vec<Complex64>> {
    if y_q.len() != pilot_values.len() {
        return Err(shape_err(pilot_values.len(), y_q.len()));
    }
    Ok(y_q.iter().zip(pilot_values).map(|(y, p)| y / p).collect())
}

/// DFT-projected LS estimate `F_on (F_on^+ h_ls)`.
pub fn als_pilot(h_ls: &[Complex64], basis: &DftBasis) -> Result<Vec<Complex64>> {
    if h_ls.len() != basis.k_on() {
        return Err(shape_err(basis.k_on(), h_ls.len()));
    }
    let h = Array1::from(h_ls.to_vec());
    let impulse = basis.f_pinv.dot(&h);
    Ok(basis.f_on.dot(&impulse).to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LsMethod {
    Sls,
    Als,
}

/// Channel estimates at the pilot symbols, one column per pilot.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotEstimates {
    pub h_hat: Array2<Complex64>,
    pub method: LsMethod,
}

/// Runs SLS (or ALS when a basis is given) on every pilot column of `y`.
pub fn estimate_pilots(
    y: &Array2<Complex64>,
    cfg: &PilotConfig,
    basis: Option<&DftBasis>,
) -> Result<PilotEstimates> {
    if y.dim() != (cfg.k_on(), cfg.frame_len()) {
        return Err(shape_err(
            format!("({}, {})", cfg.k_on(), cfg.frame_len()),
            format!("{:?}", y.dim()),
        ));
    }
    let mut h_hat = Array2::zeros((cfg.k_on(), cfg.num_pilots()));
    for (q, &i) in cfg.pilot_indices().iter().enumerate() {
        let col: Vec<Complex64> = y.column(i).to_vec();
        let ls = ls_pilot(&col, cfg.pilot_values())?;
        let est = match basis {
            Some(b) => als_pilot(&ls, b)?,
            None => ls,
        };
        h_hat.column_mut(q).iter_mut().zip(est).for_each(|(d, s)| *d = s);
    }
    let method = if basis.is_some() { LsMethod::Als } else { LsMethod::Sls };
    Ok(PilotEstimates { h_hat, method })
}

/// Real-valued network input: zeros at data symbols, `[Re; Im]` stacking.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorInput {
    /// `2 K_on x I`.
    pub h_in: Array2<f64>,
    /// `true` at pilot symbols.
    pub mask: Vec<bool>,
}

/// `[Re(X); Im(X)]`.
pub fn stack_complex(x: &Array2<Complex64>) -> Array2<f64> {
    let (k, n) = x.dim();
    Array2::from_shape_fn((2 * k, n), |(r, c)| if r < k { x[[r, c]].re } else { x[[r - k, c]].im })
}

/// Inverse of [`stack_complex`].
pub fn unstack_real(x: &Array2<f64>) -> Result<Array2<Complex64>> {
    let (rows, n) = x.dim();
    if rows % 2 != 0 {
        return Err(shape_err("even row count", rows));
    }
    let k = rows / 2;
    Ok(Array2::from_shape_fn((k, n), |(r, c)| Complex64::new(x[[r, c]], x[[r + k, c]])))
}

pub fn assemble_input(estimates: &PilotEstimates, cfg: &PilotConfig) -> Result<EstimatorInput> {
    let (k_on, p) = estimates.h_hat.dim();
    if p != cfg.num_pilots() || k_on != cfg.k_on() {
        return Err(shape_err(
            format!("({}, {})", cfg.k_on(), cfg.num_pilots()),
            format!("({k_on}, {p})"),
        ));
    }
    let mut rho = Array2::<Complex64>::zeros((k_on, cfg.frame_len()));
    for (q, &i) in cfg.pilot_indices().iter().enumerate() {
        if i >= cfg.frame_len() {
            return Err(Error::Config(format!("pilot index {i} out of range")));
        }
        rho.column_mut(i).assign(&estimates.h_hat.column(q));
    }
    Ok(EstimatorInput {
        h_in: stack_complex(&rho),
        mask: (0..cfg.frame_len()).map(|i| cfg.is_pilot(i)).collect(),
    })
}

/// Statistics the WI weights are derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WiParams {
    pub doppler_hz: f64,
    pub symbol_duration: f64,
    /// Noise variance sigma^2 on the pilot estimates.
    pub noise_var: f64,
}

/// MMSE weights `(R_pp + sigma^2 I)^-1 r_pd` for estimating symbol `target`
/// from the pilots at `pilots`.
///
/// Singular systems (static channel, no noise) are solved in the
/// minimum-norm sense.
pub fn wi_weights(pilots: &[usize], target: usize, params: WiParams) -> Vec<f64> {
    let corr = |a: usize, b: usize| {
        jakes_correlation(params.doppler_hz, params.symbol_duration, a as f64 - b as f64)
    };
    let n = pilots.len();
    let r_pp = DMatrix::from_fn(n, n, |r, c| {
        corr(pilots[r], pilots[c]) + if r == c { params.noise_var } else { 0.0 }
    });
    let r_pd = DMatrix::from_fn(n, 1, |r, _| corr(pilots[r], target));
    let inv = r_pp
        .pseudo_inverse(1e-12)
        .expect("non-negative tolerance");
    (inv * r_pd).iter().copied().collect()
}

/// Weighted-interpolation estimate for the whole frame.
///
/// Each data symbol uses the pilots immediately before and after it; symbols
/// past the last pilot use that pilot alone. Pilot columns keep their
/// estimates.
pub fn wi_estimate(
    estimates: &PilotEstimates,
    cfg: &PilotConfig,
    params: WiParams,
) -> Result<Array2<Complex64>> {
    let pilots = cfg.pilot_indices();
    if pilots.is_empty() {
        return Err(Error::Config("WI needs at least one pilot symbol".into()));
    }
    if estimates.h_hat.dim() != (cfg.k_on(), pilots.len()) {
        return Err(shape_err(
            format!("({}, {})", cfg.k_on(), pilots.len()),
            format!("{:?}", estimates.h_hat.dim()),
        ));
    }
    let mut out = Array2::<Complex64>::zeros((cfg.k_on(), cfg.frame_len()));
    for i in 0..cfg.frame_len() {
        let q_hi = pilots.partition_point(|&p| p < i);
        if q_hi < pilots.len() && pilots[q_hi] == i {
            out.column_mut(i).assign(&estimates.h_hat.column(q_hi));
            continue;
        }
        let bounding: Vec<usize> = if q_hi == pilots.len() {
            vec![q_hi - 1]
        } else {
            vec![q_hi - 1, q_hi]
        };
        let positions: Vec<usize> = bounding.iter().map(|&q| pilots[q]).collect();
        let w = wi_weights(&positions, i, params);
        let mut col = out.column_mut(i);
        for (&q, &wq) in bounding.iter().zip(&w) {
            col.zip_mut_with(&estimates.h_hat.column(q), |o, h| *o += h * wq);
        }
    }
    Ok(out)
}

/// Pilot estimates linearly interpolated in time (held after the last pilot).
pub fn linear_interpolate(estimates: &PilotEstimates, cfg: &PilotConfig) -> Result<Array2<Complex64>> {
    let pilots = cfg.pilot_indices();
    if estimates.h_hat.dim() != (cfg.k_on(), pilots.len()) {
        return Err(shape_err(
            format!("({}, {})", cfg.k_on(), pilots.len()),
            format!("{:?}", estimates.h_hat.dim()),
        ));
    }
    let mut out = Array2::<Complex64>::zeros((cfg.k_on(), cfg.frame_len()));
    for i in 0..cfg.frame_len() {
        let q_hi = pilots.partition_point(|&p| p < i);
        if q_hi < pilots.len() && pilots[q_hi] == i {
            out.column_mut(i).assign(&estimates.h_hat.column(q_hi));
        } else if q_hi == pilots.len() {
            out.column_mut(i).assign(&estimates.h_hat.column(q_hi - 1));
        } else {
            let (a, b) = (pilots[q_hi - 1], pilots[q_hi]);
            let t = (i - a) as f64 / (b - a) as f64;
            let mut col = out.column_mut(i);
            col.zip_mut_with(&estimates.h_hat.column(q_hi - 1), |o, h| *o += h * (1.0 - t));
            col.zip_mut_with(&estimates.h_hat.column(q_hi), |o, h| *o += h * t);
        }
    }
    Ok(out)
}

/// `||est - truth||^2 / ||truth||^2`.
pub fn nmse(estimate: &Array2<Complex64>, truth: &Array2<Complex64>) -> f64 {
    let err: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    let pow: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    err / pow
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_gaussian, ieee80211p_active_bins};
    use crate::modem::make_pilot_sequence;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis(l: usize) -> DftBasis {
        DftBasis::new(&ieee80211p_active_bins(), 64, l).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn pseudo_inverse_identity_and_projector() {
        let b = basis(12);
        let eye = b.f_pinv().dot(b.f_on());
        for ((r, cc), v) in eye.indexed_iter() {
            let want = if r == cc { 1.0 } else { 0.0 };
            assert!((v - c(want, 0.0)).norm() < 1e-9);
        }
        let p = b.f_on().dot(b.f_pinv());
        let p2 = p.dot(&p);
        assert!(p.iter().zip(&p2).all(|(a, b)| (a - b).norm() < 1e-9));
        // Hermitian as well, so the projection is orthogonal.
        for ((r, cc), v) in p.indexed_iter() {
            assert!((v - p[[cc, r]].conj()).norm() < 1e-9);
        }
        assert!(DftBasis::new(&ieee80211p_active_bins(), 64, 53).is_err());
    }

    #[test]
    fn ls_examples() {
        let p = make_pilot_sequence(8, 3);
        assert!(ls_pilot(&p, &p).unwrap().iter().all(|h| *h == c(1.0, 0.0)));
        let h: Vec<Complex64> = (0..8).map(|k| c(k as f64, -0.5)).collect();
        let y: Vec<Complex64> = h.iter().zip(&p).map(|(a, b)| a * b).collect();
        assert_eq!(ls_pilot(&y, &p).unwrap(), h);
        assert!(ls_pilot(&y[..3], &p).is_err());
    }

    #[test]
    fn ls_noise_only_error_equals_sigma2() {
        let p = make_pilot_sequence(52, 1);
        let sigma2 = 0.2;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 10_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let y: Vec<Complex64> = p.iter().map(|pk| pk + complex_gaussian(&mut rng, sigma2)).collect();
            let h = ls_pilot(&y, &p).unwrap();
            acc += h.iter().map(|v| (v - 1.0).norm_sqr()).sum::<f64>() / 52.0;
        }
        let mse = acc / trials as f64;
        assert!((mse / sigma2 - 1.0).abs() < 0.03, "{mse}");
    }

    #[test]
    fn als_fixes_subspace_and_is_idempotent() {
        let b = basis(12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Array1::from_shape_fn(12, |_| complex_gaussian(&mut rng, 1.0));
        let h = b.f_on().dot(&g).to_vec();
        let out = als_pilot(&h, &b).unwrap();
        assert!(out.iter().zip(&h).all(|(a, b)| (a - b).norm() < 1e-9));
        let noisy: Vec<Complex64> = (0..52).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let once = als_pilot(&noisy, &b).unwrap();
        let twice = als_pilot(&once, &b).unwrap();
        assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).norm() < 1e-9));
    }

    #[test]
    fn als_white_noise_energy_ratio() {
        // Orthogonal projection onto an L-dim subspace keeps L/K_on of the
        // energy of isotropic noise on average.
        let b = basis(12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut e_in, mut e_out) = (0.0, 0.0);
        for _ in 0..10_000 {
            let v: Vec<Complex64> = (0..52).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
            let p = als_pilot(&v, &b).unwrap();
            e_in += v.iter().map(|x| x.norm_sqr()).sum::<f64>();
            e_out += p.iter().map(|x| x.norm_sqr()).sum::<f64>();
        }
        let ratio = e_out / e_in;
        let rank = 12.0 / 52.0;
        assert!((ratio / rank - 1.0).abs() < 0.05, "{ratio}");
    }

    proptest! {
        #[test]
        fn als_contracts_error(seed in any::<u64>(), noise in 0.0f64..2.0) {
            let b = basis(8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Array1::from_shape_fn(8, |_| complex_gaussian(&mut rng, 1.0));
            let h = b.f_on().dot(&g);
            let noisy: Vec<Complex64> = h.iter().map(|x| x + complex_gaussian(&mut rng, noise)).collect();
            let est = als_pilot(&noisy, &b).unwrap();
            let e_als: f64 = est.iter().zip(&h).map(|(a, b)| (a - b).norm_sqr()).sum();
            let e_ls: f64 = noisy.iter().zip(&h).map(|(a, b)| (a - b).norm_sqr()).sum();
            prop_assert!(e_als <= e_ls + 1e-12);
        }

        #[test]
        fn stack_round_trip(re in proptest::collection::vec(-5.0f64..5.0, 12), im in proptest::collection::vec(-5.0f64..5.0, 12)) {
            let x = Array2::from_shape_fn((3, 4), |(k, i)| c(re[k * 4 + i], im[k * 4 + i]));
            prop_assert_eq!(unstack_real(&stack_complex(&x)).unwrap(), x);
        }
    }

    fn estimates_for(cfg: &PilotConfig, f: impl Fn(usize, usize) -> Complex64) -> PilotEstimates {
        PilotEstimates {
            h_hat: Array2::from_shape_fn((cfg.k_on(), cfg.num_pilots()), |(k, q)| f(k, q)),
            method: LsMethod::Als,
        }
    }

    #[test]
    fn assemble_layout() {
        let cfg = PilotConfig::new(4, 10, 3).unwrap();
        let est = estimates_for(&cfg, |k, q| c(1.0 + k as f64, q as f64 - 0.5));
        let input = assemble_input(&est, &cfg).unwrap();
        assert_eq!(input.h_in.dim(), (8, 10));
        let nonzero: Vec<usize> = (0..10).filter(|&i| input.h_in.column(i).iter().any(|v| *v != 0.0)).collect();
        assert_eq!(nonzero, cfg.pilot_indices());
        let back = unstack_real(&input.h_in).unwrap();
        for (q, &i) in cfg.pilot_indices().iter().enumerate() {
            assert_eq!(back.column(i), est.h_hat.column(q));
        }
        assert_eq!(input.mask.iter().filter(|m| **m).count(), 3);

        let real = estimates_for(&cfg, |k, _| c(k as f64 + 1.0, 0.0));
        let input = assemble_input(&real, &cfg).unwrap();
        assert!(input.h_in.slice(ndarray::s![4.., ..]).iter().all(|v| *v == 0.0));

        let wrong = PilotEstimates { h_hat: Array2::zeros((4, 2)), method: LsMethod::Sls };
        assert!(assemble_input(&wrong, &cfg).is_err());
    }

    #[test]
    fn assemble_all_pilots() {
        let cfg = PilotConfig::new(2, 4, 4).unwrap();
        let est = estimates_for(&cfg, |_, _| c(0.3, 0.1));
        let input = assemble_input(&est, &cfg).unwrap();
        assert!((0..4).all(|i| input.h_in.column(i).iter().any(|v| *v != 0.0)));
    }

    #[test]
    fn wi_static_channel() {
        let params = WiParams { doppler_hz: 0.0, symbol_duration: 8e-6, noise_var: 0.0 };
        let w = wi_weights(&[0, 9], 4, params);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let cfg = PilotConfig::new(3, 10, 2).unwrap();
        let est = estimates_for(&cfg, |k, _| c(k as f64, 1.0));
        let out = wi_estimate(&est, &cfg, params).unwrap();
        for i in 0..10 {
            for k in 0..3 {
                assert!((out[[k, i]] - c(k as f64, 1.0)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn wi_coincident_symbol_selects_pilot() {
        let params = WiParams { doppler_hz: 1000.0, symbol_duration: 8e-6, noise_var: 0.0 };
        let w = wi_weights(&[10, 40], 10, params);
        assert!((w[0] - 1.0).abs() < 1e-9 && w[1].abs() < 1e-9, "{w:?}");
    }

    #[test]
    fn wi_weights_match_grid_search() {
        // Expected MSE of h_d - w0 h0_hat - w1 h1_hat for unit-power Jakes
        // processes and white estimation noise, minimised on a 1e-3 grid.
        let params = WiParams { doppler_hz: 1000.0, symbol_duration: 8e-6, noise_var: 0.1 };
        let (p0, p1, d) = (0usize, 30usize, 11usize);
        let rho = |a: usize, b: usize| crate::special::bessel_j0(2.0 * std::f64::consts::PI * 0.008 * (a as f64 - b as f64));
        let (r0, r1, r01) = (rho(p0, d), rho(p1, d), rho(p0, p1));
        let mse = |w0: f64, w1: f64| {
            1.0 - 2.0 * (w0 * r0 + w1 * r1)
                + w0 * w0 * (1.0 + params.noise_var)
                + w1 * w1 * (1.0 + params.noise_var)
                + 2.0 * w0 * w1 * r01
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for a in -1500..=1500 {
            for b in -1500..=1500 {
                let (w0, w1) = (a as f64 * 1e-3, b as f64 * 1e-3);
                let m = mse(w0, w1);
                if m < best.0 {
                    best = (m, w0, w1);
                }
            }
        }
        let w = wi_weights(&[p0, p1], d, params);
        assert!((w[0] - best.1).abs() < 1e-3 && (w[1] - best.2).abs() < 1e-3, "{w:?} vs {best:?}");
    }

    #[test]
    fn wi_extrapolates_after_last_pilot() {
        let params = WiParams { doppler_hz: 250.0, symbol_duration: 8e-6, noise_var: 0.01 };
        let cfg = PilotConfig::new(2, 6, 1).unwrap();
        let est = estimates_for(&cfg, |_, _| c(1.0, 0.0));
        let out = wi_estimate(&est, &cfg, params).unwrap();
        let w = wi_weights(&[0], 3, params);
        assert!((out[[0, 3]].re - w[0]).abs() < 1e-12);
        assert!(w[0] < 1.0 && w[0] > 0.9);
    }

    #[test]
    fn linear_interpolation() {
        let cfg = PilotConfig::new(1, 5, 2).unwrap();
        let est = estimates_for(&cfg, |_, q| c(q as f64 * 4.0, 0.0));
        let out = linear_interpolate(&est, &cfg).unwrap();
        let got: Vec<f64> = out.row(0).iter().map(|v| v.re).collect();
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }
}
