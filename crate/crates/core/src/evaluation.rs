//! Monte-Carlo BER/NMSE sweeps over SNR for the classical and learned
//! estimators.
//!
//! Frame `f` of a sweep draws its channel, payload and noise from
//! [`stream_rng`]`(seed, first_stream + f)`. Every estimator and every SNR
//! point sees the same channel, payload and normalized noise of that frame,
//! so differences between estimators are paired. Frames are reduced in fixed
//! chunks and merged in order, which makes the totals independent of the
//! rayon pool size.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::NoiseSpec;
use crate::error::{shape_err, Error, Result};
use crate::estimators::{
    assemble_input, estimate_pilots, linear_interpolate, nmse, wi_estimate, DftBasis, WiParams,
};
use crate::link::{add_noise, simulate_frame, stream_rng, LinkConfig};
use crate::modem::{Modulation, PilotConfig};
use crate::rnn::{estimate_channel, RnnModel};
use crate::Complex64;

/// Zero-forcing threshold below which an estimate is treated as an erasure.
pub const ERASURE_THRESHOLD: f64 = 1e-12;

const CHUNK_FRAMES: usize = 64;

/// Estimator names accepted on the command line and printed in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    Perfect,
    SlsInterp,
    AlsWi,
    BiSrnn,
    BiLstm,
    BiGru,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Perfect => "Perfect",
            EstimatorKind::SlsInterp => "SLS-Interp",
            EstimatorKind::AlsWi => "ALS-WI",
            EstimatorKind::BiSrnn => "ALS-Bi-SRNN",
            EstimatorKind::BiLstm => "ALS-Bi-LSTM",
            EstimatorKind::BiGru => "ALS-Bi-GRU",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, EstimatorKind::BiSrnn | EstimatorKind::BiLstm | EstimatorKind::BiGru)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "perfect" => Ok(EstimatorKind::Perfect),
            "sls" | "sls-interp" | "sls_interp" => Ok(EstimatorKind::SlsInterp),
            "wi" | "als-wi" | "als_wi" => Ok(EstimatorKind::AlsWi),
            "srnn" | "bi-srnn" | "bi_srnn" => Ok(EstimatorKind::BiSrnn),
            "lstm" | "bi-lstm" | "bi_lstm" => Ok(EstimatorKind::BiLstm),
            "gru" | "bi-gru" | "bi_gru" => Ok(EstimatorKind::BiGru),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// An estimator ready to run; model-backed variants carry their weights.
#[derive(Debug, Clone)]
pub enum EstimatorChoice {
    Perfect,
    SlsInterp,
    AlsWi,
    Rnn(Box<RnnModel>),
}

impl EstimatorChoice {
    /// Wraps a trained model. All-zero weights are rejected as untrained.
    pub fn rnn(model: RnnModel) -> Result<Self> {
        if model.flat().iter().all(|&w| w == 0.0) {
            return Err(Error::Config("model has all-zero weights (untrained)".into()));
        }
        if model.flat().iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(EstimatorChoice::Rnn(Box::new(model)))
    }

    pub fn kind(&self) -> EstimatorKind {
        match self {
            EstimatorChoice::Perfect => EstimatorKind::Perfect,
            EstimatorChoice::SlsInterp => EstimatorKind::SlsInterp,
            EstimatorChoice::AlsWi => EstimatorKind::AlsWi,
            EstimatorChoice::Rnn(m) => match m.kind() {
                crate::rnn::CellKind::Srnn => EstimatorKind::BiSrnn,
                crate::rnn::CellKind::Lstm => EstimatorKind::BiLstm,
                crate::rnn::CellKind::Gru => EstimatorKind::BiGru,
            },
        }
    }

    pub fn label(&self) -> &'static str {
        self.kind().label()
    }

    fn check_link(&self, link: &LinkConfig) -> Result<()> {
        if let EstimatorChoice::Rnn(m) = self {
            let d = m.dims();
            let want = (2 * link.pilots.k_on(), link.pilots.frame_len());
            if (d.features, d.frame_len) != want {
                return Err(shape_err(
                    format!("model for {want:?} (features, symbols)"),
                    format!("({}, {})", d.features, d.frame_len),
                ));
            }
        }
        Ok(())
    }

    /// Full-frame estimate from the received grid. `truth` is only read by
    /// [`EstimatorChoice::Perfect`].
    pub fn estimate(
        &self,
        y: &Array2<Complex64>,
        truth: &Array2<Complex64>,
        link: &LinkConfig,
        basis: &DftBasis,
        noise: NoiseSpec,
    ) -> Result<Array2<Complex64>> {
        let pilots = &link.pilots;
        match self {
            EstimatorChoice::Perfect => Ok(truth.clone()),
            EstimatorChoice::SlsInterp => linear_interpolate(&estimate_pilots(y, pilots, None)?, pilots),
            EstimatorChoice::AlsWi => {
                let est = estimate_pilots(y, pilots, Some(basis))?;
                let params = WiParams {
                    doppler_hz: link.profile.doppler_hz(),
                    symbol_duration: link.profile.symbol_duration(),
                    noise_var: noise.sigma2,
                };
                wi_estimate(&est, pilots, params)
            }
            EstimatorChoice::Rnn(model) => {
                let est = estimate_pilots(y, pilots, Some(basis))?;
                estimate_channel(model, &assemble_input(&est, pilots)?)
            }
        }
    }
}

/// One-tap zero-forcing on the data symbols followed by hard demapping.
///
/// Bits come out in payload order (data columns left to right, subcarriers
/// top to bottom). Entries with `|h| < 1e-12` are decided from `x = 0`.
pub fn equalize_and_demap(
    y: &Array2<Complex64>,
    h_hat: &Array2<Complex64>,
    scheme: Modulation,
    cfg: &PilotConfig,
) -> Result<Vec<u8>> {
    let dim = (cfg.k_on(), cfg.frame_len());
    if y.dim() != dim || h_hat.dim() != dim {
        return Err(shape_err(format!("{dim:?}"), format!("{:?} and {:?}", y.dim(), h_hat.dim())));
    }
    let mut bits = Vec::with_capacity(cfg.payload_len(scheme));
    for i in cfg.data_indices() {
        for k in 0..cfg.k_on() {
            let h = h_hat[[k, i]];
            let x = if h.norm() < ERASURE_THRESHOLD { Complex64::new(0.0, 0.0) } else { y[[k, i]] / h };
            scheme.demap_into(x, &mut bits);
        }
    }
    Ok(bits)
}

/// Gray QPSK bit error rate over Rayleigh fading with average SNR per bit
/// `gamma_b` (linear).
pub fn rayleigh_qpsk_reference(gamma_b: f64) -> f64 {
    if gamma_b.is_infinite() {
        return 0.0;
    }
    0.5 * (1.0 - (gamma_b / (1.0 + gamma_b)).sqrt())
}

/// Gray QPSK bit error rate over AWGN, `Q(sqrt(2 gamma_b))`.
pub fn awgn_qpsk_reference(gamma_b: f64) -> f64 {
    crate::special::q_function((2.0 * gamma_b).sqrt())
}

/// Per-bit SNR of Gray QPSK at symbol SNR `snr_db` (unit symbol energy).
pub fn qpsk_gamma_b(snr_db: f64) -> f64 {
    0.5 * 10f64.powf(snr_db / 10.0)
}

/// What to simulate.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub link: LinkConfig,
    /// Free-form scenario tag written to the report.
    pub scenario: String,
    pub snr_db: Vec<f64>,
    pub frames: usize,
    pub seed: u64,
    /// Stream index of the first frame; keeps test frames disjoint from
    /// training frames drawn with the same seed.
    pub first_stream: u64,
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("a sweep needs at least one frame".into()));
        }
        if self.snr_db.is_empty() {
            return Err(Error::Config("empty SNR list".into()));
        }
        if self.snr_db.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("SNR list contains NaN".into()));
        }
        Ok(())
    }
}

/// Errors and NMSE of one estimator on one frame at one SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutcome {
    pub errors: u64,
    pub nmse: f64,
}

/// Outcomes of frame `frame`, indexed `[snr][estimator]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub outcomes: Vec<Vec<FrameOutcome>>,
}

/// One row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub frames: u64,
    pub bits_total: u64,
    pub bits_errored: u64,
    pub ber: f64,
    pub nmse: f64,
    /// Standard error of `ber` from the spread of per-frame error counts.
    pub ber_std_err: f64,
    pub nmse_std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    pub estimator: String,
    pub scenario: String,
    pub scheme: Modulation,
    pub frames_simulated: u64,
    pub points: Vec<BerPoint>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Accum {
    frames: u64,
    errors: u64,
    errors_sq: f64,
    nmse: f64,
    nmse_sq: f64,
}

impl Accum {
    fn add(&mut self, o: FrameOutcome) {
        self.frames += 1;
        self.errors += o.errors;
        self.errors_sq += (o.errors as f64).powi(2);
        self.nmse += o.nmse;
        self.nmse_sq += o.nmse * o.nmse;
    }

    fn merge(&mut self, o: &Accum) {
        self.frames += o.frames;
        self.errors += o.errors;
        self.errors_sq += o.errors_sq;
        self.nmse += o.nmse;
        self.nmse_sq += o.nmse_sq;
    }

    fn point(&self, snr_db: f64, bits_per_frame: u64) -> BerPoint {
        let n = self.frames as f64;
        let bits_total = self.frames * bits_per_frame;
        let std_err = |sum: f64, sq: f64| {
            if self.frames < 2 {
                return f64::NAN;
            }
            let mean = sum / n;
            ((sq / n - mean * mean).max(0.0) * n / (n - 1.0) / n).sqrt()
        };
        BerPoint {
            snr_db,
            frames: self.frames,
            bits_total,
            bits_errored: self.errors,
            ber: self.errors as f64 / bits_total as f64,
            nmse: self.nmse / n,
            ber_std_err: std_err(self.errors as f64, self.errors_sq) / bits_per_frame as f64,
            nmse_std_err: std_err(self.nmse, self.nmse_sq),
        }
    }
}

struct Prepared<'a> {
    cfg: &'a SweepConfig,
    estimators: &'a [EstimatorChoice],
    basis: DftBasis,
    noise: Vec<NoiseSpec>,
}

impl<'a> Prepared<'a> {
    fn new(estimators: &'a [EstimatorChoice], cfg: &'a SweepConfig) -> Result<Self> {
        cfg.validate()?;
        if estimators.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        for e in estimators {
            e.check_link(&cfg.link)?;
        }
        let p = &cfg.link.profile;
        let basis = DftBasis::new(p.active_bins(), p.fft_size(), p.channel_length())?;
        let noise = cfg.snr_db.iter().map(|&s| NoiseSpec::from_snr_db(s)).collect();
        Ok(Self { cfg, estimators, basis, noise })
    }

    fn run_frame(&self, f: usize) -> Result<FrameMetrics> {
        let link = &self.cfg.link;
        let mut rng = stream_rng(self.cfg.seed, self.cfg.first_stream + f as u64);
        let sim = simulate_frame(link, &mut rng)?;
        let truth = &sim.channel.h;
        let mut outcomes = Vec::with_capacity(self.noise.len());
        for &noise in &self.noise {
            let y = add_noise(&sim.faded, noise, &mut rng.clone());
            let mut row = Vec::with_capacity(self.estimators.len());
            for est in self.estimators {
                let h_hat = est.estimate(&y, truth, link, &self.basis, noise)?;
                let bits = equalize_and_demap(&y, &h_hat, link.scheme, &link.pilots)?;
                let errors = bits.iter().zip(&sim.frame.payload_bits).filter(|(a, b)| a != b).count() as u64;
                row.push(FrameOutcome { errors, nmse: nmse(&h_hat, truth) });
            }
            outcomes.push(row);
        }
        Ok(FrameMetrics { frame: f, outcomes })
    }
}

/// Per-frame outcomes of several estimators on shared frames, in frame order.
pub fn frame_metrics(estimators: &[EstimatorChoice], cfg: &SweepConfig) -> Result<Vec<FrameMetrics>> {
    let prep = Prepared::new(estimators, cfg)?;
    (0..cfg.frames).into_par_iter().map(|f| prep.run_frame(f)).collect()
}

/// Sweeps several estimators over the same frames; one report each.
pub fn ber_sweep_many(estimators: &[EstimatorChoice], cfg: &SweepConfig) -> Result<Vec<BerReport>> {
    let prep = Prepared::new(estimators, cfg)?;
    let (n_snr, n_est) = (cfg.snr_db.len(), estimators.len());
    let chunks: Vec<Vec<Accum>> = (0..cfg.frames.div_ceil(CHUNK_FRAMES))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Accum::default(); n_snr * n_est];
            for f in c * CHUNK_FRAMES..((c + 1) * CHUNK_FRAMES).min(cfg.frames) {
                let m = prep.run_frame(f)?;
                for (s, row) in m.outcomes.iter().enumerate() {
                    for (e, &o) in row.iter().enumerate() {
                        acc[s * n_est + e].add(o);
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![Accum::default(); n_snr * n_est];
    for chunk in &chunks {
        for (t, a) in total.iter_mut().zip(chunk) {
            t.merge(a);
        }
    }
    let bits_per_frame = cfg.link.pilots.payload_len(cfg.link.scheme) as u64;
    Ok(estimators
        .iter()
        .enumerate()
        .map(|(e, est)| BerReport {
            estimator: est.label().to_string(),
            scenario: cfg.scenario.clone(),
            scheme: cfg.link.scheme,
            frames_simulated: cfg.frames as u64,
            points: cfg
                .snr_db
                .iter()
                .enumerate()
                .map(|(s, &snr)| total[s * n_est + e].point(snr, bits_per_frame))
                .collect(),
        })
        .collect())
}

pub fn ber_sweep(estimator: &EstimatorChoice, cfg: &SweepConfig) -> Result<BerReport> {
    Ok(ber_sweep_many(std::slice::from_ref(estimator), cfg)?.remove(0))
}

pub const CSV_HEADER: &str = "estimator,scenario,scheme,snr_db,frames,bits,errors,ber,nmse";

/// Writes the header and one row per (report, SNR point).
pub fn write_reports_csv<W: Write>(reports: &[BerReport], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        for p in &r.points {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{:e},{:e}",
                r.estimator,
                r.scenario,
                r.scheme.name(),
                p.snr_db,
                p.frames,
                p.bits_total,
                p.bits_errored,
                p.ber,
                p.nmse
            )?;
        }
    }
    Ok(())
}

/// Python/matplotlib script plotting BER against SNR (log y) from the CSV.
pub fn plot_script(csv_file: &str) -> String {
    format!(
        r#"import csv
from collections import defaultdict
import matplotlib.pyplot as plt

curves = defaultdict(list)
with open({csv_file:?}) as f:
    for row in csv.DictReader(f):
        key = f"{{row['estimator']}} ({{row['scenario']}}, {{row['scheme']}})"
        curves[key].append((float(row["snr_db"]), float(row["ber"])))

for key, pts in curves.items():
    pts.sort()
    plt.semilogy([p[0] for p in pts], [max(p[1], 1e-9) for p in pts], marker="o", label=key)
plt.xlabel("SNR [dB]")
plt.ylabel("BER")
plt.grid(True, which="both")
plt.legend()
plt.savefig("ber.png", dpi=150)
"#
    )
}
