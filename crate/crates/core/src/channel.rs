//! Doubly-selective fading channel synthesis and the per-subcarrier
//! received-signal model `Y = H o X + V`.
//!
//! Each delay tap is an independent Rayleigh process with a Jakes
//! (J0-shaped) time autocorrelation, generated with a sum of sinusoids.
//! The channel is held constant over one OFDM symbol.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// IEEE 802.11p numerology: 64-point FFT, 52 active subcarriers, 8 us symbols.
pub const DEFAULT_FFT_SIZE: usize = 64;
pub const DEFAULT_SYMBOL_DURATION: f64 = 8e-6;
pub const DEFAULT_SINUSOIDS: usize = 32;

const DEFAULT_PROFILE: &str = include_str!("../profiles/exponential12.toml");

/// Active subcarriers of the 802.11a/p grid, -26..=-1 and 1..=26.
pub fn ieee80211p_active_bins() -> Vec<i64> {
    (-26..=26).filter(|&k| k != 0).collect()
}

/// `K_on x L` matrix with entries exp(-j 2 pi bin(k) l / K_fft).
pub fn subcarrier_dft(active_bins: &[i64], fft_size: usize, taps: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((active_bins.len(), taps), |(k, l)| {
        let phase = -2.0 * PI * (active_bins[k] * l as i64).rem_euclid(fft_size as i64) as f64
            / fft_size as f64;
        Complex64::from_polar(1.0, phase)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    /// Delay in samples.
    pub delay: usize,
    /// Linear power, normalised over the profile.
    pub power: f64,
}

/// Power-delay profile plus OFDM numerology and Doppler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    taps: Vec<Tap>,
    doppler_hz: f64,
    symbol_duration: f64,
    fft_size: usize,
    active_bins: Vec<i64>,
    sinusoids: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TapEntry {
    delay: usize,
    power: Option<f64>,
    power_db: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    taps: Vec<TapEntry>,
    doppler_hz: Option<f64>,
    symbol_duration: Option<f64>,
    fft_size: Option<usize>,
    active_bins: Option<Vec<i64>>,
    sinusoids: Option<usize>,
}

impl ChannelProfile {
    /// Builds a profile, normalising tap powers to unit sum.
    pub fn new(
        taps: Vec<Tap>,
        doppler_hz: f64,
        symbol_duration: f64,
        fft_size: usize,
        active_bins: Vec<i64>,
        sinusoids: usize,
    ) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Config("profile needs at least one tap".into()));
        }
        if taps.iter().any(|t| !(t.power.is_finite() && t.power > 0.0)) {
            return Err(Error::Config("tap powers must be positive".into()));
        }
        let mut delays: Vec<usize> = taps.iter().map(|t| t.delay).collect();
        delays.sort_unstable();
        if delays.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate tap delay".into()));
        }
        if !(doppler_hz.is_finite() && doppler_hz >= 0.0) {
            return Err(Error::Config("Doppler frequency must be non-negative".into()));
        }
        if !(symbol_duration.is_finite() && symbol_duration > 0.0) {
            return Err(Error::Config("symbol duration must be positive".into()));
        }
        if active_bins.is_empty() || fft_size == 0 {
            return Err(Error::Config("need at least one active subcarrier".into()));
        }
        if sinusoids == 0 {
            return Err(Error::Config("need at least one sinusoid per tap".into()));
        }
        let total: f64 = taps.iter().map(|t| t.power).sum();
        let taps = taps
            .into_iter()
            .map(|t| Tap { delay: t.delay, power: t.power / total })
            .collect();
        let profile = Self {
            taps,
            doppler_hz,
            symbol_duration,
            fft_size,
            active_bins,
            sinusoids,
        };
        if profile.channel_length() > profile.k_on() {
            return Err(Error::Config(format!(
                "channel length {} exceeds {} active subcarriers",
                profile.channel_length(),
                profile.k_on()
            )));
        }
        Ok(profile)
    }

    /// Parses the structured-text profile format (see `profiles/`).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: ProfileFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let taps = raw
            .taps
            .into_iter()
            .map(|t| match (t.power, t.power_db) {
                (Some(p), None) => Ok(Tap { delay: t.delay, power: p }),
                (None, Some(db)) => Ok(Tap { delay: t.delay, power: 10f64.powf(db / 10.0) }),
                _ => Err(Error::Config(format!(
                    "tap at delay {} needs exactly one of `power` or `power_db`",
                    t.delay
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            taps,
            raw.doppler_hz.unwrap_or(0.0),
            raw.symbol_duration.unwrap_or(DEFAULT_SYMBOL_DURATION),
            raw.fft_size.unwrap_or(DEFAULT_FFT_SIZE),
            raw.active_bins.unwrap_or_else(ieee80211p_active_bins),
            raw.sinusoids.unwrap_or(DEFAULT_SINUSOIDS),
        )
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Single tap, frequency-flat Rayleigh fading on the 802.11p grid.
    pub fn flat(doppler_hz: f64) -> Self {
        Self::new(
            vec![Tap { delay: 0, power: 1.0 }],
            doppler_hz,
            DEFAULT_SYMBOL_DURATION,
            DEFAULT_FFT_SIZE,
            ieee80211p_active_bins(),
            DEFAULT_SINUSOIDS,
        )
        .expect("flat profile is valid")
    }

    pub fn with_doppler(mut self, doppler_hz: f64) -> Self {
        self.doppler_hz = doppler_hz;
        self
    }

    pub fn with_active_bins(self, active_bins: Vec<i64>) -> Result<Self> {
        Self::new(
            self.taps,
            self.doppler_hz,
            self.symbol_duration,
            self.fft_size,
            active_bins,
            self.sinusoids,
        )
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    /// L = max delay + 1.
    pub fn channel_length(&self) -> usize {
        self.taps.iter().map(|t| t.delay).max().unwrap_or(0) + 1
    }

    pub fn doppler_hz(&self) -> f64 {
        self.doppler_hz
    }

    pub fn symbol_duration(&self) -> f64 {
        self.symbol_duration
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn active_bins(&self) -> &[i64] {
        &self.active_bins
    }

    pub fn k_on(&self) -> usize {
        self.active_bins.len()
    }

    pub fn sinusoids(&self) -> usize {
        self.sinusoids
    }

    /// Normalised Doppler f_d * T_sym.
    pub fn normalized_doppler(&self) -> f64 {
        self.doppler_hz * self.symbol_duration
    }
}

impl Default for ChannelProfile {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_PROFILE).expect("bundled profile parses")
    }
}

/// One frame's channel: frequency response and the tap processes behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `K_on x I` frequency response.
    pub h: Array2<Complex64>,
    /// `L x I` tap gains (zero rows at delays without a path).
    pub taps: Array2<Complex64>,
}

/// Sum-of-sinusoids Rayleigh process with Jakes spectrum.
///
/// In-phase and quadrature parts use arrival angles spread over a quarter
/// circle with a random common offset, and independent random phases.
#[derive(Debug, Clone)]
pub struct JakesProcess {
    amplitude: f64,
    cos_freqs: Vec<f64>,
    sin_freqs: Vec<f64>,
    cos_phases: Vec<f64>,
    sin_phases: Vec<f64>,
}

impl JakesProcess {
    /// `omega` is the angular Doppler per unit time step (2 pi f_d T_sym).
    pub fn new<R: Rng + ?Sized>(power: f64, omega: f64, sinusoids: usize, rng: &mut R) -> Self {
        let m = sinusoids as f64;
        let theta = rng.random_range(-PI..PI);
        let mut cos_freqs = Vec::with_capacity(sinusoids);
        let mut sin_freqs = Vec::with_capacity(sinusoids);
        let mut cos_phases = Vec::with_capacity(sinusoids);
        let mut sin_phases = Vec::with_capacity(sinusoids);
        for n in 1..=sinusoids {
            let alpha = (2.0 * PI * n as f64 - PI + theta) / (4.0 * m);
            cos_freqs.push(omega * alpha.cos());
            sin_freqs.push(omega * alpha.sin());
            cos_phases.push(rng.random_range(-PI..PI));
            sin_phases.push(rng.random_range(-PI..PI));
        }
        Self {
            amplitude: (power / m).sqrt(),
            cos_freqs,
            sin_freqs,
            cos_phases,
            sin_phases,
        }
    }

    pub fn sample(&self, t: f64) -> Complex64 {
        let re: f64 = self
            .cos_freqs
            .iter()
            .zip(&self.cos_phases)
            .map(|(w, p)| (w * t + p).cos())
            .sum();
        let im: f64 = self
            .sin_freqs
            .iter()
            .zip(&self.sin_phases)
            .map(|(w, p)| (w * t + p).cos())
            .sum();
        Complex64::new(re, im) * self.amplitude
    }
}

/// Draws one frame of `frame_len` symbols through the profile.
pub fn generate_channel<R: Rng + ?Sized>(
    profile: &ChannelProfile,
    frame_len: usize,
    rng: &mut R,
) -> Result<ChannelRealization> {
    if frame_len == 0 {
        return Err(Error::Config("frame length must be positive".into()));
    }
    let l = profile.channel_length();
    if l > profile.k_on() {
        return Err(Error::Config("channel length exceeds active subcarriers".into()));
    }
    let omega = 2.0 * PI * profile.normalized_doppler();
    let mut taps = Array2::<Complex64>::zeros((l, frame_len));
    for tap in &profile.taps {
        let process = JakesProcess::new(tap.power, omega, profile.sinusoids, rng);
        for (i, g) in taps.row_mut(tap.delay).iter_mut().enumerate() {
            *g = process.sample(i as f64);
        }
    }
    let f_on = subcarrier_dft(&profile.active_bins, profile.fft_size, l);
    let h = f_on.dot(&taps);
    Ok(ChannelRealization { h, taps })
}

/// AWGN level for a unit-power signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub sigma2: f64,
}

impl NoiseSpec {
    pub fn from_snr_db(snr_db: f64) -> Self {
        Self { snr_db, sigma2: 10f64.powf(-snr_db / 10.0) }
    }

    /// No noise at all.
    pub fn noiseless() -> Self {
        Self { snr_db: f64::INFINITY, sigma2: 0.0 }
    }
}

/// Circular complex Gaussian sample with variance `sigma2`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, sigma2: f64) -> Complex64 {
    let s = (0.5 * sigma2).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Received grid `Y = H o X + V`.
pub fn apply_channel<R: Rng + ?Sized>(
    symbols: &Array2<Complex64>,
    realization: &ChannelRealization,
    noise: NoiseSpec,
    rng: &mut R,
) -> Result<Array2<Complex64>> {
    if symbols.dim() != realization.h.dim() {
        return Err(shape_err(format!("{:?}", realization.h.dim()), format!("{:?}", symbols.dim())));
    }
    let mut y = &realization.h * symbols;
    // Noise drawn in column-major order so a frame's noise does not depend
    // on the memory layout of the grid.
    for i in 0..y.ncols() {
        for k in 0..y.nrows() {
            let v = complex_gaussian(rng, 1.0);
            y[[k, i]] += v * noise.sigma2.sqrt();
        }
    }
    Ok(y)
}

/// Vehicular mobility scenarios and their frame designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Low,
    High,
    VeryHigh,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Low, Scenario::High, Scenario::VeryHigh];

    /// (speed in km/h, Doppler in Hz, pilot symbols per frame).
    pub fn parameters(self) -> (f64, f64, usize) {
        match self {
            Scenario::Low => (45.0, 250.0, 1),
            Scenario::High => (100.0, 500.0, 2),
            Scenario::VeryHigh => (200.0, 1000.0, 3),
        }
    }

    pub fn velocity_kmph(self) -> f64 {
        self.parameters().0
    }

    pub fn doppler_hz(self) -> f64 {
        self.parameters().1
    }

    pub fn num_pilots(self) -> usize {
        self.parameters().2
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Low => "low",
            Scenario::High => "high",
            Scenario::VeryHigh => "very_high",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "low" => Ok(Scenario::Low),
            "high" => Ok(Scenario::High),
            "very_high" | "veryhigh" => Ok(Scenario::VeryHigh),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}
