//! Run configuration: built-in defaults, then the TOML file, then flags.
//!
//! Every command writes its resolved configuration to
//! `<out>/<command>.config.toml`, which can be fed back with `--config`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dsce_core::channel::{ChannelProfile, Scenario};
use dsce_core::link::LinkConfig;
use dsce_core::modem::{Modulation, PilotConfig};
use dsce_core::rnn::{Activation, CellKind};
use dsce_core::training::TrainingConfig;
use serde::{Deserialize, Serialize};

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub link: LinkSettings,
    pub gen_dataset: GenSettings,
    pub train: TrainSettings,
    pub evaluate: EvalSettings,
    pub complexity: ComplexitySettings,
    pub gradcheck: GradcheckSettings,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSettings {
    pub scenario: Scenario,
    pub scheme: Modulation,
    /// Power-delay profile file; the bundled profile when absent.
    pub profile: Option<PathBuf>,
    pub frame_len: usize,
    /// Overrides the scenario's Doppler frequency.
    pub doppler_hz: Option<f64>,
}

impl Default for LinkSettings {
    fn default() -> Self {
        Self { scenario: Scenario::VeryHigh, scheme: Modulation::Qam16, profile: None, frame_len: 100, doppler_hz: None }
    }
}

impl LinkSettings {
    pub fn build(&self) -> Result<LinkConfig> {
        let profile = match &self.profile {
            Some(p) => ChannelProfile::from_file(p).with_context(|| format!("loading profile {}", p.display()))?,
            None => ChannelProfile::default(),
        };
        let profile = profile.with_doppler(self.doppler_hz.unwrap_or(self.scenario.doppler_hz()));
        let pilots = PilotConfig::new(profile.k_on(), self.frame_len, self.scenario.num_pilots())?;
        Ok(LinkConfig::new(profile, pilots, self.scheme)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSettings {
    pub train_frames: usize,
    pub test_frames: usize,
    pub snr_db: f64,
}

impl Default for GenSettings {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self { train_frames: t.train_samples, test_frames: t.test_samples, snr_db: t.train_snr_db }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    /// Defaults to `<out>/train.bin`.
    pub dataset: Option<PathBuf>,
    /// Defaults to `<out>/test.bin` when that file exists.
    pub validation: Option<PathBuf>,
    pub cell: CellKind,
    pub hidden: usize,
    pub activation: Activation,
    pub output_relu: bool,
    pub optimizer: TrainingConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            dataset: None,
            validation: None,
            cell: CellKind::Gru,
            hidden: 32,
            activation: Activation::Relu,
            output_relu: false,
            optimizer: TrainingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub estimators: Vec<String>,
    /// Weight files for the recurrent estimators, matched by cell kind.
    pub models: Vec<PathBuf>,
    /// `start:step:stop`, a comma list, or a single value.
    pub snr: String,
    pub frames: usize,
    /// Stream index of the first test frame; far above any training split.
    pub first_stream: u64,
    pub plot: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            estimators: vec!["perfect".into(), "sls".into(), "wi".into()],
            models: Vec::new(),
            snr: "0:5:40".into(),
            frames: 2000,
            first_stream: 1 << 32,
            plot: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexitySettings {
    pub k_on: u64,
    pub hidden: u64,
    pub pilots: u64,
    pub frame_len: u64,
}

impl Default for ComplexitySettings {
    fn default() -> Self {
        Self { k_on: 52, hidden: 32, pilots: 3, frame_len: 100 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSettings {
    pub hidden: usize,
    pub k_on: usize,
    pub frame_len: usize,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self { hidden: 4, k_on: 3, frame_len: 5 }
    }
}

/// Parses `start:step:stop` (inclusive), `a,b,c` or a single value.
pub fn parse_snr_list(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    let num = |t: &str| t.trim().parse::<f64>().with_context(|| format!("bad SNR value `{t}`"));
    let list = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, step, b] = parts[..] else { bail!("SNR range must be start:step:stop, got `{s}`") };
        let (a, step, b) = (num(a)?, num(step)?, num(b)?);
        if step <= 0.0 || b < a {
            bail!("SNR range `{s}` is empty or has a non-positive step");
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| a + step * i as f64).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if list.is_empty() || list.iter().any(|v| !v.is_finite()) {
        bail!("SNR list `{s}` must contain finite values");
    }
    Ok(list)
}

/// Writes `value` as `<out>/<command>.config.toml`.
pub fn echo<T: Serialize>(out: &Path, command: &str, value: &T) -> Result<PathBuf> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(format!("{command}.config.toml"));
    std::fs::write(&path, toml::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
