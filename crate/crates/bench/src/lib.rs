//! Shared fixtures for the benchmarks.

use dsce_core::channel::{ChannelProfile, Scenario};
use dsce_core::link::LinkConfig;
use dsce_core::modem::{Modulation, PilotConfig};
use dsce_core::rnn::{CellKind, ModelDims, RnnModel};
use dsce_core::training::{generate_dataset, Dataset, DatasetSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 802.11p link in the very high mobility scenario.
pub fn very_high_link(scheme: Modulation) -> LinkConfig {
    let s = Scenario::VeryHigh;
    let profile = ChannelProfile::default().with_doppler(s.doppler_hz());
    let pilots = PilotConfig::new(profile.k_on(), 100, s.num_pilots()).expect("valid layout");
    LinkConfig::new(profile, pilots, scheme).expect("matching sizes")
}

pub fn dataset(frames: usize) -> Dataset {
    let spec = DatasetSpec { link: very_high_link(Modulation::Qam16), snr_db: 40.0, seed: 1, first_stream: 0 };
    generate_dataset(&spec, frames).expect("valid spec")
}

/// Randomly initialized full-size model.
pub fn model(kind: CellKind, hidden: usize) -> RnnModel {
    RnnModel::init(ModelDims::new(kind, hidden, 52, 100), &mut ChaCha8Rng::seed_from_u64(2)).expect("valid dims")
}
