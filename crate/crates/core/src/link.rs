//! One frame through the transmit chain: payload, pilots, fading, noise.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{complex_gaussian, generate_channel, ChannelProfile, ChannelRealization, NoiseSpec};
use crate::error::{Error, Result};
use crate::modem::{build_frame, random_payload, Frame, Modulation, PilotConfig};
use crate::Complex64;

/// Independent random stream for frame `stream` of a run seeded with `seed`.
///
/// Every frame draws from its own stream, so results do not depend on how
/// frames are distributed over workers.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Static description of the link.
#[derive(Debug, Clone)]
pub struct LinkConfig {
    pub profile: ChannelProfile,
    pub pilots: PilotConfig,
    pub scheme: Modulation,
}

impl LinkConfig {
    pub fn new(profile: ChannelProfile, pilots: PilotConfig, scheme: Modulation) -> Result<Self> {
        if profile.k_on() != pilots.k_on() {
            return Err(Error::Config(format!(
                "profile has {} active subcarriers, pilot layout {}",
                profile.k_on(),
                pilots.k_on()
            )));
        }
        Ok(Self { profile, pilots, scheme })
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedFrame {
    pub frame: Frame,
    pub channel: ChannelRealization,
    /// Noiseless `H o X`; noise is added separately so one realization can
    /// be reused across SNR points.
    pub faded: Array2<Complex64>,
}

/// Draws channel and payload; the draw order is channel first, then payload.
pub fn simulate_frame<R: Rng + ?Sized>(link: &LinkConfig, rng: &mut R) -> Result<SimulatedFrame> {
    let channel = generate_channel(&link.profile, link.pilots.frame_len(), rng)?;
    let bits = random_payload(rng, link.pilots.payload_len(link.scheme));
    let frame = build_frame(&bits, &link.pilots, link.scheme)?;
    let faded = &channel.h * &frame.symbols;
    Ok(SimulatedFrame { frame, channel, faded })
}

/// Adds circular AWGN to a faded grid, column-major.
pub fn add_noise<R: Rng + ?Sized>(faded: &Array2<Complex64>, noise: NoiseSpec, rng: &mut R) -> Array2<Complex64> {
    let mut y = faded.clone();
    let s = noise.sigma2.sqrt();
    for i in 0..y.ncols() {
        for k in 0..y.nrows() {
            y[[k, i]] += complex_gaussian(rng, 1.0) * s;
        }
    }
    y
}
