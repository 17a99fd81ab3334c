//! Training pairs and their binary container.
//!
//! Inputs are stored as pilot columns only (the network input is zero at
//! data symbols). Both tensors are sample-major, then time, then feature.
//!
//! Container layout (little-endian): magic `DSCEDSET`, `u32` version, `u64`
//! frame count, `u32` K_on, `u32` frame length, `u32` P, P x `u32` pilot
//! indices, `u32` scheme (0 = QPSK, 1 = 16QAM), `f64` SNR dB, `f64` Doppler
//! Hz, `u32` channel taps, `u64` seed, `u64` first stream, then
//! `frames * P * 2K_on` input values and `frames * I * 2K_on` target values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayViewMut2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::NoiseSpec;
use crate::error::{shape_err, Error, Result};
use crate::estimators::{assemble_input, estimate_pilots, stack_complex, DftBasis, EstimatorInput};
use crate::link::{add_noise, simulate_frame, stream_rng, LinkConfig};
use crate::modem::Modulation;

pub const DATASET_MAGIC: [u8; 8] = *b"DSCEDSET";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub frames: usize,
    pub k_on: usize,
    pub frame_len: usize,
    pub pilot_indices: Vec<usize>,
    pub scheme: Modulation,
    pub snr_db: f64,
    pub doppler_hz: f64,
    pub channel_taps: usize,
    pub seed: u64,
    pub first_stream: u64,
}

impl DatasetMeta {
    pub fn features(&self) -> usize {
        2 * self.k_on
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from explicit pairs. Inputs must be zero outside
    /// the pilot columns listed in `meta`.
    pub fn from_pairs(mut meta: DatasetMeta, pairs: &[(EstimatorInput, Array2<f64>)]) -> Result<Self> {
        let (f, len, p) = (meta.features(), meta.frame_len, meta.pilot_indices.len());
        if meta.pilot_indices.iter().any(|&i| i >= len) {
            return Err(Error::Config("pilot index outside the frame".into()));
        }
        let mut inputs: Vec<f64> = Vec::with_capacity(pairs.len() * p * f);
        let mut targets = Vec::with_capacity(pairs.len() * len * f);
        for (input, target) in pairs {
            if input.h_in.dim() != (f, len) || target.dim() != (f, len) {
                return Err(shape_err(
                    format!("({f}, {len})"),
                    format!("{:?} / {:?}", input.h_in.dim(), target.dim()),
                ));
            }
            for t in (0..len).filter(|t| !meta.pilot_indices.contains(t)) {
                if input.h_in.column(t).iter().any(|v| *v != 0.0) {
                    return Err(Error::Config(format!("input column {t} is not a pilot but is non-zero")));
                }
            }
            for &t in &meta.pilot_indices {
                inputs.extend(input.h_in.column(t).iter());
            }
            for t in 0..len {
                targets.extend(target.column(t).iter());
            }
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        meta.frames = pairs.len();
        Ok(Self { meta, inputs, targets })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.meta.frames
    }

    pub fn is_empty(&self) -> bool {
        self.meta.frames == 0
    }

    /// Network input of sample `n` (`2K_on x I`).
    pub fn input(&self, n: usize) -> EstimatorInput {
        let (f, len, p) = (self.meta.features(), self.meta.frame_len, self.meta.pilot_indices.len());
        let mut h_in = Array2::zeros((f, len));
        for (q, &t) in self.meta.pilot_indices.iter().enumerate() {
            let off = (n * p + q) * f;
            h_in.column_mut(t).iter_mut().zip(&self.inputs[off..off + f]).for_each(|(d, s)| *d = *s);
        }
        let mask = (0..len).map(|t| self.meta.pilot_indices.contains(&t)).collect();
        EstimatorInput { h_in, mask }
    }

    /// Real-stacked true channel of sample `n` (`2K_on x I`).
    pub fn target(&self, n: usize) -> Array2<f64> {
        let (f, len) = (self.meta.features(), self.meta.frame_len);
        let off = n * len * f;
        Array2::from_shape_fn((f, len), |(r, t)| self.targets[off + t * f + r])
    }

    /// Fills time-major batch tensors (`I*B x 2K_on`, row `t * B + b`).
    pub(crate) fn fill_batch(&self, idx: &[usize], mut x: ArrayViewMut2<'_, f64>, mut y: ArrayViewMut2<'_, f64>) {
        let (f, len, p) = (self.meta.features(), self.meta.frame_len, self.meta.pilot_indices.len());
        let batch = idx.len();
        x.fill(0.0);
        for (b, &n) in idx.iter().enumerate() {
            for (q, &t) in self.meta.pilot_indices.iter().enumerate() {
                let off = (n * p + q) * f;
                x.row_mut(t * batch + b).iter_mut().zip(&self.inputs[off..off + f]).for_each(|(d, s)| *d = *s);
            }
            for t in 0..len {
                let off = (n * len + t) * f;
                y.row_mut(t * batch + b).iter_mut().zip(&self.targets[off..off + f]).for_each(|(d, s)| *d = *s);
            }
        }
    }
}

/// What to simulate when generating a dataset.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub link: LinkConfig,
    pub snr_db: f64,
    pub seed: u64,
    /// Stream index of the first frame; lets train and test splits share a
    /// seed without overlapping.
    pub first_stream: u64,
}

/// Simulates `n_frames` frames: channel, payload, AWGN, ALS at the pilot
/// symbols. The target is the real-stacked true channel.
pub fn generate_dataset(spec: &DatasetSpec, n_frames: usize) -> Result<Dataset> {
    if n_frames == 0 {
        return Err(Error::Config("a dataset needs at least one frame".into()));
    }
    let link = &spec.link;
    let profile = &link.profile;
    let basis = DftBasis::new(profile.active_bins(), profile.fft_size(), profile.channel_length())?;
    let noise = NoiseSpec::from_snr_db(spec.snr_db);
    let pilots = &link.pilots;
    let (f, len, p) = (2 * profile.k_on(), pilots.frame_len(), pilots.num_pilots());
    // Filled in place, frame by frame, so peak memory stays at the
    // size of the container itself.
    let mut inputs = vec![0.0; n_frames * p * f];
    let mut targets = vec![0.0; n_frames * len * f];
    inputs
        .par_chunks_mut(p * f)
        .zip(targets.par_chunks_mut(len * f))
        .enumerate()
        .try_for_each(|(n, (inp, tgt))| -> Result<()> {
            let mut rng = stream_rng(spec.seed, spec.first_stream + n as u64);
            let sim = simulate_frame(link, &mut rng)?;
            let y = add_noise(&sim.faded, noise, &mut rng);
            let est = estimate_pilots(&y, pilots, Some(&basis))?;
            let h_in = assemble_input(&est, pilots)?.h_in;
            for (q, &t) in pilots.pilot_indices().iter().enumerate() {
                inp[q * f..(q + 1) * f].iter_mut().zip(h_in.column(t)).for_each(|(d, s)| *d = *s);
            }
            let h = stack_complex(&sim.channel.h);
            for t in 0..len {
                tgt[t * f..(t + 1) * f].iter_mut().zip(h.column(t)).for_each(|(d, s)| *d = *s);
            }
            Ok(())
        })?;
    if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dataset"));
    }
    let meta = DatasetMeta {
        frames: n_frames,
        k_on: profile.k_on(),
        frame_len: len,
        pilot_indices: pilots.pilot_indices().to_vec(),
        scheme: link.scheme,
        snr_db: spec.snr_db,
        doppler_hz: profile.doppler_hz(),
        channel_taps: profile.channel_length(),
        seed: spec.seed,
        first_stream: spec.first_stream,
    };
    Ok(Dataset { meta, inputs, targets })
}

fn scheme_code(s: Modulation) -> u32 {
    match s {
        Modulation::Qpsk => 0,
        Modulation::Qam16 => 1,
    }
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(8 * 4096);
    for chunk in values.chunks(4096) {
        buf.clear();
        chunk.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = vec![0u8; 8 * 4096];
    while out.len() < n {
        let take = (n - out.len()).min(4096);
        r.read_exact(&mut buf[..8 * take])?;
        out.extend(buf[..8 * take].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))));
    }
    Ok(out)
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let m = &ds.meta;
    w.write_all(&DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(m.frames as u64).to_le_bytes())?;
    for v in [m.k_on, m.frame_len, m.pilot_indices.len()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for &i in &m.pilot_indices {
        w.write_all(&(i as u32).to_le_bytes())?;
    }
    w.write_all(&scheme_code(m.scheme).to_le_bytes())?;
    w.write_all(&m.snr_db.to_le_bytes())?;
    w.write_all(&m.doppler_hz.to_le_bytes())?;
    w.write_all(&(m.channel_taps as u32).to_le_bytes())?;
    w.write_all(&m.seed.to_le_bytes())?;
    w.write_all(&m.first_stream.to_le_bytes())?;
    write_f64s(&mut w, &ds.inputs)?;
    write_f64s(&mut w, &ds.targets)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset_from<R: Read>(mut r: R) -> Result<Dataset> {
    fn u32_<R: Read>(r: &mut R) -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64_<R: Read>(r: &mut R) -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = u32_(&mut r)?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let frames = u64_(&mut r)? as usize;
    let k_on = u32_(&mut r)? as usize;
    let frame_len = u32_(&mut r)? as usize;
    let p = u32_(&mut r)? as usize;
    if k_on == 0 || frame_len == 0 || p == 0 || p > frame_len {
        return Err(Error::Format("invalid dataset dimensions".into()));
    }
    let pilot_indices = (0..p).map(|_| u32_(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let scheme = match u32_(&mut r)? {
        0 => Modulation::Qpsk,
        1 => Modulation::Qam16,
        c => return Err(Error::Format(format!("unknown scheme code {c}"))),
    };
    let snr_db = f64::from_bits(u64_(&mut r)?);
    let doppler_hz = f64::from_bits(u64_(&mut r)?);
    let channel_taps = u32_(&mut r)? as usize;
    let seed = u64_(&mut r)?;
    let first_stream = u64_(&mut r)?;
    let f = 2 * k_on;
    let inputs = read_f64s(&mut r, frames * p * f)?;
    let targets = read_f64s(&mut r, frames * frame_len * f)?;
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(Error::Format("trailing bytes after tensors".into()));
    }
    let meta = DatasetMeta {
        frames,
        k_on,
        frame_len,
        pilot_indices,
        scheme,
        snr_db,
        doppler_hz,
        channel_taps,
        seed,
        first_stream,
    };
    Ok(Dataset { meta, inputs, targets })
}

/// Writes the container plus a TOML sidecar (`<file>.toml`) with the metadata.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_dataset_to(ds, BufWriter::new(File::create(path)?))?;
    let text = toml::to_string(&ds.meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(crate::rnn::sidecar_path(path), text)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_from(BufReader::new(File::open(path)?))
}
