//! Gray-mapped QPSK/16QAM, pilot sequences and OFDM frame assembly.
//!
//! Bit labels are read most-significant-bit first. Each pair of bits drives
//! one axis: the first bit of the pair is the sign (0 = positive) and, for
//! 16QAM, the second bit selects the amplitude (0 = inner, 1 = outer).
//!
//! | scheme | bits  | point              |
//! |--------|-------|--------------------|
//! | QPSK   | 00    | (+1 + 1j) / sqrt 2 |
//! | QPSK   | 01    | (+1 - 1j) / sqrt 2 |
//! | QPSK   | 10    | (-1 + 1j) / sqrt 2 |
//! | QPSK   | 11    | (-1 - 1j) / sqrt 2 |
//! | 16QAM  | ab cd | (I(ab) + j I(cd)) / sqrt 10, I(00)=+1, I(01)=+3, I(10)=-1, I(11)=-3 |

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Seed of the pilot sequence shared by transmitter and receiver.
pub const DEFAULT_PILOT_SEED: u64 = 0x0b1_9e0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
    #[serde(rename = "16qam", alias = "qam16")]
    Qam16,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "16qam",
        }
    }

    fn scale(self) -> f64 {
        match self {
            Modulation::Qpsk => std::f64::consts::FRAC_1_SQRT_2,
            Modulation::Qam16 => 1.0 / 10f64.sqrt(),
        }
    }

    /// Amplitude on one axis for the given axis bits.
    fn axis_level(self, sign: u8, magnitude: u8) -> f64 {
        let mag = match self {
            Modulation::Qpsk => 1.0,
            Modulation::Qam16 => {
                if magnitude == 0 {
                    1.0
                } else {
                    3.0
                }
            }
        };
        let s = if sign == 0 { 1.0 } else { -1.0 };
        s * mag * self.scale()
    }

    /// Point for a label in `0..2^bits_per_symbol`.
    pub fn point(self, label: usize) -> Complex64 {
        let b = self.bits_per_symbol();
        let bit = |i: usize| ((label >> (b - 1 - i)) & 1) as u8;
        match self {
            Modulation::Qpsk => Complex64::new(self.axis_level(bit(0), 0), self.axis_level(bit(1), 0)),
            Modulation::Qam16 => Complex64::new(
                self.axis_level(bit(0), bit(1)),
                self.axis_level(bit(2), bit(3)),
            ),
        }
    }

    /// All constellation points, indexed by label.
    pub fn constellation(self) -> Vec<Complex64> {
        (0..1usize << self.bits_per_symbol()).map(|l| self.point(l)).collect()
    }

    pub fn map_bits(self, bits: &[u8]) -> Result<Vec<Complex64>> {
        let b = self.bits_per_symbol();
        if !bits.len().is_multiple_of(b) {
            return Err(Error::BitLength {
                len: bits.len(),
                bits_per_symbol: b,
            });
        }
        Ok(bits
            .chunks_exact(b)
            .map(|group| {
                let label = group.iter().fold(0usize, |acc, &x| (acc << 1) | (x & 1) as usize);
                self.point(label)
            })
            .collect())
    }

    /// Hard decision to the nearest constellation point.
    ///
    /// The grids are separable, so the decision is taken per axis; ties at
    /// a decision boundary resolve towards the all-zeros label.
    pub fn demap_symbols(self, received: &[Complex64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(received.len() * self.bits_per_symbol());
        for &y in received {
            self.demap_into(y, &mut out);
        }
        out
    }

    pub(crate) fn demap_into(self, y: Complex64, out: &mut Vec<u8>) {
        match self {
            Modulation::Qpsk => {
                out.push((y.re < 0.0) as u8);
                out.push((y.im < 0.0) as u8);
            }
            Modulation::Qam16 => {
                let threshold = 2.0 * self.scale();
                for v in [y.re, y.im] {
                    out.push((v < 0.0) as u8);
                    out.push((v.abs() > threshold) as u8);
                }
            }
        }
    }
}

impl std::str::FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qpsk" => Ok(Modulation::Qpsk),
            "16qam" | "qam16" => Ok(Modulation::Qam16),
            other => Err(Error::Config(format!("unknown modulation `{other}`"))),
        }
    }
}

/// Deterministic unit-modulus BPSK pilot sequence.
pub fn make_pilot_sequence(k_on: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k_on)
        .map(|_| {
            if rng.random::<bool>() {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(-1.0, 0.0)
            }
        })
        .collect()
}

/// Pilot symbol positions for `num_pilots` pilots in a frame of `frame_len`.
///
/// Index 0 is always a pilot; additional pilots are spread evenly so that
/// the last one sits on the final symbol.
pub fn pilot_positions(frame_len: usize, num_pilots: usize) -> Vec<usize> {
    match num_pilots {
        0 => Vec::new(),
        1 => vec![0],
        p => (0..p)
            .map(|q| (q as f64 * (frame_len - 1) as f64 / (p - 1) as f64).round() as usize)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymbolRole {
    Pilot,
    Data,
}

/// Frame layout: which OFDM symbols carry pilots and the pilot values.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotConfig {
    k_on: usize,
    frame_len: usize,
    pilot_indices: Vec<usize>,
    pilot_values: Vec<Complex64>,
}

impl PilotConfig {
    /// Standard layout with the default pilot sequence.
    pub fn new(k_on: usize, frame_len: usize, num_pilots: usize) -> Result<Self> {
        if num_pilots == 0 || num_pilots > frame_len {
            return Err(Error::Config(format!(
                "pilot count {num_pilots} must be in 1..={frame_len}"
            )));
        }
        Self::with_layout(
            k_on,
            frame_len,
            pilot_positions(frame_len, num_pilots),
            make_pilot_sequence(k_on, DEFAULT_PILOT_SEED),
        )
    }

    pub fn with_layout(
        k_on: usize,
        frame_len: usize,
        pilot_indices: Vec<usize>,
        pilot_values: Vec<Complex64>,
    ) -> Result<Self> {
        if k_on == 0 || frame_len == 0 {
            return Err(Error::Config("K_on and frame length must be positive".into()));
        }
        if pilot_indices.first() != Some(&0) {
            return Err(Error::Config("symbol 0 must be a pilot".into()));
        }
        if pilot_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("pilot indices must be strictly increasing".into()));
        }
        if pilot_indices.last().is_some_and(|&i| i >= frame_len) {
            return Err(Error::Config("pilot index beyond frame length".into()));
        }
        if pilot_values.len() != k_on {
            return Err(shape_err(format!("{k_on} pilot values"), pilot_values.len()));
        }
        if pilot_values.iter().any(|p| p.norm() == 0.0 || !p.is_finite()) {
            return Err(Error::Config("pilot values must be finite and non-zero".into()));
        }
        Ok(Self {
            k_on,
            frame_len,
            pilot_indices,
            pilot_values,
        })
    }

    pub fn k_on(&self) -> usize {
        self.k_on
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn num_pilots(&self) -> usize {
        self.pilot_indices.len()
    }

    pub fn num_data(&self) -> usize {
        self.frame_len - self.num_pilots()
    }

    pub fn pilot_indices(&self) -> &[usize] {
        &self.pilot_indices
    }

    pub fn pilot_values(&self) -> &[Complex64] {
        &self.pilot_values
    }

    pub fn is_pilot(&self, i: usize) -> bool {
        self.pilot_indices.binary_search(&i).is_ok()
    }

    pub fn data_indices(&self) -> Vec<usize> {
        (0..self.frame_len).filter(|&i| !self.is_pilot(i)).collect()
    }

    pub fn roles(&self) -> Vec<SymbolRole> {
        (0..self.frame_len)
            .map(|i| if self.is_pilot(i) { SymbolRole::Pilot } else { SymbolRole::Data })
            .collect()
    }

    /// Payload bits carried by one frame.
    pub fn payload_len(&self, scheme: Modulation) -> usize {
        self.num_data() * self.k_on * scheme.bits_per_symbol()
    }
}

/// One transmitted OFDM frame, `K_on x I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub symbols: Array2<Complex64>,
    pub roles: Vec<SymbolRole>,
    pub payload_bits: Vec<u8>,
}

/// Places pilots and fills data symbols column by column with the mapped payload.
pub fn build_frame(payload_bits: &[u8], cfg: &PilotConfig, scheme: Modulation) -> Result<Frame> {
    let expected = cfg.payload_len(scheme);
    if payload_bits.len() != expected {
        return Err(shape_err(format!("{expected} payload bits"), payload_bits.len()));
    }
    let data = scheme.map_bits(payload_bits)?;
    let mut symbols = Array2::<Complex64>::zeros((cfg.k_on, cfg.frame_len));
    let mut next = data.chunks_exact(cfg.k_on.max(1));
    for i in 0..cfg.frame_len {
        let mut col = symbols.column_mut(i);
        if cfg.is_pilot(i) {
            col.iter_mut().zip(&cfg.pilot_values).for_each(|(s, p)| *s = *p);
        } else if let Some(chunk) = next.next() {
            col.iter_mut().zip(chunk).for_each(|(s, d)| *s = *d);
        }
    }
    Ok(Frame {
        symbols,
        roles: cfg.roles(),
        payload_bits: payload_bits.to_vec(),
    })
}

/// Data-symbol entries of a `K_on x I` grid in payload order.
pub fn extract_data(grid: &Array2<Complex64>, cfg: &PilotConfig) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(cfg.num_data() * cfg.k_on);
    for i in cfg.data_indices() {
        out.extend(grid.column(i).iter().copied());
    }
    out
}

/// Uniform random payload for one frame.
pub fn random_payload<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<u8> {
    (0..len).map(|_| rng.random::<bool>() as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SCHEMES: [Modulation; 2] = [Modulation::Qpsk, Modulation::Qam16];

    fn brute_force_demap(scheme: Modulation, y: Complex64) -> usize {
        let pts = scheme.constellation();
        let mut best = 0;
        for (l, p) in pts.iter().enumerate() {
            if (y - p).norm_sqr() < (y - pts[best]).norm_sqr() {
                best = l;
            }
        }
        best
    }

    fn label_bits(scheme: Modulation, label: usize) -> Vec<u8> {
        let b = scheme.bits_per_symbol();
        (0..b).map(|i| ((label >> (b - 1 - i)) & 1) as u8).collect()
    }

    #[test]
    fn unit_average_power() {
        for s in SCHEMES {
            let pts = s.constellation();
            let p: f64 = pts.iter().map(|c| c.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        for s in SCHEMES {
            let pts = s.constellation();
            let dmin = pts
                .iter()
                .enumerate()
                .flat_map(|(i, a)| pts.iter().skip(i + 1).map(move |b| (a - b).norm()))
                .fold(f64::INFINITY, f64::min);
            for (i, a) in pts.iter().enumerate() {
                for (j, b) in pts.iter().enumerate() {
                    if i != j && ((a - b).norm() - dmin).abs() < 1e-9 {
                        assert_eq!((i ^ j).count_ones(), 1, "{s:?}: {i:b} vs {j:b}");
                    }
                }
            }
        }
    }

    #[test]
    fn qpsk_table() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let m = Modulation::Qpsk.map_bits(&[0, 0, 1, 1]).unwrap();
        assert_eq!(m[0], Complex64::new(r, r));
        assert_eq!(m[1], Complex64::new(-r, -r));
        assert_eq!(Modulation::Qpsk.demap_symbols(&[Complex64::new(0.9, 0.8)]), vec![0, 0]);
    }

    #[test]
    fn qam16_grid() {
        let s = 1.0 / 10f64.sqrt();
        let mut seen: Vec<(i32, i32)> = (0..16)
            .map(|l| {
                let p = Modulation::Qam16.point(l);
                ((p.re / s).round() as i32, (p.im / s).round() as i32)
            })
            .collect();
        seen.sort();
        let mut grid: Vec<(i32, i32)> = [-3, -1, 1, 3]
            .iter()
            .flat_map(|&a| [-3, -1, 1, 3].map(move |b| (a, b)))
            .collect();
        grid.sort();
        assert_eq!(seen, grid);
        for l in 0..16 {
            let p = Modulation::Qam16.point(l);
            assert_eq!(Modulation::Qam16.demap_symbols(&[p]), label_bits(Modulation::Qam16, l));
        }
    }

    #[test]
    fn rejects_ragged_bits() {
        assert!(matches!(
            Modulation::Qam16.map_bits(&[0, 1, 1]),
            Err(Error::BitLength { len: 3, bits_per_symbol: 4 })
        ));
    }

    #[test]
    fn zero_decides_all_zero_label() {
        for s in SCHEMES {
            let bits = s.demap_symbols(&[Complex64::new(0.0, 0.0)]);
            assert!(bits.iter().all(|&b| b == 0));
        }
    }

    #[test]
    fn pilot_sequence_properties() {
        let a = make_pilot_sequence(52, 7);
        assert_eq!(a, make_pilot_sequence(52, 7));
        assert!(a.iter().all(|p| *p == Complex64::new(1.0, 0.0) || *p == Complex64::new(-1.0, 0.0)));
        let power: f64 = a.iter().map(|p| p.norm_sqr()).sum::<f64>() / 52.0;
        assert_eq!(power, 1.0);
    }

    #[test]
    fn pilot_layouts() {
        assert_eq!(pilot_positions(100, 1), vec![0]);
        assert_eq!(pilot_positions(100, 2), vec![0, 99]);
        assert_eq!(pilot_positions(100, 3), vec![0, 50, 99]);
        assert_eq!(pilot_positions(5, 5), vec![0, 1, 2, 3, 4]);
        let cfg = PilotConfig::new(52, 100, 3).unwrap();
        assert_eq!(cfg.num_data(), 97);
        assert_eq!(cfg.payload_len(Modulation::Qpsk), 10_088);
        assert!(PilotConfig::new(52, 100, 0).is_err());
        assert!(PilotConfig::with_layout(4, 10, vec![1, 5], make_pilot_sequence(4, 1)).is_err());
        assert!(PilotConfig::with_layout(4, 10, vec![0, 5, 5], make_pilot_sequence(4, 1)).is_err());
        let mut zero = make_pilot_sequence(4, 1);
        zero[2] = Complex64::new(0.0, 0.0);
        assert!(PilotConfig::with_layout(4, 10, vec![0], zero).is_err());
    }

    #[test]
    fn all_pilot_frame() {
        let cfg = PilotConfig::new(8, 4, 4).unwrap();
        let frame = build_frame(&[], &cfg, Modulation::Qpsk).unwrap();
        assert!(frame.roles.iter().all(|r| *r == SymbolRole::Pilot));
        assert!(build_frame(&[0, 1], &cfg, Modulation::Qpsk).is_err());
    }

    proptest! {
        #[test]
        fn demap_is_nearest_point(re in -2.0f64..2.0, im in -2.0f64..2.0, qam in any::<bool>()) {
            let s = if qam { Modulation::Qam16 } else { Modulation::Qpsk };
            let y = Complex64::new(re, im);
            prop_assert_eq!(s.demap_symbols(&[y]), label_bits(s, brute_force_demap(s, y)));
        }

        #[test]
        fn frame_round_trip(seed in any::<u64>(), p in 1usize..4, qam in any::<bool>()) {
            let s = if qam { Modulation::Qam16 } else { Modulation::Qpsk };
            let cfg = PilotConfig::new(6, 12, p).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bits = random_payload(&mut rng, cfg.payload_len(s));
            let frame = build_frame(&bits, &cfg, s).unwrap();
            for &i in cfg.pilot_indices() {
                for k in 0..6 {
                    prop_assert_eq!(frame.symbols[[k, i]], cfg.pilot_values()[k]);
                }
            }
            prop_assert_eq!(s.demap_symbols(&extract_data(&frame.symbols, &cfg)), bits);
        }
    }
}
