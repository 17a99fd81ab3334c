use dsce_core::channel::complex_gaussian;
use dsce_core::evaluation::{awgn_qpsk_reference, equalize_and_demap};
use dsce_core::link::stream_rng;
use dsce_core::modem::{build_frame, random_payload, Modulation, PilotConfig};
use dsce_core::Complex64;
use ndarray::Array2;
use rayon::prelude::*;

/// Unit channel, QPSK at Eb/N0 = 10 dB, 1e9 bits.
#[test]
fn awgn_qpsk_matches_q_function() {
    let cfg = PilotConfig::new(52, 1000, 1).unwrap();
    let bits_per_frame = cfg.payload_len(Modulation::Qpsk) as u64;
    let frames = 1_000_000_000u64.div_ceil(bits_per_frame);
    let gamma_b: f64 = 10.0;
    let sigma = (1.0 / (2.0 * gamma_b)).sqrt();
    let ones = Array2::from_elem((52, 1000), Complex64::new(1.0, 0.0));
    let errors: u64 = (0..frames)
        .into_par_iter()
        .map(|f| {
            let mut rng = stream_rng(99, f);
            let bits = random_payload(&mut rng, bits_per_frame as usize);
            let frame = build_frame(&bits, &cfg, Modulation::Qpsk).unwrap();
            let y = frame.symbols.mapv(|x| x + complex_gaussian(&mut rng, 1.0) * sigma);
            let rx = equalize_and_demap(&y, &ones, Modulation::Qpsk, &cfg).unwrap();
            rx.iter().zip(&bits).filter(|(a, b)| a != b).count() as u64
        })
        .sum();
    let n = (frames * bits_per_frame) as f64;
    let p = awgn_qpsk_reference(gamma_b);
    let sd = (p * (1.0 - p) / n).sqrt();
    let ber = errors as f64 / n;
    assert!((ber - p).abs() < 3.0 * sd, "ber {ber:e}, reference {p:e}, sd {sd:e}");
}
