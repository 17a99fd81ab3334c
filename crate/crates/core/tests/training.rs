use dsce_core::channel::{
    ChannelProfile, Scenario, Tap, DEFAULT_FFT_SIZE, DEFAULT_SINUSOIDS, DEFAULT_SYMBOL_DURATION,
};
use dsce_core::estimators::EstimatorInput;
use dsce_core::link::LinkConfig;
use dsce_core::modem::{Modulation, PilotConfig};
use dsce_core::rnn::{estimate_channel, CellKind, ModelDims, RnnModel};
use dsce_core::training::{
    dataset_mse, generate_dataset, read_dataset, train, write_dataset, write_history_csv, Dataset, DatasetMeta, DatasetSpec,
    TrainingConfig,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn very_high_spec(frames_seed: u64) -> DatasetSpec {
    let s = Scenario::VeryHigh;
    let profile = ChannelProfile::default().with_doppler(s.doppler_hz());
    let pilots = PilotConfig::new(profile.k_on(), 100, s.num_pilots()).unwrap();
    DatasetSpec {
        link: LinkConfig::new(profile, pilots, Modulation::Qam16).unwrap(),
        snr_db: 40.0,
        seed: frames_seed,
        first_stream: 0,
    }
}

/// Channels that move linearly in time between random end points; the
/// input holds the exact values at three pilot symbols.
fn linear_toy(frames: usize, k_on: usize, len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pilots = vec![0, len / 2, len - 1];
    let f = 2 * k_on;
    let pairs: Vec<_> = (0..frames)
        .map(|_| {
            let a: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target = Array2::from_shape_fn((f, len), |(r, t)| {
                let u = t as f64 / (len - 1) as f64;
                a[r] * (1.0 - u) + b[r] * u
            });
            let mut h_in = Array2::zeros((f, len));
            for &t in &pilots {
                h_in.column_mut(t).assign(&target.column(t));
            }
            let mask = (0..len).map(|t| pilots.contains(&t)).collect();
            (EstimatorInput { h_in, mask }, target)
        })
        .collect();
    let meta = DatasetMeta {
        frames: 0,
        k_on,
        frame_len: len,
        pilot_indices: pilots,
        scheme: Modulation::Qpsk,
        snr_db: f64::INFINITY,
        doppler_hz: 0.0,
        channel_taps: 1,
        seed,
        first_stream: 0,
    };
    Dataset::from_pairs(meta, &pairs).unwrap()
}

#[test]
fn loss_is_monotone_on_noiseless_linear_toy() {
    let ds = linear_toy(64, 2, 12, 5);
    let dims = ModelDims::new(CellKind::Gru, 8, 2, 12);
    let model = RnnModel::init(dims, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let cfg = TrainingConfig { epochs: 200, batch_size: 64, ..TrainingConfig::default() };
    let out = train(model, &ds, None, &cfg).unwrap();
    let h: Vec<f64> = out.history.iter().map(|r| r.train_mse).collect();
    for w in h[10..].windows(2) {
        assert!(w[1] <= w[0], "loss increased: {} -> {}", w[0], w[1]);
    }
    assert!(h[199] < 0.5 * h[10], "{} vs {}", h[199], h[10]);
}

/// Eight frames of a narrow link (8 subcarriers, 20 symbols, 4 taps).
#[test]
fn overfits_eight_frames() {
    let taps: Vec<Tap> = (0..4).map(|d| Tap { delay: d, power: 10f64.powf(-0.2 * d as f64) }).collect();
    let profile =
        ChannelProfile::new(taps, 1000.0, DEFAULT_SYMBOL_DURATION, DEFAULT_FFT_SIZE, (1..=8).collect(), DEFAULT_SINUSOIDS)
            .unwrap();
    let pilots = PilotConfig::new(8, 20, 3).unwrap();
    let spec = DatasetSpec {
        link: LinkConfig::new(profile, pilots, Modulation::Qam16).unwrap(),
        snr_db: 40.0,
        seed: 21,
        first_stream: 0,
    };
    let ds = generate_dataset(&spec, 8).unwrap();
    let model = RnnModel::init(ModelDims::new(CellKind::Gru, 32, 8, 20), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let cfg = TrainingConfig { epochs: 500, batch_size: 1, ..TrainingConfig::default() };
    let out = train(model, &ds, None, &cfg).unwrap();
    let mse = dataset_mse(&out.model, &ds, 8).unwrap();
    assert!(mse < 1e-3, "training MSE {mse}");
}

#[test]
fn training_is_deterministic_and_beats_zero_estimate() {
    let train_set = generate_dataset(&very_high_spec(3), 48).unwrap();
    let mut val_spec = very_high_spec(3);
    val_spec.first_stream = 48;
    let val_set = generate_dataset(&val_spec, 16).unwrap();
    let dims = ModelDims::new(CellKind::Gru, 16, 52, 100);
    let cfg = TrainingConfig { epochs: 30, batch_size: 16, seed: 4, ..TrainingConfig::default() };
    let init = RnnModel::init(dims, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let a = train(init.clone(), &train_set, Some(&val_set), &cfg).unwrap();
    let b = train(init, &train_set, Some(&val_set), &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
    let best = a.history[a.best_epoch - 1].val_mse.unwrap();
    assert!(a.history.iter().all(|r| r.val_mse.unwrap() >= best));

    let (mut err, mut zero) = (0.0, 0.0);
    for n in 0..val_set.len() {
        let est = estimate_channel(&a.model, &val_set.input(n)).unwrap();
        let truth = dsce_core::estimators::unstack_real(&val_set.target(n)).unwrap();
        err += (&est - &truth).mapv(|c| c.norm_sqr()).sum();
        zero += truth.mapv(|c| c.norm_sqr()).sum();
    }
    assert!(err < zero, "{err} vs {zero}");

    let mut csv = Vec::new();
    write_history_csv(&a.history, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 31);
}

#[test]
fn dataset_file_round_trip_and_mismatch_rejected() {
    let ds = generate_dataset(&very_high_spec(8), 3).unwrap();
    let dir = tempdir();
    let path = dir.join("train.bin");
    write_dataset(&ds, &path).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), ds);
    let side = std::fs::read_to_string(dir.join("train.bin.toml")).unwrap();
    assert!(side.contains("frames = 3"));
    let again = dir.join("again.bin");
    write_dataset(&generate_dataset(&very_high_spec(8), 3).unwrap(), &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    let wrong = RnnModel::init(ModelDims::new(CellKind::Gru, 4, 26, 100), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(train(wrong, &ds, None, &TrainingConfig { epochs: 1, ..TrainingConfig::default() }).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}

fn tempdir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("dsce-train-{}-{:?}", std::process::id(), std::thread::current().id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
