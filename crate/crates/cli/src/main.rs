//! `dsce`: dataset generation, training, BER/NMSE evaluation, complexity
//! accounting and gradient checks from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dsce_core::channel::Scenario;
use dsce_core::modem::Modulation;
use dsce_core::rnn::{Activation, CellKind};

use commands::Common;
use config::{FileConfig, LinkSettings};

#[derive(Parser)]
#[command(name = "dsce", version, about = "Doubly-selective OFDM channel estimation simulator")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random draw of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte-Carlo worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training and test frames into dataset containers.
    GenDataset {
        #[command(flatten)]
        link: LinkArgs,
        /// Frames in both splits (shorthand for --train-frames/--test-frames).
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        train_frames: Option<usize>,
        #[arg(long)]
        test_frames: Option<usize>,
        /// SNR of the generated frames in dB.
        #[arg(long)]
        snr: Option<f64>,
    },
    /// Train a bidirectional recurrent estimator.
    Train {
        /// Training dataset (default OUT/train.bin).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Validation dataset for best-epoch selection (default OUT/test.bin if present).
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        cell: Option<CellKind>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        activation: Option<Activation>,
        /// ReLU on the hidden states before the output layer.
        #[arg(long)]
        output_relu: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        clip_norm: Option<f64>,
    },
    /// BER/NMSE sweep over SNR; writes OUT/ber.csv.
    Evaluate {
        #[command(flatten)]
        link: LinkArgs,
        /// Comma-separated: perfect, sls, wi, srnn, lstm, gru.
        #[arg(long, value_delimiter = ',')]
        estimator: Vec<String>,
        /// Weights for recurrent estimators (repeatable).
        #[arg(long)]
        model: Vec<PathBuf>,
        /// `start:step:stop`, comma list or single value, in dB.
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<String>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        first_stream: Option<u64>,
        /// Also write a matplotlib script plotting the CSV.
        #[arg(long)]
        plot: bool,
    },
    /// Multiplication/division counts per frame; writes OUT/complexity.csv.
    Complexity {
        #[arg(long)]
        kon: Option<u64>,
        #[arg(long)]
        hidden: Option<u64>,
        #[arg(long)]
        pilots: Option<u64>,
        #[arg(long)]
        frame_len: Option<u64>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Backpropagation versus central finite differences for every cell.
    Gradcheck {
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        kon: Option<usize>,
        #[arg(long)]
        frame_len: Option<usize>,
    },
}

#[derive(Args)]
struct LinkArgs {
    /// low, high or very_high.
    #[arg(long)]
    scenario: Option<Scenario>,
    /// qpsk or 16qam.
    #[arg(long)]
    scheme: Option<Modulation>,
    /// Power-delay profile TOML.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    frame_len: Option<usize>,
    #[arg(long)]
    doppler: Option<f64>,
}

impl LinkArgs {
    fn apply(self, mut s: LinkSettings) -> LinkSettings {
        s.scenario = self.scenario.unwrap_or(s.scenario);
        s.scheme = self.scheme.unwrap_or(s.scheme);
        s.profile = self.profile.or(s.profile);
        s.frame_len = self.frame_len.unwrap_or(s.frame_len);
        s.doppler_hz = self.doppler.or(s.doppler_hz);
        s
    }
}

fn run(cli: Cli) -> Result<bool> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.workers.or(file.workers) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker pool")?;
    }
    let common = Common {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out: cli.out.or(file.out).unwrap_or_else(|| PathBuf::from("dsce-out")),
    };
    match cli.command {
        Command::GenDataset { link, frames, train_frames, test_frames, snr } => {
            let mut g = file.gen_dataset;
            if let Some(n) = frames {
                g.train_frames = n;
                g.test_frames = n;
            }
            g.train_frames = train_frames.unwrap_or(g.train_frames);
            g.test_frames = test_frames.unwrap_or(g.test_frames);
            g.snr_db = snr.unwrap_or(g.snr_db);
            commands::gen_dataset(&common, &link.apply(file.link), &g)?;
        }
        Command::Train {
            dataset,
            validation,
            cell,
            hidden,
            activation,
            output_relu,
            epochs,
            batch_size,
            lr,
            clip_norm,
        } => {
            let mut t = file.train;
            t.dataset = dataset.or(t.dataset);
            t.validation = validation.or(t.validation);
            t.cell = cell.unwrap_or(t.cell);
            t.hidden = hidden.unwrap_or(t.hidden);
            t.activation = activation.unwrap_or(t.activation);
            t.output_relu |= output_relu;
            t.optimizer.epochs = epochs.unwrap_or(t.optimizer.epochs);
            t.optimizer.batch_size = batch_size.unwrap_or(t.optimizer.batch_size);
            t.optimizer.adam.lr = lr.unwrap_or(t.optimizer.adam.lr);
            t.optimizer.clip_norm = clip_norm.or(t.optimizer.clip_norm);
            commands::train(&common, &t)?;
        }
        Command::Evaluate { link, estimator, model, snr, frames, first_stream, plot } => {
            let mut e = file.evaluate;
            if !estimator.is_empty() {
                e.estimators = estimator;
            }
            if !model.is_empty() {
                e.models = model;
            }
            e.snr = snr.unwrap_or(e.snr);
            e.frames = frames.unwrap_or(e.frames);
            e.first_stream = first_stream.unwrap_or(e.first_stream);
            e.plot |= plot;
            commands::evaluate(&common, &link.apply(file.link), &e)?;
        }
        Command::Complexity { kon, hidden, pilots, frame_len, json } => {
            let mut c = file.complexity;
            c.k_on = kon.unwrap_or(c.k_on);
            c.hidden = hidden.unwrap_or(c.hidden);
            c.pilots = pilots.unwrap_or(c.pilots);
            c.frame_len = frame_len.unwrap_or(c.frame_len);
            commands::complexity(&common, &c, json)?;
        }
        Command::Gradcheck { hidden, kon, frame_len } => {
            let mut g = file.gradcheck;
            g.hidden = hidden.unwrap_or(g.hidden);
            g.k_on = kon.unwrap_or(g.k_on);
            g.frame_len = frame_len.unwrap_or(g.frame_len);
            return commands::gradcheck(&common, &g);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
