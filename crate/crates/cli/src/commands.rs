use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dsce_core::complexity::{self, ComplexityParams};
use dsce_core::evaluation::{ber_sweep_many, plot_script, write_reports_csv, EstimatorChoice, EstimatorKind, SweepConfig};
use dsce_core::rnn::{read_model, write_model, CellKind, ModelDims, RnnModel};
use dsce_core::training::{
    generate_dataset, grad_check, read_dataset, train_with_progress, write_dataset, write_history_csv, DatasetSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{
    echo, parse_snr_list, ComplexitySettings, EvalSettings, GenSettings, GradcheckSettings, LinkSettings,
    TrainSettings,
};

/// Options every command shares.
#[derive(Debug, Clone, Serialize)]
pub struct Common {
    pub seed: u64,
    pub out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

#[derive(Serialize)]
struct GenRun<'a> {
    common: &'a Common,
    link: &'a LinkSettings,
    gen_dataset: &'a GenSettings,
}

pub fn gen_dataset(common: &Common, link: &LinkSettings, gen: &GenSettings) -> Result<()> {
    let config = echo(&common.out, "gen-dataset", &GenRun { common, link, gen_dataset: gen })?;
    let link_cfg = link.build()?;
    let spec = |first_stream| DatasetSpec { link: link_cfg.clone(), snr_db: gen.snr_db, seed: common.seed, first_stream };
    for (name, frames, first) in [("train", gen.train_frames, 0), ("test", gen.test_frames, gen.train_frames as u64)] {
        if frames == 0 {
            continue;
        }
        let ds = generate_dataset(&spec(first), frames)?;
        let path = common.out.join(format!("{name}.bin"));
        write_dataset(&ds, &path).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {} ({frames} frames)", path.display());
    }
    println!("config: {}", config.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainRun<'a> {
    common: &'a Common,
    train: &'a TrainSettings,
}

pub fn train(common: &Common, settings: &TrainSettings) -> Result<()> {
    let mut settings = settings.clone();
    settings.optimizer.seed = common.seed;
    let dataset = settings.dataset.clone().unwrap_or_else(|| common.out.join("train.bin"));
    let validation = settings.validation.clone().or_else(|| {
        let p = common.out.join("test.bin");
        p.exists().then_some(p)
    });
    settings.dataset = Some(dataset.clone());
    settings.validation = validation.clone();
    let config = echo(&common.out, "train", &TrainRun { common, train: &settings })?;

    let train_set = read_dataset(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let val_set = match &validation {
        Some(p) => Some(read_dataset(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let meta = train_set.meta();
    let mut dims = ModelDims::new(settings.cell, settings.hidden, meta.k_on, meta.frame_len)
        .with_activation(settings.activation);
    dims.output_relu = settings.output_relu;
    let init = RnnModel::init(dims, &mut ChaCha8Rng::seed_from_u64(common.seed))?;
    let epochs = settings.optimizer.epochs;
    let out = train_with_progress(init, &train_set, val_set.as_ref(), &settings.optimizer, |r| {
        if r.epoch == 1 || r.epoch % 10 == 0 || r.epoch == epochs {
            match r.val_mse {
                Some(v) => eprintln!("epoch {:>4}  train {:.6e}  val {:.6e}", r.epoch, r.train_mse, v),
                None => eprintln!("epoch {:>4}  train {:.6e}", r.epoch, r.train_mse),
            }
        }
    })?;
    let model_path = common.out.join("model.bin");
    write_model(&out.model, &model_path).with_context(|| format!("writing {}", model_path.display()))?;
    let loss_path = common.out.join("loss.csv");
    let mut w = create(&loss_path)?;
    write_history_csv(&out.history, &mut w)?;
    w.flush()?;
    println!("wrote {} (best epoch {})", model_path.display(), out.best_epoch);
    println!("wrote {}", loss_path.display());
    println!("config: {}", config.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalRun<'a> {
    common: &'a Common,
    link: &'a LinkSettings,
    evaluate: &'a EvalSettings,
}

/// Resolves estimator names; recurrent ones take the weights of matching kind.
fn estimator_choices(settings: &EvalSettings) -> Result<Vec<EstimatorChoice>> {
    let models = settings
        .models
        .iter()
        .map(|p| read_model(p).with_context(|| format!("reading weights {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for name in &settings.estimators {
        let kind: EstimatorKind = name.parse()?;
        let choice = match kind {
            EstimatorKind::Perfect => EstimatorChoice::Perfect,
            EstimatorKind::SlsInterp => EstimatorChoice::SlsInterp,
            EstimatorKind::AlsWi => EstimatorChoice::AlsWi,
            EstimatorKind::BiSrnn | EstimatorKind::BiLstm | EstimatorKind::BiGru => {
                let cell = match kind {
                    EstimatorKind::BiSrnn => CellKind::Srnn,
                    EstimatorKind::BiLstm => CellKind::Lstm,
                    _ => CellKind::Gru,
                };
                let Some(m) = models.iter().find(|m| m.kind() == cell) else {
                    bail!("estimator `{name}` needs weights: pass --model with a {} model", cell.name());
                };
                EstimatorChoice::rnn(m.clone())?
            }
        };
        out.push(choice);
    }
    if out.is_empty() {
        bail!("no estimators selected");
    }
    Ok(out)
}

pub fn evaluate(common: &Common, link: &LinkSettings, settings: &EvalSettings) -> Result<()> {
    let config = echo(&common.out, "evaluate", &EvalRun { common, link, evaluate: settings })?;
    let estimators = estimator_choices(settings)?;
    let sweep = SweepConfig {
        link: link.build()?,
        scenario: link.scenario.name().into(),
        snr_db: parse_snr_list(&settings.snr)?,
        frames: settings.frames,
        seed: common.seed,
        first_stream: settings.first_stream,
    };
    let reports = ber_sweep_many(&estimators, &sweep)?;
    for r in &reports {
        for p in &r.points {
            println!(
                "{:<12} snr {:>5.1} dB  ber {:.4e}  nmse {:.4e}  ({} errors / {} bits)",
                r.estimator, p.snr_db, p.ber, p.nmse, p.bits_errored, p.bits_total
            );
        }
    }
    let csv_path = common.out.join("ber.csv");
    let mut w = create(&csv_path)?;
    write_reports_csv(&reports, &mut w)?;
    w.flush()?;
    println!("wrote {}", csv_path.display());
    if settings.plot {
        let script = common.out.join("plot_ber.py");
        std::fs::write(&script, plot_script("ber.csv")).with_context(|| format!("writing {}", script.display()))?;
        println!("wrote {}", script.display());
    }
    println!("config: {}", config.display());
    Ok(())
}

#[derive(Serialize)]
struct ComplexityRun<'a> {
    common: &'a Common,
    complexity: &'a ComplexitySettings,
}

pub fn complexity(common: &Common, settings: &ComplexitySettings, json: bool) -> Result<()> {
    echo(&common.out, "complexity", &ComplexityRun { common, complexity: settings })?;
    let report = complexity::report(ComplexityParams {
        hidden: settings.hidden,
        k_on: settings.k_on,
        pilots: settings.pilots,
        frame_len: settings.frame_len,
    })?;
    let csv_path = common.out.join("complexity.csv");
    let mut w = create(&csv_path)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if json {
        serde_json::to_writer_pretty(&mut out, &report)?;
        writeln!(out)?;
    } else {
        report.write_table(&mut out)?;
        writeln!(out, "wrote {}", csv_path.display())?;
    }
    Ok(())
}

/// Returns whether every cell passed.
pub fn gradcheck(common: &Common, settings: &GradcheckSettings) -> Result<bool> {
    #[derive(Serialize)]
    struct Run<'a> {
        common: &'a Common,
        gradcheck: &'a GradcheckSettings,
    }
    echo(&common.out, "gradcheck", &Run { common, gradcheck: settings })?;
    let mut all = true;
    for kind in CellKind::ALL {
        let dims = ModelDims::new(kind, settings.hidden, settings.k_on, settings.frame_len);
        let r = grad_check(&dims, common.seed)?;
        let pass = r.max_rel_error < 1e-5;
        all &= pass;
        println!(
            "{} {:<5} max relative error {:.3e} (parameter {} of {})",
            if pass { "PASS" } else { "FAIL" },
            kind.name(),
            r.max_rel_error,
            r.worst_param,
            r.params
        );
    }
    Ok(all)
}
