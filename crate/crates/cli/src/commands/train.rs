use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use fvsr_core::datametrics::{load_split, load_tensors, ClipPair, Split};
use fvsr_core::lbg::{
    codec_input, explicit_factor, pretrain_reference, train, LogRow, Sample, TrainState,
    TrainSummary, CSV_HEADER,
};
use fvsr_core::vae::VaeModel;
use fvsr_core::CoreError;
use fvsr_tensor::{Scalar, Tensor};

use super::{prepare_out, save_entries_atomic};
use crate::{Precision, RunConfig};

pub const CHECKPOINT: &str = "checkpoint.fvsr";
pub const REFERENCE: &str = "reference.fvsr";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const REFERENCE_LOG: &str = "reference_log.csv";

/// One sample per frame: the LR frame upsampled to the codec input, HR target.
pub fn frame_samples<T: Scalar>(pairs: &[ClipPair], explicit: usize) -> Result<Vec<Sample<T>>> {
    let mut out = Vec::new();
    for p in pairs {
        for t in 0..p.hr.len() {
            out.push(Sample {
                input: codec_input(&p.lr.frame(t).cast::<T>(), explicit)?,
                target: p.hr.frame(t).cast(),
            });
        }
    }
    Ok(out)
}

pub fn hr_frames<T: Scalar>(pairs: &[ClipPair]) -> Vec<Tensor<T>> {
    pairs
        .iter()
        .flat_map(|p| (0..p.hr.len()).map(|t| p.hr.frame(t).cast()))
        .collect()
}

/// Keeps the log lines an uninterrupted run would have written up to the
/// checkpoint at `ckpt_step`. The end-of-run validation row at that step is
/// kept only when it also falls on the validation interval.
pub fn truncate_log(text: &str, ckpt_step: u64, val_every: u64, finished: bool) -> String {
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            out.push_str(line);
            out.push('\n');
            continue;
        }
        let mut f = line.split(',');
        let (Some(step), Some(stage)) = (f.next().and_then(|s| s.parse::<u64>().ok()), f.next())
        else {
            continue;
        };
        let keep = step < ckpt_step
            || (step == ckpt_step
                && (stage != "val" || finished || (val_every > 0 && step % val_every == 0)));
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => run_with::<f32>(cfg).map(drop),
        Precision::F64 => run_with::<f64>(cfg).map(drop),
    }
}

pub fn run_with<T: Scalar>(cfg: &RunConfig) -> Result<TrainSummary> {
    // Everything detectable is checked before the output directory exists.
    let explicit = explicit_factor(cfg.data.degrade.downscale, &cfg.vae)?;
    let dir = &cfg.data_dir;
    let train_pairs = load_split(dir, Some(Split::Train)).with_context(|| {
        format!(
            "loading training clips from dataset {} (run gen-data first)",
            dir.display()
        )
    })?;
    let val_pairs = load_split(dir, Some(Split::Val))?;
    if cfg.train.steps > 0 && train_pairs.is_empty() {
        bail!("dataset {} has no training clips", dir.display());
    }
    for p in train_pairs.iter().chain(&val_pairs) {
        let s = cfg.data.degrade.downscale;
        if p.hr.height() != p.lr.height() * s || p.hr.width() != p.lr.width() * s {
            bail!(
                "clip {}: HR {}x{} is not {s}x the LR {}x{} (degrade.downscale mismatch)",
                p.record.id,
                p.hr.height(),
                p.hr.width(),
                p.lr.height(),
                p.lr.width()
            );
        }
    }
    let ckpt = cfg.out.join(CHECKPOINT);
    if cfg.resume && !ckpt.exists() {
        bail!("train.resume is set but {} does not exist", ckpt.display());
    }
    let data = frame_samples::<T>(&train_pairs, explicit)?;
    let val = frame_samples::<T>(&val_pairs, explicit)?;

    prepare_out(cfg)?;
    let log_path = cfg.out.join(TRAIN_LOG);
    let mut state = if cfg.resume {
        let entries = load_tensors(&ckpt)?;
        let state = TrainState::<T>::from_entries(&entries, &cfg.train)?;
        let text = fs::read_to_string(&log_path)
            .with_context(|| format!("reading {}", log_path.display()))?;
        let finished = state.step >= cfg.train.steps;
        fs::write(
            &log_path,
            truncate_log(&text, state.step, cfg.train.val_every, finished),
        )?;
        println!("resuming from step {}", state.step);
        state
    } else {
        let psi = pretrain(cfg, &hr_frames::<T>(&train_pairs))?;
        fs::write(&log_path, format!("{CSV_HEADER}\n"))?;
        TrainState::new(&psi, &cfg.train)?
    };
    if state.theta.config.f_dec != cfg.vae.f_dec || state.theta.config.f_enc != cfg.vae.f_enc {
        bail!(
            "checkpoint model {:?} does not match the configured VAE",
            state.theta.config
        );
    }

    // Unbuffered, so every row is on disk before the next checkpoint.
    let mut log = OpenOptions::new().append(true).open(&log_path)?;
    let summary = train(
        &mut state,
        &cfg.train,
        &data,
        &val,
        |row: &LogRow| writeln!(log, "{}", row.to_csv()).map_err(|e| CoreError::io(&log_path, e)),
        |s: &TrainState<T>| save_entries_atomic(&ckpt, &s.to_entries()),
    )?;
    println!(
        "trained {} steps: val PSNR {:.3} dB, SSIM {:.4}, {} skipped steps, {} clip events",
        summary.steps,
        summary.psnr_val,
        summary.ssim_val,
        summary.skipped_steps,
        summary.clip_events
    );
    if summary.non_finite {
        eprintln!("warning: non-finite loss values were logged");
    }
    Ok(summary)
}

/// Fits ψ on HR training frames and stores it with its loss curve.
fn pretrain<T: Scalar>(cfg: &RunConfig, frames: &[Tensor<T>]) -> Result<VaeModel<T>> {
    let (psi, history) = pretrain_reference(&cfg.reference, frames)?;
    let path = cfg.out.join(REFERENCE_LOG);
    let mut w = BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    writeln!(w, "step,free_energy")?;
    for (i, f) in history.iter().enumerate() {
        writeln!(w, "{},{f}", i + 1)?;
    }
    w.flush()?;
    save_entries_atomic(&cfg.out.join(REFERENCE), &psi.to_entries("psi"))?;
    Ok(psi)
}

pub(crate) fn load_theta<T: Scalar>(path: &Path) -> Result<VaeModel<T>> {
    let entries =
        load_tensors(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(VaeModel::from_entries("theta", &entries)?)
}
