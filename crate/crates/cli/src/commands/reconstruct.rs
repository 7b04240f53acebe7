use anyhow::{anyhow, Context, Result};
use fvsr_core::datametrics::{load_clip, load_pnm, save_clip, save_pnm, Clip};
use fvsr_core::lbg::{codec_input, explicit_factor};
use fvsr_tensor::Scalar;

use super::{eval::model_frames, prepare_out, train::load_theta};
use crate::{Precision, RunConfig};

pub const SR_CLIP: &str = "sr.fvsr";

/// Reads a clip container, or a single PPM/PGM frame.
pub fn read_input(path: &std::path::Path) -> Result<Clip> {
    let is_pnm = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("ppm" | "pgm" | "pnm")
    );
    let clip = if is_pnm {
        Clip::from_frames(&[load_pnm(path)?], None)?
    } else {
        load_clip(path)?
    };
    Ok(clip)
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => run_with::<f32>(cfg).map(drop),
        Precision::F64 => run_with::<f64>(cfg).map(drop),
    }
}

/// Bilinear explicit upsampling, posterior-mean encoding, f16 decoding;
/// frames are clamped to [0, 1].
pub fn run_with<T: Scalar>(cfg: &RunConfig) -> Result<Clip> {
    let r = &cfg.reconstruct;
    let ckpt = r
        .checkpoint
        .as_ref()
        .ok_or_else(|| anyhow!("reconstruct.checkpoint is required"))?;
    let input = r
        .input
        .as_ref()
        .ok_or_else(|| anyhow!("reconstruct.input is required"))?;
    let mut theta = load_theta::<T>(ckpt)?;
    if r.identity_head {
        theta.identity_head()?;
    }
    let lr = read_input(input).with_context(|| format!("reading {}", input.display()))?;
    let explicit = explicit_factor(r.scale, &theta.config)?;
    let probe = codec_input(&lr.frame(0).cast::<T>(), explicit)?;
    theta.check_input(probe.shape()).with_context(|| {
        format!(
            "input {} does not fit checkpoint {}",
            input.display(),
            ckpt.display()
        )
    })?;

    let frames = model_frames(&theta, &lr, explicit)?;
    prepare_out(cfg)?;
    let clip = Clip::from_frames(&frames, None)?;
    save_clip(cfg.out.join(SR_CLIP), &clip)?;
    for (t, f) in frames.iter().enumerate() {
        save_pnm(cfg.out.join(format!("sr_{t:03}.ppm")), f)?;
    }
    println!(
        "wrote {} frames of {}x{} to {}",
        clip.len(),
        clip.height(),
        clip.width(),
        cfg.out.display()
    );
    Ok(clip)
}
