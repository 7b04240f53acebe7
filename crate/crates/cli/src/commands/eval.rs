use std::fmt::Write as _;
use std::fs;

use anyhow::{bail, Context, Result};
use fvsr_core::datametrics::{load_split, psnr, save_pnm, ssim, warp_error, Clip, ClipPair};
use fvsr_core::lbg::{crop, explicit_factor, super_resolve};
use fvsr_core::vae::VaeModel;
use fvsr_tensor::ops::interpolate_upsample;
use fvsr_tensor::{InterpMode, Scalar, Tensor};

use super::{cell, prepare_out, train::load_theta, write_atomic};
use crate::{Precision, RunConfig};

pub const EVAL_CSV: &str = "eval.csv";
pub const EVAL_HEADER: &str = "method,clip,kind,psnr,ssim,warp_error";

/// Scores of one reconstructed clip: per-frame means of PSNR and SSIM,
/// warp error of the output under the HR flow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipScore {
    pub psnr: f64,
    pub ssim: f64,
    pub warp_error: f64,
}

pub fn score(out: &[Tensor<f64>], hr: &Clip) -> Result<ClipScore> {
    let n = out.len() as f64;
    let (mut p, mut s) = (0.0, 0.0);
    for (t, f) in out.iter().enumerate() {
        let h = hr.frame(t);
        p += psnr(f, &h, 1.0)?;
        s += ssim(f, &h)?;
    }
    let warp = match &hr.flow {
        Some(flow) => warp_error(&Clip::from_frames(out, Some(flow.clone()))?)?,
        None => f64::NAN,
    };
    Ok(ClipScore {
        psnr: p / n,
        ssim: s / n,
        warp_error: warp,
    })
}

fn clamp01(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|x| x.clamp(0.0, 1.0))
}

pub fn bicubic_frames(lr: &Clip, scale: usize) -> Result<Vec<Tensor<f64>>> {
    (0..lr.len())
        .map(|t| {
            Ok(clamp01(interpolate_upsample(
                &lr.frame(t),
                scale,
                InterpMode::Bicubic,
            )?))
        })
        .collect()
}

pub fn model_frames<T: Scalar>(
    theta: &VaeModel<T>,
    lr: &Clip,
    explicit: usize,
) -> Result<Vec<Tensor<f64>>> {
    (0..lr.len())
        .map(|t| {
            Ok(clamp01(
                super_resolve(theta, &lr.frame(t).cast(), explicit)?.cast(),
            ))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub clip: String,
    pub kind: String,
    pub score: ClipScore,
}

impl EvalRow {
    fn to_csv(&self) -> String {
        let s = &self.score;
        format!(
            "{},{},{},{},{},{}",
            self.method,
            self.clip,
            self.kind,
            cell(s.psnr),
            cell(s.ssim),
            cell(s.warp_error)
        )
    }
}

/// Mean over the rows of one method; NaN entries are skipped.
fn mean_row(method: &str, rows: &[&EvalRow]) -> EvalRow {
    let mean = |f: fn(&ClipScore) -> f64| {
        let v: Vec<f64> = rows
            .iter()
            .map(|r| f(&r.score))
            .filter(|x| !x.is_nan())
            .collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    EvalRow {
        method: method.into(),
        clip: "mean".into(),
        kind: "all".into(),
        score: ClipScore {
            psnr: mean(|s| s.psnr),
            ssim: mean(|s| s.ssim),
            warp_error: mean(|s| s.warp_error),
        },
    }
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => run_with::<f32>(cfg).map(drop),
        Precision::F64 => run_with::<f64>(cfg).map(drop),
    }
}

/// Per-clip rows followed by one mean row per method.
pub fn run_with<T: Scalar>(cfg: &RunConfig) -> Result<Vec<EvalRow>> {
    let scale = cfg.data.degrade.downscale;
    let pairs = load_split(&cfg.data_dir, cfg.eval.split)
        .with_context(|| format!("loading dataset {}", cfg.data_dir.display()))?;
    for p in &pairs {
        if p.hr.height() != p.lr.height() * scale || p.hr.width() != p.lr.width() * scale {
            bail!(
                "clip {}: HR {}x{} is not {scale}x the LR {}x{} (degrade.downscale mismatch)",
                p.record.id,
                p.hr.height(),
                p.hr.width(),
                p.lr.height(),
                p.lr.width()
            );
        }
    }
    let model = match &cfg.eval.checkpoint {
        Some(path) => {
            let theta = load_theta::<T>(path)?;
            let explicit = explicit_factor(scale, &theta.config)?;
            if let Some(p) = pairs.first() {
                let side = p.lr.height() * explicit;
                theta
                    .check_input(&[p.lr.channels(), side, p.lr.width() * explicit])
                    .with_context(|| {
                        format!(
                            "checkpoint {} does not fit the dataset geometry",
                            path.display()
                        )
                    })?;
            }
            Some((theta, explicit))
        }
        None => None,
    };
    prepare_out(cfg)?;
    if cfg.eval.dump {
        fs::create_dir_all(cfg.out.join("dumps"))?;
    }

    let mut rows: Vec<EvalRow> = Vec::new();
    for p in &pairs {
        let row = |method: &str, score| EvalRow {
            method: method.into(),
            clip: format!("{:04}", p.record.id),
            kind: p.record.kind.to_string(),
            score,
        };
        let bicubic = bicubic_frames(&p.lr, scale)?;
        rows.push(row("bicubic", score(&bicubic, &p.hr)?));
        let sr = match &model {
            Some((theta, explicit)) => {
                let sr = model_frames(theta, &p.lr, *explicit)?;
                rows.push(row("model", score(&sr, &p.hr)?));
                Some(sr)
            }
            None => None,
        };
        if cfg.eval.include_hr {
            let hr: Vec<_> = (0..p.hr.len()).map(|t| p.hr.frame(t)).collect();
            rows.push(row("hr", score(&hr, &p.hr)?));
        }
        if cfg.eval.dump {
            dump(cfg, p, scale, &bicubic[0], sr.as_ref().map(|s| &s[0]))?;
        }
    }
    let mut methods: Vec<String> = Vec::new();
    for r in &rows {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let means: Vec<EvalRow> = methods
        .iter()
        .map(|m| {
            mean_row(
                m,
                &rows.iter().filter(|r| &r.method == m).collect::<Vec<_>>(),
            )
        })
        .collect();
    rows.extend(means);

    let mut csv = format!("{EVAL_HEADER}\n");
    for r in &rows {
        writeln!(csv, "{}", r.to_csv()).expect("string write");
    }
    write_atomic(&cfg.out.join(EVAL_CSV), csv.as_bytes())?;
    for r in rows.iter().filter(|r| r.clip == "mean") {
        println!(
            "{:<8} PSNR {:>8.3} dB  SSIM {:.4}  warp {}",
            r.method,
            r.score.psnr,
            r.score.ssim,
            cell(r.score.warp_error)
        );
    }
    Ok(rows)
}

/// Centre crops of the first frame, HR side `dump_crop`.
fn dump(
    cfg: &RunConfig,
    p: &ClipPair,
    scale: usize,
    bicubic: &Tensor<f64>,
    sr: Option<&Tensor<f64>>,
) -> Result<()> {
    let (h, w) = (p.hr.height(), p.hr.width());
    let side = cfg.eval.dump_crop.min(h).min(w) / scale * scale;
    if side == 0 {
        return Ok(());
    }
    let (y0, x0) = (
        (h - side) / 2 / scale * scale,
        (w - side) / 2 / scale * scale,
    );
    let dir = cfg.out.join("dumps");
    let id = p.record.id;
    let lr = crop(
        &p.lr.frame(0),
        y0 / scale,
        x0 / scale,
        side / scale,
        side / scale,
    )?;
    save_pnm(dir.join(format!("{id:04}_lr.ppm")), &lr)?;
    save_pnm(
        dir.join(format!("{id:04}_bicubic.ppm")),
        &crop(bicubic, y0, x0, side, side)?,
    )?;
    if let Some(sr) = sr {
        save_pnm(
            dir.join(format!("{id:04}_sr.ppm")),
            &crop(sr, y0, x0, side, side)?,
        )?;
    }
    save_pnm(
        dir.join(format!("{id:04}_hr.ppm")),
        &crop(&p.hr.frame(0), y0, x0, side, side)?,
    )?;
    Ok(())
}
