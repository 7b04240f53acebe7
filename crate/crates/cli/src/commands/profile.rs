use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fvsr_core::costmodel::{
    act_max_estimate, calibrate_constants, compare_pipelines, dominance_ratio, flops_estimate,
    format_macs, measure_pipeline, Calibration, CodecConstants, MeasuredPipeline, PipelineConfig,
    StrideSpec, ToyDenoiser, VolumeSpec, PAPER_MAC_RATIO,
};
use fvsr_core::vae::{
    init_f16_from_f8, ChannelExpand, HeadVariant, VaeConfig, VaeModel, IMAGE_CHANNELS,
};
use fvsr_tensor::Tensor;

use super::{prepare_out, write_atomic};
use crate::{ConstantsSource, RunConfig};

pub const PROFILE_CSV: &str = "profile.csv";

/// Untrained f8 and f16 codecs plus a latent denoiser, used only for
/// counting MACs and activation bytes.
pub struct ToyStack {
    pub f8: VaeModel<f32>,
    pub f16: VaeModel<f32>,
    pub denoiser: ToyDenoiser<f32>,
}

impl ToyStack {
    pub fn new(seed: u64) -> Result<Self> {
        let f8 = VaeModel::new(VaeConfig::default(), seed)?;
        let f16 = init_f16_from_f8(
            &f8,
            HeadVariant::PixelShuffle,
            ChannelExpand::Duplicate,
            seed ^ 1,
        )?;
        let c = f8.config.latent_channels;
        Ok(Self {
            denoiser: ToyDenoiser::new(c, 4 * c, seed ^ 2),
            f8,
            f16,
        })
    }

    pub fn f_enc(&self) -> usize {
        self.f8.config.f_enc
    }

    /// Runs `model` on a square LR frame of side `lr_side` upsampled by `explicit`.
    pub fn measure(
        &self,
        model: &VaeModel<f32>,
        lr_side: usize,
        explicit: usize,
    ) -> Result<MeasuredPipeline> {
        let lr = Tensor::from_fn([IMAGE_CHANNELS, lr_side, lr_side], |i| (i % 7) as f32 / 7.0);
        Ok(measure_pipeline(model, &self.denoiser, &lr, explicit)?)
    }

    /// Symmetric measurement at a square codec input of side `side`.
    pub fn measure_f8(&self, side: usize) -> Result<MeasuredPipeline> {
        self.measure(&self.f8, side, 1)
    }
}

/// Constants fitted from the symmetric toy at 64² and 128² codec inputs,
/// with the f16 decoder's per-output-voxel constants alongside.
pub struct ToyCalibration {
    pub calibration: Calibration,
    pub kappa_d_f16: f64,
    pub mu_d_f16: f64,
}

pub fn calibrate_toy(stack: &ToyStack) -> Result<ToyCalibration> {
    let f = stack.f_enc();
    let ms = [64, 128]
        .into_iter()
        .map(|side| Ok(stack.measure_f8(side)?.measurement(f)?))
        .collect::<Result<Vec<_>>>()?;
    let calibration = calibrate_constants(&ms)?;
    let m16 = stack.measure(&stack.f16, 64, 1)?;
    let out: usize = m16.output[1..].iter().product();
    Ok(ToyCalibration {
        calibration,
        kappa_d_f16: m16.macs.decoder / out as f64,
        mu_d_f16: m16.activations.decoder / out as f64,
    })
}

/// Constants file: `kappa_e = ...` lines for all six constants, plus optional
/// `kappa_d_asym` / `mu_d_asym` for the asymmetric decoder.
pub fn read_constants(path: &Path) -> Result<(CodecConstants, f64, f64)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading constants {}", path.display()))?;
    let mut c = CodecConstants::uniform(f64::NAN);
    let (mut kd, mut md) = (None, None);
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), i + 1))?;
        let v: f64 = v
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: bad number", path.display(), i + 1))?;
        match k.trim() {
            "kappa_e" => c.kappa_e = v,
            "kappa_t" => c.kappa_t = v,
            "kappa_d" => c.kappa_d = v,
            "mu_e" => c.mu_e = v,
            "mu_t" => c.mu_t = v,
            "mu_d" => c.mu_d = v,
            "kappa_d_asym" => kd = Some(v),
            "mu_d_asym" => md = Some(v),
            other => bail!("{}:{}: unknown constant `{other}`", path.display(), i + 1),
        }
    }
    if let Some((name, _)) = c.named().into_iter().find(|(_, v)| v.is_nan()) {
        bail!("{}: missing `{name}`", path.display());
    }
    c.validate()?;
    Ok((c, kd.unwrap_or(c.kappa_d), md.unwrap_or(c.mu_d)))
}

/// Measured symmetric and asymmetric toy pipelines at a square output.
pub struct ToyComparison {
    pub symmetric: MeasuredPipeline,
    pub asymmetric: MeasuredPipeline,
}

impl ToyComparison {
    pub fn mac_ratio(&self) -> f64 {
        self.asymmetric.total_macs() / self.symmetric.total_macs()
    }

    pub fn token_ratio(&self) -> f64 {
        self.asymmetric.tokens as f64 / self.symmetric.tokens as f64
    }
}

/// ×4 task at `output` pixels: f8 with 4× explicit upsampling against
/// f16 with 2× explicit and 2× indirect.
pub fn compare_toy(stack: &ToyStack, output: usize) -> Result<ToyComparison> {
    if output % 4 != 0 {
        bail!("toy comparison output {output} must be a multiple of 4");
    }
    let lr = output / 4;
    Ok(ToyComparison {
        symmetric: stack.measure(&stack.f8, lr, 4)?,
        asymmetric: stack.measure(&stack.f16, lr, 2)?,
    })
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let report = report(cfg)?;
    prepare_out(cfg)?;
    let mut csv = String::from("quantity,value\n");
    for (k, v) in &report {
        writeln!(csv, "{k},{v}").expect("string write");
    }
    write_atomic(&cfg.out.join(PROFILE_CSV), csv.as_bytes())?;
    Ok(())
}

/// Prints the report and returns it as `(quantity, value)` pairs.
pub fn report(cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    let (t, h, w) = cfg.profile.volume;
    let v = VolumeSpec::new(t, h, w)?;
    let s = StrideSpec::new(cfg.profile.strides.0, cfg.profile.strides.1)?;
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| rows.push((k.to_string(), v));

    let stack = ToyStack::new(cfg.seed)?;
    let (c, kd_asym, md_asym, calibration) = match &cfg.profile.constants {
        ConstantsSource::File(path) => {
            let (c, kd, md) = read_constants(path)?;
            (c, kd, md, None)
        }
        ConstantsSource::Calibrate => {
            let cal = calibrate_toy(&stack)?;
            (
                cal.calibration.constants,
                cal.kappa_d_f16,
                cal.mu_d_f16,
                Some(cal.calibration),
            )
        }
    };

    println!(
        "volume {v} ({} voxels), strides s_t={} s_s={}",
        v.voxels(),
        s.s_t,
        s.s_s
    );
    println!("latent volume divisor s_t*s_s^2 = {}", s.divisor());
    put("volume", v.to_string());
    put("voxels", v.voxels().to_string());
    put("strides", format!("{}x{}", s.s_t, s.s_s));
    put("divisor", s.divisor().to_string());
    put("latent_volume", s.latent_volume(&v)?.to_string());
    put("constants", cfg.profile.constants.to_string());
    for (name, x) in c.named() {
        put(&format!("constant.{name}"), x.to_string());
    }
    put("constant.kappa_d_asym", kd_asym.to_string());
    put("constant.mu_d_asym", md_asym.to_string());
    if let Some(cal) = &calibration {
        for (stage, r) in cal.mac_residuals.stages() {
            put(&format!("calibration.mac_residual.{stage}"), r.to_string());
        }
    }
    for warning in c.plausibility_warnings() {
        println!("warning: {warning}");
    }

    let flops = flops_estimate(&v, &s, &c)?;
    let act = act_max_estimate(&v, &s, &c)?;
    println!("{:<10} {:>22} {:>22}", "stage", "MACs", "activation bytes");
    for ((stage, m), (_, a)) in flops.stages().into_iter().zip(act.stages.stages()) {
        println!(
            "{:<10} {:>22} {:>22}",
            stage.to_string(),
            format_macs(m),
            format!("{a:.0}")
        );
        put(&format!("macs.{stage}"), m.to_string());
        put(&format!("activations.{stage}"), a.to_string());
    }
    println!("{:<10} {:>22}", "total", format_macs(flops.total));
    println!("peak activations {:.0} bytes ({})", act.max, act.argmax);
    put("macs.total", flops.total.to_string());
    put("activations.max", act.max.to_string());
    put("activations.argmax", act.argmax.to_string());
    match dominance_ratio(&s, &c) {
        Ok(d) => {
            println!("decoder/denoiser dominance ratio {d:.3}");
            put("dominance_ratio", d.to_string());
        }
        Err(e) => {
            println!("decoder/denoiser dominance ratio undefined: {e}");
            put("dominance_ratio", String::new());
        }
    }

    // ×4 task: the symmetric codec sees the full output, the asymmetric one half of it.
    let sym = PipelineConfig {
        output: v,
        indirect: 1,
        strides: s,
        constants: c,
    };
    let asym = PipelineConfig {
        indirect: 2,
        constants: CodecConstants {
            kappa_d: kd_asym,
            mu_d: md_asym,
            ..c
        },
        ..sym
    };
    match compare_pipelines(&v, &sym, &asym) {
        Ok(cmp) => {
            println!(
                "analytic asymmetric/symmetric: MACs {:.4}, tokens {:.4}, peak activations {:.4}",
                cmp.mac_ratio.total,
                cmp.token_ratio,
                cmp.asymmetric.activations.max / cmp.symmetric.activations.max
            );
            put(
                "analytic.symmetric.macs",
                cmp.symmetric.macs.total.to_string(),
            );
            put(
                "analytic.asymmetric.macs",
                cmp.asymmetric.macs.total.to_string(),
            );
            put("analytic.mac_ratio", cmp.mac_ratio.total.to_string());
            put("analytic.token_ratio", cmp.token_ratio.to_string());
        }
        Err(e) => println!("analytic comparison skipped: {e}"),
    }

    if calibration.is_some() {
        let toy = compare_toy(&stack, 128)?;
        println!(
            "measured toy at 128x128 output: symmetric {} MACs, asymmetric {} MACs, ratio {:.4} (full-scale reference {:.4}), token ratio {}",
            toy.symmetric.total_macs(),
            toy.asymmetric.total_macs(),
            toy.mac_ratio(),
            PAPER_MAC_RATIO,
            toy.token_ratio()
        );
        put(
            "measured.symmetric.macs",
            toy.symmetric.total_macs().to_string(),
        );
        put(
            "measured.asymmetric.macs",
            toy.asymmetric.total_macs().to_string(),
        );
        put("measured.mac_ratio", toy.mac_ratio().to_string());
        put("measured.token_ratio", toy.token_ratio().to_string());
        put("reference.mac_ratio", PAPER_MAC_RATIO.to_string());
    }
    Ok(rows)
}
