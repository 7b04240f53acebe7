//! Analytic compute and activation scaling of the encode, denoise, decode
//! pipeline, fitted constants, and measured pipeline comparisons.

mod calibrate;
mod pipeline;

pub use calibrate::{calibrate_constants, Calibration, Measurement};
pub use pipeline::{
    compare_pipelines, measure_pipeline, MeasuredPipeline, PipelineConfig, PipelineReport,
    PipelineSide, ToyDenoiser, PAPER_MAC_RATIO,
};

use std::fmt;

use crate::{CoreError, Result};

/// Target clip volume `V = T·H·W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VolumeSpec {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl VolumeSpec {
    pub fn new(t: usize, h: usize, w: usize) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 {
            return Err(CoreError::Config(format!(
                "volume {t}x{h}x{w} must have every extent >= 1"
            )));
        }
        Ok(Self { t, h, w })
    }

    pub fn voxels(&self) -> u64 {
        (self.t * self.h * self.w) as u64
    }
}

impl fmt::Display for VolumeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.t, self.h, self.w)
    }
}

/// Temporal and spatial strides of the latent grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrideSpec {
    pub s_t: usize,
    pub s_s: usize,
}

impl StrideSpec {
    pub fn new(s_t: usize, s_s: usize) -> Result<Self> {
        if s_t == 0 || s_s == 0 {
            return Err(CoreError::Config(format!(
                "strides ({s_t}, {s_s}) must be >= 1"
            )));
        }
        Ok(Self { s_t, s_s })
    }

    /// `s_t·s_s²`, the voxels covered by one latent cell.
    pub fn divisor(&self) -> u64 {
        (self.s_t * self.s_s * self.s_s) as u64
    }

    /// `V / (s_t·s_s²)`; errors when less than one cell.
    pub fn latent_volume(&self, v: &VolumeSpec) -> Result<f64> {
        let lv = v.voxels() as f64 / self.divisor() as f64;
        if lv < 1.0 {
            return Err(CoreError::Config(format!(
                "volume {v} is smaller than one latent cell of strides ({}, {})",
                self.s_t, self.s_s
            )));
        }
        Ok(lv)
    }
}

/// Per-voxel MAC constants `κ` and activation-byte constants `μ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecConstants {
    pub kappa_e: f64,
    pub kappa_t: f64,
    pub kappa_d: f64,
    pub mu_e: f64,
    pub mu_t: f64,
    pub mu_d: f64,
}

impl CodecConstants {
    /// Every constant set to `k`.
    pub fn uniform(k: f64) -> Self {
        Self {
            kappa_e: k,
            kappa_t: k,
            kappa_d: k,
            mu_e: k,
            mu_t: k,
            mu_d: k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CoreError::Config(format!(
                    "{name} = {v} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("kappa_e", self.kappa_e),
            ("kappa_t", self.kappa_t),
            ("kappa_d", self.kappa_d),
            ("mu_e", self.mu_e),
            ("mu_t", self.mu_t),
            ("mu_d", self.mu_d),
        ]
    }

    /// Soft checks: the expected regime is `κ_D < κ_T < 50·κ_D` with all
    /// constants positive.
    pub fn plausibility_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in self.named() {
            if v <= 0.0 {
                out.push(format!("{name} = {v} is not positive"));
            }
        }
        if !(self.kappa_d < self.kappa_t && self.kappa_t < 50.0 * self.kappa_d) {
            out.push(format!(
                "kappa_t = {} outside the usual range (kappa_d, 50*kappa_d) = ({}, {})",
                self.kappa_t,
                self.kappa_d,
                50.0 * self.kappa_d
            ));
        }
        out
    }
}

/// A quantity per pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageBreakdown {
    pub encoder: f64,
    pub denoiser: f64,
    pub decoder: f64,
    pub total: f64,
}

impl StageBreakdown {
    pub fn new(encoder: f64, denoiser: f64, decoder: f64) -> Self {
        Self {
            encoder,
            denoiser,
            decoder,
            total: encoder + denoiser + decoder,
        }
    }

    pub fn stages(&self) -> [(Stage, f64); 3] {
        [
            (Stage::Encoder, self.encoder),
            (Stage::Denoiser, self.denoiser),
            (Stage::Decoder, self.decoder),
        ]
    }

    /// Elementwise `self / other`; `0/0` counts as 1.
    pub fn ratio(&self, other: &Self) -> Self {
        let r = |a: f64, b: f64| if a == b { 1.0 } else { a / b };
        Self {
            encoder: r(self.encoder, other.encoder),
            denoiser: r(self.denoiser, other.denoiser),
            decoder: r(self.decoder, other.decoder),
            total: r(self.total, other.total),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Encoder,
    Denoiser,
    Decoder,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Encoder => "encoder",
            Stage::Denoiser => "denoiser",
            Stage::Decoder => "decoder",
        })
    }
}

/// `κ_E·V`, `κ_T·V/(s_t·s_s²)`, `κ_D·V`.
pub fn flops_estimate(
    v: &VolumeSpec,
    s: &StrideSpec,
    c: &CodecConstants,
) -> Result<StageBreakdown> {
    let vol = v.voxels() as f64;
    let lat = s.latent_volume(v)?;
    Ok(StageBreakdown::new(
        c.kappa_e * vol,
        c.kappa_t * lat,
        c.kappa_d * vol,
    ))
}

/// Per-stage activation bytes and the stage holding the maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationEstimate {
    pub stages: StageBreakdown,
    pub max: f64,
    pub argmax: Stage,
}

/// `max{μ_E·V, μ_T·V/(s_t·s_s²), μ_D·V}`.
pub fn act_max_estimate(
    v: &VolumeSpec,
    s: &StrideSpec,
    c: &CodecConstants,
) -> Result<ActivationEstimate> {
    let vol = v.voxels() as f64;
    let stages = StageBreakdown::new(c.mu_e * vol, c.mu_t * s.latent_volume(v)?, c.mu_d * vol);
    let (argmax, max) =
        stages
            .stages()
            .into_iter()
            .fold((Stage::Encoder, f64::NEG_INFINITY), |best, x| {
                if x.1 > best.1 {
                    x
                } else {
                    best
                }
            });
    Ok(ActivationEstimate {
        stages,
        max,
        argmax,
    })
}

/// `(κ_D/κ_T)·s_t·s_s²`, decoder cost over denoiser cost.
pub fn dominance_ratio(s: &StrideSpec, c: &CodecConstants) -> Result<f64> {
    if !(c.kappa_t > 0.0) {
        return Err(CoreError::Degenerate(format!(
            "dominance ratio undefined for kappa_t = {}",
            c.kappa_t
        )));
    }
    Ok(c.kappa_d / c.kappa_t * s.divisor() as f64)
}

/// Exact integers below a tera-MAC, `x.xxx TMACs` above.
pub fn format_macs(x: f64) -> String {
    if x.abs() >= 1e12 {
        format!("{:.3} TMACs", x / 1e12)
    } else if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_strides() -> StrideSpec {
        StrideSpec::new(4, 8).unwrap()
    }

    #[test]
    fn hand_evaluated_breakdown() {
        let v = VolumeSpec::new(1, 16, 16).unwrap();
        let b = flops_estimate(&v, &paper_strides(), &CodecConstants::uniform(1.0)).unwrap();
        assert_eq!(b, StageBreakdown::new(256.0, 1.0, 256.0));
        assert_eq!(b.total, 513.0);
        let zero = flops_estimate(&v, &paper_strides(), &CodecConstants::uniform(0.0)).unwrap();
        assert_eq!(zero, StageBreakdown::default());
    }

    #[test]
    fn latent_divisor_for_paper_strides() {
        assert_eq!(paper_strides().divisor(), 256);
        let v = VolumeSpec::new(33, 720, 1280).unwrap();
        assert_eq!(
            paper_strides().latent_volume(&v).unwrap(),
            v.voxels() as f64 / 256.0
        );
        assert!(paper_strides()
            .latent_volume(&VolumeSpec::new(1, 8, 8).unwrap())
            .is_err());
    }

    #[test]
    fn dominance_examples() {
        let c = CodecConstants::uniform(1.0);
        assert_eq!(dominance_ratio(&paper_strides(), &c).unwrap(), 256.0);
        assert_eq!(
            dominance_ratio(&StrideSpec::new(1, 1).unwrap(), &c).unwrap(),
            1.0
        );
        let c10 = CodecConstants { kappa_t: 10.0, ..c };
        assert!((dominance_ratio(&paper_strides(), &c10).unwrap() - 25.6).abs() < 1e-12);
        let c0 = CodecConstants { kappa_t: 0.0, ..c };
        assert!(matches!(
            dominance_ratio(&paper_strides(), &c0),
            Err(CoreError::Degenerate(_))
        ));
    }

    #[test]
    fn activation_maximum() {
        let v = VolumeSpec::new(4, 16, 16).unwrap();
        let s = paper_strides();
        let c = CodecConstants::uniform(2.0);
        let a = act_max_estimate(&v, &s, &c).unwrap();
        assert_eq!(a.max, 2.0 * 1024.0);
        assert_ne!(a.argmax, Stage::Denoiser);

        // The denoiser wins exactly when μ_T > μ_D·s_t·s_s².
        let at = |mu_t| {
            act_max_estimate(&v, &s, &CodecConstants { mu_t, ..c })
                .unwrap()
                .argmax
        };
        assert_ne!(at(2.0 * 256.0), Stage::Denoiser);
        assert_eq!(at(2.0 * 256.0 + 1e-6), Stage::Denoiser);

        let unit = VolumeSpec::new(1, 1, 1).unwrap();
        let one = StrideSpec::new(1, 1).unwrap();
        let c = CodecConstants {
            mu_e: 3.0,
            mu_t: 7.0,
            mu_d: 5.0,
            ..c
        };
        let a = act_max_estimate(&unit, &one, &c).unwrap();
        assert_eq!((a.max, a.argmax), (7.0, Stage::Denoiser));
    }

    #[test]
    fn plausibility_is_a_warning() {
        let c = CodecConstants::uniform(1.0);
        assert_eq!(c.plausibility_warnings().len(), 1);
        let ok = CodecConstants { kappa_t: 10.0, ..c };
        assert!(ok.plausibility_warnings().is_empty());
        assert!(ok.validate().is_ok());
        assert!(CodecConstants { mu_e: -1.0, ..c }.validate().is_err());
    }

    #[test]
    fn mac_formatting() {
        assert_eq!(format_macs(513.0), "513");
        assert_eq!(format_macs(504.8e12), "504.800 TMACs");
    }
}
