use fvsr_tensor::{Graph, InterpMode, Rng, Scalar, Tensor, Var};

use super::{
    act_max_estimate, flops_estimate, ActivationEstimate, CodecConstants, Measurement,
    StageBreakdown, StrideSpec, VolumeSpec,
};
use crate::vae::{fan_in_uniform, Codec, VaeModel};
use crate::{CoreError, Result};

/// Full-scale total MAC ratio of the asymmetric to the symmetric pipeline
/// reported for 33×720×1280 video (125.7 vs 504.8 tera-MACs).
pub const PAPER_MAC_RATIO: f64 = 125.7 / 504.8;

/// One pipeline of the analytic comparison. `indirect` is the decoder's
/// extra upsampling `r`: the codec sees the output downscaled by `r` per
/// spatial axis. `κ_E`, `κ_T` are per codec-input voxel, `κ_D` per output voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub output: VolumeSpec,
    pub indirect: usize,
    pub strides: StrideSpec,
    pub constants: CodecConstants,
}

impl PipelineConfig {
    pub fn codec_input(&self) -> Result<VolumeSpec> {
        let r = self.indirect;
        let o = self.output;
        if r == 0 || o.h % r != 0 || o.w % r != 0 {
            return Err(CoreError::Config(format!(
                "output {o} not divisible by the indirect factor {r}"
            )));
        }
        VolumeSpec::new(o.t, o.h / r, o.w / r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineSide {
    pub codec_input: VolumeSpec,
    /// Latent cells processed by the denoiser.
    pub tokens: f64,
    pub macs: StageBreakdown,
    pub activations: ActivationEstimate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineReport {
    pub symmetric: PipelineSide,
    pub asymmetric: PipelineSide,
    /// Asymmetric over symmetric, per stage.
    pub mac_ratio: StageBreakdown,
    pub act_ratio: StageBreakdown,
    pub token_ratio: f64,
}

fn side(c: &PipelineConfig) -> Result<PipelineSide> {
    c.constants.validate()?;
    let input = c.codec_input()?;
    let front = flops_estimate(&input, &c.strides, &c.constants)?;
    let out = c.output.voxels() as f64;
    let macs = StageBreakdown::new(front.encoder, front.denoiser, c.constants.kappa_d * out);
    let front = act_max_estimate(&input, &c.strides, &c.constants)?;
    let stages = StageBreakdown::new(
        front.stages.encoder,
        front.stages.denoiser,
        c.constants.mu_d * out,
    );
    let (argmax, max) =
        stages
            .stages()
            .into_iter()
            .fold((front.argmax, f64::NEG_INFINITY), |best, x| {
                if x.1 > best.1 {
                    x
                } else {
                    best
                }
            });
    Ok(PipelineSide {
        codec_input: input,
        tokens: c.strides.latent_volume(&input)?,
        macs,
        activations: ActivationEstimate {
            stages,
            max,
            argmax,
        },
    })
}

/// Evaluates both pipelines at the output volume `v`.
pub fn compare_pipelines(
    v: &VolumeSpec,
    symmetric: &PipelineConfig,
    asymmetric: &PipelineConfig,
) -> Result<PipelineReport> {
    for (name, c) in [("symmetric", symmetric), ("asymmetric", asymmetric)] {
        if c.output != *v {
            return Err(CoreError::Contract(format!(
                "{name} pipeline targets {} but the comparison volume is {v}",
                c.output
            )));
        }
    }
    let s = side(symmetric)?;
    let a = side(asymmetric)?;
    Ok(PipelineReport {
        mac_ratio: a.macs.ratio(&s.macs),
        act_ratio: a.activations.stages.ratio(&s.activations.stages),
        token_ratio: a.tokens / s.tokens,
        symmetric: s,
        asymmetric: a,
    })
}

/// Stand-in for a one-step latent denoiser: a residual pair of 1×1
/// convolutions, so its cost is a constant per latent cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDenoiser<T: Scalar> {
    w1: Tensor<T>,
    b1: Tensor<T>,
    w2: Tensor<T>,
    b2: Tensor<T>,
}

impl<T: Scalar> ToyDenoiser<T> {
    pub fn new(latent_channels: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let (c, h) = (latent_channels, hidden);
        Self {
            w1: fan_in_uniform(&[h, c, 1, 1], c, &mut rng),
            b1: fan_in_uniform(&[h], c, &mut rng),
            w2: fan_in_uniform(&[c, h, 1, 1], h, &mut rng),
            b2: fan_in_uniform(&[c], h, &mut rng),
        }
    }

    pub fn forward_in(&self, g: &mut Graph<T>, z: Var) -> Result<Var> {
        let [w1, b1, w2, b2] = [&self.w1, &self.b1, &self.w2, &self.b2].map(|t| g.input(t.clone()));
        let h = g.conv2d(z, w1, Some(b1), 1, 0)?;
        let h = g.silu(h);
        let h = g.conv2d(h, w2, Some(b2), 1, 0)?;
        Ok(g.add(z, h)?)
    }
}

/// Instrumented run of explicit upsampling, encoder (posterior mean),
/// denoiser and decoder on one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasuredPipeline {
    pub upsample_macs: u64,
    /// Exact MAC counts per stage.
    pub macs: StageBreakdown,
    /// Bytes of activations produced per stage.
    pub activations: StageBreakdown,
    pub tokens: usize,
    pub codec_input: Vec<usize>,
    pub output: Vec<usize>,
}

impl MeasuredPipeline {
    pub fn total_macs(&self) -> f64 {
        self.upsample_macs as f64 + self.macs.total
    }

    /// Calibration point for a symmetric codec, with the codec input as
    /// the volume (upsampling excluded).
    pub fn measurement(&self, f_enc: usize) -> Result<Measurement> {
        let &[_, h, w] = self.codec_input.as_slice() else {
            return Err(CoreError::Contract("codec input must be [C, H, W]".into()));
        };
        Ok(Measurement {
            volume: VolumeSpec::new(1, h, w)?,
            strides: StrideSpec::new(1, f_enc)?,
            macs: self.macs,
            activations: self.activations,
        })
    }
}

pub fn measure_pipeline<T: Scalar>(
    model: &VaeModel<T>,
    denoiser: &ToyDenoiser<T>,
    lr: &Tensor<T>,
    explicit_factor: usize,
) -> Result<MeasuredPipeline> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let mut x = g.input(lr.clone());
    let mut marks = vec![(g.macs().total(), g.activation_bytes())];
    if explicit_factor > 1 {
        x = g.interpolate_upsample(x, explicit_factor, InterpMode::Bilinear)?;
    }
    let codec_input = g.shape(x).to_vec();
    marks.push((g.macs().total(), g.activation_bytes()));
    let (mean, _) = model.encode_in(&mut g, &p, x)?;
    marks.push((g.macs().total(), g.activation_bytes()));
    let z = denoiser.forward_in(&mut g, mean)?;
    marks.push((g.macs().total(), g.activation_bytes()));
    let y = model.decode_in(&mut g, &p, z)?;
    marks.push((g.macs().total(), g.activation_bytes()));

    let delta = |i: usize| {
        (
            (marks[i + 1].0 - marks[i].0) as f64,
            (marks[i + 1].1 - marks[i].1) as f64,
        )
    };
    let (enc, dn, dec) = (delta(1), delta(2), delta(3));
    Ok(MeasuredPipeline {
        upsample_macs: marks[1].0 - marks[0].0,
        macs: StageBreakdown::new(enc.0, dn.0, dec.0),
        activations: StageBreakdown::new(enc.1, dn.1, dec.1),
        tokens: g.shape(mean)[1..].iter().product(),
        codec_input,
        output: g.shape(y).to_vec(),
    })
}
