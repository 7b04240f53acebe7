//! `key = value` run configuration with dotted section keys.
//!
//! Defaults, then the `--config` file, then command-line flags, then
//! `--set` overrides, in that order. Unknown keys are errors.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use fvsr_core::datametrics::{DatasetConfig, Split};
use fvsr_core::lbg::{AdamWConfig, PretrainConfig, TrainConfig};
use fvsr_core::vae::{ChannelExpand, HeadVariant, VaeConfig};

pub const SNAPSHOT: &str = "config.resolved";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => bail!("unknown precision `{other}` (expected f32 or f64)"),
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Where the profile command gets its codec constants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConstantsSource {
    Calibrate,
    File(PathBuf),
}

impl FromStr for ConstantsSource {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calibrate" => Ok(ConstantsSource::Calibrate),
            "" => bail!("empty constants source"),
            path => Ok(ConstantsSource::File(PathBuf::from(path))),
        }
    }
}

impl Display for ConstantsSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConstantsSource::Calibrate => f.write_str("calibrate"),
            ConstantsSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    /// `None` evaluates every clip.
    pub split: Option<Split>,
    pub dump: bool,
    /// HR side of the dumped crops.
    pub dump_crop: usize,
    /// Adds rows scoring HR against itself.
    pub include_hr: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSection {
    pub volume: (usize, usize, usize),
    pub strides: (usize, usize),
    pub constants: ConstantsSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructSection {
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    /// Total upscaling factor of the task.
    pub scale: usize,
    pub identity_head: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub precision: Precision,
    /// Dataset directory read by train and eval.
    pub data_dir: PathBuf,
    pub data: DatasetConfig,
    /// The f16 model; the reference is its symmetric counterpart.
    pub vae: VaeConfig,
    pub reference: PretrainConfig,
    pub train: TrainConfig,
    pub resume: bool,
    pub eval: EvalSection,
    pub profile: ProfileSection,
    pub reconstruct: ReconstructSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let vae = VaeConfig {
            f_dec: 16,
            ..Default::default()
        };
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            precision: Precision::F32,
            data_dir: PathBuf::from("data"),
            data: DatasetConfig::default(),
            vae,
            reference: PretrainConfig {
                vae: vae.symmetric(),
                ..Default::default()
            },
            train: TrainConfig::default(),
            resume: false,
            eval: EvalSection {
                checkpoint: None,
                split: Some(Split::Val),
                dump: false,
                dump_crop: 64,
                include_hr: false,
            },
            profile: ProfileSection {
                volume: (33, 720, 1280),
                strides: (4, 8),
                constants: ConstantsSource::Calibrate,
            },
            reconstruct: ReconstructSection {
                checkpoint: None,
                input: None,
                scale: 4,
                identity_head: false,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("invalid value `{value}` for `{key}`: expected true or false"),
    }
}

fn parse_list<const N: usize>(key: &str, value: &str) -> Result<[usize; N]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse(key, p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| anyhow!("`{key}` needs {N} comma-separated integers, got `{value}`"))
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

fn parse_opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "precision" => self.precision = parse(key, v)?,

            "data.dir" => self.data_dir = PathBuf::from(v),
            "data.count" => self.data.count = parse(key, v)?,
            "data.frames" => self.data.frames = parse(key, v)?,
            "data.height" => self.data.height = parse(key, v)?,
            "data.width" => self.data.width = parse(key, v)?,
            "data.val_clips" => self.data.val_clips = parse(key, v)?,
            "degrade.blur_sigma" => self.data.degrade.blur_sigma = parse(key, v)?,
            "degrade.downscale" => self.data.degrade.downscale = parse(key, v)?,
            "degrade.noise_sigma" => self.data.degrade.noise_sigma = parse(key, v)?,
            "degrade.quantize_levels" => {
                let l: u32 = parse(key, v)?;
                self.data.degrade.quantize_levels = (l > 0).then_some(l);
            }

            "vae.f_enc" => self.vae.f_enc = parse(key, v)?,
            "vae.f_dec" => self.vae.f_dec = parse(key, v)?,
            "vae.base_channels" => self.vae.base_channels = parse(key, v)?,
            "vae.latent_channels" => self.vae.latent_channels = parse(key, v)?,
            "vae.head_variant" => self.vae.head_variant = parse::<HeadVariant>(key, v)?,
            "vae.channel_expand" => self.vae.channel_expand = parse::<ChannelExpand>(key, v)?,

            "ref.steps" => self.reference.steps = parse(key, v)?,
            "ref.batch" => self.reference.batch = parse(key, v)?,
            "ref.crop" => self.reference.crop = parse(key, v)?,
            "ref.sigma_rec" => self.reference.sigma_rec = parse(key, v)?,
            "ref.lr" => self.reference.opt.lr = parse(key, v)?,

            "train.steps" => self.train.steps = parse(key, v)?,
            "train.batch" => self.train.batch = parse(key, v)?,
            "train.crop" => self.train.crop = parse(key, v)?,
            "train.a_steps" => self.train.a_steps = parse(key, v)?,
            "train.b_steps" => self.train.b_steps = parse(key, v)?,
            "train.lr_theta" => self.train.opt_theta.lr = parse(key, v)?,
            "train.lr_phi" => self.train.opt_phi.lr = parse(key, v)?,
            "train.beta1" => self.set_adam(|o| &mut o.beta1, key, v)?,
            "train.beta2" => self.set_adam(|o| &mut o.beta2, key, v)?,
            "train.eps" => self.set_adam(|o| &mut o.eps, key, v)?,
            "train.weight_decay" => self.set_adam(|o| &mut o.weight_decay, key, v)?,
            "train.val_every" => self.train.val_every = parse(key, v)?,
            "train.ckpt_every" => self.train.ckpt_every = parse(key, v)?,
            "train.perceptual_seed" => self.train.perceptual_seed = parse(key, v)?,
            "train.resume" => self.resume = parse_bool(key, v)?,

            "loss.lambda_mse" => self.train.weights.lambda_mse = parse(key, v)?,
            "loss.lambda_perc" => self.train.weights.lambda_perc = parse(key, v)?,
            "loss.lambda_b" => self.train.weights.lambda_b = parse(key, v)?,
            "loss.lambda_reg" => self.train.weights.lambda_reg = parse(key, v)?,
            "loss.beta" => self.train.weights.beta = parse(key, v)?,
            "loss.sigma_rec" => self.train.weights.sigma_rec = parse(key, v)?,
            "loss.mc_samples" => self.train.weights.mc_samples = parse(key, v)?,
            "loss.bound_clip" => self.train.weights.bound_clip = parse(key, v)?,
            "loss.rec_reduction" => self.train.weights.rec_reduction = parse(key, v)?,
            "loss.bound_reduction" => self.train.weights.bound_reduction = parse(key, v)?,

            "eval.checkpoint" => self.eval.checkpoint = parse_opt_path(v),
            "eval.split" => {
                self.eval.split = match v {
                    "all" => None,
                    s => Some(parse(key, s)?),
                }
            }
            "eval.dump" => self.eval.dump = parse_bool(key, v)?,
            "eval.dump_crop" => self.eval.dump_crop = parse(key, v)?,
            "eval.include_hr" => self.eval.include_hr = parse_bool(key, v)?,

            "profile.volume" => {
                let [t, h, w] = parse_list(key, v)?;
                self.profile.volume = (t, h, w);
            }
            "profile.strides" => {
                let [st, ss] = parse_list(key, v)?;
                self.profile.strides = (st, ss);
            }
            "profile.constants" => self.profile.constants = parse(key, v)?,

            "reconstruct.checkpoint" => self.reconstruct.checkpoint = parse_opt_path(v),
            "reconstruct.input" => self.reconstruct.input = parse_opt_path(v),
            "reconstruct.scale" => self.reconstruct.scale = parse(key, v)?,
            "reconstruct.identity_head" => self.reconstruct.identity_head = parse_bool(key, v)?,

            _ => bail!("unknown configuration key `{key}`"),
        }
        Ok(())
    }

    /// Optimizer moments are shared by θ and φ.
    fn set_adam(
        &mut self,
        field: fn(&mut AdamWConfig) -> &mut f64,
        key: &str,
        v: &str,
    ) -> Result<()> {
        let x: f64 = parse(key, v)?;
        *field(&mut self.train.opt_theta) = x;
        *field(&mut self.train.opt_phi) = x;
        Ok(())
    }

    /// Every key with its current value, in snapshot order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (d, t, w, r) = (
            &self.data,
            &self.train,
            &self.train.weights,
            &self.reference,
        );
        let (pv, ps) = (self.profile.volume, self.profile.strides);
        vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("precision", self.precision.to_string()),
            ("data.dir", self.data_dir.display().to_string()),
            ("data.count", d.count.to_string()),
            ("data.frames", d.frames.to_string()),
            ("data.height", d.height.to_string()),
            ("data.width", d.width.to_string()),
            ("data.val_clips", d.val_clips.to_string()),
            ("degrade.blur_sigma", d.degrade.blur_sigma.to_string()),
            ("degrade.downscale", d.degrade.downscale.to_string()),
            ("degrade.noise_sigma", d.degrade.noise_sigma.to_string()),
            (
                "degrade.quantize_levels",
                d.degrade.quantize_levels.unwrap_or(0).to_string(),
            ),
            ("vae.f_enc", self.vae.f_enc.to_string()),
            ("vae.f_dec", self.vae.f_dec.to_string()),
            ("vae.base_channels", self.vae.base_channels.to_string()),
            ("vae.latent_channels", self.vae.latent_channels.to_string()),
            ("vae.head_variant", self.vae.head_variant.to_string()),
            ("vae.channel_expand", self.vae.channel_expand.to_string()),
            ("ref.steps", r.steps.to_string()),
            ("ref.batch", r.batch.to_string()),
            ("ref.crop", r.crop.to_string()),
            ("ref.sigma_rec", r.sigma_rec.to_string()),
            ("ref.lr", r.opt.lr.to_string()),
            ("train.steps", t.steps.to_string()),
            ("train.batch", t.batch.to_string()),
            ("train.crop", t.crop.to_string()),
            ("train.a_steps", t.a_steps.to_string()),
            ("train.b_steps", t.b_steps.to_string()),
            ("train.lr_theta", t.opt_theta.lr.to_string()),
            ("train.lr_phi", t.opt_phi.lr.to_string()),
            ("train.beta1", t.opt_theta.beta1.to_string()),
            ("train.beta2", t.opt_theta.beta2.to_string()),
            ("train.eps", t.opt_theta.eps.to_string()),
            ("train.weight_decay", t.opt_theta.weight_decay.to_string()),
            ("train.val_every", t.val_every.to_string()),
            ("train.ckpt_every", t.ckpt_every.to_string()),
            ("train.perceptual_seed", t.perceptual_seed.to_string()),
            ("train.resume", self.resume.to_string()),
            ("loss.lambda_mse", w.lambda_mse.to_string()),
            ("loss.lambda_perc", w.lambda_perc.to_string()),
            ("loss.lambda_b", w.lambda_b.to_string()),
            ("loss.lambda_reg", w.lambda_reg.to_string()),
            ("loss.beta", w.beta.to_string()),
            ("loss.sigma_rec", w.sigma_rec.to_string()),
            ("loss.mc_samples", w.mc_samples.to_string()),
            ("loss.bound_clip", w.bound_clip.to_string()),
            ("loss.rec_reduction", w.rec_reduction.to_string()),
            ("loss.bound_reduction", w.bound_reduction.to_string()),
            ("eval.checkpoint", opt_path(&self.eval.checkpoint)),
            (
                "eval.split",
                self.eval.split.map_or("all".into(), |s| s.to_string()),
            ),
            ("eval.dump", self.eval.dump.to_string()),
            ("eval.dump_crop", self.eval.dump_crop.to_string()),
            ("eval.include_hr", self.eval.include_hr.to_string()),
            ("profile.volume", format!("{},{},{}", pv.0, pv.1, pv.2)),
            ("profile.strides", format!("{},{}", ps.0, ps.1)),
            ("profile.constants", self.profile.constants.to_string()),
            (
                "reconstruct.checkpoint",
                opt_path(&self.reconstruct.checkpoint),
            ),
            ("reconstruct.input", opt_path(&self.reconstruct.input)),
            ("reconstruct.scale", self.reconstruct.scale.to_string()),
            (
                "reconstruct.identity_head",
                self.reconstruct.identity_head.to_string(),
            ),
        ]
    }

    /// Applies a `key = value` document; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected `key = value`", i + 1))?;
            self.set(k.trim(), v)
                .with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// `key=value` override from the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects key=value, got `{kv}`"))?;
        self.set(k.trim(), v)
    }

    /// Propagates shared settings into the per-module configs and
    /// validates them.
    pub fn resolve(&mut self) -> Result<()> {
        self.data.seed = self.seed;
        self.train.seed = self.seed;
        self.reference.seed = self.seed;
        self.reference.vae = self.vae.symmetric();
        self.train.head = self.vae.head_variant;
        self.train.expand = self.vae.channel_expand;
        self.vae.validate()?;
        if self.vae.f_dec != 2 * self.vae.f_enc {
            bail!(
                "vae.f_dec = {} must be twice vae.f_enc = {} (the f16 decoder upsamples 2x indirectly)",
                self.vae.f_dec,
                self.vae.f_enc
            );
        }
        self.data.validate()?;
        self.train.validate()?;
        self.reference.opt.validate()?;
        Ok(())
    }

    pub fn snapshot(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let path = dir.join(SNAPSHOT);
        fs::write(&path, self.snapshot()).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("loss.beta = 2.5 # sharper\ntrain.steps=7\neval.split = all\nvae.head_variant = bicubic", "t")
            .unwrap();
        cfg.resolve().unwrap();
        let mut again = RunConfig::default();
        again.apply_text(&cfg.snapshot(), "snapshot").unwrap();
        again.resolve().unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.train.weights.beta, 2.5);
        assert_eq!(again.eval.split, None);
    }

    #[test]
    fn every_key_is_settable() {
        let mut cfg = RunConfig::default();
        for (k, v) in RunConfig::default().entries() {
            cfg.set(k, &v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("loss.lambda_x", "1").is_err());
        assert!(cfg.set("train.steps", "many").is_err());
        assert!(cfg.apply_text("just words", "t").is_err());
        assert!(cfg.apply_override("loss.beta").is_err());
        cfg.set("loss.beta", "0.5").unwrap();
        assert!(cfg.resolve().is_err());
    }
}
