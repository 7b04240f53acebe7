use std::fmt;
use std::str::FromStr;

use fvsr_tensor::InterpMode;

use crate::{CoreError, Result};

/// Upsampling layer of the decoder head when `f_dec = 2·f_enc`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadVariant {
    PixelShuffle,
    Interp(InterpMode),
}

impl HeadVariant {
    pub const ALL: [HeadVariant; 4] = [
        HeadVariant::Interp(InterpMode::Nearest),
        HeadVariant::Interp(InterpMode::Bilinear),
        HeadVariant::Interp(InterpMode::Bicubic),
        HeadVariant::PixelShuffle,
    ];

    pub(crate) fn code(self) -> f64 {
        match self {
            HeadVariant::PixelShuffle => 0.0,
            HeadVariant::Interp(InterpMode::Nearest) => 1.0,
            HeadVariant::Interp(InterpMode::Bilinear) => 2.0,
            HeadVariant::Interp(InterpMode::Bicubic) => 3.0,
        }
    }

    pub(crate) fn from_code(code: f64) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|h| h.code() == code)
            .ok_or_else(|| CoreError::Config(format!("unknown head variant code {code}")))
    }
}

impl FromStr for HeadVariant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel_shuffle" => Ok(HeadVariant::PixelShuffle),
            "nearest" => Ok(HeadVariant::Interp(InterpMode::Nearest)),
            "bilinear" => Ok(HeadVariant::Interp(InterpMode::Bilinear)),
            "bicubic" => Ok(HeadVariant::Interp(InterpMode::Bicubic)),
            other => Err(CoreError::Config(format!(
                "unknown head variant `{other}` (expected pixel_shuffle, nearest, bilinear or bicubic)"
            ))),
        }
    }
}

impl fmt::Display for HeadVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadVariant::PixelShuffle => f.write_str("pixel_shuffle"),
            HeadVariant::Interp(m) => write!(f, "{m}"),
        }
    }
}

/// How the pixel-shuffle head obtains its 4× channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelExpand {
    Duplicate,
    Projection,
}

impl FromStr for ChannelExpand {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "duplicate" => Ok(ChannelExpand::Duplicate),
            "projection" => Ok(ChannelExpand::Projection),
            other => Err(CoreError::Config(format!(
                "unknown channel_expand `{other}` (expected duplicate or projection)"
            ))),
        }
    }
}

impl fmt::Display for ChannelExpand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelExpand::Duplicate => "duplicate",
            ChannelExpand::Projection => "projection",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VaeConfig {
    pub f_enc: usize,
    pub f_dec: usize,
    pub base_channels: usize,
    pub latent_channels: usize,
    pub head_variant: HeadVariant,
    pub channel_expand: ChannelExpand,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            f_enc: 8,
            f_dec: 8,
            base_channels: 8,
            latent_channels: 64,
            head_variant: HeadVariant::PixelShuffle,
            channel_expand: ChannelExpand::Duplicate,
        }
    }
}

pub const IMAGE_CHANNELS: usize = 3;

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("f_enc", self.f_enc), ("f_dec", self.f_dec)] {
            if f < 2 || !f.is_power_of_two() {
                return Err(CoreError::Config(format!(
                    "vae.{name} = {f} must be a power of two >= 2"
                )));
            }
        }
        if self.f_dec != self.f_enc && self.f_dec != 2 * self.f_enc {
            return Err(CoreError::Config(format!(
                "vae.f_dec / vae.f_enc must be 1 or 2, got {}/{}",
                self.f_dec, self.f_enc
            )));
        }
        if self.base_channels == 0 || self.latent_channels == 0 {
            return Err(CoreError::Config("vae channel counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Indirect upsampling ratio `r = f_dec / f_enc`.
    pub fn ratio(&self) -> usize {
        self.f_dec / self.f_enc
    }

    /// Number of stride-2 stages, `log2(f_enc)`.
    pub fn levels(&self) -> usize {
        self.f_enc.trailing_zeros() as usize
    }

    /// Feature width at encoder depth `level`: `c, 2c, 4c, 8c, ...`.
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// The same model with an f8-style symmetric decoder.
    pub fn symmetric(&self) -> Self {
        Self {
            f_dec: self.f_enc,
            ..*self
        }
    }

    pub(crate) fn to_words(self) -> Vec<f64> {
        vec![
            self.f_enc as f64,
            self.f_dec as f64,
            self.base_channels as f64,
            self.latent_channels as f64,
            self.head_variant.code(),
            match self.channel_expand {
                ChannelExpand::Duplicate => 0.0,
                ChannelExpand::Projection => 1.0,
            },
        ]
    }

    pub(crate) fn from_words(w: &[f64]) -> Result<Self> {
        let &[f_enc, f_dec, base, latent, head, expand] = w else {
            return Err(CoreError::Config(format!(
                "vae config header needs 6 words, got {}",
                w.len()
            )));
        };
        let cfg = Self {
            f_enc: f_enc as usize,
            f_dec: f_dec as usize,
            base_channels: base as usize,
            latent_channels: latent as usize,
            head_variant: HeadVariant::from_code(head)?,
            channel_expand: if expand == 0.0 {
                ChannelExpand::Duplicate
            } else {
                ChannelExpand::Projection
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
