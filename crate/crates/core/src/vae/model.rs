use std::collections::BTreeSet;

use fvsr_tensor::{Graph, InterpMode, Rng, Scalar, Tensor, Var};

use super::config::{ChannelExpand, HeadVariant, VaeConfig, IMAGE_CHANNELS};
use super::params::{Bound, Group, ParamStore};
use crate::datametrics::AnyTensor;
use crate::{CoreError, Result};

pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 20.0;

/// Diagonal Gaussian posterior `q(z|y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDist<T: Scalar> {
    pub mean: Tensor<T>,
    pub logvar: Tensor<T>,
}

/// Anything with an encoder `q(z|y)` and a decoder mean `ŷ(z)` that can be
/// placed on a tape.
pub trait Codec<T: Scalar> {
    /// Binds parameters; with `trainable = false` every parameter is a constant.
    fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound;

    /// Posterior `(mean, logvar)`, logvar already clamped.
    fn encode_in(&self, g: &mut Graph<T>, p: &Bound, y: Var) -> Result<(Var, Var)>;

    fn decode_in(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var>;

    fn latent_shape(&self, input: &[usize]) -> Result<Vec<usize>>;
}

/// Convolutional encoder/decoder pair.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel<T: Scalar> {
    pub config: VaeConfig,
    pub params: ParamStore<T>,
    pub frozen: BTreeSet<Group>,
}

fn conv<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = p.var(&format!("{name}.w"));
    let b = p.var(&format!("{name}.b"));
    let pad = g.shape(w)[3] / 2;
    let x = if pad > 0 { g.pad_replicate(x, pad)? } else { x };
    Ok(g.conv2d(x, w, Some(b), stride, 0)?)
}

/// `x + conv(silu(x))`.
fn residual<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let a = g.silu(x);
    let h = conv(g, p, name, a, 1)?;
    Ok(g.add(x, h)?)
}

const RES_PER_LEVEL: usize = 2;

impl<T: Scalar> VaeModel<T> {
    /// Fresh model with fan-in uniform initialization; nothing frozen.
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut params = ParamStore::new();
        let c = |l| config.channels_at(l);
        let levels = config.levels();

        params.add_conv("enc.in", Group::Encoder, IMAGE_CHANNELS, c(0), 3, &mut rng);
        for l in 0..levels {
            for j in 0..RES_PER_LEVEL {
                params.add_conv(
                    &format!("enc.{l}.res{j}"),
                    Group::Encoder,
                    c(l),
                    c(l),
                    3,
                    &mut rng,
                );
            }
            params.add_conv(
                &format!("enc.{l}.down"),
                Group::Encoder,
                c(l),
                c(l + 1),
                3,
                &mut rng,
            );
        }
        params.add_conv(
            "enc.out",
            Group::Encoder,
            c(levels),
            2 * config.latent_channels,
            3,
            &mut rng,
        );

        params.add_conv(
            "dec.in",
            Group::Trunk,
            config.latent_channels,
            c(levels),
            3,
            &mut rng,
        );
        for l in 0..levels {
            let (cin, cout) = (c(levels - l), c(levels - l - 1));
            for j in 0..RES_PER_LEVEL {
                params.add_conv(
                    &format!("dec.{l}.res{j}"),
                    Group::Trunk,
                    cin,
                    cin,
                    3,
                    &mut rng,
                );
            }
            params.add_conv(&format!("dec.{l}.up"), Group::Trunk, cin, cout, 3, &mut rng);
        }
        let mut model = Self {
            config,
            params,
            frozen: BTreeSet::new(),
        };
        model.add_head(&mut rng);
        Ok(model)
    }

    fn add_head(&mut self, rng: &mut Rng) {
        let c = self.config.base_channels;
        self.params
            .add_conv("dec.out", Group::Head, c, IMAGE_CHANNELS, 3, rng);
        if self.has_projection() {
            self.params
                .add_conv("dec.proj", Group::Head, c, 4 * c, 1, rng);
        }
    }

    fn has_projection(&self) -> bool {
        self.config.ratio() == 2
            && self.config.head_variant == HeadVariant::PixelShuffle
            && self.config.channel_expand == ChannelExpand::Projection
    }

    /// Groups that receive gradient when training this model.
    pub fn trainable_groups(&self) -> BTreeSet<Group> {
        [Group::Encoder, Group::Trunk, Group::Head]
            .into_iter()
            .filter(|g| !self.frozen.contains(g))
            .collect()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[c, h, w] = shape else {
            return Err(CoreError::InputSize(format!(
                "expected [3, H, W] input, got {shape:?}"
            )));
        };
        let f = self.config.f_enc;
        if c != IMAGE_CHANNELS || h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            let pad = |n: usize| (f - n % f) % f;
            return Err(CoreError::InputSize(format!(
                "input {c}x{h}x{w} must be 3 channels with spatial dims divisible by f_enc={f}; pad by ({}, {}) pixels",
                pad(h),
                pad(w)
            )));
        }
        Ok(())
    }

    /// Decoder features before the head, `[base_channels, f_enc·h, f_enc·w]`.
    pub fn trunk_in(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        let shape = g.shape(z);
        if shape.len() != 3 || shape[0] != self.config.latent_channels {
            return Err(CoreError::Contract(format!(
                "latent {:?} does not match {} latent channels",
                shape, self.config.latent_channels
            )));
        }
        let levels = self.config.levels();
        let mut x = conv(g, p, "dec.in", z, 1)?;
        for l in 0..levels {
            for j in 0..RES_PER_LEVEL {
                x = residual(g, p, &format!("dec.{l}.res{j}"), x)?;
            }
            x = g.interpolate_upsample(x, 2, InterpMode::Nearest)?;
            x = conv(g, p, &format!("dec.{l}.up"), x, 1)?;
        }
        Ok(g.silu(x))
    }

    /// Head applied to trunk features.
    pub fn head_in(&self, g: &mut Graph<T>, p: &Bound, features: Var) -> Result<Var> {
        let x = if self.config.ratio() == 1 {
            features
        } else {
            match self.config.head_variant {
                HeadVariant::PixelShuffle => {
                    let wide = match self.config.channel_expand {
                        ChannelExpand::Duplicate => g.repeat_channels(features, 4)?,
                        ChannelExpand::Projection => conv(g, p, "dec.proj", features, 1)?,
                    };
                    g.pixel_shuffle(wide, 2)?
                }
                HeadVariant::Interp(mode) => g.interpolate_upsample(features, 2, mode)?,
            }
        };
        conv(g, p, "dec.out", x, 1)
    }

    /// Binds parameters honoring the frozen mask.
    pub fn bind_train(&self, g: &mut Graph<T>) -> Bound {
        self.params.bind(g, &self.trainable_groups())
    }

    pub fn encode(&self, y: &Tensor<T>) -> Result<LatentDist<T>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let yv = g.input(y.clone());
        let (m, lv) = self.encode_in(&mut g, &p, yv)?;
        Ok(LatentDist {
            mean: g.value(m).clone(),
            logvar: g.value(lv).clone(),
        })
    }

    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let zv = g.input(z.clone());
        let y = self.decode_in(&mut g, &p, zv)?;
        Ok(g.value(y).clone())
    }

    /// Trunk output for latent `z`, outside any training graph.
    pub fn trunk_features(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let zv = g.input(z.clone());
        let f = self.trunk_in(&mut g, &p, zv)?;
        Ok(g.value(f).clone())
    }

    /// Deterministic inference: decode of the posterior mean.
    pub fn reconstruct(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let dist = self.encode(y)?;
        self.decode(&dist.mean)
    }

    /// Test hook: zeroes the encoder's output layer so the posterior mean
    /// and log-variance are identically zero.
    pub fn zero_encoder_head(&mut self) {
        for name in ["enc.out.w", "enc.out.b"] {
            self.params
                .get_mut(name)
                .expect("encoder head")
                .data_mut()
                .fill(T::zero());
        }
    }

    /// Test hook: zeroes every head weight, leaving biases.
    pub fn zero_head_weights(&mut self) {
        for p in self.params.iter_mut() {
            if p.group == Group::Head && p.name.ends_with(".w") {
                p.value.data_mut().fill(T::zero());
            }
        }
    }

    /// Test hook: output convolution copies trunk channels `0..3` through
    /// its centre tap with zero bias.
    pub fn identity_head(&mut self) -> Result<()> {
        let c = self.config.base_channels;
        if c < IMAGE_CHANNELS {
            return Err(CoreError::Config(format!(
                "identity head needs base_channels >= 3, got {c}"
            )));
        }
        let w = self.params.get_mut("dec.out.w").expect("output conv");
        let data = w.data_mut();
        data.fill(T::zero());
        for o in 0..IMAGE_CHANNELS {
            data[((o * c + o) * 3 + 1) * 3 + 1] = T::one();
        }
        self.params
            .get_mut("dec.out.b")
            .expect("output bias")
            .data_mut()
            .fill(T::zero());
        Ok(())
    }

    /// Checkpoint entries: parameters plus a `prefix.config` header.
    pub fn to_entries(&self, prefix: &str) -> Vec<(String, AnyTensor)> {
        let words = self.config.to_words();
        let header = Tensor::new([words.len()], words).expect("config header");
        let mut entries = vec![(format!("{prefix}.config"), AnyTensor::F64(header))];
        entries.extend(self.params.to_entries(prefix));
        entries
    }

    pub fn from_entries(prefix: &str, entries: &[(String, AnyTensor)]) -> Result<Self> {
        let header: Tensor<f64> =
            crate::datametrics::container::find(entries, &format!("{prefix}.config"))?.to();
        let config = VaeConfig::from_words(header.data())?;
        let mut model = Self::new(config, 0)?;
        model.params.load_entries(prefix, entries)?;
        Ok(model)
    }

    pub fn cast<U: Scalar>(&self) -> VaeModel<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            params.insert(p.name.clone(), p.group, p.value.cast());
        }
        VaeModel {
            config: self.config,
            params,
            frozen: self.frozen.clone(),
        }
    }
}

impl<T: Scalar> Codec<T> for VaeModel<T> {
    fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        if trainable {
            self.bind_train(g)
        } else {
            self.params.bind(g, &BTreeSet::new())
        }
    }

    fn encode_in(&self, g: &mut Graph<T>, p: &Bound, y: Var) -> Result<(Var, Var)> {
        self.check_input(g.shape(y))?;
        let levels = self.config.levels();
        let mut x = conv(g, p, "enc.in", y, 1)?;
        for l in 0..levels {
            for j in 0..RES_PER_LEVEL {
                x = residual(g, p, &format!("enc.{l}.res{j}"), x)?;
            }
            x = conv(g, p, &format!("enc.{l}.down"), x, 2)?;
        }
        let a = g.silu(x);
        let out = conv(g, p, "enc.out", a, 1)?;
        let l = self.config.latent_channels;
        let mean = g.slice_channels(out, 0, l)?;
        let raw = g.slice_channels(out, l, l)?;
        Ok((mean, g.clamp(raw, LOGVAR_MIN, LOGVAR_MAX)))
    }

    fn decode_in(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        let features = self.trunk_in(g, p, z)?;
        self.head_in(g, p, features)
    }

    fn latent_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.check_input(input)?;
        let f = self.config.f_enc;
        Ok(vec![
            self.config.latent_channels,
            input[1] / f,
            input[2] / f,
        ])
    }
}

/// Builds the f16 model: encoder and trunk copied from `f8`, a fresh head
/// for `head`/`expand` drawn with `seed`, encoder frozen.
pub fn init_f16_from_f8<T: Scalar>(
    f8: &VaeModel<T>,
    head: HeadVariant,
    expand: ChannelExpand,
    seed: u64,
) -> Result<VaeModel<T>> {
    if f8.config.f_dec != f8.config.f_enc {
        return Err(CoreError::Config(format!(
            "source model must be symmetric, got f_enc={} f_dec={}",
            f8.config.f_enc, f8.config.f_dec
        )));
    }
    let config = VaeConfig {
        f_dec: 2 * f8.config.f_enc,
        head_variant: head,
        channel_expand: expand,
        ..f8.config
    };
    let mut params = ParamStore::new();
    for p in f8.params.iter().filter(|p| p.group != Group::Head) {
        params.insert(p.name.clone(), p.group, p.value.clone());
    }
    let mut model = VaeModel {
        config,
        params,
        frozen: BTreeSet::from([Group::Encoder]),
    };
    let mut rng = Rng::new(seed);
    model.add_head(&mut rng);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(f_dec: usize) -> VaeConfig {
        VaeConfig {
            f_dec,
            base_channels: 4,
            latent_channels: 4,
            ..Default::default()
        }
    }

    #[test]
    fn encode_geometry() {
        let m = VaeModel::<f32>::new(small(8), 1).unwrap();
        let y = Tensor::zeros([3, 64, 64]);
        let d = m.encode(&y).unwrap();
        assert_eq!(d.mean.shape(), &[4, 8, 8]);
        assert_eq!(d.logvar.shape(), &[4, 8, 8]);
        match m.encode(&Tensor::zeros([3, 60, 64])) {
            Err(CoreError::InputSize(msg)) => assert!(msg.contains("pad by (4, 0)"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decode_geometry() {
        let z = Tensor::zeros([4, 8, 8]);
        let f8 = VaeModel::<f32>::new(small(8), 1).unwrap();
        assert_eq!(f8.decode(&z).unwrap().shape(), &[3, 64, 64]);
        for head in HeadVariant::ALL {
            for expand in [ChannelExpand::Duplicate, ChannelExpand::Projection] {
                let f16 = init_f16_from_f8(&f8, head, expand, 3).unwrap();
                assert_eq!(f16.decode(&z).unwrap().shape(), &[3, 128, 128]);
            }
        }
        assert!(f8.decode(&Tensor::zeros([5, 8, 8])).is_err());
    }

    #[test]
    fn zero_encoder_head_gives_zero_mean() {
        let mut m = VaeModel::<f64>::new(small(8), 2).unwrap();
        m.zero_encoder_head();
        let d = m.encode(&Tensor::zeros([3, 16, 16])).unwrap();
        assert!(d.mean.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_is_deterministic() {
        let m = VaeModel::<f64>::new(small(8), 2).unwrap();
        let y = Tensor::uniform([3, 16, 24], 0.0, 1.0, &mut Rng::new(5));
        let (a, b) = (m.encode(&y).unwrap(), m.encode(&y).unwrap());
        assert_eq!(a.mean.checksum(), b.mean.checksum());
        assert_eq!(a.logvar.checksum(), b.logvar.checksum());
    }

    #[test]
    fn f16_init_copies_trunk_and_freezes_encoder() {
        let f8 = VaeModel::<f32>::new(small(8), 7).unwrap();
        let a = init_f16_from_f8(
            &f8,
            HeadVariant::PixelShuffle,
            ChannelExpand::Projection,
            11,
        )
        .unwrap();
        let b = init_f16_from_f8(
            &f8,
            HeadVariant::PixelShuffle,
            ChannelExpand::Projection,
            11,
        )
        .unwrap();
        for p in f8.params.iter().filter(|p| p.group != Group::Head) {
            assert_eq!(a.params.get(&p.name).unwrap(), &p.value);
        }
        assert_eq!(
            a.params.checksum(&[Group::Head]),
            b.params.checksum(&[Group::Head])
        );
        assert!(a.frozen.contains(&Group::Encoder));
        assert_eq!(
            a.trainable_groups(),
            BTreeSet::from([Group::Trunk, Group::Head])
        );
        assert!(
            init_f16_from_f8(&a, HeadVariant::PixelShuffle, ChannelExpand::Duplicate, 0).is_err()
        );
    }

    #[test]
    fn zero_head_outputs_bias() {
        let f8 = VaeModel::<f64>::new(small(8), 7).unwrap();
        let mut m =
            init_f16_from_f8(&f8, HeadVariant::PixelShuffle, ChannelExpand::Projection, 1).unwrap();
        m.zero_head_weights();
        let bias = m.params.get("dec.out.b").unwrap().clone();
        let z = Tensor::randn([4, 2, 2], &mut Rng::new(0));
        let y = m.decode(&z).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, bias.data()[i / (32 * 32)]);
        }
    }

    #[test]
    fn duplicate_shuffle_head_is_nearest_upsampling() {
        let f8 = VaeModel::<f64>::new(small(8), 3).unwrap();
        let ps =
            init_f16_from_f8(&f8, HeadVariant::PixelShuffle, ChannelExpand::Duplicate, 9).unwrap();
        let nn = init_f16_from_f8(
            &f8,
            HeadVariant::Interp(InterpMode::Nearest),
            ChannelExpand::Duplicate,
            9,
        )
        .unwrap();
        let z = Tensor::randn([4, 2, 3], &mut Rng::new(1));
        assert_eq!(ps.decode(&z).unwrap(), nn.decode(&z).unwrap());

        let mut id = ps.clone();
        id.identity_head().unwrap();
        let feats = id.trunk_features(&z).unwrap().slice_channels(0, 3).unwrap();
        let expected =
            fvsr_tensor::ops::interpolate_upsample(&feats, 2, InterpMode::Nearest).unwrap();
        assert_eq!(id.decode(&z).unwrap(), expected);
    }

    #[test]
    fn entries_round_trip() {
        let m = VaeModel::<f32>::new(small(16), 4).unwrap();
        let back = VaeModel::<f32>::from_entries("theta", &m.to_entries("theta")).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config, m.config);
    }
}
