use std::collections::BTreeSet;

use fvsr_tensor::{Graph, InterpMode, Rng, Scalar, Tensor};

use super::loss::{
    bound_noise, loss_f16_in, LossValues, LossWeights, PerceptualExtractor, Reduction,
};
use super::optim::{AdamW, AdamWConfig};
use crate::datametrics::container::{find, Entries};
use crate::datametrics::{psnr, ssim, AnyTensor};
use crate::vae::{
    draw_noise, free_energy_weighted_in, init_f16_from_f8, ChannelExpand, Codec, Group,
    HeadVariant, VaeConfig, VaeModel,
};
use crate::{CoreError, Result};

/// One training example: codec input (the LR frame after explicit
/// upsampling) and the HR target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T: Scalar> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
}

/// Explicit upsampling factor ahead of the codec: `scale / (f_dec / f_enc)`.
pub fn explicit_factor(scale: usize, vae: &VaeConfig) -> Result<usize> {
    let r = vae.ratio();
    if scale == 0 || scale % r != 0 {
        return Err(CoreError::Config(format!(
            "scale {scale} is not a multiple of the indirect factor {r}"
        )));
    }
    Ok(scale / r)
}

/// Codec input for an LR frame: bilinear upsampling by `factor` (identity for 1).
pub fn codec_input<T: Scalar>(lr: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 1 {
        return Ok(lr.clone());
    }
    Ok(fvsr_tensor::ops::interpolate_upsample(
        lr,
        factor,
        InterpMode::Bilinear,
    )?)
}

/// Inference: posterior mean of the frozen encoder, decoded by the f16 decoder.
pub fn super_resolve<T: Scalar>(
    theta: &VaeModel<T>,
    lr: &Tensor<T>,
    factor: usize,
) -> Result<Tensor<T>> {
    theta.reconstruct(&codec_input(lr, factor)?)
}

/// `[C, h, w]` window at `(y0, x0)`.
pub fn crop<T: Scalar>(
    t: &Tensor<T>,
    y0: usize,
    x0: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let (c, th, tw) = t.dims3("crop")?;
    if y0 + h > th || x0 + w > tw {
        return Err(CoreError::InputSize(format!(
            "crop {h}x{w} at ({y0}, {x0}) exceeds {th}x{tw}"
        )));
    }
    let src = t.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in y0..y0 + h {
            let row = (ch * th + y) * tw;
            out.extend_from_slice(&src[row + x0..row + x0 + w]);
        }
    }
    Ok(Tensor::new([c, h, w], out)?)
}

/// Draws `batch` random aligned crops; `target_crop == 0` takes whole samples.
pub fn sample_batch<T: Scalar>(
    data: &[Sample<T>],
    batch: usize,
    target_crop: usize,
    rng: &mut Rng,
) -> Result<Vec<Sample<T>>> {
    if data.is_empty() {
        return Err(CoreError::Contract("training set is empty".into()));
    }
    (0..batch)
        .map(|_| {
            let s = &data[rng.below(data.len())];
            if target_crop == 0 {
                return Ok(s.clone());
            }
            let (_, ih, iw) = s.input.dims3("sample")?;
            let (_, th, tw) = s.target.dims3("sample")?;
            if th % ih != 0 || target_crop % (th / ih) != 0 {
                return Err(CoreError::Config(format!(
                    "crop {target_crop} incompatible with input {ih}x{iw} and target {th}x{tw}"
                )));
            }
            let k = th / ih;
            let ic = target_crop / k;
            if ic > ih || ic > iw {
                return Err(CoreError::InputSize(format!(
                    "crop {target_crop} larger than target {th}x{tw}"
                )));
            }
            let y0 = rng.below(ih - ic + 1);
            let x0 = rng.below(iw - ic + 1);
            Ok(Sample {
                input: crop(&s.input, y0, x0, ic, ic)?,
                target: crop(&s.target, y0 * k, x0 * k, target_crop, target_crop)?,
            })
        })
        .collect()
}

fn sum_grads<T: Scalar>(
    acc: &mut Vec<Option<Tensor<T>>>,
    grads: Vec<Option<Tensor<T>>>,
) -> Result<()> {
    if acc.is_empty() {
        *acc = grads;
        return Ok(());
    }
    for (a, g) in acc.iter_mut().zip(grads) {
        if let (Some(a), Some(g)) = (a.as_mut(), g) {
            a.add_assign(&g)?;
        }
    }
    Ok(())
}

fn finish_grads<T: Scalar>(acc: &mut [Option<Tensor<T>>], n: usize) -> (f64, bool) {
    let inv = T::of(1.0 / n as f64);
    let mut sq = 0.0;
    let mut finite = true;
    for g in acc.iter_mut().flatten() {
        for x in g.data_mut() {
            *x = *x * inv;
        }
        finite &= g.is_finite();
        sq += g.sum_squares().as_f64();
    }
    (sq.sqrt(), finite && sq.is_finite())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    A,
    B,
    Val,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::A => "A",
            Stage::B => "B",
            Stage::Val => "val",
        })
    }
}

/// Result of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Batch means; for Stage B `rec` is the reconstruction NLL, `f_lb` the
    /// unweighted free energy and `total` the β-weighted objective.
    pub loss: LossValues,
    pub grad_norm: f64,
    /// Update withheld because a loss or gradient was non-finite.
    pub skipped: bool,
    pub clip_events: usize,
}

/// θ (f16), ψ (frozen reference), φ (lower bound) and their optimizers.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Scalar> {
    pub theta: VaeModel<T>,
    pub psi: VaeModel<T>,
    pub phi: VaeModel<T>,
    pub opt_theta: AdamW<T>,
    pub opt_phi: AdamW<T>,
    pub perceptual: PerceptualExtractor<T>,
    pub rng: Rng,
    /// Completed Stage-A steps.
    pub step: u64,
    /// Detached reconstructions of the latest Stage-A batch.
    pub pending: Vec<Tensor<T>>,
}

pub const ALL_GROUPS: [Group; 3] = [Group::Encoder, Group::Trunk, Group::Head];

impl<T: Scalar> TrainState<T> {
    /// θ from `psi` with a fresh head, φ a trainable copy of `psi`.
    pub fn new(psi: &VaeModel<T>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut psi = psi.clone();
        psi.frozen = ALL_GROUPS.into_iter().collect();
        let theta = init_f16_from_f8(&psi, cfg.head, cfg.expand, cfg.seed ^ 0x5eed_f16)?;
        let mut phi = psi.clone();
        phi.frozen = BTreeSet::new();
        Ok(Self {
            opt_theta: AdamW::new(cfg.opt_theta, &theta.params),
            opt_phi: AdamW::new(cfg.opt_phi, &phi.params),
            perceptual: PerceptualExtractor::new(cfg.perceptual_seed),
            rng: Rng::with_stream(cfg.seed, 1),
            step: 0,
            pending: Vec::new(),
            theta,
            psi,
            phi,
        })
    }

    pub fn to_entries(&self) -> Entries {
        let mut e = self.theta.to_entries("theta");
        e.extend(self.psi.to_entries("psi"));
        e.extend(self.phi.to_entries("phi"));
        e.extend(self.opt_theta.to_entries("opt_theta"));
        e.extend(self.opt_phi.to_entries("opt_phi"));
        let words = self.rng.state().to_words();
        e.push((
            "state.rng".into(),
            AnyTensor::F64(Tensor::new([words.len()], words).expect("rng words")),
        ));
        e.push((
            "state.step".into(),
            AnyTensor::F64(Tensor::scalar(self.step as f64)),
        ));
        e.push((
            "state.pending".into(),
            AnyTensor::F64(Tensor::scalar(self.pending.len() as f64)),
        ));
        for (i, y) in self.pending.iter().enumerate() {
            e.push((format!("state.pending.{i}"), AnyTensor::of(y)));
        }
        e
    }

    /// Restores a checkpoint; optimizer hyperparameters and the perceptual
    /// extractor come from `cfg`.
    pub fn from_entries(entries: &[(String, AnyTensor)], cfg: &TrainConfig) -> Result<Self> {
        let mut theta = VaeModel::from_entries("theta", entries)?;
        theta.frozen = BTreeSet::from([Group::Encoder]);
        let mut psi = VaeModel::from_entries("psi", entries)?;
        psi.frozen = ALL_GROUPS.into_iter().collect();
        let phi = VaeModel::from_entries("phi", entries)?;
        let mut opt_theta = AdamW::new(cfg.opt_theta, &theta.params);
        opt_theta.load_entries("opt_theta", entries)?;
        let mut opt_phi = AdamW::new(cfg.opt_phi, &phi.params);
        opt_phi.load_entries("opt_phi", entries)?;
        let words: Tensor<f64> = find(entries, "state.rng")?.to();
        let rng = Rng::from_state(&fvsr_tensor::RngState::from_words(words.data())?);
        let step: Tensor<f64> = find(entries, "state.step")?.to();
        let n: Tensor<f64> = find(entries, "state.pending")?.to();
        let pending = (0..n.item() as usize)
            .map(|i| find(entries, &format!("state.pending.{i}")).map(|t| t.to()))
            .collect::<Result<_>>()?;
        Ok(Self {
            theta,
            psi,
            phi,
            opt_theta,
            opt_phi,
            perceptual: PerceptualExtractor::new(cfg.perceptual_seed),
            rng,
            step: step.item() as u64,
            pending,
        })
    }
}

/// Stage A: update θ's decoder on `L_rec + λ_b·L_bound + λ_reg·R`, with ψ,
/// φ and the encoder held fixed. Leaves the detached reconstructions in
/// `state.pending`.
pub fn stage_a_step<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &[Sample<T>],
    w: &LossWeights,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(CoreError::Contract("stage A needs a nonempty batch".into()));
    }
    let mut acc = Vec::new();
    let mut sum = LossValues::default();
    let mut clip_events = 0;
    let mut finite = true;
    let mut pending = Vec::with_capacity(batch.len());
    for s in batch {
        let mut g = Graph::new();
        let p = state.theta.bind_train(&mut g);
        let x = g.input(s.input.clone());
        let (mean, _) = state.theta.encode_in(&mut g, &p, x)?;
        let y_hat = state.theta.decode_in(&mut g, &p, mean)?;
        let y_star = g.input(s.target.clone());
        let noise = if w.lambda_b != 0.0 {
            bound_noise(&state.psi, g.shape(y_hat), w, &mut state.rng)?
        } else {
            Vec::new()
        };
        let parts = loss_f16_in(
            &mut g,
            y_hat,
            y_star,
            &state.psi,
            &state.phi,
            &noise,
            w,
            &state.perceptual,
        )?;
        let v = parts.values(&g);
        clip_events += usize::from(v.clipped);
        pending.push(g.value(y_hat).clone());
        accumulate(&mut sum, &v);
        if !v.is_finite() {
            finite = false;
            continue;
        }
        let grads = g.backward(parts.total)?;
        sum_grads(&mut acc, p.grads(&g, &grads))?;
    }
    let n = batch.len();
    let loss = scale_values(sum, n);
    state.pending = pending;
    let (grad_norm, grads_finite) = if finite {
        finish_grads(&mut acc, n)
    } else {
        (f64::NAN, false)
    };
    let skipped = !(finite && grads_finite);
    if !skipped {
        state.opt_theta.update(&mut state.theta.params, &acc)?;
    }
    Ok(StepReport {
        loss,
        grad_norm,
        skipped,
        clip_events,
    })
}

/// Stage B: fit φ to the detached reconstructions with a β-weighted KL.
pub fn stage_b_step<T: Scalar>(
    state: &mut TrainState<T>,
    y_hat: &[Tensor<T>],
    w: &LossWeights,
) -> Result<StepReport> {
    if y_hat.is_empty() {
        return Err(CoreError::Contract("stage B needs a nonempty batch".into()));
    }
    let mut acc = Vec::new();
    let mut sum = LossValues::default();
    let mut finite = true;
    for y in y_hat {
        let mut g = Graph::new();
        let p = state.phi.bind_train(&mut g);
        let yv = g.input(y.clone());
        let shape = state.phi.latent_shape(y.shape())?;
        let noise = draw_noise(&shape, w.mc_samples, &mut state.rng);
        let fe = free_energy_weighted_in(&state.phi, &mut g, &p, yv, &noise, w.sigma_rec, w.beta)?;
        let objective = match w.bound_reduction {
            Reduction::Mean => g.scale(fe.total, 1.0 / y.numel() as f64),
            Reduction::Sum => fe.total,
        };
        let val = |v| g.value(v).item().as_f64();
        let v = LossValues {
            total: val(objective),
            rec: val(fe.recon_nll),
            f_lb: val(fe.recon_nll) + val(fe.kl),
            ..Default::default()
        };
        accumulate(&mut sum, &v);
        if !v.is_finite() || !v.f_lb.is_finite() {
            finite = false;
            continue;
        }
        let grads = g.backward(objective)?;
        sum_grads(&mut acc, p.grads(&g, &grads))?;
    }
    let n = y_hat.len();
    let mut loss = scale_values(sum, n);
    loss.f_ref = f64::NAN;
    let (grad_norm, grads_finite) = if finite {
        finish_grads(&mut acc, n)
    } else {
        (f64::NAN, false)
    };
    let skipped = !(finite && grads_finite);
    if !skipped {
        state.opt_phi.update(&mut state.phi.params, &acc)?;
    }
    Ok(StepReport {
        loss,
        grad_norm,
        skipped,
        clip_events: 0,
    })
}

fn accumulate(sum: &mut LossValues, v: &LossValues) {
    sum.total += v.total;
    sum.rec += v.rec;
    sum.bound += v.bound;
    sum.reg += v.reg;
    sum.f_ref += v.f_ref;
    sum.f_lb += v.f_lb;
    sum.clipped |= v.clipped;
}

fn scale_values(mut v: LossValues, n: usize) -> LossValues {
    let k = n as f64;
    for x in [
        &mut v.total,
        &mut v.rec,
        &mut v.bound,
        &mut v.reg,
        &mut v.f_ref,
        &mut v.f_lb,
    ] {
        *x /= k;
    }
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Total Stage-A steps.
    pub steps: u64,
    pub batch: usize,
    /// HR crop side for training batches; 0 uses whole frames.
    pub crop: usize,
    pub a_steps: usize,
    pub b_steps: usize,
    pub opt_theta: AdamWConfig,
    pub opt_phi: AdamWConfig,
    pub weights: LossWeights,
    pub head: HeadVariant,
    pub expand: ChannelExpand,
    /// Validate every this many Stage-A steps (0: only at the end).
    pub val_every: u64,
    /// Checkpoint every this many Stage-A steps (0: only at the end).
    pub ckpt_every: u64,
    pub seed: u64,
    pub perceptual_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 2,
            crop: 64,
            a_steps: 1,
            b_steps: 1,
            opt_theta: AdamWConfig {
                lr: 5e-4,
                ..Default::default()
            },
            opt_phi: AdamWConfig {
                lr: 5e-4,
                ..Default::default()
            },
            weights: LossWeights::default(),
            head: HeadVariant::PixelShuffle,
            expand: ChannelExpand::Duplicate,
            val_every: 250,
            ckpt_every: 250,
            seed: 0,
            perceptual_seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(CoreError::Config("train.batch must be >= 1".into()));
        }
        if self.a_steps == 0 {
            return Err(CoreError::Config("train.a_steps must be >= 1".into()));
        }
        self.opt_theta.validate()?;
        self.opt_phi.validate()?;
        self.weights.validate()
    }
}

/// One CSV log line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub stage: Stage,
    pub loss: LossValues,
    pub grad_norm: f64,
    pub psnr_val: f64,
    pub ssim_val: f64,
}

pub const CSV_HEADER: &str =
    "step,stage,loss_total,loss_rec,loss_bound,loss_reg,F_ref,F_lb,grad_norm,psnr_val,ssim_val";

fn cell(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

impl LogRow {
    fn from_report(step: u64, stage: Stage, r: &StepReport) -> Self {
        Self {
            step,
            stage,
            loss: r.loss,
            grad_norm: r.grad_norm,
            psnr_val: f64::NAN,
            ssim_val: f64::NAN,
        }
    }

    pub fn to_csv(&self) -> String {
        let l = &self.loss;
        let (bound, reg, f_ref) = match self.stage {
            Stage::A => (l.bound, l.reg, l.f_ref),
            _ => (f64::NAN, f64::NAN, f64::NAN),
        };
        let losses = match self.stage {
            Stage::Val => [f64::NAN; 3],
            _ => [l.total, l.rec, self.grad_norm],
        };
        let f_lb = if self.stage == Stage::Val {
            f64::NAN
        } else {
            l.f_lb
        };
        [
            self.step.to_string(),
            self.stage.to_string(),
            cell(losses[0]),
            cell(losses[1]),
            cell(bound),
            cell(reg),
            cell(f_ref),
            cell(f_lb),
            cell(losses[2]),
            cell(self.psnr_val),
            cell(self.ssim_val),
        ]
        .join(",")
    }
}

/// Mean PSNR and SSIM of θ's reconstructions over `val`, outputs clamped to [0, 1].
pub fn validate<T: Scalar>(theta: &VaeModel<T>, val: &[Sample<T>]) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for v in val {
        let out = theta
            .reconstruct(&v.input)?
            .cast::<f64>()
            .map(|x| x.clamp(0.0, 1.0));
        let hr = v.target.cast::<f64>();
        p += psnr(&out, &hr, 1.0)?;
        s += ssim(&out, &hr)?;
    }
    let n = val.len() as f64;
    Ok((p / n, s / n))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub skipped_steps: usize,
    pub clip_events: usize,
    pub non_finite: bool,
    pub psnr_val: f64,
    pub ssim_val: f64,
}

/// Alternating loop from `state.step` to `cfg.steps`: per cycle `a_steps`
/// Stage-A steps then `b_steps` Stage-B steps on the latest reconstructions.
/// Rows go to `on_row`; checkpoints are handed to `on_checkpoint` at cycle
/// ends that hit the interval, and always at the end.
pub fn train<T: Scalar>(
    state: &mut TrainState<T>,
    cfg: &TrainConfig,
    data: &[Sample<T>],
    val: &[Sample<T>],
    mut on_row: impl FnMut(&LogRow) -> Result<()>,
    mut on_checkpoint: impl FnMut(&TrainState<T>) -> Result<()>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if cfg.steps > 0 && data.is_empty() {
        return Err(CoreError::Contract("training set is empty".into()));
    }
    let mut summary = TrainSummary {
        psnr_val: f64::NAN,
        ssim_val: f64::NAN,
        ..Default::default()
    };
    let w = &cfg.weights;
    while state.step < cfg.steps {
        let batch = sample_batch(data, cfg.batch, cfg.crop, &mut state.rng)?;
        let report = stage_a_step(state, &batch, w)?;
        state.step += 1;
        let step = state.step;
        summary.skipped_steps += usize::from(report.skipped);
        summary.clip_events += report.clip_events;
        summary.non_finite |= !report.loss.is_finite();
        on_row(&LogRow::from_report(step, Stage::A, &report))?;

        if step % cfg.a_steps as u64 == 0 {
            let y_hat = std::mem::take(&mut state.pending);
            for _ in 0..cfg.b_steps {
                let report = stage_b_step(state, &y_hat, w)?;
                summary.skipped_steps += usize::from(report.skipped);
                summary.non_finite |= !report.loss.is_finite();
                on_row(&LogRow::from_report(step, Stage::B, &report))?;
            }
        }

        let last = step == cfg.steps;
        if last || (cfg.val_every > 0 && step % cfg.val_every == 0) {
            let (p, s) = validate(&state.theta, val)?;
            summary.psnr_val = p;
            summary.ssim_val = s;
            on_row(&LogRow {
                step,
                stage: Stage::Val,
                loss: LossValues::default(),
                grad_norm: f64::NAN,
                psnr_val: p,
                ssim_val: s,
            })?;
        }
        if !last && cfg.ckpt_every > 0 && step % cfg.ckpt_every == 0 {
            on_checkpoint(state)?;
        }
    }
    on_checkpoint(state)?;
    summary.steps = state.step;
    Ok(summary)
}

/// Settings for fitting the reference VAE ψ on HR data.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub vae: VaeConfig,
    pub steps: u64,
    pub batch: usize,
    pub crop: usize,
    pub sigma_rec: f64,
    pub opt: AdamWConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            vae: VaeConfig::default(),
            steps: 3000,
            batch: 4,
            crop: 32,
            sigma_rec: 0.05,
            opt: AdamWConfig {
                lr: 5e-4,
                ..Default::default()
            },
            seed: 0,
        }
    }
}

/// Trains an ordinary symmetric VAE on HR frames by minimizing the
/// per-pixel free energy. Returns the model and the per-step objective.
pub fn pretrain_reference<T: Scalar>(
    cfg: &PretrainConfig,
    frames: &[Tensor<T>],
) -> Result<(VaeModel<T>, Vec<f64>)> {
    cfg.vae.validate()?;
    cfg.opt.validate()?;
    if cfg.vae.f_dec != cfg.vae.f_enc {
        return Err(CoreError::Config("reference VAE must be symmetric".into()));
    }
    if cfg.steps > 0 && frames.is_empty() {
        return Err(CoreError::Contract("no frames to pretrain on".into()));
    }
    if cfg.crop % cfg.vae.f_enc != 0 {
        return Err(CoreError::Config(format!(
            "ref.crop {} must be a multiple of f_enc {}",
            cfg.crop, cfg.vae.f_enc
        )));
    }
    let mut model = VaeModel::new(cfg.vae, cfg.seed)?;
    let mut opt = AdamW::new(cfg.opt, &model.params);
    let mut rng = Rng::with_stream(cfg.seed, 2);
    let samples: Vec<Sample<T>> = frames
        .iter()
        .map(|f| Sample {
            input: f.clone(),
            target: f.clone(),
        })
        .collect();
    let mut history = Vec::with_capacity(cfg.steps as usize);
    for _ in 0..cfg.steps {
        let batch = sample_batch(&samples, cfg.batch, cfg.crop, &mut rng)?;
        let mut acc = Vec::new();
        let mut total = 0.0;
        for s in &batch {
            let mut g = Graph::new();
            let p = model.bind_train(&mut g);
            let y = g.input(s.input.clone());
            let noise = draw_noise(&model.latent_shape(s.input.shape())?, 1, &mut rng);
            let fe = free_energy_weighted_in(&model, &mut g, &p, y, &noise, cfg.sigma_rec, 1.0)?;
            let obj = g.scale(fe.total, 1.0 / s.input.numel() as f64);
            total += g.value(obj).item().as_f64();
            let grads = g.backward(obj)?;
            sum_grads(&mut acc, p.grads(&g, &grads))?;
        }
        let (_, finite) = finish_grads(&mut acc, batch.len());
        if finite {
            opt.update(&mut model.params, &acc)?;
        }
        history.push(total / batch.len() as f64);
    }
    Ok((model, history))
}
