//! Synthetic clips, degradation, image files and quality metrics.

mod clip;
pub mod container;
mod dataset;
mod degrade;
mod metrics;
pub mod pnm;

pub use clip::{shift_wrap, synth_clip, synth_clip_with, Clip, ClipKind, SynthOptions};
pub use container::{load_tensors, save_tensors, AnyTensor};
pub use dataset::{
    clip_seed, generate_clip, load_split, plan, read_manifest, write_dataset, ClipPair, ClipRecord,
    DatasetConfig, Split, MANIFEST,
};
pub use degrade::{blur, box_downsample, degrade, gaussian_kernel, DegradeParams};
pub use metrics::{mse, psnr, ssim, ssim_with, warp, warp_error, SsimParams};
pub use pnm::{load_pnm, save_pnm};

use std::path::Path;

use fvsr_tensor::Tensor;

use crate::{CoreError, Result};

/// Stores a clip as `frames` (+ `flow`) entries of a container, at 64-bit.
pub fn save_clip(path: impl AsRef<Path>, clip: &Clip) -> Result<()> {
    let mut entries = vec![("frames".to_string(), AnyTensor::F64(clip.frames.clone()))];
    if let Some(flow) = &clip.flow {
        entries.push(("flow".into(), AnyTensor::F64(flow.clone())));
    }
    save_tensors(path, &entries)
}

pub fn load_clip(path: impl AsRef<Path>) -> Result<Clip> {
    let entries = load_tensors(path)?;
    let frames: Tensor<f64> = container::find(&entries, "frames")?.to();
    let flow = entries
        .iter()
        .find(|(n, _)| n == "flow")
        .map(|(_, t)| t.to());
    let clip = Clip::new(frames, flow)?;
    if !clip.frames.data().iter().all(|v| (0.0..=1.0).contains(v)) {
        return Err(CoreError::Contract("clip values outside [0, 1]".into()));
    }
    Ok(clip)
}
