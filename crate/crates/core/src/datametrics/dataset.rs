use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{degrade, load_clip, save_clip, synth_clip, Clip, ClipKind, DegradeParams};
use crate::{CoreError, Result};

pub const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "id,kind,seed,split,hr,lr";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// The last `val_clips` clips form the validation split.
    pub val_clips: usize,
    pub degrade: DegradeParams,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 64,
            frames: 4,
            height: 128,
            width: 128,
            val_clips: 8,
            degrade: DegradeParams::default(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.degrade.validate()?;
        if self.val_clips > self.count {
            return Err(CoreError::Config(format!(
                "data.val_clips = {} exceeds data.count = {}",
                self.val_clips, self.count
            )));
        }
        let f = self.degrade.downscale;
        if self.height % f != 0 || self.width % f != 0 {
            return Err(CoreError::Config(format!(
                "data size {}x{} is not divisible by degrade.downscale = {f}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl std::str::FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(CoreError::Config(format!(
                "unknown split `{other}` (expected train or val)"
            ))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// One manifest line; clip files are relative to the dataset directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub id: usize,
    pub kind: ClipKind,
    pub seed: u64,
    pub split: Split,
    pub hr: PathBuf,
    pub lr: PathBuf,
}

/// Per-clip seed: kinds cycle with the index, seeds are spread by a
/// multiplicative hash so neighbouring clips are unrelated.
pub fn clip_seed(seed: u64, id: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (id as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

pub fn plan(cfg: &DatasetConfig) -> Vec<ClipRecord> {
    (0..cfg.count)
        .map(|id| ClipRecord {
            id,
            kind: ClipKind::ALL[id % ClipKind::ALL.len()],
            seed: clip_seed(cfg.seed, id),
            split: if id + cfg.val_clips >= cfg.count {
                Split::Val
            } else {
                Split::Train
            },
            hr: PathBuf::from(format!("clips/{id:04}_hr.fvsr")),
            lr: PathBuf::from(format!("clips/{id:04}_lr.fvsr")),
        })
        .collect()
}

/// HR clip and its degraded LR counterpart for one record.
pub fn generate_clip(cfg: &DatasetConfig, r: &ClipRecord) -> Result<(Clip, Clip)> {
    let hr = synth_clip(r.kind, cfg.frames, cfg.height, cfg.width, r.seed)?;
    let lr = degrade(&hr, &cfg.degrade, r.seed ^ 0xde9a_ade0)?;
    Ok((hr, lr))
}

/// Writes every clip and the manifest under `dir`.
pub fn write_dataset(dir: &Path, cfg: &DatasetConfig) -> Result<Vec<ClipRecord>> {
    cfg.validate()?;
    let records = plan(cfg);
    let clips = dir.join("clips");
    fs::create_dir_all(&clips).map_err(|e| CoreError::io(&clips, e))?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for r in &records {
        let (hr, lr) = generate_clip(cfg, r)?;
        save_clip(dir.join(&r.hr), &hr)?;
        save_clip(dir.join(&r.lr), &lr)?;
        writeln!(
            manifest,
            "{},{},{},{},{},{}",
            r.id,
            r.kind,
            r.seed,
            r.split,
            r.hr.display(),
            r.lr.display()
        )
        .expect("string write");
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| CoreError::io(&path, e))?;
    Ok(records)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ClipRecord>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(CoreError::Format {
            offset: 0,
            msg: format!("{} does not start with `{MANIFEST_HEADER}`", path.display()),
        });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |what: &str| {
                CoreError::Config(format!("{} line {}: bad {what}", path.display(), i + 2))
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad("field count"));
            }
            Ok(ClipRecord {
                id: f[0].parse().map_err(|_| bad("id"))?,
                kind: f[1].parse()?,
                seed: f[2].parse().map_err(|_| bad("seed"))?,
                split: f[3].parse()?,
                hr: PathBuf::from(f[4]),
                lr: PathBuf::from(f[5]),
            })
        })
        .collect()
}

/// A loaded clip pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipPair {
    pub record: ClipRecord,
    pub hr: Clip,
    pub lr: Clip,
}

pub fn load_split(dir: &Path, split: Option<Split>) -> Result<Vec<ClipPair>> {
    read_manifest(dir)?
        .into_iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .map(|record| {
            let hr = load_clip(dir.join(&record.hr))?;
            let lr = load_clip(dir.join(&record.lr))?;
            Ok(ClipPair { record, hr, lr })
        })
        .collect()
}
