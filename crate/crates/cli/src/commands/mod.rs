pub mod eval;
pub mod gen_data;
pub mod profile;
pub mod reconstruct;
pub mod train;

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use fvsr_core::datametrics::{container, AnyTensor};
use fvsr_core::CoreError;

use crate::RunConfig;

/// Creates the output directory and records the resolved configuration.
pub(crate) fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    cfg.write_snapshot(&cfg.out)
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> fvsr_core::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CoreError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
}

pub(crate) fn save_entries_atomic(
    path: &Path,
    entries: &[(String, AnyTensor)],
) -> fvsr_core::Result<()> {
    write_atomic(path, &container::encode(entries)?)
}

/// CSV cell; NaN (not applicable) is left empty, infinities print as `inf`.
pub(crate) fn cell(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}
