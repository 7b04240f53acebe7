use anyhow::{Context, Result};
use fvsr_core::datametrics::write_dataset;

use super::prepare_out;
use crate::RunConfig;

pub fn run(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg)?;
    let records = write_dataset(&cfg.out, &cfg.data)
        .with_context(|| format!("writing dataset to {}", cfg.out.display()))?;
    println!("wrote {} clips to {}", records.len(), cfg.out.display());
    Ok(())
}
