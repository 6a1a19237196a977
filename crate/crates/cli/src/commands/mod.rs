pub mod evaluate;
pub mod preprocess;
pub mod simulate;
pub mod study;
pub mod train;
pub mod translate;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ctdiff_core::volume::{HuVolume, META_FILE};

pub fn require_out(out: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    match out {
        Some(p) => Ok(p.clone()),
        None => bail!("--out is required for this command"),
    }
}

/// Volume directories directly under `root`, sorted by name.
pub fn volume_dirs(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let path = entry?.path();
        if path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        bail!("no volume directories under {}", root.display());
    }
    Ok(dirs)
}

pub fn read_volume(dir: &Path) -> anyhow::Result<HuVolume> {
    Ok(ctdiff_core::volume::read_volume(dir)
        .with_context(|| format!("reading volume {}", dir.display()))?
        .0)
}

pub fn dir_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}
