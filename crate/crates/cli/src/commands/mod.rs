pub mod digitize;
pub mod evaluate;
pub mod grid;
pub mod synth;

use std::fs;
use std::path::Path;

use anyhow::Context;
use ecg_digitize::raster::{decode_image, Decoded};

/// Reads and decodes an image, labelling failures with the stage that failed.
pub(crate) fn load_image(path: &Path) -> Result<Decoded, (&'static str, String)> {
    let bytes = fs::read(path).map_err(|e| ("read", format!("{}: {e}", path.display())))?;
    decode_image(&bytes).map_err(|e| ("decode", format!("{}: {e}", path.display())))
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
