//! Atomic file output and fixed-precision number formatting.

use std::io::Write;
use std::path::Path;

use tempfile::NamedTempFile;

use crate::error::{EngageError, Result};

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place, so readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| EngageError::Io(e.error))?;
    Ok(())
}

/// 17 significant digits in scientific notation; round-trips every `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}
