//! Atomic file writes: data goes to a unique temporary sibling and is renamed
//! into place, so readers never see a half-written file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{InspexError, Result};

static COUNTER: AtomicU64 = AtomicU64::new(0);

fn temp_sibling(path: &Path) -> PathBuf {
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut name = path.file_name().map(|s| s.to_owned()).unwrap_or_default();
    name.push(format!(".{}.{n}.tmp", std::process::id()));
    path.with_file_name(name)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(InspexError::io(dir))?;
    }
    let tmp = temp_sibling(path);
    let mut f = fs::File::create(&tmp).map_err(InspexError::io(&tmp))?;
    f.write_all(bytes).map_err(InspexError::io(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(InspexError::io(path))
}

pub fn write_atomic_str(path: &Path, s: &str) -> Result<()> {
    write_atomic(path, s.as_bytes())
}
