//! Atomic output helpers: every artifact is written to a temporary sibling
//! and renamed into place, so failures leave no partial files.

use std::path::{Path, PathBuf};

use corticast_core::mesh::{write_feature_field, write_mesh, FeatureField, SphereMesh};
use corticast_core::{Error, Result};

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

fn commit(temp: &Path, path: &Path) -> Result<()> {
    std::fs::rename(temp, path).map_err(|e| {
        let _ = std::fs::remove_file(temp);
        Error::io(path, e)
    })
}

fn with_temp(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let temp = temp_sibling(path);
    match write(&temp) {
        Ok(()) => commit(&temp, path),
        Err(e) => {
            let _ = std::fs::remove_file(&temp);
            Err(e)
        }
    }
}

pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    with_temp(path, |temp| {
        std::fs::write(temp, bytes).map_err(|e| Error::io(temp, e))
    })
}

pub fn write_text_atomic(path: &Path, text: &str) -> Result<()> {
    write_bytes_atomic(path, text.as_bytes())
}

pub fn write_mesh_atomic(path: &Path, mesh: &SphereMesh) -> Result<()> {
    with_temp(path, |temp| write_mesh(mesh, temp))
}

pub fn write_feature_field_atomic(path: &Path, field: &FeatureField) -> Result<()> {
    with_temp(path, |temp| write_feature_field(field, temp))
}
