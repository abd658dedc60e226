//! Checkpoint files. Writes go to a temporary file in the target directory
//! that is renamed into place, so a crash never leaves a partial checkpoint.

use std::io::Write;
use std::path::{Path, PathBuf};

use nrm_core::checkpoint::{self, CheckpointError, Decoded};
use nrm_core::{LocalContribution, ModelState};

#[derive(Debug, thiserror::Error)]
pub enum CheckpointFileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: CheckpointError },
}

pub fn save(path: &Path, model: &ModelState, contributions: Option<&[LocalContribution]>) -> Result<(), CheckpointFileError> {
    let io = |source| CheckpointFileError::Io { path: path.to_path_buf(), source };
    let bytes = checkpoint::encode(model, contributions);
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Decoded, CheckpointFileError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointFileError::Io { path: path.to_path_buf(), source })?;
    checkpoint::decode(&bytes).map_err(|source| CheckpointFileError::Format { path: path.to_path_buf(), source })
}
