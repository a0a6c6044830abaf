//! Database files: atomic save and fingerprint-checked load.

use std::io::Write;
use std::path::{Path, PathBuf};

use ctmp_core::database::{
    decode, encode, DecodeError, Fingerprint, ReplanTensor, TrajectoryDatabase,
};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: file truncated")]
    Truncated { path: PathBuf },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: DecodeError },
}

impl PersistError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Stale database for the current configuration.
    pub fn is_fingerprint_mismatch(&self) -> bool {
        matches!(
            self,
            Self::Format {
                source: DecodeError::FingerprintMismatch,
                ..
            }
        )
    }
}

/// Writes to a temporary file next to `path`, then renames it into place.
pub fn save(
    path: &Path,
    db: &TrajectoryDatabase,
    tensor: &ReplanTensor,
) -> Result<(), PersistError> {
    let bytes = encode(db, tensor);
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| PersistError::io(path, e))?;
    tmp.write_all(&bytes)
        .map_err(|e| PersistError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| PersistError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| PersistError::io(path, e.error))?;
    Ok(())
}

/// Reads and decodes a whole file; nothing is returned unless every record
/// decodes. With `expected` set, a different config fingerprint is an error.
pub fn load(
    path: &Path,
    expected: Option<&Fingerprint>,
) -> Result<(TrajectoryDatabase, ReplanTensor), PersistError> {
    let bytes = std::fs::read(path).map_err(|e| PersistError::io(path, e))?;
    decode(&bytes, expected).map_err(|source| match source {
        DecodeError::Truncated => PersistError::Truncated {
            path: path.to_path_buf(),
        },
        source => PersistError::Format {
            path: path.to_path_buf(),
            source,
        },
    })
}
