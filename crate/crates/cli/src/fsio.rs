//! Filesystem helpers shared by dataset and artifact IO: overwrite-guarded
//! writes and file hashing.

use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum FsError {
    #[error("refusing to overwrite `{path}` (pass --force to allow)")]
    AlreadyExists { path: PathBuf },
    #[error("cannot access `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> FsError + '_ {
    move |source| FsError::Io { path: path.to_path_buf(), source }
}

/// Writes `contents` to `path`, refusing to replace an existing file unless
/// `force` is set. Parent directories must already exist.
pub fn write_guarded(path: &Path, contents: &[u8], force: bool) -> Result<(), FsError> {
    if !force && path.exists() {
        return Err(FsError::AlreadyExists { path: path.to_path_buf() });
    }
    fs::write(path, contents).map_err(io_error(path))
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String, FsError> {
    let mut file = fs::File::open(path).map_err(io_error(path))?;
    let mut hasher = Sha256::new();
    let mut buffer = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buffer).map_err(io_error(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buffer[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
