//! All-or-nothing output: files are staged as temporaries beside their
//! destination and renamed into place only after every write succeeded.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::CliError;

#[derive(Default)]
pub struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl Staged {
    pub fn add(&mut self, dest: impl AsRef<Path>, contents: &[u8]) -> Result<(), CliError> {
        let dest = dest.as_ref();
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| CliError::io(&parent, e))?;
        let mut tmp = NamedTempFile::new_in(&parent).map_err(|e| CliError::io(&parent, e))?;
        tmp.write_all(contents).map_err(|e| CliError::io(dest, e))?;
        tmp.flush().map_err(|e| CliError::io(dest, e))?;
        self.files.push((tmp, dest.to_path_buf()));
        Ok(())
    }

    pub fn commit(self) -> Result<(), CliError> {
        for (tmp, dest) in self.files {
            tmp.persist(&dest).map_err(|e| CliError::io(&dest, e.error))?;
        }
        Ok(())
    }
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}
