//! Output directory with write-then-rename file creation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.txt";
pub const ERROR_FILE: &str = "error.txt";

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    /// Creates `root` and removes files a previous run of the same command
    /// may have left, so stale tables never sit next to a fresh manifest.
    pub fn prepare(root: &Path, stale: &[&str]) -> Result<OutputDir, CliError> {
        fs::create_dir_all(root).map_err(CliError::io(root))?;
        for name in stale.iter().copied().chain([ERROR_FILE]) {
            let p = root.join(name);
            match fs::remove_file(&p) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(CliError::io(p)(e)),
            }
        }
        Ok(OutputDir {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `contents` to a hidden temporary next to the target, syncs it,
    /// then renames it into place.
    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let target = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        let mut f = fs::File::create(&tmp).map_err(CliError::io(&tmp))?;
        f.write_all(contents.as_bytes()).map_err(CliError::io(&tmp))?;
        f.sync_all().map_err(CliError::io(&tmp))?;
        drop(f);
        fs::rename(&tmp, &target).map_err(CliError::io(&target))?;
        Ok(target)
    }

    /// Removes temporaries left by an interrupted write.
    pub fn sweep_temporaries(&self) {
        if let Ok(entries) = fs::read_dir(&self.root) {
            for e in entries.flatten() {
                let name = e.file_name();
                let name = name.to_string_lossy();
                if name.starts_with('.') && name.ends_with(".tmp") {
                    let _ = fs::remove_file(e.path());
                }
            }
        }
    }
}
