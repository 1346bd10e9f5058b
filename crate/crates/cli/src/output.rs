use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use adagan::config::ExperimentConfig;
use adagan::{Error, Result};

pub const LOCK_FILE: &str = ".ada-gan.lock";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputDir {
    path: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    pub fn claim(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let lock = path.join(LOCK_FILE);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Contract(format!(
                    "output directory {} is locked by another run (remove {} if stale)",
                    path.display(),
                    lock.display()
                )),
                _ => Error::io(&lock, e),
            })?;
        writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(&lock, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            lock,
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.file(name);
        let mut f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(contents.as_ref()).map_err(|e| Error::io(&p, e))
    }

    pub fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        self.write(name, text)
    }

    /// Writes the fully resolved config, including the output directory.
    pub fn echo_config(&self, config: &ExperimentConfig) -> Result<()> {
        self.write(RESOLVED_CONFIG, config.to_toml_string()?)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}
