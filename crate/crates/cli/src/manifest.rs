//! Run manifests: one key=value text file written next to every command's
//! outputs, recording what ran, with which resolved config and seed, on
//! which inputs, producing which files. Re-running the recorded invocation
//! reproduces the outputs byte for byte.

use std::path::{Path, PathBuf};
use std::time::Instant;

use keygrid::Result;

pub struct RunManifest {
    command: String,
    started: Instant,
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest { command: command.to_string(), started: Instant::now(), entries: Vec::new() }
    }

    pub fn field(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn path_field(&mut self, key: &str, path: &Path) {
        self.field(key, path.display());
    }

    pub fn config(&mut self, pairs: &[(&'static str, String)]) {
        for (k, v) in pairs {
            self.entries.push((format!("config.{k}"), v.clone()));
        }
    }

    /// Write `<command>.manifest.txt` into `dir` and return its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let mut text = format!(
            "command={}\nversion={}\nwall_ms={}\n",
            self.command,
            env!("CARGO_PKG_VERSION"),
            self.started.elapsed().as_millis()
        );
        for (k, v) in &self.entries {
            text.push_str(&format!("{k}={v}\n"));
        }
        let path = dir.join(format!("{}.manifest.txt", self.command));
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
