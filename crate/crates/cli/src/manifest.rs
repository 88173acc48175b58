//! Per-command run record written next to every output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    started: Instant,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: Vec::new(),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut s = format!("command = {}\ntool_version = {TOOL_VERSION}\n", self.command);
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed = {seed}\n"));
        }
        for (k, v) in &self.config {
            s.push_str(&format!("config.{k} = {v}\n"));
        }
        for p in &self.inputs {
            s.push_str(&format!("input = {}\n", p.display()));
        }
        for p in &self.outputs {
            s.push_str(&format!("output = {}\n", p.display()));
        }
        s.push_str(&format!("wall_time_s = {:.3}\n", self.started.elapsed().as_secs_f64()));
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).with_context(|| format!("writing {}", path.display()))
    }
}

/// `<file>.run.txt`, or `<dir>/run.txt` for directory outputs.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("run.txt")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".run.txt");
        PathBuf::from(s)
    }
}
