//! Per-run JSON manifest listing inputs, seeds and produced files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Result};
use serde_json::{json, Map, Value};
use xbaremu::dataset::write_atomic;

pub struct Manifest {
    command: &'static str,
    started: Instant,
    threads: usize,
    config: Option<PathBuf>,
    seeds: Map<String, Value>,
    outputs: Vec<PathBuf>,
    extra: Map<String, Value>,
}

impl Manifest {
    pub fn new(command: &'static str, started: Instant, threads: usize) -> Self {
        Manifest {
            command,
            started,
            threads,
            config: None,
            seeds: Map::new(),
            outputs: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn config(&mut self, path: &Path) -> &mut Self {
        self.config = Some(path.to_path_buf());
        self
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.seeds.insert(name.into(), json!(seed));
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn extra(&mut self, key: &str, value: Value) -> &mut Self {
        self.extra.insert(key.into(), value);
        self
    }

    /// Written last, after every listed output exists.
    pub fn write(&self, path: &Path) -> Result<()> {
        for out in &self.outputs {
            ensure!(out.exists(), "output {} was not written", out.display());
        }
        let show = |p: &PathBuf| p.display().to_string();
        let mut doc = json!({
            "command": self.command,
            "args": std::env::args().skip(1).collect::<Vec<_>>(),
            "config": self.config.as_ref().map(show),
            "seeds": self.seeds,
            "version": env!("CARGO_PKG_VERSION"),
            "threads": self.threads,
            "wall_time_s": self.started.elapsed().as_secs_f64(),
            "outputs": self.outputs.iter().map(show).collect::<Vec<_>>(),
        });
        doc.as_object_mut().expect("object literal").extend(self.extra.clone());
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        write_atomic(path, |w| std::io::Write::write_all(w, text.as_bytes()))?;
        Ok(())
    }
}
