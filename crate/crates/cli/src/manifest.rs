//! Run manifests: the resolved command line, the base seed, and SHA-256
//! checksums of every input and output. A manifest's command line, run
//! against the same inputs, reproduces the outputs byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use sha2::{Digest, Sha256};

pub struct Manifest {
    command: Vec<String>,
    seed: Option<u64>,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<(PathBuf, String)>,
}

impl Manifest {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn record_input(&mut self, path: &Path) -> anyhow::Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.push((path.to_path_buf(), hash));
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> anyhow::Result<()> {
        let hash = sha256_file(path)?;
        self.outputs.push((path.to_path_buf(), hash));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "manifest v1");
        let _ = writeln!(out, "tool pairkl {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "command {}", quote_command(&self.command));
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed {seed}");
        }
        for (path, hash) in &self.inputs {
            let _ = writeln!(out, "input {} sha256 {hash}", path.display());
        }
        for (path, hash) in &self.outputs {
            let _ = writeln!(out, "output {} sha256 {hash}", path.display());
        }
        out.push_str("end\n");
        out
    }

    /// Write `manifest.txt` into `dir`. Called last, after all outputs
    /// exist, so the recorded hashes are final.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        crate::files::write_atomic(&dir.join("manifest.txt"), &self.render())
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot hash {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Join command tokens, double-quoting any token with whitespace.
pub fn quote_command(tokens: &[String]) -> String {
    tokens
        .iter()
        .map(|t| {
            if t.chars().any(char::is_whitespace) {
                format!("\"{t}\"")
            } else {
                t.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}
