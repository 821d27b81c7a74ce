use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use eit_core::error::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Collects the files a command writes and finishes with a manifest.
pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<String>,
    inputs: Vec<InputFile>,
}

#[derive(Serialize)]
struct InputFile {
    path: PathBuf,
    sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Versions {
    eit_cli: &'static str,
    eit_core: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    argv: &'a [String],
    seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
    versions: Versions,
    inputs: &'a [InputFile],
    artifacts: &'a [String],
}

impl OutputDir {
    pub fn create(config: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(&config.output_dir)?;
        Ok(Self {
            root: config.output_dir.clone(),
            artifacts: Vec::new(),
            inputs: Vec::new(),
        })
    }

    /// Reads an input file and records its digest in the manifest.
    pub fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path)?;
        self.inputs.push(InputFile {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(File::create(self.root.join(name))?))
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        std::io::Write::write_all(&mut w, b"\n")?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        self.artifacts.push(name.to_string());
        std::fs::write(self.root.join(name), body)?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn finish(self, command: &str, config: &RunConfig, argv: &[String]) -> Result<()> {
        let manifest = Manifest {
            command,
            argv,
            seed: config.seed,
            config_sha256: config.hash(),
            config,
            versions: Versions {
                eit_cli: env!("CARGO_PKG_VERSION"),
                eit_core: eit_core::VERSION,
            },
            inputs: &self.inputs,
            artifacts: &self.artifacts,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(self.root.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
