//! Output directories, input digests and run manifests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl InputRecord {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Enough to repeat a run: the command line, every resolved setting and a
/// digest of each input. Contains no clock readings, so reruns produce
/// identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub settings: BTreeMap<String, String>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Manifest {
            tool: "shopent",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            argv: argv.to_vec(),
            settings: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.notes.insert(
            key.to_owned(),
            serde_json::to_value(value).expect("serializable"),
        );
    }
}

/// Output directory that records each file it hands out.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutDir {
            root: root.to_owned(),
            written: Vec::new(),
        })
    }

    pub fn file(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.root.join(name);
        let f = File::create(&path)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.to_owned());
        Ok(BufWriter::new(f))
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn finish(mut self, mut manifest: Manifest) -> Result<(), CliError> {
        manifest.outputs = std::mem::take(&mut self.written);
        self.json(MANIFEST_FILE, &manifest)
    }
}
