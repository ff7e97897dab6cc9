//! Atomic output files and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn input_digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Output directory whose files are written through a temporary file and a
/// rename.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<FileDigest>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| {
            CliError::Input(format!("cannot create output directory {}: {e}", dir.display()))
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.dir.join(name);
        let fail = |e: std::io::Error| {
            CliError::Input(format!("cannot write {}: {e}", target.display()))
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(fail)?;
        tmp.write_all(bytes).map_err(fail)?;
        tmp.as_file().sync_all().map_err(fail)?;
        tmp.persist(&target).map_err(|e| fail(e.error))?;
        Ok(())
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        self.write_atomic(name, contents.as_bytes())?;
        self.written.push(FileDigest {
            path: name.to_owned(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    /// Serializes `value` with a `manifest` field pointing at the manifest.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut v = serde_json::to_value(value).map_err(|e| CliError::Input(e.to_string()))?;
        if let Value::Object(map) = &mut v {
            map.insert("manifest".into(), Value::String(MANIFEST_NAME.into()));
        }
        let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Input(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        manifest.body.outputs = self.written.clone();
        manifest.digest = manifest.body.digest();
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Input(e.to_string()))?;
        self.write_atomic(MANIFEST_NAME, (text + "\n").as_bytes())?;
        Ok(manifest)
    }
}

/// The reproducible part of a manifest.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestBody {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub seed_source: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub notes: BTreeMap<String, Value>,
}

impl ManifestBody {
    fn digest(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("manifest serializes")
                .as_bytes(),
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub body: ManifestBody,
    /// SHA-256 of everything above; excludes the wall time.
    pub digest: String,
    pub wall_time_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: u64, seed_source: SeedSource) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("master".to_owned(), seed);
        Self {
            body: ManifestBody {
                tool: env!("CARGO_PKG_NAME").to_owned(),
                version: env!("CARGO_PKG_VERSION").to_owned(),
                command: command.to_owned(),
                config,
                seeds,
                seed_source: seed_source.as_str().to_owned(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                notes: BTreeMap::new(),
            },
            digest: String::new(),
            wall_time_seconds: 0.0,
        }
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.body.notes.insert(
            key.to_owned(),
            serde_json::to_value(value).expect("note serializes"),
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSource {
    Flag,
    Config,
    Drawn,
}

impl SeedSource {
    fn as_str(self) -> &'static str {
        match self {
            SeedSource::Flag => "flag",
            SeedSource::Config => "config",
            SeedSource::Drawn => "drawn",
        }
    }
}

/// The seed from the flag, else from a config, else a fresh random one.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> (u64, SeedSource) {
    match (flag, config) {
        (Some(s), _) => (s, SeedSource::Flag),
        (None, Some(s)) => (s, SeedSource::Config),
        (None, None) => (rand::random(), SeedSource::Drawn),
    }
}
