//! Run-directory manifest and audit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Git-style object hash: SHA-256 over `blob <len>\0` followed by the bytes.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// What a run consumed and produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub command: String,
    /// Free-form facts such as `env_steps`, in key order.
    pub facts: BTreeMap<String, String>,
    /// Input name to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to content hash.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_owned(),
            ..Self::default()
        }
    }

    pub fn fact(&mut self, key: &str, value: impl ToString) {
        self.facts.insert(key.to_owned(), value.to_string());
    }

    pub fn input(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.insert(name.to_owned(), blob_hash(bytes));
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("command {}\n", self.command);
        for (k, v) in &self.facts {
            s += &format!("fact {k} {v}\n");
        }
        for (k, v) in &self.inputs {
            s += &format!("input {k} {v}\n");
        }
        for (k, v) in &self.outputs {
            s += &format!("output {k} {v}\n");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for line in text.lines() {
            let mut parts = line.splitn(3, ' ');
            let (kind, a, b) = (parts.next(), parts.next(), parts.next());
            match (kind, a, b) {
                (Some("command"), Some(c), None) => m.command = c.to_owned(),
                (Some("fact"), Some(k), Some(v)) => {
                    m.facts.insert(k.to_owned(), v.to_owned());
                }
                (Some("input"), Some(k), Some(v)) => {
                    m.inputs.insert(k.to_owned(), v.to_owned());
                }
                (Some("output"), Some(k), Some(v)) => {
                    m.outputs.insert(k.to_owned(), v.to_owned());
                }
                _ => bail!("malformed manifest line `{line}`"),
            }
        }
        Ok(m)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    /// Hashes every regular file in `dir` except the manifest and writes it.
    pub fn seal(mut self, dir: &Path) -> Result<Self> {
        self.outputs.clear();
        let mut names: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != MANIFEST_FILE)
            .collect();
        names.sort();
        for name in names {
            let bytes = fs::read(dir.join(&name))?;
            self.outputs.insert(name, blob_hash(&bytes));
        }
        fs::write(dir.join(MANIFEST_FILE), self.to_text())?;
        Ok(self)
    }
}

/// Checks that a run directory holds its config, metrics, manifest and,
/// when required, a checkpoint, and that every file still matches the
/// manifest.
pub fn audit_run(dir: &Path, needs_checkpoint: bool) -> Result<()> {
    let mut required = vec![CONFIG_FILE, METRICS_FILE, MANIFEST_FILE];
    if needs_checkpoint {
        required.push(CHECKPOINT_FILE);
    }
    for name in required {
        if !dir.join(name).is_file() {
            bail!("run directory {} lacks {name}", dir.display());
        }
    }
    let manifest = Manifest::read(dir)?;
    for (name, hash) in &manifest.outputs {
        let bytes = fs::read(dir.join(name)).with_context(|| format!("reading {name}"))?;
        if blob_hash(&bytes) != *hash {
            bail!("{name} changed after the manifest was written");
        }
    }
    for name in [CONFIG_FILE, METRICS_FILE] {
        if !manifest.outputs.contains_key(name) {
            bail!("manifest does not list {name}");
        }
    }
    Ok(())
}
