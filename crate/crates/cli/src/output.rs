use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const DETERMINISM: &str = "no randomness; identical inputs give byte-identical outputs";

/// Invocation record written next to, and embedded in, every JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub bundle: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub overrides: BTreeMap<String, Value>,
    pub determinism: &'static str,
}

impl RunManifest {
    pub fn new(raw: &[String]) -> Self {
        Self {
            command: raw.iter().skip(1).cloned().collect(),
            bundle: None,
            store: None,
            outputs: Vec::new(),
            overrides: BTreeMap::new(),
            determinism: DETERMINISM,
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    manifest: &'a RunManifest,
    report: &'a T,
}

pub fn json_text<T: Serialize>(manifest: &RunManifest, report: &T) -> String {
    let mut text = serde_json::to_string_pretty(&Envelope { manifest, report }).expect("reports serialize");
    text.push('\n');
    text
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, contents).map_err(CliError::io(path))
}

/// Files destined for one output directory, written in insertion order
/// once the manifest lists them all.
pub struct OutDir {
    dir: PathBuf,
    files: Vec<(PathBuf, FileBody)>,
}

enum FileBody {
    Text(String),
    Json(Value),
}

impl OutDir {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn text(&mut self, name: &str, text: String) {
        self.files.push((self.dir.join(name), FileBody::Text(text)));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, report: &T) {
        let value = serde_json::to_value(report).expect("reports serialize");
        self.files.push((self.dir.join(name), FileBody::Json(value)));
    }

    pub fn finish(self, mut manifest: RunManifest) -> CliResult<()> {
        let manifest_path = self.dir.join("manifest.json");
        manifest.outputs = self.files.iter().map(|(p, _)| p.clone()).collect();
        manifest.outputs.push(manifest_path.clone());
        for (path, body) in &self.files {
            match body {
                FileBody::Text(t) => write_file(path, t)?,
                FileBody::Json(v) => write_file(path, &json_text(&manifest, v))?,
            }
        }
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_file(&manifest_path, &text)
    }
}
