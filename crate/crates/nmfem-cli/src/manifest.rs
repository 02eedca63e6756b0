//! Run manifest: a small provenance record written next to every command's
//! outputs, naming the inputs (with content digests), the effective
//! configuration, and the produced files.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nmfem::{Error, Result};

/// Shipped schema for the manifest document. The validator below takes its
/// required-field list and command enum from here and hand-rolls the type
/// checks, so no JSON-schema engine is needed.
pub const MANIFEST_SCHEMA: &str = include_str!("../schemas/run_manifest.schema.json");

pub const MANIFEST_FILE: &str = "run_manifest.json";

fn schema() -> &'static serde_json::Value {
    static SCHEMA: std::sync::OnceLock<serde_json::Value> = std::sync::OnceLock::new();
    SCHEMA.get_or_init(|| serde_json::from_str(MANIFEST_SCHEMA).expect("shipped schema parses"))
}

/// Field names the schema marks as required.
fn required_fields() -> Vec<&'static str> {
    schema()["required"]
        .as_array()
        .expect("schema has a required list")
        .iter()
        .map(|v| v.as_str().expect("required entries are strings"))
        .collect()
}

/// Command names the schema allows.
fn allowed_commands() -> Vec<&'static str> {
    schema()["properties"]["command"]["enum"]
        .as_array()
        .expect("schema has a command enum")
        .iter()
        .map(|v| v.as_str().expect("command enum entries are strings"))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub wall_time_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: BTreeMap<String, String>, seed: u64) -> Self {
        RunManifest {
            schema_version: 1,
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            wall_time_seconds: 0.0,
        }
    }

    /// Record an input file along with its content digest.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_of_file(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    /// Validate and write the manifest into `dir` atomically
    /// (temp file + rename), then record nothing further.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let value = serde_json::to_value(self)?;
        validate_manifest(&value)?;
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }
}

/// Hex SHA-256 of a file's contents, streamed.
pub fn sha256_of_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn field<'a>(
    obj: &'a serde_json::Map<String, serde_json::Value>,
    key: &str,
) -> Result<&'a serde_json::Value> {
    obj.get(key)
        .ok_or_else(|| Error::invalid(format!("manifest: missing field {key:?}")))
}

/// Check a manifest document against the shipped schema's constraints:
/// required fields, types, the command enum, digest format, and the
/// closed property set.
pub fn validate_manifest(value: &serde_json::Value) -> Result<()> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::invalid("manifest: document must be a JSON object"))?;

    let required = required_fields();
    for key in &required {
        field(obj, key)?;
    }
    for key in obj.keys() {
        if !required.contains(&key.as_str()) {
            return Err(Error::invalid(format!("manifest: unknown field {key:?}")));
        }
    }

    if field(obj, "schema_version")?.as_u64() != Some(1) {
        return Err(Error::invalid("manifest: schema_version must be 1"));
    }

    let command = field(obj, "command")?
        .as_str()
        .ok_or_else(|| Error::invalid("manifest: command must be a string"))?;
    if !allowed_commands().contains(&command) {
        return Err(Error::invalid(format!(
            "manifest: unknown command {command:?}"
        )));
    }

    let config = field(obj, "config")?
        .as_object()
        .ok_or_else(|| Error::invalid("manifest: config must be an object"))?;
    for (key, val) in config {
        if !val.is_string() {
            return Err(Error::invalid(format!(
                "manifest: config value for {key:?} must be a string"
            )));
        }
    }

    let inputs = field(obj, "inputs")?
        .as_array()
        .ok_or_else(|| Error::invalid("manifest: inputs must be an array"))?;
    for entry in inputs {
        let entry = entry
            .as_object()
            .ok_or_else(|| Error::invalid("manifest: each input must be an object"))?;
        let path = field(entry, "path")?;
        if !path.is_string() {
            return Err(Error::invalid("manifest: input path must be a string"));
        }
        let digest = field(entry, "sha256")?
            .as_str()
            .ok_or_else(|| Error::invalid("manifest: input sha256 must be a string"))?;
        if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
            return Err(Error::invalid(format!(
                "manifest: input sha256 must be 64 lowercase hex chars, got {digest:?}"
            )));
        }
        for key in entry.keys() {
            if key != "path" && key != "sha256" {
                return Err(Error::invalid(format!(
                    "manifest: unknown input field {key:?}"
                )));
            }
        }
    }

    let outputs = field(obj, "outputs")?
        .as_array()
        .ok_or_else(|| Error::invalid("manifest: outputs must be an array"))?;
    if !outputs.iter().all(|o| o.is_string()) {
        return Err(Error::invalid("manifest: outputs must be strings"));
    }

    if field(obj, "seed")?.as_u64().is_none() {
        return Err(Error::invalid(
            "manifest: seed must be a nonnegative integer",
        ));
    }

    let wall = field(obj, "wall_time_seconds")?
        .as_f64()
        .ok_or_else(|| Error::invalid("manifest: wall_time_seconds must be a number"))?;
    if wall.is_nan() || wall < 0.0 {
        return Err(Error::invalid(
            "manifest: wall_time_seconds must be nonnegative",
        ));
    }

    Ok(())
}
