use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "run.json";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Numeric(m) => write!(f, "numeric abort: {m}"),
            CliError::Io(m) => write!(f, "i/o: {m}"),
        }
    }
}

impl From<segan::Error> for CliError {
    fn from(e: segan::Error) -> Self {
        use segan::Error as E;
        match e {
            E::NumericAbort { .. } | E::NonFinite(_) => CliError::Numeric(e.to_string()),
            E::Io(_) | E::Format(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Reads a JSON config and lays it over `default`: keys present in the file
/// replace the defaults (objects merge recursively), anything the target
/// type does not know is rejected.
pub fn load_config<T: Serialize + DeserializeOwned>(path: Option<&Path>, default: T) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(default) };
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let patch: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if !patch.is_object() {
        return Err(CliError::Config(format!("{}: top level must be a JSON object", path.display())));
    }
    let mut merged = serde_json::to_value(default).map_err(|e| CliError::Config(e.to_string()))?;
    overlay(&mut merged, patch);
    serde_json::from_value(merged).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn overlay(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Creates `dir`, refusing a populated one unless `force`.
pub fn prepare_out(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let populated = fs::read_dir(dir).map_err(|e| io_err(dir, e))?.next().is_some();
        if populated && !force {
            return Err(CliError::Io(format!(
                "{} is not empty; pass --force to write into it",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

/// What ran, on what, producing what: enough to repeat the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub config: Value,
    pub seed: u64,
    pub inputs: BTreeMap<String, FileRef>,
    pub outputs: Vec<FileRef>,
    pub duration_secs: f64,
}

pub struct Run {
    manifest: RunManifest,
    out: PathBuf,
    started: Instant,
}

impl Run {
    pub fn start<C: Serialize>(command: &str, argv: &[String], out: &Path, config: &C, seed: u64) -> Result<Self, CliError> {
        Ok(Run {
            manifest: RunManifest {
                command: command.into(),
                argv: argv.to_vec(),
                version: env!("CARGO_PKG_VERSION").into(),
                config: serde_json::to_value(config).map_err(|e| CliError::Config(e.to_string()))?,
                seed,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                duration_secs: 0.0,
            },
            out: out.to_path_buf(),
            started: Instant::now(),
        })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.insert(
            role.into(),
            FileRef {
                path: path.to_path_buf(),
                sha256,
            },
        );
        Ok(())
    }

    /// Records a file already written under the output directory.
    pub fn output(&mut self, name: &str) -> Result<(), CliError> {
        let path = self.out(name);
        let sha256 = sha256_file(&path)?;
        self.manifest.outputs.push(FileRef {
            path: PathBuf::from(name),
            sha256,
        });
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.duration_secs = self.started.elapsed().as_secs_f64();
        write_json(&self.out(MANIFEST), &self.manifest)?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overlay_merges_objects_and_replaces_leaves() {
        let mut base = json!({"a": 1, "n": {"x": 1, "y": [1, 2]}});
        overlay(&mut base, json!({"n": {"y": [3]}, "b": 2}));
        assert_eq!(base, json!({"a": 1, "b": 2, "n": {"x": 1, "y": [3]}}));
    }

    #[test]
    fn config_typos_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"lambda_advv": 1}"#).unwrap();
        let e = load_config(Some(&p), segan::trainer::TrainConfig::default()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        fs::write(&p, r#"{"lambda_adv": 0.5}"#).unwrap();
        assert_eq!(load_config(Some(&p), segan::trainer::TrainConfig::default()).unwrap().lambda_adv, 0.5);
    }

    #[test]
    fn empty_output_dir_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        prepare_out(dir.path(), false).unwrap();
        fs::write(dir.path().join("f"), "").unwrap();
        assert_eq!(prepare_out(dir.path(), false).unwrap_err().exit_code(), 4);
        prepare_out(dir.path(), true).unwrap();
    }
}
