use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "TELEMETRY_GPT_SEED";

/// Seed used when neither the flag, the config file nor the environment
/// sets one.
pub fn env_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

pub fn read_config_file(path: Option<&Path>) -> Result<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if !v.is_object() {
        bail!("config {} must hold a JSON object", path.display());
    }
    Ok(v)
}

/// Objects merge key by key; anything else in `over` replaces `base`.
pub fn deep_merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Flag overrides collected as a sparse JSON object. Unset flags add nothing.
#[derive(Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set<T: Serialize>(&mut self, path: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            let v = serde_json::to_value(v).expect("flag values serialize");
            let mut keys = path.split('.').peekable();
            let mut node = &mut self.0;
            while let Some(k) = keys.next() {
                if keys.peek().is_none() {
                    node.insert(k.to_string(), v);
                    break;
                }
                node = node
                    .entry(k.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("override paths do not overlap");
            }
        }
        self
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.0)
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, file: &Value, flags: Overrides) -> Result<T> {
    let mut v = serde_json::to_value(defaults)?;
    deep_merge(&mut v, file);
    deep_merge(&mut v, &flags.into_value());
    serde_json::from_value(v).context("invalid configuration")
}

/// The `seed` field of a config file, if present.
pub fn file_seed(file: &Value) -> Result<Option<u64>> {
    match file.get("seed") {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_u64().map(Some).context("config field `seed` must be an unsigned integer"),
    }
}

/// Flag, then config file, then environment, then 0.
pub fn resolve_seed(flag: Option<u64>, file: &Value) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = file_seed(file)? {
        return Ok(s);
    }
    env_seed()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    created_unix_s: u64,
    files: Vec<FileEntry>,
}

/// Output directory of one command run. Every file written through it is
/// listed, with its digest, in `manifest.json`.
pub struct RunDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    /// Path of `name` inside the run directory, recorded for the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.file(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.file(name);
        write_json(&path, value)
    }

    /// Writes `run_config.json`, then `manifest.json` covering every file.
    pub fn finish<T: Serialize>(mut self, command: &str, seed: u64, config: &T) -> Result<()> {
        self.write_json("run_config.json", config)?;
        let mut files = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let bytes = fs::read(self.dir.join(name)).with_context(|| format!("hashing {name}"))?;
            let digest = Sha256::digest(&bytes);
            files.push(FileEntry {
                path: name.clone(),
                bytes: bytes.len() as u64,
                sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            });
        }
        let created_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let manifest = Manifest {
            tool: "telemetry-gpt",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            created_unix_s,
            files,
        };
        write_json(&self.dir.join("manifest.json"), &manifest)
    }
}
