//! `--config <json>` overlay and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use latmorph_core::dataset::write_atomic;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SUBCOMMANDS: [&str; 6] = [
    "gen-data",
    "train",
    "sweep",
    "interpolate",
    "regress",
    "report",
];

fn normalize_key(k: &str) -> String {
    k.replace('-', "_")
}

pub fn load_config(path: &Path) -> CliResult<Map<String, Value>> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::usage(format!(
            "{}: config must be a JSON object",
            path.display()
        ))),
        Err(e) => Err(CliError::Io(format!("{}: {e}", path.display()))),
    }
}

/// Resolves command arguments: explicit flags win over the section for
/// `command` in the config file, which wins over top-level config keys.
pub fn overlay<T: Serialize + DeserializeOwned>(
    cli: &T,
    config: Option<&Map<String, Value>>,
    command: &str,
) -> CliResult<T> {
    let mut merged = Map::new();
    if let Some(cfg) = config {
        for (k, v) in cfg {
            if !SUBCOMMANDS.contains(&k.as_str()) {
                merged.insert(normalize_key(k), v.clone());
            }
        }
        if let Some(section) = cfg.get(command) {
            let Value::Object(section) = section else {
                return Err(CliError::usage(format!(
                    "config section `{command}` must be an object"
                )));
            };
            for (k, v) in section {
                merged.insert(normalize_key(k), v.clone());
            }
        }
    }
    if let Value::Object(flags) = serde_json::to_value(cli)? {
        for (k, v) in flags {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::usage(format!("invalid configuration: {e}")))
}

/// Seed precedence: resolved flag/config value, then `LM_SEED`, then 0.
pub fn resolve_seed(explicit: Option<u64>) -> CliResult<u64> {
    if let Some(s) = explicit {
        return Ok(s);
    }
    match std::env::var("LM_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::usage(format!("LM_SEED must be an unsigned integer, got `{v}`"))
        }),
        Err(_) => Ok(0),
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_output(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    write_atomic(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Resolved configuration, input hashes and outputs of one run.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub resolved: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<Value>,
}

impl Manifest {
    pub fn new(command: &str, resolved: &impl Serialize, seed: Option<u64>) -> CliResult<Self> {
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            resolved: serde_json::to_value(resolved)?,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            summary: None,
        })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_output(path, text.as_bytes())
    }
}

/// `<file>.manifest.json` next to a primary output file.
pub fn manifest_beside(primary: &Path) -> PathBuf {
    let mut name = primary
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    primary.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    struct Args {
        #[serde(skip_serializing_if = "Option::is_none")]
        count: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    }

    #[test]
    fn flags_beat_section_beat_top_level() {
        let cfg: Map<String, Value> =
            serde_json::from_str(r#"{"seed": 1, "count": 5, "gen-data": {"count": 7}}"#).unwrap();
        let cli = Args {
            count: None,
            seed: Some(9),
        };
        let out = overlay(&cli, Some(&cfg), "gen-data").unwrap();
        assert_eq!(
            out,
            Args {
                count: Some(7),
                seed: Some(9)
            }
        );
        let out = overlay(&Args::default(), Some(&cfg), "train").unwrap();
        assert_eq!(out.count, Some(5));
    }

    #[test]
    fn kebab_keys_are_accepted() {
        #[derive(Serialize, Deserialize, Default)]
        struct A {
            #[serde(skip_serializing_if = "Option::is_none")]
            batch_size: Option<usize>,
        }
        let cfg: Map<String, Value> = serde_json::from_str(r#"{"batch-size": 8}"#).unwrap();
        assert_eq!(
            overlay(&A::default(), Some(&cfg), "train")
                .unwrap()
                .batch_size,
            Some(8)
        );
    }

    #[test]
    fn manifest_path() {
        assert_eq!(
            manifest_beside(Path::new("out/d.lmd")),
            PathBuf::from("out/d.lmd.manifest.json")
        );
    }
}
