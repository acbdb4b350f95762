//! `run.toml`: the resolved configuration followed by a `[provenance]`
//! table with hashes, versions and timings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{usage, CliResult};

pub const RUN_FILE: &str = "run.toml";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_bytes(&bytes))
}

/// Hash of every file under `dir` except the top-level `run.toml`, keyed by
/// `/`-separated relative path.
pub fn output_hashes(dir: &Path) -> CliResult<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> CliResult<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| usage(format!("cannot list {}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| usage(format!("cannot list {}: {e}", dir.display())))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
                continue;
            }
            let rel: Vec<String> = path
                .strip_prefix(root)
                .expect("walked path is under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect();
            let rel = rel.join("/");
            if rel != RUN_FILE {
                out.insert(rel, sha256_file(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct Provenance {
    command: String,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    output_hash: String,
    versions: BTreeMap<String, String>,
    timings_s: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct ProvenanceFile<'a> {
    provenance: &'a Provenance,
}

/// Collects input hashes and stage timings while a subcommand runs.
pub struct RunRecord {
    command: String,
    out: PathBuf,
    started: Instant,
    inputs: BTreeMap<String, String>,
    timings: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn new(command: &str, out: &Path) -> Self {
        RunRecord {
            command: command.to_string(),
            out: out.to_path_buf(),
            started: Instant::now(),
            inputs: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    /// Records the content hash of an input file under its config key.
    pub fn input(&mut self, key: &str, path: &Path) -> CliResult<()> {
        self.inputs.insert(key.to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.insert(stage.to_string(), t.elapsed().as_secs_f64());
        out
    }

    /// Writes `run.toml`. Loading it with `--config` repeats the run.
    pub fn finish(mut self, config: &RunConfig) -> CliResult<()> {
        let resolved = toml::to_string_pretty(config).map_err(|e| usage(format!("cannot serialize config: {e}")))?;
        self.timings.insert("total".into(), self.started.elapsed().as_secs_f64());
        let outputs = output_hashes(&self.out)?;
        let listing: String = outputs.iter().map(|(k, v)| format!("{k} {v}\n")).collect();
        let provenance = Provenance {
            command: self.command,
            config_hash: sha256_bytes(resolved.as_bytes()),
            inputs: self.inputs,
            output_hash: sha256_bytes(listing.as_bytes()),
            outputs,
            versions: BTreeMap::from([
                ("volecgi".to_string(), env!("CARGO_PKG_VERSION").to_string()),
                ("run_format".to_string(), "1".to_string()),
            ]),
            timings_s: self.timings,
        };
        let tail = toml::to_string_pretty(&ProvenanceFile { provenance: &provenance })
            .map_err(|e| usage(format!("cannot serialize provenance: {e}")))?;
        let path = self.out.join(RUN_FILE);
        std::fs::write(&path, format!("{resolved}\n{tail}")).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
    }
}
