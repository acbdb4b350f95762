//! Run configuration: one TOML file with a section per subcommand, patched
//! by `--section.key value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use volecgi::activation::{InfarctReference, LatParams, OverlapFormula};
use volecgi::bench::BenchConfig;
use volecgi::fwd_vol::{ConductivityMap, Quadrature};
use volecgi::inverse::RegularizationParams;
use volecgi::phantom::PhantomSpec;
use volecgi::sigproc::FilterSpec;

use crate::error::{usage, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    /// Threads for parallel stages; 0 lets rayon decide.
    pub workers: usize,
    /// Replaces `phantom.seed` and `bench.master_seed` when set.
    pub seed: Option<u64>,
    pub phantom: PhantomSpec,
    pub preprocess: PreprocessConfig,
    pub forward_epi: ForwardEpiConfig,
    pub forward_vol: ForwardVolConfig,
    pub invert: InvertConfig,
    pub lat: LatConfig,
    pub localize: LocalizeConfig,
    pub metrics: MetricsConfig,
    pub bench: BenchConfig,
    /// Present in `run.toml` files; ignored on input.
    #[serde(skip_serializing)]
    pub provenance: Option<toml::Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("out"),
            workers: 0,
            seed: None,
            phantom: PhantomSpec::default(),
            preprocess: PreprocessConfig::default(),
            forward_epi: ForwardEpiConfig::default(),
            forward_vol: ForwardVolConfig::default(),
            invert: InvertConfig::default(),
            lat: LatConfig::default(),
            localize: LocalizeConfig::default(),
            metrics: MetricsConfig::default(),
            bench: BenchConfig::default(),
            provenance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Signal CSV.
    pub input: PathBuf,
    pub filter: FilterSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardEpiConfig {
    /// Closed torso surface (VTK polydata).
    pub torso: PathBuf,
    /// Closed heart surface (VTK polydata); alternative to `mesh`.
    pub heart: Option<PathBuf>,
    /// Volume mesh whose heart boundary is used as the heart surface.
    pub mesh: Option<PathBuf>,
    /// Electrode positions; without it the torso `electrode` labels are used.
    pub electrodes: Option<PathBuf>,
    /// Heart-surface potentials to push through the operator.
    pub sources: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardVolConfig {
    /// Tetrahedral torso mesh with `region` labels.
    pub mesh: PathBuf,
    /// Electrode positions, snapped to the nearest torso-surface node;
    /// without it the mesh `electrode` labels are used.
    pub electrodes: Option<PathBuf>,
    pub conductivity: ConductivityMap,
    pub quadrature: Quadrature,
    /// Heart-node sources to solve for directly.
    pub sources: Option<PathBuf>,
}

impl Default for ForwardVolConfig {
    fn default() -> Self {
        ForwardVolConfig {
            mesh: PathBuf::new(),
            electrodes: None,
            conductivity: ConductivityMap::homogeneous(1.0),
            quadrature: Quadrature::default(),
            sources: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvertConfig {
    /// Operator cache written by `forward-epi` or `forward-vol`.
    pub operator: PathBuf,
    /// Preprocessed signal CSV.
    pub signal: PathBuf,
    pub regularization: RegularizationParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatConfig {
    /// Source CSV written by `invert`.
    pub sources: PathBuf,
    pub params: LatParams,
    /// When set, `lat.vtk` is written on this mesh.
    pub mesh: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    /// `lat.csv` written by `lat`.
    pub lat: PathBuf,
    pub mesh: PathBuf,
    pub percentile: f64,
    /// `truth.toml` of a phantom case; enables the error report.
    pub truth: Option<PathBuf>,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            lat: PathBuf::new(),
            mesh: PathBuf::new(),
            percentile: 10.0,
            truth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub lat: PathBuf,
    pub mesh: PathBuf,
    pub reference: InfarctReference,
    pub tat_threshold_ms: f64,
    pub formula: OverlapFormula,
    /// Segment frame. Apex and base centre default to the lowest heart node
    /// and the centre of the top heart layer (long axis along +z).
    pub apex: Option<[f64; 3]>,
    pub base_centroid: Option<[f64; 3]>,
    pub rv_dir: [f64; 3],
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            lat: PathBuf::new(),
            mesh: PathBuf::new(),
            reference: InfarctReference::default(),
            tat_threshold_ms: 40.0,
            formula: OverlapFormula::Jaccard,
            apex: None,
            base_centroid: None,
            rv_dir: [-1.0, 0.0, 0.0],
        }
    }
}

/// Parses a flag value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| usage(format!("bad flag --{key}")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| usage(format!("--{key}: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Splits `--key value` / `--key=value` pairs. `--config` is returned
/// separately because it must be read before the others apply.
pub fn parse_overrides(args: &[String]) -> CliResult<(Option<PathBuf>, Vec<(String, String)>)> {
    let mut config = None;
    let mut pairs = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(usage(format!("unexpected argument {arg:?}; overrides take the form --key value")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| usage(format!("flag --{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        if key == "config" {
            config = Some(PathBuf::from(value));
        } else {
            pairs.push((key, value));
        }
    }
    Ok((config, pairs))
}

/// Reads the config file (if any), applies overrides in order and checks
/// every key against the schema.
pub fn resolve(config: Option<&Path>, overrides: &[(String, String)]) -> CliResult<RunConfig> {
    let mut table = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| usage(format!("malformed config {}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for (key, raw) in overrides {
        set_path(&mut table, key, parse_value(raw))?;
    }
    let mut cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        let flags: Vec<String> = overrides.iter().map(|(k, _)| format!("--{k}")).collect();
        let hint = if flags.is_empty() { String::new() } else { format!(" (flags given: {})", flags.join(" ")) };
        usage(format!("invalid configuration: {}{hint}", e.message().trim()))
    })?;
    if let Some(seed) = cfg.seed {
        cfg.phantom.seed = seed;
        cfg.bench.master_seed = seed;
    }
    cfg.provenance = None;
    Ok(cfg)
}

/// Fails with the dotted name when a required path is unset.
pub fn required<'a>(path: &'a Path, key: &str) -> CliResult<&'a Path> {
    if path.as_os_str().is_empty() {
        Err(usage(format!("{key} is required (set it in the config or pass --{key} <path>)")))
    } else if !path.exists() {
        Err(usage(format!("{key}: {} does not exist", path.display())))
    } else {
        Ok(path)
    }
}

pub fn optional<'a>(path: Option<&'a PathBuf>, key: &str) -> CliResult<Option<&'a Path>> {
    path.map(|p| required(p, key)).transpose()
}
