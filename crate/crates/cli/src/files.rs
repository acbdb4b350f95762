//! Source fields and activation maps as CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use volecgi::activation::LatMap;
use volecgi::io::{read_signal_csv, sidecar_path, write_signal_csv, SignalSidecar};
use volecgi::sigproc::SignalBlock;
use volecgi::{Domain, SourceField};

use crate::error::{usage, CliResult};

fn domain_name(d: Domain) -> String {
    match d {
        Domain::HeartVolume => "heart-volume",
        Domain::HeartSurface => "heart-surface",
    }
    .to_string()
}

fn parse_domain(s: &str, path: &Path) -> CliResult<Domain> {
    match s {
        "heart-volume" => Ok(Domain::HeartVolume),
        "heart-surface" => Ok(Domain::HeartSurface),
        other => Err(usage(format!("{}: unknown domain {other:?}", path.display()))),
    }
}

/// Same layout as a signal CSV with node ids as column names; the sidecar
/// records the domain.
pub fn write_field(path: &Path, f: &SourceField) -> CliResult<()> {
    let ids = f.nodes.iter().map(|n| n.to_string()).collect();
    let mut block = SignalBlock::new(f.values.clone(), f.sample_rate, ids)?;
    block.time_zero = f.time_zero;
    let provenance = BTreeMap::from([("domain".to_string(), domain_name(f.domain))]);
    Ok(write_signal_csv(path, &block, &provenance)?)
}

pub fn read_field(path: &Path) -> CliResult<SourceField> {
    let block = read_signal_csv(path)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side)
        .map_err(|e| usage(format!("{}: source sidecar {} is missing: {e}", path.display(), side.display())))?;
    let sidecar: SignalSidecar = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", side.display())))?;
    let domain = sidecar
        .provenance
        .get("domain")
        .ok_or_else(|| usage(format!("{}: no domain recorded", side.display())))?;
    let domain = parse_domain(domain, &side)?;
    let nodes = block
        .electrode_ids
        .iter()
        .map(|id| id.parse::<usize>().map_err(|_| usage(format!("{}: column {id:?} is not a node id", path.display()))))
        .collect::<CliResult<Vec<_>>>()?;
    let mut f = SourceField::new(block.samples, nodes, domain, block.sample_rate)?;
    f.time_zero = block.time_zero;
    Ok(f)
}

/// `node,lat_ms` rows (empty LAT where masked) plus a `domain` sidecar.
pub fn write_lat(path: &Path, lats: &LatMap) -> CliResult<()> {
    let mut out = String::from("node,lat_ms\n");
    for (i, &n) in lats.nodes.iter().enumerate() {
        if lats.valid[i] {
            let _ = writeln!(out, "{n},{}", lats.lat_ms[i]);
        } else {
            let _ = writeln!(out, "{n},");
        }
    }
    std::fs::write(path, out).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    let side = sidecar_path(path);
    std::fs::write(&side, format!("domain = \"{}\"\n", domain_name(lats.domain)))
        .map_err(|e| usage(format!("cannot write {}: {e}", side.display())))
}

pub fn read_lat(path: &Path) -> CliResult<LatMap> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim()) != Some("node,lat_ms") {
        return Err(usage(format!("{}: line 1: header must be `node,lat_ms`", path.display())));
    }
    let (mut nodes, mut lat_ms, mut valid) = (Vec::new(), Vec::new(), Vec::new());
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || usage(format!("{}: line {}: expected `node,lat_ms`", path.display(), ln + 1));
        let (n, l) = line.split_once(',').ok_or_else(bad)?;
        nodes.push(n.trim().parse::<usize>().map_err(|_| bad())?);
        let l = l.trim();
        if l.is_empty() {
            lat_ms.push(f64::NAN);
            valid.push(false);
        } else {
            lat_ms.push(l.parse::<f64>().map_err(|_| bad())?);
            valid.push(true);
        }
    }
    let side = sidecar_path(path);
    let domain = match std::fs::read_to_string(&side) {
        Ok(t) => {
            let table: toml::Table = toml::from_str(&t).map_err(|e| usage(format!("{}: {e}", side.display())))?;
            let d = table.get("domain").and_then(|v| v.as_str()).unwrap_or("heart-volume");
            parse_domain(d, &side)?
        }
        Err(_) => Domain::HeartVolume,
    };
    Ok(LatMap {
        lat_ms,
        valid,
        nodes,
        domain,
    })
}
