use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use serde::Serialize;
use volecgi::activation::{earliest_site, infarct_metrics, lat_map};
use volecgi::bench::{compare_methods, localization_error, run_benchmark, write_report};
use volecgi::fwd_epi::{assemble_epicardial, forward_epicardial, ElectrodeSites};
use volecgi::fwd_vol::VolumeConductor;
use volecgi::geom::vtk::{read_tet_mesh, read_tri_mesh, write_tet_mesh, write_tri_mesh, Field};
use volecgi::geom::{aha17_segments, MeshGraph, Region, TetMesh, TriMesh};
use volecgi::inverse::{invert_matrix, write_lcurve_csv};
use volecgi::io::{
    read_electrodes_csv, read_operator_cache, read_signal_csv, write_operator_cache, write_signal_csv, CacheHeader,
};
use volecgi::phantom::{generate_case, write_case, TruthRecord};
use volecgi::sigproc::preprocess;
use volecgi::{Domain, Vec3};

use crate::config::{optional, required, RunConfig};
use crate::error::{usage, CliResult};
use crate::files::{read_field, read_lat, write_field, write_lat};
use crate::provenance::{sha256_bytes, RunRecord};

const OPERATOR_FILE: &str = "operator.bin";

fn stage(provenance: &str) -> BTreeMap<String, String> {
    BTreeMap::from([("stage".to_string(), provenance.to_string())])
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = toml::to_string_pretty(value).map_err(|e| usage(format!("cannot serialize {}: {e}", path.display())))?;
    std::fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

/// Nodes carrying electrode labels 0, 1, … in label order.
fn labelled_nodes(labels: Option<&[i32]>) -> Option<Vec<usize>> {
    let mut pairs: Vec<(i32, usize)> = labels?
        .iter()
        .enumerate()
        .filter(|(_, &l)| l >= 0)
        .map(|(n, &l)| (l, n))
        .collect();
    pairs.sort_unstable();
    (!pairs.is_empty()).then(|| pairs.into_iter().map(|(_, n)| n).collect())
}

fn hash_nodes(nodes: &[usize]) -> String {
    sha256_bytes(nodes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",").as_bytes())
}

pub fn phantom(cfg: &RunConfig, run: &mut RunRecord) -> CliResult<()> {
    let (phantom, truth) = run.time("generate", || generate_case(&cfg.phantom))?;
    run.time("write", || write_case(&cfg.out, &phantom, &truth))?;
    info!(
        "{} case, seed node {} at {:?}",
        truth.seed_class, truth.seeds[0], truth.origin
    );
    Ok(())
}

pub fn preprocess_signals(cfg: &RunConfig, run: &mut RunRecord) -> CliResult<()> {
    let c = &cfg.preprocess;
    let input = required(&c.input, "preprocess.input")?;
    run.input("preprocess.input", input)?;
    let raw = read_signal_csv(input)?;
    let clean = run.time("filter", || preprocess(&raw, &c.filter))?;
    Ok(write_signal_csv(&cfg.out.join("bspm.csv"), &clean, &stage("preprocess"))?)
}

pub fn forward_vol(cfg: &RunConfig, run: &mut RunRecord) -> CliResult<()> {
    let c = &cfg.forward_vol;
    let mesh_path = required(&c.mesh, "forward_vol.mesh")?;
    run.input("forward_vol.mesh", mesh_path)?;
    let (mesh, _) = read_tet_mesh(mesh_path)?;
    let electrodes = match optional(c.electrodes.as_ref(), "forward_vol.electrodes")? {
        Some(path) => {
            run.input("forward_vol.electrodes", path)?;
            let torso = mesh.boundary_surface(Region::All)?;
            let surface = torso.parent_nodes.expect("boundary surface maps to mesh nodes");
            read_electrodes_csv(path)?
                .iter()
                .map(|e| mesh.nearest_node(&e.position, &surface))
                .collect()
        }
        None => labelled_nodes(mesh.point_labels.as_deref()).ok_or_else(|| {
            usage(format!(
                "{} has no `electrode` point labels; set forward_vol.electrodes",
                mesh_path.display()
            ))
        })?,
    };
    let conductor = run.time("factorize", || VolumeConductor::new(&mesh, &c.conductivity))?;
    let op = run.time("green_functions", || conductor.operator(&electrodes, c.quadrature))?;
    let header = CacheHeader {
        kind: "volumetric".into(),
        rows: op.matrix.nrows(),
        cols: op.matrix.ncols(),
        hashes: BTreeMap::from([
            ("mesh".to_string(), op.mesh_hash.clone()),
            ("conductivity".to_string(), op.conductivity_hash.clone()),
            ("electrodes".to_string(), hash_nodes(&electrodes)),
        ]),
        centred: op.centred,
        flags: BTreeMap::from([("quadrature".to_string(), format!("{:?}", op.quadrature).to_lowercase())]),
        has_constraint: true,
        electrodes: electrodes.clone(),
        heart_nodes: op.heart_nodes.clone(),
    };
    write_operator_cache(&cfg.out.join(OPERATOR_FILE), &header, &op.matrix, Some(&op.constraint))?;
    if let Some(path) = optional(c.sources.as_ref(), "forward_vol.sources")? {
        run.input("forward_vol.sources", path)?;
        let f = read_field(path)?;
        let g = run.time("forward_direct", || conductor.forward_direct(&f, &electrodes))?;
        write_signal_csv(&cfg.out.join("bspm.csv"), &g, &stage("forward-vol"))?;
    }
    Ok(())
}

pub fn forward_epi(cfg: &RunConfig, run: &mut RunRecord) -> CliResult<()> {
    let c = &cfg.forward_epi;
    let torso_path = required(&c.torso, "forward_epi.torso")?;
    run.input("forward_epi.torso", torso_path)?;
    let (torso, _) = read_tri_mesh(torso_path)?;
    let heart_file = optional(c.heart.as_ref(), "forward_epi.heart")?;
    let mesh_file = optional(c.mesh.as_ref(), "forward_epi.mesh")?;
    let heart: TriMesh = match (heart_file, mesh_file) {
        (Some(h), None) => {
            run.input("forward_epi.heart", h)?;
            read_tri_mesh(h)?.0
        }
        (None, Some(m)) => {
            run.input("forward_epi.mesh", m)?;
            read_tet_mesh(m)?.0.boundary_surface(Region::heart())?
        }
        _ => return Err(usage("set exactly one of forward_epi.heart and forward_epi.mesh")),
    };
    let (sites, electrode_nodes, electrode_hash) = match optional(c.electrodes.as_ref(), "forward_epi.electrodes")? {
        Some(path) => {
            run.input("forward_epi.electrodes", path)?;
            let points: Vec<Vec3> = read_electrodes_csv(path)?.iter().map(|e| e.position).collect();
            let text: String = points.iter().map(|p| format!("{},{},{};", p.x, p.y, p.z)).collect();
            (ElectrodeSites::Points(points), Vec::new(), sha256_bytes(text.as_bytes()))
        }
        None => {
            let nodes = labelled_nodes(torso.labels.as_deref()).ok_or_else(|| {
                usage(format!(
                    "{} has no `electrode` point labels; set forward_epi.electrodes",
                    torso_path.display()
                ))
            })?;
            let hash = hash_nodes(&nodes);
            (ElectrodeSites::Nodes(nodes.clone()), nodes, hash)
        }
    };
    let op = run.time("assemble", || assemble_epicardial(&torso, &heart, &sites))?;
    let header = CacheHeader {
        kind: "epicardial".into(),
        rows: op.matrix.nrows(),
        cols: op.matrix.ncols(),
        hashes: BTreeMap::from([
            ("torso".to_string(), op.torso_hash.clone()),
            ("heart".to_string(), op.heart_hash.clone()),
            ("electrodes".to_string(), electrode_hash),
        ]),
        centred: op.centred,
        flags: BTreeMap::new(),
        has_constraint: false,
        electrodes: electrode_nodes,
        heart_nodes: op.heart_nodes.clone(),
    };
    write_operator_cache(&cfg.out.join(OPERATOR_FILE), &header, &op.matrix, None)?;
    if let Some(path) = optional(c.sources.as_ref(), "forward_epi.sources")? {
        run.input("forward_epi.sources", path)?;
        let h = read_field(path)?;
        let g = run.time("forward", || forward_epicardial(&op, &h))?;
        write_signal_csv(&cfg.out.join("bspm.csv"), &g, &stage("forward-epi"))?;
    }
    // heart surface the columns refer to, for viewing results; `mesh_node`
    // holds the source id of each vertex
    let ids = op
        .heart_nodes
        .iter()
        .map(|&n| i32::try_from(n).map_err(|_| usage(format!("heart node {n} does not fit a VTK int"))))
        .collect::<CliResult<Vec<i32>>>()?;
    write_tri_mesh(cfg.out.join("heart_surface.vtk"), &heart, &[(MESH_NODE, Field::Int(&ids))])?;
    Ok(())
}

#[derive(Serialize)]
struct SolutionSummary {
    kind: String,
    lambda: f64,
    residual_norm: f64,
    solution_norm: f64,
    corner_at_boundary: bool,
    degenerate_curve: bool,
    /// Largest |mᵀf| / Σ|m∘f| over samples; volumetric only.
    constraint_residual: Option<f64>,
}

pub fn invert(cfg: &RunConfig, run: &mut RunRecord) -> CliResult<()> {
    let c = &cfg.invert;
    let op_path = required(&c.operator, "invert.operator")?;
    let signal_path = required(&c.signal, "invert.signal")?;
    run.input("invert.operator", op_path)?;
    run.input("invert.signal", signal_path)?;
    let cache = read_operator_cache(op_path, &BTreeMap::new())?;
    let g = read_signal_csv(signal_path)?;
    if cache.header.rows != g.n_electrodes() {
        return Err(usage(format!(
            "dimension mismatch: operator {} has {} electrode rows ({} × {}) but signal {} has {} electrodes",
            op_path.display(),
            cache.header.rows,
            cache.header.rows,
            cache.header.cols,
            signal_path.display(),
            g.n_electrodes()
        )));
    }
    let domain = match cache.header.kind.as_str() {
        "epicardial" => Domain::HeartSurface,
        "volumetric" => Domain::HeartVolume,
        other => return Err(usage(format!("{}: unknown operator kind {other:?}", op_path.display()))),
    };
    let sol = run.time("invert", || {
        invert_matrix(
            &cache.matrix,
            cache.constraint.as_ref(),
            cache.header.heart_nodes.clone(),
            domain,
            &g,
            &c.regularization,
        )
    })?;
    write_field(&cfg.out.join("sources.csv"), &sol.field)?;
    if !sol.curve.is_empty() {
        write_lcurve_csv(&cfg.out.join("lcurve.csv"), &sol.curve)?;
    }
    let constraint_residual = cache.constraint.as_ref().map(|m| {
        sol.field
            .values
            .column_iter()
            .map(|col| {
                let dot: f64 = col.iter().zip(m.iter()).map(|(a, b)| a * b).sum();
                let scale: f64 = col.iter().zip(m.iter()).map(|(a, b)| (a * b).abs()).sum();
                if scale > 0.0 {
                    dot.abs() / scale
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    });
    if sol.corner_at_boundary {
        warn!("L-curve corner at the end of the λ grid; consider widening it");
    }
    write_toml(
        &cfg.out.join("solution.toml"),
        &SolutionSummary {
            kind: cache.header.kind.clone(),
            lambda: sol.lambda,
            residual_norm: sol.residual_norm,
            solution_norm: sol.solution_norm,
            corner_at_boundary: sol.corner_at_boundary,
            degenerate_curve: sol.degenerate_curve,
            constraint_residual,
        },
    )
}

/// A volume mesh, or a surface mesh when the file holds polydata.
enum AnyMesh {
    Volume(TetMesh),
    /// With the `mesh_node` field when present.
    Surface(TriMesh, Option<Vec<f64>>),
}

/// Point field of `heart_surface.vtk` mapping vertices to source ids.
const MESH_NODE: &str = "mesh_node";

fn read_any_mesh(path: &Path) -> CliResult<AnyMesh> {
    match read_tet_mesh(path) {
        Ok((m, _)) => Ok(AnyMesh::Volume(m)),
        Err(vol_err) => match read_tri_mesh(path) {
            Ok((m, arrays)) => Ok(AnyMesh::Surface(m, arrays.point.get(MESH_NODE).cloned())),
            Err(_) => Err(vol_err.into()),
        },
    }
}

pub fn lat(cfg: &RunConfig, run: &mut RunRecord) -> CliResult<()> {
    let c = &cfg.lat;
    let path = required(&c.sources, "lat.sources")?;
    run.input("lat.sources", path)?;
    let f = read_field(path)?;
    let lats = run.time("lat", || lat_map(&f, &c.params))?;
    write_lat(&cfg.out.join("lat.csv"), &lats)?;
    if let Some(mesh_path) = optional(c.mesh.as_ref(), "lat.mesh")? {
        run.input("lat.mesh", mesh_path)?;
        let out = cfg.out.join("lat.vtk");
        match read_any_mesh(mesh_path)? {
            AnyMesh::Volume(m) => {
                let data = lats.point_data(m.n_vertices())?;
                write_tet_mesh(out, &m, &[("lat_ms", Field::Float(&data))])?;
            }
            AnyMesh::Surface(m, None) => {
                let data = lats.point_data(m.n_vertices())?;
                write_tri_mesh(out, &m, &[("lat_ms", Field::Float(&data))])?;
            }
            AnyMesh::Surface(m, Some(ids)) => {
                let by_node: BTreeMap<usize, f64> = lats.valid_entries().map(|(_, n, t)| (n, t)).collect();
                let data: Vec<f64> = ids.iter().map(|&id| by_node.get(&(id as usize)).copied().unwrap_or(-1.0)).collect();
                write_tri_mesh(out, &m, &[("lat_ms", Field::Float(&data))])?;
            }
        }
    }
    info!("{} of {} nodes have an activation time", lats.n_valid(), lats.len());
    Ok(())
}

#[derive(Serialize)]
struct OriginReport {
    estimate: [f64; 3],
    percentile: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    euclidean_mm: Option<f64>,
    /// Through the heart wall.
    #[serde(skip_serializing_if = "Option::is_none")]
    geodesic_volume_mm: Option<f64>,
    /// Along the heart surface.
    #[serde(skip_serializing_if = "Option::is_none")]
    geodesic_surface_mm: Option<f64>,
}

pub fn localize(cfg: &RunConfig, run: &mut RunRecord) -> CliResult<()> {
    let c = &cfg.localize;
    let lat_path = required(&c.lat, "localize.lat")?;
    let mesh_path = required(&c.mesh, "localize.mesh")?;
    run.input("localize.lat", lat_path)?;
    run.input("localize.mesh", mesh_path)?;
    let lats = read_lat(lat_path)?;
    let (mesh, _) = read_tet_mesh(mesh_path)?;
    let estimate = earliest_site(&lats, &mesh.vertices, c.percentile)?;
    let mut report = OriginReport {
        estimate: estimate.into(),
        percentile: c.percentile,
        truth: None,
        euclidean_mm: None,
        geodesic_volume_mm: None,
        geodesic_surface_mm: None,
    };
    if let Some(truth_path) = optional(c.truth.as_ref(), "localize.truth")? {
        run.input("localize.truth", truth_path)?;
        let text = std::fs::read_to_string(truth_path)
            .map_err(|e| usage(format!("cannot read {}: {e}", truth_path.display())))?;
        let truth: TruthRecord =
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", truth_path.display())))?;
        let origin = Vec3::from(truth.origin);
        let volume = MeshGraph::from_tets(&mesh, Region::heart());
        let surface = MeshGraph::from_surface(&mesh.boundary_surface(Region::heart())?);
        let through = localization_error(&origin, &estimate, &volume)?;
        let along = localization_error(&origin, &estimate, &surface)?;
        report.truth = Some(truth.origin);
        report.euclidean_mm = Some(through.euclidean);
        report.geodesic_volume_mm = Some(through.geodesic);
        report.geodesic_surface_mm = Some(along.geodesic);
    }
    write_toml(&cfg.out.join("origin.toml"), &report)
}

pub fn metrics(cfg: &RunConfig, run: &mut RunRecord) -> CliResult<()> {
    let c = &cfg.metrics;
    let lat_path = required(&c.lat, "metrics.lat")?;
    let mesh_path = required(&c.mesh, "metrics.mesh")?;
    run.input("metrics.lat", lat_path)?;
    run.input("metrics.mesh", mesh_path)?;
    let lats = read_lat(lat_path)?;
    let (mesh, _) = read_tet_mesh(mesh_path)?;
    let heart = mesh.heart_nodes();
    if heart.is_empty() {
        return Err(usage(format!("{} has no heart region", mesh_path.display())));
    }
    let z = |n: &usize| mesh.vertices[*n].z;
    let apex = match c.apex {
        Some(a) => Vec3::from(a),
        None => mesh.vertices[*heart.iter().min_by(|a, b| z(a).total_cmp(&z(b))).expect("non-empty")],
    };
    let base = match c.base_centroid {
        Some(b) => Vec3::from(b),
        None => {
            let top = heart.iter().map(z).fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-6 * (top - apex.z).abs().max(1.0);
            let layer: Vec<Vec3> = heart.iter().filter(|n| z(n) >= top - tol).map(|&n| mesh.vertices[n]).collect();
            layer.iter().sum::<Vec3>() / layer.len() as f64
        }
    };
    let segments = aha17_segments(&mesh, apex, base, Vec3::from(c.rv_dir))?;
    let weights: BTreeMap<usize, f64> = match lats.domain {
        Domain::HeartVolume => heart.iter().copied().zip(mesh.heart_node_volumes()?).collect(),
        Domain::HeartSurface => {
            let s = mesh.boundary_surface(Region::heart())?;
            let parents = s.parent_nodes.clone().expect("boundary surface maps to mesh nodes");
            parents.into_iter().zip(s.lumped_areas()).collect()
        }
    };
    let volumes = lats
        .nodes
        .iter()
        .map(|n| {
            weights
                .get(n)
                .copied()
                .ok_or_else(|| usage(format!("LAT node {n} is not a heart node of {}", mesh_path.display())))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    let report = infarct_metrics(
        &lats,
        &segments,
        &mesh.vertices,
        &volumes,
        &c.reference,
        c.tat_threshold_ms,
        c.formula,
    )?;
    let toml_path = cfg.out.join("infarct.toml");
    std::fs::write(&toml_path, report.to_toml()?).map_err(|e| usage(format!("cannot write {}: {e}", toml_path.display())))?;
    let table_path = cfg.out.join("infarct.txt");
    let table = report.table();
    print!("{table}");
    std::fs::write(&table_path, table).map_err(|e| usage(format!("cannot write {}: {e}", table_path.display())))
}

pub fn bench(cfg: &RunConfig, run: &mut RunRecord) -> CliResult<()> {
    let report = run.time("bench", || run_benchmark(&cfg.bench, cfg.workers))?;
    write_report(&cfg.out, &report)?;
    for row in report.incomplete() {
        warn!("{} {} {}: {}", row.variant.as_str(), row.case, row.method.as_str(), row.status);
    }
    for &variant in &cfg.bench.variants {
        match compare_methods(&report, variant) {
            Ok(cmp) => {
                for c in cmp {
                    println!("{}: {}", variant.as_str(), c.statement());
                }
            }
            Err(e) => warn!("{}: {e}", variant.as_str()),
        }
    }
    Ok(())
}
