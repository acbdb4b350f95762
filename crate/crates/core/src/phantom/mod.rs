//! Synthetic torso/heart phantom with known activation.
//!
//! The torso is a voxelized ellipsoid; the heart is a truncated ellipsoidal
//! shell (a cup open at the base, apex down) embedded in it. Activation
//! spreads from a seed node along heart-graph shortest paths at a constant
//! conduction velocity, every node emits a biphasic pulse centred on its
//! activation time, and body-surface potentials come from the volumetric
//! direct solver.

mod voxel;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::{Domain, SourceField};
use crate::fwd_vol::{ConductivityMap, VolumeConductor};
use crate::geom::vtk::{write_tet_mesh, write_tri_mesh, Field};
use crate::geom::{aha17_segments, MeshGraph, Region, SegmentModel, TetMesh, TriMesh, HEART, TORSO};
use crate::io::{write_electrodes_csv, write_signal_csv, Electrode};
use crate::sigproc::{add_gaussian_noise, butterworth, FilterKind, SignalBlock};
use crate::{Error, Result, Vec3};
use voxel::VoxelGrid;

/// Where a case's activation starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedClass {
    /// Nodes near the open base of the cup.
    BaseRim,
    /// Intramural nodes, away from both wall surfaces.
    InnerWall,
    /// Outer (epicardial) surface nodes below the base.
    OuterWall,
}

impl SeedClass {
    pub const ALL: [SeedClass; 3] = [SeedClass::BaseRim, SeedClass::InnerWall, SeedClass::OuterWall];

    pub fn as_str(self) -> &'static str {
        match self {
            SeedClass::BaseRim => "base-rim",
            SeedClass::InnerWall => "inner-wall",
            SeedClass::OuterWall => "outer-wall",
        }
    }
}

impl fmt::Display for SeedClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub torso_semi_axes: [f64; 3],
    pub heart_centre: [f64; 3],
    /// Outer semi-axes of the shell; z is the long axis.
    pub heart_semi_axes: [f64; 3],
    pub wall_mm: f64,
    /// Height of the base plane above the shell centre.
    pub base_offset_mm: f64,
    pub pitch_mm: f64,
    pub electrodes: usize,
    pub seed_class: SeedClass,
    /// m/s, i.e. mm/ms.
    pub cv_m_per_s: f64,
    pub sigma_w_ms: f64,
    /// Time of the seed's activation within the window.
    pub onset_ms: f64,
    pub sample_rate_hz: f64,
    pub window_ms: f64,
    /// `inf` disables noise.
    pub snr_db: f64,
    /// Low-pass applied to the noisy signals; 0 disables it.
    pub lowpass_hz: f64,
    /// Heart conductivity relative to the torso's 1 S/m in the forward model.
    pub heart_conductivity: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            torso_semi_axes: [150.0, 100.0, 200.0],
            heart_centre: [30.0, -25.0, 30.0],
            heart_semi_axes: [45.0, 45.0, 60.0],
            wall_mm: 12.0,
            base_offset_mm: 30.0,
            pitch_mm: 6.0,
            electrodes: 128,
            seed_class: SeedClass::InnerWall,
            cv_m_per_s: 0.7,
            sigma_w_ms: 6.0,
            onset_ms: 30.0,
            sample_rate_hz: 1000.0,
            window_ms: 400.0,
            snr_db: 20.0,
            lowpass_hz: 50.0,
            heart_conductivity: 0.7,
            seed: 0,
        }
    }
}

/// Minimum heart node count of a usable phantom.
pub const MIN_HEART_NODES: usize = 500;

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pitch_mm", self.pitch_mm),
            ("wall_mm", self.wall_mm),
            ("cv_m_per_s", self.cv_m_per_s),
            ("sigma_w_ms", self.sigma_w_ms),
            ("sample_rate_hz", self.sample_rate_hz),
            ("window_ms", self.window_ms),
            ("heart_conductivity", self.heart_conductivity),
        ]
        .into_iter()
        .chain(self.torso_semi_axes.iter().map(|&v| ("torso_semi_axes", v)))
        .chain(self.heart_semi_axes.iter().map(|&v| ("heart_semi_axes", v)));
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.onset_ms >= 0.0) || !(self.lowpass_hz >= 0.0) || self.snr_db.is_nan() {
            return Err(Error::InvalidInput("onset_ms and lowpass_hz must be ≥ 0 and snr_db a number".into()));
        }
        if self.electrodes < 2 {
            return Err(Error::InvalidInput("need at least 2 electrodes".into()));
        }
        let frame = self.frame();
        if frame.inner.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "wall of {} mm is thicker than the shell semi-axes allow",
                self.wall_mm
            )));
        }
        let z = self.base_offset_mm;
        if !(z > -frame.inner.z && z < frame.outer.z) {
            return Err(Error::InvalidInput(format!(
                "base plane offset {z} mm must cut the cavity (between {} and {})",
                -frame.inner.z, frame.outer.z
            )));
        }
        // the shell grown by two voxels must stay inside the torso
        let torso = Vec3::from(self.torso_semi_axes);
        let grown = frame.outer.add_scalar(2.0 * self.pitch_mm);
        let probe = crate::geom::shapes::ellipsoid_surface(3, grown, frame.centre);
        if probe.vertices.iter().any(|p| p.component_div(&torso).norm() >= 1.0) {
            return Err(Error::InvalidInput("heart shell intersects the torso surface".into()));
        }
        Ok(())
    }

    pub fn frame(&self) -> ShellFrame {
        let outer = Vec3::from(self.heart_semi_axes);
        let centre = Vec3::from(self.heart_centre);
        ShellFrame {
            centre,
            outer,
            inner: outer.add_scalar(-self.wall_mm),
            base_z: centre.z + self.base_offset_mm,
        }
    }

    /// Forward-model conductivity: torso 1 S/m, heart per the spec.
    pub fn conductivity(&self) -> ConductivityMap {
        let mut s = ConductivityMap::homogeneous(1.0);
        if self.heart_conductivity != 1.0 {
            s.set(HEART, self.heart_conductivity);
        }
        s
    }

    /// Smooth torso ellipsoid for the boundary-element model; the voxel torso
    /// surface has far too many vertices for a dense solve.
    pub fn bem_torso(&self, level: usize) -> TriMesh {
        crate::geom::shapes::ellipsoid_surface(level, Vec3::from(self.torso_semi_axes), Vec3::zeros())
    }

    pub fn waveform(&self) -> Waveform {
        Waveform {
            sigma_w_ms: self.sigma_w_ms,
            onset_ms: self.onset_ms,
            window_ms: self.window_ms,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Implicit description of the heart shell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShellFrame {
    pub centre: Vec3,
    pub outer: Vec3,
    pub inner: Vec3,
    pub base_z: f64,
}

impl ShellFrame {
    fn level(&self, axes: &Vec3, p: &Vec3) -> f64 {
        (p - self.centre).component_div(axes).norm()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p.z <= self.base_z && self.level(&self.outer, p) <= 1.0 && self.level(&self.inner, p) > 1.0
    }

    /// Radial distance from `p` to the ellipsoid with `axes`, along the ray
    /// from the centre.
    fn radial_gap(&self, axes: &Vec3, p: &Vec3) -> f64 {
        let r = (p - self.centre).norm();
        let l = self.level(axes, p);
        if l > 0.0 {
            (r * (1.0 - 1.0 / l)).abs()
        } else {
            f64::INFINITY
        }
    }

    pub fn apex(&self) -> Vec3 {
        self.centre - Vec3::new(0.0, 0.0, self.outer.z)
    }
}

/// Meshes and electrodes shared by all cases of one spec.
#[derive(Debug, Clone)]
pub struct PhantomGeometry {
    pub mesh: TetMesh,
    /// Outer surface of the whole mesh.
    pub torso: TriMesh,
    /// Surface of the heart tetrahedra.
    pub heart_surface: TriMesh,
    /// Mesh node of every electrode, in sampling order.
    pub electrodes: Vec<usize>,
    pub frame: ShellFrame,
    pub pitch: f64,
}

/// Voxelizes the spec: every cube whose centre lies in the torso becomes five
/// tetrahedra, labelled heart when the centre lies in the shell. Both label
/// sets are grown until their boundaries are manifold.
pub fn build_geometry(spec: &PhantomSpec) -> Result<PhantomGeometry> {
    spec.validate()?;
    let torso = Vec3::from(spec.torso_semi_axes);
    let h = spec.pitch_mm;
    let dims = [0, 1, 2].map(|a| (2.0 * torso[a] / h).ceil() as usize);
    let origin = -Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * (h / 2.0);
    let frame = spec.frame();
    let mut grid = VoxelGrid::new(dims, origin, h, |c| {
        if c.component_div(&torso).norm() > 1.0 {
            None
        } else if frame.contains(&c) {
            Some(HEART)
        } else {
            Some(TORSO)
        }
    });
    let is_heart = |l: Option<i32>| l == Some(HEART);
    let grown = grid.make_well_composed(&is_heart, HEART);
    grid.make_well_composed(&|l: Option<i32>| l.is_some(), TORSO);
    if grown > 0 {
        log::debug!("heart label grown by {grown} cubes for a manifold surface");
    }
    if grid.count(&is_heart) == 0 {
        return Err(Error::InvalidInput(format!("pitch {h} mm leaves no heart voxels")));
    }
    let mesh = grid.to_mesh()?;
    let n_heart = mesh.heart_nodes().len();
    if n_heart < MIN_HEART_NODES {
        return Err(Error::InvalidInput(format!(
            "pitch {h} mm gives {n_heart} heart nodes; at least {MIN_HEART_NODES} are needed"
        )));
    }
    let torso_surface = mesh.boundary_surface(Region::All)?;
    let heart_surface = mesh.boundary_surface(Region::heart())?;
    if spec.electrodes > torso_surface.n_vertices() {
        return Err(Error::InvalidInput(format!(
            "{} electrodes requested but the torso surface has {} nodes",
            spec.electrodes,
            torso_surface.n_vertices()
        )));
    }
    let picks = farthest_point_sampling(&torso_surface.vertices, spec.electrodes, spec.seed)?;
    let parents = torso_surface.parent_nodes.as_ref().expect("boundary surface has parents");
    let electrodes = picks.iter().map(|&i| parents[i]).collect();
    Ok(PhantomGeometry {
        mesh,
        torso: torso_surface,
        heart_surface,
        electrodes,
        frame,
        pitch: h,
    })
}

/// Greedy farthest-point sample of `count` points. The first point is drawn
/// from `seed`; later ties go to the lowest index.
pub fn farthest_point_sampling(points: &[Vec3], count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > points.len() {
        return Err(Error::InvalidInput(format!("cannot sample {count} of {} points", points.len())));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = (rng.next_u64() % points.len() as u64) as usize;
    let mut picks = vec![first];
    let mut gap: Vec<f64> = points.iter().map(|p| (p - points[first]).norm()).collect();
    while picks.len() < count {
        let mut best = 0;
        for i in 1..gap.len() {
            if gap[i] > gap[best] {
                best = i;
            }
        }
        picks.push(best);
        for (g, p) in gap.iter_mut().zip(points) {
            *g = g.min((p - points[best]).norm());
        }
    }
    Ok(picks)
}

impl PhantomGeometry {
    /// Electrode ids `"0"`, `"1"`, … with their positions.
    pub fn electrode_table(&self) -> Vec<Electrode> {
        self.electrodes
            .iter()
            .enumerate()
            .map(|(i, &n)| Electrode {
                id: i.to_string(),
                position: self.mesh.vertices[n],
            })
            .collect()
    }

    /// AHA segments with the long axis from the base-plane centre to the apex
    /// and the reference direction along −x.
    pub fn segments(&self) -> Result<SegmentModel> {
        let base = Vec3::new(self.frame.centre.x, self.frame.centre.y, self.frame.base_z);
        aha17_segments(&self.mesh, self.frame.apex(), base, -Vec3::x())
    }

    /// Bounding-box diagonal of the heart nodes.
    pub fn heart_diagonal(&self) -> f64 {
        let nodes = self.mesh.heart_nodes();
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &n in nodes {
            lo = lo.inf(&self.mesh.vertices[n]);
            hi = hi.sup(&self.mesh.vertices[n]);
        }
        (hi - lo).norm()
    }

    /// Candidate seed nodes (mesh node ids, ascending) of a class.
    pub fn seed_candidates(&self, class: SeedClass) -> Vec<usize> {
        let mesh = &self.mesh;
        let f = &self.frame;
        let heart = mesh.heart_nodes();
        let top = heart.iter().map(|&n| mesh.vertices[n].z).fold(f64::NEG_INFINITY, f64::max);
        let base_band = top - 1.01 * self.pitch;
        let below = top - 2.01 * self.pitch;
        let parents = self.heart_surface.parent_nodes.as_ref().expect("surface has parents");
        let mut on_surface = vec![false; mesh.n_vertices()];
        let (mut epi, mut endo) = (Vec::new(), Vec::new());
        for &n in parents {
            on_surface[n] = true;
            let p = mesh.vertices[n];
            if p.z >= top - 1e-9 {
                continue;
            }
            if f.radial_gap(&f.outer, &p) <= f.radial_gap(&f.inner, &p) {
                epi.push(n);
            } else {
                endo.push(n);
            }
        }
        let nearest = |p: &Vec3, set: &[usize]| set.iter().map(|&n| (mesh.vertices[n] - p).norm()).fold(f64::INFINITY, f64::min);
        let mut out: Vec<usize> = match class {
            SeedClass::BaseRim => heart.iter().copied().filter(|&n| mesh.vertices[n].z >= base_band).collect(),
            SeedClass::OuterWall => epi.iter().copied().filter(|&n| mesh.vertices[n].z < below).collect(),
            SeedClass::InnerWall => heart
                .iter()
                .copied()
                .filter(|&n| !on_surface[n] && mesh.vertices[n].z < below)
                .filter(|&n| {
                    let p = mesh.vertices[n];
                    let (de, di) = (nearest(&p, &epi), nearest(&p, &endo));
                    let depth = de / (de + di);
                    (0.3..=0.85).contains(&depth)
                })
                .collect(),
        };
        out.sort_unstable();
        out
    }
}

/// Activation times (ms) of `nodes` from the nearest seed along `graph`
/// shortest paths; `cv` in m/s equals mm/ms.
pub fn simulate_activation(graph: &MeshGraph, nodes: &[usize], seeds: &[usize], cv: f64) -> Result<Vec<f64>> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("activation needs at least one seed".into()));
    }
    if !(cv > 0.0 && cv.is_finite()) {
        return Err(Error::InvalidInput(format!("conduction velocity must be positive, got {cv}")));
    }
    if let Some(&s) = seeds.iter().find(|&&s| !graph.contains(s)) {
        return Err(Error::InvalidInput(format!("seed {s} is not a heart node")));
    }
    let dist = graph.distances_from(seeds);
    nodes
        .iter()
        .map(|&n| {
            let d = dist.get(n).copied().unwrap_or(f64::INFINITY);
            if d.is_finite() {
                Ok(d / cv)
            } else {
                Err(Error::Unreachable(seeds[0], n))
            }
        })
        .collect()
}

/// Timing of the synthetic source pulses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waveform {
    pub sigma_w_ms: f64,
    pub onset_ms: f64,
    pub window_ms: f64,
    pub sample_rate_hz: f64,
}

impl Waveform {
    /// Unit-peak pulse `(τ/σ)·exp(½ − τ²/2σ²)`; steepest rise at τ = 0.
    pub fn pulse(&self, tau_ms: f64) -> f64 {
        let x = tau_ms / self.sigma_w_ms;
        x * (0.5 - 0.5 * x * x).exp()
    }

    pub fn n_samples(&self) -> usize {
        (self.window_ms * self.sample_rate_hz / 1000.0).round() as usize
    }
}

/// Per-node pulses centred on `onset + LAT`, with the volume-weighted mean
/// removed per sample so that `vᵀf_t = 0`.
pub fn synthesize_sources(lat_ms: &[f64], nodes: Vec<usize>, volumes: &[f64], wave: &Waveform) -> Result<SourceField> {
    if lat_ms.len() != nodes.len() || volumes.len() != nodes.len() {
        return Err(Error::Dimension {
            context: "LATs and volumes vs source nodes",
            expected: nodes.len(),
            found: if lat_ms.len() != nodes.len() { lat_ms.len() } else { volumes.len() },
        });
    }
    if lat_ms.is_empty() || lat_ms.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidInput("LATs must be finite and nonnegative".into()));
    }
    let latest = lat_ms.iter().cloned().fold(0.0, f64::max);
    let needed = wave.onset_ms + latest + 5.0 * wave.sigma_w_ms;
    if wave.window_ms < needed {
        return Err(Error::InvalidInput(format!(
            "window of {} ms is shorter than onset + max LAT + 5σ = {needed:.1} ms",
            wave.window_ms
        )));
    }
    let total: f64 = volumes.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("node volumes must have a positive sum".into()));
    }
    let n_t = wave.n_samples();
    let dt = 1000.0 / wave.sample_rate_hz;
    let mut values = nalgebra::DMatrix::from_fn(nodes.len(), n_t, |j, k| {
        wave.pulse(k as f64 * dt - wave.onset_ms - lat_ms[j])
    });
    for mut col in values.column_iter_mut() {
        // mean relative to the first entry, so identical rows cancel exactly
        let r = col[0];
        let mean = r + col.iter().zip(volumes).map(|(x, v)| v * (x - r)).sum::<f64>() / total;
        col.add_scalar_mut(-mean);
    }
    SourceField::new(values, nodes, Domain::HeartVolume, wave.sample_rate_hz)
}

/// Everything known about one synthetic case.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub seed_class: SeedClass,
    pub case_seed: u64,
    pub seeds: Vec<usize>,
    /// Seed coordinates (mm).
    pub origin: Vec3,
    /// Activation time from the seed (ms) per heart node, `heart_nodes()` order.
    pub lat_ms: Vec<f64>,
    pub onset_ms: f64,
    pub sources: SourceField,
    pub clean: SignalBlock,
    pub noisy: SignalBlock,
}

/// A built phantom: geometry, heart graph and factorized forward conductor.
pub struct Phantom {
    pub spec: PhantomSpec,
    pub geometry: PhantomGeometry,
    graph: MeshGraph,
    forward: VolumeConductor,
}

impl Phantom {
    pub fn new(spec: &PhantomSpec) -> Result<Self> {
        let geometry = build_geometry(spec)?;
        let graph = MeshGraph::from_tets(&geometry.mesh, Region::heart());
        let forward = VolumeConductor::new(&geometry.mesh, &spec.conductivity())?;
        Ok(Phantom {
            spec: spec.clone(),
            geometry,
            graph,
            forward,
        })
    }

    pub fn graph(&self) -> &MeshGraph {
        &self.graph
    }

    pub fn conductor(&self) -> &VolumeConductor {
        &self.forward
    }

    /// Case with the spec's seed class and seed.
    pub fn case(&self) -> Result<GroundTruth> {
        self.case_for(self.spec.seed_class, self.spec.seed)
    }

    /// Case of `class` whose seed node and noise are drawn from `case_seed`,
    /// with electrode potentials from the direct solver.
    pub fn case_for(&self, class: SeedClass, case_seed: u64) -> Result<GroundTruth> {
        self.case_with(class, case_seed, |f| self.forward.forward_direct(f, &self.geometry.electrodes))
    }

    /// As [`Phantom::case_for`] with a caller-supplied forward map (for
    /// example a precomputed transfer matrix of the same conductor).
    pub fn case_with(
        &self,
        class: SeedClass,
        case_seed: u64,
        forward: impl Fn(&SourceField) -> Result<SignalBlock>,
    ) -> Result<GroundTruth> {
        let candidates = self.geometry.seed_candidates(class);
        if candidates.is_empty() {
            return Err(Error::InvalidInput(format!("no {class} seed candidates at this pitch")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let seed = candidates[(rng.next_u64() % candidates.len() as u64) as usize];
        let noise_seed = rng.next_u64();
        let mesh = &self.geometry.mesh;
        let nodes = mesh.heart_nodes().to_vec();
        let lat_ms = simulate_activation(&self.graph, &nodes, &[seed], self.spec.cv_m_per_s)?;
        let sources = synthesize_sources(&lat_ms, nodes, self.forward.heart_volumes(), &self.spec.waveform())?;
        let clean = forward(&sources)?;
        let mut noisy = add_gaussian_noise(&clean, self.spec.snr_db, noise_seed)?;
        if self.spec.lowpass_hz > 0.0 && self.spec.lowpass_hz < 0.5 * self.spec.sample_rate_hz {
            noisy = butterworth(&noisy, FilterKind::Lowpass, self.spec.lowpass_hz, 4, true)?;
        }
        Ok(GroundTruth {
            seed_class: class,
            case_seed,
            seeds: vec![seed],
            origin: mesh.vertices[seed],
            lat_ms,
            onset_ms: self.spec.onset_ms,
            sources,
            clean,
            noisy,
        })
    }
}

/// Builds the phantom of `spec` and its single case.
pub fn generate_case(spec: &PhantomSpec) -> Result<(Phantom, GroundTruth)> {
    let phantom = Phantom::new(spec)?;
    let truth = phantom.case()?;
    Ok((phantom, truth))
}

/// Seed of case `index` under `master`: two rounds of splitmix64.
pub fn case_seed(master: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(master) ^ index)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteCase {
    pub index: usize,
    pub name: String,
    pub class: SeedClass,
    pub seed: u64,
}

/// Suite with `counts[c]` cases per class, in class order.
pub fn suite(master: u64, counts: [usize; 3]) -> Vec<SuiteCase> {
    let mut out = Vec::new();
    for (class, &n) in SeedClass::ALL.iter().zip(&counts) {
        for _ in 0..n {
            let index = out.len();
            out.push(SuiteCase {
                index,
                name: format!("case{index:02}-{class}"),
                class: *class,
                seed: case_seed(master, index as u64),
            });
        }
    }
    out
}

/// Six base-rim, six inner-wall and four outer-wall cases.
pub fn default_suite(master: u64) -> Vec<SuiteCase> {
    suite(master, [6, 6, 4])
}

/// Serialized case facts not contained in the spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub seed_class: SeedClass,
    pub case_seed: u64,
    pub seed_nodes: Vec<usize>,
    pub origin: [f64; 3],
    pub onset_ms: f64,
}

impl TruthRecord {
    pub fn new(t: &GroundTruth) -> Self {
        TruthRecord {
            seed_class: t.seed_class,
            case_seed: t.case_seed,
            seed_nodes: t.seeds.clone(),
            origin: [t.origin.x, t.origin.y, t.origin.z],
            onset_ms: t.onset_ms,
        }
    }
}

/// Icosphere level of the `torso_bem.vtk` written with a case.
pub const BEM_TORSO_LEVEL: usize = 3;

/// Writes a case directory: meshes (`mesh.vtk`, `torso.vtk`, `torso_bem.vtk`),
/// `electrodes.csv`, clean and noisy signals, `truth_lat.vtk`, `spec.toml`
/// and `truth.toml`.
pub fn write_case(dir: &Path, phantom: &Phantom, truth: &GroundTruth) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &phantom.geometry;
    let mut mesh = g.mesh.clone();
    let mut labels = vec![-1i32; mesh.n_vertices()];
    for (i, &n) in g.electrodes.iter().enumerate() {
        labels[n] = i as i32;
    }
    mesh.point_labels = Some(labels.clone());
    write_tet_mesh(dir.join("mesh.vtk"), &mesh, &[])?;
    let mut torso = g.torso.clone();
    torso.labels = torso
        .parent_nodes
        .as_ref()
        .map(|p| p.iter().map(|&n| labels[n]).collect());
    write_tri_mesh(dir.join("torso.vtk"), &torso, &[])?;
    write_tri_mesh(dir.join("torso_bem.vtk"), &phantom.spec.bem_torso(BEM_TORSO_LEVEL), &[])?;
    write_electrodes_csv(&dir.join("electrodes.csv"), &g.electrode_table())?;
    let provenance = BTreeMap::from([
        ("generator".to_string(), "phantom".to_string()),
        ("case_seed".to_string(), truth.case_seed.to_string()),
    ]);
    write_signal_csv(&dir.join("bspm_clean.csv"), &truth.clean, &provenance)?;
    write_signal_csv(&dir.join("bspm_noisy.csv"), &truth.noisy, &provenance)?;
    let mut lat = vec![-1.0; mesh.n_vertices()];
    for (&n, &l) in mesh.heart_nodes().iter().zip(&truth.lat_ms) {
        lat[n] = l;
    }
    let mut seed_mark = vec![0i32; mesh.n_vertices()];
    for &s in &truth.seeds {
        seed_mark[s] = 1;
    }
    mesh.point_labels = None;
    write_tet_mesh(
        dir.join("truth_lat.vtk"),
        &mesh,
        &[("lat_ms", Field::Float(&lat)), ("source", Field::Int(&seed_mark))],
    )?;
    write_toml(&dir.join("spec.toml"), &phantom.spec)?;
    write_toml(&dir.join("truth.toml"), &TruthRecord::new(truth))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
