use std::sync::OnceLock;

use proptest::prelude::*;
use volecgi::geom::{MeshGraph, Region};
use volecgi::phantom::*;
use volecgi::Vec3;

fn default_phantom() -> &'static Phantom {
    static P: OnceLock<Phantom> = OnceLock::new();
    P.get_or_init(|| Phantom::new(&PhantomSpec::default()).unwrap())
}

/// Default shell centred in a tight torso, cheap enough to mesh at 3 mm.
fn small_spec(pitch: f64) -> PhantomSpec {
    PhantomSpec {
        torso_semi_axes: [80.0, 80.0, 100.0],
        heart_centre: [0.0, 0.0, 0.0],
        pitch_mm: pitch,
        electrodes: 32,
        ..Default::default()
    }
}

#[test]
fn default_geometry_is_in_the_regression_band() {
    let g = &default_phantom().geometry;
    let n = g.mesh.heart_nodes().len();
    assert!((1500..=6000).contains(&n), "{n} heart nodes");
    assert!(g.heart_surface.is_closed() && g.torso.is_closed());
    assert!(g.heart_surface.enclosed_volume() > 0.0);
    assert_eq!(g.electrodes.len(), 128);
    let parents = g.torso.parent_nodes.as_ref().unwrap();
    for e in &g.electrodes {
        assert!(parents.contains(e), "electrode {e} is not a torso surface node");
    }
    let mut sorted = g.electrodes.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), 128);
}

#[test]
fn halving_the_pitch_quadruples_heart_nodes() {
    let coarse = build_geometry(&small_spec(6.0)).unwrap().mesh.heart_nodes().len();
    let fine = build_geometry(&small_spec(3.0)).unwrap().mesh.heart_nodes().len();
    assert!(fine >= 4 * coarse, "{coarse} -> {fine}");
}

#[test]
fn electrodes_are_spread_out() {
    let g = &default_phantom().geometry;
    let pts: Vec<Vec3> = g.electrodes.iter().map(|&n| g.mesh.vertices[n]).collect();
    let nn: Vec<f64> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            pts.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (p - q).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mean = nn.iter().sum::<f64>() / nn.len() as f64;
    let min = nn.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min >= 0.5 * mean, "closest pair {min} vs mean spacing {mean}");
}

#[test]
fn farthest_point_sampling_is_seeded() {
    let pts: Vec<Vec3> = (0..200).map(|i| Vec3::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), i as f64 * 0.01)).collect();
    let a = farthest_point_sampling(&pts, 20, 1).unwrap();
    assert_eq!(a, farthest_point_sampling(&pts, 20, 1).unwrap());
    assert_ne!(a, farthest_point_sampling(&pts, 20, 2).unwrap());
    assert!(farthest_point_sampling(&pts, 201, 1).is_err());
}

#[test]
fn rejects_bad_specs() {
    let outside = PhantomSpec {
        heart_centre: [120.0, 0.0, 0.0],
        ..Default::default()
    };
    assert!(build_geometry(&outside).is_err());
    let coarse = PhantomSpec {
        pitch_mm: 15.0,
        ..Default::default()
    };
    assert!(build_geometry(&coarse).is_err());
    let thick = PhantomSpec {
        wall_mm: 50.0,
        ..Default::default()
    };
    assert!(thick.validate().is_err());
    let many = PhantomSpec {
        electrodes: 1_000_000,
        ..small_spec(6.0)
    };
    assert!(build_geometry(&many).is_err());
}

#[test]
fn chain_activation_converts_units() {
    let pos: Vec<Vec3> = (0..3).map(|i| Vec3::new(5.0 * i as f64, 0.0, 0.0)).collect();
    let g = MeshGraph::from_edges(&pos, &[(0, 1), (1, 2)]);
    let lat = simulate_activation(&g, &[0, 1, 2], &[0], 1.0).unwrap();
    assert_eq!(lat, vec![0.0, 5.0, 10.0]);
    assert!(simulate_activation(&g, &[0], &[], 1.0).is_err());
    assert!(simulate_activation(&g, &[0], &[0], 0.0).is_err());
    // a node with no edge to the seed
    let split = MeshGraph::from_edges(&[pos[0], pos[1], pos[2], Vec3::new(9.0, 9.0, 9.0)], &[(0, 1), (2, 3)]);
    assert!(simulate_activation(&split, &[0, 1, 2], &[0], 1.0).is_err());
}

#[test]
fn doubling_velocity_halves_times_exactly() {
    let p = default_phantom();
    let nodes = p.geometry.mesh.heart_nodes();
    let seed = p.geometry.seed_candidates(SeedClass::OuterWall)[7];
    let slow = simulate_activation(p.graph(), nodes, &[seed], 0.7).unwrap();
    let fast = simulate_activation(p.graph(), nodes, &[seed], 1.4).unwrap();
    for (s, f) in slow.iter().zip(&fast) {
        assert_eq!(*f, s / 2.0);
    }
    let at_seed = nodes.iter().position(|&n| n == seed).unwrap();
    assert_eq!(slow[at_seed], 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn two_seeds_take_the_pointwise_minimum(a in 0usize..1950, b in 0usize..1950) {
        let p = default_phantom();
        let nodes = p.geometry.mesh.heart_nodes();
        let (sa, sb) = (nodes[a % nodes.len()], nodes[b % nodes.len()]);
        let la = simulate_activation(p.graph(), nodes, &[sa], 0.7).unwrap();
        let lb = simulate_activation(p.graph(), nodes, &[sb], 0.7).unwrap();
        let both = simulate_activation(p.graph(), nodes, &[sa, sb], 0.7).unwrap();
        for i in 0..nodes.len() {
            prop_assert_eq!(both[i], la[i].min(lb[i]));
        }
        // geodesic triangle inequality through the second seed
        let ab = la[nodes.iter().position(|&n| n == sb).unwrap()];
        for i in 0..nodes.len() {
            prop_assert!(la[i] <= ab + lb[i] + 1e-9);
        }
    }

    #[test]
    fn steepest_rise_is_at_the_activation_time(lat in 0.0f64..150.0, sigma in 3.0f64..10.0) {
        let w = Waveform { sigma_w_ms: sigma, onset_ms: 20.0, window_ms: 300.0, sample_rate_hz: 1000.0 };
        let x: Vec<f64> = (0..w.n_samples()).map(|k| w.pulse(k as f64 - w.onset_ms - lat)).collect();
        let best = (1..x.len() - 1)
            .max_by(|&i, &j| (x[i + 1] - x[i - 1]).total_cmp(&(x[j + 1] - x[j - 1])))
            .unwrap();
        prop_assert!((best as f64 - (w.onset_ms + lat)).abs() <= 1.0);
    }
}

#[test]
fn pulse_has_unit_peak() {
    let w = Waveform { sigma_w_ms: 6.0, onset_ms: 0.0, window_ms: 100.0, sample_rate_hz: 1000.0 };
    assert!((w.pulse(6.0) - 1.0).abs() < 1e-15);
    assert!((w.pulse(-6.0) + 1.0).abs() < 1e-15);
    assert_eq!(w.pulse(0.0), 0.0);
}

#[test]
fn sources_satisfy_the_existence_condition() {
    let p = default_phantom();
    let nodes = p.geometry.mesh.heart_nodes().to_vec();
    let v = p.conductor().heart_volumes();
    let seed = p.geometry.seed_candidates(SeedClass::InnerWall)[0];
    let lat = simulate_activation(p.graph(), &nodes, &[seed], 0.7).unwrap();
    let f = synthesize_sources(&lat, nodes.clone(), v, &p.spec.waveform()).unwrap();
    for col in f.values.column_iter() {
        let dot: f64 = col.iter().zip(v).map(|(a, b)| a * b).sum();
        let scale: f64 = col.iter().zip(v).map(|(a, b)| (a * b).abs()).sum();
        assert!(dot.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE), "{dot} vs {scale}");
    }
    // window too short for the latest activation
    let short = Waveform { window_ms: 100.0, ..p.spec.waveform() };
    assert!(synthesize_sources(&lat, nodes, v, &short).is_err());
}

#[test]
fn equal_activation_times_cancel_exactly() {
    let nodes: Vec<usize> = (0..7).collect();
    let vols = [1.0, 2.5, 0.3, 4.0, 1.0, 0.7, 3.3];
    let w = Waveform { sigma_w_ms: 5.0, onset_ms: 10.0, window_ms: 60.0, sample_rate_hz: 1000.0 };
    let f = synthesize_sources(&[12.0; 7], nodes, &vols, &w).unwrap();
    assert!(f.values.iter().all(|&x| x == 0.0));
}

#[test]
fn case_truth_is_consistent() {
    let p = default_phantom();
    let t = p.case_for(SeedClass::BaseRim, 11).unwrap();
    let seed = t.seeds[0];
    assert_eq!(t.origin, p.geometry.mesh.vertices[seed]);
    let row = p.geometry.mesh.heart_nodes().iter().position(|&n| n == seed).unwrap();
    assert_eq!(t.lat_ms[row], 0.0);
    assert!(p.geometry.seed_candidates(SeedClass::BaseRim).contains(&seed));
    // common-referenced electrode potentials
    for col in t.clean.samples.column_iter() {
        let scale = col.amax().max(f64::MIN_POSITIVE);
        assert!(col.sum().abs() <= 1e-10 * scale * col.len() as f64);
    }
    assert_eq!(t.clean.n_electrodes(), 128);
    assert_ne!(t.clean, t.noisy);
}

#[test]
fn seed_classes_are_populated_and_distinct() {
    let g = &default_phantom().geometry;
    let sets: Vec<Vec<usize>> = SeedClass::ALL.iter().map(|&c| g.seed_candidates(c)).collect();
    for s in &sets {
        assert!(s.len() >= 20);
    }
    let surface = g.heart_surface.parent_nodes.as_ref().unwrap();
    assert!(sets[1].iter().all(|n| !surface.contains(n)), "inner-wall seeds are intramural");
    assert!(sets[2].iter().all(|n| surface.contains(n)), "outer-wall seeds are on the surface");
    assert!(sets[1].iter().all(|n| !sets[0].contains(n)) && sets[2].iter().all(|n| !sets[0].contains(n)));
}

#[test]
fn default_suite_mirrors_the_class_split() {
    let s = default_suite(3);
    assert_eq!(s.len(), 16);
    let count = |c| s.iter().filter(|x| x.class == c).count();
    assert_eq!([count(SeedClass::BaseRim), count(SeedClass::InnerWall), count(SeedClass::OuterWall)], [6, 6, 4]);
    let mut seeds: Vec<u64> = s.iter().map(|c| c.seed).collect();
    seeds.dedup();
    assert_eq!(seeds.len(), 16);
    assert_eq!(default_suite(3), s);
}

#[test]
fn case_directories_are_reproducible() {
    let spec = PhantomSpec { seed: 7, ..small_spec(6.0) };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let (p, t) = generate_case(&spec).unwrap();
        write_case(d.path(), &p, &t).unwrap();
    }
    let names = [
        "mesh.vtk", "torso.vtk", "torso_bem.vtk", "electrodes.csv", "bspm_clean.csv", "bspm_noisy.csv", "truth_lat.vtk", "spec.toml",
        "truth.toml",
    ];
    for name in names {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
    let spec_back: PhantomSpec = toml::from_str(&std::fs::read_to_string(dirs[0].path().join("spec.toml")).unwrap()).unwrap();
    assert_eq!(spec_back, spec);
    let (mesh, arrays) = volecgi::geom::vtk::read_tet_mesh(dirs[0].path().join("truth_lat.vtk")).unwrap();
    assert_eq!(arrays.point["lat_ms"].len(), mesh.n_vertices());
    assert!(mesh.volume(Region::heart()) > 0.0);
}
