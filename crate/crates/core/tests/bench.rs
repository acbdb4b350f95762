use std::collections::BTreeMap;

use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use volecgi::bench::*;
use volecgi::geom::MeshGraph;
use volecgi::phantom::{PhantomSpec, SeedClass};
use volecgi::Vec3;

fn chain(spacing: f64, n: usize) -> (Vec<Vec3>, MeshGraph) {
    let pos: Vec<Vec3> = (0..n).map(|i| Vec3::new(spacing * i as f64, 0.0, 0.0)).collect();
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    let g = MeshGraph::from_edges(&pos, &edges);
    (pos, g)
}

/// Small jittered lattice with face diagonals, so paths bend.
fn lattice(transform: impl Fn(Vec3) -> Vec3) -> (Vec<Vec3>, MeshGraph) {
    let n = 5;
    let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
    let mut pos = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let jitter = 0.3 * ((i * 7 + j * 3 + k) as f64).sin();
                pos.push(transform(Vec3::new(4.0 * i as f64 + jitter, 4.0 * j as f64, 4.0 * k as f64 - jitter)));
            }
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i + 1 < n {
                    edges.push((idx(i, j, k), idx(i + 1, j, k)));
                }
                if j + 1 < n {
                    edges.push((idx(i, j, k), idx(i, j + 1, k)));
                }
                if k + 1 < n {
                    edges.push((idx(i, j, k), idx(i, j, k + 1)));
                }
                if i + 1 < n && j + 1 < n {
                    edges.push((idx(i, j, k), idx(i + 1, j + 1, k)));
                }
            }
        }
    }
    let g = MeshGraph::from_edges(&pos, &edges);
    (pos, g)
}

#[test]
fn identical_points_have_zero_error() {
    let (pos, g) = chain(5.0, 4);
    let e = localization_error(&pos[1], &pos[1], &g).unwrap();
    assert_eq!((e.euclidean, e.geodesic), (0.0, 0.0));
}

#[test]
fn chain_points_two_edges_apart() {
    let (pos, g) = chain(5.0, 5);
    let e = localization_error(&pos[1], &pos[3], &g).unwrap();
    assert_eq!((e.euclidean, e.geodesic), (10.0, 10.0));
}

#[test]
fn empty_graph_is_an_error() {
    let g = MeshGraph::from_edges(&[], &[]);
    assert!(localization_error(&Vec3::zeros(), &Vec3::zeros(), &g).is_err());
}

proptest! {
    #[test]
    fn geodesic_never_undercuts_euclidean(
        a in prop::array::uniform3(-5.0f64..25.0),
        b in prop::array::uniform3(-5.0f64..25.0),
    ) {
        let (_, g) = lattice(|p| p);
        let e = localization_error(&Vec3::from(a), &Vec3::from(b), &g).unwrap();
        prop_assert!(e.geodesic >= e.euclidean - 1e-9);
    }

    #[test]
    fn errors_are_invariant_under_rigid_motion(
        a in prop::array::uniform3(0.0f64..16.0),
        b in prop::array::uniform3(0.0f64..16.0),
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in 0.0f64..6.28,
        shift in prop::array::uniform3(-50.0f64..50.0),
    ) {
        let axis = Vector3::from(axis);
        prop_assume!(axis.norm() > 0.1);
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let t = Vec3::from(shift);
        let motion = |p: Vec3| rot * p + t;
        let (_, g0) = lattice(|p| p);
        let (_, g1) = lattice(motion);
        let (a, b) = (Vec3::from(a), Vec3::from(b));
        let e0 = localization_error(&a, &b, &g0).unwrap();
        let e1 = localization_error(&motion(a), &motion(b), &g1).unwrap();
        prop_assert!((e0.euclidean - e1.euclidean).abs() < 1e-9);
        prop_assert!((e0.geodesic - e1.geodesic).abs() < 1e-9);
    }
}

#[test]
fn summary_matches_hand_computed_values() {
    let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!(s.n, 4);
    assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
    assert_eq!(s.mean, 2.5);
    assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(s.iqr(), 1.5);
    assert_eq!(Summary::of(&[7.0]).unwrap().std, 0.0);
    assert!(Summary::of(&[]).is_none());
}

fn row(method: Method, class: SeedClass, case: usize, error: f64) -> CaseRow {
    CaseRow {
        variant: Variant::Mismatched,
        case: format!("case{case:02}-{class}"),
        class,
        method,
        seed_node: case,
        origin: Vec3::zeros(),
        result: Some(CaseResult {
            estimate: Vec3::new(error, 0.0, 0.0),
            euclidean_mm: error,
            geodesic_volume_mm: 1.5 * error,
            geodesic_surface_mm: 2.0 * error,
            lambda: 0.1,
            corner_at_boundary: false,
            lat_error_ms: 1.0,
        }),
        status: "ok".into(),
    }
}

fn report(rows: Vec<CaseRow>) -> MetricsReport {
    MetricsReport {
        aggregates: aggregate_rows(&rows),
        rows,
        curves: BTreeMap::new(),
        heart_diagonal_mm: 100.0,
        runtimes: BTreeMap::new(),
    }
}

fn errors() -> Vec<(SeedClass, f64)> {
    vec![
        (SeedClass::BaseRim, 10.0),
        (SeedClass::BaseRim, 14.0),
        (SeedClass::InnerWall, 20.0),
        (SeedClass::InnerWall, 8.0),
        (SeedClass::OuterWall, 6.0),
    ]
}

#[test]
fn identical_methods_give_zero_reduction() {
    let mut rows = Vec::new();
    for (i, (c, e)) in errors().into_iter().enumerate() {
        rows.push(row(Method::Epicardial, c, i, e));
        rows.push(row(Method::Volumetric, c, i, e));
    }
    let cmp = compare_methods(&report(rows), Variant::Mismatched).unwrap();
    assert_eq!(cmp.len(), 12);
    assert!(cmp.iter().all(|c| c.reduction_pct == 0.0 && c.difference_sign == 0));
}

#[test]
fn halved_errors_give_fifty_percent() {
    let mut rows = Vec::new();
    for (i, (c, e)) in errors().into_iter().enumerate() {
        rows.push(row(Method::Epicardial, c, i, e));
        rows.push(row(Method::Volumetric, c, i, e / 2.0));
    }
    let cmp = compare_methods(&report(rows), Variant::Mismatched).unwrap();
    for c in &cmp {
        assert!((c.reduction_pct - 50.0).abs() < 1e-12, "{}", c.statement());
        assert_eq!(c.difference_sign, -1);
    }
}

#[test]
fn missing_method_is_an_error() {
    let rows = errors()
        .into_iter()
        .enumerate()
        .map(|(i, (c, e))| row(Method::Epicardial, c, i, e))
        .collect();
    let err = compare_methods(&report(rows), Variant::Mismatched).unwrap_err();
    assert!(err.to_string().contains("volumetric"), "{err}");
    assert!(compare_methods(&report(vec![]), Variant::Matched).is_err());
}

#[test]
fn aggregates_recompute_from_rows() {
    let mut rows: Vec<CaseRow> = errors()
        .into_iter()
        .enumerate()
        .map(|(i, (c, e))| row(Method::Volumetric, c, i, e))
        .collect();
    let mut failed = row(Method::Volumetric, SeedClass::OuterWall, 9, 0.0);
    failed.result = None;
    failed.status = "failed: test".into();
    rows.push(failed);
    let rep = report(rows);
    assert_eq!(rep.incomplete().len(), 1);
    let all = rep.aggregate(Variant::Mismatched, Method::Volumetric, "all", Metric::Euclidean).unwrap();
    assert_eq!(all.n, 5);
    assert_eq!(all.mean, (10.0 + 14.0 + 20.0 + 8.0 + 6.0) / 5.0);
    let inner = rep.aggregate(Variant::Mismatched, Method::Volumetric, "inner-wall", Metric::GeodesicVolume).unwrap();
    assert_eq!((inner.n, inner.mean), (2, 21.0));
    let outer = rep.aggregate(Variant::Mismatched, Method::Volumetric, "outer-wall", Metric::GeodesicSurface).unwrap();
    assert_eq!((outer.n, outer.mean), (1, 12.0));
    let csv = report_csv(&rep);
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.contains("failed: test"));
    assert!(report_markdown(&rep).contains("inner-wall"));
}

#[test]
fn small_suite_is_deterministic_across_worker_counts() {
    let config = BenchConfig {
        counts: [1, 1, 1],
        variants: vec![Variant::Mismatched],
        phantom: PhantomSpec {
            torso_semi_axes: [80.0, 80.0, 100.0],
            heart_centre: [0.0, 0.0, 0.0],
            electrodes: 64,
            ..Default::default()
        },
        bem_torso_level: 2,
        ..Default::default()
    };
    let one = run_benchmark(&config, 1).unwrap();
    let two = run_benchmark(&config, 2).unwrap();
    assert!(one.incomplete().is_empty(), "{:?}", one.incomplete());
    assert_eq!(one.rows.len(), 6);
    assert_eq!(report_csv(&one), report_csv(&two));
    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), &one).unwrap();
    assert!(dir.path().join("report.csv").exists());
    assert!(dir.path().join("report.md").exists());
    assert_eq!(std::fs::read_dir(dir.path().join("lcurves")).unwrap().count(), 6);
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let c = BenchConfig::default();
    let text = toml::to_string(&c).unwrap();
    assert_eq!(toml::from_str::<BenchConfig>(&text).unwrap(), c);
    assert!(toml::from_str::<BenchConfig>("master_sed = 3").is_err());
    let partial: BenchConfig = toml::from_str("master_seed = 3\ncounts = [1, 0, 2]").unwrap();
    assert_eq!((partial.master_seed, partial.counts), (3, [1, 0, 2]));
}
