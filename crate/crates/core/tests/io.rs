use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use volecgi::io::{
    read_electrodes_csv, read_operator_cache, read_signal_csv, write_electrodes_csv, write_operator_cache,
    write_signal_csv, CacheHeader, Electrode,
};
use volecgi::sigproc::SignalBlock;
use volecgi::Vec3;

#[test]
fn signal_csv_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bspm.csv");
    let samples = DMatrix::from_fn(3, 50, |i, k| ((i + 1) as f64 * 0.137 * k as f64).sin() / 3.0);
    let mut s = SignalBlock::new(samples, 1000.0, vec!["e0".into(), "e1".into(), "e2".into()]).unwrap();
    s.excluded[1] = true;
    let prov = BTreeMap::from([("stage".to_string(), "test".to_string())]);
    write_signal_csv(&path, &s, &prov).unwrap();
    let back = read_signal_csv(&path).unwrap();
    assert_eq!(back.samples, s.samples);
    assert_eq!(back.electrode_ids, s.electrode_ids);
    assert_eq!(back.excluded, s.excluded);
    assert_eq!(back.sample_rate, 1000.0);

    // without the sidecar the rate comes from the time column
    std::fs::remove_file(path.with_extension("toml")).unwrap();
    let bare = read_signal_csv(&path).unwrap();
    assert!((bare.sample_rate - 1000.0).abs() < 1e-6);
}

#[test]
fn malformed_signal_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "t,a,b\n0,1,2\n0.001,1,x\n").unwrap();
    let msg = read_signal_csv(&path).unwrap_err().to_string();
    assert!(msg.contains('3'), "{msg}");
    std::fs::write(&path, "t,a\n0,1\n0,2\n").unwrap();
    assert!(read_signal_csv(&path).is_err());
    std::fs::write(&path, "time,a\n0,1\n").unwrap();
    assert!(read_signal_csv(&path).is_err());
}

#[test]
fn electrodes_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("electrodes.csv");
    let e = vec![
        Electrode { id: "e0".into(), position: Vec3::new(1.5, -2.25, 1e-3) },
        Electrode { id: "e1".into(), position: Vec3::new(0.1, 0.2, 0.3) },
    ];
    write_electrodes_csv(&path, &e).unwrap();
    assert_eq!(read_electrodes_csv(&path).unwrap(), e);
}

fn header(hash: &str) -> CacheHeader {
    CacheHeader {
        kind: "volumetric".into(),
        rows: 3,
        cols: 4,
        hashes: BTreeMap::from([("mesh".to_string(), hash.to_string())]),
        centred: true,
        flags: BTreeMap::new(),
        has_constraint: true,
        electrodes: vec![0, 1, 2],
        heart_nodes: vec![5, 6, 7, 8],
    }
}

#[test]
fn operator_cache_round_trips_and_refuses_stale_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("op.bin");
    let a = DMatrix::from_fn(3, 4, |i, j| (i as f64 - 1.3) * (j as f64 + 0.7).powi(3) * 1e-7);
    let m = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
    write_operator_cache(&path, &header("abc"), &a, Some(&m)).unwrap();
    let want = BTreeMap::from([("mesh".to_string(), "abc".to_string())]);
    let c = read_operator_cache(&path, &want).unwrap();
    assert_eq!(c.matrix, a);
    assert_eq!(c.constraint.unwrap(), m);
    assert_eq!(c.header, header("abc"));

    let stale = BTreeMap::from([("mesh".to_string(), "abd".to_string())]);
    assert!(read_operator_cache(&path, &stale).is_err());
    let missing = BTreeMap::from([("conductivity".to_string(), "x".to_string())]);
    assert!(read_operator_cache(&path, &missing).is_err());

    // truncated data
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(read_operator_cache(&path, &want).is_err());
    // header/data disagreement on write
    assert!(write_operator_cache(&path, &header("abc"), &a, None).is_err());
}
