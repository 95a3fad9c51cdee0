use std::fs;

use surgedeck_core::ingest::{load_scenario, save_scenario, IngestError, ScenarioManifest};
use surgedeck_core::pack::{read_pack, write_pack};
use surgedeck_core::scenario::Sample;
use surgedeck_core::synth::{coastal_scenario, CoastSpec};

fn small() -> surgedeck_core::scenario::FloodScenario {
    coastal_scenario(&CoastSpec { points: 400, timepoints: 3, buildings: 6, dem_cells: 40, ..CoastSpec::default() })
}

#[test]
fn saved_scenario_loads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small();
    let manifest = save_scenario(&sc, dir.path()).unwrap();
    let loaded = load_scenario(&ScenarioManifest::from_file(&manifest).unwrap()).unwrap();
    assert_eq!(loaded.datapoints, sc.datapoints);
    assert_eq!(loaded.samples, sc.samples);
    assert_eq!(loaded.dem, sc.dem);
    assert_eq!(loaded.buildings, sc.buildings);
    assert_eq!(loaded.bounds, sc.bounds);
}

#[test]
fn pack_of_ingested_scenario_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_scenario(&small(), dir.path()).unwrap();
    let sc = load_scenario(&ScenarioManifest::from_file(&manifest).unwrap()).unwrap();
    let pack = dir.path().join("scene.sdpk");
    write_pack(&sc, &pack).unwrap();
    assert_eq!(read_pack(&pack).unwrap(), sc);
}

#[test]
fn missing_referenced_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_scenario(&small(), dir.path()).unwrap();
    fs::remove_file(dir.path().join("dem.asc")).unwrap();
    let err = load_scenario(&ScenarioManifest::from_file(&manifest).unwrap()).unwrap_err();
    assert!(matches!(err, IngestError::MissingFile(p) if p.ends_with("dem.asc")));
}

#[test]
fn dropped_timestep_row_is_an_id_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_scenario(&small(), dir.path()).unwrap();
    let ts = dir.path().join("ts_00001.csv");
    let text = fs::read_to_string(&ts).unwrap();
    let kept: Vec<&str> = text.lines().take(10).chain(text.lines().skip(11)).collect();
    fs::write(&ts, kept.join("\n")).unwrap();
    let err = load_scenario(&ScenarioManifest::from_file(&manifest).unwrap()).unwrap_err();
    assert!(matches!(err, IngestError::IdMismatch { .. }), "{err}");
}

#[test]
fn lonlat_manifest_projects_about_origin() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("dp.csv"), "id,lon,lat\n1,-74.0,40.7\n2,-73.99,40.71\n").unwrap();
    fs::write(dir.path().join("ts_0.csv"), "id,eta,vx,vy\n1,0.5,0.1,0\n2,,,\n").unwrap();
    fs::write(
        dir.path().join("dem.asc"),
        "ncols 2\nnrows 2\nxllcorner -100\nyllcorner -100\ncellsize 2000\nNODATA_value -9999\n1 2\n3 4\n",
    )
    .unwrap();
    fs::write(dir.path().join("b.json"), "[]").unwrap();
    let manifest = r#"{"name":"nyc","crs":"lonlat","datapoints_path":"dp.csv","timesteps_glob":"ts_*.csv",
        "dem_path":"dem.asc","buildings_path":"b.json","timestep_seconds":60,"origin_lonlat":[-74.0,40.7]}"#;
    let sc = load_scenario(&ScenarioManifest::from_json(manifest, dir.path()).unwrap()).unwrap();
    assert_eq!(sc.datapoints[0].position.x, 0.0);
    assert_eq!(sc.datapoints[0].position.y, 0.0);
    let p = sc.datapoints[1].position;
    assert!((p.y - 0.01 * 110_540.0).abs() < 1e-6);
    assert!(p.x > 800.0 && p.x < 0.01 * 111_320.0);
    assert_eq!(sc.samples[0][1], Sample::Dry);
}
