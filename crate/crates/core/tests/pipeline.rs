use std::fs;
use std::path::Path;

use radiomap::datasetio::{import_dataset, Split};
use radiomap::pipeline::{run, PatternRef, PipelineConfig, PipelineError, SyntheticScenes};
use radiomap::synth::SyntheticSpec;

fn small_config() -> PipelineConfig {
    PipelineConfig {
        seed: 11,
        synthetic: Some(SyntheticScenes {
            count: 4,
            spec: SyntheticSpec {
                grid_size: 32,
                n_buildings: 4,
                building_size: [4, 8],
                ..SyntheticSpec::default()
            },
        }),
        patterns: vec![PatternRef::Table(0), PatternRef::Table(5)],
        max_tx_per_scene: Some(1),
        ..PipelineConfig::default()
    }
}

fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn four_scenes_two_patterns() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&small_config(), dir.path(), 2).unwrap();
    assert!(m.samples.len() >= 4, "{} samples", m.samples.len());
    let (m2, samples) = import_dataset(dir.path()).unwrap();
    assert_eq!(m, m2);
    for s in &samples {
        for ch in s.features.channels() {
            assert!(
                ch.values.values().iter().all(|v| (-1.0..=1.0).contains(v)),
                "{}",
                ch.name
            );
        }
        assert!(s.target.values().iter().all(|v| (0.0..=1.0).contains(v)));
        s.tx.validate(
            &radiomap::scene::load_scene_dir(dir.path().join("scenes").join(&s.scene_id)).unwrap(),
        )
        .unwrap();
    }
    let train: Vec<_> = m
        .samples_in(Split::Train)
        .map(|s| s.scene_id.clone())
        .collect();
    assert!(m
        .samples_in(Split::Test)
        .all(|s| !train.contains(&s.scene_id)));
}

#[test]
fn rerun_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    run(&cfg, dir.path(), 1).unwrap();
    let before = snapshot(dir.path());
    run(&cfg, dir.path(), 3).unwrap();
    assert_eq!(before, snapshot(dir.path()));
}

#[test]
fn resumes_after_interruption() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_config();
    run(&cfg, a.path(), 2).unwrap();
    run(&cfg, b.path(), 2).unwrap();
    // simulate a crash: drop the manifest and one half-written sample
    fs::remove_file(b.path().join("manifest.json")).unwrap();
    let victim = fs::read_dir(b.path().join("samples"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    fs::remove_file(victim.join("record.json")).unwrap();
    fs::remove_file(victim.join("target.f32")).unwrap();
    run(&cfg, b.path(), 2).unwrap();
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn corrupt_sample_raster_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let m = run(&cfg, dir.path(), 2).unwrap();
    let victim = &m.samples[1];
    let path = dir
        .path()
        .join(&victim.dir)
        .join("features")
        .join("dist2d.f32");
    fs::write(&path, [1u8, 2, 3]).unwrap();
    match run(&cfg, dir.path(), 2) {
        Err(PipelineError::Sample { sample_id, .. }) => assert_eq!(sample_id, victim.sample_id),
        other => panic!("expected a sample error, got {other:?}"),
    }
}

#[test]
fn corrupt_scene_raster_names_the_scene() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    run(&cfg, dir.path(), 2).unwrap();
    fs::write(dir.path().join("scenes/synth002/buildings.f32"), [0u8; 10]).unwrap();
    let err = run(&cfg, dir.path(), 2).unwrap_err();
    assert!(err.to_string().contains("synth002"), "{err}");
}

#[test]
fn config_json_round_trip_and_errors() {
    let cfg = small_config();
    let text = serde_json::to_string_pretty(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, &text).unwrap();
    assert_eq!(PipelineConfig::load(&path).unwrap(), cfg);
    // every field has a default
    fs::write(&path, "{}").unwrap();
    assert_eq!(
        PipelineConfig::load(&path).unwrap(),
        PipelineConfig::default()
    );
    let bad = PipelineConfig {
        patterns: vec![PatternRef::Table(99)],
        ..small_config()
    };
    assert!(matches!(
        run(&bad, dir.path(), 1),
        Err(PipelineError::Config(_))
    ));
}
