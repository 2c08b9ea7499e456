// Sequential vs rayon execution of the per-pixel stages. Without the
// `parallel` feature both rows run the sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use radiomap::antenna::{builtin_patterns, Orientation};
use radiomap::exec::Execution;
use radiomap::placement::{candidate_positions, place_transmitters, SearchParams, TxConfig};
use radiomap::propagation::{simulate_radio_map_with, SimParams};
use radiomap::scene::Scene;
use radiomap::synth::{generate_synthetic_scene, SyntheticSpec};
use radiomap::visibility::{los_maps, LosParams};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn fixture(size: usize) -> (Scene, TxConfig) {
    let spec = SyntheticSpec {
        grid_size: size,
        n_buildings: size / 8,
        seed: 11,
        ..SyntheticSpec::default()
    };
    let scene = generate_synthetic_scene("bench", &spec).unwrap();
    let position = candidate_positions(&scene)[0];
    let tx = TxConfig {
        scene_id: scene.id.clone(),
        position,
        orientation: Orientation::new(45.0, -5.0),
        pattern: builtin_patterns()[2],
        pattern_id: 2,
    };
    (scene, tx)
}

fn simulate(c: &mut Criterion) {
    let (scene, tx) = fixture(64);
    let params = SimParams::default();
    let mut g = c.benchmark_group("simulate_64");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| simulate_radio_map_with(&scene, &tx, &params, exec).unwrap())
        });
    }
    g.finish();
}

fn visibility(c: &mut Criterion) {
    let (scene, tx) = fixture(128);
    let params = LosParams::default();
    let mut g = c.benchmark_group("los_maps_128");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| los_maps(&scene, &tx, &params, exec).unwrap())
        });
    }
    g.finish();
}

fn placement(c: &mut Criterion) {
    let (scene, _) = fixture(48);
    let pattern = builtin_patterns()[5];
    let params = SearchParams::default();
    let mut g = c.benchmark_group("placement_48");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| place_transmitters(&scene, &pattern, 5, &params, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, simulate, visibility, placement);
criterion_main!(benches);
