//! End-to-end dataset generation: scenes → Tx placement → simulation →
//! LoS → features → export.
//!
//! The run is resumable. Scene directories and finished sample
//! directories (those holding `record.json`) are reused, and the manifest
//! is rewritten from the full sample list at the end, so rerunning a
//! completed configuration reproduces the same bytes.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::antenna::{builtin_pattern_specs, AntennaPattern, PatternSpec};
use crate::datasetio::{export_dataset, Manifest, Sample, SampleRecord, SAMPLES_DIR};
use crate::exec::{map_ordered, Execution};
use crate::features::{
    synthesize, FeatureBounds, FeatureFamily, FsplVariant, LosFrame, LosVariant,
};
use crate::placement::{place_transmitters, SearchParams, TxConfig};
use crate::propagation::{simulate_radio_map_with, SimParams};
use crate::scene::{load_scene_dir, Scene, BUILDINGS_FILE};
use crate::synth::{generate_synthetic_scene, SyntheticSpec};
use crate::visibility::{los_maps, LosParams};

pub const SCENES_DIR: &str = "scenes";

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("scene {scene_id}: {source}")]
    Scene {
        scene_id: String,
        #[source]
        source: BoxError,
    },
    #[error("sample {sample_id}: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: BoxError,
    },
    #[error("export: {0}")]
    Export(#[from] crate::datasetio::DatasetError),
    #[error("no transmitter configuration passed placement in any scene")]
    NoSamples,
}

fn scene_err(id: &str) -> impl FnOnce(BoxError) -> PipelineError + '_ {
    move |source| PipelineError::Scene {
        scene_id: id.to_string(),
        source,
    }
}

fn sample_err(id: &str) -> impl FnOnce(BoxError) -> PipelineError + '_ {
    move |source| PipelineError::Sample {
        sample_id: id.to_string(),
        source,
    }
}

/// A pattern given either as an index into the built-in table or
/// explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatternRef {
    Table(usize),
    Spec(PatternSpec),
}

impl PatternRef {
    pub fn resolve(&self) -> Result<AntennaPattern, PipelineError> {
        let spec = match self {
            PatternRef::Table(i) => builtin_pattern_specs()
                .get(*i)
                .cloned()
                .ok_or_else(|| PipelineError::Config(format!("no built-in pattern {i}")))?,
            PatternRef::Spec(s) => s.clone(),
        };
        spec.resolve()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScenes {
    pub count: usize,
    /// Template; each scene gets its own seed derived from the run seed.
    pub spec: SyntheticSpec,
}

impl Default for SyntheticScenes {
    fn default() -> Self {
        SyntheticScenes {
            count: 4,
            spec: SyntheticSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Defaults to `seed`.
    pub split_seed: Option<u64>,
    pub synthetic: Option<SyntheticScenes>,
    /// Existing scene directories to ingest.
    pub scene_dirs: Vec<PathBuf>,
    pub patterns: Vec<PatternRef>,
    pub placement: SearchParams,
    /// Keep at most this many accepted Tx per (scene, pattern), chosen by
    /// a seeded draw.
    pub max_tx_per_scene: Option<usize>,
    pub sim: SimParams,
    pub los: LosParams,
    pub features: Vec<FeatureFamily>,
    pub bounds: FeatureBounds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            split_seed: None,
            synthetic: Some(SyntheticScenes::default()),
            scene_dirs: Vec::new(),
            patterns: (0..builtin_pattern_specs().len())
                .map(PatternRef::Table)
                .collect(),
            placement: SearchParams::default(),
            max_tx_per_scene: Some(2),
            sim: SimParams::default(),
            los: LosParams::default(),
            features: vec![
                FeatureFamily::Basic,
                FeatureFamily::GridAnchor,
                FeatureFamily::Cylindrical,
                FeatureFamily::Fspl(FsplVariant::FloorTop),
                FeatureFamily::Los(LosVariant::Binary),
                FeatureFamily::Los(LosVariant::Ours(LosFrame::Absolute)),
            ],
            bounds: FeatureBounds::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative scene directories are taken relative
    /// to the config file.
    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.scene_dirs {
            if d.is_relative() {
                *d = base.join(&*d);
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.patterns.is_empty() {
            return Err(PipelineError::Config("no antenna patterns".into()));
        }
        if self.features.is_empty() {
            return Err(PipelineError::Config("no feature families".into()));
        }
        if self.synthetic.as_ref().map_or(0, |s| s.count) == 0 && self.scene_dirs.is_empty() {
            return Err(PipelineError::Config("no scenes".into()));
        }
        self.placement
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.sim
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }
}

/// Seed of synthetic scene `index` for run seed `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
}

/// Writes synthetic scenes that are not on disk yet and loads every scene
/// from disk.
fn prepare_scenes(cfg: &PipelineConfig, out_dir: &Path) -> Result<Vec<Scene>, PipelineError> {
    let mut scenes = Vec::new();
    if let Some(syn) = &cfg.synthetic {
        for i in 0..syn.count {
            let id = format!("synth{i:03}");
            let dir = out_dir.join(SCENES_DIR).join(&id);
            if !dir.join(BUILDINGS_FILE).exists() {
                let spec = SyntheticSpec {
                    seed: scene_seed(cfg.seed, i),
                    ..syn.spec.clone()
                };
                let scene = generate_synthetic_scene(id.clone(), &spec)
                    .map_err(|e| scene_err(&id)(e.into()))?;
                scene.save(&dir).map_err(|e| scene_err(&id)(e.into()))?;
            }
            scenes.push(load_scene_dir(&dir).map_err(|e| scene_err(&id)(e.into()))?);
        }
    }
    for dir in &cfg.scene_dirs {
        let id = dir.display().to_string();
        scenes.push(load_scene_dir(dir).map_err(|e| scene_err(&id)(e.into()))?);
    }
    let mut ids: Vec<&str> = scenes.iter().map(|s| s.id.as_str()).collect();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(PipelineError::Config("scene ids must be unique".into()));
    }
    Ok(scenes)
}

/// Indices `0..n` thinned to at most `k`, kept in ascending order.
fn pick(n: usize, k: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match k {
        Some(k) if k < n => {
            let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

struct WorkItem<'a> {
    sample_id: String,
    scene: &'a Scene,
    tx: TxConfig,
}

fn build_sample(
    item: &WorkItem,
    cfg: &PipelineConfig,
    bounds: &FeatureBounds,
) -> Result<Sample, BoxError> {
    let exec = Execution::Sequential;
    let map = simulate_radio_map_with(item.scene, &item.tx, &cfg.sim, exec)?;
    let los = los_maps(item.scene, &item.tx, &cfg.los, exec)?;
    let features = synthesize(
        item.scene,
        &item.tx,
        Some(&los),
        cfg.los.ceiling,
        &cfg.features,
        bounds,
        exec,
    )?
    .normalize()?;
    Ok(Sample {
        sample_id: item.sample_id.clone(),
        scene_id: item.scene.id.clone(),
        pattern_id: item.tx.pattern_id,
        tx: item.tx.clone(),
        target: map.gray,
        features,
        los: Some(los),
    })
}

fn run_items(
    items: &[WorkItem],
    cfg: &PipelineConfig,
    bounds: &FeatureBounds,
    samples_root: &Path,
    exec: Execution,
) -> Vec<Result<SampleRecord, PipelineError>> {
    map_ordered(items, exec, |item| {
        let dir = samples_root.join(&item.sample_id);
        let err = |e: BoxError| sample_err(&item.sample_id)(e);
        if SampleRecord::is_complete(&dir) {
            // Re-read to catch damaged outputs from an earlier run.
            return Sample::read(&dir)
                .map(|s| s.record(&dir))
                .map_err(|e| err(e.into()));
        }
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| err(e.into()))?;
        }
        let sample = build_sample(item, cfg, bounds).map_err(err)?;
        sample.write(&dir).map_err(|e| err(e.into()))
    })
}

/// Runs the whole pipeline into `out_dir` with `jobs` worker threads
/// (0 = rayon default). The output does not depend on `jobs`.
pub fn run(cfg: &PipelineConfig, out_dir: &Path, jobs: usize) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    let patterns = cfg
        .patterns
        .iter()
        .map(PatternRef::resolve)
        .collect::<Result<Vec<_>, _>>()?;
    let bounds = match cfg.bounds.gain_db {
        Some(_) => cfg.bounds.clone(),
        None => FeatureBounds {
            gain_db: FeatureBounds::covering(&patterns).gain_db,
            ..cfg.bounds.clone()
        },
    };
    fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", out_dir.display())))?;
    let scenes = prepare_scenes(cfg, out_dir)?;

    crate::exec::with_threads(jobs, || {
        let exec = Execution::Parallel;
        let mut items = Vec::new();
        for (si, scene) in scenes.iter().enumerate() {
            let indexed: Vec<(usize, &AntennaPattern)> = patterns.iter().enumerate().collect();
            let placed = map_ordered(&indexed, exec, |&(pid, p)| {
                place_transmitters(scene, p, pid, &cfg.placement, Execution::Sequential)
            });
            for (pid, txs) in placed.into_iter().enumerate() {
                let txs = txs.map_err(|e| scene_err(&scene.id)(e.into()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream((si as u64) << 32 | pid as u64);
                for (k, i) in pick(txs.len(), cfg.max_tx_per_scene, &mut rng)
                    .into_iter()
                    .enumerate()
                {
                    items.push(WorkItem {
                        sample_id: format!("{}_p{pid}_t{k:03}", scene.id),
                        scene,
                        tx: txs[i].clone(),
                    });
                }
            }
        }
        if items.is_empty() {
            return Err(PipelineError::NoSamples);
        }
        let samples_root = out_dir.join(SAMPLES_DIR);
        fs::create_dir_all(&samples_root)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", samples_root.display())))?;
        let records = run_items(&items, cfg, &bounds, &samples_root, exec)
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let split_seed = cfg.split_seed.unwrap_or(cfg.seed);
        Ok(export_dataset(
            &records, out_dir, split_seed, &cfg.sim, exec,
        )?)
    })
    .map_err(PipelineError::Config)?
}
