//! Sample directories, dataset export/import with scene-disjoint splits,
//! evaluation metrics and flip/rotation augmentation.
//!
//! Layout of an exported dataset:
//!
//! ```text
//! <out>/manifest.json
//! <out>/samples/<sample_id>/target.f32      gray radio map (+ .json header)
//! <out>/samples/<sample_id>/features/<channel>.f32
//! <out>/samples/<sample_id>/channels.json
//! <out>/samples/<sample_id>/tx.json
//! <out>/samples/<sample_id>/los/{ground,top,min_visible,cone}.f32   optional
//! <out>/samples/<sample_id>/record.json      written last
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{map_ordered, Execution};
use crate::features::{
    frame_dependent_value, ChannelManifest, FeatureError, FeatureStack, CHANNELS_FILE,
};
use crate::grid::{Grid, RasterError};
use crate::placement::TxConfig;
use crate::propagation::SimParams;
use crate::transform::SpatialOp;
use crate::visibility::LosMaps;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "radiomap-dataset";
pub const MANIFEST_VERSION: u32 = 1;
pub const SAMPLES_DIR: &str = "samples";
pub const TARGET_FILE: &str = "target.f32";
pub const TX_FILE: &str = "tx.json";
pub const RECORD_FILE: &str = "record.json";
pub const LOS_DIR: &str = "los";
const LOS_LAYERS: [&str; 4] = ["ground", "top", "min_visible", "cone"];

/// Scale between grayscale and dB path loss with the default truncation
/// range `[-127, -50]`.
pub const GRAY_TO_DB: f64 = 77.0;

pub const DEFAULT_SPLIT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate sample id {0:?}")]
    DuplicateSampleId(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("sample {sample_id:?}: {reason}")]
    Inconsistent { sample_id: String, reason: String },
    #[error("manifest version {found} not supported (expected {MANIFEST_VERSION})")]
    Version { found: u32 },
    #[error("no samples to export")]
    Empty,
    #[error("grids differ in shape")]
    ShapeMismatch,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {reason}")]
    Json { path: PathBuf, reason: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Json {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Identity of one sample; the rasters live in `dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub scene_id: String,
    pub pattern_id: usize,
    pub tx: TxConfig,
    #[serde(skip)]
    pub dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct RecordFile {
    sample_id: String,
    scene_id: String,
    pattern_id: usize,
}

impl SampleRecord {
    /// Reads `record.json` and `tx.json` from a sample directory.
    pub fn open(dir: &Path) -> Result<SampleRecord, DatasetError> {
        let rec: RecordFile = read_json(&dir.join(RECORD_FILE))?;
        let tx: TxConfig = read_json(&dir.join(TX_FILE))?;
        Ok(SampleRecord {
            sample_id: rec.sample_id,
            scene_id: rec.scene_id,
            pattern_id: rec.pattern_id,
            tx,
            dir: dir.to_path_buf(),
        })
    }

    /// Like [`SampleRecord::open`], but a directory without `record.json`
    /// gets its id from the directory name and the rest from `tx.json`.
    pub fn open_or_infer(dir: &Path) -> Result<SampleRecord, DatasetError> {
        if dir.join(RECORD_FILE).exists() {
            return Self::open(dir);
        }
        let tx: TxConfig = read_json(&dir.join(TX_FILE))?;
        let sample_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| DatasetError::MissingFile(dir.join(RECORD_FILE)))?;
        Ok(SampleRecord {
            sample_id,
            scene_id: tx.scene_id.clone(),
            pattern_id: tx.pattern_id,
            tx,
            dir: dir.to_path_buf(),
        })
    }

    fn record_file(&self) -> RecordFile {
        RecordFile {
            sample_id: self.sample_id.clone(),
            scene_id: self.scene_id.clone(),
            pattern_id: self.pattern_id,
        }
    }

    /// Whether the directory holds a finished sample.
    pub fn is_complete(dir: &Path) -> bool {
        dir.join(RECORD_FILE).exists()
    }

    /// Every raster and JSON file of the sample apart from `record.json`,
    /// relative to its directory.
    pub fn files(&self) -> Result<Vec<PathBuf>, DatasetError> {
        let mut out = vec![
            PathBuf::from(TARGET_FILE),
            PathBuf::from("target.json"),
            PathBuf::from(TX_FILE),
            PathBuf::from(CHANNELS_FILE),
        ];
        let channels: ChannelManifest = read_json(&self.dir.join(CHANNELS_FILE))?;
        for ch in channels.channels {
            let f = PathBuf::from(&ch.file);
            out.push(f.with_extension("json"));
            out.push(f);
        }
        if self.dir.join(LOS_DIR).exists() {
            for layer in LOS_LAYERS {
                out.push(Path::new(LOS_DIR).join(format!("{layer}.f32")));
                out.push(Path::new(LOS_DIR).join(format!("{layer}.json")));
            }
        }
        Ok(out)
    }
}

/// A sample held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub scene_id: String,
    pub pattern_id: usize,
    pub tx: TxConfig,
    /// Gray radio map in `[0, 1]`.
    pub target: Grid<f64>,
    pub features: FeatureStack,
    pub los: Option<LosMaps>,
}

impl Sample {
    /// Writes the sample layout into `dir`; `record.json` goes last so a
    /// partially written directory is never taken as complete.
    pub fn write(&self, dir: &Path) -> Result<SampleRecord, DatasetError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        self.target.write(dir.join(TARGET_FILE))?;
        self.features.write(dir)?;
        write_json(&dir.join(TX_FILE), &self.tx)?;
        if let Some(los) = &self.los {
            let los_dir = dir.join(LOS_DIR);
            fs::create_dir_all(&los_dir).map_err(io_err(&los_dir))?;
            let layers = [
                los.ground.to_f64(),
                los.top.to_f64(),
                los.min_visible.clone(),
                los.cone_mask.to_f64(),
            ];
            for (name, g) in LOS_LAYERS.iter().zip(layers) {
                g.write(los_dir.join(format!("{name}.f32")))?;
            }
        }
        write_json(
            &dir.join(RECORD_FILE),
            &RecordFile {
                sample_id: self.sample_id.clone(),
                scene_id: self.scene_id.clone(),
                pattern_id: self.pattern_id,
            },
        )?;
        SampleRecord::open(dir)
    }

    pub fn read(dir: &Path) -> Result<Sample, DatasetError> {
        let rec = SampleRecord::open(dir)?;
        let target = Grid::read(dir.join(TARGET_FILE))?;
        let features = FeatureStack::read(dir)?;
        let los_dir = dir.join(LOS_DIR);
        let los = if los_dir.exists() {
            let read = |n: &str| Grid::read(los_dir.join(format!("{n}.f32")));
            let to_bool = |g: Grid<f64>| g.map(|v| v != 0.0);
            Some(LosMaps {
                ground: to_bool(read("ground")?),
                top: to_bool(read("top")?),
                min_visible: read("min_visible")?,
                cone_mask: to_bool(read("cone")?),
            })
        } else {
            None
        };
        Ok(Sample {
            sample_id: rec.sample_id,
            scene_id: rec.scene_id,
            pattern_id: rec.pattern_id,
            tx: rec.tx,
            target,
            features,
            los,
        })
    }

    pub fn record(&self, dir: &Path) -> SampleRecord {
        SampleRecord {
            sample_id: self.sample_id.clone(),
            scene_id: self.scene_id.clone(),
            pattern_id: self.pattern_id,
            tx: self.tx.clone(),
            dir: dir.to_path_buf(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub offset: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub file: String,
    /// `gray = (pl_db - noise_floor_db) / (max_pl_db - noise_floor_db)`,
    /// clamped to `[0, 1]`.
    pub encoding: String,
    pub noise_floor_db: f64,
    pub max_pl_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn split_of(&self, scene_id: &str) -> Option<Split> {
        let has = |v: &Vec<String>| v.iter().any(|s| s == scene_id);
        if has(&self.train) {
            Some(Split::Train)
        } else if has(&self.val) {
            Some(Split::Val)
        } else if has(&self.test) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub sample_id: String,
    pub scene_id: String,
    pub pattern_id: usize,
    pub split: Split,
    pub dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub rmse_db_factor: f64,
    pub nmse: String,
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec {
            rmse_db_factor: GRAY_TO_DB,
            nmse: "sum((pred_db - truth_db)^2) / sum(truth_db^2), pooled over all pixels; \
                   dB = noise_floor_db + gray * (max_pl_db - noise_floor_db)"
                .to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub grid: GridSpec,
    /// Channel order of every sample's feature stack.
    pub channels: Vec<ChannelEntry>,
    pub features_normalized: bool,
    pub target: TargetSpec,
    pub splits: Splits,
    pub samples: Vec<ManifestSample>,
    pub sim_params: SimParams,
    pub metrics: MetricSpec,
}

impl Manifest {
    pub fn read(dataset_dir: &Path) -> Result<Manifest, DatasetError> {
        let m: Manifest = read_json(&dataset_dir.join(MANIFEST_FILE))?;
        if m.version != MANIFEST_VERSION {
            return Err(DatasetError::Version { found: m.version });
        }
        Ok(m)
    }

    pub fn write(&self, dataset_dir: &Path) -> Result<(), DatasetError> {
        write_json(&dataset_dir.join(MANIFEST_FILE), self)
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &ManifestSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

/// Assigns scenes to train/val/test: sorted unique ids, shuffled with a
/// ChaCha8 stream seeded by `seed`, then cut at `round(f_train·n)` and
/// `round(f_val·n)`; the rest is test.
pub fn split_scenes<S: AsRef<str>>(scene_ids: &[S], seed: u64, fractions: [f64; 3]) -> Splits {
    let unique: BTreeSet<&str> = scene_ids.iter().map(|s| s.as_ref()).collect();
    let mut ids: Vec<String> = unique.into_iter().map(str::to_string).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    let sort = |mut v: Vec<String>| {
        v.sort();
        v
    };
    Splits {
        seed,
        fractions,
        train: sort(ids),
        val: sort(val),
        test: sort(test),
    }
}

fn same_path(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

fn copy_sample(rec: &SampleRecord, dest: &Path) -> Result<(), DatasetError> {
    let files = rec.files()?;
    for f in &files {
        let src = rec.dir.join(f);
        if !src.exists() {
            return Err(DatasetError::MissingFile(src));
        }
    }
    if !same_path(&rec.dir, dest) {
        if dest.exists() {
            fs::remove_dir_all(dest).map_err(io_err(dest))?;
        }
        for f in &files {
            let to = dest.join(f);
            if let Some(parent) = to.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::copy(rec.dir.join(f), &to).map_err(io_err(&to))?;
        }
    }
    // last, so an interrupted copy is never taken as complete
    write_json(&dest.join(RECORD_FILE), &rec.record_file())
}

struct SampleShape {
    grid: GridSpec,
    channels: Vec<ChannelEntry>,
    normalized: bool,
}

fn sample_shape(rec: &SampleRecord) -> Result<SampleShape, DatasetError> {
    let header: crate::grid::RasterHeader = read_json(&rec.dir.join("target.json"))?;
    let channels: ChannelManifest = read_json(&rec.dir.join(CHANNELS_FILE))?;
    for ch in &channels.channels {
        let h: crate::grid::RasterHeader =
            read_json(&rec.dir.join(&ch.file).with_extension("json"))?;
        if (h.width, h.height, h.resolution_m) != (header.width, header.height, header.resolution_m)
        {
            return Err(DatasetError::Inconsistent {
                sample_id: rec.sample_id.clone(),
                reason: format!("channel {} does not match the target grid", ch.name),
            });
        }
    }
    Ok(SampleShape {
        grid: GridSpec {
            width: header.width,
            height: header.height,
            resolution_m: header.resolution_m,
        },
        channels: channels
            .channels
            .into_iter()
            .map(|c| ChannelEntry {
                name: c.name,
                lo: c.norm.lo,
                hi: c.norm.hi,
                offset: c.norm.offset,
                scale: c.norm.scale,
            })
            .collect(),
        normalized: channels.normalized,
    })
}

/// Copies sample directories under `out_dir/samples/` (in place when they
/// already live there), assigns scene-level splits and writes
/// `manifest.json` once every sample is in place.
pub fn export_dataset(
    samples: &[SampleRecord],
    out_dir: &Path,
    split_seed: u64,
    sim_params: &SimParams,
    exec: Execution,
) -> Result<Manifest, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut seen = HashSet::new();
    for s in samples {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(DatasetError::DuplicateSampleId(s.sample_id.clone()));
        }
    }
    let samples_root = out_dir.join(SAMPLES_DIR);
    fs::create_dir_all(&samples_root).map_err(io_err(&samples_root))?;

    let shapes = map_ordered(samples, exec, |rec| -> Result<SampleShape, DatasetError> {
        let shape = sample_shape(rec)?;
        copy_sample(rec, &samples_root.join(&rec.sample_id))?;
        Ok(shape)
    });
    let mut shapes = shapes.into_iter().collect::<Result<Vec<_>, _>>()?;
    for (rec, shape) in samples.iter().zip(&shapes).skip(1) {
        let first = &shapes[0];
        let mismatch = |reason: &str| DatasetError::Inconsistent {
            sample_id: rec.sample_id.clone(),
            reason: reason.to_string(),
        };
        if shape.grid != first.grid {
            return Err(mismatch("grid differs from the first sample"));
        }
        if shape.channels != first.channels || shape.normalized != first.normalized {
            return Err(mismatch("channel registry differs from the first sample"));
        }
    }
    let first = shapes.swap_remove(0);

    let scene_ids: Vec<&str> = samples.iter().map(|s| s.scene_id.as_str()).collect();
    let splits = split_scenes(&scene_ids, split_seed, DEFAULT_SPLIT_FRACTIONS);
    let mut entries: Vec<ManifestSample> = samples
        .iter()
        .map(|s| ManifestSample {
            sample_id: s.sample_id.clone(),
            scene_id: s.scene_id.clone(),
            pattern_id: s.pattern_id,
            split: splits
                .split_of(&s.scene_id)
                .expect("every scene is assigned"),
            dir: format!("{SAMPLES_DIR}/{}", s.sample_id),
        })
        .collect();
    entries.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        grid: first.grid,
        channels: first.channels,
        features_normalized: first.normalized,
        target: TargetSpec {
            file: TARGET_FILE.to_string(),
            encoding: "gray".to_string(),
            noise_floor_db: sim_params.noise_floor_db,
            max_pl_db: sim_params.max_pl_db,
        },
        splits,
        samples: entries,
        sim_params: sim_params.clone(),
        metrics: MetricSpec::default(),
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Reads the manifest and every sample it lists.
pub fn import_dataset(dataset_dir: &Path) -> Result<(Manifest, Vec<Sample>), DatasetError> {
    let manifest = Manifest::read(dataset_dir)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let s = Sample::read(&dataset_dir.join(&entry.dir))?;
        if s.sample_id != entry.sample_id || s.scene_id != entry.scene_id {
            return Err(DatasetError::Inconsistent {
                sample_id: entry.sample_id.clone(),
                reason: "record.json disagrees with the manifest".into(),
            });
        }
        if s.features.names()
            != manifest
                .channels
                .iter()
                .map(|c| c.name.as_str())
                .collect::<Vec<_>>()
        {
            return Err(DatasetError::Inconsistent {
                sample_id: entry.sample_id.clone(),
                reason: "channel order disagrees with the manifest".into(),
            });
        }
        samples.push(s);
    }
    Ok((manifest, samples))
}

fn check_shapes(pred: &Grid<f64>, truth: &Grid<f64>) -> Result<(), DatasetError> {
    if pred.same_shape(truth) {
        Ok(())
    } else {
        Err(DatasetError::ShapeMismatch)
    }
}

/// Root-mean-square error between two gray maps.
pub fn rmse_gray(pred: &Grid<f64>, truth: &Grid<f64>) -> Result<f64, DatasetError> {
    check_shapes(pred, truth)?;
    let sse: f64 = pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn rmse_db(pred: &Grid<f64>, truth: &Grid<f64>) -> Result<f64, DatasetError> {
    Ok(GRAY_TO_DB * rmse_gray(pred, truth)?)
}

/// Gray → dB with the default truncation range; gray is clamped to `[0, 1]`.
pub fn gray_to_db(gray: f64) -> f64 {
    let p = SimParams::default();
    crate::propagation::db_from_gray(gray.clamp(0.0, 1.0), p.noise_floor_db, p.max_pl_db)
}

/// Sums `(Σ e², Σ t²)` of the dB-domain error and truth.
pub fn nmse_terms(pred: &Grid<f64>, truth: &Grid<f64>) -> Result<(f64, f64), DatasetError> {
    check_shapes(pred, truth)?;
    Ok(pred
        .values()
        .iter()
        .zip(truth.values())
        .fold((0.0, 0.0), |(e2, t2), (&p, &t)| {
            let (pd, td) = (gray_to_db(p), gray_to_db(t));
            (e2 + (pd - td) * (pd - td), t2 + td * td)
        }))
}

/// `‖pred_db − truth_db‖² / ‖truth_db‖²` on dB maps recovered from gray.
pub fn nmse_db(pred: &Grid<f64>, truth: &Grid<f64>) -> Result<f64, DatasetError> {
    let (e2, t2) = nmse_terms(pred, truth)?;
    Ok(e2 / t2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rmse,
    Nmse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_maps: usize,
    pub rmse_gray: f64,
    pub rmse_db: f64,
    pub nmse_db: f64,
}

fn find_targets(root: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<(), DatasetError> {
    let dir = root.join(rel);
    let mut entries: Vec<_> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok())
        .collect();
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = e.file_name();
        let sub = rel.join(&name);
        if e.path().is_dir() {
            find_targets(root, &sub, out)?;
        } else if name == TARGET_FILE {
            out.push(sub);
        }
    }
    Ok(())
}

/// Pools RMSE and NMSE over every `target.f32` under `truth_dir`, paired
/// by relative path with `pred_dir`.
pub fn evaluate_dirs(pred_dir: &Path, truth_dir: &Path) -> Result<EvalReport, DatasetError> {
    let mut targets = Vec::new();
    find_targets(truth_dir, Path::new(""), &mut targets)?;
    if targets.is_empty() {
        return Err(DatasetError::MissingFile(truth_dir.join(TARGET_FILE)));
    }
    let (mut sse, mut n, mut e2, mut t2) = (0.0, 0usize, 0.0, 0.0);
    for rel in &targets {
        let truth = Grid::read(truth_dir.join(rel))?;
        let pred_path = pred_dir.join(rel);
        if !pred_path.exists() {
            return Err(DatasetError::MissingFile(pred_path));
        }
        let pred = Grid::read(&pred_path)?;
        let r = rmse_gray(&pred, &truth)?;
        sse += r * r * truth.len() as f64;
        n += truth.len();
        let (a, b) = nmse_terms(&pred, &truth)?;
        e2 += a;
        t2 += b;
    }
    let rmse = (sse / n as f64).sqrt();
    Ok(EvalReport {
        n_maps: targets.len(),
        rmse_gray: rmse,
        rmse_db: GRAY_TO_DB * rmse,
        nmse_db: e2 / t2,
    })
}

/// Applies a flip/rotation to every raster and the Tx pose. Channels that
/// encode positions or directions in the map frame are recomputed from the
/// transformed Tx instead of being moved.
pub fn augment(sample: &Sample, op: SpatialOp) -> Result<Sample, DatasetError> {
    let tx = op.tx(&sample.tx, &sample.target);
    let target = op.grid(&sample.target);
    let mut features = FeatureStack::new();
    let normalized = sample.features.is_normalized();
    let mut raw = sample.features.clone();
    if normalized {
        raw = raw.denormalize();
    }
    for ch in raw.channels() {
        let moved = op.grid(&ch.values);
        let values = if frame_dependent_value(&ch.name, &tx, 0.0, 0.0).is_some() {
            Grid::from_fn(&moved, |r, c| {
                let (x, y) = moved.cell_center(r, c);
                frame_dependent_value(&ch.name, &tx, x, y).expect("frame-dependent channel")
            })
        } else {
            moved
        };
        features.push(ch.name.clone(), values, ch.norm.lo, ch.norm.hi)?;
    }
    if normalized {
        features = features.normalize()?;
    }
    let los = sample.los.as_ref().map(|l| LosMaps {
        ground: op.grid(&l.ground),
        top: op.grid(&l.top),
        min_visible: op.grid(&l.min_visible),
        cone_mask: op.grid(&l.cone_mask),
    });
    Ok(Sample {
        sample_id: sample.sample_id.clone(),
        scene_id: sample.scene_id.clone(),
        pattern_id: sample.pattern_id,
        tx,
        target,
        features,
        los,
    })
}

/// Per-split sample ids, for quick inspection.
pub fn split_index(manifest: &Manifest) -> BTreeMap<Split, Vec<String>> {
    let mut out: BTreeMap<Split, Vec<String>> = BTreeMap::new();
    for s in &manifest.samples {
        out.entry(s.split).or_default().push(s.sample_id.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: Vec<f64>) -> Grid<f64> {
        let n = v.len();
        Grid::from_vec(n, 1, 1.0, v)
    }

    #[test]
    fn rmse_examples() {
        let t = g(vec![0.2, 0.5, 0.9, 0.0]);
        assert_eq!(rmse_gray(&t, &t).unwrap(), 0.0);
        let p = t.map(|v| v + 0.1);
        assert!((rmse_gray(&p, &t).unwrap() - 0.1).abs() < 1e-12);
        assert!((rmse_db(&p, &t).unwrap() - 7.7).abs() < 1e-9);
        assert!((GRAY_TO_DB * 0.0621 - 4.78).abs() < 0.005);
        assert!(matches!(
            rmse_gray(&g(vec![0.0]), &t),
            Err(DatasetError::ShapeMismatch)
        ));
    }

    #[test]
    fn nmse_by_hand() {
        // truth at -88.5 dB everywhere, half the pixels off by 7.7 dB
        let t = g(vec![0.5; 4]);
        let p = g(vec![0.5, 0.5, 0.6, 0.6]);
        let expect = (2.0 * 7.7f64.powi(2)) / (4.0 * 88.5f64.powi(2));
        assert!((nmse_db(&p, &t).unwrap() - expect).abs() < 1e-12);
        assert_eq!(nmse_db(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn split_sizes_and_stability() {
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let a = split_scenes(&ids, 42, DEFAULT_SPLIT_FRACTIONS);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (8, 1, 1));
        assert_eq!(a, split_scenes(&ids, 42, DEFAULT_SPLIT_FRACTIONS));
        let dup: Vec<&str> = ids.iter().chain(&ids).map(|s| s.as_str()).collect();
        assert_eq!(a, split_scenes(&dup, 42, DEFAULT_SPLIT_FRACTIONS));
    }

    #[test]
    fn split_small_counts() {
        let one = split_scenes(&["a"], 1, DEFAULT_SPLIT_FRACTIONS);
        assert_eq!((one.train.len(), one.val.len(), one.test.len()), (1, 0, 0));
        let four = split_scenes(&["a", "b", "c", "d"], 1, DEFAULT_SPLIT_FRACTIONS);
        assert_eq!(
            (four.train.len(), four.val.len(), four.test.len()),
            (3, 0, 1)
        );
    }
}
