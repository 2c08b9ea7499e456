//! CNN input encodings as raster channels.
//!
//! Feature builders return raw channels together with the global bounds
//! used to map them into `[-1, 1]`; [`FeatureStack::normalize`] applies the
//! affine map and fails if any value leaves its bounds.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::antenna::{gain_at, wrap_signed_deg};
use crate::exec::{fill_grid, Execution};
use crate::geom::Vec3;
use crate::grid::{Grid, RasterError};
use crate::placement::TxConfig;
use crate::scene::Scene;
use crate::visibility::LosMaps;

pub const CHANNELS_FILE: &str = "channels.json";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("duplicate channel {0:?}")]
    DuplicateChannel(String),
    #[error("channel {name:?} value {value} outside bounds [{lo}, {hi}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("channel {0:?} grid does not match the stack dimensions")]
    ShapeMismatch(String),
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("channel manifest: {0}")]
    Manifest(String),
}

/// Affine normalization record: `normalized = (raw - offset) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub lo: f64,
    pub hi: f64,
    pub offset: f64,
    pub scale: f64,
}

impl Normalization {
    pub fn from_bounds(lo: f64, hi: f64) -> Self {
        Normalization {
            lo,
            hi,
            offset: 0.5 * (lo + hi),
            scale: 2.0 / (hi - lo),
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.offset) * self.scale
    }

    pub fn invert(&self, n: f64) -> f64 {
        n / self.scale + self.offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub name: String,
    pub values: Grid<f64>,
    pub norm: Normalization,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureStack {
    channels: Vec<Channel>,
    normalized: bool,
}

impl FeatureStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        values: Grid<f64>,
        lo: f64,
        hi: f64,
    ) -> Result<(), FeatureError> {
        self.push_channel(Channel {
            name: name.into(),
            values,
            norm: Normalization::from_bounds(lo, hi),
        })
    }

    pub fn push_channel(&mut self, ch: Channel) -> Result<(), FeatureError> {
        if self.get(&ch.name).is_some() {
            return Err(FeatureError::DuplicateChannel(ch.name));
        }
        if let Some(first) = self.channels.first() {
            if !first.values.same_shape(&ch.values) {
                return Err(FeatureError::ShapeMismatch(ch.name));
            }
        }
        self.channels.push(ch);
        Ok(())
    }

    /// Appends every channel of `other`; names must stay unique.
    pub fn extend(&mut self, other: FeatureStack) -> Result<(), FeatureError> {
        if self.is_empty() {
            self.normalized = other.normalized;
        } else if !other.is_empty() {
            assert_eq!(
                self.normalized, other.normalized,
                "mixing raw and normalized channels"
            );
        }
        for ch in other.channels {
            self.push_channel(ch)?;
        }
        Ok(())
    }

    pub fn replace_values(&mut self, name: &str, values: Grid<f64>) -> Result<(), FeatureError> {
        let ch = self
            .channels
            .iter_mut()
            .find(|c| c.name == name)
            .ok_or_else(|| FeatureError::UnknownChannel(name.to_string()))?;
        ch.values = values;
        Ok(())
    }

    /// Maps every channel into `[-1, 1]` with its global bounds.
    pub fn normalize(&self) -> Result<FeatureStack, FeatureError> {
        if self.normalized {
            return Ok(self.clone());
        }
        let mut out = Vec::with_capacity(self.channels.len());
        for ch in &self.channels {
            let n = ch.norm;
            for &v in ch.values.values() {
                if !(v >= n.lo && v <= n.hi) {
                    return Err(FeatureError::OutOfBounds {
                        name: ch.name.clone(),
                        value: v,
                        lo: n.lo,
                        hi: n.hi,
                    });
                }
            }
            out.push(Channel {
                name: ch.name.clone(),
                values: ch.values.map(|v| n.apply(v).clamp(-1.0, 1.0)),
                norm: n,
            });
        }
        Ok(FeatureStack {
            channels: out,
            normalized: true,
        })
    }

    /// Inverse of [`FeatureStack::normalize`].
    pub fn denormalize(&self) -> FeatureStack {
        if !self.normalized {
            return self.clone();
        }
        FeatureStack {
            channels: self
                .channels
                .iter()
                .map(|ch| Channel {
                    name: ch.name.clone(),
                    values: ch.values.map(|v| ch.norm.invert(v)),
                    norm: ch.norm,
                })
                .collect(),
            normalized: false,
        }
    }

    /// Writes `features/<name>.f32` per channel and `channels.json`.
    pub fn write(&self, sample_dir: &Path) -> Result<(), FeatureError> {
        let feat_dir = sample_dir.join("features");
        fs::create_dir_all(&feat_dir).map_err(|e| {
            FeatureError::Raster(RasterError::Io {
                path: feat_dir.clone(),
                source: e,
            })
        })?;
        for ch in &self.channels {
            ch.values.write(feat_dir.join(format!("{}.f32", ch.name)))?;
        }
        let manifest = ChannelManifest {
            normalized: self.normalized,
            channels: self
                .channels
                .iter()
                .map(|c| ChannelRecord {
                    name: c.name.clone(),
                    file: format!("features/{}.f32", c.name),
                    norm: c.norm,
                })
                .collect(),
        };
        let path = sample_dir.join(CHANNELS_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| RasterError::Io { path, source: e })?;
        Ok(())
    }

    pub fn read(sample_dir: &Path) -> Result<FeatureStack, FeatureError> {
        let path = sample_dir.join(CHANNELS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| RasterError::Io {
            path: path.clone(),
            source: e,
        })?;
        let manifest: ChannelManifest =
            serde_json::from_str(&text).map_err(|e| FeatureError::Manifest(e.to_string()))?;
        let mut stack = FeatureStack {
            channels: Vec::new(),
            normalized: manifest.normalized,
        };
        for rec in manifest.channels {
            let values = Grid::read(sample_dir.join(&rec.file))?;
            stack.push_channel(Channel {
                name: rec.name,
                values,
                norm: rec.norm,
            })?;
        }
        Ok(stack)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub name: String,
    pub file: String,
    #[serde(flatten)]
    pub norm: Normalization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelManifest {
    pub normalized: bool,
    pub channels: Vec<ChannelRecord>,
}

/// Global normalization constants shared across a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureBounds {
    /// Upper bound for absolute heights (nDSMs, Tx height, LoS heights).
    pub height_max: f64,
    /// Gain range `[floor, peak]` in dB shared by every pattern of a
    /// dataset; the Tx pattern's own range when unset.
    pub gain_db: Option<[f64; 2]>,
}

impl Default for FeatureBounds {
    fn default() -> Self {
        FeatureBounds {
            height_max: 32.0,
            gain_db: None,
        }
    }
}

impl FeatureBounds {
    /// Bounds whose gain range covers all `patterns`.
    pub fn covering(patterns: &[crate::antenna::AntennaPattern]) -> Self {
        let lo = patterns
            .iter()
            .map(|p| p.floor_gain_db)
            .fold(f64::INFINITY, f64::min);
        let hi = patterns
            .iter()
            .map(|p| p.peak_gain_db)
            .fold(f64::NEG_INFINITY, f64::max);
        FeatureBounds {
            gain_db: (!patterns.is_empty()).then_some([lo, hi]),
            ..FeatureBounds::default()
        }
    }

    /// Extends the gain range to include `pattern`.
    pub fn widen_to(mut self, pattern: &crate::antenna::AntennaPattern) -> Self {
        let (f, p) = (pattern.floor_gain_db, pattern.peak_gain_db);
        let [lo, hi] = self.gain_db.unwrap_or([f, p]);
        self.gain_db = Some([lo.min(f), hi.max(p)]);
        self
    }
}

/// Per-scene geometry shared by all builders.
struct Frame<'a> {
    scene: &'a Scene,
    tx: &'a TxConfig,
    exec: Execution,
    extent: f64,
    height_max: f64,
    gain_db: [f64; 2],
}

impl<'a> Frame<'a> {
    fn new(scene: &'a Scene, tx: &'a TxConfig, bounds: &FeatureBounds, exec: Execution) -> Self {
        Frame {
            scene,
            tx,
            exec,
            extent: scene.extent().max(scene.extent_y()),
            height_max: bounds.height_max,
            gain_db: bounds
                .gain_db
                .unwrap_or([tx.pattern.floor_gain_db, tx.pattern.peak_gain_db]),
        }
    }

    fn grid(&self, f: impl Fn(f64, f64, usize, usize) -> f64 + Sync) -> Grid<f64> {
        let g = self.scene.buildings().grid();
        fill_grid(g.width(), g.height(), g.resolution(), self.exec, |r, c| {
            let (x, y) = g.cell_center(r, c);
            f(x, y, r, c)
        })
    }

    fn dist2d_max(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.extent
    }

    fn dist3d_max(&self) -> f64 {
        (2.0 * self.extent * self.extent + self.height_max * self.height_max).sqrt()
    }

    fn building(&self, r: usize, c: usize) -> f64 {
        self.scene.building_height(r, c)
    }

    fn vegetation(&self, r: usize, c: usize) -> f64 {
        self.scene.vegetation().get(r, c)
    }

    /// Gain toward `(x, y, z)`; the peak when the target is the Tx itself.
    fn gain(&self, x: f64, y: f64, z: f64) -> f64 {
        let d = Vec3::new(x, y, z) - self.tx.position;
        gain_at(&self.tx.pattern, &self.tx.orientation, d).unwrap_or(self.tx.pattern.peak_gain_db)
    }

    fn gain_bounds(&self) -> (f64, f64) {
        (self.gain_db[0], self.gain_db[1])
    }

    fn fspl(&self, x: f64, y: f64, z: f64) -> f64 {
        let d = (Vec3::new(x, y, z) - self.tx.position).norm().max(1.0);
        self.gain(x, y, z) - 20.0 * d.log10()
    }

    fn fspl_bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.gain_bounds();
        (lo - 20.0 * self.dist3d_max().max(1.0).log10(), hi)
    }
}

/// Boresight-relative horizontal azimuth of `(x, y)` seen from the Tx,
/// wrapped to `(-180, 180]`; 0 at the Tx itself.
pub fn relative_azimuth(tx: &TxConfig, x: f64, y: f64) -> f64 {
    let (dx, dy) = (x - tx.position.x, y - tx.position.y);
    if dx == 0.0 && dy == 0.0 {
        return 0.0;
    }
    wrap_signed_deg(dy.atan2(dx).to_degrees() - tx.orientation.azimuth_deg)
}

/// Offset of `(x, y)` from the Tx in the boresight-aligned frame:
/// (forward, left).
pub fn boresight_offset(tx: &TxConfig, x: f64, y: f64) -> (f64, f64) {
    let a = tx.orientation.azimuth_deg.to_radians();
    let (dx, dy) = (x - tx.position.x, y - tx.position.y);
    (dx * a.cos() + dy * a.sin(), -dx * a.sin() + dy * a.cos())
}

fn elevation_deg(dz: f64, horizontal: f64) -> f64 {
    dz.atan2(horizontal).to_degrees()
}

/// Tx height at the Tx pixel, building and vegetation nDSMs, and the
/// pattern gain projected onto the floor and onto building tops.
pub fn basic_features(
    scene: &Scene,
    tx: &TxConfig,
    bounds: &FeatureBounds,
    exec: Execution,
) -> Result<FeatureStack, FeatureError> {
    let f = Frame::new(scene, tx, bounds, exec);
    let tx_cell = scene
        .buildings()
        .grid()
        .cell_of(tx.position.x, tx.position.y);
    let mut s = FeatureStack::new();
    s.push(
        "tx_onehot",
        f.grid(|_, _, r, c| {
            if Some((r, c)) == tx_cell {
                tx.position.z
            } else {
                0.0
            }
        }),
        0.0,
        f.height_max,
    )?;
    s.push(
        "build_ndsm",
        f.grid(|_, _, r, c| f.building(r, c)),
        0.0,
        f.height_max,
    )?;
    s.push(
        "veg_ndsm",
        f.grid(|_, _, r, c| f.vegetation(r, c)),
        0.0,
        f.height_max,
    )?;
    let (glo, ghi) = f.gain_bounds();
    s.push(
        "gain_floor",
        f.grid(|x, y, _, _| f.gain(x, y, 0.0)),
        glo,
        ghi,
    )?;
    s.push(
        "gain_top",
        f.grid(|x, y, r, c| f.gain(x, y, f.building(r, c))),
        glo,
        ghi,
    )?;
    Ok(s)
}

/// Constant Tx coordinate channels plus per-pixel coordinate ramps.
pub fn grid_anchor(
    scene: &Scene,
    tx: &TxConfig,
    bounds: &FeatureBounds,
    exec: Execution,
) -> Result<FeatureStack, FeatureError> {
    let f = Frame::new(scene, tx, bounds, exec);
    let p = tx.position;
    let mut s = FeatureStack::new();
    s.push("tx_x", f.grid(|_, _, _, _| p.x), 0.0, f.extent)?;
    s.push("tx_y", f.grid(|_, _, _, _| p.y), 0.0, f.extent)?;
    s.push("tx_z", f.grid(|_, _, _, _| p.z), 0.0, f.height_max)?;
    s.push("pixel_x", f.grid(|x, _, _, _| x), 0.0, f.extent)?;
    s.push("pixel_y", f.grid(|_, y, _, _| y), 0.0, f.extent)?;
    Ok(s)
}

fn relative_heights(f: &Frame, s: &mut FeatureStack) -> Result<(), FeatureError> {
    let z = f.tx.position.z;
    let hm = f.height_max;
    s.push(
        "build_rel",
        f.grid(|_, _, r, c| f.building(r, c) - z),
        -hm,
        hm,
    )?;
    s.push(
        "veg_rel",
        f.grid(|_, _, r, c| f.vegetation(r, c) - z),
        -hm,
        hm,
    )?;
    s.push("floor_rel", f.grid(|_, _, _, _| -z), -hm, hm)?;
    Ok(())
}

/// Horizontal distance, boresight-relative azimuth, and heights relative
/// to the Tx.
pub fn cylindrical_features(
    scene: &Scene,
    tx: &TxConfig,
    bounds: &FeatureBounds,
    exec: Execution,
) -> Result<FeatureStack, FeatureError> {
    let f = Frame::new(scene, tx, bounds, exec);
    let p = tx.position;
    let mut s = FeatureStack::new();
    s.push(
        "dist2d",
        f.grid(|x, y, _, _| (x - p.x).hypot(y - p.y)),
        0.0,
        f.dist2d_max(),
    )?;
    s.push(
        "azimuth",
        f.grid(|x, y, _, _| relative_azimuth(tx, x, y)),
        -180.0,
        180.0,
    )?;
    relative_heights(&f, &mut s)?;
    Ok(s)
}

/// Planar offsets in the boresight-aligned frame and heights relative to
/// the Tx.
pub fn euclidean_features(
    scene: &Scene,
    tx: &TxConfig,
    bounds: &FeatureBounds,
    exec: Execution,
) -> Result<FeatureStack, FeatureError> {
    let f = Frame::new(scene, tx, bounds, exec);
    let m = f.dist2d_max();
    let mut s = FeatureStack::new();
    s.push(
        "dx",
        f.grid(|x, y, _, _| boresight_offset(tx, x, y).0),
        -m,
        m,
    )?;
    s.push(
        "dy",
        f.grid(|x, y, _, _| boresight_offset(tx, x, y).1),
        -m,
        m,
    )?;
    relative_heights(&f, &mut s)?;
    Ok(s)
}

/// Azimuth plus elevation and 3D distance toward the ground, building top
/// and vegetation top. Building/vegetation channels take their lower
/// bound where the height is zero.
pub fn spherical_features(
    scene: &Scene,
    tx: &TxConfig,
    bounds: &FeatureBounds,
    exec: Execution,
) -> Result<FeatureStack, FeatureError> {
    let f = Frame::new(scene, tx, bounds, exec);
    let p = tx.position;
    let dmax = f.dist3d_max();
    let horiz = move |x: f64, y: f64| (x - p.x).hypot(y - p.y);
    let elev = |x: f64, y: f64, z: f64| elevation_deg(z - p.z, horiz(x, y));
    let dist = |x: f64, y: f64, z: f64| horiz(x, y).hypot(z - p.z);
    let mut s = FeatureStack::new();
    s.push(
        "azimuth",
        f.grid(|x, y, _, _| relative_azimuth(tx, x, y)),
        -180.0,
        180.0,
    )?;
    s.push(
        "elev_ground",
        f.grid(|x, y, _, _| elev(x, y, 0.0)),
        -90.0,
        90.0,
    )?;
    s.push(
        "elev_build",
        f.grid(|x, y, r, c| match f.building(r, c) {
            h if h > 0.0 => elev(x, y, h),
            _ => -90.0,
        }),
        -90.0,
        90.0,
    )?;
    s.push(
        "elev_veg",
        f.grid(|x, y, r, c| match f.vegetation(r, c) {
            h if h > 0.0 => elev(x, y, h),
            _ => -90.0,
        }),
        -90.0,
        90.0,
    )?;
    s.push(
        "dist3d_ground",
        f.grid(|x, y, _, _| dist(x, y, 0.0)),
        0.0,
        dmax,
    )?;
    s.push(
        "dist3d_build",
        f.grid(|x, y, r, c| match f.building(r, c) {
            h if h > 0.0 => dist(x, y, h),
            _ => 0.0,
        }),
        0.0,
        dmax,
    )?;
    s.push(
        "dist3d_veg",
        f.grid(|x, y, r, c| match f.vegetation(r, c) {
            h if h > 0.0 => dist(x, y, h),
            _ => 0.0,
        }),
        0.0,
        dmax,
    )?;
    Ok(s)
}

fn slice_name(prefix: &str, h: f64) -> String {
    format!("{prefix}_{h}m")
}

/// Heights `0, step, 2·step, …, ≤ top`.
pub fn slice_heights(step: f64, top: f64) -> Vec<f64> {
    let n = (top / step + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

/// Pattern gain projected onto horizontal planes at the given heights.
pub fn gain_slices(
    scene: &Scene,
    tx: &TxConfig,
    heights: &[f64],
    bounds: &FeatureBounds,
    exec: Execution,
) -> Result<FeatureStack, FeatureError> {
    let f = Frame::new(scene, tx, bounds, exec);
    let (glo, ghi) = f.gain_bounds();
    let mut s = FeatureStack::new();
    for &h in heights {
        s.push(
            slice_name("gain_slice", h),
            f.grid(|x, y, _, _| f.gain(x, y, h)),
            glo,
            ghi,
        )?;
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsplVariant {
    Floor,
    FloorTop,
    Slices(Vec<f64>),
}

/// `g - 20·log10(d)` toward each target point, `d` floored at 1 m.
pub fn fspl_features(
    scene: &Scene,
    tx: &TxConfig,
    variant: &FsplVariant,
    bounds: &FeatureBounds,
    exec: Execution,
) -> Result<FeatureStack, FeatureError> {
    let f = Frame::new(scene, tx, bounds, exec);
    let (lo, hi) = f.fspl_bounds();
    let mut s = FeatureStack::new();
    match variant {
        FsplVariant::Floor | FsplVariant::FloorTop => {
            s.push("fspl_floor", f.grid(|x, y, _, _| f.fspl(x, y, 0.0)), lo, hi)?;
            if *variant == FsplVariant::FloorTop {
                s.push(
                    "fspl_top",
                    f.grid(|x, y, r, c| f.fspl(x, y, f.building(r, c))),
                    lo,
                    hi,
                )?;
            }
        }
        FsplVariant::Slices(heights) => {
            for &h in heights {
                s.push(
                    slice_name("fspl_slice", h),
                    f.grid(|x, y, _, _| f.fspl(x, y, h)),
                    lo,
                    hi,
                )?;
            }
        }
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LosFrame {
    Absolute,
    Relative,
    Spherical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LosVariant {
    Binary,
    Ours(LosFrame),
}

/// LoS channels from precomputed maps: binary ground/top, or the minimum
/// visible height in absolute, Tx-relative or elevation-angle form.
pub fn los_features(
    scene: &Scene,
    tx: &TxConfig,
    los: &LosMaps,
    variant: LosVariant,
    ceiling: f64,
    bounds: &FeatureBounds,
    exec: Execution,
) -> Result<FeatureStack, FeatureError> {
    let f = Frame::new(scene, tx, bounds, exec);
    let p = tx.position;
    let mut s = FeatureStack::new();
    match variant {
        LosVariant::Binary => {
            s.push("los_ground", los.ground.to_f64(), 0.0, 1.0)?;
            s.push("los_top", los.top.to_f64(), 0.0, 1.0)?;
        }
        LosVariant::Ours(LosFrame::Absolute) => {
            s.push("los_min_abs", los.min_visible.clone(), 0.0, ceiling)?;
        }
        LosVariant::Ours(LosFrame::Relative) => {
            s.push(
                "los_min_rel",
                los.min_visible.map(|v| v - p.z),
                -ceiling,
                ceiling,
            )?;
        }
        LosVariant::Ours(LosFrame::Spherical) => {
            s.push(
                "los_min_elev",
                f.grid(|x, y, r, c| {
                    elevation_deg(los.min_visible.get(r, c) - p.z, (x - p.x).hypot(y - p.y))
                }),
                -90.0,
                90.0,
            )?;
        }
    }
    Ok(s)
}

/// Named groups of channels selectable in a dataset configuration.
/// Deserializes from the short names accepted by `FromStr` as well as the
/// tagged form it serializes to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", try_from = "FamilyRepr")]
pub enum FeatureFamily {
    Basic,
    GridAnchor,
    Cylindrical,
    Euclidean,
    Spherical,
    GainSlices { step_m: f64, top_m: f64 },
    Fspl(FsplVariant),
    Los(LosVariant),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FamilyRepr {
    Name(String),
    Tagged(TaggedFamily),
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum TaggedFamily {
    Basic,
    GridAnchor,
    Cylindrical,
    Euclidean,
    Spherical,
    GainSlices { step_m: f64, top_m: f64 },
    Fspl(FsplVariant),
    Los(LosVariant),
}

impl TryFrom<FamilyRepr> for FeatureFamily {
    type Error = FeatureError;

    fn try_from(r: FamilyRepr) -> Result<Self, FeatureError> {
        Ok(match r {
            FamilyRepr::Name(s) => return s.parse(),
            FamilyRepr::Tagged(t) => match t {
                TaggedFamily::Basic => FeatureFamily::Basic,
                TaggedFamily::GridAnchor => FeatureFamily::GridAnchor,
                TaggedFamily::Cylindrical => FeatureFamily::Cylindrical,
                TaggedFamily::Euclidean => FeatureFamily::Euclidean,
                TaggedFamily::Spherical => FeatureFamily::Spherical,
                TaggedFamily::GainSlices { step_m, top_m } => {
                    FeatureFamily::GainSlices { step_m, top_m }
                }
                TaggedFamily::Fspl(v) => FeatureFamily::Fspl(v),
                TaggedFamily::Los(v) => FeatureFamily::Los(v),
            },
        })
    }
}

impl std::str::FromStr for FeatureFamily {
    type Err = FeatureError;

    /// Short names: `basic`, `grid_anchor`, `cylindrical`, `euclidean`,
    /// `spherical`, `gain_slices:<step>:<top>`, `fspl_floor`,
    /// `fspl_floor_top`, `fspl_slices:<step>:<top>`, `los_binary`,
    /// `los_abs`, `los_rel`, `los_sph`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FeatureError::Manifest(format!("unknown feature family {s:?}"));
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or_default();
        let args: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let slices = || match args[..] {
            [step, top] if step > 0.0 && top >= 0.0 => Ok((step, top)),
            _ => Err(bad()),
        };
        let plain = |f: FeatureFamily| if args.is_empty() { Ok(f) } else { Err(bad()) };
        match head {
            "basic" => plain(FeatureFamily::Basic),
            "grid_anchor" => plain(FeatureFamily::GridAnchor),
            "cylindrical" => plain(FeatureFamily::Cylindrical),
            "euclidean" => plain(FeatureFamily::Euclidean),
            "spherical" => plain(FeatureFamily::Spherical),
            "gain_slices" => {
                slices().map(|(step_m, top_m)| FeatureFamily::GainSlices { step_m, top_m })
            }
            "fspl_floor" => plain(FeatureFamily::Fspl(FsplVariant::Floor)),
            "fspl_floor_top" => plain(FeatureFamily::Fspl(FsplVariant::FloorTop)),
            "fspl_slices" => slices().map(|(step, top)| {
                FeatureFamily::Fspl(FsplVariant::Slices(slice_heights(step, top)))
            }),
            "los_binary" => plain(FeatureFamily::Los(LosVariant::Binary)),
            "los_abs" => plain(FeatureFamily::Los(LosVariant::Ours(LosFrame::Absolute))),
            "los_rel" => plain(FeatureFamily::Los(LosVariant::Ours(LosFrame::Relative))),
            "los_sph" => plain(FeatureFamily::Los(LosVariant::Ours(LosFrame::Spherical))),
            _ => Err(bad()),
        }
    }
}

impl FeatureFamily {
    /// Whether the family needs LoS maps.
    pub fn needs_los(&self) -> bool {
        matches!(self, FeatureFamily::Los(_))
    }
}

/// Builds and concatenates the requested families (raw values).
pub fn synthesize(
    scene: &Scene,
    tx: &TxConfig,
    los: Option<&LosMaps>,
    ceiling: f64,
    families: &[FeatureFamily],
    bounds: &FeatureBounds,
    exec: Execution,
) -> Result<FeatureStack, FeatureError> {
    let mut stack = FeatureStack::new();
    for fam in families {
        let part = match fam {
            FeatureFamily::Basic => basic_features(scene, tx, bounds, exec)?,
            FeatureFamily::GridAnchor => grid_anchor(scene, tx, bounds, exec)?,
            FeatureFamily::Cylindrical => cylindrical_features(scene, tx, bounds, exec)?,
            FeatureFamily::Euclidean => euclidean_features(scene, tx, bounds, exec)?,
            FeatureFamily::Spherical => spherical_features(scene, tx, bounds, exec)?,
            FeatureFamily::GainSlices { step_m, top_m } => {
                gain_slices(scene, tx, &slice_heights(*step_m, *top_m), bounds, exec)?
            }
            FeatureFamily::Fspl(v) => fspl_features(scene, tx, v, bounds, exec)?,
            FeatureFamily::Los(v) => {
                let los = los.ok_or_else(|| FeatureError::Manifest("LoS maps required".into()))?;
                los_features(scene, tx, los, *v, ceiling, bounds, exec)?
            }
        };
        stack.extend(part)?;
    }
    Ok(stack)
}

/// Channels whose values depend on the direction or absolute position of
/// the pixel relative to the map frame; spatial transforms must re-derive
/// them.
pub const FRAME_DEPENDENT_CHANNELS: [&str; 7] =
    ["azimuth", "dx", "dy", "tx_x", "tx_y", "pixel_x", "pixel_y"];

/// Raw value of a frame-dependent channel at a pixel center; `None` for
/// other channels.
pub fn frame_dependent_value(name: &str, tx: &TxConfig, x: f64, y: f64) -> Option<f64> {
    Some(match name {
        "azimuth" => relative_azimuth(tx, x, y),
        "dx" => boresight_offset(tx, x, y).0,
        "dy" => boresight_offset(tx, x, y).1,
        "tx_x" => tx.position.x,
        "tx_y" => tx.position.y,
        "pixel_x" => x,
        "pixel_y" => y,
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antenna::{builtin_patterns, Orientation};
    use crate::grid::Grid;
    use crate::scene::HeightGrid;
    use crate::visibility::{los_maps, LosParams};

    fn demo_scene() -> Scene {
        let n = 24;
        let mut b = vec![0.0; n * n];
        let mut v = vec![0.0; n * n];
        for r in 4..9 {
            for c in 3..7 {
                b[r * n + c] = 10.0;
            }
        }
        for r in 14..20 {
            for c in 12..18 {
                b[r * n + c] = 18.0;
            }
        }
        for r in 2..6 {
            for c in 15..21 {
                v[r * n + c] = 7.0;
            }
        }
        Scene::new(
            "d",
            HeightGrid::new(Grid::from_vec(n, n, 1.0, b)).unwrap(),
            HeightGrid::new(Grid::from_vec(n, n, 1.0, v)).unwrap(),
            None,
        )
        .unwrap()
    }

    fn demo_tx(az: f64, tilt: f64) -> TxConfig {
        TxConfig {
            scene_id: "d".into(),
            position: Vec3::new(6.5, 6.5, 12.0),
            orientation: Orientation::new(az, tilt),
            pattern: builtin_patterns()[5],
            pattern_id: 5,
        }
    }

    const EX: Execution = Execution::Sequential;

    #[test]
    fn basic_channels() {
        let s = demo_scene();
        let tx = demo_tx(0.0, -10.0);
        let raw = basic_features(&s, &tx, &FeatureBounds::default(), EX).unwrap();
        assert_eq!(
            raw.names(),
            [
                "tx_onehot",
                "build_ndsm",
                "veg_ndsm",
                "gain_floor",
                "gain_top"
            ]
        );
        let onehot = &raw.get("tx_onehot").unwrap().values;
        let nz: Vec<f64> = onehot
            .values()
            .iter()
            .copied()
            .filter(|&v| v != 0.0)
            .collect();
        assert_eq!(nz, vec![12.0]);
        assert_eq!(onehot.get(6, 6), 12.0);

        let flat = Scene::flat("f", 16, 1.0);
        let tx = TxConfig {
            position: Vec3::new(2.5, 8.5, 10.0),
            ..demo_tx(0.0, -20.0)
        };
        let n = basic_features(&flat, &tx, &FeatureBounds::default(), EX)
            .unwrap()
            .normalize()
            .unwrap();
        assert!(n
            .get("build_ndsm")
            .unwrap()
            .values
            .values()
            .iter()
            .all(|&v| v == -1.0));
        // boresight hits the ground at 10 / tan(20°) = 27.5 m, beyond the map:
        // the maximum of the floor projection is on the boresight row
        let gf = &basic_features(&flat, &tx, &FeatureBounds::default(), EX)
            .unwrap()
            .get("gain_floor")
            .unwrap()
            .values
            .clone();
        let max = gf.min_max().1;
        let row_max = (0..16).map(|c| gf.get(8, c)).fold(f64::MIN, f64::max);
        assert_eq!(max, row_max);
    }

    #[test]
    fn grid_anchor_channels() {
        let s = demo_scene();
        let tx = demo_tx(30.0, 0.0);
        let st = grid_anchor(&s, &tx, &FeatureBounds::default(), EX).unwrap();
        let txx = &st.get("tx_x").unwrap().values;
        assert!(txx.values().iter().all(|&v| v == 6.5));
        let px = &st.get("pixel_x").unwrap().values;
        for c in 1..24 {
            assert!(px.get(3, c) > px.get(3, c - 1));
            assert_eq!(px.get(3, c) - px.get(3, c - 1), 1.0);
        }
    }

    #[test]
    fn cylindrical_and_euclidean_agree() {
        let s = demo_scene();
        let tx = demo_tx(37.0, -5.0);
        let b = FeatureBounds::default();
        let cyl = cylindrical_features(&s, &tx, &b, EX).unwrap();
        let euc = euclidean_features(&s, &tx, &b, EX).unwrap();
        let d = &cyl.get("dist2d").unwrap().values;
        let (dx, dy) = (
            &euc.get("dx").unwrap().values,
            &euc.get("dy").unwrap().values,
        );
        assert_eq!(d.get(6, 6), 0.0);
        assert_eq!((dx.get(6, 6), dy.get(6, 6)), (0.0, 0.0));
        for i in 0..d.len() {
            let (a, b2) = (
                d.values()[i].powi(2),
                dx.values()[i].powi(2) + dy.values()[i].powi(2),
            );
            assert!((a - b2).abs() <= 1e-6 * a.max(1.0));
        }
        for name in ["build_rel", "veg_rel", "floor_rel"] {
            assert_eq!(cyl.get(name).unwrap().values, euc.get(name).unwrap().values);
        }
        assert!(cyl
            .get("floor_rel")
            .unwrap()
            .values
            .values()
            .iter()
            .all(|&v| v == -12.0));
        // along boresight azimuth 0
        let tx0 = demo_tx(0.0, 0.0);
        let cyl0 = cylindrical_features(&s, &tx0, &b, EX).unwrap();
        assert_eq!(cyl0.get("azimuth").unwrap().values.get(6, 20), 0.0);
        assert_eq!(cyl0.get("azimuth").unwrap().values.get(20, 6), 90.0);
    }

    #[test]
    fn spherical_channels() {
        let s = demo_scene();
        let tx = demo_tx(0.0, 0.0);
        let sp = spherical_features(&s, &tx, &FeatureBounds::default(), EX).unwrap();
        let eg = &sp.get("elev_ground").unwrap().values;
        assert!(eg.get(6, 7) < 0.0 && eg.get(7, 6) < 0.0);
        let cyl = cylindrical_features(&s, &tx, &FeatureBounds::default(), EX).unwrap();
        let d2 = &cyl.get("dist2d").unwrap().values;
        let d3 = &sp.get("dist3d_ground").unwrap().values;
        for i in 0..d2.len() {
            let expect = (d2.values()[i].powi(2) + 144.0).sqrt();
            assert!((d3.values()[i] - expect).abs() < 1e-9);
        }
        // sentinel where there is no building
        assert_eq!(sp.get("elev_build").unwrap().values.get(0, 0), -90.0);
        let n = sp.normalize().unwrap();
        assert_eq!(n.get("elev_build").unwrap().values.get(0, 0), -1.0);
    }

    /// Along one grid row from the Tx, a building top with a higher
    /// elevation than a farther pixel's ground point hides that point.
    #[test]
    fn elevation_ordering_predicts_shadowing() {
        let n = 32;
        let mut b = vec![0.0; n * n];
        b[10 * n + 12] = 9.0;
        let s = Scene::new(
            "e",
            HeightGrid::new(Grid::from_vec(n, n, 1.0, b)).unwrap(),
            HeightGrid::flat(n, n, 1.0),
            None,
        )
        .unwrap();
        let tx = TxConfig {
            position: Vec3::new(2.5, 10.5, 12.0),
            orientation: Orientation::new(0.0, 0.0),
            pattern: crate::antenna::AntennaPattern::new(90.0, 360.0, 0.0, -30.0).unwrap(),
            ..demo_tx(0.0, 0.0)
        };
        let sp = spherical_features(&s, &tx, &FeatureBounds::default(), EX).unwrap();
        let los = los_maps(&s, &tx, &LosParams::default(), EX).unwrap();
        let eb = sp.get("elev_build").unwrap().values.get(10, 12);
        for c in 13..n {
            let eg = sp.get("elev_ground").unwrap().values.get(10, c);
            if eb > eg {
                assert!(los.min_visible.get(10, c) > 0.0, "col {c}");
                let rx = elevation_deg(1.5 - 12.0, (c as f64 + 0.5) - 2.5);
                if eb > rx {
                    assert!(!los.ground.get(10, c));
                }
            }
        }
    }

    #[test]
    fn slices_and_fspl() {
        let s = demo_scene();
        let tx = demo_tx(0.0, 0.0);
        let b = FeatureBounds::default();
        let heights = slice_heights(4.0, 28.0);
        assert_eq!(heights.len(), 8);
        assert_eq!(slice_heights(1.0, 28.0).len(), 29);
        let gs = gain_slices(&s, &tx, &heights, &b, EX).unwrap();
        assert_eq!(gs.len(), 8);
        let at_tx = &gs.get("gain_slice_12m").unwrap().values;
        let peak = tx.pattern.peak_gain_db;
        assert!((at_tx.get(6, 20) - peak).abs() < 1e-12);
        for ch in gs.channels() {
            assert!(ch.values.min_max().1 <= peak);
        }

        let fs = fspl_features(&s, &tx, &FsplVariant::FloorTop, &b, EX).unwrap();
        let gf = basic_features(&s, &tx, &b, EX).unwrap();
        let sp = spherical_features(&s, &tx, &b, EX).unwrap();
        let (f, g, d) = (
            &fs.get("fspl_floor").unwrap().values,
            &gf.get("gain_floor").unwrap().values,
            &sp.get("dist3d_ground").unwrap().values,
        );
        for i in 0..f.len() {
            let expect = g.values()[i] - 20.0 * d.values()[i].max(1.0).log10();
            assert!((f.values()[i] - expect).abs() < 1e-6);
        }
        let sl = fspl_features(&s, &tx, &FsplVariant::Slices(heights.clone()), &b, EX).unwrap();
        assert_eq!(sl.len(), 8);
    }

    #[test]
    fn los_variants() {
        let s = demo_scene();
        let tx = demo_tx(45.0, -5.0);
        let b = FeatureBounds::default();
        let los = los_maps(&s, &tx, &LosParams::default(), EX).unwrap();
        let bin = los_features(&s, &tx, &los, LosVariant::Binary, 32.0, &b, EX)
            .unwrap()
            .normalize()
            .unwrap();
        for ch in bin.channels() {
            assert!(ch.values.values().iter().all(|&v| v == -1.0 || v == 1.0));
        }
        assert_eq!(
            bin.get("los_ground").unwrap().values,
            los.ground.to_f64().map(|v| 2.0 * v - 1.0)
        );
        let rel = los_features(
            &s,
            &tx,
            &los,
            LosVariant::Ours(LosFrame::Relative),
            32.0,
            &b,
            EX,
        )
        .unwrap();
        let sph = los_features(
            &s,
            &tx,
            &los,
            LosVariant::Ours(LosFrame::Spherical),
            32.0,
            &b,
            EX,
        )
        .unwrap();
        let (r, e) = (
            &rel.get("los_min_rel").unwrap().values,
            &sph.get("los_min_elev").unwrap().values,
        );
        let g = s.buildings().grid();
        for row in 0..24 {
            for col in 0..24 {
                assert_eq!(r.get(row, col), los.min_visible.get(row, col) - 12.0);
                let (x, y) = g.cell_center(row, col);
                let d = (x - 6.5).hypot(y - 6.5);
                if d > 0.0 {
                    let expect = (r.get(row, col) / d).atan().to_degrees();
                    assert!((e.get(row, col) - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn normalization_round_trip_and_bounds() {
        let s = demo_scene();
        let tx = demo_tx(200.0, -15.0);
        let b = FeatureBounds::default();
        let raw = synthesize(
            &s,
            &tx,
            None,
            32.0,
            &[
                FeatureFamily::Basic,
                FeatureFamily::Cylindrical,
                FeatureFamily::GridAnchor,
            ],
            &b,
            EX,
        )
        .unwrap();
        let n = raw.normalize().unwrap();
        for ch in n.channels() {
            assert!(
                ch.values.values().iter().all(|v| (-1.0..=1.0).contains(v)),
                "{}",
                ch.name
            );
        }
        let back = n.denormalize();
        for (a, b) in raw.channels().iter().zip(back.channels()) {
            for (x, y) in a.values.values().iter().zip(b.values.values()) {
                assert!((x - y).abs() < 1e-6 * x.abs().max(1.0));
            }
        }
        let az = Normalization::from_bounds(-180.0, 180.0);
        assert_eq!(az.apply(0.0), 0.0);
        let h = Normalization::from_bounds(0.0, 32.0);
        assert_eq!(h.apply(0.0), -1.0);

        let dup = synthesize(
            &s,
            &tx,
            None,
            32.0,
            &[FeatureFamily::Cylindrical, FeatureFamily::Euclidean],
            &b,
            EX,
        );
        assert!(matches!(dup, Err(FeatureError::DuplicateChannel(_))));
    }

    #[test]
    fn family_names_parse() {
        assert_eq!(
            "basic".parse::<FeatureFamily>().unwrap(),
            FeatureFamily::Basic
        );
        assert_eq!(
            "gain_slices:4:28".parse::<FeatureFamily>().unwrap(),
            FeatureFamily::GainSlices {
                step_m: 4.0,
                top_m: 28.0
            }
        );
        match "fspl_slices:1:28".parse::<FeatureFamily>().unwrap() {
            FeatureFamily::Fspl(FsplVariant::Slices(h)) => assert_eq!(h.len(), 29),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            "los_sph".parse::<FeatureFamily>().unwrap(),
            FeatureFamily::Los(LosVariant::Ours(LosFrame::Spherical))
        );
        for bad in ["", "nope", "basic:1", "gain_slices:0:28", "gain_slices:4"] {
            assert!(bad.parse::<FeatureFamily>().is_err(), "{bad}");
        }
    }

    #[test]
    fn families_deserialize_from_names_and_tagged_form() {
        let fams: Vec<FeatureFamily> = serde_json::from_str(
            r#"["fspl_floor_top", "gain_slices:4:28", "los_abs", "grid_anchor"]"#,
        )
        .unwrap();
        assert_eq!(fams[0], FeatureFamily::Fspl(FsplVariant::FloorTop));
        assert_eq!(fams[3], FeatureFamily::GridAnchor);
        for f in &fams {
            let back: FeatureFamily =
                serde_json::from_str(&serde_json::to_string(f).unwrap()).unwrap();
            assert_eq!(&back, f);
        }
        assert!(serde_json::from_str::<FeatureFamily>(r#""fspl_top""#).is_err());
    }

    #[test]
    fn out_of_bounds_is_an_error_not_a_clamp() {
        let mut st = FeatureStack::new();
        st.push("h", Grid::filled(2, 2, 1.0, 40.0), 0.0, 32.0)
            .unwrap();
        assert!(matches!(
            st.normalize(),
            Err(FeatureError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn stack_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = demo_scene();
        let tx = demo_tx(10.0, -5.0);
        let st = basic_features(&s, &tx, &FeatureBounds::default(), EX)
            .unwrap()
            .normalize()
            .unwrap();
        st.write(dir.path()).unwrap();
        let back = FeatureStack::read(dir.path()).unwrap();
        assert_eq!(back.names(), st.names());
        for (a, b) in st.channels().iter().zip(back.channels()) {
            assert_eq!(a.norm, b.norm);
            for (x, y) in a.values.values().iter().zip(b.values.values()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }
}
