//! Immutable raster environment: building and vegetation nDSMs over a flat
//! ground plane at `z = 0`, plus an optional RGB+IR aerial image.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::grid::{Grid, RasterError};

pub const BUILDINGS_FILE: &str = "buildings.f32";
pub const VEGETATION_FILE: &str = "vegetation.f32";
pub const AERIAL_FILE: &str = "aerial.png";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error(transparent)]
    MalformedRaster(#[from] RasterError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative or non-finite height {value} at row {row}, col {col}")]
    NegativeHeight { row: usize, col: usize, value: f64 },
    #[error("point ({x}, {y}) outside scene extent")]
    OutOfBounds { x: f64, y: f64 },
    #[error("aerial image {path}: {reason}")]
    Aerial { path: PathBuf, reason: String },
    #[error("synthetic scene spec: {0}")]
    Synthetic(String),
}

/// Height above ground in meters, validated finite and non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightGrid(Grid<f64>);

impl HeightGrid {
    pub fn new(grid: Grid<f64>) -> Result<Self, SceneError> {
        if grid.is_empty() {
            return Err(SceneError::DimensionMismatch("empty grid".into()));
        }
        if !(grid.resolution() > 0.0 && grid.resolution().is_finite()) {
            return Err(SceneError::DimensionMismatch(format!(
                "resolution {} must be positive",
                grid.resolution()
            )));
        }
        for (i, &v) in grid.values().iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SceneError::NegativeHeight {
                    row: i / grid.width(),
                    col: i % grid.width(),
                    value: v,
                });
            }
        }
        Ok(HeightGrid(grid))
    }

    pub fn flat(width: usize, height: usize, resolution: f64) -> Self {
        HeightGrid(Grid::filled(width, height, resolution, 0.0))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0.get(row, col)
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn resolution(&self) -> f64 {
        self.0.resolution()
    }

    /// Nearest-cell lookup of the cell containing `(x, y)`.
    pub fn sample(&self, x: f64, y: f64) -> Result<f64, SceneError> {
        self.0
            .cell_of(x, y)
            .map(|(r, c)| self.0.get(r, c))
            .ok_or(SceneError::OutOfBounds { x, y })
    }
}

/// Nearest-cell height of the cell containing `(x, y)`.
pub fn sample_height(grid: &HeightGrid, x: f64, y: f64) -> Result<f64, SceneError> {
    grid.sample(x, y)
}

/// 4-channel (R, G, B, IR) aerial raster with the scene's pixel dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct AerialImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 4]>,
}

impl AerialImage {
    pub fn read(path: &Path) -> Result<Self, SceneError> {
        let err = |reason: String| SceneError::Aerial {
            path: path.to_path_buf(),
            reason,
        };
        let img = image::open(path).map_err(|e| err(e.to_string()))?;
        let rgba = img.to_rgba8();
        let (w, h) = rgba.dimensions();
        Ok(AerialImage {
            width: w as usize,
            height: h as usize,
            pixels: rgba.pixels().map(|p| p.0).collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), SceneError> {
        let mut buf = image::RgbaImage::new(self.width as u32, self.height as u32);
        for (i, px) in buf.pixels_mut().enumerate() {
            px.0 = self.pixels[i];
        }
        buf.save(path).map_err(|e| SceneError::Aerial {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    buildings: HeightGrid,
    vegetation: HeightGrid,
    aerial: Option<AerialImage>,
}

impl Scene {
    pub fn new(
        id: impl Into<String>,
        buildings: HeightGrid,
        vegetation: HeightGrid,
        aerial: Option<AerialImage>,
    ) -> Result<Self, SceneError> {
        if !buildings.grid().same_shape(vegetation.grid()) {
            return Err(SceneError::DimensionMismatch(format!(
                "buildings {}x{}@{} vs vegetation {}x{}@{}",
                buildings.width(),
                buildings.height(),
                buildings.resolution(),
                vegetation.width(),
                vegetation.height(),
                vegetation.resolution()
            )));
        }
        if let Some(a) = &aerial {
            if a.width != buildings.width() || a.height != buildings.height() {
                return Err(SceneError::DimensionMismatch(format!(
                    "aerial {}x{} vs grid {}x{}",
                    a.width,
                    a.height,
                    buildings.width(),
                    buildings.height()
                )));
            }
        }
        Ok(Scene {
            id: id.into(),
            buildings,
            vegetation,
            aerial,
        })
    }

    pub fn flat(id: impl Into<String>, size: usize, resolution: f64) -> Self {
        Scene {
            id: id.into(),
            buildings: HeightGrid::flat(size, size, resolution),
            vegetation: HeightGrid::flat(size, size, resolution),
            aerial: None,
        }
    }

    pub fn buildings(&self) -> &HeightGrid {
        &self.buildings
    }

    pub fn vegetation(&self) -> &HeightGrid {
        &self.vegetation
    }

    pub fn aerial(&self) -> Option<&AerialImage> {
        self.aerial.as_ref()
    }

    pub fn width(&self) -> usize {
        self.buildings.width()
    }

    pub fn height(&self) -> usize {
        self.buildings.height()
    }

    pub fn resolution(&self) -> f64 {
        self.buildings.resolution()
    }

    pub fn extent(&self) -> f64 {
        self.buildings.grid().extent_x()
    }

    pub fn extent_y(&self) -> f64 {
        self.buildings.grid().extent_y()
    }

    pub fn building_height(&self, row: usize, col: usize) -> f64 {
        self.buildings.get(row, col)
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        self.buildings.grid().cell_of(x, y).is_some()
    }

    /// Writes `buildings.f32`, `vegetation.f32` (plus headers) and
    /// `aerial.png` when present.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), SceneError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| {
            SceneError::MalformedRaster(RasterError::Io {
                path: dir.to_path_buf(),
                source: e,
            })
        })?;
        self.buildings.grid().write(dir.join(BUILDINGS_FILE))?;
        self.vegetation.grid().write(dir.join(VEGETATION_FILE))?;
        if let Some(a) = &self.aerial {
            a.write(&dir.join(AERIAL_FILE))?;
        }
        Ok(())
    }
}

/// Loads and validates a scene from explicit raster paths.
pub fn load_scene(
    buildings_path: &Path,
    vegetation_path: &Path,
    aerial_path: Option<&Path>,
) -> Result<Scene, SceneError> {
    let buildings = HeightGrid::new(Grid::read(buildings_path)?)?;
    let vegetation = HeightGrid::new(Grid::read(vegetation_path)?)?;
    let aerial = aerial_path.map(AerialImage::read).transpose()?;
    let id = buildings_path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".to_string());
    Scene::new(id, buildings, vegetation, aerial)
}

/// Loads a scene directory laid out by [`Scene::save`]; the scene id is the
/// directory name.
pub fn load_scene_dir(dir: impl AsRef<Path>) -> Result<Scene, SceneError> {
    let dir = dir.as_ref();
    let aerial = dir.join(AERIAL_FILE);
    let aerial = aerial.exists().then_some(aerial);
    load_scene(
        &dir.join(BUILDINGS_FILE),
        &dir.join(VEGETATION_FILE),
        aerial.as_deref(),
    )
}

/// Horizontal axis a vertical face is perpendicular to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaceAxis {
    /// Face lies in a plane `x = const`.
    X,
    /// Face lies in a plane `y = const`.
    Y,
}

/// Axis-aligned vertical rectangle on a boundary between raster columns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerticalFace {
    pub axis: FaceAxis,
    /// Plane position along `axis`, meters.
    pub plane: f64,
    /// Extent along the other horizontal axis, meters.
    pub span: (f64, f64),
    pub z_lo: f64,
    pub z_hi: f64,
    /// Sign of the outward normal along `axis` (points toward the lower cell).
    pub normal_sign: f64,
}

impl VerticalFace {
    pub fn width(&self) -> f64 {
        self.span.1 - self.span.0
    }

    pub fn area(&self) -> f64 {
        self.width() * (self.z_hi - self.z_lo)
    }

    pub fn normal(&self) -> [f64; 3] {
        match self.axis {
            FaceAxis::X => [self.normal_sign, 0.0, 0.0],
            FaceAxis::Y => [0.0, self.normal_sign, 0.0],
        }
    }
}

/// One vertical face per boundary between 4-adjacent cells of unequal
/// building height, including boundaries against the (zero-height) outside
/// of the grid.
pub fn extract_wall_faces(scene: &Scene) -> Vec<VerticalFace> {
    let b = scene.buildings();
    let res = b.resolution();
    let (w, h) = (b.width(), b.height());
    let height_or_ground = |r: isize, c: isize| b.grid().try_get(r, c).unwrap_or(0.0);
    let mut faces = Vec::new();
    // boundaries x = c·res between column c-1 and c
    for r in 0..h {
        for c in 0..=w {
            let left = height_or_ground(r as isize, c as isize - 1);
            let right = height_or_ground(r as isize, c as isize);
            if left != right {
                faces.push(VerticalFace {
                    axis: FaceAxis::X,
                    plane: c as f64 * res,
                    span: (r as f64 * res, (r + 1) as f64 * res),
                    z_lo: left.min(right),
                    z_hi: left.max(right),
                    normal_sign: if left > right { 1.0 } else { -1.0 },
                });
            }
        }
    }
    // boundaries y = r·res between row r-1 and r
    for r in 0..=h {
        for c in 0..w {
            let up = height_or_ground(r as isize - 1, c as isize);
            let down = height_or_ground(r as isize, c as isize);
            if up != down {
                faces.push(VerticalFace {
                    axis: FaceAxis::Y,
                    plane: r as f64 * res,
                    span: (c as f64 * res, (c + 1) as f64 * res),
                    z_lo: up.min(down),
                    z_hi: up.max(down),
                    normal_sign: if up > down { 1.0 } else { -1.0 },
                });
            }
        }
    }
    faces
}

/// Merges collinear neighbouring faces with identical plane, normal and
/// vertical extent into maximal rectangles. The union of the input faces is
/// preserved exactly.
pub fn merge_faces(faces: &[VerticalFace]) -> Vec<VerticalFace> {
    let mut sorted: Vec<VerticalFace> = faces.to_vec();
    let key = |f: &VerticalFace| {
        (
            f.axis == FaceAxis::Y,
            f.plane.to_bits(),
            f.normal_sign.to_bits(),
            f.z_lo.to_bits(),
            f.z_hi.to_bits(),
        )
    };
    sorted.sort_by(|a, b| {
        key(a)
            .cmp(&key(b))
            .then(a.span.0.partial_cmp(&b.span.0).unwrap())
    });
    let mut merged: Vec<VerticalFace> = Vec::with_capacity(sorted.len());
    for f in sorted {
        if let Some(last) = merged.last_mut() {
            if key(last) == key(&f) && last.span.1 == f.span.0 {
                last.span.1 = f.span.1;
                continue;
            }
        }
        merged.push(f);
    }
    merged
}
