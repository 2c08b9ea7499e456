//! Row-major rasters and the on-disk raster format.
//!
//! A raster on disk is a pair of files: `<stem>.f32` holding the raw
//! little-endian float32 payload (row-major) and `<stem>.json` holding the
//! header `{"width", "height", "resolution_m", "dtype": "f32le"}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed raster {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

impl RasterError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        RasterError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn malformed(path: &Path, reason: impl Into<String>) -> Self {
        RasterError::Malformed {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

/// A dense row-major raster with square cells of `resolution` meters.
///
/// Cell `(row, col)` covers `x ∈ [col·res, (col+1)·res)` and
/// `y ∈ [row·res, (row+1)·res)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    resolution: f64,
    data: Vec<T>,
}

impl<T> Grid<T> {
    pub fn filled(width: usize, height: usize, resolution: f64, value: T) -> Self
    where
        T: Clone,
    {
        Grid {
            width,
            height,
            resolution,
            data: vec![value; width * height],
        }
    }

    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, resolution: f64, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid payload length mismatch");
        Grid {
            width,
            height,
            resolution,
            data,
        }
    }

    /// Builds a grid of the same shape as `like` by evaluating `f(row, col)`.
    pub fn from_fn<U>(like: &Grid<U>, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(like.len());
        for r in 0..like.height {
            for c in 0..like.width {
                data.push(f(r, c));
            }
        }
        Grid {
            width: like.width,
            height: like.height,
            resolution: like.resolution,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn extent_x(&self) -> f64 {
        self.width as f64 * self.resolution
    }

    pub fn extent_y(&self) -> f64 {
        self.height as f64 * self.resolution
    }

    pub fn get(&self, row: usize, col: usize) -> T
    where
        T: Copy,
    {
        self.data[row * self.width + col]
    }

    pub fn try_get(&self, row: isize, col: isize) -> Option<T>
    where
        T: Copy,
    {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            None
        } else {
            Some(self.get(row as usize, col as usize))
        }
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<T> {
        self.data
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.resolution == other.resolution
    }

    /// Cell-center coordinates `(x, y)` in meters.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) * self.resolution,
            (row as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing `(x, y)`, or `None` when outside `[0, extent)`.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x >= 0.0 && y >= 0.0 && x < self.extent_x() && y < self.extent_y()) {
            return None;
        }
        let col = ((x / self.resolution).floor() as usize).min(self.width - 1);
        let row = ((y / self.resolution).floor() as usize).min(self.height - 1);
        Some((row, col))
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Grid<U>
    where
        T: Copy,
    {
        Grid {
            width: self.width,
            height: self.height,
            resolution: self.resolution,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Grid<f64> {
    /// Reads a raster stored as `<stem>.f32` + `<stem>.json`.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let payload_path = path.as_ref();
        let header_path = header_path(payload_path);
        let header_text =
            fs::read_to_string(&header_path).map_err(|e| RasterError::io(&header_path, e))?;
        let header: RasterHeader = serde_json::from_str(&header_text)
            .map_err(|e| RasterError::malformed(&header_path, e.to_string()))?;
        if header.dtype != "f32le" {
            return Err(RasterError::malformed(
                &header_path,
                format!("unsupported dtype {:?}", header.dtype),
            ));
        }
        if header.width == 0 || header.height == 0 {
            return Err(RasterError::malformed(&header_path, "empty dimensions"));
        }
        if !(header.resolution_m > 0.0 && header.resolution_m.is_finite()) {
            return Err(RasterError::malformed(
                &header_path,
                "resolution_m must be positive",
            ));
        }
        let bytes = fs::read(payload_path).map_err(|e| RasterError::io(payload_path, e))?;
        let expected = header.width * header.height * 4;
        if bytes.len() != expected {
            return Err(RasterError::malformed(
                payload_path,
                format!(
                    "payload has {} bytes, header implies {}",
                    bytes.len(),
                    expected
                ),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Grid::from_vec(
            header.width,
            header.height,
            header.resolution_m,
            data,
        ))
    }

    /// Writes the raster as float32; values are narrowed with `as f32`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let payload_path = path.as_ref();
        let header_path = header_path(payload_path);
        let header = RasterHeader {
            width: self.width,
            height: self.height,
            resolution_m: self.resolution,
            dtype: "f32le".to_string(),
        };
        let mut bytes = Vec::with_capacity(self.len() * 4);
        for &v in &self.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(payload_path, bytes).map_err(|e| RasterError::io(payload_path, e))?;
        let text = serde_json::to_string(&header).expect("header serializes");
        fs::write(&header_path, text).map_err(|e| RasterError::io(&header_path, e))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

impl Grid<bool> {
    pub fn to_f64(&self) -> Grid<f64> {
        self.map(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
    pub dtype: String,
}

/// Sidecar header path for a payload path: `a/b.f32` → `a/b.json`.
pub fn header_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_lookup_uses_half_open_cells() {
        let g = Grid::from_vec(2, 2, 1.0, vec![0.0, 10.0, 20.0, 30.0]);
        assert_eq!(g.cell_of(1.5, 0.5), Some((0, 1)));
        assert_eq!(g.cell_of(2.0, 0.5), None);
        assert_eq!(g.cell_of(-0.01, 0.5), None);
        assert_eq!(g.cell_center(1, 0), (0.5, 1.5));
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.f32");
        let g = Grid::from_vec(3, 2, 0.5, vec![0.0, 1.25, -3.5, 7.0, 1e-3_f32 as f64, 9.0]);
        g.write(&path).unwrap();
        assert!(dir.path().join("r.json").exists());
        let back = Grid::read(&path).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn short_payload_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.f32");
        Grid::filled(4, 4, 1.0, 1.0).write(&path).unwrap();
        fs::write(&path, [0u8; 12]).unwrap();
        assert!(matches!(
            Grid::read(&path),
            Err(RasterError::Malformed { .. })
        ));
    }
}
