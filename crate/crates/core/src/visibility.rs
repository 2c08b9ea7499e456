//! Line-of-sight maps from a transmitter over the building heightfield.
//!
//! Every map is derived from one 2D traversal per pixel that records the
//! steepest blocking slope `s = (h - z_tx) / d` over all cell entry/exit
//! points between the Tx and the pixel. A target at height `z` is visible
//! iff `z_tx + d·s ≤ z` and `z` is not below the pixel's own column.
//! Vegetation never blocks; a segment grazing a column top is unobstructed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::antenna::wrap_signed_deg;
use crate::exec::{fill_grid, Execution};
use crate::geom::{march_cells, Vec3};
use crate::grid::Grid;
use crate::placement::TxConfig;
use crate::scene::Scene;

pub const RX_HEIGHT: f64 = 1.5;
pub const DEFAULT_CEILING: f64 = 32.0;

#[derive(Debug, Error, PartialEq)]
pub enum VisibilityError {
    #[error("transmitter at ({x}, {y}) lies outside the scene")]
    TxOutOfBounds { x: f64, y: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosParams {
    pub rx_height: f64,
    pub ceiling: f64,
}

impl Default for LosParams {
    fn default() -> Self {
        LosParams {
            rx_height: RX_HEIGHT,
            ceiling: DEFAULT_CEILING,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LosMaps {
    pub ground: Grid<bool>,
    pub top: Grid<bool>,
    pub min_visible: Grid<f64>,
    pub cone_mask: Grid<bool>,
}

/// Obstruction summary of the vertical plane between a source and a
/// horizontal target point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayProfile {
    pub source_z: f64,
    /// Horizontal distance from source to target.
    pub distance: f64,
    /// Steepest blocking slope over interior samples (`-inf` if none).
    pub max_slope: f64,
    /// Building height of the target cell.
    pub end_height: f64,
    /// The source sits inside its own column.
    pub source_buried: bool,
}

impl RayProfile {
    /// Lowest visible height at the target, before any ceiling.
    pub fn min_visible(&self) -> f64 {
        if self.source_buried {
            return f64::INFINITY;
        }
        let over_obstacles = if self.max_slope == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.source_z + self.distance * self.max_slope
        };
        over_obstacles.max(self.end_height).max(0.0)
    }

    /// Whether the segment from the source to the target at height `z` is
    /// unobstructed.
    pub fn clears(&self, z: f64) -> bool {
        self.min_visible() <= z
    }

    /// Whether the roof of the target cell is visible.
    pub fn sees_top(&self) -> bool {
        if self.source_buried || self.end_height <= 0.0 {
            return false;
        }
        self.max_slope == f64::NEG_INFINITY
            || self.source_z + self.distance * self.max_slope <= self.end_height
    }
}

/// Traverses the building grid from `source` to the horizontal point
/// `(x, y)` and summarises the blocking geometry.
pub fn ray_profile(scene: &Scene, source: Vec3, x: f64, y: f64) -> RayProfile {
    let b = scene.buildings();
    let grid = b.grid();
    let source_buried = grid
        .cell_of(source.x, source.y)
        .map(|(r, c)| source.z < b.get(r, c))
        .unwrap_or(false);
    let end_height = grid.cell_of(x, y).map(|(r, c)| b.get(r, c)).unwrap_or(0.0);
    let distance = (x - source.x).hypot(y - source.y);
    let mut max_slope = f64::NEG_INFINITY;
    if distance > 0.0 {
        march_cells(
            grid.width(),
            grid.height(),
            grid.resolution(),
            (source.x, source.y),
            (x, y),
            |span| {
                let h = b.get(span.row, span.col);
                for t in [span.t_in, span.t_out] {
                    if t > 0.0 && t < 1.0 {
                        let s = (h - source.z) / (t * distance);
                        if s > max_slope {
                            max_slope = s;
                        }
                    }
                }
            },
        );
    }
    RayProfile {
        source_z: source.z,
        distance,
        max_slope,
        end_height,
        source_buried,
    }
}

fn check_tx(scene: &Scene, tx: &TxConfig) -> Result<(), VisibilityError> {
    if scene.contains_xy(tx.position.x, tx.position.y) {
        Ok(())
    } else {
        Err(VisibilityError::TxOutOfBounds {
            x: tx.position.x,
            y: tx.position.y,
        })
    }
}

/// Whether the pixel center lies inside the horizontal FNBW sector.
pub fn in_cone(tx: &TxConfig, x: f64, y: f64) -> bool {
    let half = tx.pattern.fnbw_deg / 2.0;
    if half >= 180.0 {
        return true;
    }
    let (dx, dy) = (x - tx.position.x, y - tx.position.y);
    if dx == 0.0 && dy == 0.0 {
        return true;
    }
    let rel = wrap_signed_deg(dy.atan2(dx).to_degrees() - tx.orientation.azimuth_deg);
    rel.abs() < half
}

pub fn cone_mask(scene: &Scene, tx: &TxConfig) -> Grid<bool> {
    let g = scene.buildings().grid();
    Grid::from_fn(g, |r, c| {
        let (x, y) = g.cell_center(r, c);
        in_cone(tx, x, y)
    })
}

fn profiles(scene: &Scene, tx: &TxConfig, exec: Execution) -> Grid<RayProfileCell> {
    let g = scene.buildings().grid();
    fill_grid(g.width(), g.height(), g.resolution(), exec, |r, c| {
        let (x, y) = g.cell_center(r, c);
        RayProfileCell {
            profile: Some(ray_profile(scene, tx.position, x, y)),
            in_cone: in_cone(tx, x, y),
        }
    })
}

#[derive(Clone, Copy, Default)]
struct RayProfileCell {
    profile: Option<RayProfile>,
    in_cone: bool,
}

/// All LoS maps for one transmitter in a single pass.
pub fn los_maps(
    scene: &Scene,
    tx: &TxConfig,
    params: &LosParams,
    exec: Execution,
) -> Result<LosMaps, VisibilityError> {
    check_tx(scene, tx)?;
    let cells = profiles(scene, tx, exec);
    let ground = cells.map(|c| c.in_cone && c.profile.unwrap().clears(params.rx_height));
    let top = cells.map(|c| c.in_cone && c.profile.unwrap().sees_top());
    let min_visible = cells.map(|c| {
        if c.in_cone {
            c.profile.unwrap().min_visible().min(params.ceiling)
        } else {
            params.ceiling
        }
    });
    let cone_mask = cells.map(|c| c.in_cone);
    Ok(LosMaps {
        ground,
        top,
        min_visible,
        cone_mask,
    })
}

/// Binary ground LoS toward receivers at `rx_height` above each pixel.
pub fn los_ground(
    scene: &Scene,
    tx: &TxConfig,
    rx_height: f64,
) -> Result<Grid<bool>, VisibilityError> {
    let params = LosParams {
        rx_height,
        ..LosParams::default()
    };
    Ok(los_maps(scene, tx, &params, Execution::default())?.ground)
}

/// Binary LoS toward each building top; 0 where there is no building.
pub fn los_top(scene: &Scene, tx: &TxConfig) -> Result<Grid<bool>, VisibilityError> {
    Ok(los_maps(scene, tx, &LosParams::default(), Execution::default())?.top)
}

/// Smallest visible height per pixel, truncated to `ceiling`; `ceiling`
/// outside the FNBW sector.
pub fn min_visible_height(
    scene: &Scene,
    tx: &TxConfig,
    ceiling: f64,
) -> Result<Grid<f64>, VisibilityError> {
    let params = LosParams {
        ceiling,
        ..LosParams::default()
    };
    Ok(los_maps(scene, tx, &params, Execution::default())?.min_visible)
}

/// Whether the 3D segment `a → b` clears every building column. Points
/// exactly on a column top are unobstructed.
pub fn segment_clear(scene: &Scene, a: Vec3, b: Vec3) -> bool {
    let heights = scene.buildings();
    let grid = heights.grid();
    let blocked_at = |r: usize, c: usize, z: f64| z < heights.get(r, c);
    if let Some((r, c)) = grid.cell_of(a.x, a.y) {
        if blocked_at(r, c, a.z) {
            return false;
        }
    }
    if let Some((r, c)) = grid.cell_of(b.x, b.y) {
        if blocked_at(r, c, b.z) {
            return false;
        }
    }
    if a.x == b.x && a.y == b.y {
        return true;
    }
    let mut clear = true;
    march_cells(
        grid.width(),
        grid.height(),
        grid.resolution(),
        (a.x, a.y),
        (b.x, b.y),
        |span| {
            if !clear {
                return;
            }
            for t in [span.t_in, span.t_out] {
                if t > 0.0 && t < 1.0 && blocked_at(span.row, span.col, a.z + t * (b.z - a.z)) {
                    clear = false;
                }
            }
        },
    );
    clear
}
