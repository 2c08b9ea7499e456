//! Flips and quarter-turn rotations of rasters, points and orientations.
//!
//! Rotations are counter-clockwise in the `(x, y)` frame used for
//! azimuths, so `Rot90` adds 90° to every azimuth.

use serde::{Deserialize, Serialize};

use crate::antenna::Orientation;
use crate::geom::Vec3;
use crate::grid::Grid;
use crate::placement::TxConfig;
use crate::scene::{AerialImage, HeightGrid, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialOp {
    /// Mirror in x (`x → extent_x - x`).
    FlipH,
    /// Mirror in y.
    FlipV,
    Rot90,
    Rot180,
    Rot270,
}

impl SpatialOp {
    pub const ALL: [SpatialOp; 5] = [
        SpatialOp::FlipH,
        SpatialOp::FlipV,
        SpatialOp::Rot90,
        SpatialOp::Rot180,
        SpatialOp::Rot270,
    ];

    pub fn inverse(self) -> SpatialOp {
        match self {
            SpatialOp::Rot90 => SpatialOp::Rot270,
            SpatialOp::Rot270 => SpatialOp::Rot90,
            other => other,
        }
    }

    fn swaps_axes(self) -> bool {
        matches!(self, SpatialOp::Rot90 | SpatialOp::Rot270)
    }

    /// Output `(width, height)` for an input of `(width, height)`.
    pub fn output_dims(self, width: usize, height: usize) -> (usize, usize) {
        if self.swaps_axes() {
            (height, width)
        } else {
            (width, height)
        }
    }

    /// Maps a point in a frame of extents `(ex, ey)`.
    pub fn point(self, x: f64, y: f64, ex: f64, ey: f64) -> (f64, f64) {
        match self {
            SpatialOp::FlipH => (ex - x, y),
            SpatialOp::FlipV => (x, ey - y),
            SpatialOp::Rot90 => (ey - y, x),
            SpatialOp::Rot180 => (ex - x, ey - y),
            SpatialOp::Rot270 => (y, ex - x),
        }
    }

    /// Maps a cell index `(row, col)` of a `width × height` grid.
    pub fn cell(self, row: usize, col: usize, width: usize, height: usize) -> (usize, usize) {
        match self {
            SpatialOp::FlipH => (row, width - 1 - col),
            SpatialOp::FlipV => (height - 1 - row, col),
            SpatialOp::Rot90 => (col, height - 1 - row),
            SpatialOp::Rot180 => (height - 1 - row, width - 1 - col),
            SpatialOp::Rot270 => (width - 1 - col, row),
        }
    }

    pub fn azimuth(self, deg: f64) -> f64 {
        match self {
            SpatialOp::FlipH => 180.0 - deg,
            SpatialOp::FlipV => -deg,
            SpatialOp::Rot90 => deg + 90.0,
            SpatialOp::Rot180 => deg + 180.0,
            SpatialOp::Rot270 => deg + 270.0,
        }
    }

    /// Whether the op reverses orientation (mirrors).
    pub fn is_reflection(self) -> bool {
        matches!(self, SpatialOp::FlipH | SpatialOp::FlipV)
    }

    pub fn grid<T: Copy>(self, g: &Grid<T>) -> Grid<T> {
        let (w, h) = (g.width(), g.height());
        let (nw, nh) = self.output_dims(w, h);
        let mut data = vec![g.get(0, 0); nw * nh];
        for r in 0..h {
            for c in 0..w {
                let (nr, nc) = self.cell(r, c, w, h);
                data[nr * nw + nc] = g.get(r, c);
            }
        }
        Grid::from_vec(nw, nh, g.resolution(), data)
    }

    pub fn vec3<T>(self, p: Vec3, like: &Grid<T>) -> Vec3 {
        let (x, y) = self.point(p.x, p.y, like.extent_x(), like.extent_y());
        Vec3::new(x, y, p.z)
    }

    pub fn orientation(self, o: &Orientation) -> Orientation {
        Orientation::new(self.azimuth(o.azimuth_deg), o.tilt_deg)
    }

    /// Transforms the Tx pose within a grid shaped like `like` (the
    /// untransformed grid).
    pub fn tx<T>(self, tx: &TxConfig, like: &Grid<T>) -> TxConfig {
        TxConfig {
            position: self.vec3(tx.position, like),
            orientation: self.orientation(&tx.orientation),
            ..tx.clone()
        }
    }

    pub fn scene(self, s: &Scene) -> Scene {
        let heights = |h: &HeightGrid| HeightGrid::new(self.grid(h.grid())).expect("valid heights");
        let aerial = s.aerial().map(|a| {
            let g = Grid::from_vec(a.width, a.height, 1.0, a.pixels.clone());
            let t = self.grid(&g);
            AerialImage {
                width: t.width(),
                height: t.height(),
                pixels: t.into_values(),
            }
        });
        Scene::new(
            s.id.clone(),
            heights(s.buildings()),
            heights(s.vegetation()),
            aerial,
        )
        .expect("transformed layers stay consistent")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Grid<f64> {
        Grid::from_vec(3, 2, 1.0, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    }

    #[test]
    fn rotations_compose_to_identity() {
        let g = sample();
        assert_eq!(SpatialOp::Rot270.grid(&SpatialOp::Rot90.grid(&g)), g);
        assert_eq!(SpatialOp::Rot90.grid(&SpatialOp::Rot270.grid(&g)), g);
        let r180 = SpatialOp::Rot180.grid(&g);
        assert_eq!(SpatialOp::Rot90.grid(&SpatialOp::Rot90.grid(&g)), r180);
        for op in SpatialOp::ALL {
            assert_eq!(op.inverse().grid(&op.grid(&g)), g, "{op:?}");
        }
    }

    #[test]
    fn cell_map_agrees_with_point_map() {
        let g = sample();
        for op in SpatialOp::ALL {
            let t = op.grid(&g);
            for r in 0..g.height() {
                for c in 0..g.width() {
                    let (x, y) = g.cell_center(r, c);
                    let (nx, ny) = op.point(x, y, g.extent_x(), g.extent_y());
                    let (nr, nc) = t.cell_of(nx, ny).unwrap();
                    assert_eq!((nr, nc), op.cell(r, c, g.width(), g.height()));
                    assert_eq!(t.get(nr, nc), g.get(r, c));
                }
            }
        }
    }

    #[test]
    fn azimuth_follows_direction_vectors() {
        for op in SpatialOp::ALL {
            let a: f64 = 33.0;
            let (dx, dy) = (a.to_radians().cos(), a.to_radians().sin());
            let (x0, y0) = op.point(0.0, 0.0, 10.0, 10.0);
            let (x1, y1) = op.point(dx, dy, 10.0, 10.0);
            let got = (y1 - y0).atan2(x1 - x0).to_degrees();
            let want = crate::antenna::wrap_signed_deg(op.azimuth(a));
            assert!(
                (crate::antenna::wrap_signed_deg(got) - want).abs() < 1e-9,
                "{op:?}"
            );
        }
    }
}
