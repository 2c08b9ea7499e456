//! 3-vectors and grid traversal along horizontal segments.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn horizontal_norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Angle between two nonzero vectors in radians, accurate near 0 and π.
    pub fn angle_to(self, o: Vec3) -> f64 {
        self.cross(o).norm().atan2(self.dot(o))
    }

    /// Rodrigues rotation about `axis` by `angle` radians.
    pub fn rotate_about(self, axis: Vec3, angle: f64) -> Vec3 {
        let k = axis.normalized();
        let (s, c) = angle.sin_cos();
        self * c + k.cross(self) * s + k * (k.dot(self) * (1.0 - c))
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A cell touched by a horizontal segment over the parameter interval
/// `[t_in, t_out] ⊆ [0, 1]`. Cells touched only at a corner have
/// `t_in == t_out`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellSpan {
    pub row: usize,
    pub col: usize,
    pub t_in: f64,
    pub t_out: f64,
}

/// Walks every cell of a `width × height` grid (cell size `res`) touched by
/// the closed segment `(x0, y0) → (x1, y1)`, in order from the start.
///
/// Both endpoints must lie inside the grid. When the segment crosses a cell
/// corner exactly, the two side cells sharing that corner are reported with
/// a zero-length span so that closed cell footprints are honoured.
pub fn march_cells(
    width: usize,
    height: usize,
    res: f64,
    (x0, y0): (f64, f64),
    (x1, y1): (f64, f64),
    mut visit: impl FnMut(CellSpan),
) {
    let dx = x1 - x0;
    let dy = y1 - y0;
    let clamp_idx = |v: f64, n: usize| ((v / res).floor().max(0.0) as usize).min(n - 1);
    let mut col = clamp_idx(x0, width);
    let mut row = clamp_idx(y0, height);
    let end_col = clamp_idx(x1, width);
    let end_row = clamp_idx(y1, height);

    let step_c: isize = if dx > 0.0 { 1 } else { -1 };
    let step_r: isize = if dy > 0.0 { 1 } else { -1 };
    let next_boundary = |idx: usize, step: isize| {
        if step > 0 {
            (idx + 1) as f64 * res
        } else {
            idx as f64 * res
        }
    };
    let mut t_max_x = if dx != 0.0 {
        (next_boundary(col, step_c) - x0) / dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy != 0.0 {
        (next_boundary(row, step_r) - y0) / dy
    } else {
        f64::INFINITY
    };

    let mut t_in = 0.0;
    loop {
        let at_end = row == end_row && col == end_col;
        let t_next = t_max_x.min(t_max_y);
        if at_end || t_next >= 1.0 {
            visit(CellSpan {
                row,
                col,
                t_in,
                t_out: 1.0,
            });
            return;
        }
        visit(CellSpan {
            row,
            col,
            t_in,
            t_out: t_next,
        });
        let cross_x = t_max_x == t_next;
        let cross_y = t_max_y == t_next;
        if cross_x && cross_y {
            // exact corner crossing: report both side cells
            let side_a = (row, (col as isize + step_c) as usize);
            let side_b = ((row as isize + step_r) as usize, col);
            for (r, c) in [side_a, side_b] {
                if r < height && c < width {
                    visit(CellSpan {
                        row: r,
                        col: c,
                        t_in: t_next,
                        t_out: t_next,
                    });
                }
            }
        }
        if cross_x {
            col = (col as isize + step_c) as usize;
            t_max_x = (next_boundary(col, step_c) - x0) / dx;
        }
        if cross_y {
            row = (row as isize + step_r) as usize;
            t_max_y = (next_boundary(row, step_r) - y0) / dy;
        }
        if row >= height || col >= width {
            return;
        }
        t_in = t_next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collect(a: (f64, f64), b: (f64, f64)) -> Vec<CellSpan> {
        let mut v = Vec::new();
        march_cells(8, 8, 1.0, a, b, |s| v.push(s));
        v
    }

    #[test]
    fn axis_aligned_march() {
        let cells = collect((0.5, 2.5), (4.5, 2.5));
        let cols: Vec<usize> = cells.iter().map(|c| c.col).collect();
        assert_eq!(cols, vec![0, 1, 2, 3, 4]);
        assert!(cells.iter().all(|c| c.row == 2));
        assert_eq!(cells[0].t_in, 0.0);
        assert_eq!(cells[1].t_in, 0.125);
        assert_eq!(cells.last().unwrap().t_out, 1.0);
    }

    #[test]
    fn diagonal_march_reports_corner_neighbours() {
        let cells = collect((0.5, 0.5), (2.5, 2.5));
        let rc: Vec<(usize, usize)> = cells.iter().map(|c| (c.row, c.col)).collect();
        assert_eq!(
            rc,
            vec![(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2)]
        );
        assert_eq!(cells[1].t_in, cells[1].t_out);
    }

    #[test]
    fn single_cell_segment() {
        let cells = collect((3.2, 3.7), (3.9, 3.1));
        assert_eq!(cells.len(), 1);
        assert_eq!((cells[0].t_in, cells[0].t_out), (0.0, 1.0));
    }

    #[test]
    fn spans_are_contiguous_and_cover_unit_interval() {
        let cells = collect((7.5, 0.5), (0.3, 6.9));
        let mut t = 0.0;
        for c in cells.iter().filter(|c| c.t_out > c.t_in) {
            assert_eq!(c.t_in, t);
            t = c.t_out;
        }
        assert_eq!(t, 1.0);
    }

    #[test]
    fn rodrigues_preserves_norm_and_angles() {
        let a = Vec3::new(1.0, 2.0, -0.5);
        let b = Vec3::new(-0.3, 0.2, 0.9);
        let axis = Vec3::new(0.2, -1.0, 0.4);
        let (ra, rb) = (a.rotate_about(axis, 1.1), b.rotate_about(axis, 1.1));
        assert!((ra.norm() - a.norm()).abs() < 1e-12);
        assert!((ra.angle_to(rb) - a.angle_to(b)).abs() < 1e-12);
    }
}
