//! Transmitter placement on roof edges and orientation search.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::antenna::{wrap_signed_deg, AntennaPattern, Orientation};
use crate::exec::Execution;
use crate::geom::Vec3;
use crate::scene::Scene;
use crate::visibility::{in_cone, ray_profile, VisibilityError, RX_HEIGHT};

/// Tx mast height above the roof.
pub const MAST_HEIGHT: f64 = 2.0;
/// Allowed Tx height range above ground.
pub const MIN_TX_HEIGHT: f64 = 6.0;
pub const MAX_TX_HEIGHT: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum PlacementError {
    #[error("min_coverage must lie in (0, 1], got {0}")]
    InvalidCoverage(f64),
    #[error("azimuth step {0} must be positive and divide 360")]
    InvalidAzimuthStep(f64),
    #[error("position ({x}, {y}) is not on a roof edge")]
    NotRoofEdge { x: f64, y: f64 },
    #[error("tx invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Visibility(#[from] VisibilityError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxConfig {
    pub scene_id: String,
    pub position: Vec3,
    pub orientation: Orientation,
    pub pattern: AntennaPattern,
    /// Index of the pattern in the generating pattern list.
    pub pattern_id: usize,
}

impl TxConfig {
    /// Checks mast height, height range and roof-edge location.
    pub fn validate(&self, scene: &Scene) -> Result<(), PlacementError> {
        let (x, y, z) = (self.position.x, self.position.y, self.position.z);
        let (row, col) = scene
            .buildings()
            .grid()
            .cell_of(x, y)
            .ok_or_else(|| PlacementError::Invariant(format!("({x}, {y}) outside scene")))?;
        if !is_roof_edge(scene, row, col) {
            return Err(PlacementError::NotRoofEdge { x, y });
        }
        let roof = scene.building_height(row, col);
        if z != roof + MAST_HEIGHT {
            return Err(PlacementError::Invariant(format!(
                "z = {z} but roof + mast = {}",
                roof + MAST_HEIGHT
            )));
        }
        if !(MIN_TX_HEIGHT..=MAX_TX_HEIGHT).contains(&z) {
            return Err(PlacementError::Invariant(format!(
                "z = {z} outside [{MIN_TX_HEIGHT}, {MAX_TX_HEIGHT}]"
            )));
        }
        Ok(())
    }
}

const NEIGHBOURS: [(isize, isize); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];

fn is_building(scene: &Scene, row: isize, col: isize) -> bool {
    scene
        .buildings()
        .grid()
        .try_get(row, col)
        .is_some_and(|h| h > 0.0)
}

/// A building cell with at least one non-building 4-neighbour; cells
/// outside the grid count as non-building.
pub fn is_roof_edge(scene: &Scene, row: usize, col: usize) -> bool {
    let (r, c) = (row as isize, col as isize);
    is_building(scene, r, c)
        && NEIGHBOURS
            .iter()
            .any(|&(dr, dc)| !is_building(scene, r + dr, c + dc))
}

/// Cell-center Tx positions on roof edges whose mast top lies within the
/// allowed height range, in row-major order.
pub fn candidate_positions(scene: &Scene) -> Vec<Vec3> {
    let mut out = Vec::new();
    for row in 0..scene.height() {
        for col in 0..scene.width() {
            if !is_roof_edge(scene, row, col) {
                continue;
            }
            let z = scene.building_height(row, col) + MAST_HEIGHT;
            if (MIN_TX_HEIGHT..=MAX_TX_HEIGHT).contains(&z) {
                let (x, y) = scene.buildings().grid().cell_center(row, col);
                out.push(Vec3::new(x, y, z));
            }
        }
    }
    out
}

/// Outward directions (azimuth, degrees) of the exposed sides of the cell.
fn exposed_side_azimuths(scene: &Scene, row: usize, col: usize) -> Vec<f64> {
    let (r, c) = (row as isize, col as isize);
    NEIGHBOURS
        .iter()
        .filter(|&&(dr, dc)| !is_building(scene, r + dr, c + dc))
        .map(|&(dr, dc)| (dr as f64).atan2(dc as f64).to_degrees())
        .collect()
}

/// Whether `azimuth` points away from the host building: within ±90° of
/// the mean outward normal of the exposed sides, or of any single exposed
/// side when the normals cancel.
pub fn points_outward(scene: &Scene, row: usize, col: usize, azimuth: f64) -> bool {
    let sides = exposed_side_azimuths(scene, row, col);
    let (sx, sy) = sides.iter().fold((0.0, 0.0), |(sx, sy), a| {
        let a = a.to_radians();
        (sx + a.cos(), sy + a.sin())
    });
    let within = |normal: f64| wrap_signed_deg(azimuth - normal).abs() < 90.0;
    if sx.hypot(sy) > 1e-9 {
        within(sy.atan2(sx).to_degrees())
    } else {
        sides.iter().any(|&n| within(n))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub azimuth_step: f64,
    pub tilts: Vec<f64>,
    pub min_coverage: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            azimuth_step: 15.0,
            tilts: vec![0.0, -5.0, -10.0, -15.0, -20.0],
            min_coverage: 0.05,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<(), PlacementError> {
        if !(self.min_coverage > 0.0 && self.min_coverage <= 1.0) {
            return Err(PlacementError::InvalidCoverage(self.min_coverage));
        }
        let steps = 360.0 / self.azimuth_step;
        if !(self.azimuth_step > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(PlacementError::InvalidAzimuthStep(self.azimuth_step));
        }
        Ok(())
    }

    fn azimuths(&self) -> impl Iterator<Item = f64> + '_ {
        let n = (360.0 / self.azimuth_step).round() as usize;
        (0..n).map(move |i| i as f64 * self.azimuth_step)
    }
}

/// Ground pixels (no building) seen from a fixed Tx position, with their
/// ground-LoS flag. Visibility does not depend on orientation, so one
/// survey serves every azimuth probed at that position.
struct GroundSurvey {
    pixels: Vec<(f64, f64, bool)>,
}

impl GroundSurvey {
    fn new(scene: &Scene, position: Vec3) -> Self {
        let g = scene.buildings().grid();
        let mut pixels = Vec::new();
        for row in 0..scene.height() {
            for col in 0..scene.width() {
                if scene.building_height(row, col) == 0.0 {
                    let (x, y) = g.cell_center(row, col);
                    let visible = ray_profile(scene, position, x, y).clears(RX_HEIGHT);
                    pixels.push((x, y, visible));
                }
            }
        }
        GroundSurvey { pixels }
    }

    fn coverage(&self, tx: &TxConfig) -> f64 {
        let (mut in_sector, mut visible) = (0usize, 0usize);
        for &(x, y, v) in &self.pixels {
            if in_cone(tx, x, y) {
                in_sector += 1;
                visible += v as usize;
            }
        }
        if in_sector == 0 {
            0.0
        } else {
            visible as f64 / in_sector as f64
        }
    }
}

/// Fraction of non-building pixels inside the horizontal FNBW sector that
/// have ground LoS. Returns 0 when the sector holds no ground pixels.
pub fn ground_coverage(scene: &Scene, tx: &TxConfig) -> Result<f64, PlacementError> {
    if !scene.contains_xy(tx.position.x, tx.position.y) {
        return Err(VisibilityError::TxOutOfBounds {
            x: tx.position.x,
            y: tx.position.y,
        }
        .into());
    }
    Ok(GroundSurvey::new(scene, tx.position).coverage(tx))
}

/// Outward-facing orientations whose FNBW sector has enough ground LoS.
/// An empty result means no valid orientation exists at this position.
pub fn search_orientations(
    scene: &Scene,
    position: Vec3,
    pattern: &AntennaPattern,
    params: &SearchParams,
) -> Result<Vec<Orientation>, PlacementError> {
    params.validate()?;
    let (row, col) = scene
        .buildings()
        .grid()
        .cell_of(position.x, position.y)
        .ok_or(VisibilityError::TxOutOfBounds {
            x: position.x,
            y: position.y,
        })?;
    if !is_roof_edge(scene, row, col) {
        return Err(PlacementError::NotRoofEdge {
            x: position.x,
            y: position.y,
        });
    }
    let survey = GroundSurvey::new(scene, position);
    let mut accepted = Vec::new();
    for azimuth in params.azimuths() {
        if !points_outward(scene, row, col, azimuth) {
            continue;
        }
        // the sector is horizontal, so coverage does not depend on tilt
        let probe = TxConfig {
            scene_id: scene.id.clone(),
            position,
            orientation: Orientation::new(azimuth, 0.0),
            pattern: *pattern,
            pattern_id: 0,
        };
        if survey.coverage(&probe) >= params.min_coverage {
            accepted.extend(params.tilts.iter().map(|&t| Orientation::new(azimuth, t)));
        }
    }
    Ok(accepted)
}

/// Every accepted (position, orientation) for one pattern, in candidate
/// order, as Tx configurations.
pub fn place_transmitters(
    scene: &Scene,
    pattern: &AntennaPattern,
    pattern_id: usize,
    params: &SearchParams,
    exec: Execution,
) -> Result<Vec<TxConfig>, PlacementError> {
    params.validate()?;
    let candidates = candidate_positions(scene);
    let per_position = crate::exec::map_ordered(&candidates, exec, |&pos| {
        search_orientations(scene, pos, pattern, params).map(|os| {
            os.into_iter()
                .map(|orientation| TxConfig {
                    scene_id: scene.id.clone(),
                    position: pos,
                    orientation,
                    pattern: *pattern,
                    pattern_id,
                })
                .collect::<Vec<_>>()
        })
    });
    let mut out = Vec::new();
    for r in per_position {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antenna::builtin_patterns;
    use crate::grid::Grid;
    use crate::scene::HeightGrid;

    fn scene_with(w: usize, heights: Vec<f64>) -> Scene {
        let h = heights.len() / w;
        Scene::new(
            "p",
            HeightGrid::new(Grid::from_vec(w, h, 1.0, heights)).unwrap(),
            HeightGrid::flat(w, h, 1.0),
            None,
        )
        .unwrap()
    }

    fn block(w: usize, h: usize, rects: &[(usize, usize, usize, usize, f64)]) -> Scene {
        let mut v = vec![0.0; w * h];
        for &(r0, c0, r1, c1, height) in rects {
            for r in r0..r1 {
                for c in c0..c1 {
                    v[r * w + c] = height;
                }
            }
        }
        scene_with(w, v)
    }

    #[test]
    fn candidates_of_simple_scenes() {
        assert!(candidate_positions(&Scene::flat("e", 8, 1.0)).is_empty());
        let s = block(9, 9, &[(3, 3, 6, 6, 10.0)]);
        let c = candidate_positions(&s);
        assert_eq!(c.len(), 8);
        assert!(c.iter().all(|p| p.z == 12.0));
        assert!(!c.iter().any(|p| p.x == 4.5 && p.y == 4.5));
        let tall = block(9, 9, &[(3, 3, 6, 6, 40.0)]);
        assert!(candidate_positions(&tall).is_empty());
        let low = block(9, 9, &[(3, 3, 6, 6, 3.0)]);
        assert!(candidate_positions(&low).is_empty());
    }

    #[test]
    fn isolated_building_accepts_outward_orientations() {
        let s = block(32, 32, &[(14, 14, 18, 18, 10.0)]);
        let pattern = builtin_patterns()[4];
        // west edge cell, outward normal points to -x (azimuth 180)
        let pos = Vec3::new(14.5, 15.5, 12.0);
        let params = SearchParams {
            tilts: vec![-10.0],
            ..SearchParams::default()
        };
        let found = search_orientations(&s, pos, &pattern, &params).unwrap();
        let azimuths: Vec<f64> = found.iter().map(|o| o.azimuth_deg).collect();
        assert!(azimuths.contains(&180.0));
        assert!(found.iter().all(|o| o.tilt_deg == -10.0));
        assert!(azimuths.iter().all(|&a| (a - 180.0).abs() < 90.0));
    }

    #[test]
    fn facing_a_taller_neighbour_is_rejected() {
        // Tx building cols 20..24, tall wall 2 m west of it at cols 16..18.
        let s = block(40, 40, &[(10, 20, 30, 24, 10.0), (0, 16, 40, 18, 29.0)]);
        let pattern = builtin_patterns()[0];
        let pos = Vec3::new(20.5, 20.5, 12.0);
        let params = SearchParams {
            azimuth_step: 180.0,
            tilts: vec![0.0],
            min_coverage: 0.05,
        };
        let found = search_orientations(&s, pos, &pattern, &params).unwrap();
        assert!(found.is_empty(), "{found:?}");

        // brute-force count of what the search saw
        let tx = TxConfig {
            scene_id: "p".into(),
            position: pos,
            orientation: Orientation::new(180.0, 0.0),
            pattern,
            pattern_id: 0,
        };
        assert!(ground_coverage(&s, &tx).unwrap() < 0.05);
    }

    #[test]
    fn invalid_search_parameters() {
        let s = block(9, 9, &[(3, 3, 6, 6, 10.0)]);
        let p = builtin_patterns()[0];
        let pos = Vec3::new(3.5, 3.5, 12.0);
        let bad = SearchParams {
            min_coverage: 0.0,
            ..SearchParams::default()
        };
        assert_eq!(
            search_orientations(&s, pos, &p, &bad),
            Err(PlacementError::InvalidCoverage(0.0))
        );
        let bad = SearchParams {
            azimuth_step: 7.0,
            ..SearchParams::default()
        };
        assert!(matches!(
            search_orientations(&s, pos, &p, &bad),
            Err(PlacementError::InvalidAzimuthStep(_))
        ));
    }

    #[test]
    fn placed_transmitters_satisfy_invariants_and_anti_monotone_coverage() {
        let s = block(
            24,
            24,
            &[
                (2, 2, 8, 9, 9.0),
                (12, 4, 20, 8, 16.0),
                (5, 14, 18, 19, 22.0),
            ],
        );
        let p = builtin_patterns()[7];
        let lo = SearchParams {
            min_coverage: 0.2,
            ..SearchParams::default()
        };
        let hi = SearchParams {
            min_coverage: 0.4,
            ..SearchParams::default()
        };
        let a = place_transmitters(&s, &p, 7, &lo, Execution::Parallel).unwrap();
        let b = place_transmitters(&s, &p, 7, &hi, Execution::Sequential).unwrap();
        assert!(!a.is_empty());
        for tx in &a {
            tx.validate(&s).unwrap();
        }
        for tx in &b {
            assert!(a.contains(tx));
        }
    }

    #[test]
    fn translation_by_whole_cells_shifts_result() {
        let base = block(24, 24, &[(6, 6, 10, 11, 12.0)]);
        let moved = block(24, 24, &[(9, 8, 13, 13, 12.0)]);
        let p = builtin_patterns()[5];
        let params = SearchParams {
            min_coverage: 0.01,
            ..SearchParams::default()
        };
        let a = place_transmitters(&base, &p, 0, &params, Execution::Sequential).unwrap();
        let b = place_transmitters(&moved, &p, 0, &params, Execution::Sequential).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a.len(), b.len());
        for (ta, tb) in a.iter().zip(&b) {
            let d = tb.position - ta.position;
            assert_eq!((d.x, d.y, d.z), (2.0, 3.0, 0.0));
            assert_eq!(ta.orientation, tb.orientation);
        }
    }
}
