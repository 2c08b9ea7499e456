//! Deterministic ray tracer producing path-loss radio maps.
//!
//! Paths considered per receiver: the direct ray, specular reflections off
//! walls and the ground (image method, up to two bounces) and one
//! knife-edge diffraction when the direct ray is blocked. Path powers are
//! combined non-coherently in the linear domain. Vegetation attenuates
//! linearly with in-canopy length; walls are opaque.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::antenna::gain_at;
use crate::exec::{fill_grid, Execution};
use crate::geom::{march_cells, Vec3};
use crate::grid::Grid;
use crate::placement::TxConfig;
use crate::scene::{extract_wall_faces, merge_faces, FaceAxis, Scene, VerticalFace};
use crate::visibility::{ray_profile, segment_clear, RX_HEIGHT};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Offset applied to bounce points along the face normal before checking
/// the adjoining legs for obstruction.
const SURFACE_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum PropagationError {
    #[error("transmitter at ({x}, {y}) lies outside the scene")]
    TxOutOfBounds { x: f64, y: f64 },
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error("cannot combine an empty path set")]
    EmptyPathSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub frequency_hz: f64,
    pub max_reflections: u32,
    pub max_diffractions: u32,
    pub max_transmissions: u32,
    pub noise_floor_db: f64,
    pub max_pl_db: f64,
    /// Vegetation attenuation in dB per meter of canopy traversed.
    pub vegetation_alpha_db_per_m: f64,
    pub reflection_loss_db: f64,
    pub rx_height_m: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            frequency_hz: 3.7e9,
            max_reflections: 2,
            max_diffractions: 1,
            max_transmissions: 0,
            noise_floor_db: -127.0,
            max_pl_db: -50.0,
            vegetation_alpha_db_per_m: 1.0,
            reflection_loss_db: 6.0,
            rx_height_m: RX_HEIGHT,
        }
    }
}

impl SimParams {
    /// Direct rays only.
    pub fn direct_only() -> Self {
        SimParams {
            max_reflections: 0,
            max_diffractions: 0,
            ..SimParams::default()
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        let bad = |m: String| Err(PropagationError::InvalidParams(m));
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return bad(format!("frequency {} Hz", self.frequency_hz));
        }
        if self.max_transmissions != 0 {
            return bad("transmissions through walls are not modelled".into());
        }
        if self.max_reflections > 2 {
            return bad(format!(
                "at most 2 reflections, got {}",
                self.max_reflections
            ));
        }
        if self.max_diffractions > 1 {
            return bad(format!(
                "at most 1 diffraction, got {}",
                self.max_diffractions
            ));
        }
        if !(self.noise_floor_db < self.max_pl_db && self.max_pl_db < 0.0) {
            return bad(format!(
                "need noise_floor < max_pl < 0, got {} / {}",
                self.noise_floor_db, self.max_pl_db
            ));
        }
        if !(self.vegetation_alpha_db_per_m >= 0.0 && self.reflection_loss_db >= 0.0) {
            return bad("loss coefficients must be non-negative".into());
        }
        Ok(())
    }

    /// Grayscale value of a path loss: affine over `[noise_floor, max_pl]`,
    /// clamped to `[0, 1]`.
    pub fn gray_from_db(&self, pl_db: f64) -> f64 {
        gray_from_db(pl_db, self.noise_floor_db, self.max_pl_db)
    }

    pub fn db_from_gray(&self, gray: f64) -> f64 {
        db_from_gray(gray, self.noise_floor_db, self.max_pl_db)
    }
}

pub fn gray_from_db(pl_db: f64, noise_floor_db: f64, max_pl_db: f64) -> f64 {
    ((pl_db - noise_floor_db) / (max_pl_db - noise_floor_db)).clamp(0.0, 1.0)
}

pub fn db_from_gray(gray: f64, noise_floor_db: f64, max_pl_db: f64) -> f64 {
    noise_floor_db + gray * (max_pl_db - noise_floor_db)
}

/// Free-space path loss in dB, `20·log10(4π d / λ)`.
pub fn fspl_db(distance: f64, wavelength: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * distance / wavelength).log10()
}

/// Single knife-edge loss (ITU-R P.526 approximation) for Fresnel
/// parameter `nu`; zero for `nu <= -0.78`.
pub fn knife_edge_loss_db(nu: f64) -> f64 {
    if nu <= -0.78 {
        return 0.0;
    }
    let a = nu - 0.1;
    6.9 + 20.0 * ((a * a + 1.0).sqrt() + a).log10()
}

/// Fresnel-Kirchhoff parameter of an edge `h` above the line of sight at
/// distances `d1`, `d2` from the terminals.
pub fn fresnel_parameter(h: f64, d1: f64, d2: f64, wavelength: f64) -> f64 {
    h * (2.0 * (d1 + d2) / (wavelength * d1 * d2)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Direct,
    Reflect1,
    Reflect2,
    Diffract1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayPath {
    pub kind: PathKind,
    /// Tx, interaction points, Rx.
    pub vertices: Vec<Vec3>,
    pub path_length: f64,
    pub tx_gain_db: f64,
    pub reflection_loss_db: f64,
    pub diffraction_loss_db: f64,
    pub vegetation_loss_db: f64,
    /// Received power relative to the radiated power, dB.
    pub power_db: f64,
}

impl RayPath {
    fn build(
        kind: PathKind,
        vertices: Vec<Vec3>,
        tx: &TxConfig,
        scene: &Scene,
        params: &SimParams,
        reflection_loss_db: f64,
        diffraction_loss_db: f64,
    ) -> RayPath {
        let path_length: f64 = vertices.windows(2).map(|w| w[0].distance(w[1])).sum();
        let departure = vertices[1] - vertices[0];
        let tx_gain_db =
            gain_at(&tx.pattern, &tx.orientation, departure).unwrap_or(tx.pattern.floor_gain_db);
        let canopy: f64 = vertices
            .windows(2)
            .map(|w| canopy_length(scene, w[0], w[1]))
            .sum();
        let vegetation_loss_db = params.vegetation_alpha_db_per_m * canopy;
        let power_db = tx_gain_db
            - fspl_db(path_length, params.wavelength())
            - reflection_loss_db
            - diffraction_loss_db
            - vegetation_loss_db;
        RayPath {
            kind,
            vertices,
            path_length,
            tx_gain_db,
            reflection_loss_db,
            diffraction_loss_db,
            vegetation_loss_db,
            power_db,
        }
    }
}

/// Length of the segment `a → b` that runs inside vegetation columns
/// `[0, veg_height]`.
pub fn canopy_length(scene: &Scene, a: Vec3, b: Vec3) -> f64 {
    let veg = scene.vegetation();
    let grid = veg.grid();
    let total = a.distance(b);
    let inside = |v: f64, t0: f64, t1: f64| -> f64 {
        // fraction of [t0, t1] where z(t) <= v
        let (z0, z1) = (a.z + t0 * (b.z - a.z), a.z + t1 * (b.z - a.z));
        if v <= 0.0 || t1 <= t0 {
            return 0.0;
        }
        let (lo, hi) = (z0.min(z1), z0.max(z1));
        if hi <= v {
            t1 - t0
        } else if lo >= v {
            0.0
        } else {
            (t1 - t0) * (v - lo) / (hi - lo)
        }
    };
    if a.x == b.x && a.y == b.y {
        return grid
            .cell_of(a.x, a.y)
            .map(|(r, c)| inside(veg.get(r, c), 0.0, 1.0) * total)
            .unwrap_or(0.0);
    }
    let mut fraction = 0.0;
    march_cells(
        grid.width(),
        grid.height(),
        grid.resolution(),
        (a.x, a.y),
        (b.x, b.y),
        |span| fraction += inside(veg.get(span.row, span.col), span.t_in, span.t_out),
    );
    fraction * total
}

fn check_tx(scene: &Scene, tx: &TxConfig) -> Result<(), PropagationError> {
    if scene.contains_xy(tx.position.x, tx.position.y) {
        Ok(())
    } else {
        Err(PropagationError::TxOutOfBounds {
            x: tx.position.x,
            y: tx.position.y,
        })
    }
}

/// Direct path if the Tx–Rx segment clears every building column.
pub fn trace_direct(scene: &Scene, tx: &TxConfig, rx: Vec3, params: &SimParams) -> Option<RayPath> {
    if !ray_profile(scene, tx.position, rx.x, rx.y).clears(rx.z) || tx.position == rx {
        return None;
    }
    Some(RayPath::build(
        PathKind::Direct,
        vec![tx.position, rx],
        tx,
        scene,
        params,
        0.0,
        0.0,
    ))
}

/// A planar specular reflector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reflector {
    Ground,
    Wall(VerticalFace),
}

impl Reflector {
    /// Signed distance to the plane, positive on the reflecting side.
    pub fn side(&self, p: Vec3) -> f64 {
        match self {
            Reflector::Ground => p.z,
            Reflector::Wall(f) => {
                let coord = match f.axis {
                    FaceAxis::X => p.x,
                    FaceAxis::Y => p.y,
                };
                (coord - f.plane) * f.normal_sign
            }
        }
    }

    pub fn normal(&self) -> Vec3 {
        match self {
            Reflector::Ground => Vec3::new(0.0, 0.0, 1.0),
            Reflector::Wall(f) => {
                let n = f.normal();
                Vec3::new(n[0], n[1], n[2])
            }
        }
    }

    pub fn mirror(&self, p: Vec3) -> Vec3 {
        match self {
            Reflector::Ground => Vec3::new(p.x, p.y, -p.z),
            Reflector::Wall(f) => match f.axis {
                FaceAxis::X => Vec3::new(2.0 * f.plane - p.x, p.y, p.z),
                FaceAxis::Y => Vec3::new(p.x, 2.0 * f.plane - p.y, p.z),
            },
        }
    }

    /// Intersection of the segment `a → b` (on opposite sides) with the
    /// plane, snapped exactly onto it.
    fn cross(&self, a: Vec3, b: Vec3) -> Vec3 {
        let (sa, sb) = (self.side(a), self.side(b));
        let mut p = a.lerp(b, sa / (sa - sb));
        match self {
            Reflector::Ground => p.z = 0.0,
            Reflector::Wall(f) => match f.axis {
                FaceAxis::X => p.x = f.plane,
                FaceAxis::Y => p.y = f.plane,
            },
        }
        p
    }

    /// Whether a point on the plane lies on the reflecting surface.
    fn contains(&self, scene: &Scene, p: Vec3) -> bool {
        match self {
            Reflector::Ground => scene
                .buildings()
                .grid()
                .cell_of(p.x, p.y)
                .is_some_and(|(r, c)| scene.building_height(r, c) == 0.0),
            Reflector::Wall(f) => {
                let along = match f.axis {
                    FaceAxis::X => p.y,
                    FaceAxis::Y => p.x,
                };
                along >= f.span.0 && along <= f.span.1 && p.z >= f.z_lo && p.z <= f.z_hi
            }
        }
    }

    fn lift(&self, p: Vec3) -> Vec3 {
        p + self.normal() * SURFACE_EPS
    }
}

/// Ground plane plus merged wall faces of the scene.
pub fn scene_reflectors(scene: &Scene) -> Vec<Reflector> {
    let mut out = vec![Reflector::Ground];
    out.extend(
        merge_faces(&extract_wall_faces(scene))
            .into_iter()
            .map(Reflector::Wall),
    );
    out
}

/// Per-transmitter image tree: reflectors facing the Tx with their first
/// images, and admissible second bounces.
pub struct ImagePlan {
    first: Vec<(Reflector, Vec3)>,
    /// (index into `first`, second reflector, second image)
    second: Vec<(usize, Reflector, Vec3)>,
}

impl ImagePlan {
    pub fn new(tx: Vec3, reflectors: &[Reflector], max_reflections: u32) -> Self {
        let first: Vec<(Reflector, Vec3)> = if max_reflections >= 1 {
            reflectors
                .iter()
                .filter(|f| f.side(tx) > 0.0)
                .map(|f| (*f, f.mirror(tx)))
                .collect()
        } else {
            Vec::new()
        };
        let mut second = Vec::new();
        if max_reflections >= 2 {
            for (i, (f1, img1)) in first.iter().enumerate() {
                for f2 in reflectors {
                    if f2 != f1 && f2.side(*img1) > 0.0 && !coplanar(f1, f2) {
                        second.push((i, *f2, f2.mirror(*img1)));
                    }
                }
            }
        }
        ImagePlan { first, second }
    }
}

fn coplanar(a: &Reflector, b: &Reflector) -> bool {
    match (a, b) {
        (Reflector::Ground, Reflector::Ground) => true,
        (Reflector::Wall(f), Reflector::Wall(g)) => f.axis == g.axis && f.plane == g.plane,
        _ => false,
    }
}

/// All valid one- and two-bounce specular paths from the Tx to `rx`.
pub fn trace_reflections(
    scene: &Scene,
    tx: &TxConfig,
    rx: Vec3,
    reflectors: &[Reflector],
    params: &SimParams,
) -> Vec<RayPath> {
    let plan = ImagePlan::new(tx.position, reflectors, params.max_reflections);
    trace_with_plan(scene, tx, rx, &plan, params)
}

fn trace_with_plan(
    scene: &Scene,
    tx: &TxConfig,
    rx: Vec3,
    plan: &ImagePlan,
    params: &SimParams,
) -> Vec<RayPath> {
    let src = tx.position;
    let mut paths = Vec::new();
    for (f, img) in &plan.first {
        if f.side(rx) <= 0.0 {
            continue;
        }
        let p = f.cross(*img, rx);
        if !f.contains(scene, p) {
            continue;
        }
        let lifted = f.lift(p);
        if segment_clear(scene, src, lifted) && segment_clear(scene, lifted, rx) {
            paths.push(RayPath::build(
                PathKind::Reflect1,
                vec![src, p, rx],
                tx,
                scene,
                params,
                params.reflection_loss_db,
                0.0,
            ));
        }
    }
    for &(i, f2, img2) in &plan.second {
        let (f1, img1) = plan.first[i];
        if f2.side(rx) <= 0.0 {
            continue;
        }
        let p2 = f2.cross(img2, rx);
        if !f2.contains(scene, p2) || f1.side(p2) <= 0.0 {
            continue;
        }
        let p1 = f1.cross(img1, p2);
        if !f1.contains(scene, p1) || f2.side(p1) <= 0.0 {
            continue;
        }
        let (l1, l2) = (f1.lift(p1), f2.lift(p2));
        if segment_clear(scene, src, l1)
            && segment_clear(scene, l1, l2)
            && segment_clear(scene, l2, rx)
        {
            paths.push(RayPath::build(
                PathKind::Reflect2,
                vec![src, p1, p2, rx],
                tx,
                scene,
                params,
                2.0 * params.reflection_loss_db,
                0.0,
            ));
        }
    }
    paths
}

/// Knife-edge path over the obstruction with the largest Fresnel
/// parameter in the vertical Tx–Rx plane. `None` when the direct ray is
/// clear or the receiver sits inside a building.
pub fn trace_diffraction(
    scene: &Scene,
    tx: &TxConfig,
    rx: Vec3,
    params: &SimParams,
) -> Option<RayPath> {
    let src = tx.position;
    let profile = ray_profile(scene, src, rx.x, rx.y);
    if profile.clears(rx.z) || profile.source_buried || profile.end_height > rx.z {
        return None;
    }
    let d = profile.distance;
    if d <= 0.0 {
        return None;
    }
    let heights = scene.buildings();
    let grid = heights.grid();
    let lambda = params.wavelength();
    let mut best: Option<(f64, f64, f64)> = None; // (nu, t, h)
    march_cells(
        grid.width(),
        grid.height(),
        grid.resolution(),
        (src.x, src.y),
        (rx.x, rx.y),
        |span| {
            let h = heights.get(span.row, span.col);
            for t in [span.t_in, span.t_out] {
                if t > 0.0 && t < 1.0 {
                    let line = src.z + t * (rx.z - src.z);
                    let nu = fresnel_parameter(h - line, t * d, (1.0 - t) * d, lambda);
                    if best.is_none_or(|(b, _, _)| nu > b) {
                        best = Some((nu, t, h));
                    }
                }
            }
        },
    );
    let (nu, t, h) = best?;
    let edge = Vec3::new(src.x + t * (rx.x - src.x), src.y + t * (rx.y - src.y), h);
    Some(RayPath::build(
        PathKind::Diffract1,
        vec![src, edge, rx],
        tx,
        scene,
        params,
        0.0,
        knife_edge_loss_db(nu),
    ))
}

/// Non-coherent sum `10·log10(Σ 10^(p/10))` of path powers in dB.
pub fn combine_paths(paths: &[RayPath]) -> Result<f64, PropagationError> {
    combine_powers_db(paths.iter().map(|p| p.power_db))
}

pub fn combine_powers_db(powers: impl IntoIterator<Item = f64>) -> Result<f64, PropagationError> {
    let powers: Vec<f64> = powers.into_iter().collect();
    let max = powers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if powers.is_empty() {
        return Err(PropagationError::EmptyPathSet);
    }
    if max == f64::NEG_INFINITY {
        return Ok(max);
    }
    let sum: f64 = powers.iter().map(|p| 10f64.powf((p - max) / 10.0)).sum();
    Ok(max + 10.0 * sum.log10())
}

/// Every path reaching `rx` under the limits of `params`.
pub fn trace_all(
    scene: &Scene,
    tx: &TxConfig,
    rx: Vec3,
    plan: &ImagePlan,
    params: &SimParams,
) -> Vec<RayPath> {
    let mut paths = Vec::new();
    let direct = trace_direct(scene, tx, rx, params);
    let blocked = direct.is_none();
    paths.extend(direct);
    paths.extend(trace_with_plan(scene, tx, rx, plan, params));
    if blocked && params.max_diffractions >= 1 {
        paths.extend(trace_diffraction(scene, tx, rx, params));
    }
    paths
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadioMap {
    /// Combined path loss in dB; `-inf` where no path arrives.
    pub pl_db: Grid<f64>,
    /// Truncated and scaled path loss in `[0, 1]`.
    pub gray: Grid<f64>,
    pub tx: TxConfig,
    pub params: SimParams,
}

pub fn simulate_radio_map(
    scene: &Scene,
    tx: &TxConfig,
    params: &SimParams,
) -> Result<RadioMap, PropagationError> {
    simulate_radio_map_with(scene, tx, params, Execution::default())
}

pub fn simulate_radio_map_with(
    scene: &Scene,
    tx: &TxConfig,
    params: &SimParams,
    exec: Execution,
) -> Result<RadioMap, PropagationError> {
    params.validate()?;
    check_tx(scene, tx)?;
    let reflectors = scene_reflectors(scene);
    let plan = ImagePlan::new(tx.position, &reflectors, params.max_reflections);
    let grid = scene.buildings().grid();
    let pl_db = fill_grid(
        grid.width(),
        grid.height(),
        grid.resolution(),
        exec,
        |r, c| {
            let (x, y) = grid.cell_center(r, c);
            let rx = Vec3::new(x, y, params.rx_height_m);
            let paths = trace_all(scene, tx, rx, &plan, params);
            combine_paths(&paths).unwrap_or(f64::NEG_INFINITY)
        },
    );
    let gray = pl_db.map(|v| params.gray_from_db(v));
    Ok(RadioMap {
        pl_db,
        gray,
        tx: tx.clone(),
        params: params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antenna::{AntennaPattern, Orientation};
    use crate::grid::Grid;
    use crate::scene::HeightGrid;

    fn omni() -> AntennaPattern {
        AntennaPattern::new(90.0, 360.0, 0.0, -30.0).unwrap()
    }

    fn tx_at(p: Vec3) -> TxConfig {
        TxConfig {
            scene_id: "t".into(),
            position: p,
            orientation: Orientation::new(0.0, 0.0),
            pattern: omni(),
            pattern_id: 0,
        }
    }

    fn scene(w: usize, h: usize, buildings: Vec<f64>, veg: Vec<f64>) -> Scene {
        Scene::new(
            "t",
            HeightGrid::new(Grid::from_vec(w, h, 1.0, buildings)).unwrap(),
            HeightGrid::new(Grid::from_vec(w, h, 1.0, veg)).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn free_space_direct_path() {
        let s = Scene::flat("f", 128, 1.0);
        let tx = tx_at(Vec3::new(10.5, 10.5, 1.5));
        let rx = Vec3::new(110.5, 10.5, 1.5);
        let p = trace_direct(&s, &tx, rx, &SimParams::default()).unwrap();
        // λ = c / f, FSPL closed form at d = 100 m
        let lambda = 299_792_458.0 / 3.7e9;
        let expected = -20.0 * (4.0 * std::f64::consts::PI * 100.0 / lambda).log10();
        assert!((p.power_db - expected).abs() < 1e-9);
        assert!((p.power_db - (-83.8)).abs() < 0.05);
        assert_eq!(p.path_length, 100.0);
    }

    #[test]
    fn blocked_direct_path_is_none() {
        let mut b = vec![0.0; 32 * 4];
        for r in 0..4 {
            b[r * 32 + 16] = 20.0;
        }
        let s = scene(32, 4, b, vec![0.0; 128]);
        let tx = tx_at(Vec3::new(2.5, 1.5, 10.0));
        assert!(trace_direct(&s, &tx, Vec3::new(30.5, 1.5, 1.5), &SimParams::default()).is_none());
    }

    #[test]
    fn canopy_attenuation_is_linear() {
        let mut v = vec![0.0; 32 * 3];
        for c in 10..20 {
            v[32 + c] = 5.0;
        }
        let s = scene(32, 3, vec![0.0; 96], v);
        let tx = tx_at(Vec3::new(2.5, 1.5, 1.5));
        let p = trace_direct(&s, &tx, Vec3::new(28.5, 1.5, 1.5), &SimParams::default()).unwrap();
        assert!((p.vegetation_loss_db - 10.0).abs() < 1e-9);
    }

    #[test]
    fn ground_bounce_over_open_ground() {
        let s = Scene::flat("f", 64, 1.0);
        let tx = tx_at(Vec3::new(5.5, 5.5, 10.0));
        let rx = Vec3::new(55.5, 5.5, 1.5);
        let paths = trace_reflections(&s, &tx, rx, &scene_reflectors(&s), &SimParams::default());
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].kind, PathKind::Reflect1);
        let expected = (50.0f64 * 50.0 + 11.5 * 11.5).sqrt();
        assert!((paths[0].path_length - expected).abs() < 1e-9);
        assert_eq!(paths[0].reflection_loss_db, 6.0);
    }

    #[test]
    fn no_reflectors_and_blocked_los_give_nothing() {
        let mut b = vec![0.0; 32 * 4];
        for r in 0..4 {
            b[r * 32 + 16] = 20.0;
        }
        let s = scene(32, 4, b, vec![0.0; 128]);
        let tx = tx_at(Vec3::new(2.5, 1.5, 10.0));
        assert!(trace_reflections(
            &s,
            &tx,
            Vec3::new(30.5, 1.5, 1.5),
            &[],
            &SimParams::default()
        )
        .is_empty());
    }

    #[test]
    fn knife_edge_closed_form_values() {
        let grazing = 6.9 + 20.0 * ((0.01f64 + 1.0).sqrt() - 0.1).log10();
        assert_eq!(knife_edge_loss_db(0.0), grazing);
        assert!((knife_edge_loss_db(0.0) - 6.02).abs() < 0.02);
        assert_eq!(knife_edge_loss_db(-0.78), 0.0);
        assert_eq!(knife_edge_loss_db(-2.0), 0.0);
        let deep = knife_edge_loss_db(5.0);
        assert!((deep - 6.9 - 20.0 * ((4.9f64 * 4.9 + 1.0).sqrt() + 4.9).log10()).abs() < 1e-12);
        assert!((deep - 26.81).abs() < 0.01, "{deep}");
    }

    #[test]
    fn diffraction_only_when_blocked() {
        let mut b = vec![0.0; 64 * 3];
        for r in 0..3 {
            b[r * 64 + 30] = 12.0;
        }
        let s = scene(64, 3, b, vec![0.0; 192]);
        let tx = tx_at(Vec3::new(0.5, 1.5, 10.0));
        let params = SimParams::default();
        let p = trace_diffraction(&s, &tx, Vec3::new(60.5, 1.5, 1.5), &params).unwrap();
        assert_eq!(p.kind, PathKind::Diffract1);
        assert!(p.diffraction_loss_db > 6.0);
        assert!(p.path_length > 60.0);
        assert_eq!(p.vertices[1].z, 12.0);
        assert!(trace_diffraction(&s, &tx, Vec3::new(20.5, 1.5, 1.5), &params).is_none());
    }

    #[test]
    fn combining_examples() {
        let two = combine_powers_db([-90.0, -90.0]).unwrap();
        assert!((two - (-86.9897)).abs() < 1e-4);
        assert_eq!(combine_powers_db([-75.0]).unwrap(), -75.0);
        // watt-domain oracle
        let oracle = 10.0 * (1e-8f64 + 1e-10).log10();
        let got = combine_powers_db([-80.0, -100.0]).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - (-79.9568)).abs() < 1e-4);
        assert_eq!(combine_paths(&[]), Err(PropagationError::EmptyPathSet));
    }

    #[test]
    fn gray_mapping() {
        let p = SimParams::default();
        assert_eq!(p.gray_from_db(-127.0), 0.0);
        assert_eq!(p.gray_from_db(-88.5), 0.5);
        assert_eq!(p.gray_from_db(-50.0), 1.0);
        assert_eq!(p.gray_from_db(f64::NEG_INFINITY), 0.0);
        assert_eq!(p.gray_from_db(-20.0), 1.0);
    }

    #[test]
    fn params_validation() {
        let mut p = SimParams::default();
        p.validate().unwrap();
        p.max_transmissions = 1;
        assert!(p.validate().is_err());
        let p = SimParams {
            noise_floor_db: -40.0,
            ..SimParams::default()
        };
        assert!(p.validate().is_err());
        let parsed: SimParams = serde_json::from_str(r#"{"reflection_loss_db": 3.0}"#).unwrap();
        assert_eq!(parsed.frequency_hz, 3.7e9);
        assert_eq!(parsed.reflection_loss_db, 3.0);
    }

    #[test]
    fn buried_receiver_gets_nothing() {
        let mut b = vec![0.0; 16 * 16];
        b[8 * 16 + 8] = 10.0;
        let s = scene(16, 16, b, vec![0.0; 256]);
        let tx = tx_at(Vec3::new(2.5, 2.5, 20.0));
        let map = simulate_radio_map(&s, &tx, &SimParams::default()).unwrap();
        assert_eq!(map.pl_db.get(8, 8), f64::NEG_INFINITY);
        assert_eq!(map.gray.get(8, 8), 0.0);
    }

    #[test]
    fn removing_vegetation_never_lowers_power() {
        let mut b = vec![0.0; 24 * 24];
        let mut v = vec![0.0; 24 * 24];
        for r in 5..9 {
            for c in 12..15 {
                b[r * 24 + c] = 9.0;
            }
        }
        for r in 14..20 {
            for c in 4..12 {
                v[r * 24 + c] = 6.0;
            }
        }
        let with = scene(24, 24, b.clone(), v);
        let without = scene(24, 24, b, vec![0.0; 576]);
        let tx = tx_at(Vec3::new(3.5, 3.5, 12.0));
        let p = SimParams::default();
        let a = simulate_radio_map_with(&with, &tx, &p, Execution::Sequential).unwrap();
        let b = simulate_radio_map_with(&without, &tx, &p, Execution::Sequential).unwrap();
        for (x, y) in a.pl_db.values().iter().zip(b.pl_db.values()) {
            assert!(y >= x);
        }
        assert!(a
            .pl_db
            .values()
            .iter()
            .zip(b.pl_db.values())
            .any(|(x, y)| y > x));
    }

    #[test]
    fn parallel_and_sequential_maps_are_bit_identical() {
        let mut b = vec![0.0; 20 * 20];
        for r in 6..12 {
            for c in 8..11 {
                b[r * 20 + c] = 14.0;
            }
        }
        let s = scene(20, 20, b, vec![0.0; 400]);
        let tx = tx_at(Vec3::new(2.5, 9.5, 16.0));
        let p = SimParams::default();
        let a = simulate_radio_map_with(&s, &tx, &p, Execution::Sequential).unwrap();
        let c = simulate_radio_map_with(&s, &tx, &p, Execution::Parallel).unwrap();
        let bits = |g: &Grid<f64>| g.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.pl_db), bits(&c.pl_db));
    }
}
