//! Idealized single-main-lobe directional antenna.
//!
//! The main lobe is parabolic in angle: `shape(ψ) = -3·(ψ / (hpbw/2))²` dB,
//! clamped at the floor level, and equal to the floor for `ψ ≥ fnbw/2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;

pub const DEFAULT_FLOOR_DB: f64 = -30.0;

/// Relative tolerance of the directivity quadrature, in dB.
pub const QUADRATURE_TOL_DB: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum AntennaError {
    #[error("direction vector has zero length")]
    ZeroDirection,
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
    #[error("directivity quadrature did not converge to {QUADRATURE_TOL_DB} dB")]
    QuadratureNonConvergence,
}

/// Boresight orientation. Azimuth is measured in the x-y plane from +x
/// toward +y; negative tilt points below the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub azimuth_deg: f64,
    pub tilt_deg: f64,
}

impl Orientation {
    pub fn new(azimuth_deg: f64, tilt_deg: f64) -> Self {
        Orientation {
            azimuth_deg: normalize_azimuth(azimuth_deg),
            tilt_deg,
        }
    }

    pub fn boresight(&self) -> Vec3 {
        let (a, t) = (self.azimuth_deg.to_radians(), self.tilt_deg.to_radians());
        Vec3::new(t.cos() * a.cos(), t.cos() * a.sin(), t.sin())
    }

    /// Orientation whose boresight is `v` (any nonzero vector).
    pub fn from_boresight(v: Vec3) -> Self {
        let horiz = v.x.hypot(v.y);
        Orientation::new(v.y.atan2(v.x).to_degrees(), v.z.atan2(horiz).to_degrees())
    }
}

/// Wraps an angle in degrees into `[0, 360)`.
pub fn normalize_azimuth(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_signed_deg(deg: f64) -> f64 {
    let a = normalize_azimuth(deg);
    if a > 180.0 {
        a - 360.0
    } else {
        a
    }
}

/// Configuration form of a pattern. `floor_db` is relative to the peak.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub hpbw_deg: f64,
    pub fnbw_deg: f64,
    #[serde(default = "default_floor")]
    pub floor_db: f64,
    #[serde(default)]
    pub peak_db: PeakGain,
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR_DB
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum PeakGain {
    /// Peak equals the directivity of the lobe shape.
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for PeakGain {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PeakGain::Auto => s.serialize_str("auto"),
            PeakGain::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for PeakGain {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(PeakGain::Fixed(v)),
            Raw::Str(s) if s == "auto" => Ok(PeakGain::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "peak_db must be \"auto\" or a number, got {s:?}"
            ))),
        }
    }
}

impl PatternSpec {
    pub fn new(hpbw_deg: f64, fnbw_deg: f64) -> Self {
        PatternSpec {
            hpbw_deg,
            fnbw_deg,
            floor_db: DEFAULT_FLOOR_DB,
            peak_db: PeakGain::Auto,
        }
    }

    pub fn resolve(&self) -> Result<AntennaPattern, AntennaError> {
        let provisional = AntennaPattern::new(self.hpbw_deg, self.fnbw_deg, 0.0, self.floor_db)?;
        let peak = match self.peak_db {
            PeakGain::Auto => peak_gain_from_directivity(&provisional)?,
            PeakGain::Fixed(v) => v,
        };
        AntennaPattern::new(self.hpbw_deg, self.fnbw_deg, peak, peak + self.floor_db)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AntennaPattern {
    pub hpbw_deg: f64,
    pub fnbw_deg: f64,
    pub peak_gain_db: f64,
    pub floor_gain_db: f64,
}

impl AntennaPattern {
    pub fn new(
        hpbw_deg: f64,
        fnbw_deg: f64,
        peak_gain_db: f64,
        floor_gain_db: f64,
    ) -> Result<Self, AntennaError> {
        if !(hpbw_deg > 0.0 && fnbw_deg > hpbw_deg && fnbw_deg <= 360.0) {
            return Err(AntennaError::InvalidPattern(format!(
                "need 0 < hpbw < fnbw <= 360, got ({hpbw_deg}, {fnbw_deg})"
            )));
        }
        if !(floor_gain_db < peak_gain_db - 3.0) || !peak_gain_db.is_finite() {
            return Err(AntennaError::InvalidPattern(format!(
                "floor {floor_gain_db} dB must lie more than 3 dB below peak {peak_gain_db} dB"
            )));
        }
        Ok(AntennaPattern {
            hpbw_deg,
            fnbw_deg,
            peak_gain_db,
            floor_gain_db,
        })
    }

    /// Lobe shape in dB relative to the peak at off-axis angle `psi_deg`.
    pub fn shape_db(&self, psi_deg: f64) -> f64 {
        let floor = self.floor_gain_db - self.peak_gain_db;
        if psi_deg >= self.fnbw_deg / 2.0 {
            return floor;
        }
        let u = psi_deg / (self.hpbw_deg / 2.0);
        (-3.0 * u * u).max(floor)
    }

    /// Absolute gain at off-axis angle `psi_deg`.
    pub fn gain_at_offaxis(&self, psi_deg: f64) -> f64 {
        self.peak_gain_db + self.shape_db(psi_deg)
    }

    /// Off-axis angles where the shape has a kink or jump, in radians,
    /// sorted and inside `(0, π)`.
    fn breakpoints_rad(&self) -> Vec<f64> {
        let floor = self.floor_gain_db - self.peak_gain_db;
        let knee = self.hpbw_deg / 2.0 * (-floor / 3.0).sqrt();
        let null = self.fnbw_deg / 2.0;
        let mut pts: Vec<f64> = [knee.min(null), null]
            .into_iter()
            .map(f64::to_radians)
            .filter(|&p| p > 0.0 && p < std::f64::consts::PI)
            .collect();
        pts.dedup();
        pts
    }
}

/// Gain in dB toward `direction` for a pattern steered to `orientation`.
pub fn gain_at(
    pattern: &AntennaPattern,
    orientation: &Orientation,
    direction: Vec3,
) -> Result<f64, AntennaError> {
    let norm = direction.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(AntennaError::ZeroDirection);
    }
    let psi = orientation.boresight().angle_to(direction);
    Ok(pattern.gain_at_offaxis(psi.to_degrees()))
}

/// The eight (HPBW, FNBW) pairs used for dataset generation: four narrow
/// followed by four wide patterns.
pub const BUILTIN_PATTERN_WIDTHS: [(f64, f64); 8] = [
    (15.0, 30.0),
    (15.0, 60.0),
    (30.0, 60.0),
    (45.0, 60.0),
    (15.0, 90.0),
    (30.0, 90.0),
    (45.0, 90.0),
    (90.0, 120.0),
];

pub fn builtin_pattern_specs() -> Vec<PatternSpec> {
    BUILTIN_PATTERN_WIDTHS
        .iter()
        .map(|&(h, f)| PatternSpec::new(h, f))
        .collect()
}

/// The eight dataset patterns with default floor and directivity peak.
pub fn builtin_patterns() -> Vec<AntennaPattern> {
    builtin_pattern_specs()
        .iter()
        .map(|s| s.resolve().expect("built-in patterns are valid"))
        .collect()
}

/// Directivity of the pattern's lobe shape, `10·log10(4π / ∫ g dΩ)`.
pub fn peak_gain_from_directivity(pattern: &AntennaPattern) -> Result<f64, AntennaError> {
    let p = *pattern;
    directivity_db(
        move |psi| p.shape_db(psi.to_degrees()),
        &p.breakpoints_rad(),
    )
}

/// Directivity in dB of an axially symmetric shape given in dB as a
/// function of the off-axis angle in radians. `breakpoints` split the
/// integration range at non-smooth points.
pub fn directivity_db(
    shape_db: impl Fn(f64) -> f64,
    breakpoints: &[f64],
) -> Result<f64, AntennaError> {
    let integrand = |psi: f64| 10f64.powf(shape_db(psi) / 10.0) * psi.sin();
    let mut edges = vec![0.0];
    edges.extend_from_slice(breakpoints);
    edges.push(std::f64::consts::PI);

    let integrate = |n: usize| -> f64 {
        edges
            .windows(2)
            .map(|w| simpson(&integrand, w[0], w[1], n))
            .sum()
    };
    let to_db = |solid: f64| 10.0 * (2.0 / solid).log10();

    let mut n = 16;
    let mut prev = to_db(integrate(n));
    while n < 1 << 20 {
        n *= 2;
        let cur = to_db(integrate(n));
        if (cur - prev).abs() < QUADRATURE_TOL_DB * 1e-3 {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(AntennaError::QuadratureNonConvergence)
}

/// Composite Simpson rule on `[a, b]` with `n` (even) subintervals; the
/// endpoints are nudged inward so one-sided limits are used at jumps.
fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let eps = (b - a) * 1e-12;
    let mut acc = f(a + eps) + f(b - eps);
    for i in 1..n {
        let x = a + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    acc * h / 3.0
}
