//! Seeded synthetic city blocks: axis-aligned rectangular buildings and
//! roughly circular vegetation patches on open ground.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::scene::{HeightGrid, Scene, SceneError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Side length in cells (1 m resolution).
    pub grid_size: usize,
    pub n_buildings: usize,
    /// Building heights are drawn uniformly from `[lo, hi]` meters.
    pub height_range: [f64; 2],
    /// Target fraction of open ground covered by vegetation.
    pub vegetation_density: f64,
    pub vegetation_height_range: [f64; 2],
    /// Footprint side lengths are drawn from `[lo, hi]` cells.
    pub building_size: [usize; 2],
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            grid_size: 64,
            n_buildings: 8,
            height_range: [6.0, 24.0],
            vegetation_density: 0.05,
            vegetation_height_range: [3.0, 12.0],
            building_size: [4, 12],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Synthetic(m));
        if self.grid_size == 0 {
            return bad("grid_size must be positive".into());
        }
        let [lo, hi] = self.height_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("height_range [{lo}, {hi}]"));
        }
        let [vlo, vhi] = self.vegetation_height_range;
        if !(vlo > 0.0 && vlo <= vhi && vhi.is_finite()) {
            return bad(format!("vegetation_height_range [{vlo}, {vhi}]"));
        }
        if !(0.0..=1.0).contains(&self.vegetation_density) {
            return bad(format!("vegetation_density {}", self.vegetation_density));
        }
        let [slo, shi] = self.building_size;
        if slo == 0 || slo > shi {
            return bad(format!("building_size [{slo}, {shi}]"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Generates a scene; identical specs give identical scenes. Overlapping
/// footprints keep the taller height.
pub fn generate_synthetic_scene(
    id: impl Into<String>,
    spec: &SyntheticSpec,
) -> Result<Scene, SceneError> {
    spec.validate()?;
    let n = spec.grid_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut b = vec![0.0; n * n];

    for _ in 0..spec.n_buildings {
        let w = rng
            .gen_range(spec.building_size[0]..=spec.building_size[1])
            .min(n);
        let h = rng
            .gen_range(spec.building_size[0]..=spec.building_size[1])
            .min(n);
        let c0 = rng.gen_range(0..=n - w);
        let r0 = rng.gen_range(0..=n - h);
        let height = uniform(&mut rng, spec.height_range);
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                b[r * n + c] = f64::max(b[r * n + c], height);
            }
        }
    }

    let mut v = vec![0.0; n * n];
    let open = b.iter().filter(|&&h| h == 0.0).count();
    let target = (spec.vegetation_density * open as f64).round() as usize;
    let mut covered = 0;
    let mut attempts = 0;
    while covered < target && attempts < 10_000 {
        attempts += 1;
        let cr = rng.gen_range(0..n) as f64 + 0.5;
        let cc = rng.gen_range(0..n) as f64 + 0.5;
        let radius: f64 = rng.gen_range(1.5..4.5);
        let height = uniform(&mut rng, spec.vegetation_height_range);
        let reach = radius.ceil() as isize;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (r, c) = (cr as isize + dr, cc as isize + dc);
                if r < 0 || c < 0 || r as usize >= n || c as usize >= n {
                    continue;
                }
                let i = r as usize * n + c as usize;
                let d = ((r as f64 + 0.5 - cr).powi(2) + (c as f64 + 0.5 - cc).powi(2)).sqrt();
                if d <= radius && b[i] == 0.0 && v[i] == 0.0 && covered < target {
                    v[i] = height;
                    covered += 1;
                }
            }
        }
    }

    Scene::new(
        id,
        HeightGrid::new(Grid::from_vec(n, n, 1.0, b))?,
        HeightGrid::new(Grid::from_vec(n, n, 1.0, v))?,
        None,
    )
}
