//! Synthetic radio-map generation: scenes, antenna patterns, transmitter
//! placement, line-of-sight analysis, ray-traced path loss, CNN feature
//! encodings and dataset export.

pub mod antenna;
pub mod datasetio;
pub mod exec;
pub mod features;
pub mod geom;
pub mod grid;
pub mod pipeline;
pub mod placement;
pub mod propagation;
pub mod scene;
pub mod synth;
pub mod transform;
pub mod visibility;

pub use antenna::{AntennaPattern, Orientation, PatternSpec};
pub use exec::Execution;
pub use geom::Vec3;
pub use grid::Grid;
pub use placement::TxConfig;
pub use scene::Scene;
