//! Multi-view chest radiograph toolkit: parallel-beam projection and
//! back-projection, synthetic chest phantoms with exact ground truth,
//! 2D/3D box geometry, collaborative 2D-3D box matching and detection
//! metrics.

pub mod boxgeom;
pub mod cli;
pub mod detect;
pub mod error;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod phantom;
pub mod projector;
pub mod selfcheck;
pub mod types;

pub use error::{Error, Result};
pub use types::{Anchor2, Anchor3, Box2, Box3, Image2, ViewSet, Volume3, VolumeGeometry};
