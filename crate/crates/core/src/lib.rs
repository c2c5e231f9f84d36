pub mod barrier;
mod chain;
pub mod embed;
pub mod envelope;
pub mod error;
pub mod gain;
pub mod io;
pub mod lattice;
pub mod lp;
pub mod mc;
pub mod measures;
pub mod order;
pub mod presets;

pub use error::{Error, Result};
pub use lattice::{build_annulus, build_lattice, cos_angle, point_group, LatticeSpec, Node, Shell, WalkKernel};
pub use measures::{DiscreteMeasure, RadialProfile};
