pub mod bubble;
pub mod dd;
pub mod green;
pub mod error;
pub mod extension;
pub mod io;
pub mod matching;
pub mod radial;
pub mod sphere;

pub use bubble::{BubbleParams, WeightedNormSpec};
pub use error::{Error, Result};
pub use extension::{ExtensionField, PoissonBlock};
pub use radial::{ModalRadialField, RadialGrid};
pub use sphere::{BoundaryData, HarmonicMode, SphereBasis, SphericalGrid};
