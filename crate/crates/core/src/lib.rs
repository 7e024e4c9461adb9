//! Volume-preserving K^α Gauss curvature flow of convex hypersurfaces in
//! hyperbolic space H^{n+1}, n = 1, 2.
//!
//! Surfaces are sampled on a grid over the unit sphere ([`spheregrid`]) either as
//! radial graphs ([`hypgeom`]) or as support functions of their Klein-model
//! image ([`klein`]). [`flow`] integrates the evolution and [`diagnostics`]
//! checks it against its structural identities.

pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod format;
pub mod harmonics;
pub mod hypgeom;
pub mod klein;
pub mod sampler;
pub mod spheregrid;

pub use error::{Error, Result};
pub use flow::{FlowConfig, FlowState, FunctionalSeries, Parametrization, SeriesRow, StepReport, Surface};
pub use hypgeom::{Functionals, RadialSurface, SurfaceGeometry};
pub use klein::{ConvexityCertificate, SupportSurface};
pub use spheregrid::{make_grid, Resolution, ScalarField, SphereGrid, SymTensorField, VectorField};
