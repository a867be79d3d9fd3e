//! Fourth-order curvature flows: spectral tensor calculus on periodic grids,
//! the L² curvature energy and its gradient flows, closed-form homogeneous
//! families, and runtime monitors for smoothing, continuity and blowup.

pub mod acceptance;
pub mod curvature;
pub mod cutoff;
pub mod diagnostics;
pub mod distance;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod grid;
pub mod homogeneous;
pub mod ode;
pub mod presets;
pub mod snapshot;
pub mod spectral;
pub mod tensor;

pub use error::{FocfError, Result};
pub use flow::{FlowState, FlowTrajectory, IntegratorParams, TerminationStatus};
pub use functionals::{FlowKind, FlowSpec, GeometryKind};
pub use grid::Grid2Chart;
pub use tensor::{MetricField2, TensorField};
