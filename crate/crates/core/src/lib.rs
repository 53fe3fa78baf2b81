//! Axial potential measurement with one-dimensional ion strings.
//!
//! The equilibrium spacings of a string of singly charged ions encode the
//! external force at every ion: at rest, the external force cancels the
//! Coulomb repulsion of all other ions. This crate turns ion positions into
//! potential curves, isolates the contribution of a single electrode by
//! differencing curves taken at different electrode voltages, and provides
//! the forward solver, analytic trap model and synthetic imaging pipeline
//! used to validate all of it.
//!
//! All numerics run in internal units in which the Coulomb constant is
//! exactly one; see [`units::UnitSystem`] for conversion at the boundary.

pub mod equilibrium;
pub mod error;
pub mod imaging;
pub mod io;
pub mod isolation;
pub mod pchip;
pub mod physics;
pub mod potential;
pub mod reconstruction;
pub mod scenario;
pub mod trap;
pub mod units;

pub use equilibrium::{is_stable, solve_equilibrium, EquilibriumResult, InitialGuess, SolverConfig};
pub use error::{Error, Result};
pub use imaging::{column_profile, estimate_background, extract_string, fit_positions, render_frame, FitConfig, FitResult, Frame, Profile1D, RenderConfig};
pub use isolation::{
    align_offsets, equipotential_contours, isolate_electrode, pairwise_difference, shuttle_scan, stitch_average,
    DeltaScenario, DifferenceSegment, ElectrodeUnitPotential, IsolationConfig, MeasurementRecord, ShuttleConfig,
    ShuttleScanMap,
};
pub use physics::{coulomb_force, energy_gradient, energy_hessian, total_energy, ForceSample, IonString};
pub use potential::Potential1D;
pub use reconstruction::{reconstruct, GridSpec, OffsetConvention, PotentialCurve, ReconstructionOptions};
pub use trap::{TrapGeometry, VoltageVector};
pub use units::{Unit, UnitSystem};
