//! Frequency-split observability toolkit for nonlinear Schrodinger flows on
//! flat tori.
//!
//! The library realizes, at finite spectral truncation, the machinery needed
//! to observe and reconstruct the high-frequency part of solutions of
//!
//! ```text
//!     i du/dt + Laplacian(u) = f(u),        f(u) = P'(|u|^2) u,
//! ```
//!
//! on one- and two-dimensional tori: Fourier geometry and Sobolev scales,
//! frequency splits P_n / Q_n, windowed observation operators and their
//! Gramians, linearized and nonlinear evolutions, an observed Cauchy solver,
//! and the nonlinear fixed-point reconstruction of Q_n u from P_n u.
//!
//! All state lives on the spectral side. A [`SpectralField`] stores Fourier
//! coefficients in FFT bin order against an orthonormal exponential basis, so
//! plain coefficient sums realize L^2 pairings and diagonal weights realize
//! H^s pairings.

pub mod error;
pub mod evolve;
pub mod field;
pub mod gcc;
pub mod geometry;
pub mod nonlinearity;
pub mod observability;
pub mod path;
pub mod reconstruction;
pub mod sobolev;
pub mod split;
pub mod window;

/// Complex scalar used for all spectral data.
pub type C64 = num_complex::Complex64;

pub use error::{ModelError, Result};
pub use evolve::{evolve_damped, evolve_linearized, evolve_nls, evolve_with_source};
pub use evolve::{linear_propagator, DampedRun, DampingSpec, LinearizedStepper};
pub use field::SpectralField;
pub use gcc::{gcc_ray_check, GccReport, RayHit, RaySampling};
pub use geometry::TorusGeometry;
pub use nonlinearity::NonlinearitySpec;
pub use observability::{
    apply_projector, assemble_gramian_direct, gramian_cache_descriptor, load_cached_gramian,
    observe_path, solve_observed_cauchy, store_cached_gramian, GramianInverse, GramianOperator,
    ObservationOperator, ObservedCauchySolver, ObservedTrace, DEFAULT_RCOND,
};
pub use path::PotentialPath;
pub use reconstruction::{
    contraction_radius, determining_modes_gap, fixed_point_solve, gate, phi_map, reconstruct,
    verify_reconstruction, FixedPointReport, GapReport, ReconstructionConfig,
    ReconstructionProblem, VerifyOutcome,
};
pub use sobolev::{apply_multiplier, real_inner, sobolev_inner, sobolev_norm, SobolevScale};
pub use split::FrequencySplit;
pub use window::{observe, BoxRegion, ObservationWindow};
