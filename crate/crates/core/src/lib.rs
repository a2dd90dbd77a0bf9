//! Sensitivity-based tube NMPC for a planar two-vehicle rigid-link aerial chain.
//!
//! The crate is organized bottom-up:
//!
//! * [`dynamics`] — continuous-time chain model (forward dynamics, link
//!   stresses, kinematics, parameter scaling).
//! * [`uncertainty`] — parameter deviation box, weighting matrix, sampling.
//! * [`sensitivity`] — vector-field Jacobians, the variational sensitivity
//!   dynamics, the augmented 84-state model, and the shared RK4 step.
//! * [`constraints`] — separation/thrust constraints, tightening margins,
//!   signed residuals.
//! * [`reference`] — quintic phase law, ellipse path, two-link IK, dense
//!   reference tables.
//! * [`qp`] — dense convex QP solver (ADMM with polishing).
//! * [`ocp`] — multiple-shooting transcription, Gauss-Newton real-time
//!   iteration, condensing.
//! * [`sim`] — closed-loop trial runner and logging.
//! * [`monte_carlo`] — paired uncertainty campaigns and reports.
//! * [`config`] — TOML run configuration with product defaults.
//! * [`checks`] — self-verification suites exposed to the CLI.

mod scalar;

pub mod checks;
pub mod config;
pub mod constraints;
pub mod dynamics;
pub mod monte_carlo;
pub mod ocp;
pub mod qp;
pub mod reference;
pub mod sensitivity;
pub mod sim;
pub mod textio;
pub mod uncertainty;
