//! Simulation and constrained-optimization engine for rigid non-overlapping
//! disks whose motion minimizes a delayed adhesion energy plus an external
//! load, subject to linearized non-penetration constraints.
//!
//! The model couples three ingredients:
//!
//! * an age-structured density of adhesive bonds per particle, discretized
//!   by an implicit scheme on a uniform age grid ([`linkage`]);
//! * a per-step convex energy whose quadratic part is a weighted sum over
//!   past positions (a delay term) and whose linear/convex part is an
//!   external load ([`energy`]);
//! * affine non-overlap constraints obtained by linearizing the pair
//!   distances at the previous configuration ([`constraints`]), solved
//!   either by Uzawa dual ascent or by an exterior penalty continuation
//!   ([`solvers`]).
//!
//! [`simulation`] drives the time loop and records diagnostics (energy
//! ledger, dissipation, mean squared displacement, contact activation).
//! [`reference`] holds closed-form comparison models: the instantaneous
//! friction limit, exponential no-contact decay, and the Ornstein-Uhlenbeck
//! mean squared displacement.

pub mod constraints;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod linkage;
pub mod reference;
pub mod rng;
pub mod simulation;
pub mod solvers;

pub use constraints::{ActiveSet, ConstraintEval, InfeasiblePolicy, PairConstraint};
pub use energy::{EnergyContext, ExternalLoad, History, PastProvider};
pub use error::{Error, Result};
pub use geometry::{Configuration, DomainSpec, PairGradient, Vec2};
pub use linkage::{DensityGrid, OffRate, RateModel};
pub use reference::{
    friction_limit_run, no_contact_decay, ou_msd_empirical, ou_msd_exact, ou_path,
    FrictionWeights,
};
pub use simulation::{
    DiagnosticsRecord, Interpolant, NonConvergencePolicy, PastSpec, SimConfig, Simulation,
    SolverChoice, Trajectory,
};
pub use solvers::{
    KktResiduals, KktTolerances, PenaltySettings, SolverResult, StepPolicy, UzawaSettings,
};
