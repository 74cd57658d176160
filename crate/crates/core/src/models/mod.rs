//! Modulation profiles, potentials and the canonical modulated system.

mod closed_form;
mod hopf;
mod potential;
mod profile;
mod system;

use thiserror::Error;

pub use closed_form::{
    closed_form_modulated_mathieu, closed_form_oscillator, fit_oscillator, Branch, MathieuLevelSet,
};
pub use hopf::{adaptive_hopf_rhs, hopf_field, HopfParams, Sinusoid};
pub use potential::PotentialField;
pub use profile::{Modulation, ModulationProfile, ProfileSample};
pub use system::{build_system, HamiltonianValue, KineticSignature, PhaseState, SystemSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{variant} profile: requires {rule}")]
    InvalidProfile { variant: &'static str, rule: String },
    #[error("{variant} profile is not positive at t = {t}")]
    NonPositive { variant: &'static str, t: f64 },
    #[error("potential has dimension {potential} but signature has {signature} entries")]
    DimensionMismatch { potential: usize, signature: usize },
    #[error("kinetic signature entries must be +1 or -1, got {0:?}")]
    InvalidSignature(Vec<i8>),
    #[error("invalid potential parameters: {0}")]
    InvalidPotential(String),
    #[error("adaptive Hopf oscillator reached the origin at t = {t}")]
    HopfOrigin { t: f64 },
}
