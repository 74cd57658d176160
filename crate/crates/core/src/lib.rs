pub mod analysis;
pub mod config;
pub mod export;
pub mod floquet;
pub mod invariants;
pub mod models;
pub mod ode;
mod quadrature;
pub mod run;
