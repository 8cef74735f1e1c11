//! Ownership-aware selective state-space unrolled MRI reconstruction.
//!
//! The crate is organised bottom-up: centered transforms and field types
//! ([`field`]), undersampling masks ([`sampling`]), the coil-sensitivity
//! forward model and data consistency ([`forward`]), the ownership router
//! ([`router`]), the selective scan ([`ssm`]), one reconstruction unit
//! ([`unit`]), the unrolled cascade ([`unroll`]), leakage and image metrics
//! ([`diagnostics`]), and synthetic data plus file formats ([`phantom`],
//! [`fieldio`]).

pub mod ablation;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod fieldio;
pub mod forward;
pub mod nn;
pub mod phantom;
pub mod rng;
pub mod router;
pub mod sampling;
pub mod selftest;
pub mod ssm;
pub mod unit;
pub mod unroll;

pub use error::{Error, Result};
