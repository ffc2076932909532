//! Few-body Coulomb systems over floating explicitly correlated Gaussians,
//! together with a finite-field laboratory for studying how dipole moments
//! are extracted from field-dependent energies.
//!
//! The crate is organized bottom-up:
//!
//! * [`system`] separates the centre of mass and produces the internal
//!   kinetic matrix, Coulomb pair table and dipole coefficients.
//! * [`ecg`] holds the floating Gaussian basis and its parity bookkeeping.
//! * [`integrals`] gives closed-form matrix elements; [`quadrature`] is an
//!   independent numerical check of them.
//! * [`variational`] solves the generalized eigenproblem and optimizes the
//!   nonlinear parameters.
//! * [`field_lab`] runs field sweeps, polynomial fits, Hellmann–Feynman
//!   checks and parity diagnostics.
//! * [`experiment`] reads JSON configs, runs them and writes reports.
//!
//! A narrative guide lives in the `book/` directory of the repository; its
//! code listings are compiled as doctests of this crate.

pub mod boys;
pub mod ecg;
pub mod error;
pub mod experiment;
pub mod field_lab;
pub mod integrals;
pub mod quadrature;
pub mod system;
pub mod variational;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/coordinates.md")]
    mod coordinates {}
    #[doc = include_str!("../../../book/src/basis.md")]
    mod basis {}
    #[doc = include_str!("../../../book/src/matrix_elements.md")]
    mod matrix_elements {}
    #[doc = include_str!("../../../book/src/variational.md")]
    mod variational {}
    #[doc = include_str!("../../../book/src/finite_field.md")]
    mod finite_field {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
