//! Numerical laboratory for weighted first- and second-order integral
//! identities with explicit nonnegative remainders.
//!
//! The objects involved: a family of vector fields given by a matrix sigma(x)
//! (euclidean, Grushin-type blocks, Greiner-type fields, or custom), the
//! induced horizontal gradient, divergence and second-order operator L, and
//! the algebraic functional C_p whose nonnegativity turns Hardy-, Rellich-
//! and Poincare-type inequalities into exact identities. The crate evaluates
//! C_p stably, estimates its sharp comparison constants, differentiates and
//! integrates the fields involved, and verifies the identities end to end on
//! a registry of concrete cases, reporting each side with an error budget.
//!
//! Modules:
//! - [`cp`]: the C_p functional, its stable evaluation, sharp constants.
//! - [`fields`]: scalar/vector fields, vector-field systems, L and friends.
//! - [`calculus`]: finite differences and pointwise strong-form residuals.
//! - [`quadrature`]: deterministic tensor-product quadrature on boxes and
//!   annuli with error estimates and adaptive refinement.
//! - [`testfn`]: smooth compactly supported test-function families.
//! - [`identities`]: the case registry and identity verification.
//! - [`suite`]: batch configs, reports, and the text entry points.

pub mod calculus;
pub mod cp;
pub mod fields;
pub mod identities;
pub mod quadrature;
pub mod suite;
pub mod testfn;
