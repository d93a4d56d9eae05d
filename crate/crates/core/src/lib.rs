//! Numerical laboratory for the almost complex Chern-Ricci flow.
//!
//! * [`fiber`]: pointwise algebra of almost complex structures (projections,
//!   Nijenhuis tensor, adapted complex frames, structure coefficients).
//! * [`chern`]: the Chern connection, its torsion and Ricci traces, over a
//!   pluggable [`chern::DerivationBackend`].
//! * [`homogeneous`]: closed-form flows of left-invariant data on Lie groups.
//! * [`torus`]: finite-difference parabolic Monge-Ampere solver on flat tori.
//! * [`suite`]: identity checks aggregated over the model [`registry`].
//!
//! Core routines are generic over the scalar type; the aliases below fix the
//! common choices.

pub mod chern;
pub mod fiber;
pub mod grid;
pub mod homogeneous;
pub mod linalg;
pub mod quadrature;
pub mod registry;
pub mod scalar;
pub mod suite;
pub mod torus;

pub use num_complex::Complex;
pub use num_rational::{BigRational, Rational64};

pub use scalar::{FieldElem, Real, Scalar};

pub type Model = fiber::LieAlgebraModel<f64>;
pub type ExactModel = fiber::LieAlgebraModel<Rational64>;
pub type Form = fiber::TwoForm<f64>;
pub type ExactForm = fiber::TwoForm<Rational64>;
pub type Frame = fiber::ComplexFrame<f64>;
pub type Coefficients = fiber::StructureCoefficients<f64>;
pub type Flow = homogeneous::HomogeneousFlow<f64>;
pub type Grid = grid::TorusGrid<f64>;
pub type GridMetric = grid::GridHermitian<f64>;
pub type TorusSolver = torus::TorusSolver<f64>;
pub type TorusTrace = torus::TorusFlowTrace<f64>;
