//! Spectral toolkit for convective Brinkman–Forchheimer equations with
//! damping, on periodic boxes.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod checks;
pub mod error;
pub mod field;
pub mod grid;
pub mod irreducibility;
pub mod noise;
pub mod operators;
pub mod rng;
pub mod solver;
pub mod stats;
pub mod steering;
pub mod stochastic;

pub use error::{CbfedError, Result};
pub use field::{FourierField, Norm, PhysicalField};
pub use grid::{Grid, GridSpec};
pub use operators::{DerivedConstants, ModelParams};

/// Guide chapters, compiled so that their snippets run as doctests.
#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/fields.md")]
    pub mod fields {}
    #[doc = include_str!("../../../book/src/operators.md")]
    pub mod operators {}
    #[doc = include_str!("../../../book/src/solver.md")]
    pub mod solver {}
    #[doc = include_str!("../../../book/src/steering.md")]
    pub mod steering {}
    #[doc = include_str!("../../../book/src/noise.md")]
    pub mod noise {}
    #[doc = include_str!("../../../book/src/stochastic.md")]
    pub mod stochastic {}
    #[doc = include_str!("../../../book/src/irreducibility.md")]
    pub mod irreducibility {}
}
