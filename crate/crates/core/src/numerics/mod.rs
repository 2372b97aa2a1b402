//! Special functions, singularity-aware quadrature, fractional operators and
//! dense linear algebra.

pub mod fractional;
pub mod interp;
pub mod linalg;
pub mod quadrature;
pub mod special;

pub use fractional::{
    frac_derivative_left, frac_derivative_right, frac_integral_left, frac_integral_right,
    Declared, DerivativeOptions, FracFunction,
};
pub use linalg::{solve_dense, DenseSolution};
pub use quadrature::{
    depth_for, graded_unit_rule, jacobi_rule, marked_rule, legendre_rule, singular_integral, CompositeRule, EndGrading,
    Integral, Mark, QuadratureRule, Refinement,
};
pub use special::{beta_fn, gamma_fn};
