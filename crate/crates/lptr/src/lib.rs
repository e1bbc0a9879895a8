//! Smoothed proximal trust-region solver for composite problems with
//! L^p-regularization, p in (0,1].
//!
//! The library minimizes tracking-type functionals f(u) = 1/2 ||Su - y_d||^2
//! subject to box constraints and the sparsity-promoting regularizer
//! beta * int |u|^p + alpha/2 ||u||^2, where S solves a Poisson or semilinear
//! elliptic PDE on the unit square. The trust-region outer loop works with a
//! smoothed regularizer and a per-iterate convex majorant; trial steps come
//! from a generalized Cauchy point line search, optionally improved by a
//! spectral proximal gradient or majorize-minimize subproblem solver.
//! Proximal gradient and majorize-minimization baselines and a CSV/markdown
//! benchmark report round out the crate.

pub mod baselines;
pub mod driver;
mod error;
pub mod gcp;
pub mod grid;
pub mod model;
pub mod pde;
pub mod regularizer;
pub mod report;
pub mod subsolvers;

pub use error::{Result, SolverError};
pub use grid::{BoxBounds, Grid, GridFunction, Shift, Space};
