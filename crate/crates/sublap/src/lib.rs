//! Intrinsic sub-Laplacians on model hypersurfaces in contact sub-Riemannian
//! geometry.
//!
//! The library covers three contact sub-Riemannian model families — the
//! Heisenberg group on `R^(2n+1)`, the sphere `S^(2n+1)` and the anti-de
//! Sitter space `H^(2n+1)` (the latter two with a curvature parameter
//! `k > 0`) — together with their canonical embedded hypersurfaces. On each
//! hypersurface, away from characteristic points, it constructs:
//!
//! * the induced quasi-contact structure `W = D ∩ TS`, the sub-Riemannian
//!   unit normal `N`, and the induced volume `mu = i_N Omega`;
//! * the horizontal gradient and the intrinsic sub-Laplacian
//!   `Delta f = div_mu(grad_S f)`, computed along two independent numerical
//!   routes that cross-check each other;
//! * the Laplace–Beltrami operators of the Riemannian approximations
//!   `g + eps^(-2) theta0 ⊗ theta0`, verified to converge to `Delta`;
//! * Euler–Maruyama simulation of the diffusion with generator `Delta/2`,
//!   whose radial part is compared against one-dimensional Bessel, Legendre
//!   and hyperbolic Bessel references of order `2n+1`.
//!
//! Everything is deterministic under a fixed seed, including parallel Monte
//! Carlo runs. Start with the runnable programs in `examples/`, or the `sublap`
//! binary for the report-producing command line interface.

pub mod calculus;
pub mod diffusion;
mod error;
pub mod hypersurface;
mod linalg;
pub mod models;
pub mod operators;
pub mod report;

pub use calculus::{Form, OneForm, Point, ScalarField, Tangent, VectorField};
pub use error::{Error, Result};
pub use hypersurface::{ChartPoint, ModelHypersurface, SphericalChart};
pub use models::{ModelFamily, ModelSpace};
