//! Numerical toolkit for limiting Carleman weights and the inverse-problem
//! machinery built on them.
//!
//! * [`geometry`]: chart-based Riemannian kernels (Christoffel symbols, Hessians,
//!   curvature, Weyl and Cotton tensors, Killing fields, second fundamental forms).
//! * [`carleman`]: weight symbols, Poisson brackets, the Euclidean weight catalog.
//! * [`transport`]: geodesics on simple surfaces, conjugate points, index forms.
//! * [`xray`]: attenuated geodesic ray transform, Pestov and Santaló checks,
//!   regularized inversion.
//! * [`cgo`]: complex geometrical optics quasimodes on admissible metrics.
//! * [`boundary`]: gauge normalization, DN-symbol recursion and boundary recovery.

pub mod boundary;
pub mod builders;
pub mod carleman;
pub mod cgo;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod jet;
pub mod linalg;
pub mod rng;
pub mod tolerance;
pub mod transport;
pub mod xray;

pub use error::{Error, Result};
pub use expr::{CExpr, CJet, Expr};
pub use geometry::{Chart, ChartMetric, CurvatureReport, HessianReport, OneFormField, ScalarField};
pub use jet::{Dual, Jet, Real};
pub use tolerance::Tolerance;
