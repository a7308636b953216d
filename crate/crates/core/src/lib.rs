//! Constructive ReLU network approximation of smooth functions supported
//! on low-dimensional Lipschitz manifolds, plus a least-squares network
//! regression estimator.
//!
//! Modules build on each other in this order: [`relu_net`] (the network
//! type and its algebra), [`primitives`] (identity, indicator, test and
//! product networks), [`manifold`] (charts and cube enumeration),
//! [`taylor`] (targets, piecewise Taylor polynomials and the slot-indexed
//! recursion the networks imitate), [`constructor`] (the explicit
//! approximating networks) and [`estimator`] (architecture selection and
//! training).

pub mod constructor;
pub mod error;
pub mod estimator;
pub mod manifold;
pub mod primitives;
pub mod relu_net;
pub mod taylor;

pub use error::{Error, Result};
pub use relu_net::{Affine, Network, NetworkArch};
