//! Random walks in dynamic random environments on `Z`.
//!
//! Every random input (environment noise, the jump uniforms `U_n^x`, Poisson
//! clocks, auxiliary uniforms) is a pure function of a [`SeedKey`] and a
//! space-time index, so walkers started anywhere share one realization and
//! coalesce on contact.
//!
//! Geometry, speed events and trap parameters are generic over [`Scalar`];
//! the aliases below fix the exact rational instantiation used by the
//! experiment runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod environment;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod kernel;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod traps;
pub mod walker;

pub use environment::{CompiledEnv, EnvModel, EnvironmentSpec, LatticeBox};
pub use error::{Error, Result};
pub use kernel::{validate_kernel, JumpKernel, KernelTable};
pub use rng::{SeedKey, SpaceTimePoint, Stream};
pub use scalar::{Rational, Scalar};
pub use walker::Walk;

/// Double-precision jump kernel.
pub type Kernel = JumpKernel<f64>;
/// A walk with a double-precision kernel.
pub type System = Walk<f64>;
/// Exact anchor in `R × N`.
pub type Anchor = geometry::RealAnchor<Rational>;
pub type Params = traps::TrapParams<Rational>;
pub type Event = estimators::SpeedEvent<Rational>;
