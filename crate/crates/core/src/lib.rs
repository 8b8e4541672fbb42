//! Controlled quantum stochastic flows in the SLH framework.
//!
//! The crate is organised bottom-up:
//!
//! - [`operator`]: dense complex operators on composite spaces, `expm`.
//! - [`ito`]: symbolic quantum Itō increments with operator coefficients.
//! - [`slh`]: SLH triples, series product, concatenation, superoperators.
//! - [`control`]: control records, modulators and adapted coefficient builders.
//! - [`sim`]: homodyne and photon-counting trajectories with feedback.
//! - [`dilation`]: finite collision-model dilations and exact structural checks.
//! - [`linear`]: closed-form analysis of the linear coupling-feedback cavity.
//! - [`scenario`] and [`artifacts`]: TOML scenarios and CSV/JSON outputs.

pub mod artifacts;
pub mod control;
pub mod dilation;
pub mod error;
pub mod ito;
pub mod linear;
pub mod operator;
pub mod scenario;
pub mod sim;
pub mod slh;
#[doc(hidden)]
pub mod testing;

pub use error::{Error, Result};
pub use operator::{HilbertSpace, Operator};
pub use slh::SlhTriple;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
