//! Coupled and decoupled random polynomial chaoses: multi-index coefficient
//! algebra, samplers, exact Rademacher oracles, norm targets and
//! Monte-Carlo probes for decoupling inequalities.

// `!(x > 0.0)` style checks reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod banach;
pub mod chaos;
pub mod error;
pub mod hexfloat;
pub mod identities;
pub mod multiindex;
pub mod numeric;
pub mod quad;
pub mod randsource;
pub mod verify;

pub use error::{Error, Result};
