//! Birth-and-death processes on ℤ with unit upward jumps and downward jumps of
//! size at most `L`, whose rates are drawn i.i.d. site by site.
//!
//! * [`env`]: environment laws, reproducible realizations, standing conditions.
//! * [`matrices`]: the mean matrices `M_i`, the companion matrices `B_i`, the
//!   top Lyapunov exponent and the recurrence call it implies.
//! * [`simulate`]: continuous-time paths, the jump chain, first passage times,
//!   down-crossing counts.
//! * [`branching`]: the multitype branching process of down-crossings and the
//!   reconstruction of `T_1` from it.
//! * [`analysis`]: quenched/annealed mean of `T_1`, velocity, KS statistics.

pub mod analysis;
pub mod branching;
pub mod env;
pub mod error;
pub mod matrices;
pub mod par;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use rng::StreamKey;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
