//! Dynamic transmit-power allocation in interference-limited wireless networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: hexagonal cell layout, link placement, large-scale gains.
//! - [`channel`]: Gauss-Markov (Jakes) small-scale fading and total gains.
//! - [`simcore`]: the slotted network engine (SINR, rates, weights, neighbor
//!   sets, delayed information exchange).
//! - [`baselines`]: centralized allocators (FP, WMMSE, delayed FP, random,
//!   full power) and an exhaustive grid oracle.
//! - [`dqn`]: the fully connected Q-network, replay memory, RMSProp.
//! - [`marl`]: agent state construction, rewards, and the centrally trained,
//!   distributively executed learning loop.
//! - [`experiment`]: run configuration, orchestration and result export.

pub mod baselines;
pub mod channel;
pub mod dqn;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod marl;
pub mod rng;
pub mod simcore;

pub use error::{Error, Result};
