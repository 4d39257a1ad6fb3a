//! Virtual-clock laboratory for parallel SGD methods under random,
//! heterogeneous per-gradient compute times.
//!
//! * [`timemodel`]: delay laws with `+inf` support and the clipped-trial rule.
//! * [`problems`]: quadratic oracles with known smoothness and noise.
//! * [`planner`]: stepsizes, iteration counts, trial counts and clip times.
//! * [`engine`]: discrete-event simulation of the five methods.
//! * [`analysis`]: round-time histograms and their self-convolution.

pub mod analysis;
pub mod engine;
pub mod planner;
pub mod problems;
pub mod rng;
pub mod timemodel;

pub use timemodel::{ClusterModel, DelayDistribution, ExtendedTime, WorkerProfile};
