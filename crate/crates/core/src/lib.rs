//! Link-level simulator for a V2V transmitter/receiver pair and a dueling
//! double DQN agent that jointly picks the MCS and transmit power.
//!
//! * [`channel`]: scenario tap profiles, Rayleigh realizations, SNR process.
//! * [`phy`]: MCS table, PER curves, throughput/EE, LTS SNR estimation, scenario identification.
//! * [`env`]: the MDP with throughput (Game 1) and energy-efficiency (Game 2) rewards.
//! * [`agent`]: dueling Q-network with hand-written backprop, replay, double-Q training.
//! * [`baselines`]: PSO, SA, random, fixed and oracle selectors plus frozen-trace evaluation.
//! * [`harness`]: experiment config, training/comparison pipelines and CSV output.

pub mod agent;
pub mod baselines;
pub mod channel;
pub mod env;
pub mod error;
pub mod harness;
pub mod phy;

pub use error::{LinkError, Result};
