//! Offline critic training and dynamic action rescoring for text agents.
//!
//! The crate is organised around the two stages of the pipeline:
//!
//! * **Offline stage**: trajectories collected by an imperfect agent are stored in an
//!   [`experience::ExperienceMemory`] and used to train an Implicit Q-Learning critic
//!   ([`critic::train_iql`]) built from small recurrent text encoders ([`nn`]).
//! * **Online stage**: a base policy ([`policy`]) proposes candidate actions, the candidates
//!   are grounded into the environment's valid action set ([`grounding`]), and the
//!   policy likelihoods are combined with critic values by [`agent::select_action`]
//!   under the decaying weight `alpha(t) = max(b, d^t)`.
//!
//! [`textlab`] provides a deterministic toy text environment with exact oracles so the
//! whole loop can be exercised on a laptop. The `rescore-agent` binary drives the
//! workflow end to end (see [`cli`]).

pub mod agent;
pub mod cli;
pub mod critic;
pub mod error;
pub mod experience;
pub mod grounding;
pub mod nn;
pub mod policy;
pub mod seed;
pub mod textlab;
pub mod transport;

pub use error::{Error, Result};
