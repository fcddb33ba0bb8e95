//! Random-scan Metropolis-within-Gibbs sampler.

pub mod adapt;
mod config;
mod data;
mod proposal;
mod sampler;
mod trace;

pub use adapt::{adapt_scale, AdaptiveScale, TimeTransform};
pub use config::{Block, ModelKind, SamplerConfig, Targets};
pub use data::FitData;
pub use proposal::{propose_z, z_proposal_log_prob, ZProposal};
pub use sampler::{run_chain, ChainState, Sampler};
pub use trace::{AdaptRecord, ObsMean, Trace};
