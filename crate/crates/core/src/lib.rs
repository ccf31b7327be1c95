//! Discrete-time Poisson channel: capacity, identification codes and
//! secrecy experiments.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod channel;
pub mod converse;
pub mod error;
pub mod id;
pub mod par;
pub mod secrecy;
pub mod stats;

pub use capacity::{
    ba_step, capacity, capacity_of, dmc_capacity, lagrangian, mutual_information, secrecy_capacity,
    secrecy_capacity_of, sid_capacity, sid_capacity_of, CapacityResult, DiscreteInputDistribution, OutputDistribution,
    SidReport, SolverConfig,
};
pub use channel::{
    averaged_channel, kl_divergence_nats, kl_poisson, kl_poisson_nats, total_variation, ChannelLaw, GenericDmc,
    PoissonChannel, PowerConstraint, StateChannel, WiretapPair,
};
pub use error::{Error, Result};
pub use par::Exec;
