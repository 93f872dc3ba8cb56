//! Deterministic multi-agent supply chain coordination simulator.
//!
//! Enterprises are represented by agents that negotiate delivery contracts,
//! plan production on their own cells, track contracted orders and report
//! finished histories to a chain-neutral tracing service. A discrete-event
//! engine drives them tick by tick and measures fulfillment, profit and
//! order-variance amplification along the chain.

pub mod messaging;
pub mod model;
pub mod negotiation;
pub mod planner;
pub mod scenario;
pub mod sim;
pub mod tracing;
pub mod tracking;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/messaging.md")]
    mod messaging {}
    #[doc = include_str!("../../../book/src/planning.md")]
    mod planning {}
    #[doc = include_str!("../../../book/src/negotiation.md")]
    mod negotiation {}
    #[doc = include_str!("../../../book/src/tracking.md")]
    mod tracking {}
    #[doc = include_str!("../../../book/src/tracing.md")]
    mod tracing {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
