//! Deterministic tick-driven simulation of a whole chain.
//!
//! Every tick runs the same phases in the same order:
//!
//! 1. customer demand is injected,
//! 2. deliverable messages are handed out and every agent reacts, in
//!    ascending agent id order, until no agent has mail (zero-latency
//!    exchanges complete within the tick; batch buffers whose window has
//!    elapsed are released when the mailboxes run dry),
//! 3. production advances: components are checked, costs are booked,
//!    started and finished jobs fire milestones, finished jobs ship,
//! 4. scheduled disruptions are applied,
//! 5. shipments whose transit is over are delivered and settled.
//!
//! Messages sent during phases 3 to 5 are seen in the next tick at the
//! earliest. After the last tick one more message exchange runs at tick
//! `horizon`.

mod agents;
mod engine;
pub mod metrics;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messaging::MessagingError;
use crate::model::Tick;
use crate::planner::PlanError;
use crate::scenario::{DemandSpec, DisruptionSpec, Params, ScenarioError, ScenarioFile};

pub use engine::{Engine, Shipment};
pub use metrics::{bullwhip_ratio, Bullwhip, BullwhipError, EchelonSeries};
pub use report::{
    Account, BullwhipEntry, Conservation, FulfilmentMetrics, LedgerEntry, NegotiationSummary, OrderOutcome,
    SimulationReport, REPORT_FORMAT,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Validation(#[from] ScenarioError),
    #[error("unknown disruption target `{0}`")]
    UnknownTarget(String),
    #[error("infeasible: {0}")]
    Infeasible(PlanError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<MessagingError> for SimError {
    fn from(e: MessagingError) -> Self {
        SimError::Internal(e.to_string())
    }
}

impl From<PlanError> for SimError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::UnknownTarget(t) => SimError::UnknownTarget(t),
            e => SimError::Infeasible(e),
        }
    }
}

/// Run configuration: everything that is not the chain itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub horizon: Tick,
    pub demand: DemandSpec,
    pub disruptions: Vec<DisruptionSpec>,
    pub params: Params,
}

impl SimConfig {
    pub fn from_scenario(s: &ScenarioFile) -> Self {
        Self {
            seed: s.seed,
            horizon: s.horizon,
            demand: s.demand.clone(),
            disruptions: s.disruptions.clone(),
            params: s.params.clone(),
        }
    }

    /// The scenario with its run section replaced by this configuration.
    pub fn apply_to(&self, s: &ScenarioFile) -> ScenarioFile {
        let mut s = s.clone();
        s.seed = self.seed;
        s.horizon = self.horizon;
        s.demand = self.demand.clone();
        s.disruptions = self.disruptions.clone();
        s.params = self.params.clone();
        s
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: SimulationReport,
    /// Message log, one JSON envelope per line.
    pub log: String,
    pub series: EchelonSeries,
}

/// Validates, runs to the horizon and reports. The chain is taken from
/// `scenario`, everything else from `config`.
pub fn run(config: &SimConfig, scenario: &ScenarioFile) -> Result<SimOutput, SimError> {
    let mut engine = Engine::new(config, scenario)?;
    engine.run_to_end()?;
    Ok(engine.finish())
}
