//! Order tracking: milestone plans, rolling delivery projection,
//! endangerment detection and partner notification.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messaging::{AgentId, Envelope, Payload, Performative};
use crate::model::{Contract, ContractId, ContractState, ConversationId, EnterpriseId, OrderId, ProductId, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrackingError {
    #[error("contract `{0}` is not active")]
    NotActive(ContractId),
    #[error("milestone {0:?} arrived before an earlier milestone")]
    OutOfOrderMilestone(MilestoneKind),
    #[error("milestone {0:?} already recorded")]
    DuplicateMilestone(MilestoneKind),
    #[error("no tracking record for order `{0}`")]
    UnknownOrder(OrderId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MilestoneKind {
    Confirmed,
    ProductionStarted,
    ProductionFinished,
    Shipped,
    Delivered,
}

impl MilestoneKind {
    pub const ALL: [MilestoneKind; 5] = [
        MilestoneKind::Confirmed,
        MilestoneKind::ProductionStarted,
        MilestoneKind::ProductionFinished,
        MilestoneKind::Shipped,
        MilestoneKind::Delivered,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Milestone {
    pub kind: MilestoneKind,
    pub planned: Tick,
    pub actual: Option<Tick>,
}

/// Planned milestone times taken from a committed schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MilestonePlan {
    pub confirmed: Tick,
    pub production_started: Tick,
    pub production_finished: Tick,
    pub shipped: Tick,
    pub delivered: Tick,
}

impl MilestonePlan {
    /// Plan for production `[start, finish)` followed by one transit leg.
    pub fn from_production(confirmed: Tick, start: Tick, finish: Tick, transit: Tick) -> Self {
        Self {
            confirmed,
            production_started: start,
            production_finished: finish,
            shipped: finish,
            delivered: finish + transit,
        }
    }

    fn times(&self) -> [Tick; 5] {
        [self.confirmed, self.production_started, self.production_finished, self.shipped, self.delivered]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackingStatus {
    OnTrack,
    Endangered,
    Recovered,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Minor,
    Major,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cause {
    CellDown,
    ComponentLate,
    MilestoneMissed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndangermentEvent {
    pub order: OrderId,
    pub detected_at: Tick,
    pub projected_delivery: Tick,
    pub slip: Tick,
    pub severity: Severity,
    pub cause: Cause,
}

/// Default tolerance: ten percent of the contracted lead time, rounded up.
pub fn default_threshold(lead_time: Tick) -> Tick {
    lead_time.div_ceil(10)
}

/// Minor up to the threshold, Major beyond it; no endangerment without slip.
pub fn classify(slip: i64, threshold: Tick) -> Option<Severity> {
    if slip <= 0 {
        None
    } else if slip as u64 <= threshold {
        Some(Severity::Minor)
    } else {
        Some(Severity::Major)
    }
}

/// What happened to a tracked order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackingInput {
    Milestone { milestone: MilestoneKind, at: Tick },
    /// A disruption with the delivery it now implies.
    Disruption {
        cause: Cause,
        projected_delivery: Tick,
        cell: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackingRecord {
    pub order: OrderId,
    pub contract: ContractId,
    pub milestones: Vec<Milestone>,
    pub suborder_records: Vec<OrderId>,
    pub status: TrackingStatus,
    pub seller: EnterpriseId,
    pub buyer: EnterpriseId,
    pub product: ProductId,
    /// Units produced together with this order (lot size).
    pub lot_size: u32,
    pub projected_delivery: Tick,
    /// Per-contract threshold override.
    pub threshold: Option<Tick>,
    pub history: Vec<TrackingStatus>,
    pub endangerments: Vec<EndangermentEvent>,
    pub disrupted_cells: BTreeSet<String>,
    notified_projection: Option<Tick>,
}

impl TrackingRecord {
    pub fn new(contract: &Contract, product: ProductId, lot_size: u32, plan: MilestonePlan, suborders: Vec<OrderId>) -> Self {
        let milestones = MilestoneKind::ALL
            .iter()
            .zip(plan.times())
            .map(|(&kind, planned)| Milestone { kind, planned, actual: None })
            .collect();
        Self {
            order: contract.order.clone(),
            contract: contract.id.clone(),
            milestones,
            suborder_records: suborders,
            status: TrackingStatus::OnTrack,
            seller: contract.seller.clone(),
            buyer: contract.buyer.clone(),
            product,
            lot_size,
            projected_delivery: plan.delivered,
            threshold: None,
            history: vec![TrackingStatus::OnTrack],
            endangerments: Vec::new(),
            disrupted_cells: BTreeSet::new(),
            notified_projection: None,
        }
    }

    pub fn milestone(&self, kind: MilestoneKind) -> &Milestone {
        &self.milestones[kind.index()]
    }

    pub fn threshold_for(&self, contract: &Contract) -> Tick {
        self.threshold.unwrap_or_else(|| default_threshold(contract.lead_time()))
    }

    pub fn is_final(&self) -> bool {
        matches!(self.status, TrackingStatus::Completed | TrackingStatus::Failed)
    }

    pub fn delivered_at(&self) -> Option<Tick> {
        self.milestone(MilestoneKind::Delivered).actual
    }

    fn set_status(&mut self, s: TrackingStatus) {
        if self.status != s {
            self.status = s;
            self.history.push(s);
        }
    }

    /// Latest lateness of a recorded milestone against its plan.
    fn lateness(&self) -> i64 {
        self.milestones
            .iter()
            .rev()
            .find_map(|m| m.actual.map(|a| a as i64 - m.planned as i64))
            .unwrap_or(0)
    }

    /// Delivery projected by shifting the remaining plan rigidly.
    pub fn shifted_projection(&self, lateness: i64) -> Tick {
        (self.milestone(MilestoneKind::Delivered).planned as i64 + lateness).max(0) as Tick
    }

    /// Replaces planned times of milestones that have not happened yet. A
    /// record that was endangered counts as recovered afterwards.
    pub fn rebaseline(&mut self, plan: MilestonePlan) {
        for (m, t) in self.milestones.iter_mut().zip(plan.times()) {
            if m.actual.is_none() {
                m.planned = t;
            }
        }
        if self.milestone(MilestoneKind::Delivered).actual.is_none() {
            self.projected_delivery = self.shifted_projection(0);
        }
        if self.status == TrackingStatus::Endangered {
            self.set_status(TrackingStatus::Recovered);
        }
    }

    /// Re-evaluates after the contract terms changed (an accepted amendment).
    pub fn on_terms_changed(&mut self, contract: &Contract) {
        if self.status == TrackingStatus::Endangered && self.projected_delivery <= contract.agreed_due {
            self.set_status(TrackingStatus::Recovered);
        }
    }

    pub fn fail(&mut self) {
        self.set_status(TrackingStatus::Failed);
    }
}

/// Records one input and decides whether it endangers the contract.
///
/// Milestones update the rolling projection; they raise an endangerment only
/// once the projected slip exceeds the threshold. A disruption raises one
/// for any positive slip. The same projection is never reported twice.
pub fn ingest(record: &mut TrackingRecord, contract: &Contract, input: &TrackingInput, now: Tick) -> Result<Option<EndangermentEvent>, TrackingError> {
    let threshold = record.threshold_for(contract);
    let (cause, tolerance) = match input {
        TrackingInput::Milestone { milestone, at } => {
            let i = milestone.index();
            if record.milestones[i].actual.is_some() {
                return Err(TrackingError::DuplicateMilestone(*milestone));
            }
            let prev = record.milestones[..i].iter().map(|m| m.actual).collect::<Vec<_>>();
            if prev.iter().any(Option::is_none) || prev.iter().flatten().any(|p| p > at) {
                return Err(TrackingError::OutOfOrderMilestone(*milestone));
            }
            record.milestones[i].actual = Some(*at);
            record.projected_delivery = if *milestone == MilestoneKind::Delivered {
                *at
            } else {
                record.shifted_projection(record.lateness())
            };
            if record.milestones.iter().all(|m| m.actual.is_some()) {
                record.set_status(TrackingStatus::Completed);
                return Ok(None);
            }
            (Cause::MilestoneMissed, threshold)
        }
        TrackingInput::Disruption { cause, projected_delivery, cell } => {
            record.projected_delivery = *projected_delivery;
            if let (Cause::CellDown, Some(c)) = (cause, cell) {
                if *projected_delivery > contract.agreed_due {
                    record.disrupted_cells.insert(c.clone());
                }
            }
            (*cause, 0)
        }
    };
    let slip = record.projected_delivery as i64 - contract.agreed_due as i64;
    if slip <= tolerance as i64 || record.notified_projection == Some(record.projected_delivery) {
        return Ok(None);
    }
    let severity = classify(slip, threshold).expect("positive slip");
    let event = EndangermentEvent {
        order: record.order.clone(),
        detected_at: now,
        projected_delivery: record.projected_delivery,
        slip: slip as Tick,
        severity,
        cause,
    };
    Ok(Some(event))
}

/// Addresses used when notifying about one record.
#[derive(Debug, Clone)]
pub struct NotifyRoutes {
    pub tracker: AgentId,
    pub buyer: AgentId,
    pub planner: AgentId,
    pub negotiator: AgentId,
}

/// Notice to the buyer plus a reschedule request (minor) or a
/// renegotiation request (major). Nothing is sent twice for the same
/// projection.
pub fn notify(record: &mut TrackingRecord, event: &EndangermentEvent, conversation: ConversationId, routes: &NotifyRoutes) -> Vec<Envelope> {
    if record.notified_projection == Some(event.projected_delivery) {
        return Vec::new();
    }
    record.notified_projection = Some(event.projected_delivery);
    record.endangerments.push(event.clone());
    record.set_status(TrackingStatus::Endangered);
    let payload = Payload::Endangerment {
        event: event.clone(),
        contract: record.contract.clone(),
    };
    let (perf, to) = match event.severity {
        Severity::Minor => (Performative::RescheduleRequest, routes.planner.clone()),
        Severity::Major => (Performative::RenegotiateRequest, routes.negotiator.clone()),
    };
    vec![
        Envelope::new(routes.tracker.clone(), routes.buyer.clone(), conversation, Performative::EndangermentNotice, payload.clone()),
        Envelope::new(routes.tracker.clone(), to, conversation, perf, payload),
    ]
}

/// Finalized record with the context the tracing service needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalizedRecord {
    pub record: TrackingRecord,
    pub contract: Contract,
    /// Due date of the first contract version.
    pub original_due: Tick,
}

impl FinalizedRecord {
    /// Lateness of the delivery against the original commitment; failed
    /// records count as late by their projected slip, at least one tick.
    pub fn slip(&self) -> i64 {
        match self.record.delivered_at() {
            Some(d) => d as i64 - self.original_due as i64,
            None => (self.record.projected_delivery as i64 - self.original_due as i64).max(1),
        }
    }

    pub fn is_late(&self) -> bool {
        self.record.status == TrackingStatus::Failed || self.slip() > 0
    }
}

/// One enterprise's tracking records.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrackingStore {
    pub records: BTreeMap<OrderId, TrackingRecord>,
}

impl TrackingStore {
    /// Registers an active contract. Registering the same order again
    /// returns the existing record.
    pub fn register(&mut self, contract: &Contract, product: ProductId, lot_size: u32, plan: MilestonePlan, suborders: Vec<OrderId>) -> Result<&mut TrackingRecord, TrackingError> {
        if contract.state != ContractState::Active {
            return Err(TrackingError::NotActive(contract.id.clone()));
        }
        Ok(self
            .records
            .entry(contract.order.clone())
            .or_insert_with(|| TrackingRecord::new(contract, product, lot_size, plan, suborders)))
    }

    pub fn get_mut(&mut self, order: &OrderId) -> Result<&mut TrackingRecord, TrackingError> {
        self.records
            .get_mut(order)
            .ok_or_else(|| TrackingError::UnknownOrder(order.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{contract_transition, ContractEvent};

    fn active(due: Tick, created: Tick) -> Contract {
        let d = Contract::draft(ContractId::new("K1"), OrderId::new("O1"), "market".into(), "oem".into(), due, 10_000, None, created);
        contract_transition(&d, &ContractEvent::Accept).unwrap()
    }

    fn plan() -> MilestonePlan {
        MilestonePlan::from_production(0, 10, 28, 2)
    }

    #[test]
    fn register_builds_plan_and_is_idempotent() {
        let k = active(30, 0);
        let mut store = TrackingStore::default();
        let r = store.register(&k, "car".into(), 1, plan(), vec![OrderId::new("O2")]).unwrap().clone();
        assert_eq!(r.milestones.len(), 5);
        assert!(r.milestones.iter().all(|m| m.actual.is_none()));
        assert_eq!(r.suborder_records, vec![OrderId::new("O2")]);
        assert_eq!(r.status, TrackingStatus::OnTrack);
        let again = store.register(&k, "car".into(), 1, MilestonePlan::from_production(0, 0, 1, 1), vec![]).unwrap();
        assert_eq!(*again, r);
        let draft = Contract::draft(ContractId::new("K2"), OrderId::new("O3"), "a".into(), "b".into(), 5, 1, None, 0);
        assert_eq!(store.register(&draft, "car".into(), 1, plan(), vec![]).unwrap_err(), TrackingError::NotActive(ContractId::new("K2")));
    }

    #[test]
    fn thresholds() {
        assert_eq!(default_threshold(30), 3);
        assert_eq!(default_threshold(31), 4);
        assert_eq!(classify(0, 3), None);
        assert_eq!(classify(3, 3), Some(Severity::Minor));
        assert_eq!(classify(4, 3), Some(Severity::Major));
        assert_eq!(classify(1, 0), Some(Severity::Major));
    }

    #[test]
    fn on_plan_and_small_lateness() {
        let k = active(30, 0);
        let mut r = TrackingRecord::new(&k, "car".into(), 1, plan(), vec![]);
        let confirm = TrackingInput::Milestone { milestone: MilestoneKind::Confirmed, at: 0 };
        assert_eq!(ingest(&mut r, &k, &confirm, 0).unwrap(), None);
        // Starts 2 late with 20 ticks of plan left: projection 32, slip 2
        // within the threshold of 3.
        let start = TrackingInput::Milestone { milestone: MilestoneKind::ProductionStarted, at: 12 };
        assert_eq!(ingest(&mut r, &k, &start, 12).unwrap(), None);
        assert_eq!(r.projected_delivery, 32);
        assert_eq!(r.status, TrackingStatus::OnTrack);
    }

    #[test]
    fn milestone_errors() {
        let k = active(30, 0);
        let mut r = TrackingRecord::new(&k, "car".into(), 1, plan(), vec![]);
        let start = TrackingInput::Milestone { milestone: MilestoneKind::ProductionStarted, at: 10 };
        assert_eq!(ingest(&mut r, &k, &start, 10), Err(TrackingError::OutOfOrderMilestone(MilestoneKind::ProductionStarted)));
        let confirm = TrackingInput::Milestone { milestone: MilestoneKind::Confirmed, at: 0 };
        ingest(&mut r, &k, &confirm, 0).unwrap();
        assert_eq!(ingest(&mut r, &k, &confirm, 0), Err(TrackingError::DuplicateMilestone(MilestoneKind::Confirmed)));
    }

    #[test]
    fn disruption_classification_and_dedup() {
        let k = active(30, 0);
        let mut r = TrackingRecord::new(&k, "car".into(), 1, plan(), vec![]);
        let d = |p| TrackingInput::Disruption { cause: Cause::CellDown, projected_delivery: p, cell: Some("m1".into()) };
        assert_eq!(ingest(&mut r, &k, &d(30), 1).unwrap(), None);
        let ev = ingest(&mut r, &k, &d(31), 1).unwrap().unwrap();
        assert_eq!((ev.slip, ev.severity), (1, Severity::Minor));
        let routes = NotifyRoutes {
            tracker: AgentId::new("oem/tracker"),
            buyer: AgentId::new("market/customer"),
            planner: AgentId::new("oem/planner"),
            negotiator: AgentId::new("oem/negotiator"),
        };
        let msgs = notify(&mut r, &ev, ConversationId(1), &routes);
        assert_eq!(
            msgs.iter().map(|m| m.performative).collect::<Vec<_>>(),
            vec![Performative::EndangermentNotice, Performative::RescheduleRequest]
        );
        // The same projection again: nothing new.
        assert_eq!(ingest(&mut r, &k, &d(31), 2).unwrap(), None);
        assert!(notify(&mut r, &ev, ConversationId(1), &routes).is_empty());

        let ev = ingest(&mut r, &k, &d(40), 3).unwrap().unwrap();
        assert_eq!(ev.severity, Severity::Major);
        let msgs = notify(&mut r, &ev, ConversationId(1), &routes);
        assert_eq!(
            msgs.iter().map(|m| m.performative).collect::<Vec<_>>(),
            vec![Performative::EndangermentNotice, Performative::RenegotiateRequest]
        );
        assert_eq!(r.status, TrackingStatus::Endangered);
        r.rebaseline(MilestonePlan::from_production(0, 20, 38, 2));
        assert_eq!(r.status, TrackingStatus::Recovered);
    }
}
