use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::engine::Engine;
use super::metrics::Bullwhip;
use crate::model::{contract_transition, Cents, Contract, ContractEvent, ConversationId, EnterpriseId, ModelError, OrderId, OrderStatus, Tick};
use crate::negotiation::Phase;
use crate::tracing::{analyze, HistoryStore, PatternReport};

/// Version of the report layout.
pub const REPORT_FORMAT: u32 = 1;

/// One contract with its full event history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub draft: Contract,
    pub events: Vec<(Tick, ContractEvent)>,
    pub current: Contract,
}

impl LedgerEntry {
    pub fn new(draft: Contract) -> Self {
        Self { current: draft.clone(), draft, events: Vec::new() }
    }

    pub fn apply(&mut self, event: ContractEvent, at: Tick) -> Result<Contract, ModelError> {
        self.current = contract_transition(&self.current, &event)?;
        self.events.push((at, event));
        Ok(self.current.clone())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub revenue: Cents,
    pub purchases: Cents,
    pub production_cost: Cents,
    pub penalties_paid: Cents,
    pub penalties_received: Cents,
}

impl Account {
    pub fn profit(&self) -> Cents {
        self.revenue + self.penalties_received - self.purchases - self.production_cost - self.penalties_paid
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegotiationSummary {
    pub enterprise: EnterpriseId,
    pub conversation: ConversationId,
    pub order: OrderId,
    /// Replacement of a cancelled supply rather than a new order.
    pub resource: bool,
    pub phase: Phase,
    pub rounds: u32,
    pub max_rounds: u32,
    pub closed_at: Tick,
}

/// Fate of one end-customer order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderOutcome {
    pub order: OrderId,
    /// First order of the replacement chain this order belongs to.
    pub root: OrderId,
    pub quantity: u32,
    pub created: Tick,
    pub requested_due: Tick,
    /// Due date of the first contract version.
    pub contracted_due: Option<Tick>,
    pub current_due: Option<Tick>,
    pub delivered_at: Option<Tick>,
    pub slip: Option<i64>,
    pub status: OrderStatus,
    pub replaced_by: Option<OrderId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FulfilmentMetrics {
    /// Demand orders whose requested due date lies within the horizon.
    pub measured: u64,
    pub on_time: u64,
    pub fill_rate: f64,
    pub delivered: u64,
    pub mean_lateness: f64,
    pub max_lateness: Tick,
    pub failed: Vec<OrderId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BullwhipEntry {
    pub ratio: Option<f64>,
    /// Why `ratio` is null.
    pub flag: Option<String>,
}

/// Units of end-customer demand by where they are at the horizon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub demanded: u64,
    pub delivered: u64,
    pub in_transit: u64,
    /// Contracted, being made, or still under negotiation.
    pub in_production: u64,
    pub failed: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.demanded == self.delivered + self.in_transit + self.in_production + self.failed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitReport {
    pub enterprises: BTreeMap<EnterpriseId, Account>,
    pub chain: Cents,
    pub external_revenue: Cents,
    pub production_cost: Cents,
    pub external_penalties: Cents,
}

impl ProfitReport {
    /// Chain profit equals revenue from the end customer minus all
    /// production cost and the penalties paid to the end customer.
    pub fn identity_holds(&self) -> bool {
        self.chain == self.external_revenue - self.production_cost - self.external_penalties
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub format: u32,
    pub seed: u64,
    pub config_digest: String,
    pub horizon: Tick,
    pub orders: Vec<OrderOutcome>,
    pub metrics: FulfilmentMetrics,
    pub profit: ProfitReport,
    pub bullwhip: BTreeMap<EnterpriseId, BullwhipEntry>,
    pub contracts: Vec<LedgerEntry>,
    pub negotiations: Vec<NegotiationSummary>,
    pub conservation: Conservation,
    pub messages: BTreeMap<String, u64>,
    pub tracing: PatternReport,
    pub history: HistoryStore,
}

impl SimulationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

fn order_number(id: &OrderId) -> u64 {
    id.as_str()[1..].parse().unwrap_or(u64::MAX)
}

pub(super) fn build(e: &Engine) -> SimulationReport {
    let horizon = e.cfg.horizon;
    let mut customer_orders: Vec<_> = e.orders.values().filter(|o| o.customer == e.customer).collect();
    customer_orders.sort_by_key(|o| order_number(&o.id));
    let root_of = |id: &OrderId| -> OrderId {
        let mut cur = id.clone();
        while let Some((old, _)) = e.replaced_by.iter().find(|(_, new)| **new == cur) {
            cur = old.clone();
        }
        cur
    };

    let orders: Vec<OrderOutcome> = customer_orders
        .iter()
        .map(|o| {
            let entry = e.order_contract.get(&o.id).map(|k| &e.ledger[k]);
            let delivered_at = (o.status == OrderStatus::Delivered)
                .then(|| entry.and_then(|l| l.events.iter().find(|(_, ev)| *ev == ContractEvent::Fulfill).map(|(t, _)| *t)))
                .flatten();
            let contracted_due = entry.map(|l| l.draft.agreed_due);
            OrderOutcome {
                order: o.id.clone(),
                root: root_of(&o.id),
                quantity: o.quantity,
                created: o.created,
                requested_due: o.due,
                contracted_due,
                current_due: entry.map(|l| l.current.agreed_due),
                delivered_at,
                slip: delivered_at.zip(contracted_due).map(|(d, c)| d as i64 - c as i64),
                status: o.status,
                replaced_by: e.replaced_by.get(&o.id).cloned(),
            }
        })
        .collect();

    // Fill rate: demand orders due within the horizon, delivered by the
    // due date of their first contract.
    let by_id: BTreeMap<&OrderId, &OrderOutcome> = orders.iter().map(|o| (&o.order, o)).collect();
    let final_of = |root: &OrderId| -> &OrderOutcome {
        let mut cur = root.clone();
        while let Some(n) = e.replaced_by.get(&cur) {
            cur = n.clone();
        }
        by_id[&cur]
    };
    let roots: Vec<&OrderOutcome> = orders.iter().filter(|o| o.root == o.order).collect();
    let measured: Vec<&&OrderOutcome> = roots.iter().filter(|o| o.requested_due <= horizon).collect();
    let on_time = measured
        .iter()
        .filter(|o| {
            let last = final_of(&o.order);
            matches!((last.delivered_at, o.contracted_due), (Some(d), Some(c)) if d <= c)
        })
        .count() as u64;
    let lateness: Vec<Tick> = roots
        .iter()
        .filter_map(|o| {
            let last = final_of(&o.order);
            let due = o.contracted_due.or(last.contracted_due)?;
            Some(last.delivered_at?.saturating_sub(due))
        })
        .collect();
    let metrics = FulfilmentMetrics {
        measured: measured.len() as u64,
        on_time,
        fill_rate: if measured.is_empty() { 1.0 } else { on_time as f64 / measured.len() as f64 },
        delivered: lateness.len() as u64,
        mean_lateness: if lateness.is_empty() { 0.0 } else { lateness.iter().sum::<Tick>() as f64 / lateness.len() as f64 },
        max_lateness: lateness.iter().copied().max().unwrap_or(0),
        failed: roots
            .iter()
            .filter(|o| matches!(final_of(&o.order).status, OrderStatus::Failed | OrderStatus::Cancelled))
            .map(|o| o.order.clone())
            .collect(),
    };

    // Profit.
    let enterprises: BTreeMap<EnterpriseId, Account> = e.ents.iter().map(|(id, x)| (id.clone(), x.account)).collect();
    let mut external_revenue = 0;
    let mut external_penalties = 0;
    for l in e.ledger.values() {
        if l.current.buyer != e.customer || l.current.state != crate::model::ContractState::Fulfilled {
            continue;
        }
        external_revenue += l.current.agreed_price;
        let at = l.events.iter().find(|(_, ev)| *ev == ContractEvent::Fulfill).map_or(0, |(t, _)| *t);
        external_penalties += l.current.penalty_rate * at.saturating_sub(l.current.agreed_due) as Cents;
    }
    let profit = ProfitReport {
        chain: enterprises.values().map(Account::profit).sum(),
        production_cost: enterprises.values().map(|a| a.production_cost).sum(),
        enterprises,
        external_revenue,
        external_penalties,
    };

    let bullwhip = e
        .series
        .bullwhip()
        .into_iter()
        .map(|(id, r)| {
            let entry = match r {
                Ok(Bullwhip::Ratio { value }) => BullwhipEntry { ratio: Some(value), flag: None },
                Ok(Bullwhip::Undefined) => BullwhipEntry { ratio: None, flag: Some("undefined".into()) },
                Err(err) => BullwhipEntry { ratio: None, flag: Some(err.to_string()) },
            };
            (id, entry)
        })
        .collect();

    // Conservation over demand roots, each counted by its final order.
    let mut cons = Conservation { demanded: e.series.demand.iter().sum(), ..Default::default() };
    for r in &roots {
        let last = final_of(&r.order);
        let q = u64::from(r.quantity);
        let in_transit = e.shipments.iter().any(|s| s.order == last.order);
        match last.status {
            OrderStatus::Delivered => cons.delivered += q,
            OrderStatus::Failed | OrderStatus::Cancelled => cons.failed += q,
            OrderStatus::Shipped if in_transit => cons.in_transit += q,
            _ => cons.in_production += q,
        }
    }

    let mut messages = BTreeMap::new();
    for env in e.post.log() {
        *messages.entry(format!("{:?}", env.performative)).or_insert(0u64) += 1;
    }

    SimulationReport {
        format: REPORT_FORMAT,
        seed: e.cfg.seed,
        config_digest: e.digest.clone(),
        horizon,
        orders,
        metrics,
        profit,
        bullwhip,
        contracts: e.ledger.values().cloned().collect(),
        negotiations: e.negotiation_log.clone(),
        conservation: cons,
        messages,
        tracing: analyze(&e.history),
        history: e.history.clone(),
    }
}
