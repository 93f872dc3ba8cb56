#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use scmsim::messaging::{Envelope, Payload};
use scmsim::model::{ContractState, ConversationId, OrderId, OrderStatus};
use scmsim::negotiation::Phase;
use scmsim::planner::Interval;
use scmsim::scenario::{self, DisruptionSpec, ScenarioFile};
use scmsim::sim::{self, SimConfig, SimError, SimOutput};

#[derive(Debug, Clone)]
pub enum Upset {
    Outage { enterprise: usize, cell: usize, start: u64, len: u64 },
    Delay { order: u32, extra: u64, at: u64 },
}

fn upset() -> impl Strategy<Value = Upset> {
    prop_oneof![
        (1usize..4, 0usize..10, 0u64..60, 1u64..12).prop_map(|(enterprise, cell, start, len)| Upset::Outage { enterprise, cell, start, len }),
        (1u32..8, 1u64..20, 3u64..40).prop_map(|(order, extra, at)| Upset::Delay { order, extra, at }),
    ]
}

/// A bundled chain with its run section and capacity perturbed.
pub fn scenario() -> impl Strategy<Value = ScenarioFile> {
    (
        any::<bool>(),
        (0u64..1_000, 20u64..70),
        (0u64..3, 1u64..4, 6u64..50, 0u32..4),
        (1u64..8, 1u32..4, 0u64..6),
        1usize..6,
        proptest::collection::vec(upset(), 0..4),
    )
        .prop_map(|(auto, (seed, horizon), (latency, transit, due_offset, noise), (ttl, rounds, tolerance), keep, upsets)| {
            let mut sc = if auto { scenario::automotive() } else { scenario::two_echelon() };
            sc.seed = seed;
            sc.horizon = horizon;
            sc.params.latency = latency;
            sc.params.transit_time = transit;
            sc.params.quote_ttl = ttl;
            sc.params.max_rounds = rounds;
            sc.params.customer_tolerance = tolerance;
            sc.demand.due_offset = due_offset;
            sc.demand.noise = noise;
            let maker = &mut sc.enterprises[1];
            maker.cells.truncate(keep);
            let kept = maker.cells.clone();
            for r in &mut maker.routings {
                for op in &mut r.operations {
                    op.eligible_cells.retain(|c| kept.contains(c));
                    if op.eligible_cells.is_empty() {
                        op.eligible_cells = kept.iter().cloned().collect();
                    }
                }
            }
            for u in upsets {
                let d = match u {
                    Upset::Outage { enterprise, cell, start, len } => {
                        let e = &sc.enterprises[enterprise % sc.enterprises.len()];
                        if e.cells.is_empty() {
                            continue;
                        }
                        DisruptionSpec::CellDown {
                            enterprise: e.id.clone(),
                            cell: e.cells[cell % e.cells.len()].clone(),
                            interval: Interval::new(start % horizon, start % horizon + len),
                            at: None,
                        }
                    }
                    Upset::Delay { order, extra, at } => DisruptionSpec::ShipmentDelay { order: format!("O{order}"), extra, at: at % horizon },
                };
                sc.disruptions.push(d);
            }
            sc
        })
}

/// Runs a scenario; a disruption naming an order that never existed by its
/// tick is a legitimate refusal and yields `None`.
pub fn run(sc: &ScenarioFile) -> Option<SimOutput> {
    match sim::run(&SimConfig::from_scenario(sc), sc) {
        Ok(out) => Some(out),
        Err(SimError::UnknownTarget(_)) => None,
        Err(e) => panic!("{e}"),
    }
}

pub fn envelopes(out: &SimOutput) -> Vec<Envelope> {
    out.log.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn in_force(s: ContractState) -> bool {
    matches!(s, ContractState::Active | ContractState::Amended)
}

/// Every negotiation ends final within its round budget. Each opens by
/// asking its own planner, and every round gets a fresh quote lifetime, so
/// one ends at most `max_rounds * (ttl + 1)` ticks after it opened.
pub fn check_negotiations(sc: &ScenarioFile, out: &SimOutput) -> Result<(), TestCaseError> {
    let r = &out.report;
    let mut closed = BTreeSet::new();
    for n in &r.negotiations {
        prop_assert!(n.phase.is_final());
        prop_assert!((1..=n.max_rounds).contains(&n.rounds), "{:?}", n);
        prop_assert!(n.closed_at <= r.horizon);
        prop_assert!(closed.insert(n.conversation), "closed twice: {:?}", n);
    }
    let budget = u64::from(sc.params.max_rounds.max(1)) * (sc.params.quote_ttl + 1);
    let mut opened: BTreeMap<ConversationId, u64> = BTreeMap::new();
    for e in envelopes(out) {
        if matches!(e.payload, Payload::QuoteRequest { .. }) {
            opened.entry(e.conversation).or_insert(e.sent_at);
        }
    }
    for n in &r.negotiations {
        if let Some(at) = opened.get(&n.conversation) {
            prop_assert!(n.closed_at <= at + budget, "{:?} opened at {}", n, at);
        }
    }
    for (conv, at) in opened {
        if at + budget < r.horizon {
            prop_assert!(closed.contains(&conv), "conversation {} opened at {} never ended", conv, at);
        }
    }
    Ok(())
}

/// At most one contract in force per order; none left behind by a failed
/// negotiation or on a failed order.
pub fn check_contracts(out: &SimOutput) -> Result<(), TestCaseError> {
    let r = &out.report;
    let mut per_order: BTreeMap<&OrderId, u32> = BTreeMap::new();
    for e in &r.contracts {
        if in_force(e.current.state) {
            *per_order.entry(&e.current.order).or_default() += 1;
        }
    }
    prop_assert!(per_order.values().all(|&n| n == 1), "{:?}", per_order);

    let state: BTreeMap<_, _> = r.contracts.iter().map(|e| (e.current.id.clone(), e.current.state)).collect();
    let failed: BTreeSet<ConversationId> = r.negotiations.iter().filter(|n| n.phase == Phase::Failed).map(|n| n.conversation).collect();
    for e in envelopes(out) {
        if let (true, Payload::Award { contract, .. }) = (failed.contains(&e.conversation), &e.payload) {
            prop_assert!(!in_force(state[&contract.id]), "{} survives a failed negotiation", contract.id);
        }
    }
    for o in &r.orders {
        if matches!(o.status, OrderStatus::Failed | OrderStatus::Cancelled) {
            prop_assert!(!per_order.contains_key(&o.order), "{} ended {:?} but holds a contract", o.order, o.status);
        }
    }
    Ok(())
}
