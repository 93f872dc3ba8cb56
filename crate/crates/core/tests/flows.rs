use scmsim::messaging::{Envelope, Payload, Performative};
use scmsim::model::{OrderId, OrderStatus, Tick};
use scmsim::planner::Interval;
use scmsim::scenario::{self, DisruptionSpec, ScenarioFile};
use scmsim::sim::{run, Engine, SimConfig, SimError};
use scmsim::tracking::{default_threshold, Severity};

use Performative::*;

fn engine(s: &ScenarioFile) -> Engine {
    Engine::new(&SimConfig::from_scenario(s), s).unwrap()
}

/// Steps until some end-customer order is in `status`; the engine is left
/// at the start of the following tick.
fn until(e: &mut Engine, status: OrderStatus) -> OrderId {
    for t in e.now()..200 {
        e.step(t).unwrap();
        let hit = e.orders().values().find(|o| o.customer.as_str() == "market" && o.status == status);
        if let Some(o) = hit {
            return o.id.clone();
        }
    }
    panic!("no order reached {status:?}");
}

fn subject(env: &Envelope) -> Option<&OrderId> {
    match &env.payload {
        Payload::Endangerment { event, .. } => Some(&event.order),
        Payload::Amendment { order, .. } | Payload::Contract { order, .. } | Payload::Schedule { order, .. } => Some(order),
        _ => None,
    }
}

const REACTIONS: [Performative; 7] = [EndangermentNotice, RescheduleRequest, RenegotiateRequest, Amend, Accept, Cancel, Confirm];

/// Exception-handling messages about `order`, in log order.
fn reactions(log: &[Envelope], order: &OrderId) -> Vec<Performative> {
    log.iter()
        .filter(|m| REACTIONS.contains(&m.performative) && subject(m) == Some(order))
        .filter(|m| !matches!(m.payload, Payload::ContractTerms { .. }))
        .map(|m| m.performative)
        .collect()
}

fn threshold(e: &Engine, order: &OrderId) -> Tick {
    let c = e.contracts().find(|c| &c.order == order).unwrap();
    default_threshold(c.lead_time())
}

fn run_on(e: &mut Engine, ticks: Tick) {
    let now = e.now();
    for t in now..now + ticks {
        e.step(t).unwrap();
    }
}

#[test]
fn delay_within_threshold_reschedules() {
    let s = scenario::automotive();
    let mut e = engine(&s);
    let id = until(&mut e, OrderStatus::Shipped);
    let theta = threshold(&e, &id);
    let mark = e.log().len();
    let events = e
        .inject_disruption(&DisruptionSpec::ShipmentDelay { order: id.to_string(), extra: theta, at: e.now() })
        .unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].severity, Severity::Minor);
    run_on(&mut e, 10);
    assert_eq!(reactions(&e.log()[mark..], &id), [EndangermentNotice, RescheduleRequest, Confirm]);
}

#[test]
fn delay_beyond_threshold_renegotiates() {
    let s = scenario::automotive();
    let mut e = engine(&s);
    let id = until(&mut e, OrderStatus::Shipped);
    let theta = threshold(&e, &id);
    let mark = e.log().len();
    let events = e
        .inject_disruption(&DisruptionSpec::ShipmentDelay { order: id.to_string(), extra: theta + 1, at: e.now() })
        .unwrap();
    assert_eq!(events[0].severity, Severity::Major);
    run_on(&mut e, 10);
    let seen = reactions(&e.log()[mark..], &id);
    assert_eq!(seen[..3], [EndangermentNotice, RenegotiateRequest, Amend]);
    assert!(matches!(seen[3..], [Accept] | [Cancel]), "{seen:?}");
    let c = e.contracts().find(|c| c.order == id).unwrap();
    if seen[3] == Accept {
        assert_eq!(c.version, 2);
    }
}

#[test]
fn amendment_beyond_customer_slack_is_cancelled() {
    let mut s = scenario::automotive();
    s.demand.due_offset = 14;
    let mut e = engine(&s);
    let id = until(&mut e, OrderStatus::Shipped);
    let mark = e.log().len();
    e.inject_disruption(&DisruptionSpec::ShipmentDelay { order: id.to_string(), extra: 30, at: e.now() })
        .unwrap();
    run_on(&mut e, 2);
    let seen = reactions(&e.log()[mark..], &id);
    assert_eq!(seen, [EndangermentNotice, RenegotiateRequest, Amend, Cancel]);
    assert_eq!(e.orders()[&id].status, OrderStatus::Cancelled);
}

#[test]
fn clean_runs_raise_nothing() {
    for s in [scenario::automotive(), scenario::two_echelon()] {
        let out = run(&SimConfig::from_scenario(&s), &s).unwrap();
        for p in [EndangermentNotice, RescheduleRequest, RenegotiateRequest, Amend, Cancel] {
            assert_eq!(out.report.messages.get(&format!("{p:?}")), None, "{p:?}");
        }
    }
}

#[test]
fn outage_on_idle_cell_is_silent() {
    let s = scenario::automotive();
    let mut e = engine(&s);
    run_on(&mut e, 3);
    let events = e
        .inject_disruption(&DisruptionSpec::CellDown {
            enterprise: "oem".into(),
            cell: "test_bench".into(),
            interval: Interval::new(200, 210),
            at: None,
        })
        .unwrap();
    assert!(events.is_empty());
}

#[test]
fn outage_under_a_booking_reschedules_in_order() {
    let s = scenario::automotive();
    let mut e = engine(&s);
    until(&mut e, OrderStatus::InProduction);
    let now = e.now();
    // Next test-bench booking that has not started yet.
    let b = e.shop(&"oem".into()).unwrap().cells["test_bench"]
        .bookings
        .iter()
        .filter(|b| b.interval.start > now)
        .min_by_key(|b| b.interval.start)
        .cloned()
        .expect("pending booking");
    let mark = e.log().len();
    let events = e
        .inject_disruption(&DisruptionSpec::CellDown {
            enterprise: "oem".into(),
            cell: "test_bench".into(),
            interval: Interval::new(b.interval.start, b.interval.start + 1),
            at: None,
        })
        .unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].severity, Severity::Minor);
    let id = events[0].order.clone();
    run_on(&mut e, 2);
    assert_eq!(reactions(&e.log()[mark..], &id), [EndangermentNotice, RescheduleRequest, Confirm]);
}

#[test]
fn unknown_targets_are_rejected() {
    let s = scenario::automotive();
    let mut e = engine(&s);
    let err = e.inject_disruption(&DisruptionSpec::ShipmentDelay { order: "O999".into(), extra: 1, at: 0 });
    assert!(matches!(err, Err(SimError::UnknownTarget(_))));
    let err = e.inject_disruption(&DisruptionSpec::CellDown {
        enterprise: "oem".into(),
        cell: "lathe_9".into(),
        interval: Interval::new(1, 2),
        at: None,
    });
    assert!(matches!(err, Err(SimError::UnknownTarget(_))));
}

#[test]
fn zero_horizon_is_empty() {
    let mut s = scenario::automotive();
    s.horizon = 0;
    let out = run(&SimConfig::from_scenario(&s), &s).unwrap();
    assert!(out.report.orders.is_empty());
    assert!(out.log.is_empty());
    assert_eq!(out.report.metrics.fill_rate, 1.0);
    assert!(out.report.conservation.holds());
}
