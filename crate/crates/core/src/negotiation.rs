//! Inter-enterprise negotiation: scenario formulation, profit-based
//! selection, awarding and renegotiation.
//!
//! A negotiation runs in rounds. Within a round the phase only moves
//! forward: own quote, component supply vectors, selection, awarding, and
//! finally `Closed` or `Failed`. A rejected award restarts quoting in the
//! next round until `max_rounds` is spent.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messaging::{AgentId, Envelope, Payload, Performative};
use crate::model::{Cents, Contract, ContractId, ContractState, ConversationId, EnterpriseId, Order, OrderId, OrderStatus, ProductId, Tick};
use crate::planner::{PlanError, Quote};
use crate::tracking::EndangermentEvent;

pub const DEFAULT_QUOTE_TTL: Tick = 20;
pub const DEFAULT_MAX_ROUNDS: u32 = 3;
pub const DEFAULT_SCENARIO_CAP: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NegotiationError {
    #[error("order `{0}` is already being negotiated")]
    AlreadyNegotiating(OrderId),
    #[error("no feasible scenario for order `{0}`")]
    NoFeasibleScenario(OrderId),
    #[error("supplier `{0}` rejected the award")]
    AwardRejected(EnterpriseId),
    #[error("operation not allowed in phase {0:?}")]
    WrongPhase(Phase),
    #[error("contract `{0}` is not active")]
    IllegalTransition(ContractId),
}

/// A supplier's answer to a supply request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyVector {
    pub supplier: EnterpriseId,
    pub product: ProductId,
    pub quantity: u32,
    /// Price asked for the whole quantity.
    pub cost: Cents,
    pub completion: Tick,
    pub load: f64,
    /// Tick the vector was issued; it expires after the quote TTL.
    pub issued: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnProduction {
    pub start: Tick,
    pub completion: Tick,
    pub cost: Cents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub order: OrderId,
    pub component_sources: BTreeMap<ProductId, SupplyVector>,
    pub own_production: OwnProduction,
    pub total_cost: Cents,
    pub delivery: Tick,
}

impl Scenario {
    /// Lexicographic identity: chosen supplier per component, in component order.
    pub fn identity(&self) -> Vec<&EnterpriseId> {
        self.component_sources.values().map(|v| &v.supplier).collect()
    }

    /// Tick by which every component has arrived.
    pub fn components_ready(&self, transit: Tick) -> Tick {
        self.component_sources
            .values()
            .map(|v| v.completion + transit)
            .max()
            .unwrap_or(0)
    }
}

/// `price - total_cost - penalty_rate * lateness`.
pub fn profit(scenario: &Scenario, order: &Order, penalty_rate: Cents) -> Cents {
    let late = scenario.delivery.saturating_sub(order.due) as Cents;
    order.price - scenario.total_cost - penalty_rate * late
}

/// Builds the feasible scenarios for `order`.
///
/// Every combination of one supply vector per required component is timed:
/// own production starts once the last component has arrived (completion
/// plus `transit`), and delivery adds one more `transit` leg. Scenarios
/// delivering after the due date are dropped. At most `cap` remain, the
/// cheapest first; ties are broken by the supplier ids.
pub fn enumerate_scenarios<F>(
    order: &Order,
    mut own_quote: F,
    demand: &[(ProductId, u64)],
    vectors: &BTreeMap<ProductId, Vec<SupplyVector>>,
    transit: Tick,
    earliest_start: Tick,
    cap: usize,
) -> Vec<Scenario>
where
    F: FnMut(Tick) -> Result<Quote, PlanError>,
{
    let mut choices: Vec<(&ProductId, &[SupplyVector])> = Vec::with_capacity(demand.len());
    for (component, _) in demand {
        match vectors.get(component) {
            Some(v) if !v.is_empty() => choices.push((component, v.as_slice())),
            _ => return Vec::new(),
        }
    }

    let mut own_cache: BTreeMap<Tick, Option<Quote>> = BTreeMap::new();
    let mut out = Vec::new();
    let mut index = vec![0usize; choices.len()];
    loop {
        let sources: BTreeMap<ProductId, SupplyVector> = choices
            .iter()
            .zip(&index)
            .map(|((c, vs), &i)| ((*c).clone(), vs[i].clone()))
            .collect();
        let ready = sources
            .values()
            .map(|v| v.completion + transit)
            .max()
            .unwrap_or(0)
            .max(earliest_start);
        let own = *own_cache.entry(ready).or_insert_with(|| own_quote(ready).ok());
        if let Some(q) = own {
            let delivery = q.completion + transit;
            if delivery <= order.due {
                let total_cost = sources.values().map(|v| v.cost).sum::<Cents>() + q.cost;
                out.push(Scenario {
                    order: order.id.clone(),
                    component_sources: sources,
                    own_production: OwnProduction {
                        start: q.start,
                        completion: q.completion,
                        cost: q.cost,
                    },
                    total_cost,
                    delivery,
                });
            }
        }
        // Odometer over the choice sets.
        let mut k = choices.len();
        loop {
            if k == 0 {
                out.sort_by(|a, b| (a.total_cost, a.identity()).cmp(&(b.total_cost, b.identity())));
                out.truncate(cap);
                return out;
            }
            k -= 1;
            index[k] += 1;
            if index[k] < choices[k].1.len() {
                break;
            }
            index[k] = 0;
        }
    }
}

/// Most profitable scenario; ties prefer the later own-production start,
/// then the lexicographically smaller supplier assignment.
pub fn select_best(scenarios: &[Scenario], order: &Order, penalty_rate: Cents) -> Result<Scenario, NegotiationError> {
    scenarios
        .iter()
        .max_by(|a, b| {
            profit(a, order, penalty_rate)
                .cmp(&profit(b, order, penalty_rate))
                .then(a.own_production.start.cmp(&b.own_production.start))
                .then_with(|| b.identity().cmp(&a.identity()))
        })
        .cloned()
        .ok_or_else(|| NegotiationError::NoFeasibleScenario(order.id.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    QuotingOwn,
    QuotingComponents,
    Selecting,
    Awarding,
    Closed,
    Failed,
}

impl Phase {
    pub fn is_final(self) -> bool {
        matches!(self, Phase::Closed | Phase::Failed)
    }
}

/// Why a negotiation exists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Purpose {
    /// Fulfil an incoming order (or a lot of them).
    Fulfil,
    /// Replace a cancelled supply contract for one component of `parent`.
    Resource { parent: OrderId, component: ProductId, quantity: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationState {
    pub conversation: ConversationId,
    pub purpose: Purpose,
    /// Job order (lot lead for batches).
    pub order: OrderId,
    /// Orders covered: `[order]` unless negotiating a lot.
    pub members: Vec<OrderId>,
    pub phase: Phase,
    pub round: u32,
    pub max_rounds: u32,
    pub deadline: Tick,
    pub own_quote: Option<Quote>,
    pub vectors: BTreeMap<ProductId, Vec<SupplyVector>>,
    /// Supply requests still unanswered.
    pub awaiting: BTreeSet<(ProductId, EnterpriseId)>,
    pub selected: Option<Scenario>,
    /// Supply contracts drafted in the current round, by component.
    pub contracts: BTreeMap<ProductId, ContractId>,
    pub accepted: BTreeSet<ContractId>,
}

/// Starts a negotiation for a freshly arrived order: marks it as
/// negotiating and asks the enterprise's own planner for processing time
/// and cost.
pub fn initiate(
    order: &mut Order,
    conversation: ConversationId,
    now: Tick,
    negotiator: &AgentId,
    planner: &AgentId,
    ttl: Tick,
    max_rounds: u32,
) -> Result<(NegotiationState, Envelope), NegotiationError> {
    if order.status != OrderStatus::Requested {
        return Err(NegotiationError::AlreadyNegotiating(order.id.clone()));
    }
    order.status = OrderStatus::Negotiating;
    let state = NegotiationState::new(conversation, Purpose::Fulfil, order.id.clone(), vec![order.id.clone()], now, ttl, max_rounds);
    let env = state.own_quote_request(negotiator, planner, &order.product, order.quantity, now);
    Ok((state, env))
}

impl NegotiationState {
    pub fn new(
        conversation: ConversationId,
        purpose: Purpose,
        order: OrderId,
        members: Vec<OrderId>,
        now: Tick,
        ttl: Tick,
        max_rounds: u32,
    ) -> Self {
        Self {
            conversation,
            purpose,
            order,
            members,
            phase: Phase::QuotingOwn,
            round: 1,
            max_rounds: max_rounds.max(1),
            deadline: now + ttl,
            own_quote: None,
            vectors: BTreeMap::new(),
            awaiting: BTreeSet::new(),
            selected: None,
            contracts: BTreeMap::new(),
            accepted: BTreeSet::new(),
        }
    }

    pub fn own_quote_request(&self, negotiator: &AgentId, planner: &AgentId, product: &ProductId, quantity: u32, now: Tick) -> Envelope {
        Envelope::new(
            negotiator.clone(),
            planner.clone(),
            self.conversation,
            Performative::CallForQuote,
            Payload::QuoteRequest {
                order: self.order.clone(),
                product: product.clone(),
                quantity,
                earliest_start: now,
            },
        )
    }

    fn advance(&mut self, to: Phase) -> Result<(), NegotiationError> {
        if to < self.phase || self.phase.is_final() {
            return Err(NegotiationError::WrongPhase(self.phase));
        }
        self.phase = to;
        Ok(())
    }

    pub fn record_own_quote(&mut self, quote: Quote) -> Result<(), NegotiationError> {
        if self.phase != Phase::QuotingOwn {
            return Err(NegotiationError::WrongPhase(self.phase));
        }
        self.own_quote = Some(quote);
        self.advance(Phase::QuotingComponents)
    }

    /// Registers outstanding supply requests; with none the negotiation
    /// moves straight to selection.
    pub fn expect_vectors(&mut self, requests: impl IntoIterator<Item = (ProductId, EnterpriseId)>) -> Result<(), NegotiationError> {
        if self.phase != Phase::QuotingComponents {
            return Err(NegotiationError::WrongPhase(self.phase));
        }
        self.awaiting.extend(requests);
        if self.awaiting.is_empty() {
            self.advance(Phase::Selecting)?;
        }
        Ok(())
    }

    /// Records a supplier answer (`None` for a decline). Returns true once
    /// every request is answered.
    pub fn record_vector(&mut self, product: &ProductId, supplier: &EnterpriseId, vector: Option<SupplyVector>) -> bool {
        if self.phase != Phase::QuotingComponents || !self.awaiting.remove(&(product.clone(), supplier.clone())) {
            return false;
        }
        if let Some(v) = vector {
            self.vectors.entry(product.clone()).or_default().push(v);
        }
        if self.awaiting.is_empty() {
            self.phase = Phase::Selecting;
            true
        } else {
            false
        }
    }

    /// Moves a selected scenario into awarding and returns one draft per
    /// chosen supplier. Scenarios without components close immediately.
    pub fn award(
        &mut self,
        selected: Scenario,
        mut draft: impl FnMut(&ProductId, &SupplyVector) -> Contract,
    ) -> Result<Vec<Contract>, NegotiationError> {
        if self.phase != Phase::Selecting {
            return Err(NegotiationError::WrongPhase(self.phase));
        }
        let drafts: Vec<Contract> = selected
            .component_sources
            .iter()
            .map(|(c, v)| {
                let k = draft(c, v);
                self.contracts.insert(c.clone(), k.id.clone());
                k
            })
            .collect();
        self.selected = Some(selected);
        self.advance(Phase::Awarding)?;
        if drafts.is_empty() {
            self.advance(Phase::Closed)?;
        }
        Ok(drafts)
    }

    /// Returns true when the last outstanding award was accepted.
    pub fn on_accept(&mut self, contract: &ContractId) -> bool {
        if self.phase != Phase::Awarding || !self.contracts.values().any(|c| c == contract) {
            return false;
        }
        self.accepted.insert(contract.clone());
        if self.accepted.len() == self.contracts.len() {
            self.phase = Phase::Closed;
            true
        } else {
            false
        }
    }

    /// A supplier rejected. Either a new round starts (returns the
    /// contracts already accepted, which the caller must cancel) or the
    /// negotiation fails.
    pub fn on_reject(&mut self, supplier: &EnterpriseId) -> Result<Vec<ContractId>, NegotiationError> {
        if self.phase != Phase::Awarding {
            return Err(NegotiationError::WrongPhase(self.phase));
        }
        let accepted: Vec<ContractId> = self.accepted.iter().cloned().collect();
        self.reset_round();
        if self.round >= self.max_rounds {
            self.phase = Phase::Failed;
            return Err(NegotiationError::AwardRejected(supplier.clone()));
        }
        self.round += 1;
        self.phase = Phase::QuotingOwn;
        Ok(accepted)
    }

    fn reset_round(&mut self) {
        self.own_quote = None;
        self.vectors.clear();
        self.awaiting.clear();
        self.selected = None;
        self.contracts.clear();
        self.accepted.clear();
    }

    /// No-op on a negotiation that already ended.
    pub fn fail(&mut self) -> Vec<ContractId> {
        if self.phase.is_final() {
            return Vec::new();
        }
        let accepted = self.accepted.iter().cloned().collect();
        self.reset_round();
        self.phase = Phase::Failed;
        accepted
    }
}

/// Seller's counter-proposal after a major endangerment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmendProposal {
    pub new_due: Tick,
    pub new_price: Cents,
    pub slip: Tick,
}

/// New due date = projected delivery; the price drops by the penalty for
/// the slip.
pub fn renegotiate(contract: &Contract, endangerment: &EndangermentEvent) -> Result<AmendProposal, NegotiationError> {
    if contract.state != ContractState::Active {
        return Err(NegotiationError::IllegalTransition(contract.id.clone()));
    }
    let slip = endangerment.projected_delivery.saturating_sub(contract.agreed_due);
    Ok(AmendProposal {
        new_due: contract.agreed_due + slip,
        new_price: (contract.agreed_price - contract.penalty_rate * slip as Cents).max(0),
        slip,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmendDecision {
    Accept,
    Cancel,
}

/// The buyer takes the amendment when the slip fits its downstream slack.
pub fn decide_amendment(proposal: &AmendProposal, downstream_slack: Tick) -> AmendDecision {
    if proposal.slip <= downstream_slack {
        AmendDecision::Accept
    } else {
        AmendDecision::Cancel
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{contract_transition, ContractEvent};
    use crate::tracking::{Cause, Severity};

    fn order(due: Tick, price: Cents) -> Order {
        Order {
            id: OrderId::new("O1"),
            customer: EnterpriseId::new("market"),
            supplier: EnterpriseId::new("oem"),
            product: ProductId::new("car"),
            quantity: 1,
            due,
            price,
            parent: None,
            status: OrderStatus::Requested,
            created: 0,
        }
    }

    fn sv(supplier: &str, product: &str, cost: Cents, completion: Tick) -> SupplyVector {
        SupplyVector {
            supplier: EnterpriseId::new(supplier),
            product: ProductId::new(product),
            quantity: 1,
            cost,
            completion,
            load: 0.0,
            issued: 0,
        }
    }

    fn flat_quote(duration: Tick, cost: Cents) -> impl FnMut(Tick) -> Result<Quote, PlanError> {
        move |t| Ok(Quote { start: t, completion: t + duration, cost })
    }

    fn vectors(items: Vec<SupplyVector>) -> BTreeMap<ProductId, Vec<SupplyVector>> {
        let mut m: BTreeMap<ProductId, Vec<SupplyVector>> = BTreeMap::new();
        for v in items {
            m.entry(v.product.clone()).or_default().push(v);
        }
        m
    }

    #[test]
    fn scenario_counts_are_products_of_choice_sets() {
        let o = order(100, 10_000);
        let vs = vectors(vec![sv("a", "tyre", 10, 2), sv("b", "tyre", 12, 3)]);
        let demand = vec![(ProductId::new("tyre"), 4)];
        assert_eq!(enumerate_scenarios(&o, flat_quote(5, 100), &demand, &vs, 1, 0, 100).len(), 2);

        let vs = vectors(vec![
            sv("a", "tyre", 10, 2),
            sv("b", "tyre", 12, 3),
            sv("c", "chassis", 30, 4),
            sv("d", "chassis", 31, 1),
            sv("e", "chassis", 29, 6),
        ]);
        let demand = vec![(ProductId::new("chassis"), 1), (ProductId::new("tyre"), 4)];
        let all = enumerate_scenarios(&o, flat_quote(5, 100), &demand, &vs, 1, 0, 100);
        assert_eq!(all.len(), 6);
        let s = &all[0];
        assert!(s.delivery >= s.own_production.completion);
        assert!(s.own_production.start >= s.components_ready(1));
        assert_eq!(s.total_cost, s.component_sources.values().map(|v| v.cost).sum::<Cents>() + 100);

        // Missing quotes for a required component: nothing is feasible.
        let demand = vec![(ProductId::new("wheel"), 1)];
        assert!(enumerate_scenarios(&o, flat_quote(5, 100), &demand, &vs, 1, 0, 100).is_empty());
    }

    #[test]
    fn cap_keeps_cheapest_like_full_enumeration() {
        let o = order(100, 10_000);
        let vs = vectors(vec![
            sv("a", "tyre", 10, 2),
            sv("b", "tyre", 12, 3),
            sv("c", "chassis", 30, 4),
            sv("d", "chassis", 31, 1),
            sv("e", "chassis", 29, 6),
        ]);
        let demand = vec![(ProductId::new("chassis"), 1), (ProductId::new("tyre"), 4)];
        // Oracle: every pairing by hand, sorted by cost then supplier ids.
        let mut oracle = vec![];
        for (c, cc) in [("c", 30), ("d", 31), ("e", 29)] {
            for (t, tc) in [("a", 10), ("b", 12)] {
                oracle.push((cc + tc + 100, vec![c.to_string(), t.to_string()]));
            }
        }
        oracle.sort();
        oracle.truncate(4);
        let got: Vec<_> = enumerate_scenarios(&o, flat_quote(5, 100), &demand, &vs, 1, 0, 4)
            .into_iter()
            .map(|s| (s.total_cost, s.identity().into_iter().map(|e| e.0.clone()).collect::<Vec<_>>()))
            .collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn late_scenarios_are_discarded() {
        let o = order(10, 10_000);
        let vs = vectors(vec![sv("a", "tyre", 10, 2), sv("b", "tyre", 5, 9)]);
        let demand = vec![(ProductId::new("tyre"), 1)];
        let s = enumerate_scenarios(&o, flat_quote(3, 0), &demand, &vs, 1, 0, 100);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].identity(), vec![&EnterpriseId::new("a")]);
    }

    fn scenario(cost: Cents, start: Tick, supplier: &str) -> Scenario {
        Scenario {
            order: OrderId::new("O1"),
            component_sources: [(ProductId::new("tyre"), sv(supplier, "tyre", 0, 0))].into(),
            own_production: OwnProduction { start, completion: start + 1, cost: 0 },
            total_cost: cost,
            delivery: start + 2,
        }
    }

    #[test]
    fn select_best_examples() {
        let o = order(100, 1_000);
        assert_eq!(select_best(&[], &o, 10), Err(NegotiationError::NoFeasibleScenario(o.id.clone())));
        let one = scenario(10, 1, "a");
        assert_eq!(select_best(&[one.clone()], &o, 10).unwrap(), one);

        let cands = [scenario(300, 1, "a"), scenario(200, 1, "b"), scenario(250, 1, "c")];
        // Brute-force profit evaluation.
        let best = cands.iter().max_by_key(|s| 1_000 - s.total_cost).unwrap();
        assert_eq!(&select_best(&cands, &o, 10).unwrap(), best);

        let tie = [scenario(200, 4, "a"), scenario(200, 7, "b")];
        assert_eq!(select_best(&tie, &o, 10).unwrap().own_production.start, 7);
        let tie = [scenario(200, 4, "b"), scenario(200, 4, "a")];
        assert_eq!(select_best(&tie, &o, 10).unwrap().identity(), vec![&EnterpriseId::new("a")]);

        let mut late = scenario(100, 1, "a");
        late.delivery = 150;
        let on_time = scenario(500, 1, "b");
        // 1000-100-10*50 = 400 vs 1000-500 = 500.
        assert_eq!(select_best(&[late, on_time.clone()], &o, 10).unwrap(), on_time);
    }

    fn state() -> NegotiationState {
        NegotiationState::new(ConversationId(1), Purpose::Fulfil, OrderId::new("O1"), vec![OrderId::new("O1")], 0, 20, 3)
    }

    #[test]
    fn initiate_once() {
        let mut o = order(100, 1_000);
        let (st, env) = initiate(&mut o, ConversationId(1), 0, &AgentId::new("oem/negotiator"), &AgentId::new("oem/planner"), 20, 3).unwrap();
        assert_eq!(st.phase, Phase::QuotingOwn);
        assert_eq!(env.performative, Performative::CallForQuote);
        assert_eq!(o.status, OrderStatus::Negotiating);
        assert!(matches!(
            initiate(&mut o, ConversationId(2), 0, &AgentId::new("oem/negotiator"), &AgentId::new("oem/planner"), 20, 3),
            Err(NegotiationError::AlreadyNegotiating(_))
        ));
    }

    #[test]
    fn award_retry_and_failure() {
        let mut st = state();
        let mut n = 0;
        let mut award_once = |st: &mut NegotiationState| {
            st.record_own_quote(Quote { start: 0, completion: 1, cost: 0 }).unwrap();
            st.expect_vectors([(ProductId::new("tyre"), EnterpriseId::new("a"))]).unwrap();
            assert!(st.record_vector(&"tyre".into(), &"a".into(), Some(sv("a", "tyre", 1, 1))));
            st.award(scenario(1, 1, "a"), |_, v| {
                n += 1;
                Contract::draft(ContractId::new(format!("K{n}")), OrderId::new("S1"), "oem".into(), v.supplier.clone(), 5, 10, None, 0)
            })
            .unwrap()
        };
        assert_eq!(award_once(&mut st).len(), 1);
        assert_eq!(st.phase, Phase::Awarding);
        assert_eq!(st.on_reject(&"a".into()), Ok(vec![]));
        assert_eq!((st.phase, st.round), (Phase::QuotingOwn, 2));
        assert_eq!(st.on_reject(&"a".into()), Err(NegotiationError::WrongPhase(Phase::QuotingOwn)));
        assert_eq!((st.phase, st.round), (Phase::QuotingOwn, 2));
        st.round = 3;
        award_once(&mut st);
        assert!(st.on_reject(&"a".into()).is_err());
        assert_eq!(st.phase, Phase::Failed);
        assert!(st.record_own_quote(Quote { start: 0, completion: 0, cost: 0 }).is_err());
    }

    #[test]
    fn renegotiation_rules() {
        let k = Contract::draft(ContractId::new("K1"), OrderId::new("O1"), "oem".into(), "tyres".into(), 20, 1_000, Some(10), 0);
        let active = contract_transition(&k, &ContractEvent::Accept).unwrap();
        let ev = |projected| EndangermentEvent {
            order: OrderId::new("O1"),
            detected_at: 5,
            projected_delivery: projected,
            slip: projected - 20,
            severity: Severity::Major,
            cause: Cause::MilestoneMissed,
        };
        let p = renegotiate(&active, &ev(23)).unwrap();
        assert_eq!(p, AmendProposal { new_due: 23, new_price: 970, slip: 3 });
        assert_eq!(decide_amendment(&p, 5), AmendDecision::Accept);
        let amended = contract_transition(&active, &ContractEvent::Amend { new_due: p.new_due, new_price: p.new_price }).unwrap();
        assert_eq!(amended.version, 2);
        let p = renegotiate(&active, &ev(28)).unwrap();
        assert_eq!(decide_amendment(&p, 5), AmendDecision::Cancel);
        let done = contract_transition(&active, &ContractEvent::Fulfill).unwrap();
        assert!(matches!(renegotiate(&done, &ev(23)), Err(NegotiationError::IllegalTransition(_))));
    }
}
