use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::EchelonSeries;
use super::report::{self, Account, LedgerEntry, NegotiationSummary};
use super::{SimConfig, SimError, SimOutput};
use crate::messaging::{AgentId, Envelope, NetworkModel, Payload, Performative, PostOffice};
use crate::model::{
    BomRegistry, Cents, Contract, ContractEvent, ContractId, ConversationId, EnterpriseId, Order, OrderId,
    OrderStatus, ProductId, Tick,
};
use crate::negotiation::{AmendProposal, NegotiationState};
use crate::planner::{reschedule, Disruption, PlannerPolicy, Shop};
use crate::scenario::{DisruptionSpec, EnterpriseSpec, ProductSpec, Role, ScenarioFile, SupplyRelation};
use crate::tracing::HistoryStore;
use crate::tracking::{
    ingest, notify, Cause, EndangermentEvent, FinalizedRecord, MilestoneKind, MilestonePlan, NotifyRoutes,
    TrackingInput, TrackingStore,
};

/// Upper bound on message sub-rounds within one tick.
const MAX_SUBROUNDS: usize = 100_000;

/// How an order reached its supplier, and where replies go.
#[derive(Debug, Clone)]
pub(super) enum Origin {
    Customer { agent: AgentId, conversation: ConversationId },
    Award { agent: AgentId, conversation: ConversationId, contract: ContractId },
}

impl Origin {
    pub(super) fn agent(&self) -> &AgentId {
        match self {
            Origin::Customer { agent, .. } | Origin::Award { agent, .. } => agent,
        }
    }

    pub(super) fn conversation(&self) -> ConversationId {
        match self {
            Origin::Customer { conversation, .. } | Origin::Award { conversation, .. } => *conversation,
        }
    }
}

/// An open negotiation plus the aggregate it negotiates for.
#[derive(Debug, Clone)]
pub(super) struct Neg {
    pub state: NegotiationState,
    pub product: ProductId,
    pub quantity: u32,
    pub due: Tick,
    pub price: Cents,
    pub demand: Vec<(ProductId, u64)>,
}

#[derive(Debug, Clone)]
pub(super) struct JobInfo {
    pub members: Vec<OrderId>,
    pub started: bool,
    pub finished: bool,
}

/// A component bought for one of our jobs.
#[derive(Debug, Clone)]
pub(super) struct Purchase {
    pub suborder: OrderId,
    pub job: OrderId,
    pub component: ProductId,
    pub quantity: u32,
    pub expected_arrival: Tick,
    pub arrived: bool,
}

#[derive(Debug, Clone, Default)]
pub(super) struct LotBuffer {
    pub first: Tick,
    pub quantity: u32,
    pub orders: Vec<OrderId>,
}

#[derive(Debug)]
pub(super) struct Ent {
    pub spec: EnterpriseSpec,
    pub shop: Shop,
    pub negotiations: BTreeMap<ConversationId, Neg>,
    pub jobs: BTreeMap<OrderId, JobInfo>,
    pub tracking: TrackingStore,
    pub origins: BTreeMap<OrderId, Origin>,
    pub buffers: BTreeMap<ProductId, LotBuffer>,
    pub purchases: BTreeMap<ContractId, Purchase>,
    /// Our awards still waiting for an answer, by contract.
    pub awards: BTreeMap<ContractId, ConversationId>,
    /// Supply vectors we issued, by (buyer job, product, buyer).
    pub quotes_issued: BTreeMap<(OrderId, ProductId, EnterpriseId), Tick>,
    pub proposals: BTreeMap<ContractId, AmendProposal>,
    /// Extra transit announced for orders not yet shipped.
    pub pending_delay: BTreeMap<OrderId, Tick>,
    /// Bookings whose cost has been incurred: (order, op, cell, start).
    pub charged: BTreeSet<(OrderId, usize, String, Tick)>,
    pub account: Account,
}

impl Ent {
    pub(super) fn job_of(&self, order: &OrderId) -> Option<OrderId> {
        self.jobs
            .iter()
            .find(|(_, j)| j.members.contains(order))
            .map(|(id, _)| id.clone())
    }

    pub(super) fn purchases_of<'a>(&'a self, job: &'a OrderId) -> impl Iterator<Item = (&'a ContractId, &'a Purchase)> + 'a {
        self.purchases.iter().filter(move |(_, p)| &p.job == job)
    }
}

/// Goods on their way from seller to buyer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shipment {
    pub order: OrderId,
    pub seller: EnterpriseId,
    pub buyer: EnterpriseId,
    pub quantity: u32,
    pub arrival: Tick,
}

/// Whole-chain simulation state.
#[derive(Debug)]
pub struct Engine {
    pub(super) cfg: SimConfig,
    pub(super) digest: String,
    pub(super) now: Tick,
    pub(super) ents: BTreeMap<EnterpriseId, Ent>,
    pub(super) customer: EnterpriseId,
    pub(super) bom: BomRegistry,
    pub(super) products: BTreeMap<ProductId, ProductSpec>,
    pub(super) suppliers: Vec<SupplyRelation>,
    pub(super) orders: BTreeMap<OrderId, Order>,
    pub(super) order_contract: BTreeMap<OrderId, ContractId>,
    pub(super) ledger: BTreeMap<ContractId, LedgerEntry>,
    pub(super) post: PostOffice,
    rng: ChaCha8Rng,
    pub(super) shipments: Vec<Shipment>,
    pub(super) history: HistoryStore,
    pub(super) series: EchelonSeries,
    /// Customer orders cancelled and placed again.
    pub(super) replaced_by: BTreeMap<OrderId, OrderId>,
    pub(super) negotiation_log: Vec<NegotiationSummary>,
    next_order: u64,
    next_contract: u64,
    finished: bool,
}

impl Engine {
    pub fn new(config: &SimConfig, scenario: &ScenarioFile) -> Result<Self, SimError> {
        let full = config.apply_to(scenario);
        full.validate()?;
        let bom = full.bom().map_err(|e| SimError::Internal(e.to_string()))?;
        let customer = full.customer().expect("validated").id.clone();
        let mut post = PostOffice::new(NetworkModel::with_latency(config.params.latency));
        post.register(AgentId::tracing_service());
        let mut ents = BTreeMap::new();
        for e in &full.enterprises {
            if e.role == Role::Customer {
                post.register(AgentId::customer(&e.id));
                continue;
            }
            for a in [AgentId::negotiator(&e.id), AgentId::planner(&e.id), AgentId::tracker(&e.id)] {
                post.register(a);
            }
            ents.insert(
                e.id.clone(),
                Ent {
                    spec: e.clone(),
                    shop: Shop::new(e.cells.iter().cloned(), e.routings.iter().cloned()),
                    negotiations: BTreeMap::new(),
                    jobs: BTreeMap::new(),
                    tracking: TrackingStore::default(),
                    origins: BTreeMap::new(),
                    buffers: BTreeMap::new(),
                    purchases: BTreeMap::new(),
                    awards: BTreeMap::new(),
                    quotes_issued: BTreeMap::new(),
                    proposals: BTreeMap::new(),
                    pending_delay: BTreeMap::new(),
                    charged: BTreeSet::new(),
                    account: Account::default(),
                },
            );
        }
        let series = EchelonSeries::new(config.horizon, customer.clone(), ents.keys().cloned());
        Ok(Self {
            cfg: config.clone(),
            digest: full.digest(),
            now: 0,
            customer,
            bom,
            products: full.products.iter().map(|p| (p.id.clone(), p.clone())).collect(),
            suppliers: full.suppliers.clone(),
            ents,
            orders: BTreeMap::new(),
            order_contract: BTreeMap::new(),
            ledger: BTreeMap::new(),
            post,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            shipments: Vec::new(),
            history: HistoryStore::new(),
            series,
            replaced_by: BTreeMap::new(),
            negotiation_log: Vec::new(),
            next_order: 0,
            next_contract: 0,
            finished: false,
        })
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn log(&self) -> &[Envelope] {
        self.post.log()
    }

    pub fn orders(&self) -> &BTreeMap<OrderId, Order> {
        &self.orders
    }

    pub fn history(&self) -> &HistoryStore {
        &self.history
    }

    pub fn shipments(&self) -> &[Shipment] {
        &self.shipments
    }

    pub fn shop(&self, enterprise: &EnterpriseId) -> Option<&Shop> {
        self.ents.get(enterprise).map(|e| &e.shop)
    }

    /// Current terms of every contract.
    pub fn contracts(&self) -> impl Iterator<Item = &Contract> {
        self.ledger.values().map(|l| &l.current)
    }

    /// Runs every tick up to the horizon plus the closing message exchange.
    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        for t in self.now..self.cfg.horizon {
            self.step(t)?;
        }
        if !self.finished {
            self.now = self.cfg.horizon;
            self.exchange_messages()?;
            self.finished = true;
        }
        Ok(())
    }

    /// One tick, all phases.
    pub fn step(&mut self, t: Tick) -> Result<(), SimError> {
        self.now = t;
        self.inject_demand()?;
        self.exchange_messages()?;
        self.advance_production()?;
        let due: Vec<DisruptionSpec> = self.cfg.disruptions.iter().filter(|d| d.at() == t).cloned().collect();
        for d in &due {
            self.inject_disruption(d)?;
        }
        self.move_shipments()?;
        self.now = t + 1;
        Ok(())
    }

    pub fn finish(self) -> SimOutput {
        let report = report::build(&self);
        let mut log = Vec::new();
        self.post.write_log(&mut log).expect("writing to memory");
        SimOutput {
            report,
            log: String::from_utf8(log).expect("json is utf-8"),
            series: self.series,
        }
    }

    // ---- plumbing -------------------------------------------------------

    pub(super) fn send(&mut self, env: Envelope) -> Result<(), SimError> {
        self.post.send(env, self.now)?;
        Ok(())
    }

    pub(super) fn new_order_id(&mut self) -> OrderId {
        self.next_order += 1;
        OrderId::new(format!("O{}", self.next_order))
    }

    pub(super) fn new_contract_id(&mut self) -> ContractId {
        self.next_contract += 1;
        ContractId::new(format!("K{}", self.next_contract))
    }

    pub(super) fn penalty_rate(&self) -> Option<Cents> {
        self.cfg.params.penalty_rate
    }

    pub(super) fn transit(&self) -> Tick {
        self.cfg.params.transit_time
    }

    pub(super) fn ent(&mut self, id: &EnterpriseId) -> &mut Ent {
        self.ents.get_mut(id).expect("known enterprise")
    }

    pub(super) fn is_customer(&self, e: &EnterpriseId) -> bool {
        *e == self.customer
    }

    /// Agent that negotiates on behalf of `buyer`.
    pub(super) fn buyer_agent(&self, buyer: &EnterpriseId) -> AgentId {
        if self.is_customer(buyer) {
            AgentId::customer(buyer)
        } else {
            AgentId::negotiator(buyer)
        }
    }

    pub(super) fn suppliers_of(&self, product: &ProductId, buyer: &EnterpriseId) -> Vec<EnterpriseId> {
        let set: BTreeSet<&EnterpriseId> = self
            .suppliers
            .iter()
            .filter(|r| &r.product == product && &r.buyer == buyer)
            .map(|r| &r.supplier)
            .collect();
        set.into_iter().cloned().collect()
    }

    pub(super) fn insert_contract(&mut self, k: Contract) {
        self.order_contract.insert(k.order.clone(), k.id.clone());
        self.ledger.insert(k.id.clone(), LedgerEntry::new(k));
    }

    pub(super) fn apply(&mut self, k: &ContractId, event: ContractEvent) -> Result<Contract, SimError> {
        let now = self.now;
        let entry = self
            .ledger
            .get_mut(k)
            .ok_or_else(|| SimError::Internal(format!("unknown contract `{k}`")))?;
        entry.apply(event, now).map_err(|e| SimError::Internal(e.to_string()))
    }

    pub(super) fn contract(&self, k: &ContractId) -> &Contract {
        &self.ledger[k].current
    }

    pub(super) fn set_status(&mut self, order: &OrderId, status: OrderStatus) {
        if let Some(o) = self.orders.get_mut(order) {
            o.status = status;
        }
    }

    pub(super) fn record_outcome(&mut self, enterprise: &EnterpriseId, neg: &Neg) {
        self.negotiation_log.push(NegotiationSummary {
            enterprise: enterprise.clone(),
            conversation: neg.state.conversation,
            order: neg.state.order.clone(),
            resource: !matches!(neg.state.purpose, crate::negotiation::Purpose::Fulfil),
            phase: neg.state.phase,
            rounds: neg.state.round,
            max_rounds: neg.state.max_rounds,
            closed_at: self.now,
        });
    }

    fn routes(&self, seller: &EnterpriseId, buyer: &EnterpriseId) -> NotifyRoutes {
        NotifyRoutes {
            tracker: AgentId::tracker(seller),
            buyer: if self.is_customer(buyer) {
                AgentId::customer(buyer)
            } else {
                AgentId::tracker(buyer)
            },
            planner: AgentId::planner(seller),
            negotiator: AgentId::negotiator(seller),
        }
    }

    /// Feeds one input to the seller's record and sends whatever it
    /// triggers. Records that are closed are left alone.
    pub(super) fn track(&mut self, seller: &EnterpriseId, order: &OrderId, input: TrackingInput) -> Result<Option<EndangermentEvent>, SimError> {
        let Some(k) = self.order_contract.get(order).cloned() else { return Ok(None) };
        let contract = self.contract(&k).clone();
        let now = self.now;
        let ent = self.ent(seller);
        let Some(rec) = ent.tracking.records.get_mut(order) else { return Ok(None) };
        if rec.is_final() {
            return Ok(None);
        }
        let event = ingest(rec, &contract, &input, now).map_err(|e| SimError::Internal(e.to_string()))?;
        if let Some(ev) = &event {
            let conv = self.post.new_conversation();
            let routes = self.routes(seller, &contract.buyer);
            let rec = self.ent(seller).tracking.records.get_mut(order).expect("record");
            for env in notify(rec, ev, conv, &routes) {
                self.send(env)?;
            }
        }
        Ok(event)
    }

    /// Sends the finalized record of `order` to the tracing service.
    pub(super) fn trace(&mut self, seller: &EnterpriseId, order: &OrderId) -> Result<(), SimError> {
        let Some(k) = self.order_contract.get(order).cloned() else { return Ok(()) };
        let entry = &self.ledger[&k];
        let (contract, original_due) = (entry.current.clone(), entry.draft.agreed_due);
        let Some(rec) = self.ents[seller].tracking.records.get(order).cloned() else { return Ok(()) };
        let env = Envelope::new(
            AgentId::tracker(seller),
            AgentId::tracing_service(),
            self.post.new_conversation(),
            Performative::TraceRecord,
            Payload::Trace {
                record: Box::new(FinalizedRecord { record: rec, contract, original_due }),
            },
        );
        self.send(env)
    }

    /// Planned milestones of `order` from the current bookings and any
    /// shipment already under way.
    pub(super) fn current_plan(&self, seller: &EnterpriseId, order: &OrderId) -> Option<MilestonePlan> {
        let ent = &self.ents[seller];
        let rec = ent.tracking.records.get(order)?;
        let job = ent.job_of(order)?;
        let delay = ent.pending_delay.get(order).copied().unwrap_or(0);
        let start = ent.shop.start_of(&job).unwrap_or(rec.milestone(MilestoneKind::ProductionStarted).planned);
        let finish = ent.shop.completion_of(&job).unwrap_or(rec.milestone(MilestoneKind::ProductionFinished).planned);
        let mut plan = MilestonePlan::from_production(rec.milestone(MilestoneKind::Confirmed).planned, start, finish, self.transit() + delay);
        if let Some(s) = self.shipments.iter().find(|s| &s.order == order) {
            plan.delivered = s.arrival;
        }
        Some(plan)
    }

    // ---- phase 1: demand ---------------------------------------------

    fn inject_demand(&mut self) -> Result<(), SimError> {
        let t = self.now;
        let d = self.cfg.demand.clone();
        if t % d.interval != 0 || d.until.is_some_and(|u| t >= u) {
            return Ok(());
        }
        let noise = if d.noise > 0 {
            let n = i64::from(d.noise);
            self.rng.gen_range(-n..=n)
        } else {
            0
        };
        let quantity = (d.model.level(t).round() as i64 + noise).max(0) as u32;
        self.series.add_demand(t, u64::from(quantity));
        if quantity == 0 {
            return Ok(());
        }
        let id = self.new_order_id();
        self.place_customer_order(id, quantity, t + d.due_offset)
    }

    pub(super) fn place_customer_order(&mut self, id: OrderId, quantity: u32, due: Tick) -> Result<(), SimError> {
        let product = self.cfg.demand.product.clone();
        let supplier = self
            .suppliers
            .iter()
            .find(|r| r.buyer == self.customer && r.product == product)
            .expect("validated end supplier")
            .supplier
            .clone();
        let unit = self.products.get(&product).map_or(0, |p| p.unit_price);
        let order = Order {
            id: id.clone(),
            customer: self.customer.clone(),
            supplier: supplier.clone(),
            product,
            quantity,
            due,
            price: unit * Cents::from(quantity),
            parent: None,
            status: OrderStatus::Requested,
            created: self.now,
        };
        self.orders.insert(id, order.clone());
        let conv = self.post.new_conversation();
        let env = Envelope::new(
            AgentId::customer(&self.customer),
            AgentId::negotiator(&supplier),
            conv,
            Performative::CallForQuote,
            Payload::Order { order },
        );
        self.send(env)
    }

    // ---- phase 2: messages -------------------------------------------

    fn exchange_messages(&mut self) -> Result<(), SimError> {
        let agents: Vec<AgentId> = self.post.agents().cloned().collect();
        for _ in 0..MAX_SUBROUNDS {
            let mut delivered = false;
            for a in &agents {
                let mail = self.post.poll(a, self.now)?;
                delivered |= !mail.is_empty();
                for env in mail {
                    self.dispatch(env)?;
                }
            }
            if !delivered && !self.flush_lots()? {
                self.expire_negotiations()?;
                return Ok(());
            }
        }
        Err(SimError::Internal(format!("message exchange did not settle at tick {}", self.now)))
    }

    /// Releases lot buffers whose window has elapsed. True if any was.
    fn flush_lots(&mut self) -> Result<bool, SimError> {
        let now = self.now;
        let mut ready = Vec::new();
        for (id, e) in &self.ents {
            if let PlannerPolicy::Batch { window, .. } = e.spec.policy {
                for (p, b) in &e.buffers {
                    if !b.orders.is_empty() && now - b.first >= window {
                        ready.push((id.clone(), p.clone()));
                    }
                }
            }
        }
        for (e, p) in &ready {
            self.release_lot(e, p)?;
        }
        Ok(!ready.is_empty())
    }

    fn expire_negotiations(&mut self) -> Result<(), SimError> {
        let now = self.now;
        let expired: Vec<(EnterpriseId, ConversationId)> = self
            .ents
            .iter()
            .flat_map(|(id, e)| {
                e.negotiations
                    .iter()
                    .filter(move |(_, n)| !n.state.phase.is_final() && now > n.state.deadline)
                    .map(move |(c, _)| (id.clone(), *c))
            })
            .collect();
        for (e, c) in expired {
            self.fail_negotiation(&e, c)?;
        }
        Ok(())
    }

    // ---- phase 3: production -----------------------------------------

    fn advance_production(&mut self) -> Result<(), SimError> {
        let t = self.now;
        let ids: Vec<EnterpriseId> = self.ents.keys().cloned().collect();
        for eid in &ids {
            let jobs: Vec<OrderId> = self.ents[eid].jobs.keys().cloned().collect();
            for j in &jobs {
                let info = self.ents[eid].jobs[j].clone();
                if info.finished || info.started {
                    continue;
                }
                let Some(start) = self.ents[eid].shop.start_of(j) else { continue };
                if start > t {
                    continue;
                }
                // Goods unloaded later this tick are already usable.
                let on_hand = |p: &Purchase| p.arrived || self.shipments.iter().any(|s| s.order == p.suborder && s.arrival <= t);
                let missing: Vec<Tick> = self.ents[eid]
                    .purchases_of(j)
                    .filter(|(_, p)| !on_hand(p))
                    .map(|(_, p)| p.expected_arrival)
                    .collect();
                if let Some(latest) = missing.iter().max() {
                    let ready = (*latest).max(t + 1);
                    self.replan(eid, Disruption::ComponentLate { order: j.clone(), ready_at: ready }, Cause::ComponentLate, None)?;
                    // Work already under way is not pulled back.
                    if self.ents[eid].shop.start_of(j).map_or(true, |s| s > t) {
                        continue;
                    }
                }
                let start = self.ents[eid].shop.start_of(j).unwrap_or(start);
                self.ent(eid).jobs.get_mut(j).expect("job").started = true;
                for m in &info.members {
                    if self.orders[m].status == OrderStatus::Contracted {
                        self.set_status(m, OrderStatus::InProduction);
                        self.track(eid, m, TrackingInput::Milestone { milestone: MilestoneKind::ProductionStarted, at: start })?;
                    }
                }
            }

            // Costs are incurred when a booking starts.
            let ent = self.ent(eid);
            let mut cost = 0;
            let mut newly = Vec::new();
            for (cell, c) in &ent.shop.cells {
                for b in c.bookings.iter().filter(|b| b.interval.start <= t) {
                    let key = (b.order.clone(), b.op_index, cell.clone(), b.interval.start);
                    if !ent.charged.contains(&key) {
                        cost += b.cost;
                        newly.push(key);
                    }
                }
            }
            ent.charged.extend(newly);
            ent.account.production_cost += cost;

            for j in &jobs {
                let Some(info) = self.ents[eid].jobs.get(j).cloned() else { continue };
                if !info.started || info.finished {
                    continue;
                }
                let Some(end) = self.ents[eid].shop.completion_of(j) else { continue };
                if end > t {
                    continue;
                }
                self.ent(eid).jobs.get_mut(j).expect("job").finished = true;
                for m in &info.members {
                    if self.orders[m].status != OrderStatus::InProduction {
                        continue;
                    }
                    self.track(eid, m, TrackingInput::Milestone { milestone: MilestoneKind::ProductionFinished, at: end })?;
                    self.track(eid, m, TrackingInput::Milestone { milestone: MilestoneKind::Shipped, at: end })?;
                    let delay = self.ent(eid).pending_delay.remove(m).unwrap_or(0);
                    let o = &self.orders[m];
                    let s = Shipment {
                        order: m.clone(),
                        seller: eid.clone(),
                        buyer: o.customer.clone(),
                        quantity: o.quantity,
                        arrival: end + self.transit() + delay,
                    };
                    self.shipments.push(s);
                    self.set_status(m, OrderStatus::Shipped);
                }
            }
        }
        Ok(())
    }

    /// Reschedules one shop after a disruption and reports every order
    /// whose completion moved.
    pub(super) fn replan(&mut self, eid: &EnterpriseId, d: Disruption, cause: Cause, cell: Option<String>) -> Result<Vec<EndangermentEvent>, SimError> {
        let now = self.now;
        let ent = self.ent(eid);
        let before: BTreeMap<OrderId, Option<Tick>> = ent.jobs.keys().map(|j| (j.clone(), ent.shop.completion_of(j))).collect();
        let next = reschedule(&ent.shop, &d, ent.spec.policy, now)?;
        ent.shop = next;
        let mut moved = Vec::new();
        for (j, old) in before {
            let new = ent.shop.completion_of(&j);
            if new != old {
                if let Some(end) = new {
                    moved.push((j, end));
                }
            }
        }
        let mut events = Vec::new();
        for (j, end) in moved {
            let members = self.ents[eid].jobs[&j].members.clone();
            for m in members {
                let delay = self.ents[eid].pending_delay.get(&m).copied().unwrap_or(0);
                let input = TrackingInput::Disruption {
                    cause,
                    projected_delivery: end + self.transit() + delay,
                    cell: cell.clone(),
                };
                events.extend(self.track(eid, &m, input)?);
            }
        }
        Ok(events)
    }

    // ---- phase 4: disruptions ----------------------------------------

    /// Applies one disruption now and returns the endangerments it raised.
    pub fn inject_disruption(&mut self, d: &DisruptionSpec) -> Result<Vec<EndangermentEvent>, SimError> {
        match d {
            DisruptionSpec::CellDown { enterprise, cell, interval, .. } => {
                if !self.ents.get(enterprise).is_some_and(|e| e.shop.cells.contains_key(cell)) {
                    return Err(SimError::UnknownTarget(format!("{enterprise}/{cell}")));
                }
                self.replan(
                    enterprise,
                    Disruption::CellDown { cell: cell.clone(), interval: *interval },
                    Cause::CellDown,
                    Some(cell.clone()),
                )
            }
            DisruptionSpec::ShipmentDelay { order, extra, .. } => {
                let id = OrderId::new(order.as_str());
                let o = self.orders.get(&id).ok_or_else(|| SimError::UnknownTarget(order.clone()))?.clone();
                let projected = match o.status {
                    OrderStatus::Shipped => {
                        let s = self.shipments.iter_mut().find(|s| s.order == id).expect("shipped order in transit");
                        s.arrival += extra;
                        s.arrival
                    }
                    OrderStatus::Contracted | OrderStatus::InProduction => {
                        let ent = self.ent(&o.supplier);
                        *ent.pending_delay.entry(id.clone()).or_default() += extra;
                        let rec = &ent.tracking.records[&id];
                        rec.projected_delivery + extra
                    }
                    _ => return Ok(Vec::new()),
                };
                let input = TrackingInput::Disruption {
                    cause: Cause::MilestoneMissed,
                    projected_delivery: projected,
                    cell: None,
                };
                Ok(self.track(&o.supplier, &id, input)?.into_iter().collect())
            }
        }
    }

    // ---- phase 5: logistics ------------------------------------------

    fn move_shipments(&mut self) -> Result<(), SimError> {
        let t = self.now;
        let (mut due, rest): (Vec<Shipment>, Vec<Shipment>) = self.shipments.drain(..).partition(|s| s.arrival <= t);
        self.shipments = rest;
        due.sort_by(|a, b| (a.arrival, &a.order).cmp(&(b.arrival, &b.order)));
        for s in due {
            self.deliver(s)?;
        }
        Ok(())
    }

    fn deliver(&mut self, s: Shipment) -> Result<(), SimError> {
        let t = self.now;
        if self.orders[&s.order].status != OrderStatus::Shipped {
            // Cancelled while in transit; the goods are written off.
            return Ok(());
        }
        self.track(&s.seller, &s.order, TrackingInput::Milestone { milestone: MilestoneKind::Delivered, at: t })?;
        let k = self.order_contract[&s.order].clone();
        let c = self.apply(&k, ContractEvent::Fulfill)?;
        let late = t.saturating_sub(c.agreed_due) as Cents;
        let penalty = c.penalty_rate * late;
        {
            let seller = self.ent(&s.seller);
            seller.account.revenue += c.agreed_price;
            seller.account.penalties_paid += penalty;
        }
        if let Some(buyer) = self.ents.get_mut(&s.buyer) {
            buyer.account.purchases += c.agreed_price;
            buyer.account.penalties_received += penalty;
            if let Some(p) = buyer.purchases.get_mut(&k) {
                p.arrived = true;
            }
        }
        self.set_status(&s.order, OrderStatus::Delivered);
        self.trace(&s.seller, &s.order)
    }

    // ---- shared reactions --------------------------------------------

    /// Cancels supply contracts we hold (ledger plus message to the seller).
    pub(super) fn cancel_purchases(&mut self, eid: &EnterpriseId, contracts: &[ContractId], reason: &str) -> Result<(), SimError> {
        for k in contracts {
            self.ent(eid).purchases.remove(k);
            if !self.contract(k).is_active() {
                continue;
            }
            let c = self.apply(k, ContractEvent::Cancel)?;
            self.set_status(&c.order, OrderStatus::Cancelled);
            let env = Envelope::new(
                AgentId::negotiator(eid),
                AgentId::negotiator(&c.seller),
                self.post.new_conversation(),
                Performative::Cancel,
                Payload::Contract {
                    contract: Some(k.clone()),
                    order: c.order.clone(),
                    reason: Some(reason.to_string()),
                },
            );
            self.send(env)?;
        }
        Ok(())
    }

    /// Drops the unstarted work of a job and the supplies bought for it.
    pub(super) fn abandon_job(&mut self, eid: &EnterpriseId, job: &OrderId) -> Result<(), SimError> {
        let now = self.now;
        let open: Vec<ContractId> = self.ents[eid]
            .purchases_of(job)
            .filter(|(_, p)| !p.arrived)
            .map(|(k, _)| k.clone())
            .collect();
        self.cancel_purchases(eid, &open, "parent order cancelled")?;
        let ent = self.ent(eid);
        ent.purchases.retain(|_, p| &p.job != job);
        ent.shop.release_job(job, now);
        if ent.shop.bookings_of(job).next().is_none() {
            ent.jobs.remove(job);
        }
        Ok(())
    }

    /// Our sales contract for `order` is over without delivery.
    pub(super) fn close_sale(&mut self, eid: &EnterpriseId, order: &OrderId, status: OrderStatus) -> Result<(), SimError> {
        self.set_status(order, status);
        if let Some(rec) = self.ent(eid).tracking.records.get_mut(order) {
            if !rec.is_final() {
                rec.fail();
            }
        }
        self.trace(eid, order)?;
        if let Some(job) = self.ents[eid].job_of(order) {
            let all_closed = self.ents[eid].jobs[&job]
                .members
                .iter()
                .all(|m| matches!(self.orders[m].status, OrderStatus::Cancelled | OrderStatus::Failed));
            if all_closed {
                self.abandon_job(eid, &job)?;
            }
        }
        Ok(())
    }
}
