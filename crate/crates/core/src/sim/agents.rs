//! Agent reactions. Each enterprise runs a negotiator, a planner and a
//! tracker; the end customer and the tracing service are single agents.

use super::engine::{Engine, JobInfo, LotBuffer, Neg, Origin, Purchase};
use super::SimError;
use crate::messaging::{AgentId, Envelope, Payload, Performative};
use crate::model::{explode_bom, Cents, Contract, ContractEvent, ContractId, ConversationId, EnterpriseId, Order, OrderId, OrderStatus, ProductId, Tick};
use crate::negotiation::{
    decide_amendment, enumerate_scenarios, initiate, renegotiate, select_best, AmendDecision, AmendProposal, NegotiationState, OwnProduction, Phase,
    Purpose, Scenario, SupplyVector,
};
use crate::planner::{estimate_load, plan, quote, Disruption, Interval, Job, PlannerPolicy, Quote};
use crate::tracking::{Cause, MilestoneKind, MilestonePlan, TrackingInput};

impl Engine {
    pub(super) fn dispatch(&mut self, env: Envelope) -> Result<(), SimError> {
        let to = env.to.0.clone();
        let role = to.rsplit('/').next().unwrap_or_default();
        if env.to == AgentId::tracing_service() {
            if let Payload::Trace { record } = env.payload {
                self.history.record(*record).map_err(|e| SimError::Internal(e.to_string()))?;
            }
            return Ok(());
        }
        let me = env.to.enterprise();
        match role {
            "customer" => self.on_customer(&me, env),
            "negotiator" => self.on_negotiator(&me, env),
            "planner" => self.on_planner(&me, env),
            "tracker" => self.on_tracker(&me, env),
            _ => Err(SimError::Internal(format!("no handler for `{to}`"))),
        }
    }

    fn reply(&mut self, env: &Envelope, performative: Performative, payload: Payload) -> Result<(), SimError> {
        let r = Envelope::new(env.to.clone(), env.from.clone(), env.conversation, performative, payload);
        self.send(r)
    }

    // ---- end customer --------------------------------------------------

    fn on_customer(&mut self, me: &EnterpriseId, env: Envelope) -> Result<(), SimError> {
        match (env.performative, &env.payload) {
            (Performative::Amend, Payload::Amendment { contract, order, new_due, new_price }) => {
                let c = self.contract(contract).clone();
                if !c.is_active() {
                    return Ok(());
                }
                let requested = self.orders[order].due;
                let slack = (requested + self.cfg.params.customer_tolerance).saturating_sub(c.agreed_due);
                let proposal = AmendProposal {
                    new_due: *new_due,
                    new_price: *new_price,
                    slip: new_due.saturating_sub(c.agreed_due),
                };
                let (k, o) = (contract.clone(), order.clone());
                match decide_amendment(&proposal, slack) {
                    AmendDecision::Accept => {
                        self.apply(&k, ContractEvent::Amend { new_due: *new_due, new_price: *new_price })?;
                        self.reply(&env, Performative::Accept, Payload::Contract { contract: Some(k), order: o, reason: None })
                    }
                    AmendDecision::Cancel => {
                        self.apply(&k, ContractEvent::Cancel)?;
                        self.set_status(&o, OrderStatus::Cancelled);
                        let reason = Some("slip exceeds tolerance".to_string());
                        self.reply(&env, Performative::Cancel, Payload::Contract { contract: Some(k), order: o.clone(), reason })?;
                        self.reorder(me, &o)
                    }
                }
            }
            (Performative::Cancel, Payload::Contract { order, .. }) => {
                let o = order.clone();
                self.reorder(me, &o)
            }
            // Confirmations, refusals and notices need no reaction.
            _ => Ok(()),
        }
    }

    /// Places a cancelled customer order again with a fresh due date.
    fn reorder(&mut self, _customer: &EnterpriseId, old: &OrderId) -> Result<(), SimError> {
        let (quantity, due) = (self.orders[old].quantity, self.now + self.cfg.demand.due_offset);
        let id = self.new_order_id();
        self.replaced_by.insert(old.clone(), id.clone());
        self.place_customer_order(id, quantity, due)
    }

    // ---- planner -------------------------------------------------------

    fn on_planner(&mut self, me: &EnterpriseId, env: Envelope) -> Result<(), SimError> {
        let now = self.now;
        match (env.performative, &env.payload) {
            (Performative::CallForQuote, Payload::QuoteRequest { order, product, quantity, earliest_start }) => {
                let shop = &self.ents[me].shop;
                let q = quote(shop, product, *quantity, *earliest_start).ok();
                let load = estimate_load(Interval::new(now, self.cfg.horizon.max(now + 1)), shop).mean_utilization();
                let payload = Payload::Quote { order: order.clone(), quote: q, load };
                self.reply(&env, Performative::Quote, payload)
            }
            (Performative::RescheduleRequest, Payload::Endangerment { event, .. }) => {
                let ent = &self.ents[me];
                let rows = match ent.job_of(&event.order) {
                    Some(job) => ent.shop.schedule().rows_for(&job),
                    None => Vec::new(),
                };
                let payload = Payload::Schedule { order: event.order.clone(), rows };
                self.reply(&env, Performative::Confirm, payload)
            }
            _ => Ok(()),
        }
    }

    // ---- tracker -------------------------------------------------------

    fn on_tracker(&mut self, me: &EnterpriseId, env: Envelope) -> Result<(), SimError> {
        match (env.performative, &env.payload) {
            (Performative::Confirm, Payload::Schedule { order, .. }) => {
                if let Some(plan) = self.current_plan(me, order) {
                    if let Some(rec) = self.ent(me).tracking.records.get_mut(order) {
                        if !rec.is_final() {
                            rec.rebaseline(plan);
                        }
                    }
                }
                Ok(())
            }
            (Performative::EndangermentNotice, Payload::Endangerment { event, contract }) => {
                // A supplier warns us: expect the component later.
                if let Some(p) = self.ent(me).purchases.get_mut(contract) {
                    p.expected_arrival = p.expected_arrival.max(event.projected_delivery);
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    // ---- negotiator ----------------------------------------------------

    fn on_negotiator(&mut self, me: &EnterpriseId, env: Envelope) -> Result<(), SimError> {
        match (env.performative, env.payload.clone()) {
            (Performative::CallForQuote, Payload::Order { order }) => {
                let origin = Origin::Customer { agent: env.from.clone(), conversation: env.conversation };
                self.ent(me).origins.insert(order.id.clone(), origin);
                self.orders.entry(order.id.clone()).or_insert(order.clone());
                self.take_order(me, &order.id)
            }
            (Performative::Quote, Payload::Quote { quote, .. }) => self.on_own_quote(me, env.conversation, quote),
            (Performative::RequestSupplyVector, Payload::SupplyRequest { order, product, quantity, needed_by }) => {
                self.on_supply_request(me, &env, order, product, quantity, needed_by)
            }
            (Performative::SupplyVector, Payload::Supply { product, vector, .. }) => {
                let conv = env.conversation;
                let supplier = env.from.enterprise();
                let Some(neg) = self.ent(me).negotiations.get_mut(&conv) else { return Ok(()) };
                if neg.state.record_vector(&product, &supplier, vector) {
                    self.select(me, conv)?;
                }
                Ok(())
            }
            (Performative::Award, Payload::Award { contract, order }) => self.on_award(me, &env, contract, order),
            (Performative::Accept, Payload::Contract { contract: Some(k), .. }) => self.on_accept(me, k),
            (Performative::Reject, Payload::Contract { contract: Some(k), .. }) => self.on_reject(me, &env, k),
            (Performative::Cancel, Payload::Contract { contract: Some(k), .. }) => self.on_cancel(me, k),
            (Performative::RenegotiateRequest, Payload::Endangerment { event, contract }) => {
                let c = self.contract(&contract).clone();
                let Ok(p) = renegotiate(&c, &event) else { return Ok(()) };
                if p.slip == 0 {
                    return Ok(());
                }
                self.ent(me).proposals.insert(contract.clone(), p);
                let to = self.buyer_agent(&c.buyer);
                let amend = Envelope::new(
                    env.to.clone(),
                    to,
                    env.conversation,
                    Performative::Amend,
                    Payload::Amendment { contract, order: c.order.clone(), new_due: p.new_due, new_price: p.new_price },
                );
                self.send(amend)
            }
            (Performative::Amend, Payload::Amendment { contract, new_due, new_price, .. }) => {
                self.on_supplier_amend(me, &env, contract, new_due, new_price)
            }
            _ => Ok(()),
        }
    }

    /// An order is ours to fulfil: negotiate now, or buffer it into a lot.
    fn take_order(&mut self, me: &EnterpriseId, order: &OrderId) -> Result<(), SimError> {
        let o = self.orders[order].clone();
        match self.ents[me].spec.policy {
            PlannerPolicy::Batch { max_lot, .. } => {
                let now = self.now;
                let buf = self.ent(me).buffers.entry(o.product.clone()).or_default();
                if !buf.orders.is_empty() && buf.quantity + o.quantity > max_lot {
                    self.release_lot(me, &o.product)?;
                }
                let buf = self.ent(me).buffers.entry(o.product.clone()).or_default();
                if buf.orders.is_empty() {
                    buf.first = now;
                }
                buf.quantity += o.quantity;
                buf.orders.push(order.clone());
                if buf.quantity >= max_lot {
                    self.release_lot(me, &o.product)?;
                }
                Ok(())
            }
            _ => {
                let conv = self.post.new_conversation();
                let (ttl, rounds) = (self.cfg.params.quote_ttl, self.cfg.params.max_rounds);
                let now = self.now;
                let mut o = o;
                let (state, env) = initiate(&mut o, conv, now, &AgentId::negotiator(me), &AgentId::planner(me), ttl, rounds)
                    .map_err(|e| SimError::Internal(e.to_string()))?;
                self.orders.insert(o.id.clone(), o.clone());
                let neg = Neg { state, product: o.product, quantity: o.quantity, due: o.due, price: o.price, demand: Vec::new() };
                self.ent(me).negotiations.insert(conv, neg);
                self.send(env)
            }
        }
    }

    /// Starts one negotiation for everything buffered for `product`.
    pub(super) fn release_lot(&mut self, me: &EnterpriseId, product: &ProductId) -> Result<(), SimError> {
        let buf = std::mem::take(self.ent(me).buffers.get_mut(product).expect("buffer"));
        let LotBuffer { quantity, orders, .. } = buf;
        let lead = orders[0].clone();
        let due = orders.iter().map(|o| self.orders[o].due).min().expect("non-empty lot");
        let price: Cents = orders.iter().map(|o| self.orders[o].price).sum();
        for o in &orders {
            self.set_status(o, OrderStatus::Negotiating);
        }
        let conv = self.post.new_conversation();
        let now = self.now;
        let state = NegotiationState::new(conv, Purpose::Fulfil, lead, orders, now, self.cfg.params.quote_ttl, self.cfg.params.max_rounds);
        let env = state.own_quote_request(&AgentId::negotiator(me), &AgentId::planner(me), product, quantity, now);
        let neg = Neg { state, product: product.clone(), quantity, due, price, demand: Vec::new() };
        self.ent(me).negotiations.insert(conv, neg);
        self.send(env)
    }

    /// Starts a new round: ask the own planner again, or (for resourcing)
    /// go straight to the suppliers.
    fn begin_round(&mut self, me: &EnterpriseId, conv: ConversationId) -> Result<(), SimError> {
        let now = self.now;
        let ttl = self.cfg.params.quote_ttl;
        let neg = self.ent(me).negotiations.get_mut(&conv).expect("negotiation");
        neg.state.deadline = now + ttl;
        if let Purpose::Resource { .. } = neg.state.purpose {
            let q = Quote { start: now, completion: now, cost: 0 };
            return self.on_own_quote(me, conv, Some(q));
        }
        let env = neg.state.own_quote_request(&AgentId::negotiator(me), &AgentId::planner(me), &neg.product, neg.quantity, now);
        self.send(env)
    }

    fn on_own_quote(&mut self, me: &EnterpriseId, conv: ConversationId, q: Option<Quote>) -> Result<(), SimError> {
        let Some(neg) = self.ents[me].negotiations.get(&conv) else { return Ok(()) };
        if neg.state.phase != Phase::QuotingOwn {
            return Ok(());
        }
        let Some(q) = q else { return self.fail_negotiation(me, conv) };
        let demand: Vec<(ProductId, u64)> = match &neg.state.purpose {
            Purpose::Fulfil => explode_bom(&neg.product, u64::from(neg.quantity), &self.bom)
                .map_err(|e| SimError::Internal(e.to_string()))?
                .into_iter()
                .filter(|(c, _)| !self.suppliers_of(c, me).is_empty())
                .collect(),
            Purpose::Resource { component, quantity, .. } => vec![(component.clone(), u64::from(*quantity))],
        };
        let (job, due) = (neg.state.order.clone(), neg.due);
        let mut requests = Vec::new();
        let mut envs = Vec::new();
        for (c, n) in &demand {
            for s in self.suppliers_of(c, me) {
                requests.push((c.clone(), s.clone()));
                envs.push(Envelope::new(
                    AgentId::negotiator(me),
                    AgentId::negotiator(&s),
                    conv,
                    Performative::RequestSupplyVector,
                    Payload::SupplyRequest { order: job.clone(), product: c.clone(), quantity: *n as u32, needed_by: due },
                ));
            }
        }
        let neg = self.ent(me).negotiations.get_mut(&conv).expect("negotiation");
        neg.demand = demand;
        neg.state.record_own_quote(q).map_err(|e| SimError::Internal(e.to_string()))?;
        neg.state.expect_vectors(requests).map_err(|e| SimError::Internal(e.to_string()))?;
        let selecting = neg.state.phase == Phase::Selecting;
        for e in envs {
            self.send(e)?;
        }
        if selecting {
            self.select(me, conv)?;
        }
        Ok(())
    }

    /// Supplier side: quote from the local planner; nothing is reserved.
    fn on_supply_request(&mut self, me: &EnterpriseId, env: &Envelope, order: OrderId, product: ProductId, quantity: u32, needed_by: Tick) -> Result<(), SimError> {
        let now = self.now;
        let ent = &self.ents[me];
        let markup = ent.spec.markup_pct;
        let q = quote(&ent.shop, &product, quantity, now + ent.spec.sourcing_lead);
        let load = estimate_load(Interval::new(now, needed_by.max(now + 1)), &ent.shop).mean_utilization();
        // Components we buy ourselves are passed on at list price.
        let bought: Cents = match explode_bom(&product, u64::from(quantity), &self.bom) {
            Ok(parts) => parts
                .iter()
                .filter(|(c, _)| !self.suppliers_of(c, me).is_empty())
                .map(|(c, n)| self.products.get(c).map_or(0, |p| p.unit_price) * *n as Cents)
                .sum(),
            Err(_) => 0,
        };
        let vector = q.ok().map(|q| SupplyVector {
            supplier: me.clone(),
            product: product.clone(),
            quantity,
            cost: q.cost * (100 + markup) / 100 + bought,
            completion: q.completion,
            load,
            issued: now,
        });
        let buyer = env.from.enterprise();
        self.ent(me).quotes_issued.insert((order.clone(), product.clone(), buyer), now);
        self.reply(env, Performative::SupplyVector, Payload::Supply { order, product, vector })
    }

    /// All supply vectors are in: pick a scenario, commit own production,
    /// award the suppliers.
    fn select(&mut self, me: &EnterpriseId, conv: ConversationId) -> Result<(), SimError> {
        let now = self.now;
        let transit = self.transit();
        let neg = self.ents[me].negotiations[&conv].clone();
        let best = match &neg.state.purpose {
            Purpose::Fulfil => {
                let agg = Order {
                    id: neg.state.order.clone(),
                    customer: me.clone(),
                    supplier: me.clone(),
                    product: neg.product.clone(),
                    quantity: neg.quantity,
                    due: neg.due,
                    price: neg.price,
                    parent: None,
                    status: OrderStatus::Negotiating,
                    created: now,
                };
                let shop = &self.ents[me].shop;
                let own = |ready: Tick| quote(shop, &neg.product, neg.quantity, ready);
                let scenarios = enumerate_scenarios(&agg, own, &neg.demand, &neg.state.vectors, transit, now, self.cfg.params.k);
                let rate = self.penalty_rate().unwrap_or_else(|| crate::model::default_penalty_rate(neg.price));
                select_best(&scenarios, &agg, rate).ok()
            }
            Purpose::Resource { component, .. } => neg
                .state
                .vectors
                .get(component)
                .and_then(|vs| vs.iter().min_by(|a, b| (a.completion, a.cost, &a.supplier).cmp(&(b.completion, b.cost, &b.supplier))))
                .map(|v| Scenario {
                    order: neg.state.order.clone(),
                    component_sources: [(component.clone(), v.clone())].into_iter().collect(),
                    own_production: OwnProduction { start: now, completion: now, cost: 0 },
                    total_cost: v.cost,
                    delivery: v.completion + transit,
                }),
        };
        let Some(best) = best else { return self.fail_negotiation(me, conv) };

        if let Purpose::Fulfil = neg.state.purpose {
            let ready = best.components_ready(transit).max(now);
            let mut job = Job::new(neg.state.order.as_str(), neg.product.as_str(), neg.quantity, neg.due, ready).with_components_ready(ready);
            job.members = neg.state.members.clone();
            let core = match self.ents[me].spec.policy {
                PlannerPolicy::Batch { .. } => PlannerPolicy::Discrete,
                p => p,
            };
            let Ok(schedule) = plan(&[job], core, &self.ents[me].shop) else { return self.fail_negotiation(me, conv) };
            self.ent(me).shop.commit(&schedule);
        }

        let job_id = neg.state.order.clone();
        let penalty = self.penalty_rate();
        let mut drafts: Vec<(Contract, Order)> = Vec::new();
        let mut ids: Vec<(OrderId, ContractId)> = best.component_sources.keys().map(|_| (self.new_order_id(), self.new_contract_id())).collect();
        ids.reverse();
        let state = &mut self.ents.get_mut(me).expect("enterprise").negotiations.get_mut(&conv).expect("negotiation").state;
        let awarded = state.award(best, |c, v| {
            let (oid, kid) = ids.pop().expect("one id pair per component");
            let due = v.completion + transit;
            let order = Order {
                id: oid.clone(),
                customer: me.clone(),
                supplier: v.supplier.clone(),
                product: c.clone(),
                quantity: v.quantity,
                due,
                price: v.cost,
                parent: Some(job_id.clone()),
                status: OrderStatus::Requested,
                created: now,
            };
            let k = Contract::draft(kid, oid, me.clone(), v.supplier.clone(), due, v.cost, penalty, now);
            drafts.push((k.clone(), order));
            k
        });
        awarded.map_err(|e| SimError::Internal(e.to_string()))?;
        for (k, order) in drafts {
            self.orders.insert(order.id.clone(), order.clone());
            self.insert_contract(k.clone());
            self.ent(me).awards.insert(k.id.clone(), conv);
            let env = Envelope::new(AgentId::negotiator(me), AgentId::negotiator(&k.seller), conv, Performative::Award, Payload::Award { contract: k, order });
            self.send(env)?;
        }
        if self.ents[me].negotiations[&conv].state.phase == Phase::Closed {
            self.finalize(me, conv)?;
        }
        Ok(())
    }

    /// Supplier side of an award: honour it only while the quote is valid.
    fn on_award(&mut self, me: &EnterpriseId, env: &Envelope, contract: Contract, order: Order) -> Result<(), SimError> {
        let buyer = env.from.enterprise();
        let key = (order.parent.clone().unwrap_or_else(|| order.id.clone()), order.product.clone(), buyer);
        let issued = self.ents[me].quotes_issued.get(&key).copied();
        if issued.map_or(true, |i| self.now - i > self.cfg.params.quote_ttl) {
            let payload = Payload::Contract { contract: Some(contract.id), order: order.id, reason: Some("quote expired".into()) };
            return self.reply(env, Performative::Reject, payload);
        }
        let origin = Origin::Award { agent: env.from.clone(), conversation: env.conversation, contract: contract.id.clone() };
        self.ent(me).origins.insert(order.id.clone(), origin);
        self.take_order(me, &order.id)
    }

    fn on_accept(&mut self, me: &EnterpriseId, k: ContractId) -> Result<(), SimError> {
        let c = self.contract(&k).clone();
        if c.seller == *me {
            // The buyer took our amendment.
            self.ent(me).proposals.remove(&k);
            if let Some(rec) = self.ent(me).tracking.records.get_mut(&c.order) {
                rec.on_terms_changed(&c);
            }
            return Ok(());
        }
        let conv = self.ent(me).awards.remove(&k);
        let live = conv.filter(|cv| {
            self.ents[me]
                .negotiations
                .get(cv)
                .is_some_and(|n| n.state.phase == Phase::Awarding && n.state.contracts.values().any(|x| *x == k))
        });
        let Some(conv) = live else {
            // Late answer to an award we gave up on.
            return self.cancel_purchases(me, &[k], "negotiation closed");
        };
        let neg = &self.ents[me].negotiations[&conv];
        let job = match &neg.state.purpose {
            Purpose::Fulfil => neg.state.order.clone(),
            Purpose::Resource { parent, .. } => parent.clone(),
        };
        let sub = &self.orders[&c.order];
        let purchase = Purchase {
            suborder: c.order.clone(),
            job,
            component: sub.product.clone(),
            quantity: sub.quantity,
            expected_arrival: c.agreed_due,
            arrived: false,
        };
        self.series.add_outgoing(me, self.now, u64::from(purchase.quantity));
        self.set_status(&c.order, OrderStatus::Contracted);
        let ent = self.ent(me);
        ent.purchases.insert(k.clone(), purchase);
        let done = ent.negotiations.get_mut(&conv).expect("negotiation").state.on_accept(&k);
        if done {
            self.finalize(me, conv)?;
        }
        Ok(())
    }

    fn on_reject(&mut self, me: &EnterpriseId, env: &Envelope, k: ContractId) -> Result<(), SimError> {
        let conv = env.conversation;
        self.ent(me).awards.remove(&k);
        let Some(neg) = self.ents[me].negotiations.get(&conv) else { return Ok(()) };
        if neg.state.phase != Phase::Awarding || !neg.state.contracts.values().any(|x| *x == k) {
            return Ok(());
        }
        let accepted: Vec<ContractId> = neg.state.accepted.iter().cloned().collect();
        let pending: Vec<ContractId> = neg.state.contracts.values().filter(|x| !neg.state.accepted.contains(*x)).cloned().collect();
        let purpose = neg.state.purpose.clone();
        let job = neg.state.order.clone();
        let supplier = env.from.enterprise();
        self.cancel_purchases(me, &accepted, "award round abandoned")?;
        for p in pending {
            self.ent(me).awards.remove(&p);
        }
        if let Purpose::Fulfil = purpose {
            let now = self.now;
            self.ent(me).shop.release_job(&job, now);
        }
        let neg = self.ent(me).negotiations.get_mut(&conv).expect("negotiation");
        match neg.state.on_reject(&supplier) {
            Ok(_) => self.begin_round(me, conv),
            Err(_) => self.conclude_failure(me, conv),
        }
    }

    fn on_cancel(&mut self, me: &EnterpriseId, k: ContractId) -> Result<(), SimError> {
        let c = self.contract(&k).clone();
        if c.seller == *me {
            // The buyer walked away from our contract.
            return self.close_sale(me, &c.order, OrderStatus::Cancelled);
        }
        // A supplier dropped us: find the component elsewhere.
        let Some(p) = self.ent(me).purchases.remove(&k) else { return Ok(()) };
        self.set_status(&c.order, OrderStatus::Cancelled);
        self.resource(me, p.job, p.component, p.quantity)
    }

    fn on_supplier_amend(&mut self, me: &EnterpriseId, env: &Envelope, k: ContractId, new_due: Tick, new_price: Cents) -> Result<(), SimError> {
        let c = self.contract(&k).clone();
        let Some(p) = self.ents[me].purchases.get(&k).cloned() else { return Ok(()) };
        if !c.is_active() {
            return Ok(());
        }
        // Slack: how far the earliest-due sale of the job is ahead of its projection.
        let ent = &self.ents[me];
        let slack = ent
            .jobs
            .get(&p.job)
            .map(|j| {
                j.members
                    .iter()
                    .filter_map(|m| {
                        let due = self.contract(self.order_contract.get(m)?).agreed_due;
                        let proj = ent.tracking.records.get(m)?.projected_delivery;
                        Some(due.saturating_sub(proj))
                    })
                    .min()
                    .unwrap_or(0)
            })
            .unwrap_or(0);
        let proposal = AmendProposal { new_due, new_price, slip: new_due.saturating_sub(c.agreed_due) };
        match decide_amendment(&proposal, slack) {
            AmendDecision::Accept => {
                self.apply(&k, ContractEvent::Amend { new_due, new_price })?;
                if let Some(p) = self.ent(me).purchases.get_mut(&k) {
                    p.expected_arrival = new_due;
                }
                self.reply(env, Performative::Accept, Payload::Contract { contract: Some(k), order: c.order, reason: None })
            }
            AmendDecision::Cancel => {
                self.apply(&k, ContractEvent::Cancel)?;
                self.set_status(&c.order, OrderStatus::Cancelled);
                self.ent(me).purchases.remove(&k);
                let reason = Some("slip exceeds slack".to_string());
                self.reply(env, Performative::Cancel, Payload::Contract { contract: Some(k), order: c.order, reason })?;
                self.resource(me, p.job, p.component, p.quantity)
            }
        }
    }

    /// Looks for a replacement supply of `component` for `job`.
    fn resource(&mut self, me: &EnterpriseId, job: OrderId, component: ProductId, quantity: u32) -> Result<(), SimError> {
        if self.ents[me].jobs.get(&job).map_or(true, |j| j.started || j.finished) {
            return Ok(());
        }
        let conv = self.post.new_conversation();
        let now = self.now;
        let state = NegotiationState::new(
            conv,
            Purpose::Resource { parent: job.clone(), component: component.clone(), quantity },
            job.clone(),
            Vec::new(),
            now,
            self.cfg.params.quote_ttl,
            self.cfg.params.max_rounds,
        );
        let due = self.ents[me].jobs[&job]
            .members
            .iter()
            .filter_map(|m| self.order_contract.get(m).map(|k| self.contract(k).agreed_due))
            .min()
            .unwrap_or(now);
        let neg = Neg { state, product: component, quantity, due, price: 0, demand: Vec::new() };
        self.ent(me).negotiations.insert(conv, neg);
        self.begin_round(me, conv)
    }

    /// Every award was accepted (or none was needed).
    fn finalize(&mut self, me: &EnterpriseId, conv: ConversationId) -> Result<(), SimError> {
        let neg = self.ent(me).negotiations.remove(&conv).expect("negotiation");
        self.record_outcome(me, &neg);
        let now = self.now;
        let transit = self.transit();
        match &neg.state.purpose {
            Purpose::Resource { parent, .. } => {
                let ready = self.ents[me].purchases_of(parent).map(|(_, p)| p.expected_arrival).max().unwrap_or(now);
                self.replan(me, Disruption::ComponentLate { order: parent.clone(), ready_at: ready }, Cause::ComponentLate, None)?;
                Ok(())
            }
            Purpose::Fulfil => {
                let job = neg.state.order.clone();
                let selected = neg.state.selected.clone().expect("closed with a scenario");
                let shop = &self.ents[me].shop;
                let start = shop.start_of(&job).unwrap_or(now);
                let finish = shop.completion_of(&job).unwrap_or(now);
                let suborders: Vec<OrderId> = self.ents[me].purchases_of(&job).map(|(_, p)| p.suborder.clone()).collect();
                self.ent(me).jobs.insert(
                    job.clone(),
                    JobInfo { members: neg.state.members.clone(), started: false, finished: false },
                );
                for m in &neg.state.members {
                    let origin = self.ents[me].origins[m].clone();
                    let contract = match &origin {
                        Origin::Customer { .. } => {
                            let o = self.orders[m].clone();
                            let id = self.new_contract_id();
                            let k = Contract::draft(id, m.clone(), o.customer, me.clone(), selected.delivery, o.price, self.penalty_rate(), now);
                            self.insert_contract(k.clone());
                            self.apply(&k.id, ContractEvent::Accept)?
                        }
                        Origin::Award { contract, .. } => self.apply(contract, ContractEvent::Accept)?,
                    };
                    let reply = match &origin {
                        Origin::Customer { .. } => (Performative::Confirm, Payload::ContractTerms { contract: contract.clone() }),
                        Origin::Award { .. } => (Performative::Accept, Payload::Contract { contract: Some(contract.id.clone()), order: m.clone(), reason: None }),
                    };
                    let env = Envelope::new(AgentId::negotiator(me), origin.agent().clone(), origin.conversation(), reply.0, reply.1);
                    self.send(env)?;
                    self.set_status(m, OrderStatus::Contracted);
                    let plan = MilestonePlan::from_production(now, start, finish, transit);
                    self.ent(me)
                        .tracking
                        .register(&contract, neg.product.clone(), neg.quantity, plan, suborders.clone())
                        .map_err(|e| SimError::Internal(e.to_string()))?;
                    self.track(me, m, TrackingInput::Milestone { milestone: MilestoneKind::Confirmed, at: now })?;
                }
                Ok(())
            }
        }
    }

    /// Gives up on a negotiation from any phase.
    pub(super) fn fail_negotiation(&mut self, me: &EnterpriseId, conv: ConversationId) -> Result<(), SimError> {
        let Some(neg) = self.ent(me).negotiations.get_mut(&conv) else { return Ok(()) };
        let drafted: Vec<ContractId> = neg.state.contracts.values().cloned().collect();
        neg.state.fail();
        for k in &drafted {
            self.ent(me).awards.remove(k);
        }
        // Awards already accepted are active and must be undone.
        let open: Vec<ContractId> = drafted.into_iter().filter(|k| self.contract(k).is_active()).collect();
        self.cancel_purchases(me, &open, "negotiation failed")?;
        self.conclude_failure(me, conv)
    }

    /// Phase is Failed: tell whoever asked and clean up.
    fn conclude_failure(&mut self, me: &EnterpriseId, conv: ConversationId) -> Result<(), SimError> {
        let neg = self.ent(me).negotiations.remove(&conv).expect("negotiation");
        self.record_outcome(me, &neg);
        match &neg.state.purpose {
            Purpose::Fulfil => {
                let now = self.now;
                self.ent(me).shop.release_job(&neg.state.order, now);
                for m in &neg.state.members {
                    self.set_status(m, OrderStatus::Failed);
                    let origin = self.ents[me].origins[m].clone();
                    let contract = match &origin {
                        Origin::Customer { .. } => None,
                        Origin::Award { contract, .. } => Some(contract.clone()),
                    };
                    let payload = Payload::Contract { contract, order: m.clone(), reason: Some("no feasible scenario".into()) };
                    let env = Envelope::new(AgentId::negotiator(me), origin.agent().clone(), origin.conversation(), Performative::Reject, payload);
                    self.send(env)?;
                }
                Ok(())
            }
            Purpose::Resource { parent, .. } => self.fail_job(me, parent),
        }
    }

    /// A job lost a component for good: cancel its sales toward the buyers.
    fn fail_job(&mut self, me: &EnterpriseId, job: &OrderId) -> Result<(), SimError> {
        let Some(info) = self.ents[me].jobs.get(job).cloned() else { return Ok(()) };
        for m in &info.members {
            let Some(k) = self.order_contract.get(m).cloned() else { continue };
            if !self.contract(&k).is_active() {
                continue;
            }
            let c = self.apply(&k, ContractEvent::Cancel)?;
            let to = self.buyer_agent(&c.buyer);
            let env = Envelope::new(
                AgentId::negotiator(me),
                to,
                self.post.new_conversation(),
                Performative::Cancel,
                Payload::Contract { contract: Some(k), order: m.clone(), reason: Some("component unavailable".into()) },
            );
            self.send(env)?;
            self.close_sale(me, m, OrderStatus::Cancelled)?;
        }
        self.abandon_job(me, job)
    }
}
