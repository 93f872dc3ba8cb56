//! Typed envelopes, per-agent mailboxes and a deterministic simulated network.
//!
//! Every interaction between agents goes through a [`PostOffice`]. Delivery
//! order is total: `(delivery tick, sender id, send sequence)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Contract, ContractId, ConversationId, EnterpriseId, Order, OrderId, ProductId, Tick};
use crate::negotiation::SupplyVector;
use crate::planner::{Quote, ScheduleRow};
use crate::tracking::{EndangermentEvent, FinalizedRecord};

/// Address of one agent. Enterprise agents are `<enterprise>/<role>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn negotiator(e: &EnterpriseId) -> Self {
        Self(format!("{e}/negotiator"))
    }

    pub fn planner(e: &EnterpriseId) -> Self {
        Self(format!("{e}/planner"))
    }

    pub fn tracker(e: &EnterpriseId) -> Self {
        Self(format!("{e}/tracker"))
    }

    pub fn customer(e: &EnterpriseId) -> Self {
        Self(format!("{e}/customer"))
    }

    /// The chain-neutral tracing service.
    pub fn tracing_service() -> Self {
        Self("scc".to_string())
    }

    /// Enterprise part of the address (the whole id for unscoped agents).
    pub fn enterprise(&self) -> EnterpriseId {
        EnterpriseId::new(self.0.split('/').next().unwrap_or(&self.0))
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Performative {
    CallForQuote,
    Quote,
    RequestSupplyVector,
    SupplyVector,
    Award,
    Accept,
    Reject,
    Cancel,
    EndangermentNotice,
    RescheduleRequest,
    RenegotiateRequest,
    Amend,
    Confirm,
    TraceRecord,
}

/// Message bodies. Which variants a performative may carry is fixed by
/// [`Performative::accepts`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// A new order arrives at its supplier.
    Order { order: Order },
    /// Ask the local planner for processing time and cost.
    QuoteRequest {
        order: OrderId,
        product: ProductId,
        quantity: u32,
        earliest_start: Tick,
    },
    /// `quote` is `None` when the planner cannot make the product.
    Quote {
        order: OrderId,
        quote: Option<Quote>,
        load: f64,
    },
    SupplyRequest {
        order: OrderId,
        product: ProductId,
        quantity: u32,
        needed_by: Tick,
    },
    /// `vector` is `None` when the supplier declines.
    Supply {
        order: OrderId,
        product: ProductId,
        vector: Option<SupplyVector>,
    },
    Award { contract: Contract, order: Order },
    /// `contract` is `None` when an order is refused before any contract exists.
    Contract { contract: Option<ContractId>, order: OrderId, reason: Option<String> },
    ContractTerms { contract: Contract },
    Endangerment { event: EndangermentEvent, contract: ContractId },
    Amendment {
        contract: ContractId,
        order: OrderId,
        new_due: Tick,
        new_price: i64,
    },
    Schedule { order: OrderId, rows: Vec<ScheduleRow> },
    Trace { record: Box<FinalizedRecord> },
}

impl Performative {
    pub fn accepts(self, payload: &Payload) -> bool {
        use Payload as P;
        use Performative::*;
        match self {
            CallForQuote => matches!(payload, P::Order { .. } | P::QuoteRequest { .. }),
            Quote => matches!(payload, P::Quote { .. }),
            RequestSupplyVector => matches!(payload, P::SupplyRequest { .. }),
            SupplyVector => matches!(payload, P::Supply { .. }),
            Award => matches!(payload, P::Award { .. }),
            Accept | Reject | Cancel => matches!(payload, P::Contract { .. }),
            EndangermentNotice | RescheduleRequest | RenegotiateRequest => {
                matches!(payload, P::Endangerment { .. })
            }
            Amend => matches!(payload, P::Amendment { .. }),
            Confirm => matches!(payload, P::ContractTerms { .. } | P::Schedule { .. }),
            TraceRecord => matches!(payload, P::Trace { .. }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub from: AgentId,
    pub to: AgentId,
    pub conversation: ConversationId,
    pub performative: Performative,
    pub payload: Payload,
    pub sent_at: Tick,
    /// Filled in by [`PostOffice::send`].
    #[serde(default)]
    pub deliver_at: Tick,
    /// Global send sequence number, filled in by [`PostOffice::send`].
    #[serde(default)]
    pub seq: u64,
}

impl Envelope {
    pub fn new(
        from: AgentId,
        to: AgentId,
        conversation: ConversationId,
        performative: Performative,
        payload: Payload,
    ) -> Self {
        Self {
            from,
            to,
            conversation,
            performative,
            payload,
            sent_at: 0,
            deliver_at: 0,
            seq: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessagingError {
    #[error("unknown recipient `{0}`")]
    UnknownRecipient(AgentId),
    #[error("unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("agent `{0}` cannot send to itself")]
    SelfAddressed(AgentId),
    #[error("payload does not match performative {0:?}")]
    PayloadMismatch(Performative),
}

/// Message loss hook. The shipped network is reliable.
pub trait LossModel: fmt::Debug + Send {
    fn drops(&mut self, envelope: &Envelope) -> bool;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Reliable;

impl LossModel for Reliable {
    fn drops(&mut self, _: &Envelope) -> bool {
        false
    }
}

/// Latency per ordered pair of enterprises; pairs not listed use `default_latency`.
#[derive(Debug)]
pub struct NetworkModel {
    pub default_latency: Tick,
    pub latency: BTreeMap<(EnterpriseId, EnterpriseId), Tick>,
    pub loss: Box<dyn LossModel>,
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self {
            default_latency: 0,
            latency: BTreeMap::new(),
            loss: Box::new(Reliable),
        }
    }
}

impl NetworkModel {
    pub fn with_latency(default_latency: Tick) -> Self {
        Self {
            default_latency,
            ..Self::default()
        }
    }

    pub fn latency(&self, from: &AgentId, to: &AgentId) -> Tick {
        let key = (from.enterprise(), to.enterprise());
        self.latency.get(&key).copied().unwrap_or(self.default_latency)
    }
}

/// Monotone conversation id allocator.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConversationCounter {
    last: u64,
}

impl ConversationCounter {
    /// Continues numbering after an id seen in a previously saved run.
    pub fn resume_after(last: ConversationId) -> Self {
        Self { last: last.0 }
    }

    pub fn next_id(&mut self) -> ConversationId {
        self.last += 1;
        ConversationId(self.last)
    }

    pub fn last(&self) -> Option<ConversationId> {
        (self.last > 0).then_some(ConversationId(self.last))
    }
}

/// Mailboxes plus the simulated network and the global message log.
#[derive(Debug, Default)]
pub struct PostOffice {
    pub network: NetworkModel,
    agents: BTreeSet<AgentId>,
    mailboxes: BTreeMap<AgentId, Vec<Envelope>>,
    conversations: ConversationCounter,
    next_seq: u64,
    log: Vec<Envelope>,
}

impl PostOffice {
    pub fn new(network: NetworkModel) -> Self {
        Self {
            network,
            ..Self::default()
        }
    }

    pub fn register(&mut self, agent: AgentId) {
        self.mailboxes.entry(agent.clone()).or_default();
        self.agents.insert(agent);
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.agents.iter()
    }

    pub fn new_conversation(&mut self) -> ConversationId {
        self.conversations.next_id()
    }

    pub fn resume_conversations_after(&mut self, last: ConversationId) {
        self.conversations = ConversationCounter::resume_after(last);
    }

    /// Enqueues `env` for delivery at `now + latency(from, to)` and returns
    /// that tick.
    pub fn send(&mut self, mut env: Envelope, now: Tick) -> Result<Tick, MessagingError> {
        if env.from == env.to {
            return Err(MessagingError::SelfAddressed(env.from));
        }
        if !self.agents.contains(&env.to) {
            return Err(MessagingError::UnknownRecipient(env.to));
        }
        if !env.performative.accepts(&env.payload) {
            return Err(MessagingError::PayloadMismatch(env.performative));
        }
        env.sent_at = now;
        env.deliver_at = now + self.network.latency(&env.from, &env.to);
        env.seq = self.next_seq;
        self.next_seq += 1;
        let at = env.deliver_at;
        self.log.push(env.clone());
        if !self.network.loss.drops(&env) {
            self.mailboxes.entry(env.to.clone()).or_default().push(env);
        }
        Ok(at)
    }

    /// Removes and returns every envelope for `agent` deliverable by `now`,
    /// ordered by `(deliver_at, from, seq)`.
    pub fn poll(&mut self, agent: &AgentId, now: Tick) -> Result<Vec<Envelope>, MessagingError> {
        let mailbox = self
            .mailboxes
            .get_mut(agent)
            .ok_or_else(|| MessagingError::UnknownAgent(agent.clone()))?;
        let (mut ready, rest): (Vec<_>, Vec<_>) =
            mailbox.drain(..).partition(|e| e.deliver_at <= now);
        *mailbox = rest;
        ready.sort_by(|a, b| (a.deliver_at, &a.from, a.seq).cmp(&(b.deliver_at, &b.from, b.seq)));
        Ok(ready)
    }

    /// True if some mailbox holds a message deliverable by `now`.
    pub fn has_deliverable(&self, now: Tick) -> bool {
        self.mailboxes
            .values()
            .any(|m| m.iter().any(|e| e.deliver_at <= now))
    }

    pub fn pending(&self) -> usize {
        self.mailboxes.values().map(Vec::len).sum()
    }

    pub fn log(&self) -> &[Envelope] {
        &self.log
    }

    /// Writes the message log, one JSON envelope per line.
    pub fn write_log<W: Write>(&self, out: W) -> io::Result<()> {
        write_log(&self.log, out)
    }
}

pub fn write_log<W: Write>(log: &[Envelope], mut out: W) -> io::Result<()> {
    for env in log {
        serde_json::to_writer(&mut out, env)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn office(latency: Tick) -> PostOffice {
        let mut po = PostOffice::new(NetworkModel::with_latency(latency));
        for a in ["a/negotiator", "b/negotiator", "c/negotiator"] {
            po.register(AgentId::new(a));
        }
        po
    }

    fn msg(po: &mut PostOffice, from: &str, to: &str) -> Envelope {
        let c = po.new_conversation();
        Envelope::new(
            AgentId::new(from),
            AgentId::new(to),
            c,
            Performative::Accept,
            Payload::Contract {
                contract: Some(ContractId::new("K1")),
                order: OrderId::new("O1"),
                reason: None,
            },
        )
    }

    #[test]
    fn zero_and_positive_latency() {
        let mut po = office(0);
        let e = msg(&mut po, "a/negotiator", "b/negotiator");
        assert_eq!(po.send(e, 3).unwrap(), 3);

        let mut po = office(2);
        let e = msg(&mut po, "a/negotiator", "b/negotiator");
        assert_eq!(po.send(e, 3).unwrap(), 5);
        let b = AgentId::new("b/negotiator");
        assert!(po.poll(&b, 4).unwrap().is_empty());
        assert_eq!(po.poll(&b, 5).unwrap().len(), 1);
    }

    #[test]
    fn fifo_and_sender_order_and_exactly_once() {
        let mut po = office(0);
        let b = AgentId::new("b/negotiator");
        assert!(po.poll(&b, 0).unwrap().is_empty());
        let first = msg(&mut po, "c/negotiator", "b/negotiator");
        let second = msg(&mut po, "c/negotiator", "b/negotiator");
        let third = msg(&mut po, "a/negotiator", "b/negotiator");
        po.send(first.clone(), 3).unwrap();
        po.send(second.clone(), 3).unwrap();
        po.send(third.clone(), 3).unwrap();
        let got = po.poll(&b, 3).unwrap();
        let convs: Vec<_> = got.iter().map(|e| e.conversation).collect();
        assert_eq!(convs, vec![third.conversation, first.conversation, second.conversation]);
        assert!(po.poll(&b, 10).unwrap().is_empty());
    }

    #[test]
    fn errors() {
        let mut po = office(0);
        let e = msg(&mut po, "a/negotiator", "zz/negotiator");
        assert!(matches!(po.send(e, 0), Err(MessagingError::UnknownRecipient(_))));
        let e = msg(&mut po, "a/negotiator", "a/negotiator");
        assert!(matches!(po.send(e, 0), Err(MessagingError::SelfAddressed(_))));
        assert!(matches!(
            po.poll(&AgentId::new("nobody"), 0),
            Err(MessagingError::UnknownAgent(_))
        ));
        let mut bad = msg(&mut po, "a/negotiator", "b/negotiator");
        bad.performative = Performative::Quote;
        assert!(matches!(po.send(bad, 0), Err(MessagingError::PayloadMismatch(_))));
    }

    #[test]
    fn conversation_ids() {
        let mut po = office(0);
        assert_eq!(po.new_conversation(), ConversationId(1));
        let b = po.new_conversation();
        assert_eq!(b, ConversationId(2));

        // A saved run continues where it stopped: the resumed stream equals
        // the tail of an uninterrupted one.
        let mut uninterrupted = ConversationCounter::default();
        let full: Vec<_> = (0..6).map(|_| uninterrupted.next_id()).collect();
        let mut resumed = ConversationCounter::resume_after(full[2]);
        let tail: Vec<_> = (0..3).map(|_| resumed.next_id()).collect();
        assert_eq!(tail, full[3..]);
    }
}
