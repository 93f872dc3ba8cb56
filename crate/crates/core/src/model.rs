//! Shared domain vocabulary: identifiers, bills of materials, orders and
//! contracts.
//!
//! Time is a discrete integer tick and money is an integer amount of cents,
//! so every comparison made by the planners and the negotiation agents is
//! exact and platform independent.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in ticks.
pub type Tick = u64;

/// Fixed-point currency in cents.
pub type Cents = i64;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(
    /// A product or component.
    ProductId
);
string_id!(
    /// A supply chain partner (manufacturer, supplier or the end customer).
    EnterpriseId
);
string_id!(OrderId);
string_id!(ContractId);

/// Conversation thread identifier. Allocated monotonically per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConversationId(pub u64);

impl fmt::Display for ConversationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown product `{0}`")]
    UnknownProduct(ProductId),
    #[error("bill of materials contains a cycle: {}", join_ids(.0))]
    CyclicBom(Vec<ProductId>),
    #[error("invalid bill of materials for `{product}`: {reason}")]
    InvalidBom { product: ProductId, reason: String },
    #[error("illegal contract transition: {event} in state {state:?}")]
    IllegalTransition {
        state: ContractState,
        event: &'static str,
    },
}

fn join_ids(ids: &[ProductId]) -> String {
    ids.iter()
        .map(ProductId::as_str)
        .collect::<Vec<_>>()
        .join(" -> ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BomEntry {
    pub component: ProductId,
    pub quantity_per_unit: u32,
}

impl BomEntry {
    pub fn new(component: impl Into<String>, quantity_per_unit: u32) -> Self {
        Self {
            component: ProductId::new(component),
            quantity_per_unit,
        }
    }
}

/// Product structure of the whole chain. A product with an empty entry list
/// is a purchased (leaf) product.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BomRegistry {
    entries: BTreeMap<ProductId, Vec<BomEntry>>,
}

impl BomRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a product. Rejects zero quantities and duplicate components.
    /// Components that are not yet known are registered as leaves.
    pub fn insert(
        &mut self,
        product: impl Into<String>,
        entries: Vec<BomEntry>,
    ) -> Result<(), ModelError> {
        let product = ProductId::new(product);
        let mut seen = BTreeSet::new();
        for e in &entries {
            if e.quantity_per_unit == 0 {
                return Err(ModelError::InvalidBom {
                    product,
                    reason: format!("component `{}` has quantity 0", e.component),
                });
            }
            if !seen.insert(&e.component) {
                return Err(ModelError::InvalidBom {
                    product,
                    reason: format!("component `{}` listed twice", e.component),
                });
            }
        }
        for e in &entries {
            self.entries.entry(e.component.clone()).or_default();
        }
        self.entries.insert(product, entries);
        Ok(())
    }

    pub fn contains(&self, product: &ProductId) -> bool {
        self.entries.contains_key(product)
    }

    pub fn components(&self, product: &ProductId) -> Option<&[BomEntry]> {
        self.entries.get(product).map(Vec::as_slice)
    }

    pub fn products(&self) -> impl Iterator<Item = &ProductId> {
        self.entries.keys()
    }

    /// Returns one cycle (closed path, first element repeated at the end) if
    /// the parent -> component graph is not acyclic.
    pub fn find_cycle(&self) -> Option<Vec<ProductId>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Done,
        }
        fn visit<'a>(
            reg: &'a BomRegistry,
            p: &'a ProductId,
            marks: &mut BTreeMap<&'a ProductId, Mark>,
            path: &mut Vec<&'a ProductId>,
        ) -> Option<Vec<ProductId>> {
            match marks.get(p) {
                Some(Mark::Done) => return None,
                Some(Mark::Open) => {
                    let start = path.iter().position(|q| *q == p).unwrap_or(0);
                    let mut cycle: Vec<ProductId> =
                        path[start..].iter().map(|q| (*q).clone()).collect();
                    cycle.push(p.clone());
                    return Some(cycle);
                }
                None => {}
            }
            marks.insert(p, Mark::Open);
            path.push(p);
            for e in reg.entries.get(p).into_iter().flatten() {
                if let Some(c) = visit(reg, &e.component, marks, path) {
                    return Some(c);
                }
            }
            path.pop();
            marks.insert(p, Mark::Done);
            None
        }

        let mut marks = BTreeMap::new();
        for p in self.entries.keys() {
            let mut path = Vec::new();
            if let Some(c) = visit(self, p, &mut marks, &mut path) {
                return Some(c);
            }
        }
        None
    }
}

/// Full-depth component demand for `quantity` units of `product`.
///
/// Quantities are multiplied down the tree and summed per component;
/// intermediate products appear alongside leaves. The root never appears.
/// Output is sorted by ascending product id.
pub fn explode_bom(
    product: &ProductId,
    quantity: u64,
    registry: &BomRegistry,
) -> Result<Vec<(ProductId, u64)>, ModelError> {
    fn walk(
        product: &ProductId,
        quantity: u64,
        registry: &BomRegistry,
        path: &mut Vec<ProductId>,
        acc: &mut BTreeMap<ProductId, u64>,
    ) -> Result<(), ModelError> {
        let entries = registry
            .components(product)
            .ok_or_else(|| ModelError::UnknownProduct(product.clone()))?;
        path.push(product.clone());
        for e in entries {
            if let Some(start) = path.iter().position(|p| *p == e.component) {
                let mut cycle = path[start..].to_vec();
                cycle.push(e.component.clone());
                return Err(ModelError::CyclicBom(cycle));
            }
            let needed = quantity * u64::from(e.quantity_per_unit);
            *acc.entry(e.component.clone()).or_default() += needed;
            walk(&e.component, needed, registry, path, acc)?;
        }
        path.pop();
        Ok(())
    }

    let mut acc = BTreeMap::new();
    walk(product, quantity, registry, &mut Vec::new(), &mut acc)?;
    Ok(acc.into_iter().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderStatus {
    Requested,
    Negotiating,
    Contracted,
    InProduction,
    Shipped,
    Delivered,
    Failed,
    Cancelled,
}

impl OrderStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, OrderStatus::Delivered | OrderStatus::Failed | OrderStatus::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub customer: EnterpriseId,
    pub supplier: EnterpriseId,
    pub product: ProductId,
    pub quantity: u32,
    pub due: Tick,
    pub price: Cents,
    pub parent: Option<OrderId>,
    pub status: OrderStatus,
    pub created: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContractState {
    Draft,
    Active,
    Amended,
    Fulfilled,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum ContractEvent {
    Accept,
    Amend { new_due: Tick, new_price: Cents },
    Fulfill,
    Cancel,
}

impl ContractEvent {
    pub fn name(&self) -> &'static str {
        match self {
            ContractEvent::Accept => "accept",
            ContractEvent::Amend { .. } => "amend",
            ContractEvent::Fulfill => "fulfill",
            ContractEvent::Cancel => "cancel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contract {
    pub id: ContractId,
    pub order: OrderId,
    pub buyer: EnterpriseId,
    pub seller: EnterpriseId,
    pub agreed_due: Tick,
    pub agreed_price: Cents,
    pub penalty_rate: Cents,
    pub version: u32,
    pub state: ContractState,
    /// Tick the draft was written; lead time is measured from here.
    pub created: Tick,
}

/// Penalty per tick of lateness when a scenario does not set one: 1% of the
/// agreed price.
pub fn default_penalty_rate(agreed_price: Cents) -> Cents {
    agreed_price.max(0) / 100
}

impl Contract {
    #[allow(clippy::too_many_arguments)]
    pub fn draft(
        id: ContractId,
        order: OrderId,
        buyer: EnterpriseId,
        seller: EnterpriseId,
        agreed_due: Tick,
        agreed_price: Cents,
        penalty_rate: Option<Cents>,
        created: Tick,
    ) -> Self {
        let agreed_price = agreed_price.max(0);
        Self {
            id,
            order,
            buyer,
            seller,
            agreed_due,
            agreed_price,
            penalty_rate: penalty_rate.unwrap_or_else(|| default_penalty_rate(agreed_price)),
            version: 1,
            state: ContractState::Draft,
            created,
        }
    }

    pub fn lead_time(&self) -> Tick {
        self.agreed_due.saturating_sub(self.created)
    }

    pub fn is_active(&self) -> bool {
        self.state == ContractState::Active
    }
}

/// Applies one lifecycle event. Legal moves: Draft -accept-> Active;
/// Active -amend-> Active (version + 1, new terms); Amended -accept-> Active;
/// Active -fulfill-> Fulfilled; Active -cancel-> Cancelled.
pub fn contract_transition(
    contract: &Contract,
    event: &ContractEvent,
) -> Result<Contract, ModelError> {
    use ContractEvent as E;
    use ContractState as S;
    let mut next = contract.clone();
    match (contract.state, event) {
        (S::Draft, E::Accept) | (S::Amended, E::Accept) => next.state = S::Active,
        (S::Active, E::Amend { new_due, new_price }) => {
            next.version += 1;
            next.agreed_due = *new_due;
            next.agreed_price = (*new_price).max(0);
            next.state = S::Active;
        }
        (S::Active, E::Fulfill) => next.state = S::Fulfilled,
        (S::Active, E::Cancel) => next.state = S::Cancelled,
        (state, event) => {
            return Err(ModelError::IllegalTransition {
                state,
                event: event.name(),
            })
        }
    }
    Ok(next)
}

/// Replays an event log from the original draft.
pub fn replay_contract(draft: &Contract, events: &[ContractEvent]) -> Result<Contract, ModelError> {
    events
        .iter()
        .try_fold(draft.clone(), |c, e| contract_transition(&c, e))
}

/// A slice of an order's work assigned to a single production cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialOrder {
    pub parent: OrderId,
    pub operation: String,
    pub cell: String,
    pub quantity: u32,
    pub due: Tick,
}
