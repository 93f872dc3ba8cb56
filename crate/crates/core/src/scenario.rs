//! Scenario files: the chain (enterprises, products, supply relations) plus
//! the run configuration (demand, disruptions, parameters, horizon, seed).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{BomEntry, BomRegistry, Cents, EnterpriseId, ProductId, Tick};
use crate::planner::{CellId, Interval, PlannerPolicy, Routing};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Customer,
    Manufacturer,
    Supplier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnterpriseSpec {
    pub id: EnterpriseId,
    pub role: Role,
    #[serde(default = "default_policy")]
    pub policy: PlannerPolicy,
    #[serde(default)]
    pub cells: Vec<CellId>,
    #[serde(default)]
    pub routings: Vec<Routing>,
    /// Margin added to production cost when quoting to buyers, in percent.
    #[serde(default = "default_markup")]
    pub markup_pct: i64,
    /// Ticks allowed for sourcing own components when quoting to buyers.
    #[serde(default)]
    pub sourcing_lead: Tick,
}

fn default_policy() -> PlannerPolicy {
    PlannerPolicy::Discrete
}

fn default_markup() -> i64 {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductSpec {
    pub id: ProductId,
    /// Price per unit charged to the end customer.
    #[serde(default)]
    pub unit_price: Cents,
    #[serde(default)]
    pub bom: Vec<BomEntry>,
}

/// `supplier` delivers `product` to `buyer`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SupplyRelation {
    pub supplier: EnterpriseId,
    pub product: ProductId,
    pub buyer: EnterpriseId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DemandModel {
    Constant { level: f64 },
    Seasonal { base: f64, amplitude: f64, period: f64 },
    Spike { base: f64, spike_size: f64, spike_times: Vec<Tick> },
}

impl DemandModel {
    /// Deterministic part of the demand at tick `t`.
    pub fn level(&self, t: Tick) -> f64 {
        match self {
            DemandModel::Constant { level } => *level,
            DemandModel::Seasonal { base, amplitude, period } => {
                base + amplitude * (std::f64::consts::TAU * t as f64 / period).sin()
            }
            DemandModel::Spike { base, spike_size, spike_times } => {
                if spike_times.contains(&t) {
                    base + spike_size
                } else {
                    *base
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSpec {
    /// End product ordered by the customer.
    pub product: ProductId,
    pub model: DemandModel,
    /// Uniform integer noise in `[-noise, noise]` added to every draw.
    #[serde(default)]
    pub noise: u32,
    /// Ticks between customer orders.
    #[serde(default = "one")]
    pub interval: Tick,
    /// Requested due date relative to the order tick.
    pub due_offset: Tick,
    /// No new demand from this tick on.
    #[serde(default)]
    pub until: Option<Tick>,
}

fn one() -> Tick {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisruptionSpec {
    CellDown {
        enterprise: EnterpriseId,
        cell: CellId,
        interval: Interval,
        /// Tick the outage becomes known; defaults to its start.
        #[serde(default)]
        at: Option<Tick>,
    },
    ShipmentDelay {
        order: String,
        extra: Tick,
        at: Tick,
    },
}

impl DisruptionSpec {
    pub fn at(&self) -> Tick {
        match self {
            DisruptionSpec::CellDown { interval, at, .. } => at.unwrap_or(interval.start),
            DisruptionSpec::ShipmentDelay { at, .. } => *at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    /// Endangerment threshold override in ticks (default: 10% of lead time).
    pub theta: Option<Tick>,
    /// Scenario cap for negotiation.
    pub k: usize,
    pub quote_ttl: Tick,
    pub max_rounds: u32,
    /// Penalty per tick late (default: 1% of the agreed price).
    pub penalty_rate: Option<Cents>,
    pub transit_time: Tick,
    /// Message latency between enterprises.
    pub latency: Tick,
    /// Lateness the end customer tolerates beyond its requested due date.
    pub customer_tolerance: Tick,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            theta: None,
            k: crate::negotiation::DEFAULT_SCENARIO_CAP,
            quote_ttl: crate::negotiation::DEFAULT_QUOTE_TTL,
            max_rounds: crate::negotiation::DEFAULT_MAX_ROUNDS,
            penalty_rate: None,
            transit_time: 1,
            latency: 0,
            customer_tolerance: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub enterprises: Vec<EnterpriseSpec>,
    pub products: Vec<ProductSpec>,
    pub suppliers: Vec<SupplyRelation>,
    pub demand: DemandSpec,
    #[serde(default)]
    pub disruptions: Vec<DisruptionSpec>,
    #[serde(default)]
    pub params: Params,
    pub horizon: Tick,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical (compact) serialization.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(canonical))
    }

    pub fn customer(&self) -> Option<&EnterpriseSpec> {
        self.enterprises.iter().find(|e| e.role == Role::Customer)
    }

    pub fn bom(&self) -> Result<BomRegistry, crate::model::ModelError> {
        let mut reg = BomRegistry::new();
        for p in &self.products {
            reg.insert(p.id.as_str(), p.bom.clone())?;
        }
        Ok(reg)
    }

    /// Every violated invariant, not just the first.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let errors = self.check();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errors))
        }
    }

    fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();

        let mut ents: BTreeMap<&EnterpriseId, &EnterpriseSpec> = BTreeMap::new();
        for e in &self.enterprises {
            if ents.insert(&e.id, e).is_some() {
                errs.push(format!("duplicate enterprise `{}`", e.id));
            }
            if e.id.as_str().contains('/') || e.id.as_str() == "scc" {
                errs.push(format!("enterprise id `{}` is reserved or contains '/'", e.id));
            }
        }
        let customers: Vec<_> = self.enterprises.iter().filter(|e| e.role == Role::Customer).collect();
        if customers.len() != 1 {
            errs.push(format!("expected exactly one customer enterprise, found {}", customers.len()));
        }

        let mut products = BTreeSet::new();
        for p in &self.products {
            if !products.insert(&p.id) {
                errs.push(format!("duplicate product `{}`", p.id));
            }
            if p.unit_price < 0 {
                errs.push(format!("product `{}` has a negative price", p.id));
            }
        }
        for p in &self.products {
            let mut seen = BTreeSet::new();
            for b in &p.bom {
                if !products.contains(&b.component) {
                    errs.push(format!("bom of `{}` references unknown product `{}`", p.id, b.component));
                }
                if b.quantity_per_unit == 0 {
                    errs.push(format!("bom of `{}`: component `{}` has quantity 0", p.id, b.component));
                }
                if !seen.insert(&b.component) {
                    errs.push(format!("bom of `{}` lists `{}` twice", p.id, b.component));
                }
            }
        }
        let mut reg = BomRegistry::new();
        for p in &self.products {
            let entries: Vec<BomEntry> = p.bom.iter().filter(|b| b.quantity_per_unit > 0).cloned().collect();
            let mut uniq = BTreeSet::new();
            let entries = entries.into_iter().filter(|b| uniq.insert(b.component.clone())).collect();
            let _ = reg.insert(p.id.as_str(), entries);
        }
        if let Some(cycle) = reg.find_cycle() {
            let names: Vec<&str> = cycle.iter().map(ProductId::as_str).collect();
            errs.push(format!("bom cycle: {}", names.join(" -> ")));
        }

        for e in &self.enterprises {
            if e.role == Role::Customer {
                continue;
            }
            if let Err(err) = e.policy.validate() {
                errs.push(format!("enterprise `{}`: {err}", e.id));
            }
            let cells: BTreeSet<&CellId> = e.cells.iter().collect();
            if cells.len() != e.cells.len() {
                errs.push(format!("enterprise `{}` lists a cell twice", e.id));
            }
            for r in &e.routings {
                if !products.contains(&r.product) {
                    errs.push(format!("enterprise `{}` routes unknown product `{}`", e.id, r.product));
                }
                if r.operations.is_empty() {
                    errs.push(format!("routing of `{}` at `{}` has no operations", r.product, e.id));
                }
                for op in &r.operations {
                    if op.unit_time == 0 {
                        errs.push(format!("operation `{}` at `{}` has unit_time 0", op.id, e.id));
                    }
                    if op.cost_rate < 0 {
                        errs.push(format!("operation `{}` at `{}` has a negative cost rate", op.id, e.id));
                    }
                    if op.eligible_cells.is_empty() {
                        errs.push(format!("operation `{}` at `{}` has no eligible cell", op.id, e.id));
                    }
                    for c in &op.eligible_cells {
                        if !cells.contains(c) {
                            errs.push(format!("routing of `{}` at `{}` references missing cell `{c}`", r.product, e.id));
                        }
                    }
                }
            }
        }

        for s in &self.suppliers {
            let sup = ents.get(&s.supplier);
            match sup {
                None => errs.push(format!("supply relation names unknown supplier `{}`", s.supplier)),
                Some(e) if e.role == Role::Customer => {
                    errs.push(format!("customer `{}` cannot act as a supplier", s.supplier))
                }
                Some(e) => {
                    if !e.routings.iter().any(|r| r.product == s.product) {
                        errs.push(format!("supplier `{}` has no routing for `{}`", s.supplier, s.product));
                    }
                }
            }
            if !ents.contains_key(&s.buyer) {
                errs.push(format!("supply relation names unknown buyer `{}`", s.buyer));
            }
            if !products.contains(&s.product) {
                errs.push(format!("supply relation names unknown product `{}`", s.product));
            }
            if s.supplier == s.buyer {
                errs.push(format!("`{}` cannot supply itself", s.supplier));
            }
        }
        if let Some(cycle) = supplier_cycle(&self.suppliers) {
            let names: Vec<&str> = cycle.iter().map(EnterpriseId::as_str).collect();
            errs.push(format!("supplier graph cycle: {}", names.join(" -> ")));
        }

        if let Some(c) = customers.first() {
            let end: Vec<_> = self
                .suppliers
                .iter()
                .filter(|s| s.buyer == c.id && s.product == self.demand.product)
                .collect();
            if end.len() != 1 {
                errs.push(format!(
                    "demand product `{}` must have exactly one supplier to `{}`, found {}",
                    self.demand.product,
                    c.id,
                    end.len()
                ));
            }
        }
        if !products.contains(&self.demand.product) {
            errs.push(format!("demand names unknown product `{}`", self.demand.product));
        }
        if self.demand.interval == 0 {
            errs.push("demand interval must be at least 1".to_string());
        }
        if let DemandModel::Seasonal { period, .. } = self.demand.model {
            if period <= 0.0 {
                errs.push("seasonal demand needs a positive period".to_string());
            }
        }

        for d in &self.disruptions {
            if d.at() > self.horizon {
                errs.push(format!("disruption at tick {} lies beyond the horizon {}", d.at(), self.horizon));
            }
            match d {
                DisruptionSpec::CellDown { enterprise, cell, interval, .. } => match ents.get(enterprise) {
                    None => errs.push(format!("disruption names unknown enterprise `{enterprise}`")),
                    Some(e) => {
                        if !e.cells.contains(cell) {
                            errs.push(format!("disruption names missing cell `{cell}` at `{enterprise}`"));
                        }
                        if interval.is_empty() {
                            errs.push(format!("disruption on `{cell}` has an empty interval"));
                        }
                    }
                },
                DisruptionSpec::ShipmentDelay { order, extra, .. } => {
                    if !order.starts_with('O') || order[1..].parse::<u64>().is_err() {
                        errs.push(format!("shipment delay names malformed order id `{order}`"));
                    }
                    if *extra == 0 {
                        errs.push(format!("shipment delay of `{order}` is zero"));
                    }
                }
            }
        }
        errs
    }
}

fn supplier_cycle(rel: &[SupplyRelation]) -> Option<Vec<EnterpriseId>> {
    let mut edges: BTreeMap<&EnterpriseId, BTreeSet<&EnterpriseId>> = BTreeMap::new();
    for r in rel {
        edges.entry(&r.buyer).or_default().insert(&r.supplier);
    }
    fn dfs<'a>(
        n: &'a EnterpriseId,
        edges: &BTreeMap<&'a EnterpriseId, BTreeSet<&'a EnterpriseId>>,
        path: &mut Vec<&'a EnterpriseId>,
        done: &mut BTreeSet<&'a EnterpriseId>,
    ) -> Option<Vec<EnterpriseId>> {
        if let Some(i) = path.iter().position(|p| *p == n) {
            let mut c: Vec<EnterpriseId> = path[i..].iter().map(|e| (*e).clone()).collect();
            c.push(n.clone());
            return Some(c);
        }
        if done.contains(n) {
            return None;
        }
        path.push(n);
        for m in edges.get(n).into_iter().flatten() {
            if let Some(c) = dfs(m, edges, path, done) {
                return Some(c);
            }
        }
        path.pop();
        done.insert(n);
        None
    }
    let mut done = BTreeSet::new();
    for n in edges.keys() {
        if let Some(c) = dfs(n, &edges, &mut Vec::new(), &mut done) {
            return Some(c);
        }
    }
    None
}

/// The reference chain: an automotive equipment manufacturer assembling
/// wheel modules from axles (components supplier) and tyres (tyre
/// supplier), with logistics legs to it and to the end customer.
pub const AUTOMOTIVE: &str = include_str!("../scenarios/automotive.json");

/// Two-echelon chain used for order-variance measurements.
pub const TWO_ECHELON: &str = include_str!("../scenarios/two_echelon.json");

pub fn automotive() -> ScenarioFile {
    ScenarioFile::parse(AUTOMOTIVE).expect("bundled scenario parses")
}

pub fn two_echelon() -> ScenarioFile {
    ScenarioFile::parse(TWO_ECHELON).expect("bundled scenario parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn invalid(s: &ScenarioFile) -> Vec<String> {
        match s.validate() {
            Err(ScenarioError::Invalid(e)) => e,
            other => panic!("expected validation errors, got {other:?}"),
        }
    }

    #[test]
    fn bundled_scenarios_validate() {
        automotive().validate().unwrap();
        two_echelon().validate().unwrap();
    }

    #[test]
    fn bom_cycle_is_named() {
        let mut s = automotive();
        let car = s.products.iter().position(|p| p.id.as_str() == "wheel_module").unwrap();
        s.products[car].bom.push(BomEntry::new("car", 1));
        s.products.push(ProductSpec {
            id: "car".into(),
            unit_price: 0,
            bom: vec![BomEntry::new("wheel_module", 1)],
        });
        let errs = invalid(&s);
        assert!(errs.iter().any(|e| e.contains("bom cycle") && e.contains("car") && e.contains("wheel_module")), "{errs:?}");
    }

    #[test]
    fn missing_cell_is_named_and_all_errors_reported() {
        let mut s = automotive();
        let oem = s.enterprises.iter_mut().find(|e| e.id.as_str() == "oem").unwrap();
        oem.routings[0].operations[0].eligible_cells.insert("ghost_cell".into());
        s.demand.interval = 0;
        let errs = invalid(&s);
        assert!(errs.iter().any(|e| e.contains("ghost_cell")), "{errs:?}");
        assert!(errs.len() >= 2);
    }

    #[test]
    fn parse_error_has_position() {
        match ScenarioFile::parse("{\n  \"enterprises\": [,\n}") {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn roundtrip_and_digest_stable() {
        let s = automotive();
        let again = ScenarioFile::parse(&s.to_json()).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.digest(), s.digest());
    }
}
