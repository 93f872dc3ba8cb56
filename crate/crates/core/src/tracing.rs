//! Chain-neutral history of finalized orders and the hindrance statistics
//! mined from it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EnterpriseId, OrderId, ProductId};
use crate::tracking::{FinalizedRecord, TrackingStatus};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TracingError {
    #[error("record for order `{0}` is not finalized")]
    NotFinalized(OrderId),
}

/// Append-only store, keyed by order id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryStore {
    records: Vec<FinalizedRecord>,
}

impl HistoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a completed or failed record. A second record for the same
    /// order is ignored.
    pub fn record(&mut self, rec: FinalizedRecord) -> Result<bool, TracingError> {
        if !matches!(rec.record.status, TrackingStatus::Completed | TrackingStatus::Failed) {
            return Err(TracingError::NotFinalized(rec.record.order));
        }
        if self.records.iter().any(|r| r.record.order == rec.record.order) {
            return Ok(false);
        }
        self.records.push(rec);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[FinalizedRecord] {
        &self.records
    }

    /// Store holding the records of both, `self` first.
    pub fn merged(&self, other: &HistoryStore) -> HistoryStore {
        let mut out = self.clone();
        for r in &other.records {
            // Ids may repeat across runs; keep both by suffixing the second.
            let mut r = r.clone();
            if out.records.iter().any(|x| x.record.order == r.record.order) {
                r.record.order = OrderId::new(format!("{}#{}", r.record.order, out.records.len()));
            }
            out.records.push(r);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplierStats {
    pub supplier: EnterpriseId,
    pub orders: u64,
    pub late: u64,
    pub delay_frequency: f64,
    /// Mean slip over the late orders.
    pub mean_slip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductStats {
    pub product: ProductId,
    pub orders: u64,
    pub late: u64,
    pub lateness_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotBucket {
    /// Inclusive lot-size range `[min, max]`, powers of two.
    pub min: u32,
    pub max: u32,
    pub orders: u64,
    /// Mean of `max(0, slip)`.
    pub mean_slip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hindrance {
    pub supplier: EnterpriseId,
    pub delay_frequency: f64,
    pub mean_slip: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub suppliers: Vec<SupplierStats>,
    pub cells: BTreeMap<String, u64>,
    pub products: Vec<ProductStats>,
    pub lot_sizes: Vec<LotBucket>,
    /// Late suppliers by delay frequency, then mean slip (both descending),
    /// then supplier id.
    pub hindrances: Vec<Hindrance>,
}

fn lot_bucket(size: u32) -> (u32, u32) {
    let size = size.max(1);
    let lo = 1u32 << (31 - size.leading_zeros());
    (lo, lo.saturating_mul(2) - 1)
}

/// Descriptive statistics over the whole store.
pub fn analyze(store: &HistoryStore) -> PatternReport {
    #[derive(Default)]
    struct Acc {
        orders: u64,
        late: u64,
        late_slip: i64,
    }
    let mut by_supplier: BTreeMap<&EnterpriseId, Acc> = BTreeMap::new();
    let mut by_product: BTreeMap<&ProductId, Acc> = BTreeMap::new();
    let mut by_lot: BTreeMap<(u32, u32), (u64, i64)> = BTreeMap::new();
    let mut cells: BTreeMap<String, u64> = BTreeMap::new();

    for r in store.records() {
        let late = r.is_late();
        let slip = r.slip().max(0);
        for acc in [
            by_supplier.entry(&r.record.seller).or_default(),
            by_product.entry(&r.record.product).or_default(),
        ] {
            acc.orders += 1;
            if late {
                acc.late += 1;
                acc.late_slip += slip;
            }
        }
        let b = by_lot.entry(lot_bucket(r.record.lot_size)).or_default();
        b.0 += 1;
        b.1 += slip;
        for c in &r.record.disrupted_cells {
            *cells.entry(c.clone()).or_default() += 1;
        }
    }

    let suppliers: Vec<SupplierStats> = by_supplier
        .into_iter()
        .map(|(s, a)| SupplierStats {
            supplier: s.clone(),
            orders: a.orders,
            late: a.late,
            delay_frequency: a.late as f64 / a.orders as f64,
            mean_slip: if a.late == 0 { 0.0 } else { a.late_slip as f64 / a.late as f64 },
        })
        .collect();
    let mut hindrances: Vec<Hindrance> = suppliers
        .iter()
        .filter(|s| s.late > 0)
        .map(|s| Hindrance {
            supplier: s.supplier.clone(),
            delay_frequency: s.delay_frequency,
            mean_slip: s.mean_slip,
        })
        .collect();
    hindrances.sort_by(|a, b| {
        b.delay_frequency
            .total_cmp(&a.delay_frequency)
            .then(b.mean_slip.total_cmp(&a.mean_slip))
            .then_with(|| a.supplier.cmp(&b.supplier))
    });
    PatternReport {
        suppliers,
        cells,
        products: by_product
            .into_iter()
            .map(|(p, a)| ProductStats {
                product: p.clone(),
                orders: a.orders,
                late: a.late,
                lateness_rate: a.late as f64 / a.orders as f64,
            })
            .collect(),
        lot_sizes: by_lot
            .into_iter()
            .map(|((min, max), (n, slip))| LotBucket {
                min,
                max,
                orders: n,
                mean_slip: slip as f64 / n as f64,
            })
            .collect(),
        hindrances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Contract, ContractId};
    use crate::tracking::{MilestoneKind, MilestonePlan, TrackingRecord};

    pub(crate) fn finalized(order: &str, seller: &str, delivered: u64, due: u64) -> FinalizedRecord {
        let mut k = Contract::draft(ContractId::new(format!("K-{order}")), OrderId::new(order), "oem".into(), seller.into(), due, 100, None, 0);
        k.state = crate::model::ContractState::Fulfilled;
        let mut rec = TrackingRecord::new(&k, "tyre".into(), 4, MilestonePlan::from_production(0, 1, due - 1, 1), vec![]);
        for m in rec.milestones.iter_mut() {
            m.actual = Some(if m.kind == MilestoneKind::Delivered { delivered } else { m.planned.min(delivered) });
        }
        rec.status = TrackingStatus::Completed;
        FinalizedRecord { record: rec, contract: k, original_due: due }
    }

    #[test]
    fn record_idempotent_and_rejects_in_flight() {
        let mut h = HistoryStore::new();
        assert_eq!(h.record(finalized("O1", "s", 10, 10)), Ok(true));
        assert_eq!(h.record(finalized("O1", "s", 10, 10)), Ok(false));
        assert_eq!(h.len(), 1);
        let mut open = finalized("O2", "s", 10, 10);
        open.record.status = TrackingStatus::OnTrack;
        assert_eq!(h.record(open), Err(TracingError::NotFinalized(OrderId::new("O2"))));
    }

    #[test]
    fn empty_and_on_time() {
        let r = analyze(&HistoryStore::new());
        assert!(r.suppliers.is_empty() && r.hindrances.is_empty() && r.cells.is_empty());
        let mut h = HistoryStore::new();
        h.record(finalized("O1", "s", 9, 10)).unwrap();
        let r = analyze(&h);
        assert!(r.hindrances.is_empty());
        assert_eq!(r.suppliers[0].delay_frequency, 0.0);
    }

    #[test]
    fn buckets() {
        assert_eq!(lot_bucket(1), (1, 1));
        assert_eq!(lot_bucket(3), (2, 3));
        assert_eq!(lot_bucket(12), (8, 15));
    }
}
