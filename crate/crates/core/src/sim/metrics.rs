//! Order-variance amplification and the per-echelon order series.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EnterpriseId, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BullwhipError {
    #[error("measurement window is empty")]
    EmptyWindow,
    #[error("series lengths differ ({upstream} vs {demand})")]
    LengthMismatch { upstream: usize, demand: usize },
    #[error("a series has mean 0 but nonzero values")]
    ZeroMean,
}

/// Either a ratio or the reason it is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bullwhip {
    Ratio { value: f64 },
    /// Demand is constant while orders vary, or no orders were placed.
    Undefined,
}

impl Bullwhip {
    pub fn value(self) -> Option<f64> {
        match self {
            Bullwhip::Ratio { value } => Some(value),
            Bullwhip::Undefined => None,
        }
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// `(Var(u)/mean(u)^2) / (Var(d)/mean(d)^2)` with population variances.
///
/// Both variances zero gives 1.0. Constant demand under varying orders, or
/// a series that is all zero, is [`Bullwhip::Undefined`].
pub fn bullwhip_ratio(upstream: &[f64], demand: &[f64]) -> Result<Bullwhip, BullwhipError> {
    if upstream.is_empty() || demand.is_empty() {
        return Err(BullwhipError::EmptyWindow);
    }
    if upstream.len() != demand.len() {
        return Err(BullwhipError::LengthMismatch {
            upstream: upstream.len(),
            demand: demand.len(),
        });
    }
    let (mu, vu) = mean_var(upstream);
    let (md, vd) = mean_var(demand);
    if upstream.iter().all(|&x| x == 0.0) || demand.iter().all(|&x| x == 0.0) {
        return Ok(Bullwhip::Undefined);
    }
    if mu == 0.0 || md == 0.0 {
        return Err(BullwhipError::ZeroMean);
    }
    if vu == 0.0 && vd == 0.0 {
        return Ok(Bullwhip::Ratio { value: 1.0 });
    }
    if vd == 0.0 {
        return Ok(Bullwhip::Undefined);
    }
    Ok(Bullwhip::Ratio {
        value: (vu / (mu * mu)) / (vd / (md * md)),
    })
}

/// Quantities ordered per tick: end-customer demand plus every enterprise's
/// outgoing purchase orders. All series span the same window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EchelonSeries {
    pub window: Tick,
    pub customer: EnterpriseId,
    pub demand: Vec<u64>,
    pub outgoing: BTreeMap<EnterpriseId, Vec<u64>>,
}

impl EchelonSeries {
    pub fn new(window: Tick, customer: EnterpriseId, producers: impl IntoIterator<Item = EnterpriseId>) -> Self {
        let n = window as usize;
        Self {
            window,
            customer,
            demand: vec![0; n],
            outgoing: producers.into_iter().map(|e| (e, vec![0; n])).collect(),
        }
    }

    pub fn add_demand(&mut self, t: Tick, quantity: u64) {
        if let Some(x) = self.demand.get_mut(t as usize) {
            *x += quantity;
        }
    }

    pub fn add_outgoing(&mut self, enterprise: &EnterpriseId, t: Tick, quantity: u64) {
        if let Some(x) = self.outgoing.get_mut(enterprise).and_then(|s| s.get_mut(t as usize)) {
            *x += quantity;
        }
    }

    /// Ratio of each enterprise's orders against end-customer demand.
    pub fn bullwhip(&self) -> BTreeMap<EnterpriseId, Result<Bullwhip, BullwhipError>> {
        let d: Vec<f64> = self.demand.iter().map(|&x| x as f64).collect();
        self.outgoing
            .iter()
            .map(|(e, s)| {
                let u: Vec<f64> = s.iter().map(|&x| x as f64).collect();
                (e.clone(), bullwhip_ratio(&u, &d))
            })
            .collect()
    }

    /// `tick,enterprise,quantity` rows, customer first within each tick.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tick,enterprise,quantity\n");
        for t in 0..self.demand.len() {
            let _ = writeln!(out, "{t},{},{}", self.customer, self.demand[t]);
            for (e, s) in &self.outgoing {
                let _ = writeln!(out, "{t},{e},{}", s[t]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conventions() {
        let d = [4.0, 6.0, 2.0, 4.0];
        assert_eq!(bullwhip_ratio(&d, &d).unwrap().value(), Some(1.0));
        assert_eq!(bullwhip_ratio(&[3.0; 4], &[5.0; 4]).unwrap().value(), Some(1.0));
        assert_eq!(bullwhip_ratio(&d, &[5.0; 4]).unwrap(), Bullwhip::Undefined);
        assert_eq!(bullwhip_ratio(&[0.0; 4], &d).unwrap(), Bullwhip::Undefined);
        assert_eq!(bullwhip_ratio(&[], &[]), Err(BullwhipError::EmptyWindow));
        assert!(matches!(bullwhip_ratio(&d, &d[..2]), Err(BullwhipError::LengthMismatch { .. })));
        assert_eq!(bullwhip_ratio(&d, &[0.0, 0.0, 1.0, -1.0]), Err(BullwhipError::ZeroMean));
    }

    #[test]
    fn scaling_invariant() {
        let d = [4.0, 6.0, 2.0, 4.0];
        let u: Vec<f64> = d.iter().map(|x| x * 2.0 + 0.0).collect();
        let r = bullwhip_ratio(&u, &d).unwrap().value().unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lumpy_orders_amplify() {
        // Same total, ordered every third tick.
        let d = [4.0; 6].iter().zip([1.0, -1.0, 0.0, 1.0, -1.0, 0.0]).map(|(a, b)| a + b).collect::<Vec<_>>();
        let u = [0.0, 0.0, 12.0, 0.0, 0.0, 12.0];
        // Oracle by hand: CV^2(u) = 2, CV^2(d) = (4/6)/16 = 1/24.
        let r = bullwhip_ratio(&u, &d).unwrap().value().unwrap();
        assert!((r - 48.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn csv_layout() {
        let mut s = EchelonSeries::new(2, "market".into(), ["oem".into()]);
        s.add_demand(0, 3);
        s.add_outgoing(&"oem".into(), 1, 6);
        assert_eq!(s.to_csv(), "tick,enterprise,quantity\n0,market,3\n0,oem,0\n1,market,0\n1,oem,6\n");
    }
}
