use std::collections::BTreeMap;

use proptest::prelude::*;
use scmsim::model::{ConversationId, EnterpriseId, Order, OrderId, OrderStatus, ProductId};
use scmsim::negotiation::{enumerate_scenarios, profit, select_best, NegotiationState, Phase, Purpose, Scenario, SupplyVector};
use scmsim::planner::Quote;

const SUPPLIERS: [&str; 3] = ["s0", "s1", "s2"];

fn order(due: u64, price: i64) -> Order {
    Order {
        id: OrderId::new("O1"),
        customer: EnterpriseId::new("market"),
        supplier: EnterpriseId::new("oem"),
        product: ProductId::new("top"),
        quantity: 4,
        due,
        price,
        parent: None,
        status: OrderStatus::Negotiating,
        created: 0,
    }
}

/// Per component, a list of `(supplier, cost, completion)`.
fn offers() -> impl Strategy<Value = Vec<Vec<(usize, i64, u64)>>> {
    proptest::collection::vec(proptest::collection::vec((0..SUPPLIERS.len(), 0i64..500, 0u64..30), 0..4), 0..3)
}

fn vectors(offers: &[Vec<(usize, i64, u64)>]) -> (Vec<(ProductId, u64)>, BTreeMap<ProductId, Vec<SupplyVector>>) {
    let mut demand = Vec::new();
    let mut map = BTreeMap::new();
    for (i, row) in offers.iter().enumerate() {
        let p = ProductId::new(format!("c{i}"));
        demand.push((p.clone(), 4));
        let vs = row
            .iter()
            .map(|&(s, cost, completion)| SupplyVector {
                supplier: EnterpriseId::new(SUPPLIERS[s]),
                product: p.clone(),
                quantity: 4,
                cost,
                completion,
                load: 0.0,
                issued: 0,
            })
            .collect();
        map.insert(p, vs);
    }
    (demand, map)
}

/// Every combination by plain recursion, timed the same way.
fn brute_force(
    rows: &[Vec<(usize, i64, u64)>],
    transit: u64,
    earliest: u64,
    own_time: u64,
    own_cost: i64,
    due: u64,
) -> Vec<(i64, Vec<usize>, u64)> {
    fn go(rows: &[Vec<(usize, i64, u64)>], k: usize, pick: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == rows.len() {
            out.push(pick.clone());
            return;
        }
        for i in 0..rows[k].len() {
            pick.push(i);
            go(rows, k + 1, pick, out);
            pick.pop();
        }
    }
    let mut picks = Vec::new();
    go(rows, 0, &mut Vec::new(), &mut picks);
    let mut out = Vec::new();
    for pick in picks {
        let chosen: Vec<_> = pick.iter().enumerate().map(|(k, &i)| rows[k][i]).collect();
        let ready = chosen.iter().map(|c| c.2 + transit).max().unwrap_or(0).max(earliest);
        let delivery = ready + own_time + transit;
        if delivery <= due {
            let cost = chosen.iter().map(|c| c.1).sum::<i64>() + own_cost;
            out.push((cost, chosen.iter().map(|c| c.0).collect(), delivery));
        }
    }
    out.sort();
    out
}

fn scenario(cost: i64, start: u64, delivery: u64, supplier: &str) -> Scenario {
    let mut sources = BTreeMap::new();
    sources.insert(
        ProductId::new("c0"),
        SupplyVector {
            supplier: EnterpriseId::new(supplier),
            product: ProductId::new("c0"),
            quantity: 1,
            cost: 0,
            completion: 0,
            load: 0.0,
            issued: 0,
        },
    );
    Scenario {
        order: OrderId::new("O1"),
        component_sources: sources,
        own_production: scmsim::negotiation::OwnProduction { start, completion: start + 1, cost },
        total_cost: cost,
        delivery,
    }
}

#[derive(Debug, Clone)]
enum Step {
    OwnQuote,
    Expect(usize),
    Vector(usize, bool),
    Award(usize),
    Accept(usize),
    Reject,
    Fail,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        Just(Step::OwnQuote),
        (0usize..3).prop_map(Step::Expect),
        (0usize..3, any::<bool>()).prop_map(|(s, v)| Step::Vector(s, v)),
        (0usize..3).prop_map(Step::Award),
        (0usize..3).prop_map(Step::Accept),
        Just(Step::Reject),
        Just(Step::Fail),
    ]
}

proptest! {
    #[test]
    fn enumeration_matches_exhaustive_search(
        rows in offers(),
        transit in 0u64..4,
        earliest in 0u64..20,
        own_time in 1u64..10,
        own_cost in 0i64..300,
        due in 0u64..70,
        cap in 1usize..8,
    ) {
        let (demand, map) = vectors(&rows);
        let got = enumerate_scenarios(
            &order(due, 10_000),
            |ready| Ok(Quote { start: ready, completion: ready + own_time, cost: own_cost }),
            &demand,
            &map,
            transit,
            earliest,
            cap,
        );
        let mut want = brute_force(&rows, transit, earliest, own_time, own_cost, due);
        want.truncate(cap);
        let got: Vec<_> = got
            .iter()
            .map(|s| {
                let ids = s.identity().iter().map(|e| SUPPLIERS.iter().position(|x| *x == e.as_str()).unwrap()).collect();
                (s.total_cost, ids, s.delivery)
            })
            .collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn selection_maximises_profit_and_ignores_currency_scale(
        raw in proptest::collection::vec((0i64..2_000, 0u64..20, 0u64..60, 0..SUPPLIERS.len()), 1..8),
        due in 0u64..60,
        price in 0i64..5_000,
        rate in 0i64..50,
        k in 1i64..1_000,
    ) {
        let list: Vec<Scenario> = raw.iter().map(|&(c, s, d, sup)| scenario(c, s, d, SUPPLIERS[sup])).collect();
        let o = order(due, price);
        let best = select_best(&list, &o, rate).unwrap();
        let max = list.iter().map(|s| price - s.total_cost - rate * s.delivery.saturating_sub(due) as i64).max().unwrap();
        prop_assert_eq!(profit(&best, &o, rate), max);

        let scaled: Vec<Scenario> = list
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.total_cost *= k;
                s.own_production.cost *= k;
                s
            })
            .collect();
        let again = select_best(&scaled, &order(due, price * k), rate * k).unwrap();
        let i = scaled.iter().position(|s| *s == again).unwrap();
        prop_assert_eq!(&list[i], &best);
    }

    #[test]
    fn negotiation_phases_only_move_forward(steps in proptest::collection::vec(step(), 0..40), max_rounds in 1u32..4) {
        let mut st = NegotiationState::new(ConversationId(1), Purpose::Fulfil, OrderId::new("O1"), vec![OrderId::new("O1")], 0, 5, max_rounds);
        let mut last = (st.round, st.phase);
        let (demand, map) = vectors(&[vec![(0, 10, 3), (1, 12, 2)], vec![(2, 5, 1)]]);
        for s in steps {
            let was_final = st.phase.is_final();
            match s {
                Step::OwnQuote => { let _ = st.record_own_quote(Quote { start: 0, completion: 4, cost: 9 }); }
                Step::Expect(n) => {
                    let _ = st.expect_vectors(demand.iter().take(n).map(|(p, _)| (p.clone(), EnterpriseId::new(SUPPLIERS[0]))));
                }
                Step::Vector(i, some) => {
                    let (p, _) = &demand[i % demand.len()];
                    let v = some.then(|| map[p][0].clone());
                    st.record_vector(p, &EnterpriseId::new(SUPPLIERS[0]), v);
                }
                Step::Award(n) => {
                    let mut sc = scenario(1, 0, 9, SUPPLIERS[0]);
                    sc.component_sources = map.iter().take(n).map(|(p, v)| (p.clone(), v[0].clone())).collect();
                    let mut i = 0;
                    let _ = st.award(sc, |_, v| {
                        i += 1;
                        scmsim::model::Contract::draft(
                            scmsim::model::ContractId::new(format!("K{i}")),
                            OrderId::new(format!("C{i}")),
                            EnterpriseId::new("oem"),
                            v.supplier.clone(),
                            v.completion,
                            v.cost,
                            None,
                            0,
                        )
                    });
                }
                Step::Accept(i) => { st.on_accept(&scmsim::model::ContractId::new(format!("K{}", i + 1))); }
                Step::Reject => { let _ = st.on_reject(&EnterpriseId::new(SUPPLIERS[0])); }
                Step::Fail => { st.fail(); }
            }
            if was_final {
                prop_assert!(st.phase.is_final());
                prop_assert_eq!(st.round, last.0);
            }
            let now = (st.round, st.phase);
            prop_assert!(now >= last, "{:?} -> {:?}", last, now);
            prop_assert!(st.round <= max_rounds);
            if st.phase == Phase::Failed {
                prop_assert!(st.accepted.is_empty());
            }
            last = now;
        }
    }
}
