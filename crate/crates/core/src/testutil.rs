//! Shared generators for in-crate tests.

use crate::model::{Clause, Instance, XOSValuation};
use proptest::prelude::*;

/// Random tiny instances: at most 3 players, items below 8, at most 3
/// clauses per player with at most 3 items each. Small enough for the
/// exhaustive welfare oracle.
pub(crate) fn tiny_instance_strategy() -> impl Strategy<Value = Instance> {
    let clause = proptest::collection::vec(0u32..8, 1..=3).prop_map(|mut v| {
        v.sort_unstable();
        v.dedup();
        v
    });
    let player = proptest::collection::vec(clause, 0..=3);
    proptest::collection::vec(player, 1..=3).prop_map(|players| {
        let n = players.len();
        let vals = players
            .into_iter()
            .map(|cs| {
                let clauses: Vec<Clause> = cs.into_iter().map(|c| Clause::new(c).unwrap()).collect();
                let paths = clauses.iter().map(|_| vec![0]).collect();
                XOSValuation::new(clauses, paths)
            })
            .collect();
        Instance::new(1, n, 8, vals).unwrap()
    })
}
