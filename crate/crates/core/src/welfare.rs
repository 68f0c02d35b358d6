//! Exact social-welfare oracles for clause-based XOS valuations.
//!
//! The primary oracle exploits structure: with 0/1 clauses, an optimal
//! allocation gives every player the items of one chosen clause (or
//! nothing), so welfare equals the largest union over per-player clause
//! choices. That search runs branch-and-bound with a greedy lower bound and
//! prunes on the cheaper of two admissible upper bounds: the sum of best
//! remaining marginals, and a contention-aware count that charges each item
//! claimed by several players once across the whole suffix while items only
//! one player ever mentions contribute their per-player best. The second
//! bound is what keeps instances with a large contested block tractable,
//! where per-player sums overshoot by a factor of the clause size. The
//! secondary oracle enumerates raw item assignments and exists to keep the
//! primary honest; the two are compared on every instance small enough for
//! both.

use crate::bits::ItemMask;
use crate::model::{Allocation, Instance, XOSValuation};
use serde::{Deserialize, Serialize};
use std::collections::hash_map::Entry;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WelfareError {
    #[error("state space of {states} assignments exceeds budget {budget}")]
    BudgetExceeded { states: u128, budget: u128 },
}

/// Node budget for branch-and-bound and state budget for brute force.
#[derive(Clone, Copy, Debug)]
pub struct Budget {
    pub max_states: u128,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { max_states: 50_000_000 }
    }
}

impl Budget {
    pub fn new(max_states: u128) -> Self {
        Budget { max_states }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WelfareResult {
    pub value: u64,
    pub witness_allocation: Allocation,
    /// Chosen clause index per player, `None` for players allocated nothing.
    pub witness_clauses: Vec<Option<usize>>,
    /// Search nodes (or enumerated states) visited.
    pub nodes: u64,
}

/// Value of a bundle under one valuation: the best single-clause overlap.
pub fn evaluate(v: &XOSValuation, bundle: &[u32]) -> u64 {
    let mut sorted;
    let query: &[u32] = if bundle.windows(2).all(|w| w[0] < w[1]) {
        bundle
    } else {
        sorted = bundle.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        &sorted
    };
    v.clauses.iter().map(|c| c.overlap(query)).max().unwrap_or(0)
}

/// Sum of per-player values for an allocation.
pub fn allocation_value(inst: &Instance, alloc: &Allocation) -> u64 {
    inst.valuations
        .iter()
        .zip(alloc.bundles())
        .map(|(v, b)| evaluate(v, b))
        .sum()
}

fn witness_from_choices(
    inst: &Instance,
    choices: &[Option<usize>],
) -> (Allocation, u64) {
    let mut taken = vec![false; inst.m];
    let mut bundles = vec![Vec::new(); inst.n];
    for (i, choice) in choices.iter().enumerate() {
        if let Some(c) = *choice {
            for &item in inst.valuations[i].clauses[c].items() {
                if !taken[item as usize] {
                    taken[item as usize] = true;
                    bundles[i].push(item);
                }
            }
        }
    }
    let alloc = Allocation::new(bundles, inst.m).expect("chosen bundles are disjoint");
    let value = taken.iter().filter(|&&t| t).count() as u64;
    (alloc, value)
}

struct UnionSearch<'a> {
    masks: Vec<Vec<ItemMask>>,
    inst: &'a Instance,
    best_value: u64,
    best_choices: Vec<Option<usize>>,
    nodes: u64,
    budget: u128,
    /// `suffix_solo[i]`: sum over players `i..` of the best clause overlap
    /// with items no other player ever mentions. Those items can never be
    /// taken away, so the term is position-independent.
    suffix_solo: Vec<u64>,
    /// `suffix_contested[i]`: every item mentioned by at least two players
    /// and by some player in `i..`. Disjointness lets each such item count
    /// at most once no matter who ends up with it.
    suffix_contested: Vec<ItemMask>,
    /// Best value seen on reaching a player with a given set of consumed
    /// contested items. Distinct prefixes often converge on the same set,
    /// and a revisit at no higher value cannot improve on the first pass.
    seen: HashMap<(usize, Vec<u64>), u64>,
}

impl UnionSearch<'_> {
    /// Greedy pass in player order: best-marginal clause, ties to the lowest
    /// clause index, nothing when no clause adds items.
    fn greedy(&self) -> (u64, Vec<Option<usize>>) {
        let mut union = ItemMask::empty(self.inst.m);
        let mut choices = vec![None; self.inst.n];
        let mut total = 0u64;
        for (i, clauses) in self.masks.iter().enumerate() {
            let mut best: Option<(u32, usize)> = None;
            for (ci, mask) in clauses.iter().enumerate() {
                let gain = union.marginal(mask);
                if gain > 0 && best.map_or(true, |(g, _)| gain > g) {
                    best = Some((gain, ci));
                }
            }
            if let Some((gain, ci)) = best {
                union.union_with(&clauses[ci]);
                choices[i] = Some(ci);
                total += u64::from(gain);
            }
        }
        (total, choices)
    }

    /// Largest marginal any remaining player could add to `union`.
    fn suffix_bound(&self, from: usize, union: &ItemMask) -> u64 {
        self.masks[from..]
            .iter()
            .map(|clauses| {
                clauses.iter().map(|m| u64::from(union.marginal(m))).max().unwrap_or(0)
            })
            .sum()
    }

    /// Contention-aware bound: solo items at their per-player best plus each
    /// still-free contested item once. Constant-time apart from one mask
    /// scan, and neither bound dominates the other, so pruning tries this
    /// one first and falls back to the per-player sum.
    fn contested_bound(&self, from: usize, union: &ItemMask) -> u64 {
        self.suffix_solo[from] + u64::from(union.marginal(&self.suffix_contested[from]))
    }

    fn descend(
        &mut self,
        player: usize,
        union: &ItemMask,
        value: u64,
        choices: &mut Vec<Option<usize>>,
    ) -> Result<(), WelfareError> {
        self.nodes += 1;
        if u128::from(self.nodes) > self.budget {
            return Err(WelfareError::BudgetExceeded {
                states: u128::from(self.nodes),
                budget: self.budget,
            });
        }
        if player == self.masks.len() {
            if value > self.best_value {
                self.best_value = value;
                self.best_choices = choices.clone();
            }
            return Ok(());
        }
        // Only consumed items the suffix still mentions can influence the
        // subtree, and uncontested ones are never consumed by a prefix.
        let footprint: Vec<u64> = union
            .words()
            .iter()
            .zip(self.suffix_contested[player].words())
            .map(|(u, c)| u & c)
            .collect();
        match self.seen.entry((player, footprint)) {
            Entry::Occupied(mut e) => {
                if *e.get() >= value {
                    return Ok(());
                }
                e.insert(value);
            }
            Entry::Vacant(e) => {
                e.insert(value);
            }
        }
        if value + self.contested_bound(player, union) <= self.best_value
            || value + self.suffix_bound(player, union) <= self.best_value
        {
            return Ok(());
        }
        let mut options: Vec<(u32, usize)> = self.masks[player]
            .iter()
            .enumerate()
            .filter_map(|(ci, m)| {
                let gain = union.marginal(m);
                (gain > 0).then_some((gain, ci))
            })
            .collect();
        options.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (gain, ci) in options {
            let mut next = union.clone();
            next.union_with(&self.masks[player][ci]);
            choices[player] = Some(ci);
            self.descend(player + 1, &next, value + u64::from(gain), choices)?;
        }
        choices[player] = None;
        self.descend(player + 1, union, value, choices)
    }
}

/// Exact welfare as the best union over per-player clause choices.
///
/// Deterministic: the greedy witness stands unless strictly improved, and
/// improvements are found exploring players in index order. Each player's
/// clause options are tried by decreasing marginal gain with ties to the
/// lowest clause index; options that add nothing collapse into the final
/// take-nothing branch, whose subtree they would duplicate. Ties in value
/// therefore always resolve the same way. Covered items go to the
/// lowest-indexed player whose chosen clause contains them.
pub fn sw_clause_union(inst: &Instance, budget: Budget) -> Result<WelfareResult, WelfareError> {
    let masks: Vec<Vec<ItemMask>> = inst
        .valuations
        .iter()
        .map(|v| v.clauses.iter().map(|c| ItemMask::from_items(inst.m, c.items())).collect())
        .collect();

    let coverage: Vec<ItemMask> = masks
        .iter()
        .map(|clauses| {
            let mut cover = ItemMask::empty(inst.m);
            for mask in clauses {
                cover.union_with(mask);
            }
            cover
        })
        .collect();
    let mut owners = vec![0u32; inst.m];
    for cover in &coverage {
        for item in cover.iter_items() {
            owners[item as usize] += 1;
        }
    }
    let contested = {
        let mut mask = ItemMask::empty(inst.m);
        for (item, &count) in owners.iter().enumerate() {
            if count >= 2 {
                mask.insert(item as u32);
            }
        }
        mask
    };
    let mut suffix_solo = vec![0u64; inst.n + 1];
    let mut suffix_contested = vec![ItemMask::empty(inst.m); inst.n + 1];
    for i in (0..inst.n).rev() {
        let solo_best = masks[i]
            .iter()
            .map(|m| {
                m.iter_items().filter(|&it| owners[it as usize] == 1).count() as u64
            })
            .max()
            .unwrap_or(0);
        suffix_solo[i] = suffix_solo[i + 1] + solo_best;
        let mut acc = suffix_contested[i + 1].clone();
        let mut own = coverage[i].clone();
        own.intersect_with(&contested);
        acc.union_with(&own);
        suffix_contested[i] = acc;
    }

    let mut search = UnionSearch {
        masks,
        inst,
        best_value: 0,
        best_choices: vec![None; inst.n],
        nodes: 0,
        budget: budget.max_states,
        suffix_solo,
        suffix_contested,
        seen: HashMap::new(),
    };
    // The greedy witness stands unless the search strictly improves on it,
    // which lets the bound prune the whole tree when greedy is optimal.
    let (greedy_value, greedy_choices) = search.greedy();
    search.best_value = greedy_value;
    search.best_choices = greedy_choices;
    let mut scratch = vec![None; inst.n];
    let union = ItemMask::empty(inst.m);
    search.descend(0, &union, 0, &mut scratch)?;
    let choices = search.best_choices;
    let (alloc, value) = witness_from_choices(inst, &choices);
    debug_assert_eq!(value, allocation_value(inst, &alloc));
    Ok(WelfareResult {
        value,
        witness_allocation: alloc,
        witness_clauses: choices,
        nodes: search.nodes,
    })
}

/// Exact welfare by assigning every item that appears in some clause to one
/// of the `n` players or to nobody. Exponential; the budget precondition is
/// checked before any work.
pub fn sw_bruteforce(inst: &Instance, budget: Budget) -> Result<WelfareResult, WelfareError> {
    let mut used: Vec<u32> = inst
        .valuations
        .iter()
        .flat_map(|v| v.clauses.iter().flat_map(|c| c.items().iter().copied()))
        .collect();
    used.sort_unstable();
    used.dedup();
    let base = inst.n as u128 + 1;
    let states = base.checked_pow(used.len() as u32).unwrap_or(u128::MAX);
    if states > budget.max_states {
        return Err(WelfareError::BudgetExceeded { states, budget: budget.max_states });
    }

    let mut assignment = vec![0usize; used.len()];
    let mut best_value = 0u64;
    let mut best_assignment = assignment.clone();
    let mut nodes = 0u64;
    loop {
        nodes += 1;
        let mut bundles = vec![Vec::new(); inst.n];
        for (pos, &owner) in assignment.iter().enumerate() {
            if owner > 0 {
                bundles[owner - 1].push(used[pos]);
            }
        }
        let value: u64 = inst
            .valuations
            .iter()
            .zip(&bundles)
            .map(|(v, b)| evaluate(v, b))
            .sum();
        if value > best_value {
            best_value = value;
            best_assignment = assignment.clone();
        }
        // Odometer step over base-(n+1) digits.
        let mut pos = 0;
        loop {
            if pos == assignment.len() {
                let mut bundles = vec![Vec::new(); inst.n];
                for (p, &owner) in best_assignment.iter().enumerate() {
                    if owner > 0 {
                        bundles[owner - 1].push(used[p]);
                    }
                }
                let alloc = Allocation::new(bundles, inst.m).expect("digits are a partition");
                let witness_clauses = inst
                    .valuations
                    .iter()
                    .zip(alloc.bundles())
                    .map(|(v, b)| {
                        let val = evaluate(v, b);
                        if val == 0 {
                            None
                        } else {
                            v.clauses.iter().position(|c| c.overlap(b) == val)
                        }
                    })
                    .collect();
                return Ok(WelfareResult {
                    value: best_value,
                    witness_allocation: alloc,
                    witness_clauses,
                    nodes,
                });
            }
            assignment[pos] += 1;
            if assignment[pos] < base as usize {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ApproxReport {
    pub ratio: f64,
    pub valid: bool,
}

/// Checks the one-sided estimation contract: an α-approximation must land in
/// `[truth/α, truth]`. Overestimates are invalid regardless of α.
pub fn approx_ratio(estimate: f64, truth: &WelfareResult, alpha: f64) -> ApproxReport {
    let tv = truth.value as f64;
    let ratio = if estimate > 0.0 {
        tv / estimate
    } else if truth.value == 0 {
        1.0
    } else {
        f64::INFINITY
    };
    let tol = 1e-9;
    let valid = estimate <= tv + tol && estimate + tol >= tv / alpha;
    ApproxReport { ratio, valid }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Clause, Instance, XOSValuation};
    use crate::testutil::tiny_instance_strategy;
    use proptest::prelude::*;

    fn val(clauses: &[&[u32]]) -> XOSValuation {
        XOSValuation::new(
            clauses.iter().map(|c| Clause::new(c.to_vec()).unwrap()).collect(),
            clauses.iter().map(|_| vec![0]).collect(),
        )
    }

    fn inst(n: usize, m: usize, vals: Vec<XOSValuation>) -> Instance {
        Instance::new(1, n, m, vals).unwrap()
    }

    #[test]
    fn evaluate_takes_best_clause() {
        let v = val(&[&[1, 2], &[3, 4]]);
        assert_eq!(evaluate(&v, &[1, 3, 4]), 2);
        assert_eq!(evaluate(&v, &[]), 0);
        assert_eq!(evaluate(&XOSValuation::zero(), &[1, 2, 3]), 0);
    }

    #[test]
    fn two_player_chain() {
        let i = inst(2, 5, vec![val(&[&[1, 2]]), val(&[&[2, 3]])]);
        let bf = sw_bruteforce(&i, Budget::default()).unwrap();
        let cu = sw_clause_union(&i, Budget::default()).unwrap();
        assert_eq!(bf.value, 3);
        assert_eq!(cu.value, 3);
        assert_eq!(allocation_value(&i, &cu.witness_allocation), 3);
        assert_eq!(allocation_value(&i, &bf.witness_allocation), 3);
    }

    #[test]
    fn empty_collections_give_zero() {
        let i = inst(2, 4, vec![XOSValuation::zero(), XOSValuation::zero()]);
        assert_eq!(sw_clause_union(&i, Budget::default()).unwrap().value, 0);
        assert_eq!(sw_bruteforce(&i, Budget::default()).unwrap().value, 0);
    }

    #[test]
    fn single_player_gets_best_clause() {
        let i = inst(1, 8, vec![val(&[&[0, 1], &[2, 3, 4]])]);
        let r = sw_clause_union(&i, Budget::default()).unwrap();
        assert_eq!(r.value, 3);
        assert_eq!(r.witness_clauses, vec![Some(1)]);
    }

    #[test]
    fn bruteforce_budget_enforced() {
        let i = inst(2, 12, vec![val(&[&[0, 1, 2, 3, 4, 5]]), val(&[&[6, 7, 8, 9, 10, 11]])]);
        let err = sw_bruteforce(&i, Budget::new(100)).unwrap_err();
        assert!(matches!(err, WelfareError::BudgetExceeded { .. }));
    }

    #[test]
    fn overlapping_witness_items_go_to_lowest_player() {
        let i = inst(2, 4, vec![val(&[&[0, 1]]), val(&[&[1, 2]])]);
        let r = sw_clause_union(&i, Budget::default()).unwrap();
        assert_eq!(r.value, 3);
        assert_eq!(r.witness_allocation.bundles()[0], vec![0, 1]);
        assert_eq!(r.witness_allocation.bundles()[1], vec![2]);
    }

    #[test]
    fn approx_ratio_contract() {
        let truth = WelfareResult {
            value: 10,
            witness_allocation: Allocation::new(vec![], 0).unwrap(),
            witness_clauses: vec![],
            nodes: 0,
        };
        let exact = approx_ratio(10.0, &truth, 1.0);
        assert!(exact.valid && (exact.ratio - 1.0).abs() < 1e-12);
        assert!(!approx_ratio(10.5, &truth, 2.0).valid);
        let half = approx_ratio(5.0, &truth, 2.0);
        assert!(half.valid && (half.ratio - 2.0).abs() < 1e-12);
        assert!(!approx_ratio(4.9, &truth, 2.0).valid);
        assert!(approx_ratio(0.0, &truth, 2.0).ratio.is_infinite());
    }

    proptest! {
        #[test]
        fn oracles_agree_on_tiny_instances(i in tiny_instance_strategy()) {
            let bf = sw_bruteforce(&i, Budget::default()).unwrap();
            let cu = sw_clause_union(&i, Budget::default()).unwrap();
            prop_assert_eq!(bf.value, cu.value);
            prop_assert_eq!(allocation_value(&i, &cu.witness_allocation), cu.value);
            prop_assert_eq!(allocation_value(&i, &bf.witness_allocation), bf.value);
        }

        #[test]
        fn adding_a_clause_never_decreases_welfare(
            i in tiny_instance_strategy(),
            extra in proptest::collection::vec(0u32..8, 1..=3),
        ) {
            let before = sw_clause_union(&i, Budget::default()).unwrap().value;
            let mut extra = extra;
            extra.sort_unstable();
            extra.dedup();
            let mut vals = i.valuations.clone();
            vals[0].clauses.push(Clause::new(extra).unwrap());
            vals[0].paths.push(vec![9]);
            let bigger = Instance::new(1, i.n, i.m, vals).unwrap();
            let after = sw_clause_union(&bigger, Budget::default()).unwrap().value;
            prop_assert!(after >= before);
        }
    }
}
