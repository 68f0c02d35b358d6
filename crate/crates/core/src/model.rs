//! Core domain types: parameters, clauses, XOS valuations, instances,
//! allocations, and the ground-truth metadata recorded by the samplers.
//!
//! An instance at level `r` has `n = k^{2r}` players and `m = (r+1)·k^{2r+1}`
//! items. Each player's valuation is a max over 0/1 clauses: the value of a
//! bundle is the largest overlap with any single clause in her collection.
//! Ground truth keeps everything the sampler knew (hidden direction bit,
//! special family index, item relabeling, group structure) so that oracles
//! and tests can condition on it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Format tag written into every serialized document this crate emits.
pub const FORMAT_VERSION: u32 = 1;

/// Default cap on the derived family width `p`. Overridable at call sites
/// and from the CLI; the growth rate exp(k^eps) explodes fast.
pub const DEFAULT_P_CAP: usize = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("round count must be at least 1, got {0}")]
    BadRounds(u32),
    #[error("base size k must be at least 2, got {0}")]
    BadBase(u32),
    #[error("eps must lie strictly between 0 and 1")]
    BadEps,
    #[error("parameter overflow at level {r} with k = {k}")]
    Overflow { r: u32, k: u32 },
    #[error("clause has duplicate items")]
    DuplicateItems,
    #[error("item index {item} out of range for universe size {m}")]
    ItemOutOfRange { item: u32, m: usize },
    #[error("expected {expected} valuations, got {got}")]
    ValuationCount { expected: usize, got: usize },
    #[error("bundles overlap or exceed the universe")]
    BadAllocation,
}

/// Level parameters: recursion depth, base size, and the set-family shape
/// `(p, q, t, l)` used at that level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Recursion level (round count of the matching hard distribution).
    pub r: u32,
    /// Base size; clause size at level 1 is `k`.
    pub k: u32,
    /// Intersection exponent, in (0,1).
    pub eps: f64,
    /// Number of sets in the family.
    pub p: usize,
    /// Universe size of the family.
    pub q: usize,
    /// Size of each set.
    pub t: usize,
    /// Pairwise intersection cap.
    pub l: usize,
    /// Root seed for samplers that take their randomness from these params.
    pub seed: u64,
}

fn checked_pow(k: u32, e: u32) -> Option<u64> {
    let mut acc: u64 = 1;
    for _ in 0..e {
        acc = acc.checked_mul(u64::from(k))?;
    }
    Some(acc)
}

/// Family parameters for level `r`: `q = k^{2r} + r·k^{2r-1}`,
/// `t = r·k^{2r-1}`, `l = max(1, ⌊k^{2r-2+eps}⌋)`, and a default width
/// `p = max(2, ⌊exp(k^eps)⌋)` capped at [`DEFAULT_P_CAP`].
///
/// `t` at level `r` equals the item count at level `r-1`, which is what lets
/// a lower-level instance be planted into one family set.
pub fn derive_params(r: u32, k: u32, eps: f64) -> Result<Params, ModelError> {
    if r < 1 {
        return Err(ModelError::BadRounds(r));
    }
    if k < 2 {
        return Err(ModelError::BadBase(k));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ModelError::BadEps);
    }
    let over = || ModelError::Overflow { r, k };
    let k2r = checked_pow(k, 2 * r).ok_or_else(over)?;
    let k2r1 = checked_pow(k, 2 * r - 1).ok_or_else(over)?;
    let t = u64::from(r).checked_mul(k2r1).ok_or_else(over)?;
    let q = k2r.checked_add(t).ok_or_else(over)?;
    let l_real = f64::from(k).powf(2.0 * f64::from(r) - 2.0 + eps);
    let l = (l_real.floor() as u64).max(1);
    let p_real = f64::from(k).powf(eps).exp();
    let p = if p_real >= DEFAULT_P_CAP as f64 {
        DEFAULT_P_CAP
    } else {
        (p_real.floor() as usize).max(2)
    };
    Ok(Params {
        r,
        k,
        eps,
        p,
        q: usize::try_from(q).map_err(|_| over())?,
        t: usize::try_from(t).map_err(|_| over())?,
        l: usize::try_from(l).map_err(|_| over())?,
        seed: 0,
    })
}

impl Params {
    pub fn with_p(mut self, p: usize) -> Self {
        self.p = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Player count at this level: `k^{2r}`.
    pub fn n(&self) -> usize {
        checked_pow(self.k, 2 * self.r).unwrap() as usize
    }

    /// Item count at this level: `(r+1)·k^{2r+1}`.
    pub fn m(&self) -> usize {
        (u64::from(self.r + 1) * checked_pow(self.k, 2 * self.r + 1).unwrap()) as usize
    }

    /// Number of groups: `k²`. At level 1 each group is a single player.
    pub fn group_count(&self) -> usize {
        (self.k * self.k) as usize
    }

    /// Players per group: `k^{2(r-1)}`.
    pub fn group_size(&self) -> usize {
        checked_pow(self.k, 2 * (self.r - 1)).unwrap() as usize
    }
}

/// A 0/1 clause: a set of items. Contributes `|S ∩ items|` toward the max in
/// an XOS valuation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Clause {
    items: Vec<u32>,
}

impl Clause {
    /// Builds a clause, sorting the items. Duplicates are rejected.
    pub fn new(mut items: Vec<u32>) -> Result<Self, ModelError> {
        items.sort_unstable();
        if items.windows(2).any(|w| w[0] == w[1]) {
            return Err(ModelError::DuplicateItems);
        }
        Ok(Clause { items })
    }

    pub fn items(&self) -> &[u32] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Overlap with a sorted query bundle.
    pub fn overlap(&self, sorted_bundle: &[u32]) -> u64 {
        let mut i = 0;
        let mut j = 0;
        let mut count = 0;
        while i < self.items.len() && j < sorted_bundle.len() {
            match self.items[i].cmp(&sorted_bundle[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        count
    }
}

/// Where a clause came from: the chain of sub-instance indices chosen at each
/// recursion level, outermost first, ending with the family-set index that
/// produced the clause at level 1. Length equals the instance level.
pub type ClausePath = Vec<u32>;

/// Max-over-clauses valuation. The empty clause list is the zero valuation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct XOSValuation {
    pub clauses: Vec<Clause>,
    /// Per-clause origin, parallel to `clauses`.
    pub paths: Vec<ClausePath>,
}

impl XOSValuation {
    pub fn new(clauses: Vec<Clause>, paths: Vec<ClausePath>) -> Self {
        debug_assert_eq!(clauses.len(), paths.len());
        XOSValuation { clauses, paths }
    }

    pub fn zero() -> Self {
        XOSValuation { clauses: Vec::new(), paths: Vec::new() }
    }

    /// Presence lens over the sampling indicators: at level 1, bit `j` of a
    /// player's indicator vector is 1 exactly when a clause with path `[j]`
    /// survived; deeper levels prepend sub-instance indices. Clauses are only
    /// ever dropped at level 1, so presence of the full path recovers the bit.
    /// A shorter query matches any clause underneath it, so `[j]` asks
    /// whether the player holds anything rooted at sub-instance `j`.
    pub fn has_path(&self, path: &[u32]) -> bool {
        self.paths.iter().any(|p| p.starts_with(path))
    }

    /// Indicator vector of length `p` under `prefix`: entry `j` is
    /// `has_path(prefix + [j])`.
    pub fn indicator_vector(&self, prefix: &[u32], p: usize) -> Vec<bool> {
        let mut key: Vec<u32> = prefix.to_vec();
        key.push(0);
        (0..p)
            .map(|j| {
                *key.last_mut().unwrap() = j as u32;
                self.has_path(&key)
            })
            .collect()
    }
}

/// A full problem instance: who values what, at which recursion level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub level: u32,
    pub n: usize,
    pub m: usize,
    pub valuations: Vec<XOSValuation>,
}

impl Instance {
    pub fn new(
        level: u32,
        n: usize,
        m: usize,
        valuations: Vec<XOSValuation>,
    ) -> Result<Self, ModelError> {
        if valuations.len() != n {
            return Err(ModelError::ValuationCount { expected: n, got: valuations.len() });
        }
        for v in &valuations {
            for c in &v.clauses {
                if let Some(&item) = c.items().iter().find(|&&it| it as usize >= m) {
                    return Err(ModelError::ItemOutOfRange { item, m });
                }
            }
        }
        Ok(Instance { level, n, m, valuations })
    }
}

/// Everything the sampler decided, kept out of band of the players' views.
///
/// `sigma` is the full item relabeling; `special_slots` is the selected
/// family set in family coordinates; `special_items` is its per-group image.
/// Level-1 instances record per-player indicator vectors; deeper levels nest
/// the ground truth of the planted lower-level instance in that instance's
/// own local item coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub level: u32,
    /// Direction bit of the innermost planted instance.
    pub theta_star: u8,
    /// Selected family-set index at this level.
    pub j_star: usize,
    /// Family universe size at this level.
    pub q: usize,
    /// The selected family set, sorted, in family coordinates `[q]`.
    pub special_slots: Vec<u32>,
    /// Item relabeling: a permutation of `[m]`.
    pub sigma: Vec<u32>,
    /// Player groups, each of size `k^{2(r-1)}`; singletons at level 1.
    pub groups: Vec<Vec<u32>>,
    /// Per-group sorted image of the special slots under the labeling.
    pub special_items: Vec<Vec<u32>>,
    /// Level 1 only: per-player indicator vector over the family.
    pub x_vectors: Option<Vec<Vec<u8>>>,
    /// Level ≥ 2 only: ground truth of the planted instance, local coords.
    pub special_trace: Option<Box<GroundTruth>>,
}

impl GroundTruth {
    /// Group index of a player at this level.
    pub fn group_of(&self, player: usize) -> usize {
        let size = self.groups[0].len();
        player / size
    }

    /// The sorted non-special family coordinates `[q] \ special_slots`.
    pub fn shared_slots(&self) -> Vec<u32> {
        let special: std::collections::HashSet<u32> = self.special_slots.iter().copied().collect();
        (0..self.q as u32).filter(|s| !special.contains(s)).collect()
    }
}

/// Labeling of family coordinates into concrete items for one player.
///
/// Shared slots (everything outside the special set) land in a common block
/// of `sigma`, identically for all players. Special slots land in the
/// player's group block, so distinct groups get pairwise disjoint images.
/// Returns a vector `phi` with `phi[slot] = item`, injective.
pub fn labeling_function(gt: &GroundTruth, player: usize) -> Vec<u32> {
    let t = gt.special_slots.len();
    labeling_raw(gt.q, &gt.special_slots, &gt.sigma, gt.group_of(player), gt.q - t, t)
}

/// Core of [`labeling_function`] without a `GroundTruth` in hand: maps family
/// coordinates into items given the special slot set, the relabeling, and
/// the player's group. `shared_len + (group + 1) * t` must stay within
/// `sigma`.
pub fn labeling_raw(
    q: usize,
    special_slots: &[u32],
    sigma: &[u32],
    group: usize,
    shared_len: usize,
    t: usize,
) -> Vec<u32> {
    let special: std::collections::HashSet<u32> = special_slots.iter().copied().collect();
    let mut phi = vec![0u32; q];
    let mut pos = 0;
    for slot in 0..q as u32 {
        if !special.contains(&slot) {
            phi[slot as usize] = sigma[pos];
            pos += 1;
        }
    }
    for (pos, &slot) in special_slots.iter().enumerate() {
        phi[slot as usize] = sigma[shared_len + group * t + pos];
    }
    phi
}

/// Disjoint bundles, one per player. Items may be left unallocated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    bundles: Vec<Vec<u32>>,
}

impl Allocation {
    /// Builds an allocation, sorting each bundle. Overlapping bundles or
    /// out-of-range items are rejected.
    pub fn new(bundles: Vec<Vec<u32>>, m: usize) -> Result<Self, ModelError> {
        let mut seen = vec![false; m];
        let mut sorted = Vec::with_capacity(bundles.len());
        for mut b in bundles {
            b.sort_unstable();
            for &item in &b {
                if item as usize >= m || seen[item as usize] {
                    return Err(ModelError::BadAllocation);
                }
                seen[item as usize] = true;
            }
            sorted.push(b);
        }
        Ok(Allocation { bundles: sorted })
    }

    pub fn bundles(&self) -> &[Vec<u32>] {
        &self.bundles
    }
}

/// Envelope for instance + ground truth serialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub format_version: u32,
    pub instance: Instance,
    pub ground_truth: GroundTruth,
}

impl InstanceDoc {
    pub fn new(instance: Instance, ground_truth: GroundTruth) -> Self {
        InstanceDoc { format_version: FORMAT_VERSION, instance, ground_truth }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_params_level_1() {
        let p = derive_params(1, 2, 0.5).unwrap();
        assert_eq!((p.q, p.t, p.l), (6, 2, 1));
        assert_eq!(p.n(), 4);
        assert_eq!(p.m(), 16);
        assert_eq!(p.p, 4);
    }

    #[test]
    fn derive_params_level_2() {
        let p = derive_params(2, 2, 0.5).unwrap();
        assert_eq!((p.q, p.t, p.l), (32, 16, 5));
        assert_eq!(p.n(), 16);
        assert_eq!(p.m(), 96);
        assert_eq!(p.group_count(), 4);
        assert_eq!(p.group_size(), 4);
    }

    #[test]
    fn level_t_matches_lower_item_count() {
        for k in 2..=5u32 {
            for r in 2..=3u32 {
                let hi = derive_params(r, k, 0.5).unwrap();
                let lo = derive_params(r - 1, k, 0.5).unwrap();
                assert_eq!(hi.t, lo.m());
            }
        }
    }

    #[test]
    fn derive_params_rejects_bad_input() {
        assert_eq!(derive_params(1, 1, 0.5), Err(ModelError::BadBase(1)));
        assert_eq!(derive_params(0, 2, 0.5), Err(ModelError::BadRounds(0)));
        assert_eq!(derive_params(1, 2, 0.0), Err(ModelError::BadEps));
        assert_eq!(derive_params(1, 2, 1.0), Err(ModelError::BadEps));
    }

    #[test]
    fn clause_rejects_duplicates() {
        assert!(Clause::new(vec![3, 1, 3]).is_err());
        let c = Clause::new(vec![3, 1, 2]).unwrap();
        assert_eq!(c.items(), &[1, 2, 3]);
    }

    #[test]
    fn clause_overlap_counts_common_items() {
        let c = Clause::new(vec![1, 2, 5]).unwrap();
        assert_eq!(c.overlap(&[0, 2, 5, 9]), 2);
        assert_eq!(c.overlap(&[]), 0);
    }

    #[test]
    fn indicator_vector_reads_paths() {
        let v = XOSValuation::new(
            vec![Clause::new(vec![0]).unwrap(), Clause::new(vec![1]).unwrap()],
            vec![vec![0, 2], vec![1, 0]],
        );
        assert_eq!(v.indicator_vector(&[0], 3), vec![false, false, true]);
        assert_eq!(v.indicator_vector(&[1], 3), vec![true, false, false]);
        assert!(!v.has_path(&[2, 0]));
    }

    #[test]
    fn instance_rejects_out_of_range_items() {
        let v = XOSValuation::new(vec![Clause::new(vec![9]).unwrap()], vec![vec![0]]);
        let err = Instance::new(1, 1, 5, vec![v]).unwrap_err();
        assert_eq!(err, ModelError::ItemOutOfRange { item: 9, m: 5 });
    }

    #[test]
    fn allocation_rejects_overlap() {
        assert!(Allocation::new(vec![vec![0, 1], vec![1]], 4).is_err());
        assert!(Allocation::new(vec![vec![0, 1], vec![5]], 4).is_err());
        let a = Allocation::new(vec![vec![1, 0], vec![2]], 4).unwrap();
        assert_eq!(a.bundles()[0], vec![0, 1]);
    }
}
