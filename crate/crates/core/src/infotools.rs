//! Exact information measures over small named joint distributions.
//!
//! Everything here is exact enumeration in log base 2: no estimation, no
//! sampling. Distributions are dense tables over named axes, entropies and
//! mutual informations are computed from marginals, and the additivity
//! audit builds the full joint law of (direction bit, relabeling, special
//! index, all round-1 messages) for indicator-driven protocols and checks
//! that the information the board carries about the hidden bit splits
//! across players, each below her message-length share.

use crate::distributions::D1Space;
use crate::family::{generate_family, level_family_params, FamilyError};
use crate::model::ModelError;
use crate::protocols::XProtocol;
use crate::simulator::Protocol;
use crate::welfare::Budget;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum InfoError {
    #[error("axis {0:?} not present")]
    UnknownAxis(String),
    #[error("bad distribution shape: {0}")]
    BadShape(String),
    #[error("probabilities sum to {0}, expected 1 within 1e-12")]
    BadMass(f64),
    #[error("divergence is infinite: mass {p} where the reference has zero")]
    DivergenceInfinite { p: f64 },
    #[error("enumeration needs {need} states, budget {budget}")]
    Budget { need: u128, budget: u128 },
    #[error("parameter derivation failed: {0}")]
    Params(#[from] ModelError),
    #[error("family generation failed: {0}")]
    Family(#[from] FamilyError),
}

/// Dense joint distribution over named finite axes, row-major.
#[derive(Clone, Debug)]
pub struct JointDistribution {
    names: Vec<String>,
    sizes: Vec<usize>,
    probs: Vec<f64>,
}

impl JointDistribution {
    pub fn new(axes: &[(&str, usize)], probs: Vec<f64>) -> Result<Self, InfoError> {
        let sizes: Vec<usize> = axes.iter().map(|&(_, s)| s).collect();
        if sizes.iter().any(|&s| s == 0) {
            return Err(InfoError::BadShape("zero-size axis".into()));
        }
        let cells: usize = sizes.iter().product();
        if probs.len() != cells {
            return Err(InfoError::BadShape(format!(
                "{} probabilities for {cells} cells",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(InfoError::BadShape("negative or non-finite probability".into()));
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(InfoError::BadMass(mass));
        }
        let names = axes.iter().map(|&(n, _)| n.to_string()).collect();
        Ok(JointDistribution { names, sizes, probs })
    }

    /// Accumulates weighted assignments into a table. Repeated assignments
    /// add up, so callers can stream atoms in any order.
    pub fn from_atoms<I>(axes: &[(&str, usize)], atoms: I) -> Result<Self, InfoError>
    where
        I: IntoIterator<Item = (Vec<usize>, f64)>,
    {
        let sizes: Vec<usize> = axes.iter().map(|&(_, s)| s).collect();
        let cells: usize = sizes.iter().product();
        let mut probs = vec![0.0; cells];
        for (idx, w) in atoms {
            if idx.len() != sizes.len() {
                return Err(InfoError::BadShape(format!(
                    "assignment arity {} for {} axes",
                    idx.len(),
                    sizes.len()
                )));
            }
            let mut flat = 0;
            for (d, (&i, &s)) in idx.iter().zip(&sizes).enumerate() {
                if i >= s {
                    return Err(InfoError::BadShape(format!("index {i} out of axis {d} size {s}")));
                }
                flat = flat * s + i;
            }
            probs[flat] += w;
        }
        Self::new(axes, probs)
    }

    pub fn axis_names(&self) -> &[String] {
        &self.names
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn resolve(&self, names: &[&str]) -> Result<Vec<usize>, InfoError> {
        names
            .iter()
            .map(|&n| {
                self.names
                    .iter()
                    .position(|have| have == n)
                    .ok_or_else(|| InfoError::UnknownAxis(n.to_string()))
            })
            .collect()
    }

    /// Marginal over the named axes, in the given order. Duplicates are
    /// dropped after the first occurrence.
    pub fn marginal(&self, names: &[&str]) -> Result<JointDistribution, InfoError> {
        let mut keep = Vec::new();
        for idx in self.resolve(names)? {
            if !keep.contains(&idx) {
                keep.push(idx);
            }
        }
        let sizes: Vec<usize> = keep.iter().map(|&i| self.sizes[i]).collect();
        let cells: usize = sizes.iter().product::<usize>().max(1);
        let mut probs = vec![0.0; cells];
        let mut idx = vec![0usize; self.sizes.len()];
        for &p in &self.probs {
            let mut flat = 0;
            for (pos, &axis) in keep.iter().enumerate() {
                flat = flat * sizes[pos] + idx[axis];
            }
            probs[flat] += p;
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < self.sizes[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let names_owned: Vec<String> = keep.iter().map(|&i| self.names[i].clone()).collect();
        Ok(JointDistribution {
            names: names_owned,
            sizes: if keep.is_empty() { vec![1] } else { sizes },
            probs,
        })
    }

    fn plain_entropy(&self) -> f64 {
        shannon(&self.probs)
    }
}

fn shannon(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum()
}

/// Binary entropy in bits; 0 at both endpoints.
pub fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

/// Conditional entropy `H(target | given)` in bits; `given` may be empty.
pub fn entropy(jd: &JointDistribution, target: &[&str], given: &[&str]) -> Result<f64, InfoError> {
    let mut both: Vec<&str> = target.to_vec();
    for g in given {
        if !both.contains(g) {
            both.push(g);
        }
    }
    let joint = jd.marginal(&both)?.plain_entropy();
    if given.is_empty() {
        return Ok(joint);
    }
    let cond = jd.marginal(given)?.plain_entropy();
    Ok(joint - cond)
}

/// Conditional mutual information `I(a ; b | given)` in bits.
pub fn mutual_info(
    jd: &JointDistribution,
    a: &[&str],
    b: &[&str],
    given: &[&str],
) -> Result<f64, InfoError> {
    let mut ab: Vec<&str> = a.to_vec();
    for x in b {
        if !ab.contains(x) {
            ab.push(x);
        }
    }
    Ok(entropy(jd, a, given)? + entropy(jd, b, given)? - entropy(jd, &ab, given)?)
}

fn check_same_shape(p: &JointDistribution, q: &JointDistribution) -> Result<(), InfoError> {
    if p.sizes != q.sizes || p.names != q.names {
        return Err(InfoError::BadShape("distributions live on different axes".into()));
    }
    Ok(())
}

/// Kullback-Leibler divergence `D(p || q)` in bits. Infinite when `p` puts
/// mass where `q` has none.
pub fn kl_divergence(p: &JointDistribution, q: &JointDistribution) -> Result<f64, InfoError> {
    check_same_shape(p, q)?;
    let mut total = 0.0;
    for (&pp, &qq) in p.probs.iter().zip(&q.probs) {
        if pp > 0.0 {
            if qq <= 0.0 {
                return Err(InfoError::DivergenceInfinite { p: pp });
            }
            total += pp * (pp / qq).log2();
        }
    }
    Ok(total)
}

/// Total variation distance, in [0, 1].
pub fn tvd(p: &JointDistribution, q: &JointDistribution) -> Result<f64, InfoError> {
    check_same_shape(p, q)?;
    Ok(0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Upper bound on total variation implied by a divergence of `kl_bits`.
pub fn pinsker_bound(kl_bits: f64) -> f64 {
    (0.5 * std::f64::consts::LN_2 * kl_bits).sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct FanoReport {
    /// Predictor error probability.
    pub delta: f64,
    /// `H(B | A)` in bits.
    pub h_cond: f64,
    pub h2_delta: f64,
    /// `H₂(δ) + δ·log₂(|B|-1) - H(B|A)`; nonnegative when the bound holds.
    pub slack: f64,
    pub ok: bool,
}

/// Checks the predictability bound: any predictor of `b` from `a` with
/// error `δ` forces `H(b|a) ≤ H₂(δ) + δ·log₂(|b|-1)`. The predictor maps
/// an assignment of the `a` axes to an assignment of the `b` axes.
pub fn fano_check(
    jd: &JointDistribution,
    a: &[&str],
    b: &[&str],
    predictor: &dyn Fn(&[usize]) -> Vec<usize>,
) -> Result<FanoReport, InfoError> {
    let mut all: Vec<&str> = a.to_vec();
    all.extend_from_slice(b);
    let joint = jd.marginal(&all)?;
    let a_len = a.len();
    let b_sizes: Vec<usize> = joint.sizes[a_len..].to_vec();
    let b_card: usize = b_sizes.iter().product();
    let mut delta = 0.0;
    let mut idx = vec![0usize; joint.sizes.len()];
    for &p in &joint.probs {
        if p > 0.0 {
            let guess = predictor(&idx[..a_len]);
            if guess.len() != b_sizes.len() {
                return Err(InfoError::BadShape(format!(
                    "predictor returned arity {}, expected {}",
                    guess.len(),
                    b_sizes.len()
                )));
            }
            if guess != idx[a_len..] {
                delta += p;
            }
        }
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < joint.sizes[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let h_cond = entropy(jd, b, a)?;
    let h2_delta = h2(delta);
    let extra = if b_card > 1 { delta * ((b_card - 1) as f64).log2() } else { 0.0 };
    let slack = h2_delta + extra - h_cond;
    Ok(FanoReport { delta, h_cond, h2_delta, slack, ok: slack >= -1e-9 })
}

/// Conditional mutual information `I(A ; B | C)` from a sparse list of
/// weighted assignments `(c, a, b, weight)`. Weights need not be normalized
/// overall; each condition slice is normalized internally and slices are
/// mixed by their total weight. Exact up to floating accumulation.
pub fn mutual_info_sparse(atoms: &[(u64, u64, u64, f64)]) -> f64 {
    use std::collections::HashMap;
    let total: f64 = atoms.iter().map(|&(_, _, _, w)| w).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut slices: HashMap<u64, Vec<(u64, u64, f64)>> = HashMap::new();
    for &(c, a, b, w) in atoms {
        if w > 0.0 {
            slices.entry(c).or_default().push((a, b, w));
        }
    }
    let mut info = 0.0;
    for slice in slices.values() {
        let z: f64 = slice.iter().map(|&(_, _, w)| w).sum();
        let mut joint: HashMap<(u64, u64), f64> = HashMap::new();
        let mut ma: HashMap<u64, f64> = HashMap::new();
        let mut mb: HashMap<u64, f64> = HashMap::new();
        for &(a, b, w) in slice {
            *joint.entry((a, b)).or_insert(0.0) += w / z;
            *ma.entry(a).or_insert(0.0) += w / z;
            *mb.entry(b).or_insert(0.0) += w / z;
        }
        let h = |m: &HashMap<_, f64>| -> f64 {
            m.values().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum()
        };
        let ha: f64 = h(&ma);
        let hb: f64 = h(&mb);
        let hab: f64 = joint.values().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
        info += (z / total) * (ha + hb - hab);
    }
    info
}

#[derive(Clone, Debug, Serialize)]
pub struct PlayerInfoTerm {
    pub player: usize,
    /// `I(direction ; her message | relabeling, special index)` in bits.
    pub info: f64,
    /// Her message length divided by the family width.
    pub bound: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectSumReport {
    pub protocol: String,
    pub k: u32,
    pub p: usize,
    /// `I(direction ; all messages | relabeling, special index)` in bits.
    pub i_total: f64,
    pub players: Vec<PlayerInfoTerm>,
    pub sum_players: f64,
    /// Whether the board's information splits across players' terms.
    pub subadditive_ok: bool,
    pub ok: bool,
    pub atoms: u128,
}

const INFO_TOL: f64 = 1e-6;

/// Builds the exact joint law of (direction bit, relabeling, special index,
/// all round-1 messages) at the bottom level for an indicator-driven
/// protocol and audits two facts: the total information about the direction
/// splits across per-player terms, and each term stays below that player's
/// message length divided by the family width.
///
/// Indicator-driven rules never read the relabeling, so its law can be
/// collapsed to a single representative without changing any conditional
/// information term; this is what makes the enumeration tractable.
pub fn direct_sum_report(
    proto: &XProtocol,
    k: u32,
    eps: f64,
    p: usize,
    budget: Budget,
) -> Result<DirectSumReport, InfoError> {
    let lp = level_family_params(1, k, eps, p)?;
    let fam = generate_family(&lp, 0xD5, 5000)?;
    let n = (k * k) as usize;
    let bits = proto.message_bits();
    let sigma: Vec<u32> = (0..lp.m() as u32).collect();
    let sigma_choices = vec![sigma];
    let space = D1Space { k, fam: &fam, sigma_choices: &sigma_choices, force_theta: None };
    let atoms_needed = space.atom_count();
    let table: u128 = 2u128 * p as u128 * (1u128 << (bits as u128 * n as u128));
    let need = atoms_needed.max(table);
    if need > budget.max_states {
        return Err(InfoError::Budget { need, budget: budget.max_states });
    }

    let mut axes: Vec<(String, usize)> = vec![
        ("theta".into(), 2),
        ("sigma".into(), 1),
        ("j".into(), p),
    ];
    for i in 0..n {
        axes.push((format!("pi{i}"), 1 << bits));
    }
    let axes_ref: Vec<(&str, usize)> = axes.iter().map(|(n, s)| (n.as_str(), *s)).collect();

    let atoms = space.atoms().into_iter().map(|atom| {
        let xv = atom.truth.x_vectors.as_ref().expect("level 1 always records x");
        let mut idx = vec![usize::from(atom.theta), atom.sigma_idx, atom.j_star];
        for xi in xv {
            let x: Vec<bool> = xi.iter().map(|&b| b == 1).collect();
            let msg = proto.raw_message(&x);
            let mut v = 0usize;
            for bpos in 0..msg.len() {
                v = (v << 1) | usize::from(msg.bit(bpos));
            }
            idx.push(v);
        }
        (idx, atom.weight)
    });
    let jd = JointDistribution::from_atoms(&axes_ref, atoms)?;

    let pi_names: Vec<String> = (0..n).map(|i| format!("pi{i}")).collect();
    let pi_refs: Vec<&str> = pi_names.iter().map(|s| s.as_str()).collect();
    let i_total = mutual_info(&jd, &["theta"], &pi_refs, &["sigma", "j"])?;
    let mut players = Vec::with_capacity(n);
    let mut sum_players = 0.0;
    for i in 0..n {
        let info = mutual_info(&jd, &["theta"], &[pi_refs[i]], &["sigma", "j"])?;
        let bound = bits as f64 / p as f64;
        sum_players += info;
        players.push(PlayerInfoTerm { player: i, info, bound, ok: info <= bound + INFO_TOL });
    }
    let subadditive_ok = i_total <= sum_players + INFO_TOL;
    let ok = subadditive_ok && players.iter().all(|t| t.ok);
    Ok(DirectSumReport {
        protocol: proto.name(),
        k,
        p,
        i_total,
        players,
        sum_players,
        subadditive_ok,
        ok,
        atoms: atoms_needed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{XRule, x_battery};
    use rand::Rng;

    fn coin_pair(corr: f64) -> JointDistribution {
        // P(X=Y) = corr split evenly, P(X≠Y) shares the rest.
        let same = corr / 2.0;
        let diff = (1.0 - corr) / 2.0;
        JointDistribution::new(&[("x", 2), ("y", 2)], vec![same, diff, diff, same]).unwrap()
    }

    #[test]
    fn h2_quarter_matches_reference() {
        assert!((h2(0.25) - 0.811_278_124_459_1).abs() < 1e-10);
        assert_eq!(h2(0.0), 0.0);
        assert_eq!(h2(1.0), 0.0);
        assert!((h2(0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_channel_information() {
        // A uniform bit through a flip probability of 1/4.
        let jd = coin_pair(0.75);
        let i = mutual_info(&jd, &["x"], &["y"], &[]).unwrap();
        assert!((i - (1.0 - h2(0.25))).abs() < 1e-10);
        assert!((i - 0.188_721_875_540_9).abs() < 1e-10);
    }

    #[test]
    fn chain_rule_holds() {
        let jd = coin_pair(0.9);
        let joint = entropy(&jd, &["x", "y"], &[]).unwrap();
        let split = entropy(&jd, &["x"], &[]).unwrap() + entropy(&jd, &["y"], &["x"]).unwrap();
        assert!((joint - split).abs() < 1e-12);
    }

    #[test]
    fn conditioning_never_raises_entropy() {
        let mut rng = crate::rng::StreamKey::new(5).rng();
        for _ in 0..50 {
            let probs: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
            let total: f64 = probs.iter().sum();
            let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
            let jd = JointDistribution::new(&[("a", 2), ("b", 2), ("c", 2)], probs).unwrap();
            let h = entropy(&jd, &["a"], &[]).unwrap();
            let hc = entropy(&jd, &["a"], &["b", "c"]).unwrap();
            assert!(hc <= h + 1e-12);
            assert!(mutual_info(&jd, &["a"], &["b"], &["c"]).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn divergences_behave() {
        let p = coin_pair(0.75);
        let q = coin_pair(0.5);
        let kl = kl_divergence(&p, &q).unwrap();
        assert!(kl > 0.0);
        assert!((kl_divergence(&p, &p).unwrap()).abs() < 1e-12);
        let d = tvd(&p, &q).unwrap();
        assert!((d - tvd(&q, &p).unwrap()).abs() < 1e-15);
        assert!(d <= pinsker_bound(kl) + 1e-9);
        let point = JointDistribution::new(&[("x", 2), ("y", 2)], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            kl_divergence(&point, &coin_pair(0.0)),
            Err(InfoError::DivergenceInfinite { .. })
        ));
    }

    #[test]
    fn fano_on_a_noisy_bit() {
        let jd = coin_pair(0.75);
        // Predict y = x: error 1/4.
        let rep = fano_check(&jd, &["x"], &["y"], &|a| vec![a[0]]).unwrap();
        assert!((rep.delta - 0.25).abs() < 1e-12);
        assert!((rep.h_cond - h2(0.25)).abs() < 1e-10);
        assert!(rep.ok);
        // With a binary target the bound is tight for this channel.
        assert!(rep.slack.abs() < 1e-9);
    }

    #[test]
    fn marginal_of_nothing_is_trivial() {
        let jd = coin_pair(0.6);
        let m = jd.marginal(&[]).unwrap();
        assert_eq!(m.probs(), &[1.0]);
        assert!(matches!(jd.marginal(&["zzz"]), Err(InfoError::UnknownAxis(_))));
    }

    #[test]
    fn additivity_audit_for_the_battery() {
        for proto in x_battery(2) {
            let rep = direct_sum_report(&proto, 2, 0.5, 2, Budget::default()).unwrap();
            assert!(rep.ok, "{}: {rep:?}", rep.protocol);
            assert!(rep.i_total >= -1e-12);
        }
    }

    #[test]
    fn verbatim_and_single_bit_are_tight() {
        let verbatim = XProtocol { p: 2, rule: XRule::Verbatim };
        let rep = direct_sum_report(&verbatim, 2, 0.5, 2, Budget::default()).unwrap();
        for t in &rep.players {
            assert!((t.info - t.bound).abs() < 1e-9, "verbatim should meet its bound exactly");
        }
        let bit = XProtocol { p: 2, rule: XRule::Bit(0) };
        let rep = direct_sum_report(&bit, 2, 0.5, 2, Budget::default()).unwrap();
        for t in &rep.players {
            assert!((t.info - 0.5).abs() < 1e-9);
            assert!((t.bound - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let proto = XProtocol { p: 2, rule: XRule::Zero };
        let err =
            direct_sum_report(&proto, 2, 0.5, 2, Budget { max_states: 4 }).unwrap_err();
        assert!(matches!(err, InfoError::Budget { .. }));
    }

    #[test]
    fn sparse_mi_matches_closed_forms() {
        // A product law within each condition slice carries no information.
        let mut product = Vec::new();
        for c in 0..2u64 {
            for a in 0..4u64 {
                for b in 0..4u64 {
                    product.push((c, a, b, 0.25 * 0.25 * 0.5));
                }
            }
        }
        assert!(mutual_info_sparse(&product).abs() < 1e-12);
        // Identical variables carry their full entropy.
        let copied: Vec<_> = (0..4u64).map(|a| (0u64, a, a, 0.25)).collect();
        assert!((mutual_info_sparse(&copied) - 2.0).abs() < 1e-12);
        // Dependence confined to one slice is weighted by that slice.
        let mut mixed = product.clone();
        mixed.retain(|&(c, _, _, _)| c == 0);
        mixed.extend((0..4u64).map(|a| (1u64, a, a, 0.25 * 0.5)));
        assert!((mutual_info_sparse(&mixed) - 1.0).abs() < 1e-12);
    }
}
