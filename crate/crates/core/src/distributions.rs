//! Samplers for the hard input distributions, one per recursion level.
//!
//! Level 1 hides a direction bit θ behind a family of candidate sets: every
//! player learns θ only through whether her copy of the special set survived
//! her private coin flips, and an item relabeling σ hides which set is
//! special. Level r plants one shared level-(r−1) instance (the special one)
//! into every group of players and surrounds it with per-player independent
//! fooling instances that look locally identical.
//!
//! All sampling flows through deterministic constructors (`build_d1`,
//! `build_row`) fed either by seeded streams or by explicit draws, so the
//! exact enumeration helpers walk the same code path the samplers use.

use crate::family::IntersectingFamily;
use crate::model::{
    derive_params, labeling_raw, Clause, ClausePath, GroundTruth, Instance, XOSValuation,
};
use crate::rng::StreamKey;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DistError {
    #[error("family at level {level} has shape (q={got_q}, t={got_t}), expected (q={want_q}, t={want_t})")]
    FamilyMismatch { level: u32, want_q: usize, want_t: usize, got_q: usize, got_t: usize },
    #[error("need one family per level 1..={r}, got {got}")]
    FamilyCount { r: u32, got: usize },
    #[error("level must be at least {min}, got {got}")]
    BadLevel { min: u32, got: u32 },
    #[error("player index {player} out of range for {n} players")]
    BadPlayer { player: usize, n: usize },
    #[error("inconsistent conditioning: {0}")]
    BadConditioning(String),
    #[error("sigma block accounting: need {need} mapped items, universe has {m}")]
    BlockAccounting { need: usize, m: usize },
}

fn check_family(level: u32, k: u32, eps: f64, fam: &IntersectingFamily) -> Result<(), DistError> {
    let want = derive_params(level, k, eps).expect("validated by caller");
    if fam.q != want.q || fam.t != want.t {
        return Err(DistError::FamilyMismatch {
            level,
            want_q: want.q,
            want_t: want.t,
            got_q: fam.q,
            got_t: fam.t,
        });
    }
    Ok(())
}

fn shuffled_identity(m: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut sigma: Vec<u32> = (0..m as u32).collect();
    sigma.shuffle(rng);
    sigma
}

/// All discrete choices behind one level-1 sample.
#[derive(Clone, Debug)]
pub struct D1Draw {
    pub j_star: usize,
    pub theta: u8,
    /// Per-player indicator vectors, each of length p, with entry `j_star`
    /// equal to `theta`.
    pub x: Vec<Vec<u8>>,
    /// Permutation of the level-1 item universe.
    pub sigma: Vec<u32>,
}

/// Deterministic level-1 constructor from explicit draws.
pub fn build_d1(k: u32, fam: &IntersectingFamily, draw: &D1Draw) -> (Instance, GroundTruth) {
    let n = (k * k) as usize;
    let m = 2 * (k as usize).pow(3);
    let t = fam.t;
    let gt = GroundTruth {
        level: 1,
        theta_star: draw.theta,
        j_star: draw.j_star,
        q: fam.q,
        special_slots: fam.sets[draw.j_star].clone(),
        sigma: draw.sigma.clone(),
        groups: (0..n as u32).map(|i| vec![i]).collect(),
        special_items: (0..n)
            .map(|i| {
                let shared = fam.q - t;
                let mut block: Vec<u32> =
                    draw.sigma[shared + i * t..shared + (i + 1) * t].to_vec();
                block.sort_unstable();
                block
            })
            .collect(),
        x_vectors: Some(draw.x.clone()),
        special_trace: None,
    };
    let valuations = (0..n)
        .map(|i| {
            let phi = crate::model::labeling_function(&gt, i);
            let mut clauses = Vec::new();
            let mut paths: Vec<ClausePath> = Vec::new();
            for (j, set) in fam.sets.iter().enumerate() {
                if draw.x[i][j] == 1 {
                    let items: Vec<u32> = set.iter().map(|&s| phi[s as usize]).collect();
                    clauses.push(Clause::new(items).expect("phi is injective"));
                    paths.push(vec![j as u32]);
                }
            }
            XOSValuation::new(clauses, paths)
        })
        .collect();
    let inst = Instance::new(1, n, m, valuations).expect("items stay inside [m]");
    (inst, gt)
}

fn draw_d1(k: u32, fam: &IntersectingFamily, key: StreamKey, force_theta: Option<u8>) -> D1Draw {
    let n = (k * k) as usize;
    let p = fam.p;
    let j_star = key.derive_label("jstar").rng().random_range(0..p);
    let theta = force_theta.unwrap_or_else(|| u8::from(key.derive_label("theta").rng().random_bool(0.5)));
    let x = (0..n)
        .map(|i| {
            let mut rng = key.derive_label("x").derive(i as u64).rng();
            (0..p)
                .map(|j| if j == j_star { theta } else { u8::from(rng.random_bool(0.5)) })
                .collect()
        })
        .collect();
    let sigma = shuffled_identity(2 * (k as usize).pow(3), &mut key.derive_label("sigma").rng());
    D1Draw { j_star, theta, x, sigma }
}

/// Level-1 sampler. The family's width may be overridden from the derived
/// default, but its shape `(q, t)` must match the level.
pub fn sample_d1(
    k: u32,
    eps: f64,
    fam: &IntersectingFamily,
    seed: u64,
    force_theta: Option<u8>,
) -> Result<(Instance, GroundTruth), DistError> {
    check_family(1, k, eps, fam)?;
    let key = StreamKey::new(seed).derive_label("d1");
    Ok(build_d1(k, fam, &draw_d1(k, fam, key, force_theta)))
}

/// Discrete choices behind one player's row of a level-1 sample: which set
/// is special in her sub-instance, her indicator vector, and the item
/// relabeling. A row's indicator vector is uniform on {0,1}^p because the
/// hidden bit is itself uniform.
#[derive(Clone, Debug)]
pub struct RowDraw {
    pub j_prime: usize,
    pub x: Vec<u8>,
    pub sigma: Vec<u32>,
}

/// Deterministic level-1 row constructor: player `idx`'s collection in
/// canonical level-1 coordinates.
pub fn build_row(fam: &IntersectingFamily, idx: usize, draw: &RowDraw) -> XOSValuation {
    let t = fam.t;
    let shared = fam.q - t;
    let special = &fam.sets[draw.j_prime];
    let phi = labeling_raw(fam.q, special, &draw.sigma, idx, shared, t);
    let mut clauses = Vec::new();
    let mut paths: Vec<ClausePath> = Vec::new();
    for (j, set) in fam.sets.iter().enumerate() {
        if draw.x[j] == 1 {
            let items: Vec<u32> = set.iter().map(|&s| phi[s as usize]).collect();
            clauses.push(Clause::new(items).expect("phi is injective"));
            paths.push(vec![j as u32]);
        }
    }
    XOSValuation::new(clauses, paths)
}

fn draw_row(fam: &IntersectingFamily, key: StreamKey) -> RowDraw {
    let p = fam.p;
    let j_prime = key.derive_label("jstar").rng().random_range(0..p);
    let theta = u8::from(key.derive_label("theta").rng().random_bool(0.5));
    let mut rng = key.derive_label("x").rng();
    let x = (0..p)
        .map(|j| if j == j_prime { theta } else { u8::from(rng.random_bool(0.5)) })
        .collect();
    // At level 1 the set size equals the base, so the universe is 2·t³.
    let sigma = shuffled_identity(2 * fam.t.pow(3), &mut key.derive_label("sigma").rng());
    RowDraw { j_prime, x, sigma }
}

/// One player's view of an independently sampled level-`level` instance, in
/// that instance's canonical coordinates. Only her row is materialized; the
/// rest of the hypothetical instance never exists.
fn sample_view(
    k: u32,
    families: &[IntersectingFamily],
    level: u32,
    idx: usize,
    key: StreamKey,
) -> XOSValuation {
    if level == 1 {
        return build_row(&families[0], idx, &draw_row(&families[0], key));
    }
    let fam = &families[(level - 1) as usize];
    let sub_n = (k as usize).pow(2 * (level - 1));
    let group = idx / sub_n;
    let sub_idx = idx % sub_n;
    let t = fam.t;
    let shared = fam.q - t;
    let m = (level as usize + 1) * (k as usize).pow(2 * level + 1);
    let j_prime = key.derive_label("jstar").rng().random_range(0..fam.p);
    let sigma = shuffled_identity(m, &mut key.derive_label("sigma").rng());
    let phi = labeling_raw(fam.q, &fam.sets[j_prime], &sigma, group, shared, t);
    let mut clauses = Vec::new();
    let mut paths = Vec::new();
    for (j, set) in fam.sets.iter().enumerate() {
        let child = sample_view(k, families, level - 1, sub_idx, key.derive_label("sub").derive(j as u64));
        lift_into(&child, set, &phi, j, &mut clauses, &mut paths);
    }
    XOSValuation::new(clauses, paths)
}

/// Builds one player's full view at the enclosing level from her view of
/// the planted instance and one fooling view per other sub-instance, all in
/// lower canonical coordinates. `fooling_rows` covers the sub-instances
/// `j != j_star` in ascending order. This is the single assembly path for
/// samplers, conditional resampling, and exact enumeration.
pub fn assemble_view(
    fam: &IntersectingFamily,
    sigma: &[u32],
    j_star: usize,
    group: usize,
    special_view: &XOSValuation,
    fooling_rows: &[XOSValuation],
) -> XOSValuation {
    let t = fam.t;
    let shared = fam.q - t;
    let phi = labeling_raw(fam.q, &fam.sets[j_star], sigma, group, shared, t);
    let mut clauses = Vec::new();
    let mut paths = Vec::new();
    let mut fool = fooling_rows.iter();
    for (j, set) in fam.sets.iter().enumerate() {
        let row = if j == j_star {
            special_view
        } else {
            fool.next().expect("one fooling row per other sub-instance")
        };
        lift_into(row, set, &phi, j, &mut clauses, &mut paths);
    }
    assert!(fool.next().is_none(), "too many fooling rows");
    XOSValuation::new(clauses, paths)
}

/// Re-expresses a lower-level collection inside the enclosing instance:
/// canonical lower item `c` is the `c`-th element of the enclosing family
/// set, which the labeling then maps to a concrete item. Paths gain the
/// sub-instance index as a prefix.
fn lift_into(
    lower: &XOSValuation,
    set: &[u32],
    phi: &[u32],
    j: usize,
    clauses: &mut Vec<Clause>,
    paths: &mut Vec<ClausePath>,
) {
    for (clause, path) in lower.clauses.iter().zip(&lower.paths) {
        let items: Vec<u32> =
            clause.items().iter().map(|&c| phi[set[c as usize] as usize]).collect();
        clauses.push(Clause::new(items).expect("injective relabeling"));
        let mut full = Vec::with_capacity(path.len() + 1);
        full.push(j as u32);
        full.extend_from_slice(path);
        paths.push(full);
    }
}

fn sample_level(
    k: u32,
    families: &[IntersectingFamily],
    level: u32,
    key: StreamKey,
    force_theta: Option<u8>,
) -> Result<(Instance, GroundTruth), DistError> {
    if level == 1 {
        let draw = draw_d1(k, &families[0], key, force_theta);
        return Ok(build_d1(k, &families[0], &draw));
    }
    let fam = &families[(level - 1) as usize];
    let n = (k as usize).pow(2 * level);
    let m = (level as usize + 1) * (k as usize).pow(2 * level + 1);
    let sub_n = (k as usize).pow(2 * (level - 1));
    let sub_m = level as usize * (k as usize).pow(2 * level - 1);
    let groups: Vec<Vec<u32>> = (0..(k * k) as usize)
        .map(|g| ((g * sub_n) as u32..((g + 1) * sub_n) as u32).collect())
        .collect();
    let t = fam.t;
    debug_assert_eq!(t, sub_m, "family set size must equal the lower item count");
    let shared = fam.q - t;
    let need = shared + (k * k) as usize * t;
    if need > m {
        return Err(DistError::BlockAccounting { need, m });
    }

    let j_star = key.derive_label("jstar").rng().random_range(0..fam.p);
    let (special_inst, special_gt) =
        sample_level(k, families, level - 1, key.derive_label("special"), force_theta)?;
    let sigma = shuffled_identity(m, &mut key.derive_label("sigma").rng());

    let gt = GroundTruth {
        level,
        theta_star: special_gt.theta_star,
        j_star,
        q: fam.q,
        special_slots: fam.sets[j_star].clone(),
        sigma: sigma.clone(),
        groups,
        special_items: (0..(k * k) as usize)
            .map(|g| {
                let mut block: Vec<u32> = sigma[shared + g * t..shared + (g + 1) * t].to_vec();
                block.sort_unstable();
                block
            })
            .collect(),
        x_vectors: None,
        special_trace: Some(Box::new(special_gt)),
    };

    let view_key = key.derive_label("view");
    let valuations = (0..n)
        .map(|i| {
            let sub_idx = i % sub_n;
            let phi = crate::model::labeling_function(&gt, i);
            let mut clauses = Vec::new();
            let mut paths = Vec::new();
            for (j, set) in fam.sets.iter().enumerate() {
                if j == j_star {
                    lift_into(
                        &special_inst.valuations[sub_idx],
                        set,
                        &phi,
                        j,
                        &mut clauses,
                        &mut paths,
                    );
                } else {
                    let child = sample_view(
                        k,
                        families,
                        level - 1,
                        sub_idx,
                        view_key.derive(i as u64).derive(j as u64),
                    );
                    lift_into(&child, set, &phi, j, &mut clauses, &mut paths);
                }
            }
            XOSValuation::new(clauses, paths)
        })
        .collect();
    let inst = Instance::new(level, n, m, valuations).expect("lifting stays inside [m]");
    Ok((inst, gt))
}

/// Recursive sampler for levels `r ≥ 2`. `families[j]` is the level-`j+1`
/// family; shapes are validated against the derived parameters for each
/// level (widths may vary).
pub fn sample_dr(
    r: u32,
    k: u32,
    eps: f64,
    families: &[IntersectingFamily],
    seed: u64,
    force_theta: Option<u8>,
) -> Result<(Instance, GroundTruth), DistError> {
    if r < 2 {
        return Err(DistError::BadLevel { min: 2, got: r });
    }
    if families.len() < r as usize {
        return Err(DistError::FamilyCount { r, got: families.len() });
    }
    for level in 1..=r {
        check_family(level, k, eps, &families[(level - 1) as usize])?;
    }
    sample_level(k, families, r, StreamKey::new(seed).derive_label("dr"), force_theta)
}

/// Conditioning data for a partial resample of one player at level `r`:
/// public relabeling and special index, plus the player's own view of the
/// planted instance in the planted instance's canonical coordinates.
#[derive(Clone, Debug)]
pub struct Conditioning<'a> {
    pub sigma: &'a [u32],
    pub j_star: usize,
    pub special_view: &'a XOSValuation,
}

/// Samples only `player`'s fooling views, fresh and independent, around the
/// fixed conditioning; her special view passes through unchanged. The result
/// is her full collection in top-level coordinates.
pub fn sample_player_view(
    r: u32,
    k: u32,
    eps: f64,
    families: &[IntersectingFamily],
    seed: u64,
    player: usize,
    cond: &Conditioning<'_>,
) -> Result<XOSValuation, DistError> {
    if r < 2 {
        return Err(DistError::BadLevel { min: 2, got: r });
    }
    if families.len() < r as usize {
        return Err(DistError::FamilyCount { r, got: families.len() });
    }
    for level in 1..=r {
        check_family(level, k, eps, &families[(level - 1) as usize])?;
    }
    let fam = &families[(r - 1) as usize];
    let n = (k as usize).pow(2 * r);
    let m = (r as usize + 1) * (k as usize).pow(2 * r + 1);
    let sub_n = (k as usize).pow(2 * (r - 1));
    let sub_m = r as usize * (k as usize).pow(2 * r - 1);
    if player >= n {
        return Err(DistError::BadPlayer { player, n });
    }
    if cond.sigma.len() != m {
        return Err(DistError::BadConditioning(format!(
            "sigma has length {}, expected {m}",
            cond.sigma.len()
        )));
    }
    if cond.j_star >= fam.p {
        return Err(DistError::BadConditioning(format!(
            "j_star {} out of range for width {}",
            cond.j_star, fam.p
        )));
    }
    for clause in &cond.special_view.clauses {
        if let Some(&item) = clause.items().iter().find(|&&c| c as usize >= sub_m) {
            return Err(DistError::BadConditioning(format!(
                "special view item {item} outside the lower universe of {sub_m}"
            )));
        }
    }
    let group = player / sub_n;
    let sub_idx = player % sub_n;
    let key = StreamKey::new(seed).derive_label("resample").derive(player as u64);
    let rows: Vec<XOSValuation> = (0..fam.p)
        .filter(|&j| j != cond.j_star)
        .map(|j| sample_view(k, families, r - 1, sub_idx, key.derive(j as u64)))
        .collect();
    Ok(assemble_view(fam, cond.sigma, cond.j_star, group, cond.special_view, &rows))
}

/// Exact enumeration of the level-1 law with the relabeling restricted to an
/// explicit set of permutations (uniform over the set). Atom weights are
/// exact: the remaining choices are finitely many fair coin flips.
pub struct D1Space<'a> {
    pub k: u32,
    pub fam: &'a IntersectingFamily,
    pub sigma_choices: &'a [Vec<u32>],
    pub force_theta: Option<u8>,
}

/// One fully resolved point of the restricted level-1 law with its exact
/// weight and the loop indices that produced it.
pub struct D1Atom {
    pub weight: f64,
    pub sigma_idx: usize,
    pub j_star: usize,
    pub theta: u8,
    pub instance: Instance,
    pub truth: GroundTruth,
}

impl D1Space<'_> {
    /// Atom count: |sigma_choices| · p · thetas · 2^{n(p-1)}.
    pub fn atom_count(&self) -> u128 {
        let n = (self.k * self.k) as u32;
        let p = self.fam.p as u128;
        let thetas = if self.force_theta.is_some() { 1 } else { 2 };
        self.sigma_choices.len() as u128 * p * thetas * (1u128 << (u128::from(n) * (p - 1)))
    }

    pub fn atoms(&self) -> Vec<D1Atom> {
        let n = (self.k * self.k) as usize;
        let p = self.fam.p;
        let thetas: Vec<u8> = match self.force_theta {
            Some(t) => vec![t],
            None => vec![0, 1],
        };
        let free = n * (p - 1);
        let mut out = Vec::new();
        let base = 1.0
            / (self.sigma_choices.len() as f64
                * p as f64
                * thetas.len() as f64
                * (1u64 << free) as f64);
        for (sigma_idx, sigma) in self.sigma_choices.iter().enumerate() {
            for j_star in 0..p {
                for &theta in &thetas {
                    for bits in 0u64..(1 << free) {
                        let mut x = vec![vec![0u8; p]; n];
                        let mut b = 0;
                        for (i, xi) in x.iter_mut().enumerate() {
                            for j in 0..p {
                                if j == j_star {
                                    xi[j] = theta;
                                } else {
                                    xi[j] = ((bits >> b) & 1) as u8;
                                    b += 1;
                                }
                            }
                            debug_assert!(b == (i + 1) * (p - 1));
                        }
                        let draw = D1Draw { j_star, theta, x, sigma: sigma.clone() };
                        let (instance, truth) = build_d1(self.k, self.fam, &draw);
                        out.push(D1Atom { weight: base, sigma_idx, j_star, theta, instance, truth });
                    }
                }
            }
        }
        out
    }
}

/// Exact enumeration of one player's level-1 row law under the same
/// relabeling restriction. The indicator vector is uniform on {0,1}^p and
/// independent of which set her sub-instance treats as special.
pub struct RowSpace<'a> {
    pub k: u32,
    pub fam: &'a IntersectingFamily,
    pub idx: usize,
    pub sigma_choices: &'a [Vec<u32>],
}

impl RowSpace<'_> {
    pub fn atoms(&self) -> Vec<(f64, XOSValuation)> {
        let p = self.fam.p;
        let mut out = Vec::new();
        let base =
            1.0 / (self.sigma_choices.len() as f64 * p as f64 * (1u64 << p) as f64);
        for sigma in self.sigma_choices {
            for j_prime in 0..p {
                for bits in 0u32..(1 << p) {
                    let x: Vec<u8> = (0..p).map(|j| ((bits >> j) & 1) as u8).collect();
                    let draw = RowDraw { j_prime, x, sigma: sigma.clone() };
                    out.push((base, build_row(self.fam, self.idx, &draw)));
                }
            }
        }
        out
    }
}
