//! Concrete protocols and the name registry.
//!
//! The baseline protocols bracket the interesting regime: full revelation
//! writes every clause to the board and recovers the optimum exactly at
//! maximal cost, a clause sketch writes a fixed prefix and yields a greedy
//! underestimate, and the direction distinguisher wraps any estimator and
//! thresholds its output into a one-bit guess at the planted direction.
//! Constant and indicator-driven one-round protocols exist for cost
//! accounting and for exhaustive information measurements, and a tiny
//! randomized probe exercises the round-lowering machinery end to end.

use crate::bits::BitString;
use crate::model::{derive_params, Clause, Instance, XOSValuation};
use crate::simulator::{MessageCtx, PlayerView, Protocol, RefereeCtx, RefereeError};
use crate::welfare::{sw_clause_union, Budget, WelfareError};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtoError {
    #[error("unknown protocol name {0:?}")]
    Unknown(String),
    #[error("bad protocol argument in {name:?}: {detail}")]
    BadArg { name: String, detail: String },
}

/// Clauses in canonical order: sorted lexicographically by item list.
pub fn canonical_clauses(v: &XOSValuation) -> Vec<Clause> {
    let mut cs = v.clauses.clone();
    cs.sort_by(|a, b| a.items().cmp(b.items()));
    cs
}

/// Length in bits of the canonical clause-list encoding: one 32-bit count,
/// then per clause one 32-bit length and one 32-bit word per item.
pub fn encoding_length(v: &XOSValuation) -> usize {
    32 * (1 + v.clauses.iter().map(|c| 1 + c.len()).sum::<usize>())
}

/// Canonical clause-list encoding of the first `limit` clauses in canonical
/// order. `usize::MAX` encodes everything.
pub fn encode_clauses(v: &XOSValuation, limit: usize) -> BitString {
    let cs = canonical_clauses(v);
    let take = cs.len().min(limit);
    let mut out = BitString::new();
    out.push_u32(take as u32);
    for c in &cs[..take] {
        out.push_u32(c.len() as u32);
        for &item in c.items() {
            out.push_u32(item);
        }
    }
    out
}

/// Inverse of [`encode_clauses`]. Fails on truncated or unsorted payloads.
pub fn decode_clauses(msg: &BitString) -> Result<Vec<Clause>, RefereeError> {
    let mut pos = 0;
    let mut next = || -> Result<u32, RefereeError> {
        let w = msg
            .read_u32(pos)
            .ok_or_else(|| RefereeError::Malformed(format!("truncated at bit {pos}")))?;
        pos += 32;
        Ok(w)
    };
    let count = next()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = next()?;
        let mut items = Vec::with_capacity(len as usize);
        for _ in 0..len {
            items.push(next()?);
        }
        out.push(
            Clause::new(items)
                .map_err(|e| RefereeError::Malformed(format!("bad clause: {e}")))?,
        );
    }
    if pos != msg.len() {
        return Err(RefereeError::Malformed(format!(
            "{} trailing bits after {} clauses",
            msg.len() - pos,
            count
        )));
    }
    Ok(out)
}

fn decoded_instance(ctx: &RefereeCtx<'_>, limit: usize) -> Result<Instance, RefereeError> {
    let row = ctx
        .board
        .first()
        .ok_or_else(|| RefereeError::Malformed("empty board".into()))?;
    if row.len() != ctx.n {
        return Err(RefereeError::Malformed(format!(
            "round 1 has {} messages for {} players",
            row.len(),
            ctx.n
        )));
    }
    let mut max_item = 0u32;
    let mut vals = Vec::with_capacity(ctx.n);
    for msg in row {
        let mut clauses = decode_clauses(msg)?;
        clauses.truncate(limit);
        for c in &clauses {
            if let Some(&top) = c.items().last() {
                max_item = max_item.max(top);
            }
        }
        let paths = clauses.iter().map(|_| Vec::new()).collect();
        vals.push(XOSValuation::new(clauses, paths));
    }
    Instance::new(1, ctx.n, max_item as usize + 1, vals)
        .map_err(|e| RefereeError::Malformed(format!("decoded instance invalid: {e}")))
}

/// One round, every clause on the board, exact optimum out.
pub struct FullRevelation {
    pub budget: Budget,
}

impl FullRevelation {
    pub fn new(budget: Budget) -> Self {
        FullRevelation { budget }
    }
}

impl Protocol for FullRevelation {
    fn name(&self) -> String {
        "full-rev".into()
    }
    fn rounds(&self) -> usize {
        1
    }
    fn declared_bits(&self, _: usize, _: usize, view: &PlayerView<'_>) -> usize {
        encoding_length(view.valuation)
    }
    fn message(&self, ctx: &mut MessageCtx<'_, '_>) -> BitString {
        encode_clauses(ctx.view.valuation, usize::MAX)
    }
    fn output(&self, ctx: &RefereeCtx<'_>) -> Result<f64, RefereeError> {
        let inst = decoded_instance(ctx, usize::MAX)?;
        match sw_clause_union(&inst, self.budget) {
            Ok(res) => Ok(res.value as f64),
            Err(WelfareError::BudgetExceeded { states, budget }) => Err(RefereeError::Budget(
                format!("welfare search visited {states} states, budget {budget}"),
            )),
        }
    }
}

/// Greedy disjoint union over decoded clause lists: players in index order
/// each claim the clause with the largest marginal gain. A valid allocation
/// of the real instance, so the estimate never exceeds the optimum.
fn greedy_union_value(inst: &Instance) -> u64 {
    let mut taken = crate::bits::ItemMask::empty(inst.m);
    let mut total = 0u64;
    for v in &inst.valuations {
        let mut best: Option<(u32, &Clause)> = None;
        for c in &v.clauses {
            let gain = taken.marginal(&crate::bits::ItemMask::from_items(inst.m, c.items()));
            if gain > 0 && best.map_or(true, |(g, _)| gain > g) {
                best = Some((gain, c));
            }
        }
        if let Some((gain, c)) = best {
            for &item in c.items() {
                taken.insert(item);
            }
            total += u64::from(gain);
        }
    }
    total
}

/// One round, first `c` canonical clauses per player, greedy union estimate.
pub struct ClauseSketch {
    pub c: usize,
}

impl Protocol for ClauseSketch {
    fn name(&self) -> String {
        format!("sketch:{}", self.c)
    }
    fn rounds(&self) -> usize {
        1
    }
    fn declared_bits(&self, _: usize, _: usize, view: &PlayerView<'_>) -> usize {
        let cs = canonical_clauses(view.valuation);
        let take = cs.len().min(self.c);
        32 * (1 + cs[..take].iter().map(|c| 1 + c.len()).sum::<usize>())
    }
    fn message(&self, ctx: &mut MessageCtx<'_, '_>) -> BitString {
        encode_clauses(ctx.view.valuation, self.c)
    }
    fn output(&self, ctx: &RefereeCtx<'_>) -> Result<f64, RefereeError> {
        let inst = decoded_instance(ctx, self.c)?;
        Ok(greedy_union_value(&inst) as f64)
    }
}

/// Split point between the two welfare regimes of the planted construction:
/// the geometric mean of a ceiling for the low-direction optimum and the
/// floor `k^(2r+1)` guaranteed in the high direction. The asymptotic
/// low-side ceiling `2r·k^(2r+2eps)` can exceed the floor at small bases,
/// so at the bottom level the exact deterministic ceiling `k²(1+l)` is used
/// whenever it is smaller. For deeper levels at bases too small for the
/// regimes to separate, the split is best effort and a wrapped estimator
/// cannot be reliable there.
pub fn theta_threshold(r: u32, k: u32, eps: f64) -> f64 {
    let kf = f64::from(k);
    let hi = kf.powi(2 * r as i32 + 1);
    let regime = 2.0 * f64::from(r) * kf.powf(2.0 * f64::from(r) + 2.0 * eps);
    let lo = if r == 1 {
        match derive_params(1, k, eps) {
            Ok(params) => regime.min((kf * kf) * (1.0 + params.l as f64)),
            Err(_) => regime,
        }
    } else {
        regime
    };
    (lo * hi).sqrt()
}

/// Wraps a welfare estimator; outputs 1 when the estimate clears the regime
/// split point, else 0.
pub struct ThetaDistinguisher {
    pub inner: Box<dyn Protocol>,
    pub threshold: f64,
}

impl ThetaDistinguisher {
    pub fn new(inner: Box<dyn Protocol>, r: u32, k: u32, eps: f64) -> Self {
        let threshold = theta_threshold(r, k, eps);
        ThetaDistinguisher { inner, threshold }
    }
}

impl Protocol for ThetaDistinguisher {
    fn name(&self) -> String {
        format!("theta:{}", self.inner.name())
    }
    fn rounds(&self) -> usize {
        self.inner.rounds()
    }
    fn declared_bits(&self, player: usize, round: usize, view: &PlayerView<'_>) -> usize {
        self.inner.declared_bits(player, round, view)
    }
    fn message(&self, ctx: &mut MessageCtx<'_, '_>) -> BitString {
        self.inner.message(ctx)
    }
    fn output(&self, ctx: &RefereeCtx<'_>) -> Result<f64, RefereeError> {
        let est = self.inner.output(ctx)?;
        Ok(f64::from(u8::from(est > self.threshold)))
    }
}

/// Fixed-width silence: every player writes `bits` zero bits for `rounds`
/// rounds and the referee answers 0. The cost bookkeeping baseline.
pub struct ConstantBits {
    pub rounds: usize,
    pub bits: usize,
}

impl Protocol for ConstantBits {
    fn name(&self) -> String {
        if self.rounds == 1 && self.bits == 0 {
            "const0".into()
        } else {
            format!("const:{}x{}", self.rounds, self.bits)
        }
    }
    fn rounds(&self) -> usize {
        self.rounds
    }
    fn declared_bits(&self, _: usize, _: usize, _: &PlayerView<'_>) -> usize {
        self.bits
    }
    fn message(&self, _: &mut MessageCtx<'_, '_>) -> BitString {
        BitString::from_bits(vec![false; self.bits])
    }
    fn output(&self, _: &RefereeCtx<'_>) -> Result<f64, RefereeError> {
        Ok(0.0)
    }
}

/// One noisy bit then clean bits: round 1 sends the player's first
/// sub-instance indicator XOR a private coin of bias `flip`, later rounds
/// send the indicator itself. The referee outputs whether ones hold a
/// majority. Round 1 keeps every message reachable under either indicator
/// value, which the round-lowering rejection sampler needs.
///
/// The default flip rate is deliberately high. Lowering a protocol replaces
/// the planted sub-instance behind a published first round with a fresh
/// independent draw, which is only faithful while that round carries little
/// evidence about any single player's input; a low-noise first bit at tiny
/// base sizes tilts the conditional enough to shift downstream output laws
/// by several percent.
pub struct Probe {
    pub rounds: usize,
    pub p: usize,
    /// Probability the round-1 bit is inverted.
    pub flip: f64,
}

impl Probe {
    pub const DEFAULT_FLIP: f64 = 0.4;

    pub fn new(rounds: usize, p: usize) -> Self {
        Probe { rounds, p, flip: Self::DEFAULT_FLIP }
    }

    pub fn round1_bit(&self, x0: bool, private: &mut impl Rng) -> bool {
        x0 ^ private.random_bool(self.flip)
    }
}

impl Protocol for Probe {
    fn name(&self) -> String {
        format!("probe:{}", self.rounds)
    }
    fn rounds(&self) -> usize {
        self.rounds
    }
    fn declared_bits(&self, _: usize, _: usize, _: &PlayerView<'_>) -> usize {
        1
    }
    fn message(&self, ctx: &mut MessageCtx<'_, '_>) -> BitString {
        let x0 = ctx.view.indicator(self.p)[0];
        if ctx.round == 1 {
            BitString::from_bit(self.round1_bit(x0, ctx.private))
        } else {
            BitString::from_bit(x0)
        }
    }
    fn output(&self, ctx: &RefereeCtx<'_>) -> Result<f64, RefereeError> {
        let mut ones = 0usize;
        let mut total = 0usize;
        for row in ctx.board {
            for m in row {
                for i in 0..m.len() {
                    ones += usize::from(m.bit(i));
                    total += 1;
                }
            }
        }
        Ok(f64::from(u8::from(2 * ones >= total.max(1))))
    }
}

/// Message rules that read only the presence indicator, never the labeling.
/// For these, conditioning on the relabeling is vacuous and the full
/// message law is exactly enumerable from the indicator law.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XRule {
    /// Silent single zero bit.
    Zero,
    /// The indicator entry at a fixed index.
    Bit(usize),
    /// The whole indicator vector, one bit per entry.
    Verbatim,
    /// Parity of all indicator entries.
    Parity,
    /// AND of all indicator entries.
    And,
}

/// A one-round protocol driven by an [`XRule`]. The raw rule is exposed so
/// exhaustive enumerations can evaluate it on indicator vectors directly.
pub struct XProtocol {
    pub p: usize,
    pub rule: XRule,
}

impl XProtocol {
    pub fn raw_message(&self, x: &[bool]) -> BitString {
        match self.rule {
            XRule::Zero => BitString::from_bit(false),
            XRule::Bit(i) => BitString::from_bit(x[i]),
            XRule::Verbatim => BitString::from_bits(x.to_vec()),
            XRule::Parity => BitString::from_bit(x.iter().fold(false, |a, &b| a ^ b)),
            XRule::And => BitString::from_bit(x.iter().all(|&b| b)),
        }
    }

    pub fn message_bits(&self) -> usize {
        match self.rule {
            XRule::Verbatim => self.p,
            _ => 1,
        }
    }
}

impl Protocol for XProtocol {
    fn name(&self) -> String {
        match self.rule {
            XRule::Zero => "x:zero".into(),
            XRule::Bit(i) => format!("x:bit{i}"),
            XRule::Verbatim => "x:verbatim".into(),
            XRule::Parity => "x:parity".into(),
            XRule::And => "x:and".into(),
        }
    }
    fn rounds(&self) -> usize {
        1
    }
    fn declared_bits(&self, _: usize, _: usize, _: &PlayerView<'_>) -> usize {
        self.message_bits()
    }
    fn message(&self, ctx: &mut MessageCtx<'_, '_>) -> BitString {
        self.raw_message(&ctx.view.indicator(self.p))
    }
    fn output(&self, _: &RefereeCtx<'_>) -> Result<f64, RefereeError> {
        Ok(0.0)
    }
}

/// The standard battery for exhaustive information measurements: silence,
/// a single indicator bit, the full vector, parity, and AND.
pub fn x_battery(p: usize) -> Vec<XProtocol> {
    vec![
        XProtocol { p, rule: XRule::Zero },
        XProtocol { p, rule: XRule::Bit(0) },
        XProtocol { p, rule: XRule::Verbatim },
        XProtocol { p, rule: XRule::Parity },
        XProtocol { p, rule: XRule::And },
    ]
}

/// Context a name needs to become a protocol: the family width, the level
/// parameters for thresholds, and the welfare search budget.
#[derive(Clone, Copy, Debug)]
pub struct RegistryCtx {
    pub p: usize,
    pub r: u32,
    pub k: u32,
    pub eps: f64,
    pub budget: Budget,
}

/// Parses a protocol name. Grammar: `full-rev`, `const0`,
/// `const:<rounds>x<bits>`, `sketch:<c>`, `probe:<rounds>`,
/// `theta:<inner>`, and the `x:` battery members.
pub fn parse_protocol(name: &str, ctx: &RegistryCtx) -> Result<Box<dyn Protocol>, ProtoError> {
    let bad = |detail: String| ProtoError::BadArg { name: name.to_string(), detail };
    if name == "full-rev" {
        return Ok(Box::new(FullRevelation::new(ctx.budget)));
    }
    if name == "const0" {
        return Ok(Box::new(ConstantBits { rounds: 1, bits: 0 }));
    }
    if let Some(rest) = name.strip_prefix("const:") {
        let (r, b) = rest
            .split_once('x')
            .ok_or_else(|| bad("expected const:<rounds>x<bits>".into()))?;
        let rounds = r.parse().map_err(|e| bad(format!("rounds: {e}")))?;
        let bits = b.parse().map_err(|e| bad(format!("bits: {e}")))?;
        return Ok(Box::new(ConstantBits { rounds, bits }));
    }
    if let Some(rest) = name.strip_prefix("sketch:") {
        let c = rest.parse().map_err(|e| bad(format!("clause count: {e}")))?;
        return Ok(Box::new(ClauseSketch { c }));
    }
    if let Some(rest) = name.strip_prefix("probe:") {
        let rounds: usize = rest.parse().map_err(|e| bad(format!("rounds: {e}")))?;
        if rounds == 0 {
            return Err(bad("probe needs at least one round".into()));
        }
        return Ok(Box::new(Probe::new(rounds, ctx.p)));
    }
    if let Some(rest) = name.strip_prefix("theta:") {
        let inner = parse_protocol(rest, ctx)?;
        return Ok(Box::new(ThetaDistinguisher::new(inner, ctx.r, ctx.k, ctx.eps)));
    }
    if let Some(rest) = name.strip_prefix("x:") {
        let rule = match rest {
            "zero" => XRule::Zero,
            "verbatim" => XRule::Verbatim,
            "parity" => XRule::Parity,
            "and" => XRule::And,
            other => match other.strip_prefix("bit") {
                Some(i) => XRule::Bit(i.parse().map_err(|e| bad(format!("bit index: {e}")))?),
                None => return Err(ProtoError::Unknown(name.to_string())),
            },
        };
        return Ok(Box::new(XProtocol { p: ctx.p, rule }));
    }
    Err(ProtoError::Unknown(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{generate_family, level_family_params};
    use crate::simulator::run;
    use crate::testutil::tiny_instance_strategy;
    use crate::welfare::sw_bruteforce;
    use proptest::prelude::*;

    #[test]
    fn encoding_roundtrip() {
        let v = XOSValuation::new(
            vec![
                Clause::new(vec![5, 2, 9]).unwrap(),
                Clause::new(vec![1]).unwrap(),
            ],
            vec![vec![0], vec![1]],
        );
        let msg = encode_clauses(&v, usize::MAX);
        assert_eq!(msg.len(), encoding_length(&v));
        let decoded = decode_clauses(&msg).unwrap();
        assert_eq!(decoded, canonical_clauses(&v));
        let empty = XOSValuation::zero();
        let msg = encode_clauses(&empty, usize::MAX);
        assert_eq!(msg.len(), 32);
        assert_eq!(decode_clauses(&msg).unwrap(), vec![]);
    }

    #[test]
    fn decode_rejects_garbage() {
        let mut msg = BitString::new();
        msg.push_u32(2);
        msg.push_u32(1);
        assert!(matches!(decode_clauses(&msg), Err(RefereeError::Malformed(_))));
        let mut msg = encode_clauses(&XOSValuation::zero(), usize::MAX);
        msg.push(true);
        assert!(matches!(decode_clauses(&msg), Err(RefereeError::Malformed(_))));
    }

    #[test]
    fn threshold_sits_between_the_level_1_regimes() {
        for k in [3u32, 4, 5] {
            let params = derive_params(1, k, 0.5).unwrap();
            let low = f64::from(k * k) * (1.0 + params.l as f64);
            let high = f64::from(k).powi(3);
            let thr = theta_threshold(1, k, 0.5);
            assert!(low < thr && thr < high, "k={k}: {low} < {thr} < {high}");
        }
    }

    #[test]
    fn registry_round_trips_names() {
        let ctx = RegistryCtx { p: 4, r: 1, k: 3, eps: 0.5, budget: Budget::default() };
        for name in
            ["full-rev", "const0", "const:2x3", "sketch:2", "probe:2", "theta:full-rev", "theta:sketch:1", "x:parity", "x:bit1"]
        {
            let p = parse_protocol(name, &ctx).unwrap();
            assert_eq!(p.name(), *name, "name should round-trip");
        }
        assert!(matches!(parse_protocol("nope", &ctx), Err(ProtoError::Unknown(_))));
        assert!(matches!(parse_protocol("sketch:x", &ctx), Err(ProtoError::BadArg { .. })));
    }

    #[test]
    fn x_rules_compute_expected_bits() {
        let x = [true, false, true];
        let cases = [
            (XRule::Zero, "0"),
            (XRule::Bit(1), "0"),
            (XRule::Verbatim, "101"),
            (XRule::Parity, "0"),
            (XRule::And, "0"),
        ];
        for (rule, want) in cases {
            let proto = XProtocol { p: 3, rule };
            assert_eq!(proto.raw_message(&x).to_string(), want, "{rule:?}");
        }
        let all = [true, true];
        assert_eq!(XProtocol { p: 2, rule: XRule::And }.raw_message(&all).to_string(), "1");
        assert_eq!(XProtocol { p: 2, rule: XRule::Parity }.raw_message(&all).to_string(), "0");
    }

    #[test]
    fn distinguisher_is_exact_at_level_1() {
        let k = 3;
        let lp = level_family_params(1, k, 0.5, 8).unwrap();
        let fam = generate_family(&lp, 77, 5000).unwrap();
        let ctx = RegistryCtx { p: 8, r: 1, k, eps: 0.5, budget: Budget::default() };
        let proto = parse_protocol("theta:full-rev", &ctx).unwrap();
        for theta in [0u8, 1u8] {
            for seed in 0..15 {
                let (inst, gt) =
                    crate::distributions::sample_d1(k, 0.5, &fam, seed, Some(theta)).unwrap();
                let t = run(proto.as_ref(), &inst, seed).unwrap();
                assert_eq!(t.output, f64::from(gt.theta_star), "seed {seed} theta {theta}");
            }
        }
    }

    #[test]
    fn probe_runs_and_outputs_a_bit() {
        let lp = level_family_params(1, 2, 0.5, 2).unwrap();
        let fam = generate_family(&lp, 3, 5000).unwrap();
        let (inst, _) = crate::distributions::sample_d1(2, 0.5, &fam, 9, None).unwrap();
        let probe = Probe::new(2, 2);
        let t = run(&probe, &inst, 4).unwrap();
        assert!(t.output == 0.0 || t.output == 1.0);
        assert_eq!(t.worst_case_bits, 4 * 2);
        assert_eq!(t.realized_bits, 4 * 2);
    }

    proptest! {
        #[test]
        fn full_revelation_recovers_the_optimum(inst in tiny_instance_strategy()) {
            let proto = FullRevelation::new(Budget::default());
            let t = run(&proto, &inst, 0).unwrap();
            let exact = sw_bruteforce(&inst, Budget::default()).unwrap().value;
            prop_assert_eq!(t.output, exact as f64);
            let want: u64 = inst
                .valuations
                .iter()
                .map(|v| encoding_length(v) as u64)
                .sum();
            prop_assert_eq!(t.worst_case_bits, want);
            prop_assert_eq!(t.realized_bits, want);
        }

        #[test]
        fn sketch_never_overshoots(inst in tiny_instance_strategy(), c in 0usize..4) {
            let proto = ClauseSketch { c };
            let t = run(&proto, &inst, 0).unwrap();
            let exact = sw_bruteforce(&inst, Budget::default()).unwrap().value;
            prop_assert!(t.output <= exact as f64);
            prop_assert!(t.output >= 0.0);
        }
    }
}
