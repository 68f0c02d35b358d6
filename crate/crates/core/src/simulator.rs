//! Round-based broadcast simulator.
//!
//! Each round, every player writes one bit string to a shared board as a
//! function of her own collection, everything on the board from earlier
//! rounds, shared coins, and her own coins. Within a round nobody sees
//! anybody else's current message; the referee reads only the final board
//! and the shared coins. Cost is counted two ways: bits actually written,
//! and the sum of declared per-round maxima.
//!
//! Runs can start midway with the earlier rounds forced to given contents,
//! and both coin sources can be redirected, which is what the round-lowering
//! transformation needs to replay a sampled first round inside a longer
//! protocol.

use crate::bits::BitString;
use crate::model::{Instance, XOSValuation};
use crate::rng::StreamKey;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RefereeError {
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("malformed board: {0}")]
    Malformed(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("player {player} round {round}: message is {got} bits, declared bound {declared}")]
    MessageTooLong { player: usize, round: usize, got: usize, declared: usize },
    #[error("referee failed: {0}")]
    Referee(#[from] RefereeError),
    #[error("start round {start} out of range 1..={rounds}")]
    BadStart { start: usize, rounds: usize },
    #[error("forced prefix: {0}")]
    ForcedShape(String),
    #[error("protocol must have at least one round")]
    NoRounds,
    #[error("evaluation order must be a permutation of 0..{n}")]
    BadEvalOrder { n: usize },
}

/// What one player knows going into the run.
pub struct PlayerView<'a> {
    pub player: usize,
    pub level: u32,
    pub valuation: &'a XOSValuation,
}

impl PlayerView<'_> {
    /// Presence indicator over top-level sub-instance indices `0..p`: entry
    /// `j` is whether the player holds any clause rooted at `j`. At level 1
    /// this is exactly her indicator vector.
    pub fn indicator(&self, p: usize) -> Vec<bool> {
        self.valuation.indicator_vector(&[], p)
    }
}

/// Shared randomness, addressed by tag so that players and referee can draw
/// the same streams without any ordering discipline.
#[derive(Clone)]
pub struct PublicCoins {
    key: StreamKey,
}

impl PublicCoins {
    pub fn new(seed: u64) -> Self {
        PublicCoins { key: StreamKey::new(seed).derive_label("pub") }
    }

    pub fn rng(&self, tag: u64) -> ChaCha8Rng {
        self.key.derive(tag).rng()
    }

    pub fn rng_label(&self, label: &str) -> ChaCha8Rng {
        self.key.derive_label(label).rng()
    }
}

/// Everything a player may consult when writing her round message. `board`
/// holds only completed rounds, so same-round peeking is impossible by
/// construction.
pub struct MessageCtx<'a, 'v> {
    pub player: usize,
    /// 1-based round number.
    pub round: usize,
    pub view: &'a PlayerView<'v>,
    pub board: &'a [Vec<BitString>],
    pub public: &'a PublicCoins,
    pub private: &'a mut ChaCha8Rng,
}

/// Everything the referee may consult: the full board and the shared coins.
/// Player inputs are deliberately absent.
pub struct RefereeCtx<'a> {
    pub board: &'a [Vec<BitString>],
    pub public: &'a PublicCoins,
    pub n: usize,
}

pub trait Protocol {
    fn name(&self) -> String;
    fn rounds(&self) -> usize;
    /// Maximum message length for this player and round given her input.
    /// Must upper-bound every message the protocol can emit there.
    fn declared_bits(&self, player: usize, round: usize, view: &PlayerView<'_>) -> usize;
    fn message(&self, ctx: &mut MessageCtx<'_, '_>) -> BitString;
    fn output(&self, ctx: &RefereeCtx<'_>) -> Result<f64, RefereeError>;
}

/// Full record of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    /// `messages[round][player]`, rounds in order.
    pub messages: Vec<Vec<BitString>>,
    pub output: f64,
    /// Bits actually written across the whole board.
    pub realized_bits: u64,
    /// Sum over players and rounds of the declared maxima for this input.
    pub worst_case_bits: u64,
}

/// Knobs for partial and redirected runs. `forced` supplies rounds before
/// `start_round`; coin overrides redirect the shared stream or individual
/// players' private streams to other seeds.
#[derive(Clone, Debug, Default)]
pub struct RunOpts {
    pub start_round: usize,
    pub forced: Vec<Vec<BitString>>,
    pub public_seed: Option<u64>,
    pub private_seeds: Option<Vec<Option<u64>>>,
    pub eval_order: Option<Vec<usize>>,
}

impl RunOpts {
    pub fn from_round(start_round: usize, forced: Vec<Vec<BitString>>) -> Self {
        RunOpts { start_round, forced, ..Default::default() }
    }
}

/// Deterministic per-player, per-round private stream. The base seed is the
/// run seed unless overridden for that player.
pub fn private_rng(seed: u64, player: usize, round: usize) -> ChaCha8Rng {
    StreamKey::new(seed)
        .derive_label("priv")
        .derive(player as u64)
        .derive(round as u64)
        .rng()
}

pub fn run(protocol: &dyn Protocol, inst: &Instance, seed: u64) -> Result<Transcript, SimError> {
    run_with(protocol, inst, seed, &RunOpts { start_round: 1, ..Default::default() })
}

pub fn run_from_round(
    protocol: &dyn Protocol,
    inst: &Instance,
    seed: u64,
    start_round: usize,
    forced: &[Vec<BitString>],
) -> Result<Transcript, SimError> {
    run_with(protocol, inst, seed, &RunOpts::from_round(start_round, forced.to_vec()))
}

pub fn run_with(
    protocol: &dyn Protocol,
    inst: &Instance,
    seed: u64,
    opts: &RunOpts,
) -> Result<Transcript, SimError> {
    let rounds = protocol.rounds();
    if rounds == 0 {
        return Err(SimError::NoRounds);
    }
    let n = inst.n;
    let start = if opts.start_round == 0 { 1 } else { opts.start_round };
    if start < 1 || start > rounds {
        return Err(SimError::BadStart { start, rounds });
    }
    let views: Vec<PlayerView<'_>> = (0..n)
        .map(|i| PlayerView { player: i, level: inst.level, valuation: &inst.valuations[i] })
        .collect();
    if opts.forced.len() != start - 1 {
        return Err(SimError::ForcedShape(format!(
            "expected {} forced rounds, got {}",
            start - 1,
            opts.forced.len()
        )));
    }
    for (r, row) in opts.forced.iter().enumerate() {
        if row.len() != n {
            return Err(SimError::ForcedShape(format!(
                "round {} has {} messages, expected {n}",
                r + 1,
                row.len()
            )));
        }
        for (i, msg) in row.iter().enumerate() {
            let declared = protocol.declared_bits(i, r + 1, &views[i]);
            if msg.len() > declared {
                return Err(SimError::MessageTooLong {
                    player: i,
                    round: r + 1,
                    got: msg.len(),
                    declared,
                });
            }
        }
    }
    let order: Vec<usize> = match &opts.eval_order {
        Some(perm) => {
            let mut seen = vec![false; n];
            if perm.len() != n || perm.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true))
            {
                return Err(SimError::BadEvalOrder { n });
            }
            perm.clone()
        }
        None => (0..n).collect(),
    };
    let public = PublicCoins::new(opts.public_seed.unwrap_or(seed));
    let player_seed = |i: usize| -> u64 {
        opts.private_seeds
            .as_ref()
            .and_then(|s| s.get(i).copied().flatten())
            .unwrap_or(seed)
    };

    let mut board: Vec<Vec<BitString>> = opts.forced.clone();
    for round in start..=rounds {
        let mut row: Vec<Option<BitString>> = vec![None; n];
        for &i in &order {
            let mut private = private_rng(player_seed(i), i, round);
            let msg = {
                let mut ctx = MessageCtx {
                    player: i,
                    round,
                    view: &views[i],
                    board: &board,
                    public: &public,
                    private: &mut private,
                };
                protocol.message(&mut ctx)
            };
            let declared = protocol.declared_bits(i, round, &views[i]);
            if msg.len() > declared {
                return Err(SimError::MessageTooLong { player: i, round, got: msg.len(), declared });
            }
            row[i] = Some(msg);
        }
        board.push(row.into_iter().map(|m| m.expect("all players wrote")).collect());
    }

    let output = protocol.output(&RefereeCtx { board: &board, public: &public, n })?;
    let realized_bits = board.iter().flatten().map(|m| m.len() as u64).sum();
    let worst_case_bits = (0..n)
        .map(|i| {
            (1..=rounds).map(|r| protocol.declared_bits(i, r, &views[i]) as u64).sum::<u64>()
        })
        .sum();
    Ok(Transcript { messages: board, output, realized_bits, worst_case_bits })
}

/// Recomputes the referee's output from a board and the shared coin seed
/// alone. Agreement with [`Transcript::output`] witnesses that the output
/// never depends on anything but the board and shared coins.
pub fn replay_output(
    protocol: &dyn Protocol,
    messages: &[Vec<BitString>],
    public_seed: u64,
    n: usize,
) -> Result<f64, RefereeError> {
    let public = PublicCoins::new(public_seed);
    protocol.output(&RefereeCtx { board: messages, public: &public, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Clause, XOSValuation};
    use rand::Rng;

    fn toy_instance(n: usize) -> Instance {
        let valuations = (0..n)
            .map(|i| {
                XOSValuation::new(
                    vec![Clause::new(vec![i as u32]).unwrap()],
                    vec![vec![0]],
                )
            })
            .collect();
        Instance::new(1, n, n, valuations).unwrap()
    }

    /// Writes `bits` constant zero bits per player per round; referee counts
    /// board rows.
    struct ConstBits {
        rounds: usize,
        bits: usize,
    }

    impl Protocol for ConstBits {
        fn name(&self) -> String {
            format!("const:{}x{}", self.rounds, self.bits)
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
        fn output(&self, ctx: &RefereeCtx<'_>) -> Result<f64, RefereeError> {
            Ok(ctx.board.len() as f64)
        }
    }

    /// First bit of the player's private stream each round; referee XORs the
    /// whole board with a public coin.
    struct NoisyParity {
        rounds: usize,
    }

    impl Protocol for NoisyParity {
        fn name(&self) -> String {
            "noisy-parity".into()
        }
        fn rounds(&self) -> usize {
            self.rounds
        }
        fn declared_bits(&self, _: usize, _: usize, _: &PlayerView<'_>) -> usize {
            1
        }
        fn message(&self, ctx: &mut MessageCtx<'_, '_>) -> BitString {
            BitString::from_bit(ctx.private.random_bool(0.5))
        }
        fn output(&self, ctx: &RefereeCtx<'_>) -> Result<f64, RefereeError> {
            let mut acc = ctx.public.rng_label("flip").random_bool(0.5);
            for row in ctx.board {
                for m in row {
                    acc ^= m.bit(0);
                }
            }
            Ok(f64::from(u8::from(acc)))
        }
    }

    /// Declares 1 bit but writes 2.
    struct Liar;

    impl Protocol for Liar {
        fn name(&self) -> String {
            "liar".into()
        }
        fn rounds(&self) -> usize {
            1
        }
        fn declared_bits(&self, _: usize, _: usize, _: &PlayerView<'_>) -> usize {
            1
        }
        fn message(&self, _: &mut MessageCtx<'_, '_>) -> BitString {
            BitString::from_bits(vec![true, true])
        }
        fn output(&self, _: &RefereeCtx<'_>) -> Result<f64, RefereeError> {
            Ok(0.0)
        }
    }

    #[test]
    fn constant_protocol_costs_are_exact() {
        let inst = toy_instance(5);
        let t = run(&ConstBits { rounds: 3, bits: 2 }, &inst, 0).unwrap();
        assert_eq!(t.worst_case_bits, 5 * 3 * 2);
        assert_eq!(t.realized_bits, 5 * 3 * 2);
        assert_eq!(t.messages.len(), 3);
        assert_eq!(t.output, 3.0);
    }

    #[test]
    fn replay_is_deterministic_and_referee_isolated() {
        let inst = toy_instance(4);
        let p = NoisyParity { rounds: 2 };
        let a = run(&p, &inst, 42).unwrap();
        let b = run(&p, &inst, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(replay_output(&p, &a.messages, 42, 4).unwrap(), a.output);
        let c = run(&p, &inst, 43).unwrap();
        assert_eq!(replay_output(&p, &c.messages, 43, 4).unwrap(), c.output);
    }

    #[test]
    fn evaluation_order_does_not_matter() {
        let inst = toy_instance(4);
        let p = NoisyParity { rounds: 2 };
        let base = run(&p, &inst, 7).unwrap();
        let opts = RunOpts {
            start_round: 1,
            eval_order: Some(vec![3, 1, 0, 2]),
            ..Default::default()
        };
        let permuted = run_with(&p, &inst, 7, &opts).unwrap();
        assert_eq!(base, permuted);
    }

    #[test]
    fn oversized_message_is_rejected() {
        let inst = toy_instance(2);
        let err = run(&Liar, &inst, 0).unwrap_err();
        assert_eq!(
            err,
            SimError::MessageTooLong { player: 0, round: 1, got: 2, declared: 1 }
        );
    }

    #[test]
    fn forced_prefix_resumes_exactly() {
        let inst = toy_instance(4);
        let p = NoisyParity { rounds: 3 };
        let full = run(&p, &inst, 11).unwrap();
        let resumed =
            run_from_round(&p, &inst, 11, 2, &full.messages[..1]).unwrap();
        assert_eq!(resumed, full);
        let resumed3 =
            run_from_round(&p, &inst, 11, 3, &full.messages[..2]).unwrap();
        assert_eq!(resumed3, full);
    }

    #[test]
    fn off_support_forcing_still_runs() {
        let inst = toy_instance(2);
        let p = NoisyParity { rounds: 2 };
        let forced = vec![vec![BitString::from_bit(true), BitString::from_bit(true)]];
        let t = run_from_round(&p, &inst, 5, 2, &forced).unwrap();
        assert_eq!(t.messages[0], forced[0]);
        assert_eq!(t.messages.len(), 2);
    }

    #[test]
    fn forced_shape_is_validated() {
        let inst = toy_instance(2);
        let p = NoisyParity { rounds: 2 };
        assert!(matches!(
            run_from_round(&p, &inst, 0, 2, &[]),
            Err(SimError::ForcedShape(_))
        ));
        let wide = vec![vec![BitString::from_bit(true); 3]];
        assert!(matches!(
            run_from_round(&p, &inst, 0, 2, &wide),
            Err(SimError::ForcedShape(_))
        ));
        let long = vec![vec![BitString::from_bits(vec![true; 2]); 2]];
        assert!(matches!(
            run_from_round(&p, &inst, 0, 2, &long),
            Err(SimError::MessageTooLong { .. })
        ));
    }

    #[test]
    fn private_seed_override_changes_only_that_player() {
        let inst = toy_instance(3);
        let p = NoisyParity { rounds: 1 };
        let base = run(&p, &inst, 9).unwrap();
        let opts = RunOpts {
            start_round: 1,
            private_seeds: Some(vec![None, Some(1234), None]),
            ..Default::default()
        };
        let redirected = run_with(&p, &inst, 9, &opts).unwrap();
        assert_eq!(base.messages[0][0], redirected.messages[0][0]);
        assert_eq!(base.messages[0][2], redirected.messages[0][2]);
        let expected = BitString::from_bit(private_rng(1234, 1, 1).random_bool(0.5));
        assert_eq!(redirected.messages[0][1], expected);
    }
}
