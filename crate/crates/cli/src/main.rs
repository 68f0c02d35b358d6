//! Command-line front end: sampling, exact welfare, protocol runs,
//! information audits, the round-lowering transformation, and the named
//! multi-trial experiments, all seeded and byte-reproducible.
//!
//! Exit codes: 0 on success, 2 when a checked invariant fails inside a
//! report, 3 when an exact search or enumeration exceeds its budget (the
//! rejection cap of the lowering counts as such a budget). Usage and IO
//! errors exit 1.

use auctionlab::distributions::DistError;
use auctionlab::experiments::{
    experiment_distinguish, experiment_embed, experiment_gap, experiment_mi, family_stack,
    sample_any, version_string, DistinguishReport, ExperimentError, GapReport, MiReport,
};
use auctionlab::family::{generate_family, verify_family, FamilyDoc, IntersectingFamily};
use auctionlab::infotools::InfoError;
use auctionlab::model::{derive_params, Instance, InstanceDoc, Params, FORMAT_VERSION};
use auctionlab::protocols::{parse_protocol, RegistryCtx};
use auctionlab::reduction::{embed_with, ReductionError};
use auctionlab::simulator::{run, RefereeError, SimError, Transcript};
use auctionlab::welfare::{sw_bruteforce, sw_clause_union, Budget, WelfareError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "auctionlab", version, about = "Hard-instance toolkit for blackboard auction protocols")]
struct Cli {
    /// Root seed; every stream any subcommand uses is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// State cap for exact searches and enumerations.
    #[arg(long, global = true, default_value_t = 50_000_000)]
    budget: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Single report object.
    Json,
    /// Trial table; experiment subcommands only.
    Csv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Bounded-intersection set families.
    Family {
        #[command(subcommand)]
        cmd: FamilyCmd,
    },
    /// Sample an instance together with its hidden ground truth.
    Gen(GenArgs),
    /// Solve an instance exactly.
    Welfare {
        /// Instance JSON (bare or with ground truth attached).
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = Oracle::Union)]
        oracle: Oracle,
    },
    /// Run a protocol on an instance and print the transcript.
    Run(RunArgs),
    /// Exact information audit of the one-bit battery.
    MiReport {
        #[arg(long, default_value_t = 2)]
        k: u32,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = 2)]
        p: usize,
    },
    /// Lower a multi-round protocol onto an instance one level down.
    Embed(EmbedArgs),
    /// Named multi-trial experiments.
    Experiment {
        #[command(subcommand)]
        cmd: ExpCmd,
    },
}

#[derive(Subcommand)]
enum FamilyCmd {
    /// Generate a family with the given shape and write it as JSON.
    Gen {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        l: usize,
    },
    /// Re-verify a serialized family.
    Check {
        /// Family JSON produced by `family gen`.
        file: PathBuf,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1)]
    r: u32,
    #[arg(long, default_value_t = 3)]
    k: u32,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    /// Family width override; derived from (k, eps) when omitted.
    #[arg(long)]
    p: Option<usize>,
    /// Pin the innermost direction bit instead of flipping a fair coin.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    force_theta: Option<u8>,
}

#[derive(Args)]
struct RunArgs {
    /// Protocol name, e.g. full-rev, const0, sketch:2, theta:full-rev.
    #[arg(long)]
    protocol: String,
    #[arg(long)]
    instance: PathBuf,
    /// Base size for threshold protocols; inferred from the instance shape
    /// when omitted.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    /// Family width for indicator protocols; derived when omitted.
    #[arg(long)]
    p: Option<usize>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    protocol: String,
    /// The instance one level below the protocol's round count.
    #[arg(long)]
    lower_instance: PathBuf,
    /// Candidates tried per player before giving up.
    #[arg(long, default_value_t = 4096)]
    cap: u64,
    #[arg(long, default_value_t = 2)]
    k: u32,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    /// Family width override; derived from (k, eps) when omitted.
    #[arg(long)]
    p: Option<usize>,
    /// Seed the family stack separately; defaults to the global seed, which
    /// matches what `gen` used if the lower instance came from the same
    /// seed.
    #[arg(long)]
    family_seed: Option<u64>,
}

#[derive(Subcommand)]
enum ExpCmd {
    /// Welfare dichotomy over forced draws of both regimes.
    Gap {
        #[arg(long, default_value_t = 1)]
        r: u32,
        #[arg(long, default_value_t = 3)]
        k: u32,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long)]
        p: Option<usize>,
        /// Trials per regime.
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Error rate of a threshold-wrapped protocol against the hidden bit.
    Distinguish {
        #[arg(long)]
        protocol: String,
        #[arg(long, default_value_t = 1)]
        r: u32,
        #[arg(long, default_value_t = 3)]
        k: u32,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// One-bit battery information audit.
    Mi {
        #[arg(long, default_value_t = 2)]
        k: u32,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = 2)]
        p: usize,
    },
    /// Output-law agreement between direct runs and lowered runs.
    Embed {
        #[arg(long, default_value_t = 2)]
        k: u32,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = 2)]
        p: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 4096)]
        cap: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Oracle {
    /// Branch and bound over clause choices.
    Union,
    /// Enumerate every assignment of used items.
    Brute,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Run(#[from] ExperimentError),
}

impl From<std::fmt::Error> for CliError {
    fn from(e: std::fmt::Error) -> Self {
        CliError::Usage(format!("formatting failed: {e}"))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Run(e) if is_budget(e) => 3,
            _ => 1,
        }
    }
}

fn is_budget(e: &ExperimentError) -> bool {
    match e {
        ExperimentError::Welfare(WelfareError::BudgetExceeded { .. }) => true,
        ExperimentError::Info(InfoError::Budget { .. }) => true,
        ExperimentError::Reduction(
            ReductionError::Budget { .. } | ReductionError::RejectionCapExceeded { .. },
        ) => true,
        ExperimentError::Sim(SimError::Referee(RefereeError::Budget(_))) => true,
        ExperimentError::Dist(DistError::BlockAccounting { .. }) => false,
        _ => false,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, CliError> {
    let budget = Budget::new(u128::from(cli.budget));
    match &cli.cmd {
        Cmd::Family { cmd } => family_cmd(cli, cmd),
        Cmd::Gen(args) => gen_cmd(cli, args),
        Cmd::Welfare { instance, oracle } => welfare_cmd(cli, instance, *oracle, budget),
        Cmd::Run(args) => run_cmd(cli, args, budget),
        Cmd::MiReport { k, eps, p } => {
            let rep = experiment_mi(*k, *eps, *p, cli.seed, budget)?;
            require_json(cli)?;
            emit(cli, json(&rep)?)?;
            Ok(if rep.all_ok { 0 } else { 2 })
        }
        Cmd::Embed(args) => embed_cmd(cli, args, budget),
        Cmd::Experiment { cmd } => experiment_cmd(cli, cmd, budget),
    }
}

fn family_cmd(cli: &Cli, cmd: &FamilyCmd) -> Result<u8, CliError> {
    require_json(cli)?;
    match cmd {
        FamilyCmd::Gen { p, q, t, l } => {
            let params = Params {
                r: 1,
                k: 2,
                eps: 0.5,
                p: *p,
                q: *q,
                t: *t,
                l: *l,
                seed: cli.seed,
            };
            let fam = generate_family(&params, cli.seed, 5000)
                .map_err(|e| CliError::Run(ExperimentError::Family(e)))?;
            let doc = FamilyDoc { format_version: FORMAT_VERSION, family: fam };
            emit(cli, json(&doc)?)?;
            Ok(0)
        }
        FamilyCmd::Check { file } => {
            let fam: IntersectingFamily = match read_json::<FamilyDoc>(file) {
                Ok(doc) => doc.family,
                Err(_) => read_json(file)?,
            };
            let report = verify_family(&fam);
            let ok = report.ok;
            emit(cli, json(&report)?)?;
            Ok(if ok { 0 } else { 2 })
        }
    }
}

fn gen_cmd(cli: &Cli, args: &GenArgs) -> Result<u8, CliError> {
    require_json(cli)?;
    let p = effective_p(args.r, args.k, args.eps, args.p)?;
    let families = family_stack(args.r, args.k, args.eps, p, cli.seed)?;
    let (instance, ground_truth) =
        sample_any(args.r, args.k, args.eps, &families, cli.seed, args.force_theta)
            .map_err(ExperimentError::from)?;
    emit(cli, json(&InstanceDoc::new(instance, ground_truth))?)?;
    Ok(0)
}

#[derive(Serialize)]
struct WelfareOut {
    format_version: u32,
    version: String,
    oracle: &'static str,
    value: u64,
    witness: auctionlab::model::Allocation,
    witness_clauses: Vec<Option<usize>>,
    nodes_expanded: u64,
}

fn welfare_cmd(
    cli: &Cli,
    path: &PathBuf,
    oracle: Oracle,
    budget: Budget,
) -> Result<u8, CliError> {
    require_json(cli)?;
    let inst = read_instance(path)?;
    let (name, res) = match oracle {
        Oracle::Union => ("union", sw_clause_union(&inst, budget)),
        Oracle::Brute => ("brute", sw_bruteforce(&inst, budget)),
    };
    let res = res.map_err(ExperimentError::from)?;
    let out = WelfareOut {
        format_version: FORMAT_VERSION,
        version: version_string(),
        oracle: name,
        value: res.value,
        witness: res.witness_allocation,
        witness_clauses: res.witness_clauses,
        nodes_expanded: res.nodes,
    };
    emit(cli, json(&out)?)?;
    Ok(0)
}

#[derive(Serialize)]
struct RunOut {
    format_version: u32,
    version: String,
    protocol: String,
    seed: u64,
    transcript: Transcript,
}

fn run_cmd(cli: &Cli, args: &RunArgs, budget: Budget) -> Result<u8, CliError> {
    require_json(cli)?;
    let inst = read_instance(&args.instance)?;
    let k = match args.k {
        Some(k) => k,
        None => infer_k(&inst)?,
    };
    let p = effective_p(inst.level, k, args.eps, args.p)?;
    let ctx = RegistryCtx { p, r: inst.level, k, eps: args.eps, budget };
    let pi = parse_protocol(&args.protocol, &ctx)
        .map_err(|e| CliError::Run(ExperimentError::Proto(e)))?;
    let transcript = run(pi.as_ref(), &inst, cli.seed).map_err(ExperimentError::from)?;
    let out = RunOut {
        format_version: FORMAT_VERSION,
        version: version_string(),
        protocol: pi.name(),
        seed: cli.seed,
        transcript,
    };
    emit(cli, json(&out)?)?;
    Ok(0)
}

#[derive(Serialize)]
struct EmbedOut {
    format_version: u32,
    version: String,
    protocol: String,
    seed: u64,
    j_star: usize,
    transcript: Transcript,
    attempts: Vec<u64>,
    acceptance_rate: f64,
}

fn embed_cmd(cli: &Cli, args: &EmbedArgs, budget: Budget) -> Result<u8, CliError> {
    require_json(cli)?;
    let lower = read_instance(&args.lower_instance)?;
    let r = lower.level + 1;
    let p = effective_p(r, args.k, args.eps, args.p)?;
    let families = family_stack(r, args.k, args.eps, p, args.family_seed.unwrap_or(cli.seed))?;
    let ctx = RegistryCtx { p, r, k: args.k, eps: args.eps, budget };
    let pi = parse_protocol(&args.protocol, &ctx)
        .map_err(|e| CliError::Run(ExperimentError::Proto(e)))?;
    let res = embed_with(pi.as_ref(), &lower, args.k, args.eps, &families, cli.seed, args.cap)
        .map_err(ExperimentError::from)?;
    let out = EmbedOut {
        format_version: FORMAT_VERSION,
        version: version_string(),
        protocol: pi.name(),
        seed: cli.seed,
        j_star: res.j_star,
        transcript: res.transcript,
        attempts: res.attempts,
        acceptance_rate: res.acceptance_rate,
    };
    emit(cli, json(&out)?)?;
    Ok(0)
}

fn experiment_cmd(cli: &Cli, cmd: &ExpCmd, budget: Budget) -> Result<u8, CliError> {
    match cmd {
        ExpCmd::Gap { r, k, eps, p, trials } => {
            let p = effective_p(*r, *k, *eps, *p)?;
            let rep = experiment_gap(*r, *k, *eps, p, *trials, cli.seed, budget)?;
            let text = match cli.format {
                Format::Json => json(&rep)?,
                Format::Csv => gap_csv(&rep)?,
            };
            emit(cli, text)?;
            Ok(if gap_invariant_violated(&rep) { 2 } else { 0 })
        }
        ExpCmd::Distinguish { protocol, r, k, eps, p, trials } => {
            let p = effective_p(*r, *k, *eps, *p)?;
            let rep =
                experiment_distinguish(protocol, *r, *k, *eps, p, *trials, cli.seed, budget)?;
            let text = match cli.format {
                Format::Json => json(&rep)?,
                Format::Csv => distinguish_csv(&rep)?,
            };
            emit(cli, text)?;
            Ok(0)
        }
        ExpCmd::Mi { k, eps, p } => {
            let rep = experiment_mi(*k, *eps, *p, cli.seed, budget)?;
            let text = match cli.format {
                Format::Json => json(&rep)?,
                Format::Csv => mi_csv(&rep)?,
            };
            emit(cli, text)?;
            Ok(if rep.all_ok { 0 } else { 2 })
        }
        ExpCmd::Embed { k, eps, p, trials, cap } => {
            let rep = experiment_embed(*k, *eps, *p, *trials, cli.seed, *cap)?;
            require_json(cli)?;
            emit(cli, json(&rep)?)?;
            Ok(if rep.ok { 0 } else { 2 })
        }
    }
}

/// The planted regime must clear its bound always; the scattered regime is
/// exact only at depth 1, and deeper misses are data, not violations.
fn gap_invariant_violated(rep: &GapReport) -> bool {
    rep.rows
        .iter()
        .any(|row| !row.pass && (row.theta_star == 1 || rep.config.r == 1))
}

fn effective_p(r: u32, k: u32, eps: f64, p: Option<usize>) -> Result<usize, CliError> {
    match p {
        Some(p) if p >= 2 => Ok(p),
        Some(p) => Err(CliError::Usage(format!("p must be at least 2, got {p}"))),
        None => Ok(derive_params(r, k, eps)
            .map_err(|e| CliError::Run(ExperimentError::Model(e)))?
            .p),
    }
}

fn infer_k(inst: &Instance) -> Result<u32, CliError> {
    let exp = 2 * inst.level;
    for k in 2u32.. {
        let nk = (k as u64).checked_pow(exp).unwrap_or(u64::MAX);
        if nk as usize == inst.n {
            return Ok(k);
        }
        if nk as usize > inst.n {
            break;
        }
    }
    Err(CliError::Usage(format!(
        "cannot infer base size from {} players at level {}; pass --k",
        inst.n, inst.level
    )))
}

fn require_json(cli: &Cli) -> Result<(), CliError> {
    if cli.format == Format::Csv {
        return Err(CliError::Usage(
            "csv output is for experiment trial tables; this subcommand emits a single object"
                .into(),
        ));
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|err| CliError::Io { path: path.display().to_string(), err })?;
    Ok(serde_json::from_str(&text)?)
}

fn read_instance(path: &PathBuf) -> Result<Instance, CliError> {
    match read_json::<InstanceDoc>(path) {
        Ok(doc) => Ok(doc.instance),
        Err(CliError::Io { path, err }) => Err(CliError::Io { path, err }),
        Err(_) => read_json::<Instance>(path),
    }
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn gap_csv(rep: &GapReport) -> Result<String, CliError> {
    let mut out = String::from("trial,trial_seed,theta_star,sw,bound_high,bound_low,pass\n");
    for row in &rep.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.trial, row.trial_seed, row.theta_star, row.sw, row.bound_high, row.bound_low,
            row.pass
        )?;
    }
    Ok(out)
}

fn distinguish_csv(rep: &DistinguishReport) -> Result<String, CliError> {
    let mut out =
        String::from("trial,trial_seed,theta_star,guess,correct,realized_bits,worst_case_bits\n");
    for row in &rep.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.trial, row.trial_seed, row.theta_star, row.guess, row.correct,
            row.realized_bits, row.worst_case_bits
        )?;
    }
    Ok(out)
}

fn mi_csv(rep: &MiReport) -> Result<String, CliError> {
    let mut out = String::from("protocol,i_total,sum_players,subadditive_ok,ok\n");
    for r in &rep.reports {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.protocol, r.i_total, r.sum_players, r.subadditive_ok, r.ok
        )?;
    }
    Ok(out)
}

fn emit(cli: &Cli, text: String) -> Result<(), CliError> {
    match &cli.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|err| CliError::Io { path: path.display().to_string(), err }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
