//! Command-line front end: solves the time-switching MDP, reproduces the
//! built-in policy-comparison tables, renders optimal-decision grids, and
//! runs the invariant verification suites.
//!
//! Exit codes: 0 success, 1 verification failure or runtime error, 2 usage
//! error.

mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use commands::{ConfigInput, Format, Suite, TableKind, UsageError};
use std::path::PathBuf;
use std::process::ExitCode;
use swipt_harq::solver::TieBreak;

#[derive(Parser)]
#[command(
    name = "swipt-harq",
    version,
    about = "Expected-retransmission analysis for HARQ-IR links with an RF-energy-harvesting receiver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigFlags {
    /// Probability of the GOOD channel state, in (0, 1]
    #[arg(long)]
    lambda: Option<f64>,
    /// GOOD-state rate in bits per slot (also the message rate)
    #[arg(long)]
    r1: Option<f64>,
    /// BAD-state rate in bits per slot, 0 < r2 <= r1
    #[arg(long)]
    r2: Option<f64>,
    /// Energy units harvested per GOOD slot
    #[arg(long)]
    e: Option<u32>,
    /// Battery units required for a decoding attempt
    #[arg(long)]
    ed: Option<u32>,
    /// Battery capacity (default: ed + 4*e)
    #[arg(long)]
    bmax: Option<u32>,
    /// Plain-text key=value parameter file; command-line flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigFlags {
    fn input(&self) -> ConfigInput {
        ConfigInput {
            lambda: self.lambda,
            r1: self.r1,
            r2: self.r2,
            e: self.e,
            ed: self.ed,
            bmax: self.bmax,
            file: self.config.clone(),
        }
    }
}

#[derive(Args)]
struct OutputFlags {
    /// Output format for the result body
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Write the body to this file (with a .manifest.json sidecar) instead
    /// of stdout; relative paths honor $SWIPT_HARQ_OUT
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TieBreakArg {
    /// Resolve ties toward harvesting
    PreferEh,
    /// Resolve ties toward decoding
    PreferId,
    /// Keep ties visible as their own cell kind
    Mark,
}

impl From<TieBreakArg> for TieBreak {
    fn from(t: TieBreakArg) -> TieBreak {
        match t {
            TieBreakArg::PreferEh => TieBreak::PreferHarvest,
            TieBreakArg::PreferId => TieBreak::PreferDecode,
            TieBreakArg::Mark => TieBreak::MarkTie,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    /// Closed-form check of the complete-information battery column
    Fullinfo,
    /// Value monotone in battery and information
    Monotone,
    /// One-step split deviations vs pure decodes
    Deviation,
    /// Battery-capacity truncation invariance
    Bmax,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Suite {
        match s {
            SuiteArg::Fullinfo => Suite::FullInfo,
            SuiteArg::Monotone => Suite::Monotone,
            SuiteArg::Deviation => Suite::Deviation,
            SuiteArg::Bmax => Suite::Bmax,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the minimum expected number of re-transmissions and write
    /// the per-state value table
    Solve {
        #[command(flatten)]
        config: ConfigFlags,
        /// Convergence tolerance (sup-norm residual)
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        /// Action values within this distance count as a tie
        #[arg(long = "tie-tol", default_value_t = 1e-9)]
        tie_tol: f64,
        #[command(flatten)]
        output: OutputFlags,
    },
    /// Policy comparison vs the BAD-state rate r2 (lambda=0.5, r1=10, e=1,
    /// ed=5; columns r2=1..5)
    Table1 {
        /// Monte Carlo episodes per heuristic cell
        #[arg(long, default_value_t = 10_000_000)]
        episodes: u64,
        #[arg(long, default_value_t = 1729)]
        seed: u64,
        #[command(flatten)]
        output: OutputFlags,
    },
    /// Policy comparison vs the GOOD-state probability lambda (r1=10, r2=5,
    /// e=2, ed=5; columns lambda=0.1..0.5)
    Table2 {
        /// Monte Carlo episodes per heuristic cell
        #[arg(long, default_value_t = 10_000_000)]
        episodes: u64,
        #[arg(long, default_value_t = 1729)]
        seed: u64,
        #[command(flatten)]
        output: OutputFlags,
    },
    /// Emit the optimal-decision grid (ABSORB / EH / ID / TIE per state)
    PolicyGrid {
        #[command(flatten)]
        config: ConfigFlags,
        #[arg(long = "tie-break", value_enum, default_value_t = TieBreakArg::Mark)]
        tie_break: TieBreakArg,
        #[command(flatten)]
        output: OutputFlags,
    },
    /// Run a built-in invariant suite; exits 1 if it fails
    Verify {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        /// Rollouts per arm (deviation suite only)
        #[arg(long, default_value_t = 1_000_000)]
        rollouts: u64,
        #[arg(long, default_value_t = 1729)]
        seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Solve {
            config,
            tol,
            tie_tol,
            output,
        } => commands::cmd_solve(
            &config.input(),
            tol,
            tie_tol,
            output.format.into(),
            &output.out,
        ),
        Command::Table1 {
            episodes,
            seed,
            output,
        } => commands::cmd_table(
            TableKind::RateSweep,
            episodes,
            seed,
            output.format.into(),
            &output.out,
        ),
        Command::Table2 {
            episodes,
            seed,
            output,
        } => commands::cmd_table(
            TableKind::LambdaSweep,
            episodes,
            seed,
            output.format.into(),
            &output.out,
        ),
        Command::PolicyGrid {
            config,
            tie_break,
            output,
        } => commands::cmd_policy_grid(
            &config.input(),
            tie_break.into(),
            output.format.into(),
            &output.out,
        ),
        Command::Verify {
            suite,
            rollouts,
            seed,
        } => commands::cmd_verify(suite.into(), rollouts, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            if err.is::<UsageError>() {
                eprintln!("error: {err}");
                eprintln!("run with --help for usage");
                ExitCode::from(2)
            } else {
                eprintln!("error: {err:#}");
                ExitCode::from(1)
            }
        }
    }
}
