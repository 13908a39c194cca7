use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use v2g_core::consensus::{verify_ledger_bytes, LedgerVerdict};
use v2g_core::report::{report_overheads, summary_table, MetricsReport};
use v2g_core::scenario::{CurveChoice, Scenario};
use v2g_core::simnet::run_scenario;

/// Runs V2G authentication, consensus and attack scenarios.
#[derive(Parser, Debug)]
#[command(name = "v2gsim", version, subcommand_negates_reqs = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Scenario file (TOML).
    #[arg(long, required = true)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// toy or production.
    #[arg(long)]
    curve: Option<CurveChoice>,
    /// Output directory for metrics.txt, trace.log and ledger.bin.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    window_ms: Option<u64>,
    #[arg(long)]
    speaker_term: Option<u64>,
    #[arg(long)]
    block_interval_ms: Option<u64>,
    /// Use `((h mod m) mod n) + 1` for the speaker index.
    #[arg(long)]
    literal_speaker_formula: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recomputes every block hash and chain link of a ledger file.
    VerifyLedger { path: PathBuf },
}

/// Configuration and parse problems exit with 2, failed expectations with 1.
enum Failure {
    Config(anyhow::Error),
    Assertion,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Some(Command::VerifyLedger { path }) => verify(path),
        None => run(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(cli: &Cli) -> Result<Scenario> {
    let path = cli.scenario.as_ref().context("--scenario is required")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut sc = Scenario::parse(&text).with_context(|| path.display().to_string())?;
    if let Some(seed) = cli.seed {
        sc.seed = seed;
    }
    if let Some(curve) = cli.curve {
        sc.curve = curve;
    }
    if let Some(w) = cli.window_ms {
        sc.window_ms = w;
    }
    let consensus_flags = cli.speaker_term.is_some() || cli.block_interval_ms.is_some() || cli.literal_speaker_formula;
    match &mut sc.consensus {
        Some(c) => {
            if let Some(m) = cli.speaker_term {
                c.config.speaker_term = m;
            }
            if let Some(t) = cli.block_interval_ms {
                c.config.block_interval_ms = t;
            }
            c.config.literal_speaker_formula |= cli.literal_speaker_formula;
        }
        None if consensus_flags => bail!("consensus flags given but the scenario has no [consensus] section"),
        None => {}
    }
    sc.validate().with_context(|| format!("{} after overrides", path.display()))?;
    Ok(sc)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let sc = load(cli)?;
    let outcome = run_scenario(&sc).context("running scenario")?;
    let report = MetricsReport::from_outcome(&outcome, &sc.expect);

    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    write(&cli.out.join("metrics.txt"), report.to_records().as_bytes())?;
    write(&cli.out.join("trace.log"), outcome.trace_text().as_bytes())?;
    write(&cli.out.join("ledger.bin"), &outcome.ledger_bytes())?;

    print!("{}", summary_table(&report));
    print!("{}", report_overheads(&report));
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn verify(path: &Path) -> Result<(), Failure> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    match verify_ledger_bytes(&bytes) {
        LedgerVerdict::Ok { blocks } => {
            println!("OK: {blocks} blocks");
            Ok(())
        }
        LedgerVerdict::Divergence { height, error } => {
            println!("DIVERGENCE at height {height}: {error}");
            Err(Failure::Assertion)
        }
    }
}
