//! Command-line entry point. `run` returns the process exit code so it can
//! be driven from tests.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::auction::run_auction;
use crate::error::{Error, Result};
use crate::io::{self, Format};
use crate::oracle::{verify, VerifyConfig};
use crate::profiles::{default_catalog_params, synth_profile, ProfileCatalog};
use crate::simulator::{streams, Market, MarketConfig, Mechanism};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "aeria",
    version,
    about = "Edge inference market simulator and auction"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Root seed; overrides AERIA_SEED and the config file.
    #[arg(long, global = true, env = "AERIA_SEED")]
    seed: Option<u64>,
    /// Market config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file, or directory for gen-traces. Stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restrict to these mechanisms (repeatable).
    #[arg(long, global = true, value_parser = parse_mechanism)]
    mechanism: Vec<Mechanism>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

fn parse_mechanism(s: &str) -> std::result::Result<Mechanism, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the slotted market and write a report.
    Simulate,
    /// Price one slot from a demands file.
    Auction {
        #[arg(long)]
        demands: PathBuf,
    },
    /// Run the oracle suite.
    Verify {
        #[arg(long, default_value_t = 1_000)]
        instances: usize,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
    },
    /// Write the default profile catalog.
    GenProfiles,
    /// Write synthetic electricity, bidder and rate traces.
    GenTraces {
        #[arg(long)]
        slots: Option<usize>,
    },
}

enum Failure {
    Usage(String),
    Data(Error),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
        Err(Failure::Verify(m)) => {
            eprintln!("verification failed: {m}");
            EXIT_VERIFY
        }
    }
}

fn load_config(global: &Global) -> Result<MarketConfig> {
    let mut cfg = match &global.config {
        Some(p) => io::load_config(p)?,
        None => MarketConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if !global.mechanism.is_empty() {
        cfg.mechanisms = global.mechanism.clone();
    }
    Ok(cfg)
}

fn write_out(out: Option<&Path>, body: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, body).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .lock()
            .write_all(body)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: "<output>".into(),
        source,
    })?;
    v.push(b'\n');
    Ok(v)
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Simulate => {
            let cfg = load_config(g)?;
            let catalog = match &cfg.profiles {
                Some(p) => ProfileCatalog::load(p)?,
                None => ProfileCatalog::builtin(),
            };
            let traces = io::load_traces(&cfg.traces)?;
            let report = Market::new(cfg, catalog, traces)?.run()?;
            io::emit_report(&report, g.format, g.out.as_deref())?;
        }
        Command::Auction { demands } => {
            if g.mechanism.iter().any(|&m| m != Mechanism::Aeria) {
                return Err(Failure::Usage(
                    "the auction subcommand only prices demands with aeria".into(),
                ));
            }
            let file = io::load_demands(&demands)?;
            let d = file.to_demands()?;
            let seed = match g.seed {
                Some(s) => s,
                None => g
                    .config
                    .as_deref()
                    .map(io::load_config)
                    .transpose()?
                    .map_or(0, |c| c.seed),
            };
            let mut rng = streams::stream(seed, 16, 0);
            let run = run_auction(&d, &file.params(), &mut rng)?;
            let body = match g.format {
                Format::Json => to_json(&run)?,
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_record([
                        "user_id",
                        "winner",
                        "allocation",
                        "partition",
                        "payment",
                        "latency",
                    ])
                    .map_err(Error::from)?;
                    for a in &run.outcome.allocations {
                        w.write_record([
                            a.user_id.to_string(),
                            run.outcome.winners.contains(&a.user_id).to_string(),
                            io::sig12(a.allocation),
                            a.partition.map(|s| s.to_string()).unwrap_or_default(),
                            io::sig12(a.payment),
                            a.latency.map(io::sig12).unwrap_or_default(),
                        ])
                        .map_err(Error::from)?;
                    }
                    w.into_inner()
                        .map_err(|e| Error::io("<output>", e.into_error()))?
                }
            };
            write_out(g.out.as_deref(), &body)?;
        }
        Command::Verify { instances, draws } => {
            let seed = g.seed.unwrap_or(0);
            let report = verify(seed, VerifyConfig { instances, draws })?;
            write_out(g.out.as_deref(), &to_json(&report)?)?;
            if !report.passed() {
                let failed: Vec<_> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name.as_str())
                    .collect();
                return Err(Failure::Verify(failed.join(", ")));
            }
        }
        Command::GenProfiles => {
            let profiles = default_catalog_params()
                .iter()
                .map(synth_profile)
                .collect::<Result<Vec<_>>>()?;
            write_out(g.out.as_deref(), &to_json(&ProfileCatalog::new(profiles)?)?)?;
        }
        Command::GenTraces { slots } => {
            let cfg = load_config(g)?;
            let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("traces"));
            let bundle = io::synth_traces(
                slots.unwrap_or(cfg.slots),
                cfg.slot_hours,
                cfg.electricity_price,
                cfg.seed,
            );
            let paths = io::write_traces(&bundle, &dir)?;
            write_out(None, &to_json(&paths)?)?;
        }
    }
    Ok(())
}
