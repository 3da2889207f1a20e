use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cormen::batch::{rows_for, run_batch, write_csv, BatchError};
use cormen::scenario::{load_scenario, SCENARIO_HELP};
use cormen::sim::{run, ProtocolKind, SimConfig};

const CONFIG_ERROR: u8 = 1;
const INVARIANT_VIOLATION: u8 = 2;

#[derive(Parser)]
#[command(version, about = "Simulate coding-aware opportunistic routing against COPE and plain routing", after_help = SCENARIO_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its summary (or write checkpoint rows as CSV).
    Run {
        scenario: PathBuf,
        #[arg(long)]
        protocol: Option<ProtocolKind>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write an event trace to FILE.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Run every *.scn in a directory for each protocol and seed.
    Batch {
        dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "cormen,cope,plain")]
        protocols: Vec<ProtocolKind>,
        /// `a..b` (inclusive), or a comma-separated list.
        #[arg(long, default_value = "1..5", value_parser = parse_seeds)]
        seeds: Seeds,
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Parse and check a scenario without running it.
    Validate { scenario: PathBuf },
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = || format!("expected `a..b` or `a,b,c`, got `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok(Seeds((a..=b).collect()));
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>().map(Seeds)
}

fn open_out(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load(path: &Path) -> Result<SimConfig, ExitCode> {
    load_scenario(path).map_err(|errs| {
        eprintln!("{}:\n{errs}", path.display());
        ExitCode::from(CONFIG_ERROR)
    })
}

fn cmd_run(
    path: &Path,
    protocol: Option<ProtocolKind>,
    seed: Option<u64>,
    trace: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let mut config = match load(path) {
        Ok(c) => c,
        Err(code) => return Ok(code),
    };
    if let Some(p) = protocol {
        config.protocol = p;
    }
    let seed = seed.unwrap_or(config.seed);
    // a scenario with `trace = on` and no explicit file traces next to the CSV
    let trace_path = trace.or_else(|| {
        config.trace.then(|| out.as_deref().unwrap_or(path).with_extension("trace"))
    });
    config.trace = trace_path.is_some();

    let result = run(&config, seed);

    if let Some(tp) = &trace_path {
        let mut w = BufWriter::new(File::create(tp)?);
        for line in &result.trace {
            writeln!(w, "{line}")?;
        }
        w.flush()?;
    }
    if out.is_some() {
        write_csv(open_out(out.as_deref())?, &rows_for(&config, seed, &result))?;
    } else {
        let s = &result.summary;
        let c = &s.counters;
        println!("scenario {} protocol {} seed {seed}", config.name, config.protocol);
        println!("  generated {} delivered {} pdr {:.4}", s.generated, s.delivered, s.pdr);
        println!("  avg delay {:.4} s, avg throughput {:.1} bps", s.avg_delay_s, s.avg_throughput_bps);
        println!(
            "  data frames {} (coded {}, components {}), announce {}, ack {}, probe {}",
            c.tx_data_frames, c.tx_coded_frames, c.coded_components_total, c.tx_announce, c.tx_ack, c.tx_probe
        );
        println!(
            "  duplicates {} decode failures {} drops {}",
            c.duplicate_forwards, c.decode_failures, c.drops
        );
    }
    if result.violations.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &result.violations {
            eprintln!("violation: {v}");
        }
        Ok(ExitCode::from(INVARIANT_VIOLATION))
    }
}

fn cmd_batch(
    dir: &Path,
    protocols: &[ProtocolKind],
    seeds: &[u64],
    out: Option<PathBuf>,
) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        eprintln!("no .scn files in {}", dir.display());
        return Ok(ExitCode::from(CONFIG_ERROR));
    }
    let mut configs = Vec::new();
    let mut failed = false;
    for p in &paths {
        match load(p) {
            Ok(c) => configs.push(c),
            Err(_) => failed = true,
        }
    }
    if failed {
        return Ok(ExitCode::from(CONFIG_ERROR));
    }
    match run_batch(&configs, protocols, seeds) {
        Ok(rows) => {
            write_csv(open_out(out.as_deref())?, &rows)?;
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ BatchError::Violation { .. }) => {
            eprintln!("{e}");
            Ok(ExitCode::from(INVARIANT_VIOLATION))
        }
        Err(e @ BatchError::Invalid { .. }) => {
            eprintln!("{e}");
            Ok(ExitCode::from(CONFIG_ERROR))
        }
        Err(e) => Err(e.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { scenario, protocol, seed, trace, out } => cmd_run(&scenario, protocol, seed, trace, out),
        Command::Batch { dir, protocols, seeds, out } => cmd_batch(&dir, &protocols, &seeds.0, out),
        Command::Validate { scenario } => Ok(match load(&scenario) {
            Ok(c) => {
                println!(
                    "{}: ok ({} nodes, {} flows, {} s, protocol {})",
                    scenario.display(),
                    c.topology.node_count(),
                    c.flows.len(),
                    c.duration_s,
                    c.protocol
                );
                ExitCode::SUCCESS
            }
            Err(code) => code,
        }),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(CONFIG_ERROR)
    })
}
