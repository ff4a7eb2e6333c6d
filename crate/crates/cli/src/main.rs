//! `resiot`: key generation, scenario runs, cost tables, queue sweeps and
//! host microbenchmarks.
//!
//! Exit codes: 0 success, 1 a scenario run missed its expected outcome,
//! 2 usage, validation or I/O error.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use resiot_core::abe::{abe_keygen, abe_setup};
use resiot_core::crypto_suite::{rng_from_seed, BilinearSuite};
use resiot_core::group_sig::{gs_enroll, gs_setup};
use resiot_core::harness::{run_scenario, Scenario};
use resiot_core::perf_model::{
    microbench, simulate_queue, Abandonment, ArrivalProcess, CostTable, QueueConfig, TimingTable,
};
use resiot_core::policy::AccessPolicy;

#[derive(Parser)]
#[command(
    name = "resiot",
    version,
    about = "Edge-offloaded IoT security functions: keys, protocol scenarios, cost model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and write key material.
    Keygen {
        #[command(subcommand)]
        kind: KeygenKind,
    },
    /// Run a scenario file and write its report.
    Run(RunArgs),
    /// Emit the computation-cost table.
    CostTable(CostTableArgs),
    /// Sweep the SA queue over arrival rates and expiration times.
    QueueSweep(QueueSweepArgs),
    /// Time the pairing primitives on this host.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum KeygenKind {
    /// Group signature keys: one public key, one issuer key, one key per member.
    Group {
        #[arg(long, default_value_t = 3)]
        members: u32,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// ABE keys: public and master keys, plus one decryption key per policy.
    Abe {
        #[arg(long, default_value_t = 50)]
        universe: u32,
        /// Key policy, e.g. "thresh(2, attr0, attr1, attr2)". Repeatable.
        #[arg(long)]
        policy: Vec<String>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TimingArg {
    /// paper | host | <path to timing TOML>
    #[arg(long)]
    timings: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    timings: TimingArg,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CostTableArgs {
    #[command(flatten)]
    timings: TimingArg,
    /// ABE attribute count.
    #[arg(long, default_value_t = 50)]
    attributes: u32,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AbandonArg {
    WhileQueued,
    AtServiceStart,
    Never,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArrivalArg {
    Poisson,
    Deterministic,
}

#[derive(Args)]
struct QueueSweepArgs {
    /// `c=<values>;texp=<values>`. Values are comma lists or
    /// `start:stop:count`; `texp` is in multiples of the service time
    /// (`inf` disables deadlines), or use `texp_ms` for milliseconds.
    #[arg(long, default_value = "c=0.1:1.0:10;texp=2,5,10")]
    grid: String,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    requests: usize,
    /// SA service time t_SF^SA in ms.
    #[arg(long, default_value_t = 208.5)]
    service_ms: f64,
    #[arg(long, value_enum, default_value = "while-queued")]
    abandonment: AbandonArg,
    #[arg(long, value_enum, default_value = "poisson")]
    arrivals: ArrivalArg,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 15)]
    samples: usize,
    /// ABE attribute count for the derived cost table.
    #[arg(long, default_value_t = 50)]
    attributes: u32,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0} run(s) did not reach their expected outcome")]
    Mismatch(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Mismatch(_) => 1,
            CliError::Usage(_) | CliError::Io { .. } => 2,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn resolve_timings(arg: Option<&str>) -> Result<Option<TimingTable>, CliError> {
    match arg {
        None => Ok(None),
        Some("paper") => Ok(Some(TimingTable::paper())),
        Some("host") => Ok(Some(microbench(9, TimingTable::paper().latency))),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.into(),
                source,
            })?;
            TimingTable::from_toml_str(&text)
                .map(Some)
                .map_err(|e| usage(format!("{path}: {e}")))
        }
    }
}

fn cmd_keygen(kind: KeygenKind) -> Result<(), CliError> {
    match kind {
        KeygenKind::Group { members, seed, out } => {
            if members == 0 {
                return Err(usage("--members must be at least 1"));
            }
            let mut rng = rng_from_seed(seed);
            let (gpk, mut issuer) = gs_setup(&BilinearSuite, &mut rng);
            let mut keys = Vec::new();
            for index in 1..=members {
                keys.push(gs_enroll(&mut issuer, index, &mut rng).map_err(usage)?);
            }
            write_file(&out, "group.pub", &gpk.to_bytes())?;
            write_file(&out, "group.issuer", &issuer.to_bytes())?;
            for k in &keys {
                write_file(&out, &format!("member-{}.key", k.index), &k.to_bytes())?;
            }
            println!(
                "wrote group.pub, group.issuer and {members} member keys to {}",
                out.display()
            );
        }
        KeygenKind::Abe {
            universe,
            policy,
            seed,
            out,
        } => {
            let policies = policy
                .iter()
                .map(|p| {
                    let parsed =
                        AccessPolicy::parse(p).map_err(|e| usage(format!("policy {p:?}: {e}")))?;
                    parsed
                        .validate_universe(universe)
                        .map_err(|e| usage(format!("policy {p:?}: {e}")))?;
                    Ok(parsed)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let mut rng = rng_from_seed(seed);
            let (pk, msk) = abe_setup(&BilinearSuite, universe, &mut rng).map_err(usage)?;
            let keys = policies
                .iter()
                .map(|p| abe_keygen(&msk, p, &mut rng))
                .collect::<Result<Vec<_>, _>>()
                .map_err(usage)?;
            write_file(&out, "abe.pub", &pk.to_bytes())?;
            write_file(&out, "abe.master", &msk.to_bytes())?;
            for (i, k) in keys.iter().enumerate() {
                write_file(&out, &format!("abe-key-{i}.key"), &k.to_bytes())?;
            }
            println!(
                "wrote abe.pub, abe.master ({universe} attributes) and {} decryption keys to {}",
                keys.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let mut scenario = Scenario::load(&args.scenario).map_err(|e| {
        if e.path == args.scenario.display().to_string() {
            CliError::Io {
                path: args.scenario.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, e.message),
            }
        } else {
            usage(format!("{}: {e}", args.scenario.display()))
        }
    })?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    scenario.timing_override = resolve_timings(args.timings.timings.as_deref())?;
    let report =
        run_scenario(&scenario).map_err(|e| usage(format!("{}: {e}", args.scenario.display())))?;
    let name = if report.name.is_empty() {
        "scenario"
    } else {
        &report.name
    };
    write_file(
        &args.out,
        &format!("{name}.report.json"),
        report.to_json().as_bytes(),
    )?;
    write_file(
        &args.out,
        &format!("{name}.summary.csv"),
        report.to_csv().as_bytes(),
    )?;
    for r in &report.runs {
        let step = r
            .outcome
            .step()
            .map(|s| format!(" at step {s}"))
            .unwrap_or_default();
        let reason = r
            .outcome
            .reason()
            .map(|s| format!(" ({s})"))
            .unwrap_or_default();
        println!(
            "run {} {} {} -> {}: {}{step}{reason}, {:.3} ms{}",
            r.index,
            r.protocol.name(),
            r.initiator,
            r.responder,
            r.outcome.label(),
            r.elapsed_ms,
            if r.matched { "" } else { "  [UNEXPECTED]" }
        );
    }
    let missed = report.runs.iter().filter(|r| !r.matched).count();
    if missed > 0 {
        return Err(CliError::Mismatch(missed));
    }
    Ok(())
}

fn cmd_cost_table(args: CostTableArgs) -> Result<(), CliError> {
    let table =
        resolve_timings(args.timings.timings.as_deref())?.unwrap_or_else(TimingTable::paper);
    let cost = CostTable::build(&table, args.attributes).map_err(usage)?;
    write_file(&args.out, "cost_table.csv", cost.to_csv().as_bytes())?;
    let text = cost.render();
    write_file(&args.out, "cost_table.txt", text.as_bytes())?;
    print!("{text}");
    Ok(())
}

/// Parses `1,2,3`, `0.1:1.0:10` (inclusive, `count` points) or `inf`.
fn parse_values(key: &str, text: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| usage(format!("grid {key}={text}: {why}"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let start: f64 = parts[0].trim().parse().map_err(|_| bad("bad start"))?;
        let stop: f64 = parts[1].trim().parse().map_err(|_| bad("bad stop"))?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad("bad count"))?;
        if count == 0 {
            return Err(bad("count must be positive"));
        }
        if count == 1 {
            return Ok(vec![start]);
        }
        let step = (stop - start) / (count - 1) as f64;
        // Rounded so that 0.1:1.0:10 yields 0.3 rather than 0.30000000000000004.
        return Ok((0..count)
            .map(|i| ((start + step * i as f64) * 1e9).round() / 1e9)
            .collect());
    }
    if parts.len() != 1 {
        return Err(bad("expected a list or start:stop:count"));
    }
    text.split(',')
        .map(|v| match v.trim() {
            "inf" => Ok(f64::INFINITY),
            v => v
                .parse::<f64>()
                .map_err(|_| bad(&format!("bad value {v:?}"))),
        })
        .collect()
}

struct Grid {
    c: Vec<f64>,
    /// Expiration times in ms.
    texp_ms: Vec<f64>,
}

fn parse_grid(spec: &str, service_ms: f64) -> Result<Grid, CliError> {
    let mut c = None;
    let mut texp_ms = None;
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("grid entry {part:?} is not key=values")))?;
        let key = key.trim();
        let vals = parse_values(key, values.trim())?;
        match key {
            "c" => c = Some(vals),
            "texp" => texp_ms = Some(vals.into_iter().map(|f| f * service_ms).collect()),
            "texp_ms" => texp_ms = Some(vals),
            other => {
                return Err(usage(format!(
                    "unknown grid key {other:?} (c, texp, texp_ms)"
                )))
            }
        }
    }
    let c = c.ok_or_else(|| usage("grid needs c=..."))?;
    let texp_ms = texp_ms.ok_or_else(|| usage("grid needs texp=... or texp_ms=..."))?;
    if let Some(bad) = c.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(usage(format!("grid c value {bad} outside (0, 1]")));
    }
    if let Some(bad) = texp_ms.iter().find(|v| !(**v > 0.0)) {
        return Err(usage(format!("grid expiration {bad} must be positive")));
    }
    Ok(Grid { c, texp_ms })
}

fn cmd_queue_sweep(args: QueueSweepArgs) -> Result<(), CliError> {
    let grid = parse_grid(&args.grid, args.service_ms)?;
    let mut csv = String::from("c_k,t_exp,success_rate,mean_wait_ms,mean_total_ms\n");
    for &c in &grid.c {
        for &texp in &grid.texp_ms {
            let mut cfg = QueueConfig::new(c, args.service_ms, texp, args.requests, args.seed);
            cfg.abandonment = match args.abandonment {
                AbandonArg::WhileQueued => Abandonment::WhileQueued,
                AbandonArg::AtServiceStart => Abandonment::AtServiceStart,
                AbandonArg::Never => Abandonment::Never,
            };
            cfg.arrivals = match args.arrivals {
                ArrivalArg::Poisson => ArrivalProcess::Poisson,
                ArrivalArg::Deterministic => ArrivalProcess::Deterministic,
            };
            let r = simulate_queue(&cfg).map_err(usage)?;
            writeln!(
                csv,
                "{c},{texp},{:.6},{:.6},{:.6}",
                r.success_rate, r.mean_wait_ms, r.mean_total_ms
            )
            .expect("string write");
        }
    }
    let path = write_file(&args.out, "queue_sweep.csv", csv.as_bytes())?;
    print!("{csv}");
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let table = microbench(args.samples, TimingTable::paper().latency);
    write_file(
        &args.out,
        "host_timings.toml",
        table.to_toml_string().as_bytes(),
    )?;
    let cost = CostTable::build(&table, args.attributes).map_err(usage)?;
    write_file(&args.out, "host_cost_table.csv", cost.to_csv().as_bytes())?;
    print!("{}", table.to_toml_string());
    println!();
    print!("{}", cost.render());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Keygen { kind } => cmd_keygen(kind),
        Command::Run(a) => cmd_run(a),
        Command::CostTable(a) => cmd_cost_table(a),
        Command::QueueSweep(a) => cmd_queue_sweep(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
