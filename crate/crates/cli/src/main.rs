//! Command-line front door: run scenarios, compare selection policies
//! across seeds and sweep axes, and replay invariant checks over stored
//! traces.
//!
//! Exit codes: 0 ok, 1 config error, 2 invariant violation, 3 I/O error.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use poasim_core::config::{ScenarioConfig, SelectionPolicy};
use poasim_core::metrics::{self, Comparison, MetricsReport};
use poasim_core::trace::{validate_trace, Trace};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 1;
const EXIT_INVARIANT: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "poasim", version, about = "PoA validator-selection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its trace, report, and chain export.
    Run(RunArgs),
    /// Run both policies across seeds (and optional sweep axes), writing
    /// per-seed reports, an aggregate comparison, and plot-ready tables.
    Compare(CompareArgs),
    /// Replay the invariant checks over a stored trace.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Seed override; defaults to the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Policy override: tbs or wbs.
    #[arg(long)]
    policy: Option<String>,
    /// Output directory; defaults to $POASIM_OUT_DIR or ./out.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Seed range `a..b` (inclusive) or comma-separated list.
    #[arg(long, default_value = "1..10")]
    seeds: String,
    /// Optional validator-count sweep, comma-separated.
    #[arg(long)]
    validators: Option<String>,
    /// Optional dissemination-interval sweep in seconds, comma-separated.
    #[arg(long)]
    intervals: Option<String>,
    /// Optional transaction-size sweep: per-packet digest bytes,
    /// comma-separated.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    trace: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_IO)
        }
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("POASIM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load_scenario(path: &Path) -> Result<Result<ScenarioConfig, String>, anyhow::Error> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    Ok(ScenarioConfig::from_toml_str(&text).map_err(|e| e.to_string()))
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let mut cfg = match load_scenario(&args.scenario)? {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &args.policy {
        match SelectionPolicy::parse(p) {
            Some(p) => cfg.policy = p,
            None => {
                eprintln!("error: policy must be tbs or wbs, got {p}");
                return Ok(ExitCode::from(EXIT_CONFIG));
            }
        }
    }
    let dir = out_dir(args.out);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let output = match poasim_core::run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let stem = format!("{}_{}_{}", cfg.name, cfg.policy, cfg.seed);
    let trace_path = dir.join(format!("{stem}.trace"));
    std::fs::write(&trace_path, output.trace_text())?;
    std::fs::write(dir.join(format!("{stem}.chain")), output.chain_export())?;
    let report = metrics::report(&output.trace).map_err(anyhow::Error::msg)?;
    std::fs::write(
        dir.join(format!("{stem}.report.json")),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "run {}: {} created, {} committed, mean response {}",
        stem,
        report.counts.created,
        report.counts.committed,
        report
            .response_time
            .map_or("n/a".to_string(), |r| format!("{:.4} s", r.mean_s)),
    );
    println!("trace: {}", trace_path.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_seeds(expr: &str) -> anyhow::Result<Vec<u64>> {
    if let Some((a, b)) = expr.split_once("..") {
        let a: u64 = a.trim().parse().context("seed range start")?;
        let b: u64 = b.trim().parse().context("seed range end")?;
        anyhow::ensure!(a <= b, "empty seed range");
        return Ok((a..=b).collect());
    }
    expr.split(',')
        .map(|s| s.trim().parse().context("seed list entry"))
        .collect()
}

fn parse_list<T: std::str::FromStr>(expr: &str, what: &str) -> anyhow::Result<Vec<T>> {
    expr.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("bad {what} entry: {s}"))
        })
        .collect()
}

/// Runs one (config, seed, policy) cell and returns its report.
fn run_cell(
    cfg: &ScenarioConfig,
    seed: u64,
    policy: SelectionPolicy,
) -> anyhow::Result<MetricsReport> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    cfg.policy = policy;
    let output = poasim_core::run(&cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
    metrics::report(&output.trace).map_err(anyhow::Error::msg)
}

fn cmd_compare(args: CompareArgs) -> anyhow::Result<ExitCode> {
    let base = match load_scenario(&args.scenario)? {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let seeds = parse_seeds(&args.seeds)?;
    let dir = out_dir(args.out);
    std::fs::create_dir_all(&dir)?;

    // per-seed comparison at the scenario's own operating point
    let mut rows: Vec<Comparison> = Vec::new();
    for &seed in &seeds {
        let tbs = run_cell(&base, seed, SelectionPolicy::Tbs)?;
        let wbs = run_cell(&base, seed, SelectionPolicy::Wbs)?;
        std::fs::write(
            dir.join(format!("{}_tbs_{seed}.report.json", base.name)),
            serde_json::to_string_pretty(&tbs)?,
        )?;
        std::fs::write(
            dir.join(format!("{}_wbs_{seed}.report.json", base.name)),
            serde_json::to_string_pretty(&wbs)?,
        )?;
        rows.push(metrics::compare(&tbs, &wbs).map_err(anyhow::Error::msg)?);
    }
    let csv = metrics::comparison_csv(&rows);
    std::fs::write(dir.join(format!("{}_comparison.csv", base.name)), &csv)?;
    print!("{csv}");

    // optional grid sweep: validators x intervals x policy
    let validators: Vec<u32> = match &args.validators {
        Some(s) => parse_list(s, "validator count")?,
        None => vec![base.validator_count()],
    };
    let intervals: Vec<f64> = match &args.intervals {
        Some(s) => parse_list(s, "interval")?,
        None => vec![base.wsn.dissemination_interval_s],
    };
    if args.validators.is_some() || args.intervals.is_some() {
        let mut grid = String::from(
            "validators,interval_s,policy,mean_response_s,validator_energy_j,throughput_bps,seeds\n",
        );
        for &v in &validators {
            for &interval in &intervals {
                for policy in [SelectionPolicy::Tbs, SelectionPolicy::Wbs] {
                    let mut cfg = base.clone();
                    cfg.virt.validator_count = Some(v);
                    cfg.virt.validator_ratio = None;
                    cfg.wsn.dissemination_interval_s = interval;
                    // hold the number of dissemination periods constant so
                    // long-interval cells still see a full workload
                    let scale = interval / base.wsn.dissemination_interval_s;
                    cfg.duration_s = base.duration_s * scale.max(1.0);
                    let mut resp = 0.0;
                    let mut energy = 0.0;
                    let mut tput = 0.0;
                    let mut counted = 0usize;
                    for &seed in &seeds {
                        let r = run_cell(&cfg, seed, policy)?;
                        if let Some(rt) = r.response_time {
                            resp += rt.mean_s;
                            counted += 1;
                        }
                        energy += r.energy_j.validators_j;
                        tput += r.throughput_bps;
                    }
                    let n = seeds.len() as f64;
                    grid.push_str(&format!(
                        "{v},{interval},{policy},{:.6},{:.6},{:.3},{}\n",
                        if counted > 0 {
                            resp / counted as f64
                        } else {
                            f64::NAN
                        },
                        energy / n,
                        tput / n,
                        seeds.len(),
                    ));
                }
            }
        }
        std::fs::write(dir.join(format!("{}_grid.csv", base.name)), &grid)?;
        print!("{grid}");
    }

    // optional transaction-size sweep via the per-packet digest size
    if let Some(sizes) = &args.sizes {
        let sizes: Vec<u64> = parse_list(sizes, "size")?;
        let mut table =
            String::from("digest_bytes_per_packet,policy,mean_response_s,mean_tx_bytes,seeds\n");
        for &size in &sizes {
            for policy in [SelectionPolicy::Tbs, SelectionPolicy::Wbs] {
                let mut cfg = base.clone();
                cfg.wsn.digest_bytes_per_packet = size;
                let mut resp = 0.0;
                let mut bytes = 0.0;
                let mut counted = 0usize;
                for &seed in &seeds {
                    let r = run_cell(&cfg, seed, policy)?;
                    if let Some(rt) = r.response_time {
                        resp += rt.mean_s;
                        counted += 1;
                    }
                    if r.counts.committed > 0 {
                        bytes += r.throughput_bps * r.duration_s / r.counts.committed as f64;
                    }
                }
                let n = seeds.len() as f64;
                table.push_str(&format!(
                    "{size},{policy},{:.6},{:.1},{}\n",
                    if counted > 0 {
                        resp / counted as f64
                    } else {
                        f64::NAN
                    },
                    bytes / n,
                    seeds.len(),
                ));
            }
        }
        std::fs::write(dir.join(format!("{}_sizes.csv", base.name)), &table)?;
        print!("{table}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: ValidateArgs) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(&args.trace)
        .with_context(|| format!("reading trace {}", args.trace.display()))?;
    let trace = match Trace::parse(&text) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_INVARIANT));
        }
    };
    let violations = validate_trace(&trace);
    if violations.is_empty() {
        println!("ok: {} records, all invariants hold", trace.records.len());
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        eprintln!("{} violation(s)", violations.len());
        Ok(ExitCode::from(EXIT_INVARIANT))
    }
}
