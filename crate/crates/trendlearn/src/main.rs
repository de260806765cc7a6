use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trendlearn::checks::run_battery;
use trendlearn::config::{parse_config, ExperimentConfig};
use trendlearn::engine::{run_many, summarize, write_summary, write_trace_csv};

#[derive(Parser)]
#[command(name = "trendlearn", version, about = "Social-learning simulator with partial belief \
    sharing over trending hypotheses, plus a verification battery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the horizon from the config.
    #[arg(long)]
    horizon: Option<u64>,
    /// Override the recording stride from the config.
    #[arg(long)]
    stride: Option<u64>,
    /// Override the number of runs from the config.
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write trace CSVs plus a summary.
    Simulate {
        config: PathBuf,
        /// Output directory (created if absent).
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print asymptotic decay rates and identifiability for a config.
    Rates {
        config: PathBuf,
        /// Optional JSON output file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run verification checks ("all" or named checks).
    Verify {
        /// Check names; defaults to the full battery.
        #[arg(default_value = "all")]
        checks: Vec<String>,
        #[arg(long, default_value_t = 9)]
        seed: u64,
        /// Optional directory for the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replicate an experiment over a seed (and optional horizon) grid and
    /// emit per-run empirical rates as tidy CSV.
    Sweep {
        config: PathBuf,
        /// Comma-separated horizons; defaults to the config's horizon.
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> trendlearn::Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, out, overrides } => cmd_simulate(&config, &out, &overrides),
        Command::Rates { config, out } => cmd_rates(&config, out.as_deref()),
        Command::Verify { checks, seed, out } => cmd_verify(&checks, seed, out.as_deref()),
        Command::Sweep { config, horizons, out, overrides } => {
            cmd_sweep(&config, &horizons, &out, &overrides)
        }
    }
}

fn load(config: &Path, overrides: &Overrides) -> trendlearn::Result<ExperimentConfig> {
    let mut cfg = parse_config(config)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(horizon) = overrides.horizon {
        cfg.horizon = horizon;
    }
    if let Some(stride) = overrides.stride {
        cfg.stride = Some(stride);
    }
    if let Some(runs) = overrides.runs {
        cfg.num_runs = runs;
    }
    Ok(cfg)
}

fn cmd_simulate(config: &Path, out: &Path, overrides: &Overrides) -> trendlearn::Result<ExitCode> {
    let cfg = load(config, overrides)?;
    std::fs::create_dir_all(out)?;
    let truth = cfg.hypotheses.true_index();
    let traces = run_many(&cfg)?;
    for trace in &traces {
        let path = out.join(format!("trace_{}.csv", trace.seed));
        let file = std::fs::File::create(&path)?;
        write_trace_csv(trace, std::io::BufWriter::new(file))?;
        let summary = summarize(&cfg, trace)?;
        write_summary(&summary, &out.join(format!("summary_{}.json", trace.seed)))?;
        let finals: Vec<String> = summary
            .final_beliefs
            .iter()
            .map(|row| format!("{:.6}", row[truth]))
            .collect();
        println!(
            "seed {}: final truth beliefs [{}], guard min {:.6}",
            trace.seed,
            finals.join(", "),
            trace.guard_min
        );
        println!("  wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_rates(config: &Path, out: Option<&Path>) -> trendlearn::Result<ExitCode> {
    let cfg = parse_config(config)?;
    // same parse + summary path as simulate, on a zero-length run
    let mut zero = cfg.clone();
    zero.horizon = 0;
    zero.num_runs = 1;
    let trace = trendlearn::engine::run_experiment(&zero)?;
    let summary = summarize(&zero, &trace)?;
    println!("hypothesis  d_ave       identifiable  witness  per-agent KL divergences");
    for entry in &summary.rates {
        let contributions: Vec<String> =
            entry.per_agent_kl.iter().map(|c| format!("{c:.4}")).collect();
        println!(
            "{:>10}  {:>9.4}  {:>12}  {:>7}  [{}]",
            entry.hypothesis,
            entry.d_ave,
            if entry.identifiable { "yes" } else { "NO" },
            entry.witness.map(|w| w.to_string()).unwrap_or_else(|| "-".into()),
            contributions.join(", ")
        );
        if !entry.identifiable {
            println!("            warning: no agent separates hypothesis {}", entry.hypothesis);
        }
    }
    if let Some(path) = out {
        write_summary(&summary, path)?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(checks: &[String], seed: u64, out: Option<&Path>) -> trendlearn::Result<ExitCode> {
    let reports = run_battery(checks, seed)?;
    let mut all_pass = true;
    for report in &reports {
        println!("{}", report.one_line());
        for detail in &report.details {
            println!("    {detail}");
        }
        all_pass &= report.pass;
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("verify_{seed}.json"));
        let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
        std::fs::write(&path, json)?;
        println!("wrote {}", path.display());
    }
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_sweep(
    config: &Path,
    horizons: &[u64],
    out: &Path,
    overrides: &Overrides,
) -> trendlearn::Result<ExitCode> {
    let base = load(config, overrides)?;
    let horizons = if horizons.is_empty() { vec![base.horizon] } else { horizons.to_vec() };
    std::fs::create_dir_all(out)?;
    let path = out.join("sweep.csv");
    let mut rows = String::from("seed,horizon,hypothesis,agent,empirical_rate,d_ave\n");
    let truth = base.hypotheses.true_index();
    for &horizon in &horizons {
        let mut cfg = base.clone();
        cfg.horizon = horizon;
        for trace in run_many(&cfg)? {
            let summary = summarize(&cfg, &trace)?;
            for entry in &summary.rates {
                for agent in 0..cfg.num_agents() {
                    let r = trace.final_log_ratio(agent, entry.hypothesis) / horizon as f64;
                    rows.push_str(&format!(
                        "{},{},{},{},{:.16e},{:.16e}\n",
                        trace.seed, horizon, entry.hypothesis, agent, r, entry.d_ave
                    ));
                }
            }
            println!(
                "seed {} horizon {}: guard min {:.6}, truth belief range [{:.6}, {:.6}]",
                trace.seed,
                horizon,
                trace.guard_min,
                summary
                    .final_beliefs
                    .iter()
                    .map(|row| row[truth])
                    .fold(f64::INFINITY, f64::min),
                summary
                    .final_beliefs
                    .iter()
                    .map(|row| row[truth])
                    .fold(f64::NEG_INFINITY, f64::max),
            );
        }
    }
    std::fs::write(&path, rows)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}
