use std::path::PathBuf;
use std::process::ExitCode;

use adaclab::config::{ConfigError, ExperimentConfig};
use adaclab::experiment::{run_one, sweep, write_run, write_sweep};
use adaclab::pipeline::Mode;
use adaclab::verify::{self, Fault};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

/// Online control of unknown linear systems from data, with regret
/// measurement against the best fixed controller in hindsight.
///
/// Exit codes: 0 success, 2 invalid config, 3 numerical failure,
/// 4 sweep finished with failed runs (partial results are written).
#[derive(Parser, Debug)]
#[command(name = "adaclab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// One run at the configured horizon and the first seed; writes
    /// trace.csv and summary.json.
    Run(Common),
    /// Regret over several horizons and seeds; writes regret_vs_T.csv
    /// (columns T,seed,regret,learner_cost,comparator_cost,log_T,log_regret)
    /// and summary.json with the fitted exponent.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Horizons, at least four; defaults to the config's `horizons`.
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Fast self-checks, printed as a pass/fail table.
    Verify {
        /// Damage the inputs first to confirm the checks can fail.
        #[arg(long, value_enum)]
        inject: Option<Injection>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory. ADACLAB_OUT, when set, takes precedence; without
    /// either the config's `out` is used, then `./out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds, overriding the config. Sweeps need seeds from one of the two.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Override the config's mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Clean,
    Etc,
    Output,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Clean => Mode::Clean,
            ModeArg::Etc => Mode::Etc,
            ModeArg::Output => Mode::Output,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Injection {
    CorruptHankelColumn,
}

enum Failure {
    Config(String),
    Numeric(String),
    Partial(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn numeric(e: adaclab::Error) -> Failure {
    Failure::Numeric(e.to_string())
}

struct Loaded {
    cfg: ExperimentConfig,
    out: PathBuf,
    seeds_given: bool,
}

fn load(common: &Common) -> Result<Loaded, Failure> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(|e| Failure::Config(e.to_string()))?;
    let listed = serde_json::from_str::<serde_json::Value>(&text).is_ok_and(|v| v.get("seeds").is_some());
    if !common.seeds.is_empty() {
        cfg.seeds = common.seeds.clone();
    }
    if let Some(m) = common.mode {
        cfg.mode = m.into();
    }
    let out = std::env::var_os("ADACLAB_OUT")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| common.out.clone())
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Loaded { cfg, out, seeds_given: listed || !common.seeds.is_empty() })
}

fn cmd_run(common: &Common) -> Result<String, Failure> {
    let Loaded { cfg, out, .. } = load(common)?;
    cfg.validate_for(cfg.horizon)?;
    let seed = cfg.seeds[0];
    let outcome = run_one(&cfg, cfg.horizon, seed).map_err(numeric)?;
    write_run(&out, &outcome).map_err(numeric)?;
    let r = &outcome.report;
    Ok(format!(
        "{} T={} seed={seed}: learner {:.6} comparator {:.6} regret {:.6}\nwrote {}",
        cfg.mode,
        cfg.horizon,
        r.learner_cost,
        r.comparator_cost,
        r.regret,
        out.display()
    ))
}

fn cmd_sweep(common: &Common, horizons: &[usize], jobs: usize) -> Result<String, Failure> {
    let Loaded { cfg, out, seeds_given } = load(common)?;
    if !seeds_given {
        return Err(Failure::Config("sweep needs explicit seeds: pass --seeds or list `seeds` in the config".into()));
    }
    let horizons = if horizons.is_empty() { cfg.horizons.clone() } else { horizons.to_vec() };
    if horizons.len() < 4 {
        return Err(Failure::Config(format!("sweep needs at least 4 horizons, got {}", horizons.len())));
    }
    for &t in &horizons {
        cfg.validate_for(t)?;
    }
    let outcome = sweep(&cfg, &horizons, &cfg.seeds, jobs).map_err(numeric)?;
    write_sweep(&out, &outcome).map_err(numeric)?;
    let s = &outcome.summary;
    let fit = s.fit.as_ref().map_or("no fit".to_string(), |f| format!("exponent {:.4}", f.exponent));
    let msg = format!("{} runs, {fit}\nwrote {}", outcome.rows.len(), out.display());
    if outcome.complete() {
        return Ok(msg);
    }
    let mut lines = vec![msg, format!("{} runs failed:", s.failures.len())];
    lines.extend(s.failures.iter().map(|f| format!("  T={} seed={}: {}", f.horizon, f.seed, f.error)));
    Err(Failure::Partial(lines.join("\n")))
}

fn cmd_verify(inject: Option<Injection>) -> Result<String, Failure> {
    let fault = inject.map(|Injection::CorruptHankelColumn| Fault::CorruptHankelColumn);
    let report = verify::run(fault);
    let table = report.table();
    if report.passed() {
        Ok(table.trim_end().to_string())
    } else {
        Err(Failure::Numeric(table.trim_end().to_string()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(common) => cmd_run(common),
        Cmd::Sweep { common, horizons, jobs } => cmd_sweep(common, horizons, *jobs),
        Cmd::Verify { inject } => cmd_verify(*inject),
    };
    match result {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_NUMERIC)
        }
        Err(Failure::Partial(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_PARTIAL)
        }
    }
}
