use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use driftsens::experiments::{resolve_out_dir, run_experiment, ExperimentConfig, ExperimentKind, Summary};

#[derive(Parser)]
#[command(name = "driftsens", version, about = "Drift-sensitivity experiments for reflected SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML); defaults to the bundled config of the kind.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    DerivativeCheck,
    RemainderScaling,
    OperatorResponse,
    EigenResponse,
    CoherentSets,
    PeriodicForcing,
    ContinuityScan,
    DiscontinuityDemo,
    /// Run every bundled experiment, one subdirectory each.
    All,
    /// Print the bundled config of a kind.
    PrintConfig {
        #[arg(value_parser = parse_kind)]
        kind: ExperimentKind,
    },
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    let norm = s.replace('-', "_");
    ExperimentKind::ALL
        .into_iter()
        .find(|k| k.name() == norm)
        .ok_or_else(|| format!("unknown experiment kind `{s}`"))
}

fn kind_of(c: Command) -> Option<ExperimentKind> {
    Some(match c {
        Command::DerivativeCheck => ExperimentKind::DerivativeCheck,
        Command::RemainderScaling => ExperimentKind::RemainderScaling,
        Command::OperatorResponse => ExperimentKind::OperatorResponse,
        Command::EigenResponse => ExperimentKind::EigenResponse,
        Command::CoherentSets => ExperimentKind::CoherentSets,
        Command::PeriodicForcing => ExperimentKind::PeriodicForcing,
        Command::ContinuityScan => ExperimentKind::ContinuityScan,
        Command::DiscontinuityDemo => ExperimentKind::DiscontinuityDemo,
        Command::All | Command::PrintConfig { .. } => return None,
    })
}

fn report(summary: &Summary) {
    for c in &summary.checks {
        println!(
            "[{}] {} {}: {} (threshold {})",
            if c.pass { "pass" } else { "FAIL" },
            summary.kind.name(),
            c.name,
            c.value,
            c.threshold
        );
    }
    if let Some(e) = &summary.error {
        println!("[FAIL] {}: {e}", summary.kind.name());
    }
}

fn load(kind: ExperimentKind, cli: &Cli) -> driftsens::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::from_toml_str(kind.default_config())?,
    };
    if config.kind != kind {
        return Err(driftsens::Error::Config {
            field: "kind".into(),
            message: format!("config is `{}` but the subcommand is `{}`", config.kind.name(), kind.name()),
        });
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: &Cli) -> driftsens::Result<bool> {
    if let Command::PrintConfig { kind } = cli.command {
        print!("{}", kind.default_config());
        return Ok(true);
    }
    let kinds: Vec<ExperimentKind> = match kind_of(cli.command) {
        Some(k) => vec![k],
        None => ExperimentKind::ALL.to_vec(),
    };
    if matches!(cli.command, Command::All) && cli.config.is_some() {
        return Err(driftsens::Error::Config {
            field: "--config".into(),
            message: "`all` runs the bundled configs; pass --config to a single kind".into(),
        });
    }
    let mut all_pass = true;
    for kind in kinds {
        let config = load(kind, cli)?;
        let out = match (&cli.out, cli.command) {
            (Some(dir), Command::All) => dir.join(kind.name()),
            (over, _) => resolve_out_dir(&config, over.as_deref()),
        };
        let summary = run_experiment(&config, &out)?;
        report(&summary);
        println!("{} -> {}", kind.name(), out.display());
        all_pass &= summary.pass;
    }
    Ok(all_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
