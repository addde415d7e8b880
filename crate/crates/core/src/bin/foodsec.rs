use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use foodsec::config::ConfigBuilder;
use foodsec::pipeline::{run_subcommand, Command};
use foodsec::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Synth,
    Features,
    Aggregate,
    Indices,
    Correlate,
    Null,
    Fit,
    Rolling,
    Verify,
    All,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Command {
        match s {
            Sub::Synth => Command::Synth,
            Sub::Features => Command::Features,
            Sub::Aggregate => Command::Aggregate,
            Sub::Indices => Command::Indices,
            Sub::Correlate => Command::Correlate,
            Sub::Null => Command::Null,
            Sub::Fit => Command::Fit,
            Sub::Rolling => Command::Rolling,
            Sub::Verify => Command::Verify,
            Sub::All => Command::All,
        }
    }
}

/// Sector-level food-security proxies from call detail records and airtime top-ups.
///
/// Settings come from defaults, then --config, then FOODSEC_* environment
/// variables, then flags.
#[derive(Debug, Parser)]
#[command(name = "foodsec", version)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    /// TOML file of key = value settings
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding inputs under their conventional names
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory for outputs and manifests
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Abort on the first malformed input row
    #[arg(long)]
    strict: bool,
    /// e.g. 18:00-08:00
    #[arg(long)]
    night_window: Option<String>,
    #[arg(long)]
    window_days: Option<u32>,
    #[arg(long)]
    ci_level: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    degree: Option<u8>,
    /// Also write heatmap.csv
    #[arg(long)]
    heatmap_data: bool,
    /// Also write scatter_<target>.csv
    #[arg(long)]
    scatter_data: bool,
    /// Any other setting, as key=value (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn build_config(cli: &Cli) -> foodsec::Result<foodsec::config::RunConfig> {
    let mut b = ConfigBuilder::new();
    if let Some(p) = &cli.config {
        b = b.file(p)?;
    }
    b = b.env(std::env::vars());
    let path = |p: &PathBuf| toml::Value::String(p.display().to_string());
    if let Some(p) = &cli.data {
        b = b.set("data", path(p));
    }
    if let Some(p) = &cli.out {
        b = b.set("out", path(p));
    }
    if let Some(v) = cli.seed {
        let v = i64::try_from(v).map_err(|_| Error::Config("seed must fit in a signed 64-bit integer".into()))?;
        b = b.set("seed", toml::Value::Integer(v));
    }
    if let Some(v) = cli.threads {
        b = b.set("threads", toml::Value::Integer(v as i64));
    }
    if cli.strict {
        b = b.set("strict", toml::Value::Boolean(true));
    }
    if let Some(v) = &cli.night_window {
        b = b.set("night_window", toml::Value::String(v.clone()));
    }
    if let Some(v) = cli.window_days {
        b = b.set("window_days", toml::Value::Integer(v as i64));
    }
    if let Some(v) = cli.ci_level {
        b = b.set("ci_level", toml::Value::Float(v));
    }
    if let Some(v) = cli.trials {
        b = b.set("trials", toml::Value::Integer(v as i64));
    }
    if let Some(v) = cli.degree {
        b = b.set("degree", toml::Value::Integer(v as i64));
    }
    if cli.heatmap_data {
        b = b.set("heatmap_data", toml::Value::Boolean(true));
    }
    if cli.scatter_data {
        b = b.set("scatter_data", toml::Value::Boolean(true));
    }
    for s in &cli.set {
        b = b.set_raw(s)?;
    }
    b.build()
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|info| {
        eprintln!("foodsec: internal error: {info}");
        std::process::exit(3);
    }));
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FOODSEC_LOG", level)).init();

    let result = build_config(&cli).and_then(|cfg| run_subcommand(cli.command.into(), &cfg));
    match result {
        Ok(m) => {
            for o in &m.outputs {
                println!("{}", o.path);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!(
                "foodsec {}: {e}",
                cli.command
                    .to_possible_value()
                    .map(|v| v.get_name().to_string())
                    .unwrap_or_default()
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
