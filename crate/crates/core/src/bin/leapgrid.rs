use clap::{Parser, Subcommand, ValueEnum};
use leapgrid::commands::{self, Fault, EXIT_CONFIG, EXIT_OK, EXIT_VERIFY};
use leapgrid::config::{Config, Overrides};
use leapgrid::decomp::RankOrder;
use leapgrid::filters::FilterMode;
use leapgrid::{Error, Result};
use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "leapgrid", version, about = "Leap-format decomposition experiments at desk scale")]
struct Cli {
    /// JSON config file, `-` for stdin. Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    mode: Option<ModeArg>,
    #[arg(long, global = true, default_value = "on")]
    aggregate: Switch,
    #[arg(long, global = true)]
    order: Option<OrderArg>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, hide = true)]
    inject_fault: Option<FaultArg>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Per-row leap intervals as CSV.
    LeapTable,
    /// 2D vs 3D per-core halo volumes as CSV.
    Estimate,
    /// Shifting-window plans as CSV; group traffic to DIR/group_traffic.json.
    Plan,
    /// Layout, vertical and planner checks.
    Verify,
    /// Run the toy model; writes checksums.json, commstats.json, filter_load.csv.
    Run,
    /// Filter operations per rank as CSV.
    FilterLoad,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Conventional,
    Leap,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    YPrior,
    ZPrior,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    HaloWidth,
}

fn load(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        None => Config::default(),
        Some(p) if p.as_os_str() == "-" => {
            let mut text = String::new();
            std::io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| Error::Config(format!("cannot read stdin: {e}")))?;
            Config::from_json(&text)?
        }
        Some(p) => Config::load(p)?,
    };
    cfg.apply(Overrides {
        mode: cli.mode.map(|m| match m {
            ModeArg::Conventional => FilterMode::Conventional,
            ModeArg::Leap => FilterMode::LeapFormat,
        }),
        order: cli.order.map(|o| match o {
            OrderArg::YPrior => RankOrder::YPrior,
            OrderArg::ZPrior => RankOrder::ZPrior,
        }),
        seed: cli.seed,
    });
    Ok(cfg)
}

fn emit(cli: &Cli, name: &str, text: &str) -> Result<()> {
    print!("{text}");
    if let Some(dir) = &cli.out {
        commands::write_file(dir, name, text)?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = load(cli)?;
    let aggregate = cli.aggregate == Switch::On;
    match cli.command {
        Cmd::LeapTable => emit(cli, "leap_table.csv", &commands::leap_table(&cfg)?)?,
        Cmd::Estimate => emit(cli, "estimate.csv", &commands::estimate(&cfg)?)?,
        Cmd::Plan => {
            let (csv, traffic) = commands::plan(&cfg, aggregate)?;
            emit(cli, "plan.csv", &csv)?;
            if let Some(dir) = &cli.out {
                let text = serde_json::to_string_pretty(&traffic).expect("json") + "\n";
                commands::write_file(dir, "group_traffic.json", &text)?;
            }
        }
        Cmd::Verify => {
            let fault = cli.inject_fault.map(|FaultArg::HaloWidth| Fault::HaloWidth);
            let report = commands::verify(&cfg, aggregate, fault)?;
            print!("{}", report.render());
            if !report.passed() {
                return Ok(EXIT_VERIFY);
            }
        }
        Cmd::Run => {
            let art = commands::run(&cfg, aggregate, cli.out.as_deref())?;
            print!("{}", art.checksums);
        }
        Cmd::FilterLoad => emit(cli, "filter_load.csv", &commands::filter_load(&cfg)?)?,
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { EXIT_OK as u8 });
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
