use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fdxsim_core::experiments::{
    emit_table, evaluate_point, run_experiment, write_csv, write_json, Engine, ExperimentConfig, OutputFormat,
};
use fdxsim_core::{
    build_chpll_mask, CancellationConfig, ChannelProfile, Error, Level, LoopBandwidth, MonteCarloConfig, OfdmConfig,
    PllParams, Redraw,
};

const SEED_ENV: &str = "FDXSIM_SEED";

#[derive(Parser)]
#[command(name = "fdxsim", version, about = "Full-duplex self-interference cancellation under oscillator phase noise")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output file; overrides the config's `output.path`. Without either,
        /// CSV goes to stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Write the composite oscillator mask as `offset_hz,level_dbc_hz` CSV.
    Mask {
        /// Flicker-region level in dBc/Hz.
        #[arg(long = "lf", allow_negative_numbers = true)]
        l_f: f64,
        /// Thermal-region level in dBc/Hz.
        #[arg(long = "lw", allow_negative_numbers = true)]
        l_w: f64,
        /// Offset of the `--lf` measurement in Hz.
        #[arg(long = "f-lf", default_value_t = 1e3)]
        f_lf: f64,
        /// Offset of the `--lw` measurement in Hz.
        #[arg(long = "f-lw", default_value_t = 1e6)]
        f_lw: f64,
        /// Loop natural frequency in Hz, `auto` or `open`.
        #[arg(long = "loop-bw", default_value = "auto", value_parser = parse_loop_bw)]
        loop_bw: LoopBandwidth,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// Evaluate one operating point with the default OFDM setup and channel.
    Point {
        /// Omit both --lf and --lw for an ideal oscillator.
        #[arg(long = "lf", allow_negative_numbers = true, requires = "l_w")]
        l_f: Option<f64>,
        #[arg(long = "lw", allow_negative_numbers = true, requires = "l_f")]
        l_w: Option<f64>,
        /// ALC level in dB or `ideal`.
        #[arg(long, default_value = "30")]
        alc: Level,
        /// DLC level in dB or `ideal`.
        #[arg(long, default_value = "70")]
        dlc: Level,
        #[arg(long, value_enum, default_value_t = EngineArg::Both)]
        engine: EngineArg,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 200)]
        symbols: usize,
        #[arg(long, env = SEED_ENV, default_value_t = 1)]
        seed: u64,
        /// Channel profile CSV (`delay_samples,gain_db`).
        #[arg(long)]
        channel: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        antenna_separation: f64,
        #[arg(long, value_enum, default_value_t = RedrawArg::PerSymbol)]
        redraw: RedrawArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    ClosedForm,
    MonteCarlo,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum RedrawArg {
    PerTrial,
    PerSymbol,
}

fn parse_loop_bw(s: &str) -> Result<LoopBandwidth, String> {
    match s {
        "auto" => Ok(LoopBandwidth::Auto),
        "open" => Ok(LoopBandwidth::Open),
        _ => s
            .parse()
            .map(LoopBandwidth::Hz)
            .map_err(|_| format!("expected a frequency in Hz, `auto` or `open`, got `{s}`")),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_infeasible() {
        3
    } else if e.is_io() {
        4
    } else {
        2
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(config: PathBuf, output: Option<PathBuf>, format: Option<Format>) -> Result<(), Error> {
    let cfg = load_config(&config)?;
    let format = match format {
        Some(Format::Csv) => OutputFormat::Csv,
        Some(Format::Json) => OutputFormat::Json,
        None => cfg.output.as_ref().map_or(OutputFormat::Csv, |o| o.format),
    };
    let path = output.or_else(|| cfg.output.as_ref().map(|o| o.path.clone()));
    log::info!("running {} (seed {}, {} trials)", cfg.experiment.name(), cfg.seed, cfg.trials);
    let table = run_experiment(&cfg)?;
    let skipped = table.rows.iter().filter(|r| r.skipped).count();
    match &path {
        Some(p) => {
            emit_table(&table, format, p)?;
            eprintln!(
                "{}: {} rows ({skipped} skipped) written to {}",
                table.kind,
                table.rows.len(),
                p.display()
            );
        }
        None => {
            let stdout = std::io::stdout().lock();
            match format {
                OutputFormat::Csv => write_csv(&table, stdout)?,
                OutputFormat::Json => write_json(&table, stdout)?,
            }
        }
    }
    Ok(())
}

fn mask(p: PllParams, output: PathBuf) -> Result<(), Error> {
    let m = build_chpll_mask(&p)?;
    let file = std::fs::File::create(&output).map_err(|e| Error::Io {
        path: output.clone(),
        source: e,
    })?;
    m.write_csv(std::io::BufWriter::new(file))?;
    let fn_hz = p
        .natural_frequency()
        .map_or("open loop".to_string(), |f| format!("loop natural frequency {f:.0} Hz"));
    eprintln!("{} points written to {} ({fn_hz})", m.points().len(), output.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn point(
    osc: Option<PllParams>,
    canc: CancellationConfig,
    engine: Engine,
    mc: MonteCarloConfig,
    symbols: usize,
    channel: Option<PathBuf>,
    antenna_separation: f64,
) -> Result<(), Error> {
    let ofdm = OfdmConfig {
        n_symbols: symbols,
        ..OfdmConfig::default()
    };
    let profile = match channel {
        Some(path) => ChannelProfile::read_csv(path, antenna_separation)?,
        None => ChannelProfile {
            antenna_separation_db: antenna_separation,
            ..ChannelProfile::default()
        },
    };
    profile.validate()?;
    canc.validate(&profile)?;
    let r = evaluate_point(&ofdm, &profile, &canc, osc.as_ref(), engine, &mc)?;
    let mut out = std::io::stdout().lock();
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    let diff = r.sic_cf_db.zip(r.sic_mc_db).map(|(a, b)| a - b);
    writeln!(
        out,
        "sic_cf_db={} sic_mc_db={} diff_db={} seed={} trials={}",
        fmt(r.sic_cf_db),
        fmt(r.sic_mc_db),
        fmt(diff),
        mc.seed,
        mc.trials
    )
    .map_err(|e| Error::Io {
        path: "<stdout>".into(),
        source: e,
    })?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, output, format } => run(config, output, format),
        Command::Mask {
            l_f,
            l_w,
            f_lf,
            f_lw,
            loop_bw,
            output,
        } => mask(
            PllParams {
                l_f,
                l_w,
                f_lf,
                f_lw,
                loop_bandwidth: loop_bw,
                ..PllParams::default()
            },
            output,
        ),
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("{}: valid {} experiment", config.display(), cfg.experiment.name());
            Ok(())
        }
        Command::Point {
            l_f,
            l_w,
            alc,
            dlc,
            engine,
            trials,
            symbols,
            seed,
            channel,
            antenna_separation,
            redraw,
        } => {
            let osc = l_f.zip(l_w).map(|(l_f, l_w)| PllParams::new(l_f, l_w));
            if let Some(p) = &osc {
                p.validate()?;
            }
            let engine = match engine {
                EngineArg::ClosedForm => Engine::ClosedForm,
                EngineArg::MonteCarlo => Engine::MonteCarlo,
                EngineArg::Both => Engine::Both,
            };
            let redraw = match redraw {
                RedrawArg::PerTrial => Redraw::PerTrial,
                RedrawArg::PerSymbol => Redraw::PerSymbol,
            };
            point(
                osc,
                CancellationConfig::new(alc, dlc),
                engine,
                MonteCarloConfig { trials, seed, redraw },
                symbols,
                channel,
                antenna_separation,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
