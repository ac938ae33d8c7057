use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use resilience_cli::commands::{self, exit};
use resilience_cli::{CliError, Problem};
use resilience_core::linalg::GainKind;

#[derive(Parser)]
#[command(
    name = "resilience",
    version,
    about = "Certified resilience bounds for STL specifications"
)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Jordan,
    Absolute,
    Gronwall,
    All,
}

impl Method {
    fn kinds(self) -> Vec<GainKind> {
        match self {
            Method::Jordan => vec![GainKind::Jordan],
            Method::Absolute => vec![GainKind::Absolute],
            Method::Gronwall => vec![GainKind::Gronwall],
            Method::All => vec![GainKind::Jordan, GainKind::Absolute, GainKind::Gronwall],
        }
    }

    fn single(self) -> Result<GainKind, CliError> {
        match self {
            Method::All => Err(CliError::MethodAll),
            m => Ok(m.kinds()[0]),
        }
    }
}

#[derive(clap::Args)]
struct Common {
    /// Analysis configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Certify a lower bound on resilience and write certificate.json.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Gain method; defaults to the config's.
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Write nominal ± envelope curves (CSV and SVG) for one or all methods.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        method: Method,
        /// Disturbance bound used for the envelope.
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
    },
    /// Monte-Carlo validation; defaults to the certified eps* in --out.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Skip the trajectory overlay SVG.
        #[arg(long)]
        no_plot: bool,
    },
    /// Robustness of a recorded signal (CSV `t,x1,...,xn`) at t = 0.
    Robustness {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        signal: PathBuf,
    },
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RESILIENCE_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("RESILIENCE_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    init_threads()?;
    match cli.command {
        Command::Analyze { common, method } => {
            let problem = Problem::load(&common.config)?;
            let method = match method {
                Some(m) => m.single()?,
                None => problem.config.method,
            };
            let cert = commands::analyze(&problem, method)?;
            let path = commands::write_certificate(&common.out, &cert)?;
            print!("{}", commands::summary(&cert));
            println!("wrote {}", path.display());
            Ok(commands::exit_code(cert.status))
        }
        Command::Bounds { common, method, eps } => {
            anyhow::ensure!(eps >= 0.0, "--eps must be nonnegative");
            let problem = Problem::load(&common.config)?;
            let all = commands::bounds(&problem, &method.kinds(), eps)?;
            for b in &all {
                let path = common.out.join(format!("bounds_{}.csv", b.method));
                std::fs::create_dir_all(&common.out)?;
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                commands::write_bounds_csv(b, std::io::BufWriter::new(file))?;
                println!("wrote {}", path.display());
            }
            let name = match method {
                Method::All => "all".to_string(),
                m => m.single()?.to_string(),
            };
            let svg_path = common.out.join(format!("bounds_{name}.svg"));
            commands::write_text(&svg_path, &commands::bounds_svg(&all))?;
            println!("wrote {}", svg_path.display());
            Ok(exit::OK)
        }
        Command::Validate {
            common,
            eps,
            trials,
            seed,
            no_plot,
        } => {
            let problem = Problem::load(&common.config)?;
            let eps = match eps {
                Some(e) => e,
                None => commands::read_certificate(&common.out)?.eps_star,
            };
            anyhow::ensure!(eps >= 0.0, "--eps must be nonnegative");
            let trials = trials.unwrap_or(problem.config.validate.trials);
            let seed = seed.unwrap_or(problem.config.validate.seed);
            let report = commands::validate(&problem, eps, trials, seed)?;
            let path = commands::write_report(&common.out, &report)?;
            println!(
                "eps {:.6e}: {} of {} trials violate (worst rho {:.6e}, seed {})",
                report.eps, report.violations, report.trials, report.worst_robustness, report.worst_seed
            );
            println!("wrote {}", path.display());
            if !no_plot {
                let svg_path = common.out.join(commands::OVERLAY_FILE);
                commands::write_text(&svg_path, &commands::validate_overlay(&problem, eps, trials, seed)?)?;
                println!("wrote {}", svg_path.display());
            }
            Ok(if report.violations == 0 {
                exit::OK
            } else {
                exit::VIOLATION
            })
        }
        Command::Robustness { config, signal } => {
            let problem = Problem::load(&config)?;
            let file = File::open(&signal).with_context(|| format!("opening {}", signal.display()))?;
            let rho = commands::robustness_of_csv(&problem, file)?;
            let sat = rho > 0.0;
            println!("rho = {rho:.12e} ({})", if sat { "SAT" } else { "UNSAT" });
            Ok(if sat { exit::OK } else { exit::VIOLATION })
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
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::ERROR)
        }
    }
}
