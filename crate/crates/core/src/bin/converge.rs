use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use converge::config::ConfigFile;
use converge::dynamics::simulate;
use converge::registry::Registry;
use converge::report::{gnuplot_script, load_system, resolve_file, run, run_with_threads, Report, RunError};

#[derive(Parser)]
#[command(
    name = "converge",
    version,
    about = "Incremental stability, convergence and contraction checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analysis described by a config file and flags.
    Run(RunArgs),
    /// List the builtin examples and check their expected verdicts.
    Examples {
        #[arg(long)]
        json: bool,
    },
    /// Print a trajectory as CSV.
    Simulate {
        /// Builtin name or system file.
        system: String,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        k0: i64,
        /// Initial state, comma separated; zero when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        xi: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Check a Lyapunov candidate against a system on sampled points.
    CheckLyapunov {
        system: String,
        candidate: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file with `key = value` lines.
    config: Option<PathBuf>,
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    property: Option<String>,
    #[command(flatten)]
    common: Common,
    /// Write a gnuplot script for the envelope side file.
    #[arg(long)]
    emit_gnuplot: Option<PathBuf>,
}

#[derive(Args)]
struct Common {
    #[arg(long, env = "CONVERGE_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra settings in config syntax, e.g. `--set horizon=40`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<ConfigFile, RunError> {
        let mut cfg = ConfigFile {
            seed: self.seed,
            budget: self.budget,
            out: self.out.as_ref().map(|p| p.display().to_string()),
            ..ConfigFile::default()
        };
        for s in &self.set {
            cfg = cfg.overlay(ConfigFile::parse_assignment(s)?);
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, RunError> {
    match cli.command {
        Command::Run(args) => {
            let mut cfg = match &args.config {
                Some(path) => ConfigFile::load(path)?,
                None => ConfigFile::default(),
            };
            let property = match args.property.as_deref() {
                Some(p) => Some(
                    converge::config::Property::from_name(p)
                        .ok_or_else(|| RunError::Usage(format!("unknown property `{p}`")))?,
                ),
                None => None,
            };
            cfg = cfg.overlay(ConfigFile {
                system: args.system.clone(),
                property,
                ..ConfigFile::default()
            });
            cfg = cfg.overlay(args.common.overrides()?);
            let report = execute(cfg, args.common.threads)?;
            if let Some(script) = &args.emit_gnuplot {
                let name = report
                    .side_files
                    .iter()
                    .find(|f| f.ends_with(".envelope.csv"))
                    .ok_or_else(|| RunError::Usage("--emit-gnuplot needs --out and an envelope".into()))?;
                let dir = report
                    .config
                    .out
                    .as_deref()
                    .and_then(|o| Path::new(o).parent())
                    .unwrap_or(Path::new(""));
                let csv = dir.join(name).display().to_string();
                write(script, &gnuplot_script(&csv, &report.system.name))?;
            }
            emit(&report)
        }
        Command::CheckLyapunov {
            system,
            candidate,
            common,
        } => {
            let cfg = ConfigFile {
                system: Some(system),
                property: Some(converge::config::Property::LyapunovCheck),
                candidate: Some(candidate.display().to_string()),
                ..ConfigFile::default()
            }
            .overlay(common.overrides()?);
            let report = execute(cfg, common.threads)?;
            emit(&report)
        }
        Command::Examples { json } => {
            let registry = Registry::builtin();
            let violations = registry.rule_violations();
            if json {
                let v = serde_json::json!({ "examples": registry.examples, "rule_violations": violations });
                println!("{}", serde_json::to_string_pretty(&v).expect("registry serializes"));
            } else {
                print!("{}", registry.table());
                if violations.is_empty() {
                    println!("rule check: ok (EIS => IS, CA => IS, EIS <=> CA for differentiable f)");
                } else {
                    for v in &violations {
                        println!("rule check: {v}");
                    }
                }
            }
            Ok(u8::from(!violations.is_empty()))
        }
        Command::Simulate { system, k0, xi, steps } => {
            let (def, _) = load_system(&system)?;
            let xi = if xi.is_empty() { vec![0.0; def.n] } else { xi };
            let traj = simulate(&def, k0, &xi, steps).map_err(|e| RunError::Usage(e.to_string()))?;
            let mut header = vec!["k".to_string()];
            header.extend((1..=def.n).map(|i| format!("x{i}")));
            println!("{}", header.join(","));
            for (i, s) in traj.states.iter().enumerate() {
                let row: Vec<String> = s.iter().map(|v| format!("{v:e}")).collect();
                println!("{},{}", k0 + i as i64, row.join(","));
            }
            if let Some(mark) = &traj.overflow {
                eprintln!("overflow at k = {}: {}", mark.at_k, mark.reason);
            }
            Ok(0)
        }
    }
}

fn execute(cfg: ConfigFile, threads: Option<usize>) -> Result<Report, RunError> {
    let cfg = resolve_file(cfg)?;
    match threads {
        Some(n) => run_with_threads(&cfg, n),
        None => run(&cfg),
    }
}

fn write(path: &PathBuf, text: &str) -> Result<(), RunError> {
    let io = |source| RunError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, text).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn emit(report: &Report) -> Result<u8, RunError> {
    let json = report.to_json_pretty();
    match &report.config.out {
        Some(out) => {
            write(&PathBuf::from(out), &json)?;
            let expectation = report
                .expectation
                .as_ref()
                .map(|e| format!(" {:?} (expected {}, observed {})", e.result, e.expected, e.observed).to_uppercase())
                .unwrap_or_default();
            println!(
                "{} {}: {:?}{expectation}",
                report.system.name, report.property, report.status
            );
        }
        None => println!("{json}"),
    }
    Ok(report.exit_code() as u8)
}
