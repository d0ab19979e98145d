//! `ofo`: run closed-loop simulations and inspect cases from the shell.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use ofo_core::fixtures::builtin_case;
use ofo_core::grid_case::{parse_case, parse_case_unvalidated, parse_matpower, validate, GridCase};
use ofo_core::harness::{
    parse_load_csv, parse_manifest, parse_wind_csv, plot_svg, ramp_scenario, records_csv, run_closed_loop,
    run_fixed_curtailment, run_offline_oracle, summarize, wind_to_csv, RampParams, RunOptions, RunRecord, Scenario,
    Task,
};
use ofo_core::ofo::{max_wind_anchor, ControllerConfig, ModelMode};
use ofo_core::power_flow::{settle_local_taps, Disturbance, PfOptions};
use ofo_core::sensitivity::linearize;

const EXIT_INPUT: u8 = 2;
const EXIT_ABORTED: u8 = 3;

/// Marks errors caused by bad user input (exit code 2).
#[derive(Debug)]
struct InputError(anyhow::Error);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for InputError {}

fn input<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| InputError(e).into())
}

#[derive(Parser, Debug)]
#[command(name = "ofo", version, about = "Online feedback optimization for transmission grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CaseFormat {
    Native,
    MatpowerTable,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario and write records.csv and summary.txt.
    Run {
        /// Case file, or `builtin:<name>` (two-bus, three-bus, mini-blocaux).
        #[arg(long)]
        case: String,
        /// Scenario manifest, or `builtin:ramp`.
        #[arg(long)]
        scenario: String,
        /// ofo-approx, ofo-perfect, fixed:<fraction> or oracle.
        #[arg(long)]
        mode: String,
        /// Controller config (`key = value` lines); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Truncate the scenario to this many steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Override the tap weight of every controllable tap.
        #[arg(long)]
        gtap: Option<f64>,
        /// Amplitude of uniform measurement noise.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 1)]
        noise_seed: u64,
        /// Also write run.svg.
        #[arg(long)]
        plot: bool,
        #[arg(long, value_enum, default_value_t = CaseFormat::Native)]
        format: CaseFormat,
    },
    /// Check a case file and list every violated rule.
    Validate {
        #[arg(long)]
        case: String,
        #[arg(long, value_enum, default_value_t = CaseFormat::Native)]
        format: CaseFormat,
    },
    /// Write the sensitivity matrix at the max-wind operating point as CSV.
    Sensitivity {
        #[arg(long)]
        case: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = CaseFormat::Native)]
        format: CaseFormat,
    },
    /// Write a synthetic ramp wind profile.
    GenWind {
        #[arg(long)]
        case: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, value_enum, default_value_t = CaseFormat::Native)]
        format: CaseFormat,
    },
    /// Render a records.csv as SVG.
    Plot {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn case_text(spec: &str) -> Result<String> {
    match spec.strip_prefix("builtin:") {
        Some(name) => builtin_case(name)
            .map(str::to_string)
            .with_context(|| format!("unknown builtin case '{name}'")),
        None => read(Path::new(spec)),
    }
}

fn load_case(spec: &str, format: CaseFormat) -> Result<GridCase> {
    let text = case_text(spec)?;
    let case = match format {
        CaseFormat::Native => parse_case(&text),
        CaseFormat::MatpowerTable => parse_matpower(&text),
    };
    case.with_context(|| format!("loading case {spec}"))
}

fn load_scenario(case: &GridCase, spec: &str) -> Result<Scenario> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        if name != "ramp" {
            bail!("unknown builtin scenario '{name}'");
        }
        return Ok(ramp_scenario(case, &RampParams::default()));
    }
    let path = Path::new(spec);
    let manifest = parse_manifest(&read(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut sc = match &manifest.wind {
        Some(w) => {
            let wind = parse_wind_csv(case, &read(&dir.join(w))?)?;
            Scenario {
                name: String::new(),
                duration_steps: manifest.steps.unwrap_or(wind.len()),
                wind,
                load_scale: None,
                task: Task::Curtailment,
            }
        }
        None => ramp_scenario(case, &manifest.ramp.clone().unwrap_or_default()),
    };
    if let Some(l) = &manifest.loads {
        sc.load_scale = Some(parse_load_csv(&read(&dir.join(l))?)?);
    }
    if let Some(task) = manifest.task {
        sc.task = task;
    }
    sc.name = manifest.name.unwrap_or_else(|| {
        path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
    });
    sc.validate(case)?;
    Ok(sc)
}

enum Mode {
    Ofo(ModelMode),
    Fixed(f64),
    Oracle,
}

fn parse_mode(s: &str) -> Result<Mode> {
    Ok(match s {
        "ofo-approx" => Mode::Ofo(ModelMode::Approximate),
        "ofo-perfect" => Mode::Ofo(ModelMode::Perfect),
        "oracle" => Mode::Oracle,
        other => match other.strip_prefix("fixed:") {
            Some(f) => {
                let f: f64 = f.parse().with_context(|| format!("bad fraction '{f}'"))?;
                if !(0.0..=1.0).contains(&f) {
                    bail!("fixed fraction must lie in [0, 1], got {f}");
                }
                Mode::Fixed(f)
            }
            None => bail!("unknown mode '{other}'"),
        },
    })
}

struct RunArgs {
    case: String,
    scenario: String,
    mode: String,
    config: Option<PathBuf>,
    out: PathBuf,
    steps: Option<usize>,
    gtap: Option<f64>,
    noise: Option<f64>,
    noise_seed: u64,
    plot: bool,
    format: CaseFormat,
}

fn run(a: RunArgs) -> Result<bool> {
    let (case, scenario, mode, cfg) = input((|| {
        let case = load_case(&a.case, a.format)?;
        let mut scenario = load_scenario(&case, &a.scenario)?;
        if let Some(n) = a.steps {
            if n == 0 || n > scenario.wind.len() {
                bail!("--steps must lie in 1..={}", scenario.wind.len());
            }
            scenario = scenario.truncated(n);
        }
        let mode = parse_mode(&a.mode)?;
        let mut cfg = match &a.config {
            Some(p) => ControllerConfig::from_text(&read(p)?)?,
            None => ControllerConfig::default(),
        };
        if let Some(g) = a.gtap {
            cfg.g_tap = g;
        }
        if let Some(noise) = a.noise {
            if !(noise >= 0.0 && noise.is_finite()) {
                bail!("--noise must be non-negative");
            }
        }
        cfg.validate()?;
        Ok((case, scenario, mode, cfg))
    })())?;

    let opts = RunOptions { noise: a.noise.unwrap_or(0.0), noise_seed: a.noise_seed, pf: PfOptions::default() };
    info!("running {} steps of '{}' in mode {}", scenario.duration_steps, scenario.name, a.mode);
    let record: RunRecord = match mode {
        Mode::Ofo(m) => run_closed_loop(&case, &scenario, &ControllerConfig { mode: m, ..cfg }, &opts)?,
        Mode::Fixed(f) => run_fixed_curtailment(&case, &scenario, f, &opts)?,
        Mode::Oracle => run_offline_oracle(&case, &scenario, &cfg, &opts)?,
    };

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let csv = records_csv(&case, &record);
    fs::write(a.out.join("records.csv"), &csv)?;
    let summary = summarize(&case, &record);
    fs::write(a.out.join("summary.txt"), summary.to_string())?;
    if a.plot {
        fs::write(a.out.join("run.svg"), plot_svg(&csv)?)?;
    }
    // a closed pipe (e.g. `| head`) is not an error for a summary echo
    let _ = write!(std::io::stdout().lock(), "{summary}");
    Ok(!record.aborted)
}

fn sensitivity(case: &str, out: &Path, format: CaseFormat) -> Result<()> {
    let case = input(load_case(case, format))?;
    let u = max_wind_anchor(&case);
    let d = Disturbance::from_case(&case);
    let pf = PfOptions::default();
    let settled = settle_local_taps(&case, &u, &d, &pf).context("power flow at the max-wind point")?;
    let lin = linearize(&case, &u, &d, &settled.local_tap_state, &pf)?;
    fs::write(out, lin.sensitivity.to_csv(&case))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { case, scenario, mode, config, out, steps, gtap, noise, noise_seed, plot, format } => run(RunArgs {
            case,
            scenario,
            mode,
            config,
            out,
            steps,
            gtap,
            noise,
            noise_seed,
            plot,
            format,
        })
        .map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::from(EXIT_ABORTED) }),
        Command::Validate { case, format } => (|| {
            let text = input(case_text(&case))?;
            let parsed = match format {
                CaseFormat::Native => parse_case_unvalidated(&text).map(|c| validate(&c)),
                CaseFormat::MatpowerTable => parse_matpower(&text).map(|_| Vec::new()),
            };
            let diags = input(parsed.map_err(Into::into))?;
            if diags.is_empty() {
                println!("{case}: ok");
                Ok(ExitCode::SUCCESS)
            } else {
                for d in &diags {
                    println!("{d}");
                }
                Ok(ExitCode::from(EXIT_INPUT))
            }
        })(),
        Command::Sensitivity { case, out, format } => sensitivity(&case, &out, format).map(|_| ExitCode::SUCCESS),
        Command::GenWind { case, out, steps, seed, noise, format } => (|| {
            let case = input(load_case(&case, format))?;
            let mut p = RampParams::default();
            if let Some(n) = steps {
                if n <= p.ramp_end {
                    return input(Err(anyhow::anyhow!("--steps must exceed {}", p.ramp_end)));
                }
                p.steps = n;
            }
            p.seed = seed.unwrap_or(p.seed);
            p.noise = noise.unwrap_or(p.noise);
            fs::write(&out, wind_to_csv(&case, &ramp_scenario(&case, &p)))?;
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Plot { records, out } => (|| {
            let csv = input(read(&records))?;
            fs::write(&out, input(plot_svg(&csv).map_err(Into::into))?)?;
            Ok(ExitCode::SUCCESS)
        })(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<InputError>() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
