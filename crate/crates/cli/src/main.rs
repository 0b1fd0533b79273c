use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use obs_forge::error::{AttackError, Error, RoaError, SimError};
use obs_forge::par::Execution;
use obs_forge::pipeline::{self, DesignBundle, PoleSpec, RunConfig, System};
use obs_forge::sim;

const EXIT_ASSUMPTION: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;
const EXIT_MISMATCH: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "obs-forge", version, about = "Attack-induced observability: synthesis, observer design, region estimates and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Check the standing assumptions on the closed loop
    Validate,
    /// Synthesize the attack and observer and write the design bundle
    Synthesize,
    /// Simulate plant and observer and fit decay envelopes
    Simulate,
    /// Region-of-attraction certificate and Monte Carlo checks
    Roa,
    /// Run the embedded reference example and compare with expected values
    ReproducePaper,
}

#[derive(Args, Debug, Clone)]
struct Opts {
    /// Run configuration or bare system definition (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "obs-forge-out")]
    out: PathBuf,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Projection direction π*, comma separated
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pi: Option<Vec<f64>>,
    #[arg(long, global = true)]
    gamma_fraction: Option<f64>,
    /// Observer poles, comma separated, e.g. -9.5,-2+1j,-2-1j
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    poles: Option<Vec<String>>,
    /// Previously written design bundle (simulate, roa)
    #[arg(long, global = true)]
    bundle: Option<PathBuf>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    z0: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    zhat0: Option<Vec<f64>>,
    /// Run Monte Carlo checks on one thread
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    fn input(message: impl Into<String>) -> Self {
        Self::new(EXIT_INPUT, message)
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Model(_) | Error::Config(_) => EXIT_INPUT,
            Error::Sim(SimError::Divergence { .. }) => EXIT_DIVERGENCE,
            Error::Sim(_) => EXIT_INPUT,
            Error::Roa(RoaError::Infeasible { .. }) => EXIT_INFEASIBLE,
            Error::Attack(AttackError::ProjectionLength { .. }) => EXIT_INPUT,
            Error::Attack(_) | Error::Observer(_) | Error::Roa(_) | Error::Numeric(_) => EXIT_ASSUMPTION,
        };
        Self::new(code, err.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("OBS_FORGE_LOG", "error"))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    let opts = &cli.opts;
    fs::create_dir_all(&opts.out)
        .map_err(|e| Failure::input(format!("cannot create {}: {e}", opts.out.display())))?;
    let execution = if opts.sequential { Execution::Sequential } else { Execution::default() };
    write_meta(&opts.out, cli.command)?;
    match cli.command {
        Command::Validate => validate(opts),
        Command::Synthesize => synthesize(opts, execution),
        Command::Simulate => simulate(opts, execution),
        Command::Roa => roa(opts, execution),
        Command::ReproducePaper => reproduce(opts, execution),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    let path = dir.join(name);
    write(&path, &text)?;
    info!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct Meta {
    command: String,
    version: &'static str,
    unix_time: u64,
}

fn write_meta(dir: &Path, command: Command) -> CmdResult {
    let unix_time = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    write_json(
        dir,
        "meta.json",
        &Meta { command: format!("{command:?}"), version: env!("CARGO_PKG_VERSION"), unix_time },
    )
}

/// A `--config` file holding `plant`/`controller` is a bare system
/// definition run with default parameters; anything else is a run
/// configuration whose `system` path is resolved against its directory.
/// Without `--config` the embedded reference system and parameters are used.
fn load(opts: &Opts) -> Result<(System, RunConfig), Failure> {
    let (system, mut config) = match &opts.config {
        None => (System::reference(), RunConfig::reference()),
        Some(path) => {
            let text = read(path)?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            if value.get("plant").is_some() || value.get("controller").is_some() {
                (System::from_json(&text)?, RunConfig::default())
            } else {
                let config = RunConfig::from_json(&text)?;
                let system = match &config.system {
                    Some(rel) => {
                        let base = path.parent().unwrap_or(Path::new("."));
                        System::from_json(&read(&base.join(rel))?)?
                    }
                    None => System::reference(),
                };
                (system, config)
            }
        }
    };
    apply_overrides(&mut config, opts);
    config.validate()?;
    Ok((system, config))
}

fn apply_overrides(config: &mut RunConfig, opts: &Opts) {
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    if let Some(dt) = opts.dt {
        config.dt = dt;
    }
    if let Some(h) = opts.horizon {
        config.horizon = h;
    }
    if let Some(pi) = &opts.pi {
        config.pi_star = Some(pi.clone());
    }
    if let Some(g) = opts.gamma_fraction {
        config.gamma_fraction = g;
    }
    if let Some(poles) = &opts.poles {
        config.desired_poles = Some(poles.iter().map(|p| PoleSpec::Text(p.clone())).collect());
    }
    if let Some(z0) = &opts.z0 {
        config.z0 = Some(z0.clone());
    }
    if let Some(zhat0) = &opts.zhat0 {
        config.zhat0 = Some(zhat0.clone());
    }
}

fn check_assumptions(system: &System, out: &Path) -> CmdResult {
    let report = system.assumptions()?;
    write_json(out, "assumptions.json", &report)?;
    println!("{:<28} {:<8} value", "check", "status");
    let status = |ok: bool| if ok { "pass" } else { "FAIL" };
    println!("{:<28} {:<8} abscissa {:.6}", "A Hurwitz", status(report.a_hurwitz), report.spectral_abscissa);
    println!(
        "{:<28} {:<8} min gap {:.6}",
        "disjoint spectra", status(report.spectra_disjoint), report.min_eigenvalue_gap
    );
    println!("{:<28} {:<8} norm {:.6}", "B_p C_c nonzero", status(report.bpcc_nonzero), report.bpcc_norm);
    println!("{:<28} {:<8}", "Q_p symmetric", status(report.qp_symmetric));
    if report.all_pass() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_ASSUMPTION, report.failures().join("; ")))
    }
}

fn validate(opts: &Opts) -> CmdResult {
    let (system, _) = load(opts)?;
    check_assumptions(&system, &opts.out)
}

const TUNING_HINT: &str = "region estimate infeasible (c2 <= 0); retune the observer gain L (--poles) or the weights W1/W2 (W1_scale, W2_scale)";

fn synthesize_bundle(opts: &Opts, execution: Execution) -> Result<(DesignBundle, RunConfig), Failure> {
    let (system, config) = load(opts)?;
    check_assumptions(&system, &opts.out)?;
    let bundle = pipeline::synthesize(&system, &config, execution)?;
    write_json(&opts.out, "bundle.json", &bundle)?;
    Ok((bundle, config))
}

fn synthesize(opts: &Opts, execution: Execution) -> CmdResult {
    let (bundle, _) = synthesize_bundle(opts, execution)?;
    let a = &bundle.attack;
    println!("pi_star      {}", fmt_vec(a.pi_star.as_slice()));
    println!("gamma_max    {:.6}", a.gamma_max);
    println!("gamma        {:.6}", a.gamma);
    println!("pi           {}", fmt_vec(a.pi.as_slice()));
    println!("L            {}", fmt_vec(bundle.observer.gain.as_slice()));
    let poles: Vec<String> = bundle
        .observer
        .placed_poles
        .iter()
        .map(|p| if p.im == 0.0 { format!("{:.6}", p.re) } else { format!("{:.6}{:+.6}j", p.re, p.im) })
        .collect();
    println!("placed poles [{}]", poles.join(", "));
    if let Some(w) = &bundle.observer.warning {
        println!("warning      {w}");
    }
    if let Some(est) = &bundle.roa.estimate {
        println!("c1 {:.6}  c2 {:.6}  c3 {:.6}  c4 {:.6}", est.c1, est.c2, est.c3, est.c4);
    }
    if !bundle.roa.feasible {
        let reason = bundle.roa.reason.clone().unwrap_or_default();
        return Err(Failure::new(EXIT_INFEASIBLE, format!("{TUNING_HINT}: {reason}")));
    }
    Ok(())
}

/// Loads `--bundle` (its stored configuration plus command-line
/// overrides, or `--config` when given) or synthesizes a fresh one.
fn bundle_for(opts: &Opts, execution: Execution) -> Result<(DesignBundle, RunConfig), Failure> {
    let Some(path) = &opts.bundle else {
        return synthesize_bundle(opts, execution);
    };
    let bundle = DesignBundle::from_json(&read(path)?)?;
    let config = if opts.config.is_some() {
        load(opts)?.1
    } else {
        let mut config = bundle.config.clone();
        apply_overrides(&mut config, opts);
        config.validate()?;
        config
    };
    Ok((bundle, config))
}

fn simulate(opts: &Opts, execution: Execution) -> CmdResult {
    let (bundle, config) = bundle_for(opts, execution)?;
    let (traj, report) = pipeline::simulate(&bundle, &config)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).expect("writing to memory");
    let csv = String::from_utf8(csv).expect("csv is utf-8");
    write(&opts.out.join("trajectory.csv"), &csv)?;
    write(&opts.out.join("trajectory.gp"), &sim::gnuplot_script(bundle.attack.fbar.nrows(), "trajectory.csv"))?;
    write_json(&opts.out, "simulation.json", &report)?;
    println!("samples      {}", report.samples);
    println!("|z(T)|       {:.3e}", report.final_z_norm);
    println!("|e(T)|       {:.3e}", report.final_e_norm);
    for (name, fit) in [("error fit", report.error_fit), ("state fit", report.state_fit)] {
        match fit {
            Some(f) => println!("{name:<12} alpha {:.4}  kappa {:.4}  r2 {:.4}", f.alpha, f.kappa, f.r_squared),
            None => println!("{name:<12} n/a"),
        }
    }
    Ok(())
}

fn roa(opts: &Opts, execution: Execution) -> CmdResult {
    let (bundle, config) = bundle_for(opts, execution)?;
    let report = pipeline::roa_report(&bundle, &config, execution)?;
    write_json(&opts.out, "roa.json", &report)?;
    let bx = &report.box_check;
    println!(
        "box [-{0}, {0}]: {1}/{2} converged, max transient norm {3:.4}",
        bx.halfwidth, bx.converged, bx.n_samples, bx.max_transient_norm
    );
    if let Some(d) = &report.decay {
        println!(
            "decay check: {}/{} satisfied, worst margin {:.3e}",
            d.satisfied, d.n_samples, d.worst_margin
        );
    }
    if !report.certificate.feasible {
        let reason = report.certificate.reason.clone().unwrap_or_default();
        return Err(Failure::new(EXIT_INFEASIBLE, format!("{TUNING_HINT}: {reason}")));
    }
    Ok(())
}

fn reproduce(opts: &Opts, execution: Execution) -> CmdResult {
    let system = match &opts.config {
        Some(path) => System::from_json(&read(path)?)?,
        None => System::reference(),
    };
    let report = pipeline::reproduce(&system, execution)?;
    write_json(&opts.out, "reproduction.json", &report)?;
    print!("{}", report.table());
    if report.all_pass {
        Ok(())
    } else {
        let names: Vec<&str> = report.failing().iter().map(|r| r.name.as_str()).collect();
        Err(Failure::new(EXIT_MISMATCH, format!("reproduction mismatch in: {}", names.join(", "))))
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}
