use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use glauber_core::experiments::{ExperimentConfig, ExperimentKind, Tolerances};
use glauber_core::oracle::{build_generator, exact_tmix, tv_curve};
use glauber_core::output::{fmt_f64, run_and_write, tau_table, xi_table, Table};
use glauber_core::pde::Rho0Spec;
use glauber_core::rates::check_reversible_form;
use glauber_core::rng::replica_rng;
use glauber_core::sim::{coalescence_quantile, default_t_max, simulate_observed};
use glauber_core::walks::{occupation_time_sample, replacement_defect, srw_heat_kernel_row, ssep_vs_independent};
use glauber_core::{rates::reaction_profile, RuleSpec, SpinConfig};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "glauber-lab",
    version,
    about = "Glauber-Exclusion simulation and mixing-time experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and record the state at the requested times.
    ///
    /// CSV columns: replica, t, magnetization, config.
    Simulate(SimulateArgs),
    /// Run the monotone coupling from (all plus, all minus).
    ///
    /// Writes tau.csv (replica, tau, timed_out) and xi.csv (replica, t, xi)
    /// into the --out directory and prints the coalescence quantile as JSON.
    Couple(CoupleArgs),
    /// Exact generator analysis for small n.
    ///
    /// Prints JSON {pi, tv_curve: [[t, d]], tmix, reversible}.
    Oracle(OracleArgs),
    /// Compare replica-mean block densities with the reaction-diffusion solution.
    ///
    /// Writes hydro_errors.csv (n, m, t, replicas, linf, l2) and, per n,
    /// hydro_n{n}.csv (block, u, empirical_mean, empirical_se, pde_value).
    Hydro(HydroArgs),
    /// Random-walk diagnostics.
    ///
    /// kernel: CSV y, p. occupation: CSV replica, theta.
    /// coupling: CSV replica, max_displacement.
    /// defect: CSV delta, se, product_mean, replicas.
    Walks(WalksArgs),
    /// Coalescence quantiles over n with an affine fit in log n.
    ///
    /// Writes mix_scan.csv (n, log_n, quantile, ci_low, ci_high, half_width,
    /// exceed_low, exceed_high, timeouts), per-n tau/xi CSVs, and manifest.json.
    MixScan(ExperimentArgs),
    /// Magnetization witness lower bound on the distance to stationarity.
    ///
    /// Writes lower_witness.csv (n, t, witness, lower_bound, threshold),
    /// witness_crossing.csv (n, level, crossing, crossing_se), and manifest.json.
    LowerWitness(ExperimentArgs),
    /// Variance of the magnetization at t = epsilon log n.
    ///
    /// Writes variance_probe.csv (n, t_star, variance, se) and manifest.json.
    VarianceProbe(ExperimentArgs),
    /// Run any experiment described by a TOML configuration file.
    Run(RunArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// dmfl:γ, dmfl-field:γ:μ, chafee-infante:a0:a1:a2 or file:path.
    #[arg(long)]
    rule: RuleSpec,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    t_end: f64,
    /// Initial configuration as a '+'/'-' string; all plus by default.
    #[arg(long)]
    init: Option<SpinConfig>,
    /// Extra observation times before --t-end.
    #[arg(long, value_delimiter = ',')]
    times: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    replicas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoupleArgs {
    #[arg(long)]
    rule: RuleSpec,
    #[arg(long)]
    n: usize,
    /// Timeout; (8/κ) log n by default, 50 log n without κ.
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
    #[arg(long, default_value_t = 200)]
    replicas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    rule: RuleSpec,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,4")]
    times: Vec<f64>,
    /// JSON path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HydroArgs {
    #[arg(long)]
    rule: RuleSpec,
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    m: usize,
    #[arg(long)]
    t_end: f64,
    /// const:c, cos:amplitude or file:path.
    #[arg(long, default_value = "cos:0.8")]
    rho0: Rho0Spec,
    #[arg(long, default_value_t = 200)]
    replicas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum WalkMode {
    Kernel,
    Occupation,
    Coupling,
    Defect,
}

#[derive(Args)]
struct WalksArgs {
    #[arg(long, value_enum)]
    mode: WalkMode,
    /// Torus size; taken from --spins in defect mode.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t_end: f64,
    /// Total jump rate of the walk (kernel mode).
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Starting sites of the marked particles.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    sites: Vec<usize>,
    /// Configuration read by the defect functional.
    #[arg(long)]
    spins: Option<SpinConfig>,
    #[arg(long, default_value_t = 1000)]
    replicas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML configuration; the flags below are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "dmfl:0.25")]
    rule: RuleSpec,
    #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
    #[arg(long, default_value_t = 500)]
    replicas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    t_max: Option<f64>,
    /// Observation grid for the witness; 0..8 in steps of 0.05 by default.
    #[arg(long, value_delimiter = ',')]
    times: Vec<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    stationary_samples: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let rule = a.rule.build()?;
    let init = match a.init {
        Some(c) if c.len() != a.n => bail!("--init has length {}, expected {}", c.len(), a.n),
        Some(c) => c,
        None => SpinConfig::all_plus(a.n)?,
    };
    let mut times = a.times.clone();
    times.push(a.t_end);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut table = Table::new(&["replica", "t", "magnetization", "config"]);
    for r in 0..a.replicas as u64 {
        let mut rng = replica_rng(a.seed, r);
        simulate_observed(&rule, &init, &times, &mut rng, |_, t, c| {
            table.push(vec![
                r.to_string(),
                fmt_f64(t),
                fmt_f64(c.magnetization()),
                c.to_string(),
            ]);
        })?;
    }
    emit(a.out.as_deref(), &table.to_csv())
}

fn couple(a: CoupleArgs) -> Result<()> {
    let rule = a.rule.build()?;
    let t_max = a
        .t_max
        .unwrap_or_else(|| default_t_max(reaction_profile(&rule).kappa, a.n));
    let est = coalescence_quantile(&rule, a.n, a.delta, a.replicas, a.seed, Some(t_max))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    tau_table(&est.samples).write(&a.out.join("tau.csv"))?;
    xi_table(&est.samples).write(&a.out.join("xi.csv"))?;
    println!("{}", serde_json::to_string_pretty(&est)?);
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let rule = a.rule.build()?;
    let gen = build_generator(&rule, a.n)?;
    let d = tv_curve(&gen, &a.times)?;
    let doc = json!({
        "pi": gen.stationary(),
        "tv_curve": a.times.iter().zip(&d).map(|(t, d)| [*t, *d]).collect::<Vec<_>>(),
        "tmix": exact_tmix(&gen, a.delta)?,
        "reversible": check_reversible_form(&rule).is_some(),
    });
    emit(a.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&doc)?))
}

fn write_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let (result, files) = run_and_write(cfg, out)?;
    for f in &files {
        eprintln!("wrote {}", f.display());
    }
    println!("{}", serde_json::to_string_pretty(&result.summary())?);
    if result.pass() == Some(false) {
        eprintln!("tolerance check failed");
    }
    Ok(())
}

fn hydro(a: HydroArgs) -> Result<()> {
    let cfg = ExperimentConfig {
        kind: ExperimentKind::HydroSweep,
        rule: a.rule,
        n: a.n,
        delta: 0.25,
        replicas: a.replicas,
        seed: a.seed,
        times: Vec::new(),
        out_dir: a.out.clone(),
        t_max: None,
        epsilon: None,
        rho0: Some(a.rho0),
        m: Some(a.m),
        t_end: Some(a.t_end),
        k: None,
        stationary_samples: None,
        tolerances: Tolerances::default(),
    };
    write_experiment(&cfg, &a.out)
}

fn walks(a: WalksArgs) -> Result<()> {
    let need_n = || a.n.context("--n is required in this mode");
    let table = match a.mode {
        WalkMode::Kernel => {
            let mut t = Table::new(&["y", "p"]);
            for (y, p) in srw_heat_kernel_row(need_n()?, a.lambda, a.t_end)?.iter().enumerate() {
                t.push(vec![y.to_string(), fmt_f64(*p)]);
            }
            t
        }
        WalkMode::Occupation => {
            let n = need_n()?;
            let mut t = Table::new(&["replica", "theta"]);
            for r in 0..a.replicas as u64 {
                let theta = occupation_time_sample(n, a.t_end, &mut replica_rng(a.seed, r));
                t.push(vec![r.to_string(), fmt_f64(theta)]);
            }
            t
        }
        WalkMode::Coupling => {
            let n = need_n()?;
            let mut t = Table::new(&["replica", "max_displacement"]);
            for r in 0..a.replicas as u64 {
                let run = ssep_vs_independent(n, &a.sites, a.t_end, &mut replica_rng(a.seed, r))?;
                t.push(vec![r.to_string(), run.max_displacement.to_string()]);
            }
            t
        }
        WalkMode::Defect => {
            let cfg = a.spins.as_ref().context("--spins is required in defect mode")?;
            let d = replacement_defect(cfg, &a.sites, a.t_end, a.replicas, a.seed)?;
            let mut t = Table::new(&["delta", "se", "product_mean", "replicas"]);
            t.push(vec![
                fmt_f64(d.delta),
                fmt_f64(d.se),
                fmt_f64(d.product_mean),
                d.replicas.to_string(),
            ]);
            t
        }
    };
    emit(a.out.as_deref(), &table.to_csv())
}

fn experiment(kind: ExperimentKind, a: ExperimentArgs) -> Result<()> {
    if let Some(path) = &a.config {
        let cfg = ExperimentConfig::from_file(path)?;
        if cfg.kind != kind {
            bail!("{} describes a {:?} run", path.display(), cfg.kind);
        }
        return write_experiment(&cfg, &cfg.out_dir);
    }
    let times = if a.times.is_empty() && kind == ExperimentKind::LowerWitness {
        (0..=160).map(|i| i as f64 * 0.05).collect()
    } else {
        a.times
    };
    let cfg = ExperimentConfig {
        kind,
        rule: a.rule,
        n: a.n,
        delta: a.delta,
        replicas: a.replicas,
        seed: a.seed,
        times,
        out_dir: a.out.clone(),
        t_max: a.t_max,
        epsilon: a.epsilon,
        rho0: None,
        m: None,
        t_end: None,
        k: None,
        stationary_samples: a.stationary_samples,
        tolerances: Tolerances::default(),
    };
    write_experiment(&cfg, &a.out)
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&a.config)?;
    let out = a.out.unwrap_or_else(|| cfg.out_dir.clone());
    write_experiment(&cfg, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Couple(a) => couple(a),
        Command::Oracle(a) => oracle(a),
        Command::Hydro(a) => hydro(a),
        Command::Walks(a) => walks(a),
        Command::MixScan(a) => experiment(ExperimentKind::MixScan, a),
        Command::LowerWitness(a) => experiment(ExperimentKind::LowerWitness, a),
        Command::VarianceProbe(a) => experiment(ExperimentKind::VarianceProbe, a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
