//! CSV tables, run manifests and the config-driven experiment runner.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{
    appendix_diag, hydro_sweep, mix_scan, variance_probe, witness_scan, AppendixReport, ExperimentConfig,
    ExperimentKind, HydroSweep, MixScan, VarianceProbe, WitnessScan,
};
use crate::pde::HydroComparison;
use crate::sim::TauSample;

/// In-memory CSV table with a fixed header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Formats a float so that equal values always print identically.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// `replica, tau, timed_out`.
pub fn tau_table(samples: &[TauSample]) -> Table {
    let mut t = Table::new(&["replica", "tau", "timed_out"]);
    for s in samples {
        t.push(vec![s.replica.to_string(), opt(s.tau), s.tau.is_none().to_string()]);
    }
    t
}

/// `replica, t, xi`.
pub fn xi_table(samples: &[TauSample]) -> Table {
    let mut t = Table::new(&["replica", "t", "xi"]);
    for s in samples {
        for p in &s.trace {
            t.push(vec![s.replica.to_string(), fmt_f64(p.t), fmt_f64(p.xi)]);
        }
    }
    t
}

pub fn mix_scan_table(scan: &MixScan) -> Table {
    let mut t = Table::new(&[
        "n",
        "log_n",
        "quantile",
        "ci_low",
        "ci_high",
        "half_width",
        "exceed_low",
        "exceed_high",
        "timeouts",
    ]);
    for r in &scan.rows {
        t.push(vec![
            r.n.to_string(),
            fmt_f64(r.log_n),
            fmt_f64(r.quantile),
            fmt_f64(r.ci_low),
            fmt_f64(r.ci_high),
            fmt_f64(r.half_width),
            fmt_f64(r.exceed_low),
            fmt_f64(r.exceed_high),
            r.timeouts.to_string(),
        ]);
    }
    t
}

pub fn witness_table(scan: &WitnessScan) -> Table {
    let mut t = Table::new(&["n", "t", "witness", "lower_bound", "threshold"]);
    for c in &scan.curves {
        for r in &c.rows {
            t.push(vec![
                c.n.to_string(),
                fmt_f64(r.t),
                fmt_f64(r.witness),
                fmt_f64(r.lower_bound),
                fmt_f64(r.threshold),
            ]);
        }
    }
    t
}

pub fn crossing_table(scan: &WitnessScan) -> Table {
    let mut t = Table::new(&["n", "level", "crossing", "crossing_se"]);
    for c in &scan.curves {
        t.push(vec![
            c.n.to_string(),
            fmt_f64(c.level),
            opt(c.crossing),
            opt(c.crossing_se),
        ]);
    }
    t
}

pub fn variance_table(probe: &VarianceProbe) -> Table {
    let mut t = Table::new(&["n", "t_star", "variance", "se"]);
    for r in &probe.rows {
        t.push(vec![
            r.n.to_string(),
            fmt_f64(r.t_star),
            fmt_f64(r.variance),
            fmt_f64(r.se),
        ]);
    }
    t
}

/// `block, u, empirical_mean, empirical_se, pde_value`.
pub fn hydro_table(cmp: &HydroComparison) -> Table {
    let mut t = Table::new(&["block", "u", "empirical_mean", "empirical_se", "pde_value"]);
    for b in &cmp.blocks {
        t.push(vec![
            b.block.to_string(),
            fmt_f64(b.u),
            fmt_f64(b.empirical_mean),
            fmt_f64(b.empirical_se),
            fmt_f64(b.pde_value),
        ]);
    }
    t
}

pub fn hydro_error_table(sweep: &HydroSweep) -> Table {
    let mut t = Table::new(&["n", "m", "t", "replicas", "linf", "l2"]);
    for r in &sweep.runs {
        t.push(vec![
            r.n.to_string(),
            r.m.to_string(),
            fmt_f64(r.t),
            r.replicas.to_string(),
            fmt_f64(r.linf),
            fmt_f64(r.l2),
        ]);
    }
    t
}

pub fn appendix_table(report: &AppendixReport) -> Table {
    let mut t = Table::new(&["check", "hits", "trials", "frequency", "bound", "slack", "pass"]);
    for c in &report.tails {
        t.push(vec![
            c.name.clone(),
            c.hits.to_string(),
            c.trials.to_string(),
            fmt_f64(c.frequency),
            fmt_f64(c.bound),
            fmt_f64(c.slack),
            c.pass.to_string(),
        ]);
    }
    t
}

pub fn constants_table(report: &AppendixReport) -> Table {
    let mut t = Table::new(&["constant", "c_fit", "holdout_ratio", "pass"]);
    for c in &report.constants {
        t.push(vec![
            c.name.clone(),
            fmt_f64(c.c_fit),
            fmt_f64(c.holdout_ratio),
            c.pass.to_string(),
        ]);
    }
    t
}

/// Provenance record written next to every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub config_sha256: String,
    pub seed: u64,
    pub git_revision: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

/// SHA-256 of the canonical JSON rendering of a config.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

/// Current `HEAD` revision, or `"unknown"` outside a git checkout.
pub fn git_revision() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Everything a run produced, in memory.
#[derive(Clone, Debug)]
pub enum RunResult {
    MixScan(MixScan),
    LowerWitness(WitnessScan),
    VarianceProbe(VarianceProbe),
    HydroSweep(HydroSweep),
    AppendixDiag(AppendixReport),
}

impl RunResult {
    pub fn pass(&self) -> Option<bool> {
        match self {
            RunResult::MixScan(s) => s.pass,
            RunResult::LowerWitness(s) => s.pass,
            RunResult::VarianceProbe(p) => p.pass,
            RunResult::HydroSweep(s) => s.pass,
            RunResult::AppendixDiag(r) => Some(r.pass()),
        }
    }

    /// Named CSV tables, in a fixed order.
    pub fn tables(&self) -> Vec<(String, Table)> {
        match self {
            RunResult::MixScan(s) => {
                let mut v = vec![("mix_scan.csv".to_string(), mix_scan_table(s))];
                for e in &s.estimates {
                    v.push((format!("tau_n{}.csv", e.n), tau_table(&e.samples)));
                    v.push((format!("xi_n{}.csv", e.n), xi_table(&e.samples)));
                }
                v
            }
            RunResult::LowerWitness(s) => vec![
                ("lower_witness.csv".into(), witness_table(s)),
                ("witness_crossing.csv".into(), crossing_table(s)),
            ],
            RunResult::VarianceProbe(p) => vec![("variance_probe.csv".into(), variance_table(p))],
            RunResult::HydroSweep(s) => {
                let mut v = vec![("hydro_errors.csv".to_string(), hydro_error_table(s))];
                for r in &s.runs {
                    v.push((format!("hydro_n{}.csv", r.n), hydro_table(r)));
                }
                v
            }
            RunResult::AppendixDiag(r) => vec![
                ("appendix_tails.csv".into(), appendix_table(r)),
                ("appendix_constants.csv".into(), constants_table(r)),
            ],
        }
    }

    pub fn summary(&self) -> serde_json::Value {
        let v = match self {
            RunResult::MixScan(s) => serde_json::to_value(s),
            RunResult::LowerWitness(s) => serde_json::to_value(FitSummary {
                fit: s.fit.clone(),
                slope_lower: s.slope_lower,
                pass: s.pass,
            }),
            RunResult::VarianceProbe(p) => serde_json::to_value(p),
            RunResult::HydroSweep(s) => {
                serde_json::to_value(s.runs.iter().map(|r| (r.n, r.linf, r.l2)).collect::<Vec<_>>())
            }
            RunResult::AppendixDiag(r) => serde_json::to_value(r),
        };
        v.unwrap_or(serde_json::Value::Null)
    }
}

#[derive(Serialize)]
struct FitSummary {
    fit: Option<crate::stats::LinearFit>,
    slope_lower: Option<f64>,
    pass: Option<bool>,
}

fn need<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing field `{what}` for this experiment kind")))
}

/// Runs the experiment described by `cfg` without touching the filesystem.
pub fn run(cfg: &ExperimentConfig) -> Result<RunResult> {
    let rule = cfg.rule.build()?;
    let tol = &cfg.tolerances;
    Ok(match cfg.kind {
        ExperimentKind::MixScan => RunResult::MixScan(mix_scan(
            &rule,
            &cfg.n,
            cfg.delta,
            cfg.replicas,
            cfg.seed,
            cfg.t_max,
            tol,
        )?),
        ExperimentKind::LowerWitness => {
            if cfg.times.is_empty() {
                return Err(Error::Config("lower-witness needs a `times` grid".into()));
            }
            RunResult::LowerWitness(witness_scan(
                &rule,
                &cfg.n,
                &cfg.times,
                cfg.replicas,
                cfg.stationary_samples.unwrap_or(2000),
                cfg.seed,
                tol,
            )?)
        }
        ExperimentKind::VarianceProbe => RunResult::VarianceProbe(variance_probe(
            &rule,
            &cfg.n,
            cfg.epsilon_or(0.2),
            cfg.replicas,
            cfg.seed,
            tol,
        )?),
        ExperimentKind::HydroSweep => RunResult::HydroSweep(hydro_sweep(
            &rule,
            &cfg.n,
            &need(cfg.rho0.clone(), "rho0")?,
            need(cfg.m, "m")?,
            need(cfg.t_end, "t_end")?,
            cfg.replicas,
            cfg.seed,
            tol,
        )?),
        ExperimentKind::AppendixDiag => RunResult::AppendixDiag(appendix_diag(
            *need(cfg.n.first(), "n")?,
            cfg.k.unwrap_or(4),
            cfg.t_end.unwrap_or(1e4),
            cfg.epsilon_or(0.1),
            cfg.replicas,
            cfg.seed,
        )?),
    })
}

/// Runs `cfg`, writes its CSV tables and `manifest.json` under `out_dir`, and
/// returns the result with the written paths.
pub fn run_and_write(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(RunResult, Vec<PathBuf>)> {
    let start = Instant::now();
    let result = run(cfg)?;
    let wall = start.elapsed().as_secs_f64();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, table) in result.tables() {
        let path = out_dir.join(&name);
        table.write(&path)?;
        written.push(path);
    }
    let manifest = Manifest {
        kind: cfg.kind,
        config_sha256: config_hash(cfg)?,
        seed: cfg.seed,
        git_revision: git_revision(),
        wall_time_s: wall,
        outputs: result.tables().into_iter().map(|(n, _)| n).collect(),
        summary: result.summary(),
    };
    let path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let _ = writeln!(text);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok((result, written))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rendering() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), fmt_f64(0.5)]);
        t.push(vec!["2".into(), fmt_f64(f64::INFINITY)]);
        assert_eq!(t.to_csv(), "a,b\n1,0.5\n2,inf\n");
    }

    #[test]
    fn hash_is_stable() {
        let cfg = ExperimentConfig::from_toml(
            "kind = \"variance-probe\"\nrule = \"dmfl:0.25\"\nn = [16]\nreplicas = 1000\nseed = 3\n",
        )
        .unwrap();
        let h = config_hash(&cfg).unwrap();
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash(&cfg.clone()).unwrap());
        let mut other = cfg.clone();
        other.seed = 4;
        assert_ne!(h, config_hash(&other).unwrap());
    }
}
