//! Reaction-diffusion limit `∂ρ/∂t = ½ ∂²ρ/∂u² + R(ρ)` on `R/Z` and its
//! comparison with block-averaged spin fields.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SpinConfig;
use crate::error::{Error, Result};
use crate::rates::{check_attractive, reaction_profile, LocalRule, ReactionProfile};
use crate::rng::replica_rng;
use crate::sim::simulate_with_rng;

/// Tolerance for PDE values outside `[-1, 1]`.
pub const RANGE_TOL: f64 = 1e-9;

/// Values of a density on the uniform grid of `m` points of `R/Z` at a time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    values: Vec<f64>,
    time: f64,
}

impl DensityField {
    pub fn new(values: Vec<f64>, time: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("density field needs at least one block".into()));
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_nan() || v.abs() > 1.0 + RANGE_TOL)
        {
            return Err(Error::DensityOutOfRange { index, value });
        }
        Ok(Self { values, time })
    }

    /// Grid values `ρ₀(j/m)` of a profile.
    pub fn sample(profile: &Rho0Profile, m: usize) -> Result<Self> {
        Self::new((0..m).map(|j| profile.eval(j as f64 / m as f64)).collect(), 0.0)
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.m() as f64
    }

    /// Averages consecutive groups of `m_out` equal blocks.
    pub fn coarsen(&self, m_out: usize) -> Result<Self> {
        let m = self.m();
        if m_out == 0 || !m.is_multiple_of(m_out) {
            return Err(Error::BlockCount { m: m_out, n: m });
        }
        let b = m / m_out;
        let values = self
            .values
            .chunks(b)
            .map(|c| c.iter().sum::<f64>() / b as f64)
            .collect();
        Ok(Self {
            values,
            time: self.time,
        })
    }
}

/// Explicit finite-difference solution to time `t_end` (forward Euler,
/// central differences, periodic). The step is shrunk so that an integer
/// number of steps lands on `t_end`.
pub fn solve_rd(profile: &ReactionProfile, rho0: &DensityField, t_end: f64, dt: f64) -> Result<DensityField> {
    let mut out = Vec::new();
    solve_rd_observed(profile, rho0, &[t_end], dt, |f| out.push(f))?;
    Ok(out.pop().expect("one output time"))
}

/// Like [`solve_rd`], reporting the field at each of the sorted `times`.
pub fn solve_rd_observed(
    profile: &ReactionProfile,
    rho0: &DensityField,
    times: &[f64],
    dt: f64,
    mut observe: impl FnMut(DensityField),
) -> Result<()> {
    let m = rho0.m();
    let dx = 1.0 / m as f64;
    let bound = dx * dx;
    if !(dt > 0.0 && dt <= bound * (1.0 + 1e-12)) {
        return Err(Error::Unstable { dt, bound });
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Invalid("output times must be sorted".into()));
    }
    let diff = 0.5 / (dx * dx);
    let mut u = rho0.values.clone();
    let mut next = vec![0.0; m];
    let mut t = rho0.time;
    for &target in times {
        if !(target.is_finite() && target >= t) {
            return Err(Error::BadTime(target));
        }
        let span = target - t;
        let steps = (span / dt).ceil() as usize;
        let h = if steps == 0 { 0.0 } else { span / steps as f64 };
        for _ in 0..steps {
            for i in 0..m {
                let left = u[if i == 0 { m - 1 } else { i - 1 }];
                let right = u[if i + 1 == m { 0 } else { i + 1 }];
                next[i] = u[i] + h * (diff * (left - 2.0 * u[i] + right) + profile.r(u[i]));
            }
            std::mem::swap(&mut u, &mut next);
        }
        t = target;
        observe(DensityField::new(u.clone(), t)?);
    }
    Ok(())
}

/// Block averages of the spins over `m` equal blocks.
pub fn empirical_density(cfg: &SpinConfig, m: usize) -> Result<DensityField> {
    let n = cfg.len();
    if m == 0 || !n.is_multiple_of(m) {
        return Err(Error::BlockCount { m, n });
    }
    let b = n / m;
    let values = (0..m)
        .map(|j| (j * b..(j + 1) * b).map(|x| cfg.spin(x) as f64).sum::<f64>() / b as f64)
        .collect();
    Ok(DensityField { values, time: 0.0 })
}

/// Initial density profile on `R/Z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Rho0Spec {
    /// `ρ₀ ≡ c`.
    Const(f64),
    /// `ρ₀(u) = a cos(2πu)`.
    Cos(f64),
    /// Piecewise-constant profile read from a file of block values.
    File(PathBuf),
}

impl Rho0Spec {
    pub fn resolve(&self) -> Result<Rho0Profile> {
        let p = match self {
            Rho0Spec::Const(c) => Rho0Profile::Const(*c),
            Rho0Spec::Cos(a) => Rho0Profile::Cos(*a),
            Rho0Spec::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let values = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(|l| l.parse::<f64>().map_err(|_| Error::ProfileSpec(l.to_string())))
                    .collect::<Result<Vec<f64>>>()?;
                Rho0Profile::Table(values)
            }
        };
        p.validate()?;
        Ok(p)
    }
}

impl FromStr for Rho0Spec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ProfileSpec(s.to_string());
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "const" => Ok(Rho0Spec::Const(arg.parse().map_err(|_| bad())?)),
            "cos" => Ok(Rho0Spec::Cos(arg.parse().map_err(|_| bad())?)),
            "file" if !arg.is_empty() => Ok(Rho0Spec::File(PathBuf::from(arg))),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Rho0Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rho0Spec::Const(c) => write!(f, "const:{c}"),
            Rho0Spec::Cos(a) => write!(f, "cos:{a}"),
            Rho0Spec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl TryFrom<String> for Rho0Spec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Rho0Spec> for String {
    fn from(s: Rho0Spec) -> String {
        s.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Rho0Profile {
    Const(f64),
    Cos(f64),
    /// Block values on the uniform grid; `ρ₀(u)` is the value of the block
    /// containing `u`.
    Table(Vec<f64>),
}

impl Rho0Profile {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Rho0Profile::Const(c) => c.abs() <= 1.0,
            Rho0Profile::Cos(a) => a.abs() <= 1.0,
            Rho0Profile::Table(v) => !v.is_empty() && v.iter().all(|x| x.abs() <= 1.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ProfileSpec(format!("{self:?} is not within [-1, 1]")))
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        let u = u.rem_euclid(1.0);
        match self {
            Rho0Profile::Const(c) => *c,
            Rho0Profile::Cos(a) => a * (2.0 * std::f64::consts::PI * u).cos(),
            Rho0Profile::Table(v) => v[((u * v.len() as f64) as usize).min(v.len() - 1)],
        }
    }

    /// Product configuration with `P(η(x) = +1) = (1 + ρ₀(x/n)) / 2`.
    pub fn sample_config<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SpinConfig> {
        let spins: Vec<i8> = (0..n)
            .map(|x| {
                let p = 0.5 * (1.0 + self.eval(x as f64 / n as f64));
                if rng.random::<f64>() < p {
                    1
                } else {
                    -1
                }
            })
            .collect();
        SpinConfig::from_spins(&spins)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HydroBlock {
    pub block: usize,
    /// Block centre.
    pub u: f64,
    pub empirical_mean: f64,
    pub empirical_se: f64,
    pub pde_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HydroComparison {
    pub n: usize,
    pub m: usize,
    pub t: f64,
    pub replicas: usize,
    pub linf: f64,
    pub l2: f64,
    pub blocks: Vec<HydroBlock>,
}

/// Compares the replica-mean block field at time `t` with the PDE solution.
///
/// The PDE is solved on the `n`-point grid `x/n` from the same profile that
/// seeds the spins, with `dt = dx²/2`, and then averaged over the same `m`
/// blocks as the spins.
pub fn hydro_compare(
    rule: &LocalRule,
    rho0: &Rho0Profile,
    n: usize,
    m: usize,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<HydroComparison> {
    if m == 0 || !n.is_multiple_of(m) {
        return Err(Error::BlockCount { m, n });
    }
    if replicas < 2 {
        return Err(Error::TooFewReplicas { min: 2, got: replicas });
    }
    if !check_attractive(rule) {
        return Err(Error::NotAttractive);
    }
    rule.check_fits(n)?;
    let fields: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let init = rho0.sample_config(n, &mut rng)?;
            let (cfg, _) = simulate_with_rng(rule, &init, t, &mut rng)?;
            Ok(empirical_density(&cfg, m)?.values)
        })
        .collect::<Result<_>>()?;

    let profile = reaction_profile(rule);
    let fine = DensityField::sample(rho0, n)?;
    let dx = 1.0 / n as f64;
    let pde = solve_rd(&profile, &fine, t, 0.5 * dx * dx)?.coarsen(m)?;

    let rf = replicas as f64;
    let mut blocks = Vec::with_capacity(m);
    for j in 0..m {
        let mean = fields.iter().map(|f| f[j]).sum::<f64>() / rf;
        let var = fields.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / (rf - 1.0);
        blocks.push(HydroBlock {
            block: j,
            u: (j as f64 + 0.5) / m as f64,
            empirical_mean: mean,
            empirical_se: (var / rf).sqrt(),
            pde_value: pde.values[j],
        });
    }
    let errs: Vec<f64> = blocks.iter().map(|b| b.empirical_mean - b.pde_value).collect();
    Ok(HydroComparison {
        n,
        m,
        t,
        replicas,
        linf: errs.iter().fold(0.0, |a, e| a.max(e.abs())),
        l2: (errs.iter().map(|e| e * e).sum::<f64>() / m as f64).sqrt(),
        blocks,
    })
}
