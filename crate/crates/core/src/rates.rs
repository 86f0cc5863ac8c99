//! Translation-invariant flip-rate rules and their analysis.
//!
//! A [`LocalRule`] is the table `c(0, w)` over every window
//! `w ∈ {-1,+1}^{2K+1}` centred on the flipping site. Window positions are
//! numbered `0..2K+1` from left (offset `-K`) to right (offset `+K`); in the
//! packed window index, bit `i` is set iff position `i` carries spin `+1`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::SpinConfig;
use crate::error::{Error, Result};
use crate::poly::Polynomial;

/// Largest supported window half-width.
pub const MAX_RADIUS: usize = 6;

/// Relative tolerance of the reversibility ratio test.
pub const REVERSIBILITY_RTOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalRule {
    radius: usize,
    table: Vec<f64>,
    lambda_max: f64,
    c0: f64,
}

impl LocalRule {
    pub fn from_table(radius: usize, table: Vec<f64>) -> Result<Self> {
        if radius > MAX_RADIUS {
            return Err(Error::RuleParameter(format!(
                "radius {radius} exceeds the supported maximum {MAX_RADIUS}"
            )));
        }
        let width = 2 * radius + 1;
        if table.len() != 1 << width {
            return Err(Error::RuleParameter(format!(
                "radius {radius} needs {} table entries, got {}",
                1usize << width,
                table.len()
            )));
        }
        for (idx, &rate) in table.iter().enumerate() {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(Error::NonPositiveRate {
                    window: window_string(idx, width),
                    rate,
                });
            }
        }
        let lambda_max = table.iter().copied().fold(f64::MIN, f64::max);
        let c0 = table.iter().copied().fold(f64::MAX, f64::min);
        Ok(Self {
            radius,
            table,
            lambda_max,
            c0,
        })
    }

    /// Tabulates `f` over every window (spins listed from offset `-K` to `+K`).
    pub fn from_fn(radius: usize, f: impl Fn(&[i8]) -> f64) -> Result<Self> {
        let width = 2 * radius + 1;
        let mut w = vec![0i8; width];
        let table = (0..1usize << width)
            .map(|idx| {
                unpack_window(idx, &mut w);
                f(&w)
            })
            .collect();
        Self::from_table(radius, table)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn width(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    #[inline]
    pub fn rate_by_index(&self, idx: usize) -> f64 {
        self.table[idx]
    }

    pub fn rate(&self, window: &[i8]) -> f64 {
        self.table[pack_window(window)]
    }

    /// Flip rate `c(x, η)` of site `x` in `cfg`.
    #[inline]
    pub fn rate_at(&self, cfg: &SpinConfig, x: usize) -> f64 {
        self.table[self.window_index(cfg, x)]
    }

    #[inline]
    pub(crate) fn window_index(&self, cfg: &SpinConfig, x: usize) -> usize {
        let n = cfg.len();
        let k = self.radius;
        let mut site = (x + n - k % n) % n;
        let mut idx = 0usize;
        for i in 0..self.width() {
            idx |= (cfg.bit(site) as usize) << i;
            site += 1;
            if site == n {
                site = 0;
            }
        }
        idx
    }

    /// Index of the window centre inside a packed window.
    pub(crate) fn center_bit(&self) -> usize {
        self.radius
    }

    pub fn check_fits(&self, n: usize) -> Result<()> {
        if self.width() > n {
            return Err(Error::WindowTooWide {
                window: self.width(),
                n,
            });
        }
        Ok(())
    }

    /// Writes the rule in the text format read by [`LocalRule::from_file_str`].
    pub fn to_file_string(&self) -> String {
        let mut out = format!("radius {}\n", self.radius);
        for (idx, rate) in self.table.iter().enumerate() {
            out.push_str(&format!("{} {}\n", window_string(idx, self.width()), rate));
        }
        out
    }

    /// Parses the rule text format: a `radius K` line followed by one
    /// `<window> <rate>` line per window, windows spelled with `+`/`-`.
    /// Blank lines and `#` comments are ignored. Every window must appear
    /// exactly once.
    pub fn from_file_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::RuleFile("empty rule file".into()))?;
        let radius: usize = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["radius", k] => k.parse().map_err(|_| Error::RuleFile(format!("bad radius {k:?}")))?,
            _ => return Err(Error::RuleFile(format!("expected 'radius K', got {header:?}"))),
        };
        if radius > MAX_RADIUS {
            return Err(Error::RuleFile(format!("radius {radius} too large")));
        }
        let width = 2 * radius + 1;
        let mut table: Vec<Option<f64>> = vec![None; 1 << width];
        for line in lines {
            let mut parts = line.split_whitespace();
            let (Some(w), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::RuleFile(format!("malformed line {line:?}")));
            };
            let spins = w
                .chars()
                .map(|c| match c {
                    '+' => Ok(1i8),
                    '-' => Ok(-1i8),
                    _ => Err(Error::RuleFile(format!("bad window {w:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if spins.len() != width {
                return Err(Error::RuleFile(format!(
                    "window {w:?} has length {}, expected {width}",
                    spins.len()
                )));
            }
            let rate: f64 = r.parse().map_err(|_| Error::RuleFile(format!("bad rate {r:?}")))?;
            let slot = &mut table[pack_window(&spins)];
            if slot.is_some() {
                return Err(Error::RuleFile(format!("duplicate window {w:?}")));
            }
            *slot = Some(rate);
        }
        let table = table
            .into_iter()
            .enumerate()
            .map(|(idx, r)| r.ok_or_else(|| Error::RuleFile(format!("missing window {}", window_string(idx, width)))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_table(radius, table)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_str(&text)
    }
}

/// Packs spins (offset `-K` first) into a window index.
pub fn pack_window(window: &[i8]) -> usize {
    window
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &s)| acc | ((s > 0) as usize) << i)
}

pub fn unpack_window(idx: usize, out: &mut [i8]) {
    for (i, s) in out.iter_mut().enumerate() {
        *s = if (idx >> i) & 1 == 1 { 1 } else { -1 };
    }
}

pub fn window_string(idx: usize, width: usize) -> String {
    (0..width)
        .map(|i| if (idx >> i) & 1 == 1 { '+' } else { '-' })
        .collect()
}

/// De Masi–Ferrari–Lebowitz rate
/// `c = 1 - γ η(x)(η(x+1) + η(x-1)) + γ² η(x+1) η(x-1)`, `0 <= γ < 1`.
pub fn make_dmfl(gamma: f64) -> Result<LocalRule> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::RuleParameter(format!("dmfl needs 0 <= gamma < 1, got {gamma}")));
    }
    LocalRule::from_fn(1, |w| {
        let (l, c, r) = (w[0] as f64, w[1] as f64, w[2] as f64);
        1.0 - gamma * c * (r + l) + gamma * gamma * r * l
    })
}

/// DMFL rate with external field, `c - (μ/2) η(x)`, `0 <= μ < 2(1-γ)²`.
pub fn make_dmfl_field(gamma: f64, mu: f64) -> Result<LocalRule> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::RuleParameter(format!(
            "dmfl-field needs 0 <= gamma < 1, got {gamma}"
        )));
    }
    let bound = 2.0 * (1.0 - gamma) * (1.0 - gamma);
    if !(0.0..bound).contains(&mu) {
        return Err(Error::RuleParameter(format!(
            "dmfl-field needs 0 <= mu < 2(1-gamma)^2 = {bound}, got {mu}"
        )));
    }
    LocalRule::from_fn(1, |w| {
        let (l, c, r) = (w[0] as f64, w[1] as f64, w[2] as f64);
        1.0 - gamma * c * (r + l) + gamma * gamma * r * l - 0.5 * mu * c
    })
}

/// Chafee–Infante rate: `a0` when both neighbours agree with each other but
/// not with the centre, `a1` when all three agree, `a2` when the neighbours
/// disagree.
pub fn make_chafee_infante(a0: f64, a1: f64, a2: f64) -> Result<LocalRule> {
    if !(a0 > 0.0 && a1 > 0.0 && a2 > 0.0) {
        return Err(Error::RuleParameter(format!(
            "chafee-infante needs positive parameters, got ({a0}, {a1}, {a2})"
        )));
    }
    LocalRule::from_fn(1, |w| {
        let (l, c, r) = (w[0], w[1], w[2]);
        if l != r {
            a2
        } else if l == c {
            a1
        } else {
            a0
        }
    })
}

/// Command-line / config rule designator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RuleSpec {
    Dmfl { gamma: f64 },
    DmflField { gamma: f64, mu: f64 },
    ChafeeInfante { a0: f64, a1: f64, a2: f64 },
    File(PathBuf),
}

impl RuleSpec {
    pub fn build(&self) -> Result<LocalRule> {
        match *self {
            RuleSpec::Dmfl { gamma } => make_dmfl(gamma),
            RuleSpec::DmflField { gamma, mu } => make_dmfl_field(gamma, mu),
            RuleSpec::ChafeeInfante { a0, a1, a2 } => make_chafee_infante(a0, a1, a2),
            RuleSpec::File(ref p) => LocalRule::from_file(p),
        }
    }
}

impl FromStr for RuleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::RuleSpec(s.to_string());
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(RuleSpec::File(PathBuf::from(path)));
        }
        let mut parts = s.split(':');
        let name = parts.next().ok_or_else(bad)?;
        let nums = parts
            .map(|p| p.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        match (name, nums.as_slice()) {
            ("dmfl", &[gamma]) => Ok(RuleSpec::Dmfl { gamma }),
            ("dmfl-field", &[gamma, mu]) => Ok(RuleSpec::DmflField { gamma, mu }),
            ("chafee-infante", &[a0, a1, a2]) => Ok(RuleSpec::ChafeeInfante { a0, a1, a2 }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for RuleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleSpec::Dmfl { gamma } => write!(f, "dmfl:{gamma}"),
            RuleSpec::DmflField { gamma, mu } => write!(f, "dmfl-field:{gamma}:{mu}"),
            RuleSpec::ChafeeInfante { a0, a1, a2 } => write!(f, "chafee-infante:{a0}:{a1}:{a2}"),
            RuleSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl TryFrom<String> for RuleSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RuleSpec> for String {
    fn from(r: RuleSpec) -> String {
        r.to_string()
    }
}

/// Checks attractiveness exhaustively: for every pair of windows `a >= b`
/// agreeing at the centre, `c(a) <= c(b)` when the centre is `+1` and
/// `c(a) >= c(b)` when it is `-1`.
pub fn check_attractive(rule: &LocalRule) -> bool {
    let width = rule.width();
    let center = 1usize << rule.center_bit();
    let size = 1usize << width;
    for a in 0..size {
        for b in 0..size {
            // a >= b coordinatewise, same centre spin
            if b & !a != 0 || (a ^ b) & center != 0 {
                continue;
            }
            let (ca, cb) = (rule.table[a], rule.table[b]);
            let ok = if a & center != 0 { ca <= cb } else { ca >= cb };
            if !ok {
                return false;
            }
        }
    }
    true
}

/// Fourier coefficients of `-2 η(0) c(0, η)` in the basis of elementary
/// local functions `Π_{x∈I} η(x)`, `I ⊆ {-K, …, K}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementaryExpansion {
    radius: usize,
    /// `coefficients[mask]` is `a_I` for the subset encoded by `mask`.
    coefficients: Vec<f64>,
}

impl ElementaryExpansion {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn coefficient(&self, subset_mask: usize) -> f64 {
        self.coefficients[subset_mask]
    }

    /// Coefficient for a subset given as window offsets in `-K..=K`.
    pub fn coefficient_of(&self, offsets: &[i64]) -> f64 {
        let k = self.radius as i64;
        let mask = offsets.iter().fold(0usize, |m, &o| m | 1 << (o + k) as usize);
        self.coefficients[mask]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Non-negligible terms as `(offsets, a_I)`.
    pub fn terms(&self, tol: f64) -> Vec<(Vec<i64>, f64)> {
        let k = self.radius as i64;
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, a)| a.abs() > tol)
            .map(|(mask, &a)| {
                let offs = (0..2 * self.radius + 1)
                    .filter(|i| (mask >> i) & 1 == 1)
                    .map(|i| i as i64 - k)
                    .collect();
                (offs, a)
            })
            .collect()
    }

    /// `Σ_I a_I Π_{x∈I} w(x)` at a packed window.
    pub fn evaluate(&self, window_idx: usize) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(mask, &a)| {
                // parity of minus-spins inside I
                let minus = (mask & !window_idx).count_ones();
                if minus.is_multiple_of(2) {
                    a
                } else {
                    -a
                }
            })
            .sum()
    }
}

/// Expands `-2 η(0) c(0, η)` by a fast Walsh–Hadamard transform over the
/// window.
pub fn elementary_expansion(rule: &LocalRule) -> ElementaryExpansion {
    let width = rule.width();
    let size = 1usize << width;
    let center = 1usize << rule.center_bit();
    // spin value of bit 1 is +1, of bit 0 is -1: character χ_I(w) = Π_{i∈I} w_i
    let mut f: Vec<f64> = (0..size)
        .map(|idx| {
            let s0 = if idx & center != 0 { 1.0 } else { -1.0 };
            -2.0 * s0 * rule.table[idx]
        })
        .collect();
    // a_I = 2^{-width} Σ_w f(w) Π_{i∈I} w_i
    let mut h = 1;
    while h < size {
        for block in (0..size).step_by(2 * h) {
            for i in block..block + h {
                // i has bit clear (spin -1), i+h has bit set (spin +1)
                let (minus, plus) = (f[i], f[i + h]);
                f[i] = plus + minus; // I without this position
                f[i + h] = plus - minus; // I with this position
            }
        }
        h <<= 1;
    }
    let norm = 1.0 / size as f64;
    for a in &mut f {
        *a *= norm;
    }
    ElementaryExpansion {
        radius: rule.radius,
        coefficients: f,
    }
}

/// Reaction term and derived quantities of a rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactionProfile {
    /// `R(ρ)`.
    pub reaction: Polynomial,
    /// `V` with `V' = -R`, `V(0) = 0`.
    pub potential: Polynomial,
    /// Linear-decomposition constant: `R(ρ) = -α ρ - G(ρ)`.
    pub alpha: f64,
    /// `G(ρ) = -R(ρ) - α ρ`.
    pub g: Polynomial,
    /// `min_{[-1,1]} V''` when strictly positive.
    pub kappa: Option<f64>,
}

impl ReactionProfile {
    pub fn from_reaction(reaction: Polynomial) -> Self {
        let alpha = -reaction.coeff(1);
        let mut g: Vec<f64> = reaction.coeffs().iter().map(|c| -c).collect();
        if g.len() > 1 {
            g[1] = 0.0;
        }
        let potential = reaction.scale(-1.0).antiderivative();
        let (_, min_v2) = potential.derivative().derivative().min_on(-1.0, 1.0);
        Self {
            reaction,
            potential,
            alpha,
            g: Polynomial::new(g),
            kappa: (min_v2 > 0.0).then_some(min_v2),
        }
    }

    pub fn r(&self, rho: f64) -> f64 {
        self.reaction.eval(rho)
    }

    /// `V''(ρ)`.
    pub fn v2(&self, rho: f64) -> f64 {
        self.potential.derivative().derivative().eval(rho)
    }
}

/// `R(ρ) = E_{ν_ρ}[-2 η(0) c(0, η)]` computed as `Σ_I a_I ρ^{|I|}`.
pub fn reaction_profile(rule: &LocalRule) -> ReactionProfile {
    profile_from_expansion(&elementary_expansion(rule))
}

pub fn profile_from_expansion(exp: &ElementaryExpansion) -> ReactionProfile {
    let width = 2 * exp.radius + 1;
    let mut r = vec![0.0; width + 1];
    for (mask, &a) in exp.coefficients.iter().enumerate() {
        r[mask.count_ones() as usize] += a;
    }
    ReactionProfile::from_reaction(Polynomial::new(r))
}

/// Certificate that a rule has the form `c = (a1 + a2 η(x)) h(x, η)` with `h`
/// independent of `η(x)`; the stationary law is then a product measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversibilityCertificate {
    pub a1: f64,
    pub a2: f64,
    /// `P(η(x) = +1)` under the stationary product measure.
    pub p_plus: f64,
}

impl ReversibilityCertificate {
    /// Mean spin of the stationary product measure.
    pub fn mean_spin(&self) -> f64 {
        2.0 * self.p_plus - 1.0
    }
}

/// Ratio test: `c(ν, +) / c(ν, -)` must be the same for every neighbour
/// pattern `ν`. `a1, a2` are normalized so that `h ≡ 1` on the all-minus
/// neighbour pattern.
pub fn check_reversible_form(rule: &LocalRule) -> Option<ReversibilityCertificate> {
    let center = 1usize << rule.center_bit();
    let size = 1usize << rule.width();
    let (ref_plus, ref_minus) = (rule.table[center], rule.table[0]);
    for idx in (0..size).filter(|i| i & center == 0) {
        let (plus, minus) = (rule.table[idx | center], rule.table[idx]);
        let lhs = plus * ref_minus;
        let rhs = minus * ref_plus;
        if (lhs - rhs).abs() > REVERSIBILITY_RTOL * lhs.abs().max(rhs.abs()) {
            return None;
        }
    }
    let a1 = 0.5 * (ref_plus + ref_minus);
    let a2 = 0.5 * (ref_plus - ref_minus);
    // detailed balance at one site: p (a1 + a2) = (1 - p)(a1 - a2)
    let p_plus = (a1 - a2) / (2.0 * a1);
    Some(ReversibilityCertificate { a1, a2, p_plus })
}
