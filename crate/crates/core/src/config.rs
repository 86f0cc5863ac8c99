//! Spin configurations on the discrete torus `Z_n`.
//!
//! A configuration stores one bit per site (`1` for spin `+1`, `0` for
//! spin `-1`). The public surface only ever exposes spins as `i8` values in
//! `{-1, +1}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SITES: usize = 3;

/// A `±1` spin configuration on `Z_n`, `n >= 3`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig {
    n: usize,
    words: Vec<u64>,
}

/// Elementary update of a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    /// Negate the spin at a site.
    Flip(usize),
    /// Swap the spins on the bond `(x, x+1)`.
    Exchange(usize),
}

#[inline]
fn word_count(n: usize) -> usize {
    n.div_ceil(64)
}

impl SpinConfig {
    fn check_size(n: usize) -> Result<()> {
        if n < MIN_SITES {
            return Err(Error::LatticeTooSmall(n));
        }
        Ok(())
    }

    /// All spins equal to `spin` (any positive value means `+1`).
    pub fn uniform(n: usize, spin: i8) -> Result<Self> {
        Self::check_size(n)?;
        let mut words = vec![0u64; word_count(n)];
        if spin > 0 {
            for (i, w) in words.iter_mut().enumerate() {
                let bits = (n - 64 * i).min(64);
                *w = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
            }
        }
        Ok(Self { n, words })
    }

    pub fn all_plus(n: usize) -> Result<Self> {
        Self::uniform(n, 1)
    }

    pub fn all_minus(n: usize) -> Result<Self> {
        Self::uniform(n, -1)
    }

    pub fn from_spins(spins: &[i8]) -> Result<Self> {
        let n = spins.len();
        Self::check_size(n)?;
        let mut cfg = Self::all_minus(n)?;
        for (x, &s) in spins.iter().enumerate() {
            match s {
                1 => cfg.set_bit(x),
                -1 => {}
                _ => return Err(Error::Invalid(format!("spin value {s} at site {x}"))),
            }
        }
        Ok(cfg)
    }

    /// Builds a configuration from a bit mask (bit `x` set means `+1`).
    /// Only meaningful for `n <= 64`.
    pub fn from_mask(n: usize, mask: u64) -> Result<Self> {
        Self::check_size(n)?;
        if n > 64 {
            return Err(Error::Invalid("mask construction needs n <= 64".into()));
        }
        let keep = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        Ok(Self {
            n,
            words: vec![mask & keep],
        })
    }

    /// Bit mask of the configuration, for `n <= 64`.
    pub fn mask(&self) -> u64 {
        debug_assert!(self.n <= 64);
        self.words[0]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spin at site `x` (taken modulo `n`).
    #[inline]
    pub fn spin(&self, x: usize) -> i8 {
        if self.bit(x % self.n) {
            1
        } else {
            -1
        }
    }

    /// Spin at a possibly negative site index, wrapped onto the torus.
    #[inline]
    pub fn spin_at(&self, x: i64) -> i8 {
        self.spin(x.rem_euclid(self.n as i64) as usize)
    }

    pub fn spins(&self) -> Vec<i8> {
        (0..self.n).map(|x| self.spin(x)).collect()
    }

    pub fn count_plus(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    #[inline]
    pub(crate) fn bit(&self, x: usize) -> bool {
        (self.words[x >> 6] >> (x & 63)) & 1 == 1
    }

    #[inline]
    fn set_bit(&mut self, x: usize) {
        self.words[x >> 6] |= 1 << (x & 63);
    }

    #[inline]
    pub(crate) fn toggle(&mut self, x: usize) {
        self.words[x >> 6] ^= 1 << (x & 63);
    }

    /// Branch-free swap of the spins at `x` and `y`.
    #[inline]
    pub(crate) fn swap_bits(&mut self, x: usize, y: usize) {
        let (wx, sx, wy, sy) = (x >> 6, x & 63, y >> 6, y & 63);
        let d = ((self.words[wx] >> sx) ^ (self.words[wy] >> sy)) & 1;
        self.words[wx] ^= d << sx;
        self.words[wy] ^= d << sy;
    }

    /// Swaps the spins on bond `(x, x+1)`; returns whether anything changed.
    #[inline]
    pub(crate) fn exchange_in_place(&mut self, x: usize) -> bool {
        let y = if x + 1 == self.n { 0 } else { x + 1 };
        if self.bit(x) != self.bit(y) {
            self.toggle(x);
            self.toggle(y);
            true
        } else {
            false
        }
    }

    pub(crate) fn apply_in_place(&mut self, event: Event) {
        match event {
            Event::Flip(x) => self.toggle(x % self.n),
            Event::Exchange(x) => {
                self.exchange_in_place(x % self.n);
            }
        }
    }

    /// Returns the configuration after `event`; sites are taken modulo `n`.
    pub fn apply_event(&self, event: Event) -> SpinConfig {
        let mut out = self.clone();
        out.apply_in_place(event);
        out
    }

    /// Normalized magnetization `(1/n) Σ_x η(x)`.
    pub fn magnetization(&self) -> f64 {
        let plus = self.count_plus() as f64;
        (2.0 * plus - self.n as f64) / self.n as f64
    }

    /// Coordinatewise order: `self(x) >= other(x)` for every site.
    pub fn dominates(&self, other: &SpinConfig) -> Result<bool> {
        if self.n != other.n {
            return Err(Error::SizeMismatch(self.n, other.n));
        }
        Ok(self.words.iter().zip(&other.words).all(|(a, b)| b & !a == 0))
    }

    /// Number of sites where `self` is `+1` and `other` is `-1`.
    pub fn excess_over(&self, other: &SpinConfig) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & !b).count_ones() as usize)
            .sum()
    }
}

/// Normalized magnetization of a configuration.
pub fn magnetization(cfg: &SpinConfig) -> f64 {
    cfg.magnetization()
}

/// `true` iff `a(x) >= b(x)` at every site.
pub fn dominates(a: &SpinConfig, b: &SpinConfig) -> Result<bool> {
    a.dominates(b)
}

pub fn apply_event(cfg: &SpinConfig, event: Event) -> SpinConfig {
    cfg.apply_event(event)
}

impl fmt::Display for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for x in 0..self.n {
            f.write_str(if self.bit(x) { "+" } else { "-" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpinConfig({self})")
    }
}

impl FromStr for SpinConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spins = s
            .trim()
            .chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(Error::BadSpinChar(other)),
            })
            .collect::<Result<Vec<i8>>>()?;
        Self::from_spins(&spins)
    }
}

impl Serialize for SpinConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpinConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
