//! Dense real polynomials in one variable, coefficients stored by ascending power.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self::new(vec![0.0])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of `x^k` (zero past the degree).
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() <= 1 {
            return Polynomial::zero();
        }
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    /// Antiderivative vanishing at zero.
    pub fn antiderivative(&self) -> Polynomial {
        let mut out = Vec::with_capacity(self.coeffs.len() + 1);
        out.push(0.0);
        out.extend(self.coeffs.iter().enumerate().map(|(k, &c)| c / (k as f64 + 1.0)));
        Polynomial::new(out)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Real roots inside the closed interval `[lo, hi]`, ascending.
    ///
    /// Critical points of `p` split the interval into monotone pieces; each
    /// piece holds at most one root, found by bisection.
    pub fn roots_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        if self.degree() == 0 {
            return Vec::new();
        }
        if self.degree() == 1 {
            let r = -self.coeffs[0] / self.coeffs[1];
            return if (lo..=hi).contains(&r) { vec![r] } else { Vec::new() };
        }
        let mut knots = vec![lo];
        knots.extend(self.derivative().roots_in(lo, hi));
        knots.push(hi);
        let mut roots: Vec<f64> = Vec::new();
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (fa, fb) = (self.eval(a), self.eval(b));
            let r = if fa == 0.0 {
                Some(a)
            } else if fb == 0.0 {
                Some(b)
            } else if (fa < 0.0) != (fb < 0.0) {
                Some(bisect(|x| self.eval(x), a, b, fa))
            } else {
                None
            };
            if let Some(r) = r {
                if roots.last().is_none_or(|&last| (r - last).abs() > 1e-14) {
                    roots.push(r);
                }
            }
        }
        roots
    }

    /// Minimum over `[lo, hi]`, evaluated at the endpoints and at every
    /// interior critical point.
    pub fn min_on(&self, lo: f64, hi: f64) -> (f64, f64) {
        let mut best = (lo, self.eval(lo));
        let candidates = self
            .derivative()
            .roots_in(lo, hi)
            .into_iter()
            .chain(std::iter::once(hi));
        for x in candidates {
            let v = self.eval(x);
            if v < best.1 {
                best = (x, v);
            }
        }
        best
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calculus_round_trip() {
        let p = Polynomial::new(vec![1.0, -2.0, 0.0, 3.0]);
        assert_eq!(p.antiderivative().derivative(), p);
        assert_eq!(p.derivative().coeffs(), &[-2.0, 0.0, 9.0]);
        assert_eq!(p.eval(2.0), 1.0 - 4.0 + 24.0);
    }

    #[test]
    fn roots_of_cubic() {
        // (x - 0.5)(x + 0.25)(x - 2)
        let p = Polynomial::new(vec![0.25, 0.375, -2.25, 1.0]);
        let r = p.roots_in(-1.0, 1.0);
        assert_eq!(r.len(), 2);
        assert!((r[0] + 0.25).abs() < 1e-12);
        assert!((r[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn minimum_of_quartic() {
        // x^4 - x^2 has minima at ±1/sqrt(2) with value -1/4
        let p = Polynomial::new(vec![0.0, 0.0, -1.0, 0.0, 1.0]);
        let (_, v) = p.min_on(-1.0, 1.0);
        assert!((v + 0.25).abs() < 1e-12);
        let q = Polynomial::new(vec![2.0, 0.0, 0.375]);
        assert_eq!(q.min_on(-1.0, 1.0).1, 2.0);
    }
}
