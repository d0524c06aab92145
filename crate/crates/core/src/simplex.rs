//! Capped simplices and their exact linear (CVaR) and projection oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The set `{a : 0 <= a_i <= 1/(alpha n), sum a_i = 1}`. Linear maximization
/// over it averages the largest `alpha` fraction of the coefficients' losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CappedSimplex {
    pub n: usize,
    pub alpha: f64,
}

impl CappedSimplex {
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract("capped simplex needs n >= 1".into()));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Contract(format!("alpha must be in (0, 1], got {alpha}")));
        }
        Ok(CappedSimplex { n, alpha })
    }

    /// Per-coordinate cap `1/(alpha n)`, never below `1/n`, clipped to 1
    /// (a coordinate of a unit-sum nonnegative vector cannot exceed 1).
    pub fn cap(&self) -> f64 {
        (1.0 / (self.alpha * self.n as f64)).min(1.0)
    }

    /// Number of coordinates at full cap in an extreme point.
    pub fn full_coords(&self) -> usize {
        (1.0 / self.cap()).floor() as usize
    }

    /// Remainder weight `1 - k * cap` carried by one extra coordinate.
    pub fn remainder(&self) -> f64 {
        let rem = 1.0 - self.full_coords() as f64 * self.cap();
        if rem < 1e-12 {
            0.0
        } else {
            rem
        }
    }

    /// Support size of an extreme point.
    pub fn support_size(&self) -> usize {
        self.full_coords() + (self.remainder() > 0.0) as usize
    }

    pub fn contains(&self, a: &[f64], tol: f64) -> bool {
        a.len() == self.n
            && a.iter().all(|&x| x >= -tol && x <= self.cap() + tol)
            && (a.iter().sum::<f64>() - 1.0).abs() <= tol * self.n as f64
    }

    /// Exact maximum of `sum a_i losses_i` over the set, with its maximizer:
    /// cap weight on the largest losses, the remainder on the next largest.
    /// Ties break toward the lowest index. Losses must be nonnegative.
    pub fn cvar_max(&self, losses: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.cvar_sorted(losses, true)
    }

    /// Mirror of [`cvar_max`] on the smallest losses.
    pub fn cvar_min(&self, losses: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.cvar_sorted(losses, false)
    }

    fn cvar_sorted(&self, losses: &[f64], largest: bool) -> Result<(f64, Vec<f64>)> {
        if losses.len() != self.n {
            return Err(Error::dim(self.n, losses.len(), "losses"));
        }
        if let Some(bad) = losses.iter().find(|&&l| l.is_nan() || l < 0.0) {
            return Err(Error::Contract(format!(
                "losses must be nonnegative and finite, got {bad}"
            )));
        }
        let mut order: Vec<usize> = (0..self.n).collect();
        if largest {
            order.sort_by(|&i, &j| losses[j].partial_cmp(&losses[i]).unwrap().then(i.cmp(&j)));
        } else {
            order.sort_by(|&i, &j| losses[i].partial_cmp(&losses[j]).unwrap().then(i.cmp(&j)));
        }
        let cap = self.cap();
        let k = self.full_coords();
        let rem = self.remainder();
        let mut arg = vec![0.0; self.n];
        let mut chosen: Vec<usize> = order[..k].to_vec();
        for &i in &chosen {
            arg[i] = cap;
        }
        if rem > 0.0 {
            arg[order[k]] = rem;
        }
        // Sum in ascending index order so the value is bit-identical to an
        // enumeration that evaluates the same extreme point.
        chosen.sort_unstable();
        let mut value = 0.0;
        for &i in &chosen {
            value += cap * losses[i];
        }
        if rem > 0.0 {
            value += rem * losses[order[k]];
        }
        Ok((value, arg))
    }

    /// Euclidean projection onto the set via monotone bisection on the
    /// Lagrange shift: `x_i = clamp(y_i - mu, 0, cap)` with `sum x_i = 1`.
    pub fn project(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.n {
            return Err(Error::dim(self.n, point.len(), "point"));
        }
        let cap = self.cap();
        // A cap of exactly 1/n leaves a single feasible point.
        if self.full_coords() == self.n {
            return Ok(vec![cap; self.n]);
        }
        let sum_at = |mu: f64| -> f64 {
            point.iter().map(|&y| (y - mu).clamp(0.0, cap)).sum()
        };
        let max_y = point.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_y = point.iter().cloned().fold(f64::INFINITY, f64::min);
        // sum_at is nonincreasing in mu; bracket the root.
        let mut lo = min_y - cap - 1.0; // sum_at(lo) >= n*min(cap, ...) >= 1
        let mut hi = max_y; // sum_at(hi) = 0 <= 1
        debug_assert!(sum_at(lo) >= 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sum_at(mid) >= 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * (1.0 + lo.abs()) {
                break;
            }
        }
        let mu = 0.5 * (lo + hi);
        Ok(point.iter().map(|&y| (y - mu).clamp(0.0, cap)).collect())
    }

    /// All extreme points: `full_coords` coordinates at cap plus, when the
    /// remainder is nonzero, one extra coordinate carrying it. Intended for
    /// small `n`; the count grows combinatorially.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let cap = self.cap();
        let k = self.full_coords();
        let rem = self.remainder();
        let mut out = Vec::new();
        let mut subset: Vec<usize> = (0..k).collect();
        loop {
            if rem == 0.0 {
                let mut v = vec![0.0; self.n];
                for &i in &subset {
                    v[i] = cap;
                }
                out.push(v);
            } else {
                for extra in 0..self.n {
                    if subset.contains(&extra) {
                        continue;
                    }
                    let mut v = vec![0.0; self.n];
                    for &i in &subset {
                        v[i] = cap;
                    }
                    v[extra] = rem;
                    out.push(v);
                }
            }
            // next k-combination of 0..n
            if k == 0 {
                break;
            }
            let mut i = k;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if subset[i] != i + self.n - k {
                    break;
                }
                if i == 0 {
                    return out;
                }
            }
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
        }
        out
    }
}
