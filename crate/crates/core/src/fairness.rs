//! Fairness functionals over a vector of per-client losses: the relative
//! unfairness ratio, its difference-form discrepancy, Lorenz/Gini, classical
//! inequality measures, the negative utility, and the adaptive selection of
//! the mixing coefficient.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ambiguity::AmbiguityPair;
use crate::error::{Error, Result};
use crate::objective::ClientObjective;
use crate::simplex::CappedSimplex;

/// Ratio of the largest-loss average (over `A`) to the smallest-loss average
/// (over `B`). Scale invariant; `>= 1` whenever `A = B`.
pub fn relative_unfairness(losses: &[f64], pair: &AmbiguityPair) -> Result<f64> {
    let (num, _) = pair.a.cvar_max(losses)?;
    let (den, _) = pair.b.cvar_min(losses)?;
    if den <= 0.0 {
        return Err(Error::Contract(
            "relative unfairness needs a positive smallest-loss average \
             (every weighted loss over B must stay positive)"
                .into(),
        ));
    }
    Ok(num / den)
}

/// Difference form `cvar_max(A) - phi * cvar_min(B)`; the inner value of the
/// training objective. Linear and non-increasing in `phi`.
pub fn discrepancy(losses: &[f64], pair: &AmbiguityPair) -> Result<f64> {
    let (num, _) = pair.a.cvar_max(losses)?;
    let (den, _) = pair.b.cvar_min(losses)?;
    Ok(num - pair.phi * den)
}

/// Points of the Lorenz curve over the sorted losses, as
/// `(x, ell(x), ell(x) - x/2)`. The transformed curve is reported alongside
/// the ordinary one; the Gini coefficient uses the ordinary curve.
pub fn lorenz_points(losses: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    if losses.is_empty() {
        return Err(Error::Contract("need at least one loss".into()));
    }
    if losses.iter().any(|&l| l.is_nan() || l < 0.0) {
        return Err(Error::Contract("losses must be nonnegative".into()));
    }
    let total: f64 = losses.iter().sum();
    if total <= 0.0 {
        return Err(Error::Contract(
            "all-zero losses leave the Lorenz curve undefined".into(),
        ));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut points = Vec::with_capacity(sorted.len() + 1);
    points.push((0.0, 0.0, 0.0));
    let mut acc = 0.0;
    for (k, l) in sorted.iter().enumerate() {
        acc += l;
        let x = (k + 1) as f64 / n;
        let ell = acc / total;
        points.push((x, ell, ell - x / 2.0));
    }
    Ok(points)
}

/// Gini coefficient `1 - 2 integral of ell`, evaluated exactly on the
/// piecewise-linear curve. Zero iff all losses are equal.
pub fn gini(losses: &[f64]) -> Result<f64> {
    let points = lorenz_points(losses)?;
    let mut integral = 0.0;
    for w in points.windows(2) {
        let (x0, y0, _) = w[0];
        let (x1, y1, _) = w[1];
        integral += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(1.0 - 2.0 * integral)
}

/// Average of the top `alpha_top` fraction of losses over the average of the
/// bottom `alpha_bottom` fraction, via the exact CVaR oracles.
pub fn quantile_ratio(losses: &[f64], alpha_top: f64, alpha_bottom: f64) -> Result<f64> {
    let n = losses.len();
    if n == 0 {
        return Err(Error::Contract("need at least one loss".into()));
    }
    let top = CappedSimplex::new(n, alpha_top)?;
    let bottom = CappedSimplex::new(n, alpha_bottom)?;
    let (num, _) = top.cvar_max(losses)?;
    let (den, _) = bottom.cvar_min(losses)?;
    if den <= 0.0 {
        return Err(Error::Contract(
            "quantile ratio needs positive bottom-fraction losses".into(),
        ));
    }
    Ok(num / den)
}

/// The 20:20 ratio, the Palma ratio (top 10% over bottom 40%), and the
/// Atkinson measure with infinite aversion `1 - min/mean`, all expressed on
/// losses through the CVaR oracles.
pub fn classic_measures(losses: &[f64]) -> Result<(f64, f64, f64)> {
    let ratio_2020 = quantile_ratio(losses, 0.2, 0.2)?;
    let palma = quantile_ratio(losses, 0.1, 0.4)?;
    Ok((ratio_2020, palma, atkinson_inf(losses)?))
}

/// Atkinson measure with infinite aversion, `1 - min/mean`. Defined whenever
/// the mean loss is positive, even if some loss is zero.
pub fn atkinson_inf(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Contract("need at least one loss".into()));
    }
    let mean: f64 = losses.iter().sum::<f64>() / losses.len() as f64;
    if mean <= 0.0 {
        return Err(Error::Contract("Atkinson measure needs a positive mean loss".into()));
    }
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(1.0 - min / mean)
}

/// Negative utility `cvar_max(A) * cvar_min(B)^{-1/2}`: the geometric-mean
/// balance of absolute and relative unfairness. Homogeneous of degree 1/2.
pub fn negative_utility(losses: &[f64], pair: &AmbiguityPair) -> Result<f64> {
    let (num, _) = pair.a.cvar_max(losses)?;
    let (den, _) = pair.b.cvar_min(losses)?;
    if den <= 0.0 {
        return Err(Error::Contract(
            "negative utility needs a positive smallest-loss average".into(),
        ));
    }
    Ok(num / den.sqrt())
}

/// True iff the two-sided sandwich
/// `phi + disc/C_b <= ratio <= phi + disc/C_b'` holds for this loss vector,
/// where the caller supplies `C_b >= cvar_min >= C_b' > 0` over a sample.
pub fn ratio_bounds_check(
    losses: &[f64],
    pair: &AmbiguityPair,
    c_b: f64,
    c_b_prime: f64,
) -> Result<bool> {
    let ratio = relative_unfairness(losses, pair)?;
    let disc = discrepancy(losses, pair)?;
    let lower = pair.phi + disc / c_b;
    let upper = pair.phi + disc / c_b_prime;
    let tol = 1e-12 * (1.0 + ratio.abs());
    Ok(lower <= ratio + tol && ratio <= upper + tol)
}

/// Per-run fairness metrics. Serializes with these exact field names. The
/// ratio-form metrics are undefined (null) when a bottom-quantile average is
/// zero; the underlying operations error on such inputs instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub r_ab: Option<f64>,
    pub discrepancy: f64,
    pub gini: f64,
    pub ratio_2020: Option<f64>,
    pub palma: Option<f64>,
    pub atkinson_inf: f64,
    pub utility: Option<f64>,
}

impl FairnessReport {
    pub fn compute(losses: &[f64], pair: &AmbiguityPair) -> Result<Self> {
        // Assumption-1 violations (a zero bottom quantile) null out the
        // ratio metrics; everything else still propagates.
        fn undefined_as_none(r: Result<f64>) -> Result<Option<f64>> {
            match r {
                Ok(v) => Ok(Some(v)),
                Err(Error::Contract(_)) => Ok(None),
                Err(e) => Err(e),
            }
        }
        Ok(FairnessReport {
            r_ab: undefined_as_none(relative_unfairness(losses, pair))?,
            discrepancy: discrepancy(losses, pair)?,
            gini: gini(losses)?,
            ratio_2020: undefined_as_none(quantile_ratio(losses, 0.2, 0.2))?,
            palma: undefined_as_none(quantile_ratio(losses, 0.1, 0.4))?,
            atkinson_inf: atkinson_inf(losses)?,
            utility: undefined_as_none(negative_utility(losses, pair))?,
        })
    }

    /// The unfairness ratio, required to be defined. Errors with the
    /// positivity contract otherwise.
    pub fn r_ab_required(&self) -> Result<f64> {
        self.r_ab.ok_or_else(|| {
            Error::Contract("relative unfairness is undefined for this loss vector".into())
        })
    }
}

/// The scalars entering the mixing-coefficient formula and the selected
/// coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiSelection {
    pub frak_a: f64,
    pub frak_b: f64,
    pub frak_c: f64,
    pub phi_star: f64,
}

const PHI_MAX: f64 = 1.0 - 1e-6;
const CURVATURE_FLOOR: f64 = 1e-10;

/// Closed-form minimizer of the approximate utility
/// `(a + phi^2 c / 2)(b + phi c)^{-1/2}`:
/// `phi = (sqrt(b^2 + 1.5 a c) - b) / (1.5 c)`, with the series limit
/// `a / (2 b)` as `c -> 0`. Clamped into `[0, 1)`.
pub fn select_phi_from_scalars(frak_a: f64, frak_b: f64, frak_c: f64) -> PhiSelection {
    let phi = if frak_c <= CURVATURE_FLOOR {
        frak_a / (2.0 * frak_b)
    } else {
        ((frak_b * frak_b + 1.5 * frak_a * frak_c).sqrt() - frak_b) / (1.5 * frak_c)
    };
    PhiSelection {
        frak_a,
        frak_b,
        frak_c,
        phi_star: phi.clamp(0.0, PHI_MAX),
    }
}

/// Adaptive coefficient selection from the `phi = 0` solution
/// `(theta, a, b)`: evaluates the weighted losses, the `b`-weighted gradient
/// against the inverse `a`-weighted Hessian, and applies the closed form.
pub fn select_phi(
    objs: &[ClientObjective],
    theta0_star: &[f64],
    a0_star: &[f64],
    b0_star: &[f64],
) -> Result<PhiSelection> {
    let n = objs.len();
    if a0_star.len() != n || b0_star.len() != n {
        return Err(Error::dim(n, a0_star.len().min(b0_star.len()), "weights"));
    }
    let d = theta0_star.len();
    let mut frak_a = 0.0;
    let mut frak_b = 0.0;
    let mut weighted_hessian = DMatrix::zeros(d, d);
    let mut weighted_grad = DVector::zeros(d);
    for (i, obj) in objs.iter().enumerate() {
        let value = obj.value(theta0_star)?;
        frak_a += a0_star[i] * value;
        frak_b += b0_star[i] * value;
        if a0_star[i] != 0.0 {
            weighted_hessian += obj.hessian(theta0_star)? * a0_star[i];
        }
        if b0_star[i] != 0.0 {
            let g = obj.gradient(theta0_star)?;
            for k in 0..d {
                weighted_grad[k] += b0_star[i] * g[k];
            }
        }
    }

    let eig = weighted_hessian.clone().symmetric_eigenvalues();
    let min_eig = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max_eig = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min_eig <= 0.0 || max_eig / min_eig > 1e12 {
        return Err(Error::Config(format!(
            "weighted Hessian is singular or ill-conditioned \
             (eigenvalues in [{min_eig:.3e}, {max_eig:.3e}]); add an l2 regularizer"
        )));
    }
    let solved = weighted_hessian
        .lu()
        .solve(&weighted_grad)
        .ok_or_else(|| Error::Config("weighted Hessian solve failed; add an l2 regularizer".into()))?;
    let frak_c = solved.dot(&weighted_grad);
    Ok(select_phi_from_scalars(frak_a, frak_b, frak_c))
}
