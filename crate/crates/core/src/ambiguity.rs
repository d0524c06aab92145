//! The integrated ambiguity set `{(a - phi b) / (1 - phi) : a in A, b in B}`
//! and its functionals: the dual prox step, the l1 norm, skewness, and the
//! generalization-bound evaluator.
//!
//! The set lives on the unit-sum hyperplane but can have negative
//! coordinates once `phi > 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::CappedSimplex;

/// Two capped simplices plus the mixing coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityPair {
    pub a: CappedSimplex,
    pub b: CappedSimplex,
    pub phi: f64,
}

impl AmbiguityPair {
    pub fn new(a: CappedSimplex, b: CappedSimplex, phi: f64) -> Result<Self> {
        if a.n != b.n {
            return Err(Error::dim(a.n, b.n, "ambiguity pair client count"));
        }
        if !(0.0..1.0).contains(&phi) {
            return Err(Error::Contract(format!("phi must lie in [0, 1), got {phi}")));
        }
        Ok(AmbiguityPair { a, b, phi })
    }

    /// Symmetric pair `A = B = Delta_alpha^{n-1}`.
    pub fn symmetric(n: usize, alpha: f64, phi: f64) -> Result<Self> {
        let s = CappedSimplex::new(n, alpha)?;
        AmbiguityPair::new(s, s, phi)
    }

    pub fn n(&self) -> usize {
        self.a.n
    }

    /// Map a witness pair to its integrated weight vector.
    pub fn lambda_of(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let t = 1.0 / (1.0 - self.phi);
        a.iter()
            .zip(b)
            .map(|(&ai, &bi)| (ai - self.phi * bi) * t)
            .collect()
    }

    /// Extreme points of the integrated set: images of vertex pairs.
    /// Intended for small `n`.
    pub fn lambda_vertices(&self) -> Vec<Vec<f64>> {
        let va = self.a.vertices();
        if self.phi == 0.0 {
            return va;
        }
        let vb = self.b.vertices();
        let mut out = Vec::with_capacity(va.len() * vb.len());
        for a in &va {
            for b in &vb {
                out.push(self.lambda_of(a, b));
            }
        }
        out
    }
}

/// A dual iterate with its decomposition witness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub lambda: Vec<f64>,
    pub a_witness: Vec<f64>,
    pub b_witness: Vec<f64>,
}

impl DualPoint {
    /// Uniform starting point: `a = b = lambda = (1/n, ..., 1/n)`.
    pub fn uniform(n: usize) -> Self {
        let u = vec![1.0 / n as f64; n];
        DualPoint {
            lambda: u.clone(),
            a_witness: u.clone(),
            b_witness: u,
        }
    }

    pub fn from_witness(pair: &AmbiguityPair, a: Vec<f64>, b: Vec<f64>) -> Self {
        let lambda = pair.lambda_of(&a, &b);
        DualPoint {
            lambda,
            a_witness: a,
            b_witness: b,
        }
    }

    pub fn validate(&self, pair: &AmbiguityPair, tol: f64) -> Result<()> {
        let sum: f64 = self.lambda.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::Contract(format!("lambda sum {sum} != 1")));
        }
        if !pair.a.contains(&self.a_witness, tol) || !pair.b.contains(&self.b_witness, tol) {
            return Err(Error::Contract("witness outside its simplex".into()));
        }
        let recon = pair.lambda_of(&self.a_witness, &self.b_witness);
        for (l, r) in self.lambda.iter().zip(&recon) {
            if (l - r).abs() > tol {
                return Err(Error::Contract("lambda does not match its witness".into()));
            }
        }
        Ok(())
    }
}

/// Value of the prox objective
/// `-<s, lambda(a,b)> + ||lambda(a,b) - lambda_prev||^2 / (2 sigma)`.
pub fn prox_objective(
    s: &[f64],
    lambda_prev: &[f64],
    sigma: f64,
    pair: &AmbiguityPair,
    a: &[f64],
    b: &[f64],
) -> f64 {
    let lambda = pair.lambda_of(a, b);
    let mut lin = 0.0;
    let mut quad = 0.0;
    for i in 0..lambda.len() {
        lin += s[i] * lambda[i];
        let d = lambda[i] - lambda_prev[i];
        quad += d * d;
    }
    -lin + quad / (2.0 * sigma)
}

/// Joint argmin of the prox objective over `A x B` by alternating exact
/// projections: each block minimization is a capped-simplex projection of an
/// affine target. Returns the new dual point; the objective is convex in the
/// joint variable, so the sweep objective decreases monotonically.
pub fn dual_prox(
    s: &[f64],
    prev: &DualPoint,
    sigma: f64,
    pair: &AmbiguityPair,
) -> Result<DualPoint> {
    let n = pair.n();
    if s.len() != n {
        return Err(Error::dim(n, s.len(), "loss extrapolation"));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::Contract(format!("sigma must be positive, got {sigma}")));
    }
    let phi = pair.phi;
    let one_m = 1.0 - phi;
    let lambda_prev = &prev.lambda;

    let mut a = prev.a_witness.clone();
    let mut b = prev.b_witness.clone();

    // phi = 0: the b block is inert and the a step is a single projection of
    // lambda_prev + sigma * s, identical to a plain prox over A.
    if phi == 0.0 {
        let target: Vec<f64> = (0..n).map(|i| lambda_prev[i] + sigma * s[i]).collect();
        let a = pair.a.project(&target)?;
        return Ok(DualPoint::from_witness(pair, a, b));
    }

    let mut obj = prox_objective(s, lambda_prev, sigma, pair, &a, &b);
    const MAX_SWEEPS: usize = 10_000;
    for _ in 0..MAX_SWEEPS {
        // a-block: proj_A(phi b + (1-phi) lambda_prev + sigma (1-phi) s)
        let target_a: Vec<f64> = (0..n)
            .map(|i| phi * b[i] + one_m * lambda_prev[i] + sigma * one_m * s[i])
            .collect();
        a = pair.a.project(&target_a)?;
        // b-block: proj_B((a - (1-phi) lambda_prev - (1-phi) sigma s) / phi)
        let target_b: Vec<f64> = (0..n)
            .map(|i| (a[i] - one_m * lambda_prev[i] - one_m * sigma * s[i]) / phi)
            .collect();
        b = pair.b.project(&target_b)?;

        let next = prox_objective(s, lambda_prev, sigma, pair, &a, &b);
        let decrease = obj - next;
        obj = next;
        if decrease < 1e-12 * (1.0 + obj.abs()) {
            return Ok(DualPoint::from_witness(pair, a, b));
        }
    }
    Err(Error::Numerical {
        msg: format!("dual prox did not converge within {MAX_SWEEPS} sweeps"),
        last_iterate: pair.lambda_of(&a, &b),
    })
}

/// `max_{lambda} sum |lambda_i|` over the integrated set.
///
/// Exact closed form `(1 + phi)/(1 - phi)` when disjoint supports fit
/// (`support(A) + support(B) <= n`); exact vertex enumeration for `n <= 12`;
/// refused otherwise.
pub fn integrated_l1_norm(pair: &AmbiguityPair) -> Result<f64> {
    if pair.phi == 0.0 {
        return Ok(1.0);
    }
    let n = pair.n();
    if pair.a.support_size() + pair.b.support_size() <= n {
        return Ok((1.0 + pair.phi) / (1.0 - pair.phi));
    }
    if n <= 12 {
        let mut best = 0.0f64;
        for lambda in pair.lambda_vertices() {
            let l1: f64 = lambda.iter().map(|x| x.abs()).sum();
            best = best.max(l1);
        }
        return Ok(best);
    }
    Err(Error::Unsupported(format!(
        "exact l1 norm needs disjoint supports or n <= 12 (n = {n}, overlapping supports); \
         reduce n or use alpha <= 1/2"
    )))
}

/// Skewness of one weight vector: `n sum (lambda_i - 1/n)^2 + 1`.
///
/// The squared deviations are summed in sorted order so the value is
/// invariant under permutations of the coordinates.
pub fn skewness_of(lambda: &[f64]) -> f64 {
    let n = lambda.len() as f64;
    let mut terms: Vec<f64> = lambda
        .iter()
        .map(|&l| {
            let d = l - 1.0 / n;
            d * d
        })
        .collect();
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    n * terms.iter().sum::<f64>() + 1.0
}

/// Leading term of the asymptotic skewness for `A = B = Delta_alpha`:
/// `alpha [ (1/((1-phi) alpha) - 1)^2 + (phi/((1-phi) alpha) + 1)^2 ] + 1`.
///
/// The exact value exceeds this by roughly `(1 - 2 alpha)` contributed by
/// the zero coordinates; see [`skewness_exact`] for ground truth.
pub fn skewness_formula(alpha: f64, phi: f64) -> f64 {
    let u = 1.0 / ((1.0 - phi) * alpha);
    alpha * ((u - 1.0).powi(2) + (phi * u + 1.0).powi(2)) + 1.0
}

/// A disjoint-support extreme point of the integrated set: the `a` witness
/// stacked on the lowest coordinates, the `b` witness on the highest.
pub fn canonical_disjoint_lambda(pair: &AmbiguityPair) -> Result<Vec<f64>> {
    let n = pair.n();
    if pair.a.support_size() + pair.b.support_size() > n {
        return Err(Error::Unsupported(
            "disjoint supports are infeasible for this pair".into(),
        ));
    }
    let mut a = vec![0.0; n];
    let mut idx = 0;
    for _ in 0..pair.a.full_coords() {
        a[idx] = pair.a.cap();
        idx += 1;
    }
    if pair.a.remainder() > 0.0 {
        a[idx] = pair.a.remainder();
    }
    let mut b = vec![0.0; n];
    let mut idx = n;
    for _ in 0..pair.b.full_coords() {
        idx -= 1;
        b[idx] = pair.b.cap();
    }
    if pair.b.remainder() > 0.0 {
        idx -= 1;
        b[idx] = pair.b.remainder();
    }
    Ok(pair.lambda_of(&a, &b))
}

/// Exact maximum skewness over the integrated set.
///
/// Vertex enumeration for `n <= 12`; otherwise the canonical disjoint-support
/// extreme point when it fits (maximizing `||lambda||_2` separates into
/// maximum-norm vertices of `A` and `B` on disjoint supports).
pub fn skewness_exact(pair: &AmbiguityPair) -> Result<f64> {
    let n = pair.n();
    if n <= 12 {
        let mut best = f64::NEG_INFINITY;
        for lambda in pair.lambda_vertices() {
            best = best.max(skewness_of(&lambda));
        }
        return Ok(best);
    }
    canonical_disjoint_lambda(pair).map(|l| skewness_of(&l)).map_err(|_| {
        Error::Unsupported(format!(
            "exact skewness needs n <= 12 or disjoint supports (n = {n})"
        ))
    })
}

/// Norm and skewness of an integrated set, with the exactness route taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetGeometry {
    pub l1_norm: f64,
    pub skewness: f64,
    /// True when both values came from vertex enumeration rather than the
    /// closed forms.
    pub exact: bool,
}

pub fn set_geometry(pair: &AmbiguityPair) -> Result<SetGeometry> {
    let enumerated = pair.n() <= 12;
    Ok(SetGeometry {
        l1_norm: integrated_l1_norm(pair)?,
        skewness: skewness_exact(pair)?,
        exact: enumerated,
    })
}

/// Evaluates the generalization-error bound term
/// `M eps + sqrt(s / 2Nn) (4 sqrt(VC) sqrt(1 + ln(Nn/VC)) + M sqrt(ln(cover/delta)))`.
///
/// `vc_dim = 0` is accepted as the degenerate hypothesis class and drops the
/// VC term.
#[allow(clippy::too_many_arguments)]
pub fn generalization_bound(
    skewness: f64,
    vc_dim: usize,
    covering_count: f64,
    samples_per_client: usize,
    n_clients: usize,
    loss_bound: f64,
    epsilon: f64,
    delta: f64,
) -> Result<f64> {
    let nn = (samples_per_client * n_clients) as f64;
    if nn <= 0.0 {
        return Err(Error::Contract("need a positive sample count".into()));
    }
    if vc_dim as f64 >= nn {
        return Err(Error::Contract(format!(
            "vc dimension {vc_dim} must be below the total sample count {nn}"
        )));
    }
    if skewness < 1.0 || loss_bound < 0.0 || epsilon < 0.0 {
        return Err(Error::Contract("skewness >= 1, M >= 0, eps >= 0 required".into()));
    }
    if !(delta > 0.0 && delta < 1.0) || covering_count < 1.0 {
        return Err(Error::Contract("delta in (0,1) and covering count >= 1 required".into()));
    }
    let vc_term = if vc_dim == 0 {
        0.0
    } else {
        let v = vc_dim as f64;
        4.0 * v.sqrt() * (1.0 + (nn / v).ln()).sqrt()
    };
    let conf_term = loss_bound * (covering_count / delta).ln().max(0.0).sqrt();
    Ok(loss_bound * epsilon + (skewness / (2.0 * nn)).sqrt() * (vc_term + conf_term))
}
