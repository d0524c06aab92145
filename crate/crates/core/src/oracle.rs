//! Brute-force ground truth at desk scale: exhaustive grid minimax with
//! exact inner CVaR oracles, the mixing-coefficient sweep, saddle
//! verification, a grid oracle for the dual prox, and an exact saddle solver
//! for quadratic client losses.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{prox_objective, AmbiguityPair, DualPoint};
use crate::error::{Error, Result};
use crate::fairness::relative_unfairness;
use crate::objective::{ClientObjective, LossKind};

/// Axis-aligned evaluation grid, `theta_k = lo + k * step` per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    pub dims: Vec<GridDim>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDim {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

const MAX_CELLS: u128 = 100_000_000;

impl ThetaGrid {
    pub fn new(dims: Vec<GridDim>) -> Result<Self> {
        let grid = ThetaGrid { dims };
        grid.cell_count()?;
        Ok(grid)
    }

    pub fn points_per_dim(&self) -> Vec<usize> {
        self.dims
            .iter()
            .map(|d| ((d.hi - d.lo) / d.step).round() as usize + 1)
            .collect()
    }

    pub fn cell_count(&self) -> Result<u128> {
        if self.dims.is_empty() {
            return Err(Error::Contract("grid needs at least one dimension".into()));
        }
        for d in &self.dims {
            if d.step.is_nan() || d.step <= 0.0 || d.hi < d.lo {
                return Err(Error::Contract(format!(
                    "grid dimension [{}, {}] step {} is invalid",
                    d.lo, d.hi, d.step
                )));
            }
        }
        let mut count: u128 = 1;
        for p in self.points_per_dim() {
            count = count.saturating_mul(p as u128);
            if count > MAX_CELLS {
                return Err(Error::Contract(format!(
                    "grid has more than {MAX_CELLS} cells"
                )));
            }
        }
        Ok(count)
    }

    /// Point at a flattened row-major index (first dimension most
    /// significant), so ascending flat order is lexicographic order.
    pub fn point(&self, mut flat: usize, counts: &[usize]) -> Vec<f64> {
        let mut theta = vec![0.0; self.dims.len()];
        for i in (0..self.dims.len()).rev() {
            let k = flat % counts[i];
            flat /= counts[i];
            theta[i] = self.dims[i].lo + k as f64 * self.dims[i].step;
        }
        theta
    }
}

/// The minimizer of the discrepancy objective with its witnesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleSolution {
    pub theta_star: Vec<f64>,
    /// `cvar_max(A) - phi cvar_min(B)` at `theta_star`.
    pub value: f64,
    pub a_star: Vec<f64>,
    pub b_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
}

pub(crate) fn losses_at(objs: &[ClientObjective], theta: &[f64]) -> Result<Vec<f64>> {
    objs.iter().map(|o| o.value(theta)).collect()
}

fn discrepancy_at(objs: &[ClientObjective], pair: &AmbiguityPair, theta: &[f64]) -> Result<f64> {
    let losses = losses_at(objs, theta)?;
    let (max, _) = pair.a.cvar_max(&losses)?;
    let (min, _) = pair.b.cvar_min(&losses)?;
    Ok(max - pair.phi * min)
}

fn solution_at(objs: &[ClientObjective], pair: &AmbiguityPair, theta: Vec<f64>) -> Result<SaddleSolution> {
    let losses = losses_at(objs, &theta)?;
    let (max, a_star) = pair.a.cvar_max(&losses)?;
    let (min, b_star) = pair.b.cvar_min(&losses)?;
    let lambda_star = pair.lambda_of(&a_star, &b_star);
    Ok(SaddleSolution {
        theta_star: theta,
        value: max - pair.phi * min,
        a_star,
        b_star,
        lambda_star,
    })
}

/// Exhaustive outer minimization of the discrepancy over the grid, exact
/// inner CVaR oracles. Ties resolve to the lexicographically smallest point.
pub fn grid_minimax(
    objs: &[ClientObjective],
    grid: &ThetaGrid,
    pair: &AmbiguityPair,
) -> Result<SaddleSolution> {
    let total = grid.cell_count()? as usize;
    let counts = grid.points_per_dim();
    let chunk = 1 << 14;
    let n_chunks = total.div_ceil(chunk);
    let best = (0..n_chunks)
        .into_par_iter()
        .map(|ci| -> Result<(f64, usize)> {
            let start = ci * chunk;
            let end = (start + chunk).min(total);
            let mut best_val = f64::INFINITY;
            let mut best_idx = start;
            for flat in start..end {
                let theta = grid.point(flat, &counts);
                let v = discrepancy_at(objs, pair, &theta)?;
                if v < best_val {
                    best_val = v;
                    best_idx = flat;
                }
            }
            Ok((best_val, best_idx))
        })
        .try_reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| {
                Ok(if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                })
            },
        )?;
    solution_at(objs, pair, grid.point(best.1, &counts))
}

/// Exact grid solutions and relative unfairness across an ascending list of
/// mixing coefficients.
pub fn phi_sweep(
    objs: &[ClientObjective],
    grid: &ThetaGrid,
    pair_template: &AmbiguityPair,
    phi_values: &[f64],
) -> Result<Vec<(f64, SaddleSolution, f64)>> {
    if phi_values.is_empty() {
        return Err(Error::Contract("phi sweep needs at least one value".into()));
    }
    for w in phi_values.windows(2) {
        if w[1] < w[0] {
            return Err(Error::Contract("phi values must be ascending".into()));
        }
    }
    let mut out = Vec::with_capacity(phi_values.len());
    for &phi in phi_values {
        let pair = AmbiguityPair::new(pair_template.a, pair_template.b, phi)?;
        let sol = grid_minimax(objs, grid, &pair)?;
        let losses = losses_at(objs, &sol.theta_star)?;
        let r = relative_unfairness(&losses, &pair)?;
        out.push((phi, sol, r));
    }
    Ok(out)
}

/// Largest change of the unfairness ratio between `theta` and its axis
/// neighbors on the grid; the per-cell tolerance for monotonicity checks.
pub fn r_ab_grid_sensitivity(
    objs: &[ClientObjective],
    grid: &ThetaGrid,
    pair: &AmbiguityPair,
    theta: &[f64],
) -> Result<f64> {
    let base = relative_unfairness(&losses_at(objs, theta)?, pair)?;
    let mut worst = 0.0f64;
    for (i, dim) in grid.dims.iter().enumerate() {
        for sign in [-1.0, 1.0] {
            let mut probe = theta.to_vec();
            probe[i] += sign * dim.step;
            if probe[i] < dim.lo - 1e-12 || probe[i] > dim.hi + 1e-12 {
                continue;
            }
            let r = relative_unfairness(&losses_at(objs, &probe)?, pair)?;
            worst = worst.max((r - base).abs());
        }
    }
    Ok(worst)
}

/// Two-sided saddle verification at tolerance `tol`: the dual side is exact
/// (the inner maximum over the integrated set has a closed form), the primal
/// side scans the probe grid.
pub fn saddle_check(
    objs: &[ClientObjective],
    pair: &AmbiguityPair,
    theta: &[f64],
    lambda: &[f64],
    tol: f64,
    probe: &ThetaGrid,
) -> Result<bool> {
    let losses = losses_at(objs, theta)?;
    let f_at = |l: &[f64], lam: &[f64]| -> f64 { lam.iter().zip(l).map(|(a, b)| a * b).sum() };
    // (i) lambda maximizes F(theta, .) over the integrated set.
    let (max, _) = pair.a.cvar_max(&losses)?;
    let (min, _) = pair.b.cvar_min(&losses)?;
    let best_dual = (max - pair.phi * min) / (1.0 - pair.phi);
    if best_dual - f_at(&losses, lambda) > tol {
        return Ok(false);
    }
    // (ii) theta minimizes F(., lambda) over the probe grid.
    let here = f_at(&losses, lambda);
    let total = probe.cell_count()? as usize;
    let counts = probe.points_per_dim();
    let ok = (0..total)
        .into_par_iter()
        .try_fold(
            || true,
            |acc, flat| -> Result<bool> {
                if !acc {
                    return Ok(false);
                }
                let point = probe.point(flat, &counts);
                let l = losses_at(objs, &point)?;
                Ok(here <= f_at(&l, lambda) + tol)
            },
        )
        .try_reduce(|| true, |a, b| Ok(a && b))?;
    Ok(ok)
}

/// Grid-argmin oracle for the dual prox objective over `A x B`. Only for
/// `n <= 3`; the grid has `O(step^-(2(n-1)))` points.
pub fn brute_force_prox(
    s: &[f64],
    lambda_prev: &DualPoint,
    sigma: f64,
    pair: &AmbiguityPair,
    grid_step: f64,
) -> Result<DualPoint> {
    let n = pair.n();
    if n > 3 {
        return Err(Error::Unsupported(format!(
            "brute-force prox enumerates a dense product grid; n = {n} > 3 refused"
        )));
    }
    if !(grid_step > 0.0 && grid_step < 1.0) {
        return Err(Error::Contract("grid step must lie in (0, 1)".into()));
    }
    let a_points = simplex_grid(n, pair.a.cap(), grid_step);
    let b_points = if pair.phi == 0.0 {
        vec![lambda_prev.b_witness.clone()]
    } else {
        simplex_grid(n, pair.b.cap(), grid_step)
    };
    let best = a_points
        .par_iter()
        .map(|a| {
            let mut best_val = f64::INFINITY;
            let mut best_b = 0usize;
            for (bi, b) in b_points.iter().enumerate() {
                let v = prox_objective(s, &lambda_prev.lambda, sigma, pair, a, b);
                if v < best_val {
                    best_val = v;
                    best_b = bi;
                }
            }
            (best_val, a.clone(), best_b)
        })
        .reduce(
            || (f64::INFINITY, Vec::new(), 0),
            |x, y| if y.0 < x.0 { y } else { x },
        );
    Ok(DualPoint::from_witness(
        pair,
        best.1,
        b_points[best.2].clone(),
    ))
}

/// All points of `{0 <= x_i <= cap, sum x = 1}` on a lattice of the given
/// step over the first `n - 1` coordinates.
fn simplex_grid(n: usize, cap: f64, step: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let ticks = (cap / step).floor() as usize;
    match n {
        1 => out.push(vec![1.0]),
        2 => {
            for i in 0..=ticks {
                let x0 = (i as f64 * step).min(cap);
                let x1 = 1.0 - x0;
                if x1 >= -1e-12 && x1 <= cap + 1e-12 {
                    out.push(vec![x0, x1.clamp(0.0, cap)]);
                }
            }
        }
        3 => {
            for i in 0..=ticks {
                let x0 = i as f64 * step;
                for j in 0..=ticks {
                    let x1 = j as f64 * step;
                    let x2 = 1.0 - x0 - x1;
                    if x2 >= -1e-12 && x2 <= cap + 1e-12 {
                        out.push(vec![x0, x1, x2.clamp(0.0, cap)]);
                    }
                }
            }
        }
        _ => unreachable!("guarded above"),
    }
    out
}

/// Exact saddle of the minimax problem for quadratic client losses.
///
/// The inner maximum over the integrated set is attained at one of its
/// finitely many extreme points, so the problem is the minimization of a
/// max of strongly convex quadratics. A log-barrier interior-point pass on
/// the epigraph gives the active face; a Newton polish on the active-set
/// KKT system then sharpens the solution, whose parameters are the weighted
/// least-squares point of the recovered dual weights.
pub fn quadratic_saddle(objs: &[ClientObjective], pair: &AmbiguityPair) -> Result<SaddleSolution> {
    let n = objs.len();
    if pair.n() != n {
        return Err(Error::dim(n, pair.n(), "ambiguity set size"));
    }
    for o in objs {
        if o.kind != LossKind::QuadraticRegression {
            return Err(Error::Unsupported(
                "the exact saddle solver handles quadratic losses only".into(),
            ));
        }
    }
    let d = objs[0].dim();
    let zero = vec![0.0; d];
    // Exact quadratic models f_i(theta) = c_i + <g_i, theta> + theta' H_i theta / 2.
    let h_i: Vec<DMatrix<f64>> = objs.iter().map(|o| o.hessian(&zero)).collect::<Result<_>>()?;
    let g_i: Vec<DVector<f64>> = objs
        .iter()
        .map(|o| o.gradient(&zero).map(DVector::from_vec))
        .collect::<Result<_>>()?;
    let c_i: Vec<f64> = objs.iter().map(|o| o.value(&zero)).collect::<Result<_>>()?;

    let mut vertices = pair.lambda_vertices();
    dedupe_exact(&mut vertices);
    if vertices.len() > 5000 {
        return Err(Error::Unsupported(format!(
            "{} extreme points is too many for the exact saddle solver",
            vertices.len()
        )));
    }

    // Per-vertex quadratics q_v.
    let quads: Vec<Quad> = vertices
        .iter()
        .map(|v| {
            let mut h = DMatrix::zeros(d, d);
            let mut g = DVector::zeros(d);
            let mut c = 0.0;
            for i in 0..n {
                if v[i] != 0.0 {
                    h += &h_i[i] * v[i];
                    g += &g_i[i] * v[i];
                    c += v[i] * c_i[i];
                }
            }
            Quad { h, g, c }
        })
        .collect();
    for q in &quads {
        let min_eig = q
            .h
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig <= 0.0 {
            return Err(Error::Config(format!(
                "a vertex-weighted quadratic has curvature {min_eig:.3e} <= 0; \
                 the ambiguity set is too wide for these losses"
            )));
        }
    }

    let (theta_b, w_b, active_b) = barrier_min_max(&quads, d)?;
    let polished = polish_active_set(&quads, theta_b.clone(), w_b.clone(), active_b.clone()).ok();

    // Dual weights -> lambda -> closed-form weighted least squares. The
    // polish can fail on degenerate faces, so keep every candidate and pick
    // whichever parameter vector truly minimizes the max of the quadratics.
    let lambda_from = |weights: &[f64], active: &[usize]| -> Vec<f64> {
        let mut lambda = vec![0.0; n];
        for (w, &v_idx) in weights.iter().zip(active) {
            for i in 0..n {
                lambda[i] += w * vertices[v_idx][i];
            }
        }
        lambda
    };
    let wls_at = |lambda: &[f64]| -> Option<Vec<f64>> {
        let mut h = DMatrix::zeros(d, d);
        let mut g = DVector::zeros(d);
        for i in 0..n {
            h += &h_i[i] * lambda[i];
            g += &g_i[i] * lambda[i];
        }
        h.lu()
            .solve(&(-g))
            .map(|v| v.iter().copied().collect::<Vec<f64>>())
    };
    let max_value = |theta: &[f64]| -> f64 {
        let tv = DVector::from_column_slice(theta);
        quads.iter().map(|q| q.value(&tv)).fold(f64::NEG_INFINITY, f64::max)
    };

    let lambda_b = lambda_from(&w_b, &active_b);
    let mut candidates: Vec<(Vec<f64>, Vec<f64>)> = vec![(theta_b.clone(), lambda_b.clone())];
    if let Some(t) = wls_at(&lambda_b) {
        candidates.push((t, lambda_b));
    }
    if let Some((theta_p, w_p, active_p)) = polished {
        let lambda_p = lambda_from(&w_p, &active_p);
        candidates.push((theta_p, lambda_p.clone()));
        if let Some(t) = wls_at(&lambda_p) {
            candidates.push((t, lambda_p));
        }
    }
    let (theta_star, lambda_star) = candidates
        .into_iter()
        .min_by(|a, b| max_value(&a.0).partial_cmp(&max_value(&b.0)).unwrap())
        .expect("at least the barrier candidate exists");

    let mut sol = solution_at(objs, pair, theta_star)?;
    sol.lambda_star = lambda_star;
    Ok(sol)
}

struct Quad {
    h: DMatrix<f64>,
    g: DVector<f64>,
    c: f64,
}

impl Quad {
    fn value(&self, theta: &DVector<f64>) -> f64 {
        self.c + self.g.dot(theta) + 0.5 * (&self.h * theta).dot(theta)
    }

    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.h * theta + &self.g
    }
}

/// Log-barrier interior point on `min t s.t. q_v(theta) <= t`. Returns the
/// approximate minimizer, the barrier multipliers of the near-active
/// constraints, and their indices.
fn barrier_min_max(quads: &[Quad], d: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<usize>)> {
    let v = quads.len();
    // Feasible start: minimizer of the mean quadratic.
    let mut h_mean = DMatrix::zeros(d, d);
    let mut g_mean = DVector::zeros(d);
    for q in quads {
        h_mean += &q.h / v as f64;
        g_mean += &q.g / v as f64;
    }
    let mut theta = h_mean
        .lu()
        .solve(&(-g_mean))
        .ok_or_else(|| Error::Numerical {
            msg: "mean quadratic solve failed".into(),
            last_iterate: vec![],
        })?;
    let mut t = quads.iter().map(|q| q.value(&theta)).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let scale = 1.0 + t.abs();

    let mut mu = 1.0f64;
    let mu_min = 1e-14 * scale;
    while mu > mu_min {
        // Newton on  t/mu - sum ln(t - q_v(theta)).
        for _ in 0..60 {
            let slacks: Vec<f64> = quads.iter().map(|q| t - q.value(&theta)).collect();
            let mut grad_theta = DVector::zeros(d);
            let mut grad_t = 1.0 / mu;
            let mut h_tt = 0.0;
            let mut h_tth = DVector::zeros(d);
            let mut h_thth = DMatrix::zeros(d, d);
            for (q, &s) in quads.iter().zip(&slacks) {
                let gq = q.grad(&theta);
                grad_theta += &gq / s;
                grad_t -= 1.0 / s;
                h_tt += 1.0 / (s * s);
                h_tth -= &gq / (s * s);
                h_thth += &q.h / s + &gq * gq.transpose() / (s * s);
            }
            // assemble (d+1) system
            let mut big = DMatrix::zeros(d + 1, d + 1);
            let mut rhs = DVector::zeros(d + 1);
            for a in 0..d {
                for b in 0..d {
                    big[(a, b)] = h_thth[(a, b)];
                }
                big[(a, d)] = h_tth[a];
                big[(d, a)] = h_tth[a];
                rhs[a] = -grad_theta[a];
            }
            big[(d, d)] = h_tt;
            rhs[d] = -grad_t;
            let Some(dir) = big.lu().solve(&rhs) else {
                break;
            };
            let decrement = -(rhs.dot(&dir));
            // rhs = -grad, so grad . dir = -rhs . dir; decrement^2 = dir' H dir
            let newton_dec_sq = -decrement;
            // Backtracking line search keeping all slacks positive.
            let mut step = 1.0;
            let d_theta = dir.rows(0, d).into_owned();
            let d_t = dir[d];
            let barrier_val = |th: &DVector<f64>, tt: f64| -> f64 {
                let mut val = tt / mu;
                for q in quads {
                    let s = tt - q.value(th);
                    if s <= 0.0 {
                        return f64::INFINITY;
                    }
                    val -= s.ln();
                }
                val
            };
            let base = barrier_val(&theta, t);
            let mut accepted = false;
            for _ in 0..60 {
                let cand_theta = &theta + &d_theta * step;
                let cand_t = t + d_t * step;
                if barrier_val(&cand_theta, cand_t) <= base - 0.25 * step * newton_dec_sq.abs() {
                    theta = cand_theta;
                    t = cand_t;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted || newton_dec_sq.abs() < 1e-18 * scale {
                break;
            }
        }
        if std::env::var("RELFAIR_DEBUG_BARRIER").is_ok() {
            eprintln!("mu={mu:.3e} t={t:.12} theta={:?}", theta.as_slice());
        }
        mu *= 0.15;
    }

    // Barrier multipliers w_v = mu / slack_v sum to ~1 at the central point.
    let mu_final = mu / 0.15;
    let slacks: Vec<f64> = quads.iter().map(|q| t - q.value(&theta)).collect();
    let mut weights: Vec<(usize, f64)> = slacks
        .iter()
        .enumerate()
        .map(|(i, &s)| (i, mu_final / s))
        .collect();
    let total: f64 = weights.iter().map(|w| w.1).sum();
    for w in weights.iter_mut() {
        w.1 /= total;
    }
    let active: Vec<(usize, f64)> = weights.into_iter().filter(|w| w.1 > 1e-8).collect();
    let idx: Vec<usize> = active.iter().map(|w| w.0).collect();
    let w: Vec<f64> = active.iter().map(|w| w.1).collect();
    Ok((theta.iter().copied().collect(), w, idx))
}

type Polished = (Vec<f64>, Vec<f64>, Vec<usize>);

/// Newton polish of the active-set KKT system
/// `sum_S w_v grad q_v(theta) = 0`, `q_v(theta) = t` on `S`, `sum w = 1`.
///
/// Tie rows are often redundant when several extreme points share a face, so
/// the step is the minimum-norm least-squares solution via SVD. Returns the
/// polished point only if the residual fully converged and the point
/// verifies (nonnegative weights, no violated inactive constraint).
fn polish_active_set(
    quads: &[Quad],
    theta0: Vec<f64>,
    w0: Vec<f64>,
    active: Vec<usize>,
) -> std::result::Result<Polished, ()> {
    let d = theta0.len();
    let m = active.len();
    if m == 0 {
        return Err(());
    }
    let mut theta = DVector::from_vec(theta0);
    let mut w = DVector::from_vec(w0);
    let mut t = active
        .iter()
        .map(|&v| quads[v].value(&theta))
        .sum::<f64>()
        / m as f64;
    let scale = 1.0 + t.abs();
    let dim = d + m + 1;
    let mut converged = false;
    for _ in 0..60 {
        let mut residual = DVector::zeros(dim);
        let mut jac = DMatrix::zeros(dim, dim);
        // R1: stationarity (d rows)
        for (j, &v) in active.iter().enumerate() {
            let gq = quads[v].grad(&theta);
            for a in 0..d {
                residual[a] += w[j] * gq[a];
                jac[(a, d + j)] = gq[a];
                for b in 0..d {
                    jac[(a, b)] += w[j] * quads[v].h[(a, b)];
                }
            }
        }
        // R2: ties (m rows)
        for (j, &v) in active.iter().enumerate() {
            residual[d + j] = quads[v].value(&theta) - t;
            let gq = quads[v].grad(&theta);
            for a in 0..d {
                jac[(d + j, a)] = gq[a];
            }
            jac[(d + j, d + m)] = -1.0;
        }
        // R3: normalization (1 row)
        residual[d + m] = w.iter().sum::<f64>() - 1.0;
        for j in 0..m {
            jac[(d + m, d + j)] = 1.0;
        }

        if residual.norm() < 1e-12 * scale {
            converged = true;
            break;
        }
        let svd = jac.svd(true, true);
        let Ok(step) = svd.solve(&(-residual), 1e-12 * scale) else {
            return Err(());
        };
        if !step.iter().all(|x| x.is_finite()) {
            return Err(());
        }
        for a in 0..d {
            theta[a] += step[a];
        }
        for j in 0..m {
            w[j] += step[d + j];
        }
        t += step[d + m];
    }
    if !converged || w.iter().any(|&x| x < -1e-9) {
        return Err(());
    }
    let tol = 1e-9 * scale;
    for (v, q) in quads.iter().enumerate() {
        if !active.contains(&v) && q.value(&theta) > t + tol {
            return Err(());
        }
    }
    Ok((
        theta.iter().copied().collect(),
        w.iter().map(|x| x.max(0.0)).collect(),
        active,
    ))
}

fn dedupe_exact(vertices: &mut Vec<Vec<f64>>) {
    let mut seen = std::collections::BTreeSet::new();
    vertices.retain(|v| {
        let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        seen.insert(key)
    });
}
