//! The controlled-averaging primal-dual training loop and its baselines.
//!
//! One round: broadcast exact losses, draw the round's control variates,
//! extrapolate the loss vector, prox the dual weights over the integrated
//! set, run local stochastic updates de-biased by the control variates, and
//! take the aggregated primal step.
//!
//! Within a round the per-client work runs in parallel; the server reduction
//! is a fixed-order fold, so results are independent of worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::ambiguity::{dual_prox, integrated_l1_norm, AmbiguityPair, DualPoint};
use crate::error::{Error, Result};
use crate::fairness::{gini, relative_unfairness};
use crate::objective::{smoothness_constants, ClientObjective, NoiseModel};
use crate::rng::{CounterRng, Domain};
use crate::schedule::{ScheduleMode, ScheduleState};
use crate::simplex::CappedSimplex;

/// Algorithm family. The degenerate variants reuse the same round body with
/// parts switched off, so their equivalences are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Full loop over the integrated ambiguity set.
    ScaffPdIa,
    /// Dual prox directly over `A` (requires `phi = 0`).
    ScaffPd,
    /// Dual frozen uniform, control variates active.
    Scaffold,
    /// Dual frozen uniform, no control variates.
    Fedavg,
    /// Full-gradient projected gradient descent-ascent over `Theta x A`.
    AflPd,
}

/// Parameter domain with closed-form projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "shape")]
pub enum ThetaDomain {
    Unconstrained,
    Ball { radius: f64 },
    Box { lo: f64, hi: f64 },
}

impl ThetaDomain {
    pub fn project(&self, theta: &mut [f64]) {
        match self {
            ThetaDomain::Unconstrained => {}
            ThetaDomain::Ball { radius } => {
                let norm: f64 = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
                if norm > *radius {
                    let scale = radius / norm;
                    for t in theta.iter_mut() {
                        *t *= scale;
                    }
                }
            }
            ThetaDomain::Box { lo, hi } => {
                for t in theta.iter_mut() {
                    *t = t.clamp(*lo, *hi);
                }
            }
        }
    }

    pub fn diameter(&self, dim: usize) -> Option<f64> {
        match self {
            ThetaDomain::Unconstrained => None,
            ThetaDomain::Ball { radius } => Some(2.0 * radius),
            ThetaDomain::Box { lo, hi } => Some((hi - lo) * (dim as f64).sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub variant: Variant,
    pub pair: AmbiguityPair,
    pub rounds: usize,
    #[serde(default = "default_domain")]
    pub domain: ThetaDomain,
}

fn default_domain() -> ThetaDomain {
    ThetaDomain::Unconstrained
}

/// State carried across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub theta: Vec<f64>,
    pub dual: DualPoint,
    pub prev_losses: Vec<f64>,
    pub schedule: ScheduleState,
}

/// Per-round record for trajectories and rate fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub tau: f64,
    pub sigma: f64,
    pub losses: Vec<f64>,
    pub lambda: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_ab: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gini: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub final_theta: Vec<f64>,
    pub final_lambda: Vec<f64>,
    pub rounds: Vec<RoundRecord>,
    pub seed: u64,
    pub warnings: Vec<String>,
    /// Wall time is process-local and excluded from serialized artifacts so
    /// replays stay byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Equality ignores wall time: two runs are equal when they produced the
/// same numbers.
impl PartialEq for RunResult {
    fn eq(&self, other: &Self) -> bool {
        self.final_theta == other.final_theta
            && self.final_lambda == other.final_lambda
            && self.rounds == other.rounds
            && self.seed == other.seed
            && self.warnings == other.warnings
    }
}

/// Weighted fixed-order fold `sum_i w_i v_i`; shared by every variant so
/// equal weights produce bit-equal aggregates.
fn weighted_combine(weights: &[f64], vectors: &[Vec<f64>]) -> Vec<f64> {
    let d = vectors.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for (w, v) in weights.iter().zip(vectors) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

/// Local stochastic update with controlled averaging: `J` steps of
/// `u <- u - eta (grad f_i(u, xi_j) - c_i + c)` from `u = theta`, returning
/// `(theta - u_J) / (eta J)`. Deterministic given the stream key.
#[allow(clippy::too_many_arguments)]
pub fn local_update(
    obj: &ClientObjective,
    theta: &[f64],
    c_i: &[f64],
    c: &[f64],
    eta: f64,
    j_steps: usize,
    noise: &NoiseModel,
    seed: u64,
    client: u64,
    round: u64,
) -> Result<Vec<f64>> {
    if j_steps < 2 {
        return Err(Error::Config("local step count J must be >= 2".into()));
    }
    let mut u = theta.to_vec();
    for j in 1..=j_steps {
        let mut stream = CounterRng::new(seed, Domain::Gradient, client, round, j as u64);
        let g = obj.stochastic_gradient(&u, noise, &mut stream)?;
        for k in 0..u.len() {
            u[k] -= eta * (g[k] - c_i[k] + c[k]);
        }
    }
    let scale = 1.0 / (eta * j_steps as f64);
    Ok(theta
        .iter()
        .zip(&u)
        .map(|(t, uj)| (t - uj) * scale)
        .collect())
}

/// One full round of the primal-dual loop. `state.schedule` holds the rates
/// of the previous round; this steps them first. For the accelerated mode
/// `j_local` must match the schedule's parameter (the local rate divides by
/// it); [`run`] keeps them consistent.
#[allow(clippy::too_many_arguments)]
pub fn run_round(
    objs: &[ClientObjective],
    state: &RoundState,
    spec: &AlgorithmSpec,
    mode: &ScheduleMode,
    j_local: usize,
    noise: &NoiseModel,
    seed: u64,
) -> Result<RoundState> {
    let n = objs.len();
    let sched = mode.step(&state.schedule);
    let r = sched.round as u64;
    let theta = &state.theta;

    // Exact loss broadcast.
    let losses: Vec<f64> = objs
        .par_iter()
        .map(|o| o.value(theta))
        .collect::<Result<_>>()?;

    let uses_control_variates = !matches!(spec.variant, Variant::Fedavg);
    // Control variates: one stochastic draw at step index 0.
    let c_locals: Vec<Vec<f64>> = if uses_control_variates {
        objs.par_iter()
            .enumerate()
            .map(|(i, o)| {
                let mut stream = CounterRng::new(seed, Domain::Gradient, i as u64, r, 0);
                o.stochastic_gradient(theta, noise, &mut stream)
            })
            .collect::<Result<_>>()?
    } else {
        vec![vec![0.0; theta.len()]; n]
    };

    // Dual update on the extrapolated losses.
    let s: Vec<f64> = (0..n)
        .map(|i| (1.0 + sched.varsigma) * losses[i] - sched.varsigma * state.prev_losses[i])
        .collect();
    let dual = match spec.variant {
        Variant::ScaffPdIa => dual_prox(&s, &state.dual, sched.sigma, &spec.pair)?,
        Variant::ScaffPd => {
            let target: Vec<f64> = (0..n)
                .map(|i| state.dual.lambda[i] + sched.sigma * s[i])
                .collect();
            let a = spec.pair.a.project(&target)?;
            DualPoint {
                lambda: a.clone(),
                a_witness: a,
                b_witness: state.dual.b_witness.clone(),
            }
        }
        Variant::Scaffold | Variant::Fedavg => state.dual.clone(),
        Variant::AflPd => {
            return Err(Error::Config(
                "the descent-ascent baseline has its own loop; use afl_baseline or run".into(),
            ))
        }
    };

    let c_global = weighted_combine(&dual.lambda, &c_locals);

    // Local updates, de-biased by (c_i, c).
    let deltas: Vec<Vec<f64>> = objs
        .par_iter()
        .enumerate()
        .map(|(i, o)| {
            local_update(
                o,
                theta,
                &c_locals[i],
                &c_global,
                sched.eta,
                j_local,
                noise,
                seed,
                i as u64,
                r,
            )
        })
        .collect::<Result<_>>()?;

    // Aggregated primal step.
    let aggregate = weighted_combine(&dual.lambda, &deltas);
    let mut theta_next: Vec<f64> = theta
        .iter()
        .zip(&aggregate)
        .map(|(t, a)| t - sched.tau * a)
        .collect();
    spec.domain.project(&mut theta_next);

    Ok(RoundState {
        theta: theta_next,
        dual,
        prev_losses: losses,
        schedule: sched,
    })
}

/// Run-level knobs shared by every variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub j_local: usize,
    pub theta0: Option<Vec<f64>>,
    pub theta_star: Option<Vec<f64>>,
    /// Record per-round fairness metrics (ratio and Gini) in the trajectory.
    pub record_metrics: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            j_local: 5,
            theta0: None,
            theta_star: None,
            record_metrics: true,
        }
    }
}

/// Run `spec.rounds` rounds from the uniform dual and the given (or zero)
/// initial parameters. Records losses, weights, and optional distances per
/// round; replay with the same seed and config is bit-identical.
pub fn run(
    objs: &[ClientObjective],
    spec: &AlgorithmSpec,
    mode: &ScheduleMode,
    noise: &NoiseModel,
    seed: u64,
    options: &RunOptions,
) -> Result<RunResult> {
    let start = Instant::now();
    let n = objs.len();
    if n == 0 {
        return Err(Error::Contract("need at least one client objective".into()));
    }
    if spec.pair.n() != n {
        return Err(Error::dim(n, spec.pair.n(), "ambiguity set size"));
    }
    let d = objs[0].dim();
    for o in objs {
        if o.dim() != d {
            return Err(Error::dim(d, o.dim(), "objective dimension"));
        }
    }
    if spec.variant == Variant::ScaffPd && spec.pair.phi != 0.0 {
        return Err(Error::Config(
            "the phi = 0 variant requires pair.phi = 0; use scaff-pd-ia for phi > 0".into(),
        ));
    }

    let mut warnings = Vec::new();
    if let ScheduleMode::Accelerated(p) = mode {
        for v in p.smallness_violations() {
            warnings.push(format!("schedule smallness condition not met: {v}"));
        }
    }
    // Convergence-theorem norm condition, checked when the constants exist.
    if let Ok(l1) = integrated_l1_norm(&spec.pair) {
        if let Ok(c) = smoothness_constants(objs, spec.domain.diameter(d)) {
            if c.m_f > 0.0 && l1 >= 1.0 + 2.0 * c.m_f / c.big_m_f {
                warnings.push(format!(
                    "|Lambda|_1 = {l1:.4} is not below 1 + 2 m_f / M_f = {:.4}; \
                     convergence is not guaranteed",
                    1.0 + 2.0 * c.m_f / c.big_m_f
                ));
            }
        }
    }

    if spec.variant == Variant::AflPd {
        let (eta, sigma) = match mode {
            ScheduleMode::Fixed { tau, sigma, .. } => (*tau, *sigma),
            ScheduleMode::Accelerated(p) => (p.tau0, p.tau0 * p.gamma0),
        };
        let mut result = afl_baseline(objs, &spec.pair.a, eta, sigma, spec.rounds, spec, options)?;
        result.seed = seed;
        result.warnings = warnings;
        result.wall_time_secs = start.elapsed().as_secs_f64();
        return Ok(result);
    }

    let theta0 = options.theta0.clone().unwrap_or_else(|| vec![0.0; d]);
    if theta0.len() != d {
        return Err(Error::dim(d, theta0.len(), "theta0"));
    }
    let prev_losses: Vec<f64> = objs
        .par_iter()
        .map(|o| o.value(&theta0))
        .collect::<Result<_>>()?;
    let mut state = RoundState {
        theta: theta0,
        dual: DualPoint::uniform(n),
        prev_losses,
        schedule: mode_with_j(mode, options.j_local).init()?,
    };
    let mode = mode_with_j(mode, options.j_local);

    let mut records = Vec::with_capacity(spec.rounds);
    for _ in 0..spec.rounds {
        state = run_round(objs, &state, spec, &mode, options.j_local, noise, seed)?;
        records.push(make_record(&state, options));
    }

    Ok(RunResult {
        final_theta: state.theta,
        final_lambda: state.dual.lambda,
        rounds: records,
        seed,
        warnings,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

fn mode_with_j(mode: &ScheduleMode, j: usize) -> ScheduleMode {
    match mode {
        ScheduleMode::Accelerated(p) => {
            let mut p = *p;
            p.j_local = j;
            ScheduleMode::Accelerated(p)
        }
        fixed => fixed.clone(),
    }
}

fn make_record(state: &RoundState, options: &RunOptions) -> RoundRecord {
    let dist_sq = options.theta_star.as_ref().map(|star| {
        state
            .theta
            .iter()
            .zip(star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    });
    let (r_ab, g) = if options.record_metrics {
        let pair_for_metrics = AmbiguityPair::symmetric(
            state.prev_losses.len(),
            0.2f64.max(1.0 / state.prev_losses.len() as f64),
            0.0,
        )
        .ok();
        (
            pair_for_metrics.and_then(|p| relative_unfairness(&state.prev_losses, &p).ok()),
            gini(&state.prev_losses).ok(),
        )
    } else {
        (None, None)
    };
    RoundRecord {
        round: state.schedule.round,
        tau: state.schedule.tau,
        sigma: state.schedule.sigma,
        losses: state.prev_losses.clone(),
        lambda: state.dual.lambda.clone(),
        dist_sq,
        r_ab,
        gini: g,
    }
}

/// Full-gradient projected gradient descent-ascent over `Theta x A`: the
/// worst-case-weighting baseline without local steps or control variates.
pub fn afl_baseline(
    objs: &[ClientObjective],
    set: &CappedSimplex,
    eta: f64,
    sigma: f64,
    rounds: usize,
    spec: &AlgorithmSpec,
    options: &RunOptions,
) -> Result<RunResult> {
    let start = Instant::now();
    let n = objs.len();
    if set.n != n {
        return Err(Error::dim(n, set.n, "ambiguity set size"));
    }
    let d = objs[0].dim();
    let mut theta = options.theta0.clone().unwrap_or_else(|| vec![0.0; d]);
    let mut a = vec![1.0 / n as f64; n];
    let mut records = Vec::with_capacity(rounds);
    for round in 1..=rounds {
        let losses: Vec<f64> = objs
            .par_iter()
            .map(|o| o.value(&theta))
            .collect::<Result<_>>()?;
        let grads: Vec<Vec<f64>> = objs
            .par_iter()
            .map(|o| o.gradient(&theta))
            .collect::<Result<_>>()?;
        let direction = weighted_combine(&a, &grads);
        for (t, g) in theta.iter_mut().zip(&direction) {
            *t -= eta * g;
        }
        spec.domain.project(&mut theta);
        let target: Vec<f64> = (0..n).map(|i| a[i] + sigma * losses[i]).collect();
        a = set.project(&target)?;
        records.push(RoundRecord {
            round,
            tau: eta,
            sigma,
            losses,
            lambda: a.clone(),
            dist_sq: options.theta_star.as_ref().map(|star| {
                theta
                    .iter()
                    .zip(star)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum()
            }),
            r_ab: None,
            gini: None,
        });
    }
    Ok(RunResult {
        final_theta: theta,
        final_lambda: a,
        rounds: records,
        seed: 0,
        warnings: Vec::new(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
