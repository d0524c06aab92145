//! Coupled step-size sequences for the primal-dual loop.
//!
//! The accelerating schedule maintains `gamma_{r+1} = gamma_r (1 + drift * tau_r)`
//! with `drift = m_f/4 - M_f(|Lambda|_1 - 1)/2`, and derives
//! `tau_r = tau_0 sqrt(gamma_0 / gamma_r)`, `sigma_r = gamma_r tau_r`,
//! `varsigma_{r+1} = sigma_r / sigma_{r+1}`, `eta_r = tau_r / (J beta)`.
//! The product `tau_r sigma_r = tau_0^2 gamma_0` is an exact identity of the
//! recurrences and is preserved here to rounding error without accumulation,
//! since both factors are derived from `gamma_r` directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the accelerating schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub tau0: f64,
    pub gamma0: f64,
    /// Dual-extrapolation smoothing floor; defaults to `max(1, 2 tau0 M_f)`.
    pub beta: f64,
    /// Local steps per round, at least 2.
    pub j_local: usize,
    pub m_f: f64,
    pub big_m_f: f64,
    /// `|Lambda_phi(A,B)|_1` of the ambiguity set in use.
    pub lambda_l1: f64,
    /// Slack constant in the step-size smallness condition, in (0, 1).
    pub c_alpha: f64,
    /// Loss-vector Lipschitz constant; may be infinite when the parameter
    /// domain is unbounded, which fails the smallness check.
    pub l_lambda_theta: f64,
}

impl ScheduleParams {
    pub fn new(tau0: f64, gamma0: f64, j_local: usize, m_f: f64, big_m_f: f64, lambda_l1: f64) -> Self {
        ScheduleParams {
            tau0,
            gamma0,
            beta: 1.0f64.max(2.0 * tau0 * big_m_f),
            j_local,
            m_f,
            big_m_f,
            lambda_l1,
            c_alpha: 0.5,
            l_lambda_theta: f64::INFINITY,
        }
    }

    /// Contraction coefficient `m_f/4 - M_f(|Lambda|_1 - 1)/2`. Must be
    /// positive for the schedule to accelerate.
    pub fn drift(&self) -> f64 {
        self.m_f / 4.0 - self.big_m_f * (self.lambda_l1 - 1.0) / 2.0
    }

    /// Hard invariants: without these the recurrences are meaningless.
    /// Violation is a configuration error.
    pub fn validate_hard(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.gamma0 > 0.0) {
            return Err(Error::Config("schedule: tau0 and gamma0 must be positive".into()));
        }
        if self.j_local < 2 {
            return Err(Error::Config("schedule: local step count J must be >= 2".into()));
        }
        if !(self.c_alpha > 0.0 && self.c_alpha < 1.0) {
            return Err(Error::Config("schedule: c_alpha must lie in (0, 1)".into()));
        }
        if self.m_f <= 0.0 {
            return Err(Error::Config(
                "schedule: strong convexity m_f = 0; add an l2 regularizer so m_f > 0".into(),
            ));
        }
        if self.beta < 1.0f64.max(2.0 * self.tau0 * self.big_m_f) - 1e-12 {
            return Err(Error::Config(format!(
                "schedule: beta = {} must be >= max(1, 2 tau0 M_f) = {}",
                self.beta,
                1.0f64.max(2.0 * self.tau0 * self.big_m_f)
            )));
        }
        if self.drift() <= 0.0 {
            return Err(Error::Config(format!(
                "schedule: drift m_f/4 - M_f(|Lambda|_1 - 1)/2 = {:.6e} is not positive; \
                 the ambiguity set is too wide for these losses \
                 (need |Lambda|_1 < 1 + 2 m_f / M_f, tighter |Lambda|_1 < 1 + m_f/(2 M_f) here)",
                self.drift()
            )));
        }
        Ok(())
    }

    /// The sufficient smallness conditions of the convergence analysis.
    /// Returns the failed inequalities as human-readable strings; callers
    /// surface them as warnings (or errors in strict mode). They are proof
    /// constants, deliberately conservative, and the recurrences remain
    /// well-defined without them.
    pub fn smallness_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let cap_a = 1.0 / (1200.0 * self.big_m_f * self.lambda_l1);
        let cap_b = 18.0 * (1.0 + 3.0f64.sqrt()) / (self.m_f - 2.0 * self.big_m_f * (self.lambda_l1 - 1.0));
        let cap = cap_a.min(cap_b);
        if self.tau0 > cap {
            out.push(format!(
                "tau0 = {} exceeds min(1/(1200 M_f |Lambda|_1), 18(1+sqrt(3))/(m_f - 2 M_f(|Lambda|_1 - 1))) = {cap:.6e}",
                self.tau0
            ));
        }
        let lhs = 4.0 * self.l_lambda_theta.powi(2) * self.tau0.powi(2) * self.gamma0 / self.c_alpha
            + 27.0 * self.big_m_f * self.tau0;
        if lhs.is_nan() || lhs > 1.0 {
            out.push(format!(
                "4 L^2 tau0^2 gamma0 / c_alpha + 27 M_f tau0 = {lhs:.6e} exceeds 1"
            ));
        }
        out
    }
}

/// One round's step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub round: usize,
    pub tau: f64,
    pub sigma: f64,
    pub gamma: f64,
    /// Extrapolation weight `sigma_{r-1} / sigma_r`; 1.0 at round 0.
    pub varsigma: f64,
    pub eta: f64,
}

/// Accelerating schedule or the fixed rates used in the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ScheduleMode {
    /// The coupled recurrences above.
    Accelerated(ScheduleParams),
    /// Constant `(tau, sigma, eta)`; extrapolation weight 1.
    Fixed { tau: f64, sigma: f64, eta: f64 },
}

impl ScheduleMode {
    pub fn init(&self) -> Result<ScheduleState> {
        match self {
            ScheduleMode::Accelerated(p) => {
                p.validate_hard()?;
                Ok(ScheduleState {
                    round: 0,
                    tau: p.tau0,
                    sigma: p.gamma0 * p.tau0,
                    gamma: p.gamma0,
                    varsigma: 1.0,
                    eta: p.tau0 / (p.j_local as f64 * p.beta),
                })
            }
            ScheduleMode::Fixed { tau, sigma, eta } => {
                if !(*tau > 0.0 && *sigma > 0.0 && *eta > 0.0) {
                    return Err(Error::Config("fixed schedule rates must be positive".into()));
                }
                Ok(ScheduleState {
                    round: 0,
                    tau: *tau,
                    sigma: *sigma,
                    gamma: *sigma / *tau,
                    varsigma: 1.0,
                    eta: *eta,
                })
            }
        }
    }

    pub fn step(&self, state: &ScheduleState) -> ScheduleState {
        match self {
            ScheduleMode::Accelerated(p) => {
                let gamma_next = state.gamma * (1.0 + p.drift() * state.tau);
                // Closed forms of the recurrences: tau_r = tau0 sqrt(g0/g_r),
                // sigma_r = gamma_r tau_r, varsigma = sqrt(g_r / g_{r+1}).
                let tau_next = p.tau0 * (p.gamma0 / gamma_next).sqrt();
                let sigma_next = gamma_next * tau_next;
                ScheduleState {
                    round: state.round + 1,
                    tau: tau_next,
                    sigma: sigma_next,
                    gamma: gamma_next,
                    varsigma: (state.gamma / gamma_next).sqrt(),
                    eta: tau_next / (p.j_local as f64 * p.beta),
                }
            }
            ScheduleMode::Fixed { .. } => ScheduleState {
                round: state.round + 1,
                varsigma: 1.0,
                ..*state
            },
        }
    }
}
