//! Client loss functions with exact and stochastic first-order oracles.
//!
//! All losses are sample means over the client's shard plus an optional l2
//! term, so smoothness constants do not scale with shard size and one
//! hyperparameter schedule stays valid across unequal shards.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::DataShard;
use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Model parameters; fixed dimension within a run.
pub type ParamVector = Vec<f64>;

/// Which loss family a client optimizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LossKind {
    /// Mean squared residual of a linear model.
    QuadraticRegression,
    /// Mean cross-entropy of a softmax linear classifier.
    MultinomialLogistic { classes: usize },
    /// Mean cross-entropy of a one-hidden-layer tanh network. Nonconvex;
    /// provided for realism, no Hessian or smoothness constants.
    TinyMlp { hidden: usize, classes: usize },
}

/// How stochastic gradients are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum NoiseMode {
    /// Exact gradient plus isotropic Gaussian noise with total variance
    /// `delta_g^2`; the variance bound holds with equality.
    AdditiveIsotropic,
    /// Mean gradient over a uniform with-replacement minibatch.
    Minibatch { batch_size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub delta_g: f64,
    #[serde(flatten)]
    pub mode: NoiseMode,
}

impl NoiseModel {
    pub fn exact() -> Self {
        NoiseModel {
            delta_g: 0.0,
            mode: NoiseMode::AdditiveIsotropic,
        }
    }
}

/// Uniform strong-convexity / smoothness constants across a client set, plus
/// the loss-vector Lipschitz constant when the parameter domain is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub m_f: f64,
    pub big_m_f: f64,
    pub l_lambda_theta: f64,
}

/// One client's loss `f_i` with value, gradient, stochastic gradient, and
/// (for convex kinds) Hessian oracles. Immutable after construction and safe
/// for concurrent reads.
#[derive(Debug, Clone)]
pub struct ClientObjective {
    pub kind: LossKind,
    pub shard: DataShard,
    pub regularizer: f64,
}

impl ClientObjective {
    pub fn new(kind: LossKind, shard: DataShard, regularizer: f64) -> Result<Self> {
        shard.validate()?;
        if regularizer < 0.0 {
            return Err(Error::Contract("regularizer must be nonnegative".into()));
        }
        let obj = ClientObjective {
            kind,
            shard,
            regularizer,
        };
        if let LossKind::MultinomialLogistic { classes } | LossKind::TinyMlp { classes, .. } =
            obj.kind
        {
            if classes < 2 {
                return Err(Error::Contract("need at least two classes".into()));
            }
            for &l in &obj.shard.labels {
                if l < 0.0 || l.fract() != 0.0 || l as usize >= classes {
                    return Err(Error::Contract(format!(
                        "label {l} outside class range 0..{classes}"
                    )));
                }
            }
        }
        Ok(obj)
    }

    /// Parameter dimension `d` expected by the oracles.
    pub fn dim(&self) -> usize {
        let p = self.shard.n_features();
        match self.kind {
            LossKind::QuadraticRegression => p,
            LossKind::MultinomialLogistic { classes } => p * classes,
            LossKind::TinyMlp { hidden, classes } => hidden * p + hidden + classes * hidden + classes,
        }
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::dim(self.dim(), theta.len(), "theta"));
        }
        Ok(())
    }

    /// Mean loss over the shard plus the l2 term. Deterministic, nonnegative.
    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        self.check_dim(theta)?;
        let data = self.data_loss_value(theta);
        Ok(data + self.regularizer * sqnorm(theta))
    }

    /// Exact gradient of `value`.
    pub fn gradient(&self, theta: &[f64]) -> Result<ParamVector> {
        self.check_dim(theta)?;
        let mut g = self.data_loss_gradient(theta);
        for (gi, ti) in g.iter_mut().zip(theta) {
            *gi += 2.0 * self.regularizer * ti;
        }
        Ok(g)
    }

    /// Unbiased stochastic gradient. With `delta_g = 0` this is exactly the
    /// gradient regardless of mode; the counter-based `stream` makes every
    /// draw reproducible across processes and execution orders.
    pub fn stochastic_gradient(
        &self,
        theta: &[f64],
        noise: &NoiseModel,
        stream: &mut CounterRng,
    ) -> Result<ParamVector> {
        self.check_dim(theta)?;
        if noise.delta_g == 0.0 {
            return self.gradient(theta);
        }
        match noise.mode {
            NoiseMode::AdditiveIsotropic => {
                let mut g = self.gradient(theta)?;
                let scale = noise.delta_g / (g.len() as f64).sqrt();
                for gi in g.iter_mut() {
                    *gi += scale * stream.next_standard_normal();
                }
                Ok(g)
            }
            NoiseMode::Minibatch { batch_size } => {
                if batch_size == 0 {
                    return Err(Error::Contract("batch_size must be positive".into()));
                }
                let n = self.shard.len();
                let mut g = vec![0.0; self.dim()];
                for _ in 0..batch_size {
                    let j = stream.next_index(n);
                    self.accumulate_sample_gradient(theta, j, 1.0 / batch_size as f64, &mut g);
                }
                for (gi, ti) in g.iter_mut().zip(theta) {
                    *gi += 2.0 * self.regularizer * ti;
                }
                Ok(g)
            }
        }
    }

    /// Exact Hessian; symmetric positive semidefinite. Only the convex kinds
    /// support it.
    pub fn hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(theta)?;
        let d = self.dim();
        let n = self.shard.len() as f64;
        match self.kind {
            LossKind::QuadraticRegression => {
                // (2/N) X^T X + 2 reg I
                let mut h = DMatrix::zeros(d, d);
                for x in &self.shard.features {
                    for a in 0..d {
                        for b in 0..d {
                            h[(a, b)] += 2.0 * x[a] * x[b] / n;
                        }
                    }
                }
                for a in 0..d {
                    h[(a, a)] += 2.0 * self.regularizer;
                }
                Ok(h)
            }
            LossKind::MultinomialLogistic { classes } => {
                let p = self.shard.n_features();
                let mut h = DMatrix::zeros(d, d);
                for x in self.shard.features.iter() {
                    let probs = softmax(&scores(theta, x, classes, p));
                    for k in 0..classes {
                        for l in 0..classes {
                            let w = probs[k] * ((k == l) as usize as f64 - probs[l]) / n;
                            if w == 0.0 {
                                continue;
                            }
                            for a in 0..p {
                                for b in 0..p {
                                    h[(k * p + a, l * p + b)] += w * x[a] * x[b];
                                }
                            }
                        }
                    }
                }
                for a in 0..d {
                    h[(a, a)] += 2.0 * self.regularizer;
                }
                Ok(h)
            }
            LossKind::TinyMlp { .. } => Err(Error::Unsupported(
                "hessian is not available for the tiny-mlp kind".into(),
            )),
        }
    }

    /// Fraction of shard rows the model classifies correctly. `None` for
    /// regression objectives.
    pub fn accuracy(&self, theta: &[f64]) -> Result<Option<f64>> {
        self.check_dim(theta)?;
        let p = self.shard.n_features();
        let class_scores = |x: &[f64]| -> Option<Vec<f64>> {
            match self.kind {
                LossKind::QuadraticRegression => None,
                LossKind::MultinomialLogistic { classes } => Some(scores(theta, x, classes, p)),
                LossKind::TinyMlp { hidden, classes } => {
                    Some(mlp_forward(theta, x, hidden, classes, p).0)
                }
            }
        };
        let mut correct = 0usize;
        for (x, &y) in self.shard.features.iter().zip(&self.shard.labels) {
            let Some(s) = class_scores(x) else {
                return Ok(None);
            };
            if argmax(&s) == y as usize {
                correct += 1;
            }
        }
        Ok(Some(correct as f64 / self.shard.len() as f64))
    }

    fn data_loss_value(&self, theta: &[f64]) -> f64 {
        let n = self.shard.len() as f64;
        match self.kind {
            LossKind::QuadraticRegression => {
                let mut acc = 0.0;
                for (x, &y) in self.shard.features.iter().zip(&self.shard.labels) {
                    let r = y - dot(x, theta);
                    acc += r * r;
                }
                acc / n
            }
            LossKind::MultinomialLogistic { classes } => {
                let p = self.shard.n_features();
                let mut acc = 0.0;
                for (x, &y) in self.shard.features.iter().zip(&self.shard.labels) {
                    let s = scores(theta, x, classes, p);
                    acc += log_sum_exp(&s) - s[y as usize];
                }
                acc / n
            }
            LossKind::TinyMlp { hidden, classes } => {
                let p = self.shard.n_features();
                let mut acc = 0.0;
                for (x, &y) in self.shard.features.iter().zip(&self.shard.labels) {
                    let (s, _) = mlp_forward(theta, x, hidden, classes, p);
                    acc += log_sum_exp(&s) - s[y as usize];
                }
                acc / n
            }
        }
    }

    fn data_loss_gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        let n = self.shard.len();
        for j in 0..n {
            self.accumulate_sample_gradient(theta, j, 1.0 / n as f64, &mut g);
        }
        g
    }

    /// Adds `weight * grad(sample j data loss)` into `out`.
    fn accumulate_sample_gradient(&self, theta: &[f64], j: usize, weight: f64, out: &mut [f64]) {
        let x = &self.shard.features[j];
        let y = self.shard.labels[j];
        match self.kind {
            LossKind::QuadraticRegression => {
                let r = dot(x, theta) - y;
                for (o, xi) in out.iter_mut().zip(x) {
                    *o += weight * 2.0 * r * xi;
                }
            }
            LossKind::MultinomialLogistic { classes } => {
                let p = self.shard.n_features();
                let probs = softmax(&scores(theta, x, classes, p));
                for k in 0..classes {
                    let coef = probs[k] - ((k == y as usize) as usize as f64);
                    for a in 0..p {
                        out[k * p + a] += weight * coef * x[a];
                    }
                }
            }
            LossKind::TinyMlp { hidden, classes } => {
                let p = self.shard.n_features();
                mlp_backward(theta, x, y as usize, hidden, classes, p, weight, out);
            }
        }
    }
}

/// Uniform constants over a client set.
///
/// Quadratic kinds get exact extreme eigenvalues of the per-client Hessians.
/// Logistic kinds use the spectral bound `|X|^2/(2N) + 2 reg` for smoothness
/// and `2 reg` for strong convexity. `l_lambda_theta = sqrt(n) * M_f * diam`
/// when a domain diameter is supplied, infinite otherwise.
pub fn smoothness_constants(
    objs: &[ClientObjective],
    theta_diameter: Option<f64>,
) -> Result<SmoothnessConstants> {
    if objs.is_empty() {
        return Err(Error::Contract("need at least one objective".into()));
    }
    let mut m_f = f64::INFINITY;
    let mut big_m_f: f64 = 0.0;
    for obj in objs {
        match obj.kind {
            LossKind::QuadraticRegression => {
                let h = obj.hessian(&vec![0.0; obj.dim()])?;
                let eig = h.symmetric_eigenvalues();
                let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = eig.iter().copied().fold(0.0f64, f64::max);
                m_f = m_f.min(lo.max(0.0));
                big_m_f = big_m_f.max(hi);
            }
            LossKind::MultinomialLogistic { .. } => {
                let n = obj.shard.len() as f64;
                let p = obj.shard.n_features();
                let mut gram = DMatrix::<f64>::zeros(p, p);
                for x in &obj.shard.features {
                    for a in 0..p {
                        for b in 0..p {
                            gram[(a, b)] += x[a] * x[b];
                        }
                    }
                }
                let spectral = gram
                    .symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .fold(0.0f64, f64::max);
                m_f = m_f.min(2.0 * obj.regularizer);
                big_m_f = big_m_f.max(spectral / (2.0 * n) + 2.0 * obj.regularizer);
            }
            LossKind::TinyMlp { .. } => {
                return Err(Error::Unsupported(
                    "smoothness constants are undefined for the nonconvex tiny-mlp kind".into(),
                ))
            }
        }
    }
    let l_lambda_theta = match theta_diameter {
        Some(diam) => (objs.len() as f64).sqrt() * big_m_f * diam,
        None => f64::INFINITY,
    };
    Ok(SmoothnessConstants {
        m_f,
        big_m_f,
        l_lambda_theta,
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sqnorm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

fn scores(theta: &[f64], x: &[f64], classes: usize, p: usize) -> Vec<f64> {
    (0..classes).map(|k| dot(&theta[k * p..(k + 1) * p], x)).collect()
}

fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn argmax(s: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in s.iter().enumerate() {
        if v > s[best] {
            best = i;
        }
    }
    best
}

/// Layout: [W1 (hidden x p), b1 (hidden), W2 (classes x hidden), b2 (classes)].
fn mlp_slices(theta: &[f64], hidden: usize, classes: usize, p: usize) -> (&[f64], &[f64], &[f64], &[f64]) {
    let (w1, rest) = theta.split_at(hidden * p);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(classes * hidden);
    (w1, b1, w2, b2)
}

fn mlp_forward(theta: &[f64], x: &[f64], hidden: usize, classes: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    let (w1, b1, w2, b2) = mlp_slices(theta, hidden, classes, p);
    let mut a: Vec<f64> = (0..hidden)
        .map(|h| dot(&w1[h * p..(h + 1) * p], x) + b1[h])
        .collect();
    for v in a.iter_mut() {
        *v = v.tanh();
    }
    let s: Vec<f64> = (0..classes)
        .map(|k| dot(&w2[k * hidden..(k + 1) * hidden], &a) + b2[k])
        .collect();
    (s, a)
}

#[allow(clippy::too_many_arguments)]
fn mlp_backward(
    theta: &[f64],
    x: &[f64],
    y: usize,
    hidden: usize,
    classes: usize,
    p: usize,
    weight: f64,
    out: &mut [f64],
) {
    let (w1, _b1, w2, _b2) = mlp_slices(theta, hidden, classes, p);
    let _ = w1;
    let (s, a) = mlp_forward(theta, x, hidden, classes, p);
    let probs = softmax(&s);
    // dL/ds_k = p_k - 1{k = y}
    let ds: Vec<f64> = (0..classes)
        .map(|k| probs[k] - ((k == y) as usize as f64))
        .collect();
    let off_w1 = 0;
    let off_b1 = hidden * p;
    let off_w2 = off_b1 + hidden;
    let off_b2 = off_w2 + classes * hidden;
    // W2, b2
    for k in 0..classes {
        for h in 0..hidden {
            out[off_w2 + k * hidden + h] += weight * ds[k] * a[h];
        }
        out[off_b2 + k] += weight * ds[k];
    }
    // back through tanh
    for h in 0..hidden {
        let mut da = 0.0;
        for k in 0..classes {
            da += ds[k] * w2[k * hidden + h];
        }
        let dz = da * (1.0 - a[h] * a[h]);
        for j in 0..p {
            out[off_w1 + h * p + j] += weight * dz * x[j];
        }
        out[off_b1 + h] += weight * dz;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Domain;

    /// Central finite differences with per-coordinate step 1e-6 * (1 + |t|);
    /// the independent oracle for every gradient implementation here.
    fn fd_gradient(obj: &ClientObjective, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        for k in 0..theta.len() {
            let h = 1e-6 * (1.0 + theta[k].abs());
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[k] += h;
            tm[k] -= h;
            g[k] = (obj.value(&tp).unwrap() - obj.value(&tm).unwrap()) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale = sqnorm(a).sqrt().max(1.0);
        diff / scale
    }

    fn quad_scalar_half() -> ClientObjective {
        // f(t) = t^2 / 2 realized as mean squared residual with x = 1/sqrt(2).
        let shard = DataShard {
            client_id: 0,
            features: vec![vec![std::f64::consts::FRAC_1_SQRT_2]],
            labels: vec![0.0],
        };
        ClientObjective::new(LossKind::QuadraticRegression, shard, 0.0).unwrap()
    }

    fn random_shard(rng: &mut CounterRng, n: usize, p: usize, classes: Option<usize>) -> DataShard {
        DataShard {
            client_id: 0,
            features: (0..n)
                .map(|_| (0..p).map(|_| rng.next_standard_normal()).collect())
                .collect(),
            labels: (0..n)
                .map(|_| match classes {
                    Some(k) => rng.next_index(k) as f64,
                    None => rng.next_standard_normal(),
                })
                .collect(),
        }
    }

    #[test]
    fn quadratic_zero_residual_is_zero() {
        let shard = DataShard {
            client_id: 0,
            features: vec![vec![0.0]],
            labels: vec![0.0],
        };
        let obj = ClientObjective::new(LossKind::QuadraticRegression, shard, 0.0).unwrap();
        assert_eq!(obj.value(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_regression_mean_of_squared_residuals() {
        // Three-parameter linear model on 10 samples: value is the mean of
        // squared residuals (sum / N under the sample-mean convention).
        let mut rng = CounterRng::new(3, Domain::Data, 0, 0, 0);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..10 {
            features.push(vec![1.0, rng.next_standard_normal(), rng.next_standard_normal()]);
            labels.push(rng.next_standard_normal());
        }
        let shard = DataShard {
            client_id: 0,
            features: features.clone(),
            labels: labels.clone(),
        };
        let obj = ClientObjective::new(LossKind::QuadraticRegression, shard, 0.0).unwrap();
        let theta = [0.3, -0.7, 1.1];
        let mut ssr = 0.0;
        for (x, y) in features.iter().zip(&labels) {
            let r = y - (theta[0] * x[0] + theta[1] * x[1] + theta[2] * x[2]);
            ssr += r * r;
        }
        let v = obj.value(&theta).unwrap();
        assert!((v - ssr / 10.0).abs() < 1e-12, "{v} vs {}", ssr / 10.0);
    }

    #[test]
    fn quadratic_scalar_gradient_and_hessian() {
        let obj = quad_scalar_half();
        assert!((obj.value(&[3.0]).unwrap() - 4.5).abs() < 1e-12);
        let g = obj.gradient(&[3.0]).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-12);
        let h = obj.hessian(&[3.0]).unwrap();
        assert!((h[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_at_zero_is_ln_k() {
        let mut rng = CounterRng::new(5, Domain::Data, 0, 0, 0);
        for k in [2usize, 3, 5] {
            let shard = random_shard(&mut rng, 12, 3, Some(k));
            let obj =
                ClientObjective::new(LossKind::MultinomialLogistic { classes: k }, shard, 0.0)
                    .unwrap();
            let v = obj.value(&vec![0.0; obj.dim()]).unwrap();
            assert!((v - (k as f64).ln()).abs() < 1e-12, "k={k} v={v}");
        }
    }

    #[test]
    fn logistic_balanced_two_class_bias_symmetry() {
        // Balanced labels, bias-only model: at theta = 0 the softmax is
        // uniform and the two bias gradients cancel coordinatewise.
        let shard = DataShard {
            client_id: 0,
            features: vec![vec![1.0]; 4],
            labels: vec![0.0, 1.0, 0.0, 1.0],
        };
        let obj =
            ClientObjective::new(LossKind::MultinomialLogistic { classes: 2 }, shard, 0.0).unwrap();
        let g = obj.gradient(&[0.0, 0.0]).unwrap();
        assert!((g[0] + g[1]).abs() < 1e-15);
        assert!(g[0].abs() < 1e-15, "balanced shard has zero bias gradient");
    }

    #[test]
    fn logistic_hessian_quarter_factor_at_zero() {
        // Two classes, single feature x: H block factor p(1-p) = 1/4 at 0.
        let shard = DataShard {
            client_id: 0,
            features: vec![vec![2.0]],
            labels: vec![0.0],
        };
        let obj =
            ClientObjective::new(LossKind::MultinomialLogistic { classes: 2 }, shard, 0.0).unwrap();
        let h = obj.hessian(&[0.0, 0.0]).unwrap();
        // diag blocks: 1/4 * x^2 = 1.0; off-diag: -1/4 * x^2 = -1.0
        assert!((h[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((h[(1, 1)] - 1.0).abs() < 1e-12);
        assert!((h[(0, 1)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_all_kinds() {
        let mut rng = CounterRng::new(11, Domain::Data, 0, 0, 0);
        let kinds: Vec<LossKind> = vec![
            LossKind::QuadraticRegression,
            LossKind::MultinomialLogistic { classes: 3 },
            LossKind::TinyMlp { hidden: 4, classes: 3 },
        ];
        for kind in kinds {
            for trial in 0..100 {
                let classes = match kind {
                    LossKind::QuadraticRegression => None,
                    _ => Some(3),
                };
                let shard = random_shard(&mut rng, 6, 3, classes);
                let obj = ClientObjective::new(kind.clone(), shard, 0.01).unwrap();
                let theta: Vec<f64> =
                    (0..obj.dim()).map(|_| rng.next_standard_normal()).collect();
                let ga = obj.gradient(&theta).unwrap();
                let gf = fd_gradient(&obj, &theta);
                let err = rel_err(&ga, &gf);
                assert!(err <= 1e-5, "kind {kind:?} trial {trial}: rel err {err}");
            }
        }
    }

    #[test]
    fn hessian_matches_fd_of_gradient() {
        let mut rng = CounterRng::new(13, Domain::Data, 0, 0, 0);
        for kind in [
            LossKind::QuadraticRegression,
            LossKind::MultinomialLogistic { classes: 2 },
        ] {
            let shard = random_shard(&mut rng, 5, 2, match kind {
                LossKind::QuadraticRegression => None,
                _ => Some(2),
            });
            let obj = ClientObjective::new(kind, shard, 0.05).unwrap();
            let theta: Vec<f64> = (0..obj.dim()).map(|_| 0.3 * rng.next_standard_normal()).collect();
            let h = obj.hessian(&theta).unwrap();
            // symmetry + PSD
            for a in 0..obj.dim() {
                for b in 0..obj.dim() {
                    assert!((h[(a, b)] - h[(b, a)]).abs() < 1e-12);
                }
            }
            let min_eig = h
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            assert!(min_eig > -1e-10, "hessian PSD, min eig {min_eig}");
            // columns of H match finite differences of the gradient
            for k in 0..obj.dim() {
                let step = 1e-6 * (1.0 + theta[k].abs());
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += step;
                tm[k] -= step;
                let gp = obj.gradient(&tp).unwrap();
                let gm = obj.gradient(&tm).unwrap();
                for a in 0..obj.dim() {
                    let fd = (gp[a] - gm[a]) / (2.0 * step);
                    assert!(
                        (h[(a, k)] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                        "H[{a},{k}]"
                    );
                }
            }
        }
    }

    #[test]
    fn mlp_hessian_unsupported() {
        let mut rng = CounterRng::new(17, Domain::Data, 0, 0, 0);
        let shard = random_shard(&mut rng, 4, 2, Some(2));
        let obj =
            ClientObjective::new(LossKind::TinyMlp { hidden: 3, classes: 2 }, shard, 0.0).unwrap();
        let err = obj.hessian(&vec![0.1; obj.dim()]).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn stochastic_gradient_zero_noise_is_exact() {
        let obj = quad_scalar_half();
        let mut stream = CounterRng::new(1, Domain::Gradient, 0, 0, 0);
        let g = obj
            .stochastic_gradient(&[3.0], &NoiseModel::exact(), &mut stream)
            .unwrap();
        assert_eq!(g, obj.gradient(&[3.0]).unwrap());
    }

    #[test]
    fn stochastic_gradient_deterministic_per_key() {
        let obj = quad_scalar_half();
        let noise = NoiseModel {
            delta_g: 0.5,
            mode: NoiseMode::AdditiveIsotropic,
        };
        let mut s1 = CounterRng::new(9, Domain::Gradient, 2, 7, 3);
        let mut s2 = CounterRng::new(9, Domain::Gradient, 2, 7, 3);
        let g1 = obj.stochastic_gradient(&[1.0], &noise, &mut s1).unwrap();
        let g2 = obj.stochastic_gradient(&[1.0], &noise, &mut s2).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn additive_noise_monte_carlo_mean() {
        // Mean of 1e4 draws is within 3 * delta_g / 100 of the exact gradient.
        let mut rng = CounterRng::new(23, Domain::Data, 0, 0, 0);
        let shard = random_shard(&mut rng, 8, 3, None);
        let obj = ClientObjective::new(LossKind::QuadraticRegression, shard, 0.0).unwrap();
        let theta = [0.5, -0.2, 0.8];
        let exact = obj.gradient(&theta).unwrap();
        let delta = 0.7;
        let noise = NoiseModel {
            delta_g: delta,
            mode: NoiseMode::AdditiveIsotropic,
        };
        let draws = 10_000;
        let mut mean = vec![0.0; 3];
        for i in 0..draws {
            let mut stream = CounterRng::new(23, Domain::Gradient, 0, i, 0);
            let g = obj.stochastic_gradient(&theta, &noise, &mut stream).unwrap();
            for (m, gi) in mean.iter_mut().zip(&g) {
                *m += gi / draws as f64;
            }
        }
        let dev: f64 = mean
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(dev <= 3.0 * delta / 100.0, "dev {dev}");
    }

    #[test]
    fn additive_noise_variance_is_delta_sq() {
        let mut rng = CounterRng::new(29, Domain::Data, 0, 0, 0);
        let shard = random_shard(&mut rng, 8, 3, None);
        let obj = ClientObjective::new(LossKind::QuadraticRegression, shard, 0.0).unwrap();
        let theta = [0.1, 0.4, -0.3];
        let exact = obj.gradient(&theta).unwrap();
        let delta = 0.3;
        let noise = NoiseModel {
            delta_g: delta,
            mode: NoiseMode::AdditiveIsotropic,
        };
        let draws = 20_000;
        let mut var = 0.0;
        for i in 0..draws {
            let mut stream = CounterRng::new(29, Domain::Gradient, 0, i, 0);
            let g = obj.stochastic_gradient(&theta, &noise, &mut stream).unwrap();
            var += g
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / draws as f64;
        }
        assert!((var - delta * delta).abs() < 0.1 * delta * delta, "var {var}");
    }

    #[test]
    fn minibatch_is_unbiased() {
        let mut rng = CounterRng::new(31, Domain::Data, 0, 0, 0);
        let shard = random_shard(&mut rng, 16, 2, None);
        let obj = ClientObjective::new(LossKind::QuadraticRegression, shard, 0.02).unwrap();
        let theta = [0.2, -0.5];
        let exact = obj.gradient(&theta).unwrap();
        let noise = NoiseModel {
            delta_g: 1.0, // any positive value switches the stochastic path on
            mode: NoiseMode::Minibatch { batch_size: 4 },
        };
        let draws = 40_000;
        let mut mean = vec![0.0; 2];
        for i in 0..draws {
            let mut stream = CounterRng::new(31, Domain::Gradient, 0, i, 0);
            let g = obj.stochastic_gradient(&theta, &noise, &mut stream).unwrap();
            for (m, gi) in mean.iter_mut().zip(&g) {
                *m += gi / draws as f64;
            }
        }
        let dev: f64 = mean
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(dev < 0.02, "dev {dev}");
    }

    #[test]
    fn smoothness_single_quadratic() {
        let obj = quad_scalar_half();
        let c = smoothness_constants(&[obj], None).unwrap();
        assert!((c.m_f - 1.0).abs() < 1e-12);
        assert!((c.big_m_f - 1.0).abs() < 1e-12);
        assert!(c.l_lambda_theta.is_infinite());
    }

    #[test]
    fn smoothness_two_quadratics_eigenvalue_extremes() {
        // Hessians diag(1) and diag(4): constants (1, 4).
        let mk = |x: f64| {
            let shard = DataShard {
                client_id: 0,
                features: vec![vec![x]],
                labels: vec![0.0],
            };
            ClientObjective::new(LossKind::QuadraticRegression, shard, 0.0).unwrap()
        };
        let objs = vec![mk(std::f64::consts::FRAC_1_SQRT_2), mk(std::f64::consts::SQRT_2)];
        let c = smoothness_constants(&objs, Some(2.0)).unwrap();
        assert!((c.m_f - 1.0).abs() < 1e-12);
        assert!((c.big_m_f - 4.0).abs() < 1e-12);
        assert!((c.l_lambda_theta - 2.0f64.sqrt() * 4.0 * 2.0).abs() < 1e-9);
    }

    #[test]
    fn smoothness_logistic_from_regularizer() {
        let mut rng = CounterRng::new(37, Domain::Data, 0, 0, 0);
        let shard = random_shard(&mut rng, 10, 2, Some(2));
        let obj =
            ClientObjective::new(LossKind::MultinomialLogistic { classes: 2 }, shard, 0.01)
                .unwrap();
        let c = smoothness_constants(&[obj.clone()], None).unwrap();
        assert!((c.m_f - 0.02).abs() < 1e-15);
        // M_f upper-bounds the true smoothness: compare with the Hessian's
        // largest eigenvalue at a few points.
        for seed in 0..5 {
            let mut r = CounterRng::new(seed, Domain::Data, 1, 0, 0);
            let theta: Vec<f64> = (0..obj.dim()).map(|_| r.next_standard_normal()).collect();
            let top = obj
                .hessian(&theta)
                .unwrap()
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(0.0f64, f64::max);
            assert!(top <= c.big_m_f + 1e-9, "bound {} vs eig {top}", c.big_m_f);
        }
    }

    #[test]
    fn quadratic_sandwich_between_m_and_big_m() {
        // Assumption-style two-sided bound holds exactly for quadratics.
        let mut rng = CounterRng::new(41, Domain::Data, 0, 0, 0);
        let shard = random_shard(&mut rng, 6, 3, None);
        let obj = ClientObjective::new(LossKind::QuadraticRegression, shard, 0.1).unwrap();
        let c = smoothness_constants(std::slice::from_ref(&obj), None).unwrap();
        for _ in 0..50 {
            let a: Vec<f64> = (0..3).map(|_| rng.next_standard_normal()).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.next_standard_normal()).collect();
            let gap = obj.value(&a).unwrap()
                - obj.value(&b).unwrap()
                - dot(&obj.gradient(&b).unwrap(), &a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
            let dist = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            assert!(gap >= c.m_f / 2.0 * dist - 1e-9);
            assert!(gap <= c.big_m_f / 2.0 * dist + 1e-9);
        }
    }

    #[test]
    fn value_nonnegative_random_sweep() {
        let mut rng = CounterRng::new(43, Domain::Data, 0, 0, 0);
        for kind in [
            LossKind::QuadraticRegression,
            LossKind::MultinomialLogistic { classes: 3 },
            LossKind::TinyMlp { hidden: 3, classes: 3 },
        ] {
            let classes = match kind {
                LossKind::QuadraticRegression => None,
                _ => Some(3),
            };
            let shard = random_shard(&mut rng, 5, 2, classes);
            let obj = ClientObjective::new(kind, shard, 0.0).unwrap();
            for _ in 0..20 {
                let theta: Vec<f64> =
                    (0..obj.dim()).map(|_| 2.0 * rng.next_standard_normal()).collect();
                assert!(obj.value(&theta).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_violation() {
        let obj = quad_scalar_half();
        assert!(matches!(
            obj.value(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            obj.gradient(&[]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
