//! Experiment configuration: a versioned JSON document that fully determines
//! a run. Re-running the same document with the same seed reproduces every
//! number bit for bit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use relfair_core::{
    CsvSchema, LossKind, NoiseMode, NoiseModel, ScheduleMode, ScheduleParams, ThetaDomain, Variant,
};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub partition: Option<PartitionConfig>,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    pub loss: LossConfig,
    pub algorithm: AlgorithmConfig,
    pub ambiguity: AmbiguityConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub seed: u64,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    /// Grid and coefficients for the exact-oracle sweep subcommand.
    #[serde(default)]
    pub exact: Option<ExactConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_split() -> f64 {
    0.8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "source")]
pub enum DatasetConfig {
    Csv {
        path: PathBuf,
        schema: CsvSchema,
    },
    /// Per-client linear-model data around distinct ground truths.
    SynthRegression {
        samples_per_client: usize,
        ground_truths: Vec<Vec<f64>>,
        noise_sd: f64,
    },
    /// One pool of Gaussian class blobs, partitioned across clients.
    SynthClassification {
        samples: usize,
        features: usize,
        classes: usize,
        separation: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "by")]
pub enum PartitionConfig {
    /// One Dirichlet draw per class decides each client's share.
    Dirichlet {
        n_clients: usize,
        #[serde(default = "default_concentration")]
        concentration: f64,
    },
    /// The dataset's client column fixes the shards.
    ClientColumn,
}

fn default_concentration() -> f64 {
    0.5
}

// No deny_unknown_fields here: it cannot coexist with the flattened kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    #[serde(flatten)]
    pub kind: LossKind,
    #[serde(default)]
    pub regularizer: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub variant: Variant,
    pub rounds: usize,
    #[serde(default = "default_j")]
    pub local_steps: usize,
    #[serde(default = "default_theta_domain")]
    pub theta_domain: ThetaDomain,
}

fn default_j() -> usize {
    5
}

fn default_theta_domain() -> ThetaDomain {
    ThetaDomain::Unconstrained
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguityConfig {
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub phi: PhiConfig,
}

/// Either a fixed coefficient in `[0, 1)` or `"auto"`, which triggers the
/// adaptive selection after a `phi = 0` pre-run.
#[derive(Debug, Clone, PartialEq)]
pub enum PhiConfig {
    Fixed(f64),
    Auto,
}

impl Serialize for PhiConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PhiConfig::Fixed(v) => s.serialize_f64(*v),
            PhiConfig::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for PhiConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(PhiConfig::Fixed(v)),
            Raw::Text(t) if t == "auto" => Ok(PhiConfig::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "phi must be a number in [0, 1) or \"auto\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ScheduleConfig {
    /// The coupled accelerating recurrences; constants are derived from the
    /// losses unless overridden.
    Accelerated {
        tau0: f64,
        #[serde(default = "default_gamma0")]
        gamma0: f64,
        #[serde(default = "default_c_alpha")]
        c_alpha: f64,
    },
    /// Constant rates.
    Fixed { tau: f64, sigma: f64, eta: f64 },
}

fn default_gamma0() -> f64 {
    1.0
}

fn default_c_alpha() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub delta_g: f64,
    #[serde(default = "default_noise_mode")]
    pub mode: String,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

fn default_noise_mode() -> String {
    "additive-isotropic".into()
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            delta_g: 0.0,
            mode: default_noise_mode(),
            batch_size: None,
        }
    }
}

impl NoiseConfig {
    pub fn to_model(&self) -> Result<NoiseModel, String> {
        let mode = match self.mode.as_str() {
            "additive-isotropic" => NoiseMode::AdditiveIsotropic,
            "minibatch" => NoiseMode::Minibatch {
                batch_size: self.batch_size.ok_or("noise.batch_size: required for minibatch mode")?,
            },
            other => {
                return Err(format!(
                    "noise.mode: expected \"additive-isotropic\" or \"minibatch\", got {other:?}"
                ))
            }
        };
        Ok(NoiseModel {
            delta_g: self.delta_g,
            mode,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactConfig {
    pub grid: Vec<GridDimConfig>,
    pub phi_values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDimConfig {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let errors = config.validate();
        if errors.is_empty() {
            Ok(config)
        } else {
            Err(errors.join("\n"))
        }
    }

    /// Semantic validation; each message names the offending field path.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.version != CONFIG_VERSION {
            errs.push(format!(
                "version: expected {CONFIG_VERSION}, got {}",
                self.version
            ));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            errs.push("split_fraction: must lie in (0, 1)".into());
        }
        if self.loss.regularizer < 0.0 {
            errs.push("loss.regularizer: must be nonnegative".into());
        }
        if self.algorithm.rounds == 0 && self.exact.is_none() {
            errs.push("algorithm.rounds: zero rounds trains nothing".into());
        }
        if self.algorithm.local_steps < 2 {
            errs.push("algorithm.local_steps: must be >= 2".into());
        }
        for (name, alpha) in [("alpha_a", self.ambiguity.alpha_a), ("alpha_b", self.ambiguity.alpha_b)] {
            if !(alpha > 0.0 && alpha <= 1.0) {
                errs.push(format!("ambiguity.{name}: must lie in (0, 1]"));
            }
        }
        if let PhiConfig::Fixed(phi) = self.ambiguity.phi {
            if !(0.0..1.0).contains(&phi) {
                errs.push("ambiguity.phi: must lie in [0, 1)".into());
            }
            if self.algorithm.variant == Variant::ScaffPd && phi != 0.0 {
                errs.push("ambiguity.phi: the scaff-pd variant requires phi = 0".into());
            }
        }
        match &self.dataset {
            DatasetConfig::Csv { path, schema } => {
                if !path.exists() {
                    errs.push(format!("dataset.path: {} does not exist", path.display()));
                }
                if schema.feature_columns.is_empty() {
                    errs.push("dataset.schema.feature_columns: must be nonempty".into());
                }
                if schema.client_column.is_none()
                    && !matches!(self.partition, Some(PartitionConfig::Dirichlet { .. }))
                {
                    errs.push(
                        "partition: a CSV without a client column needs a dirichlet partition"
                            .into(),
                    );
                }
            }
            DatasetConfig::SynthRegression {
                samples_per_client,
                ground_truths,
                noise_sd,
            } => {
                if *samples_per_client == 0 {
                    errs.push("dataset.samples_per_client: must be positive".into());
                }
                if ground_truths.is_empty() {
                    errs.push("dataset.ground_truths: must be nonempty".into());
                }
                if *noise_sd < 0.0 {
                    errs.push("dataset.noise_sd: must be nonnegative".into());
                }
                if self.partition.is_some() {
                    errs.push(
                        "partition: synth-regression data is already per-client".into(),
                    );
                }
                if !matches!(self.loss.kind, LossKind::QuadraticRegression) {
                    errs.push("loss.kind: synth-regression data needs the quadratic loss".into());
                }
            }
            DatasetConfig::SynthClassification {
                samples,
                features,
                classes,
                ..
            } => {
                if *samples == 0 || *features == 0 || *classes < 2 {
                    errs.push(
                        "dataset: samples and features must be positive, classes >= 2".into(),
                    );
                }
                if !matches!(self.partition, Some(PartitionConfig::Dirichlet { .. })) {
                    errs.push("partition: synth-classification needs a dirichlet partition".into());
                }
                if let LossKind::MultinomialLogistic { classes: k }
                | LossKind::TinyMlp { classes: k, .. } = self.loss.kind
                {
                    if k != *classes {
                        errs.push(format!(
                            "loss.classes: {k} does not match dataset.classes {classes}"
                        ));
                    }
                }
            }
        }
        if let Some(PartitionConfig::Dirichlet {
            n_clients,
            concentration,
        }) = &self.partition
        {
            if *n_clients == 0 {
                errs.push("partition.n_clients: must be >= 1".into());
            }
            if concentration.is_nan() || *concentration <= 0.0 {
                errs.push("partition.concentration: must be > 0".into());
            }
        }
        match &self.schedule {
            ScheduleConfig::Accelerated { tau0, gamma0, c_alpha } => {
                if !(*tau0 > 0.0 && *gamma0 > 0.0) {
                    errs.push("schedule: tau0 and gamma0 must be positive".into());
                }
                if !(*c_alpha > 0.0 && *c_alpha < 1.0) {
                    errs.push("schedule.c_alpha: must lie in (0, 1)".into());
                }
            }
            ScheduleConfig::Fixed { tau, sigma, eta } => {
                if !(*tau > 0.0 && *sigma > 0.0 && *eta > 0.0) {
                    errs.push("schedule: fixed rates must be positive".into());
                }
            }
        }
        if self.noise.delta_g < 0.0 {
            errs.push("noise.delta_g: must be nonnegative".into());
        }
        if let Err(e) = self.noise.to_model() {
            errs.push(e);
        }
        if let Some(exact) = &self.exact {
            if exact.grid.is_empty() {
                errs.push("exact.grid: must be nonempty".into());
            }
            for (i, g) in exact.grid.iter().enumerate() {
                if g.step.is_nan() || g.step <= 0.0 || g.hi < g.lo {
                    errs.push(format!("exact.grid[{i}]: invalid range or step"));
                }
            }
            if exact.phi_values.is_empty() {
                errs.push("exact.phi_values: must be nonempty".into());
            }
            let mut prev = -1.0;
            for (i, &phi) in exact.phi_values.iter().enumerate() {
                if !(0.0..1.0).contains(&phi) {
                    errs.push(format!("exact.phi_values[{i}]: must lie in [0, 1)"));
                }
                if phi < prev {
                    errs.push("exact.phi_values: must be ascending".into());
                    break;
                }
                prev = phi;
            }
        }
        errs
    }

    /// Schedule mode with loss-derived constants filled in.
    pub fn schedule_mode(
        &self,
        m_f: f64,
        big_m_f: f64,
        lambda_l1: f64,
        l_lambda_theta: f64,
    ) -> ScheduleMode {
        match &self.schedule {
            ScheduleConfig::Accelerated { tau0, gamma0, c_alpha } => {
                let mut params = ScheduleParams::new(
                    *tau0,
                    *gamma0,
                    self.algorithm.local_steps,
                    m_f,
                    big_m_f,
                    lambda_l1,
                );
                params.c_alpha = *c_alpha;
                params.l_lambda_theta = l_lambda_theta;
                ScheduleMode::Accelerated(params)
            }
            ScheduleConfig::Fixed { tau, sigma, eta } => ScheduleMode::Fixed {
                tau: *tau,
                sigma: *sigma,
                eta: *eta,
            },
        }
    }
}
