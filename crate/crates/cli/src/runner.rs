//! From config to numbers: dataset preparation, training, evaluation.

use sha2::{Digest, Sha256};

use relfair_core::{
    integrated_l1_norm, load_csv, partition_dirichlet, run, select_phi,
    smoothness_constants, synth_classification, synth_regression, AlgorithmSpec, AmbiguityPair,
    ClientObjective, DataShard, FairnessReport, LossKind, PartitionSpec, RunOptions, RunResult,
    ScheduleMode, Variant,
};

use crate::config::{DatasetConfig, ExperimentConfig, PartitionConfig, PhiConfig};

pub type Error = Box<dyn std::error::Error + Send + Sync>;
pub type Result<T> = std::result::Result<T, Error>;

/// Objectives and bookkeeping derived from a config, before training.
pub struct Prepared {
    pub train_objs: Vec<ClientObjective>,
    pub val_objs: Vec<ClientObjective>,
    pub partition_hash: String,
    pub n_clients: usize,
}

/// Everything a finished experiment reports.
pub struct Outcome {
    pub result: RunResult,
    pub evaluation: Evaluation,
    pub phi_used: f64,
    pub phi_source: &'static str,
    pub partition_hash: String,
    pub schedule_label: &'static str,
}

pub struct Evaluation {
    pub val_losses: Vec<f64>,
    pub fairness: FairnessReport,
    pub accuracy: Option<AccuracySummary>,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct AccuracySummary {
    pub all: f64,
    pub worst20: f64,
    pub best20: f64,
}

/// Deterministic digest of shard membership; equal across runs iff every
/// client holds exactly the same rows.
pub fn partition_hash(shards: &[DataShard]) -> String {
    let mut hasher = Sha256::new();
    for shard in shards {
        hasher.update((shard.client_id as u64).to_le_bytes());
        hasher.update((shard.len() as u64).to_le_bytes());
        for (row, label) in shard.features.iter().zip(&shard.labels) {
            for x in row {
                hasher.update(x.to_bits().to_le_bytes());
            }
            hasher.update(label.to_bits().to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Build shards from the dataset and partition sections.
pub fn build_shards(config: &ExperimentConfig, seed: u64) -> Result<Vec<DataShard>> {
    let shards = match &config.dataset {
        DatasetConfig::Csv { path, schema } => {
            let dataset = load_csv(path, schema)?;
            match &config.partition {
                Some(PartitionConfig::Dirichlet {
                    n_clients,
                    concentration,
                }) => partition_dirichlet(
                    &dataset,
                    &PartitionSpec {
                        n_clients: *n_clients,
                        concentration: *concentration,
                        seed,
                        class_count: 0,
                    },
                )?,
                _ => dataset.shards_by_client()?,
            }
        }
        DatasetConfig::SynthRegression {
            samples_per_client,
            ground_truths,
            noise_sd,
        } => synth_regression(*samples_per_client, ground_truths, *noise_sd, seed)?,
        DatasetConfig::SynthClassification {
            samples,
            features,
            classes,
            separation,
        } => {
            let dataset =
                synth_classification(*samples, *features, *classes, *separation, seed ^ 0xABCD)?;
            let Some(PartitionConfig::Dirichlet {
                n_clients,
                concentration,
            }) = &config.partition
            else {
                return Err("synth-classification needs a dirichlet partition".into());
            };
            partition_dirichlet(
                &dataset,
                &PartitionSpec {
                    n_clients: *n_clients,
                    concentration: *concentration,
                    seed,
                    class_count: *classes,
                },
            )?
        }
    };
    Ok(shards)
}

/// Shards -> train/validation objectives. The split permutation is keyed by
/// the seed and client id.
pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let shards = build_shards(config, seed)?;
    let hash = partition_hash(&shards);
    let mut train_objs = Vec::with_capacity(shards.len());
    let mut val_objs = Vec::with_capacity(shards.len());
    for shard in &shards {
        let (train, val) = shard.split(config.split_fraction, seed);
        train_objs.push(ClientObjective::new(
            config.loss.kind.clone(),
            train,
            config.loss.regularizer,
        )?);
        val_objs.push(ClientObjective::new(
            config.loss.kind.clone(),
            val,
            config.loss.regularizer,
        )?);
    }
    Ok(Prepared {
        n_clients: train_objs.len(),
        train_objs,
        val_objs,
        partition_hash: hash,
    })
}

/// Validation-side metrics at a parameter vector: the fairness report over
/// per-client validation losses plus, for classifiers, the accuracy columns
/// (mean over all clients and over the worst/best 20% of clients).
pub fn evaluate(prepared: &Prepared, theta: &[f64], pair: &AmbiguityPair) -> Result<Evaluation> {
    let val_losses: Vec<f64> = prepared
        .val_objs
        .iter()
        .map(|o| o.value(theta))
        .collect::<relfair_core::Result<_>>()?;
    let fairness = FairnessReport::compute(&val_losses, pair)?;
    let accuracy = match prepared.val_objs[0].accuracy(theta)? {
        None => None,
        Some(_) => {
            let mut accs: Vec<f64> = prepared
                .val_objs
                .iter()
                .map(|o| o.accuracy(theta).map(|a| a.expect("classifier")))
                .collect::<relfair_core::Result<_>>()?;
            let all = accs.iter().sum::<f64>() / accs.len() as f64;
            accs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = ((0.2 * accs.len() as f64).floor() as usize).max(1);
            let worst20 = accs[..k].iter().sum::<f64>() / k as f64;
            let best20 = accs[accs.len() - k..].iter().sum::<f64>() / k as f64;
            Some(AccuracySummary {
                all,
                worst20,
                best20,
            })
        }
    };
    Ok(Evaluation {
        val_losses,
        fairness,
        accuracy,
    })
}

/// Run one experiment end to end: resolve the mixing coefficient (an
/// adaptive pre-run at `phi = 0` when requested), train, evaluate.
pub fn execute(config: &ExperimentConfig, seed: u64) -> Result<Outcome> {
    let prepared = prepare(config, seed)?;
    let n = prepared.n_clients;

    let (phi_used, phi_source) = match config.ambiguity.phi {
        PhiConfig::Fixed(phi) => (phi, "config"),
        PhiConfig::Auto => (resolve_phi_auto(config, &prepared, seed)?, "auto"),
    };
    let pair = AmbiguityPair::new(
        relfair_core::CappedSimplex::new(n, config.ambiguity.alpha_a)?,
        relfair_core::CappedSimplex::new(n, config.ambiguity.alpha_b)?,
        phi_used,
    )?;

    let (mode, schedule_label) = schedule_for(config, &prepared.train_objs, &pair)?;
    let spec = AlgorithmSpec {
        variant: config.algorithm.variant,
        pair,
        rounds: config.algorithm.rounds,
        domain: config.algorithm.theta_domain.clone(),
    };
    let options = RunOptions {
        j_local: config.algorithm.local_steps,
        theta0: config.theta0.clone(),
        theta_star: None,
        record_metrics: true,
    };
    let noise = config.noise.to_model().map_err(Error::from)?;
    let result = run(&prepared.train_objs, &spec, &mode, &noise, seed, &options)?;
    let evaluation = evaluate(&prepared, &result.final_theta, &spec.pair)?;
    Ok(Outcome {
        result,
        evaluation,
        phi_used,
        phi_source,
        partition_hash: prepared.partition_hash,
        schedule_label,
    })
}

/// The adaptive coefficient: train at `phi = 0`, read off the weighted
/// losses and curvature at that solution, apply the closed form.
fn resolve_phi_auto(config: &ExperimentConfig, prepared: &Prepared, seed: u64) -> Result<f64> {
    let n = prepared.n_clients;
    let pair0 = AmbiguityPair::new(
        relfair_core::CappedSimplex::new(n, config.ambiguity.alpha_a)?,
        relfair_core::CappedSimplex::new(n, config.ambiguity.alpha_b)?,
        0.0,
    )?;
    let (mode, _) = schedule_for(config, &prepared.train_objs, &pair0)?;
    let spec = AlgorithmSpec {
        variant: Variant::ScaffPd,
        pair: pair0,
        rounds: config.algorithm.rounds,
        domain: config.algorithm.theta_domain.clone(),
    };
    let options = RunOptions {
        j_local: config.algorithm.local_steps,
        theta0: config.theta0.clone(),
        theta_star: None,
        record_metrics: false,
    };
    let noise = config.noise.to_model().map_err(Error::from)?;
    let pre = run(&prepared.train_objs, &spec, &mode, &noise, seed, &options)?;
    let theta0_star = &pre.final_theta;
    let losses: Vec<f64> = prepared
        .train_objs
        .iter()
        .map(|o| o.value(theta0_star))
        .collect::<relfair_core::Result<_>>()?;
    let (_, a0) = spec.pair.a.cvar_max(&losses)?;
    let (_, b0) = spec.pair.b.cvar_min(&losses)?;
    let selection = select_phi(&prepared.train_objs, theta0_star, &a0, &b0)?;
    Ok(selection.phi_star)
}

fn schedule_for(
    config: &ExperimentConfig,
    objs: &[ClientObjective],
    pair: &AmbiguityPair,
) -> Result<(ScheduleMode, &'static str)> {
    match &config.schedule {
        crate::config::ScheduleConfig::Fixed { .. } => {
            Ok((config.schedule_mode(0.0, 0.0, 1.0, 0.0), "fixed"))
        }
        crate::config::ScheduleConfig::Accelerated { .. } => {
            if matches!(config.loss.kind, LossKind::TinyMlp { .. }) {
                return Err(
                    "schedule: the accelerated mode needs convexity constants; \
                     use fixed rates for the tiny-mlp loss"
                        .into(),
                );
            }
            let diam = config
                .algorithm
                .theta_domain
                .diameter(objs[0].dim());
            let consts = smoothness_constants(objs, diam)?;
            let l1 = integrated_l1_norm(pair)?;
            Ok((
                config.schedule_mode(consts.m_f, consts.big_m_f, l1, consts.l_lambda_theta),
                "accelerated",
            ))
        }
    }
}
