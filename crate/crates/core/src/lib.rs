//! Single-process simulated-federation library for relative-fairness DRO:
//! CVaR-style ambiguity sets over client losses, the integrated set that
//! trades the largest losses against the smallest, a controlled-averaging
//! primal-dual solver, fairness metrics, and exact small-scale oracles.

pub mod ambiguity;
pub mod data;
pub mod error;
pub mod fairness;
pub mod objective;
pub mod optimizer;
pub mod oracle;
pub mod partition;
pub mod rng;
pub mod schedule;
pub mod simplex;

pub use ambiguity::{
    canonical_disjoint_lambda, dual_prox, generalization_bound, integrated_l1_norm, set_geometry,
    skewness_exact, skewness_formula, skewness_of, AmbiguityPair, DualPoint, SetGeometry,
};
pub use data::{load_csv, synth_classification, synth_regression, CsvSchema, DataShard, Dataset};
pub use error::{Error, Result};
pub use fairness::{
    atkinson_inf, classic_measures, discrepancy, gini, lorenz_points, negative_utility, quantile_ratio,
    ratio_bounds_check, relative_unfairness, select_phi, select_phi_from_scalars, FairnessReport,
    PhiSelection,
};
pub use objective::{
    smoothness_constants, ClientObjective, LossKind, NoiseMode, NoiseModel, ParamVector,
    SmoothnessConstants,
};
pub use optimizer::{
    afl_baseline, local_update, run, run_round, AlgorithmSpec, RoundRecord, RoundState,
    RunOptions, RunResult, ThetaDomain, Variant,
};
pub use oracle::{
    brute_force_prox, grid_minimax, phi_sweep, quadratic_saddle, r_ab_grid_sensitivity,
    saddle_check, GridDim, SaddleSolution, ThetaGrid,
};
pub use partition::{partition_dirichlet, PartitionSpec};
pub use rng::{CounterRng, Domain};
pub use schedule::{ScheduleMode, ScheduleParams, ScheduleState};
pub use simplex::CappedSimplex;
