//! FedAvg over client shards, with optional poisoning of one client.

use rayon::prelude::*;

use crate::attacks::{
    self, flip_labels, fp_asr_testset, fp_poison, lf_asr_testset, AttackKind,
    AttackSpec, FpStats, PoisonReport,
};
use crate::data::{Dataset, SplitBundle};
use crate::importance::{forest_importance, top_feature, ForestConfig, ImportanceReport};
use crate::nn::{evaluate, sample_learning_rate, train_local, Bau1Params, TrainConfig};
use crate::seeds::{self, stream};
use crate::{Error, Result};

/// Permutation repeats used when FP picks its own target column.
pub const IMPORTANCE_REPEATS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    /// Local training settings; `epochs` and `seed` are overridden per client
    /// and round.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            num_clients: 2,
            rounds: 20,
            local_epochs: 1,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl FederationConfig {
    /// Default settings for the experiment seeded by `seed`, with the learning
    /// rate drawn once from that seed.
    pub fn sampled(seed: u64) -> Self {
        let mut cfg = FederationConfig {
            seed,
            ..Default::default()
        };
        cfg.train.learning_rate = sample_learning_rate(seeds::derive(seed, &[stream::LEARNING_RATE]));
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 || self.rounds == 0 {
            return Err(Error::Config("clients and rounds must both be at least 1".into()));
        }
        self.train.validate()
    }

    /// Local training config of `client` in `round`.
    pub fn client_train_config(&self, client: usize, round: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.local_epochs,
            seed: seeds::derive(self.seed, &[stream::CLIENT, client as u64, round as u64]),
            ..self.train.clone()
        }
    }
}

/// Experiment seed of a sweep driven by `master`. Shared by every scenario so
/// that all of them start from the same weights and learning rate.
pub fn experiment_seed(master: u64) -> u64 {
    seeds::derive(master, &[stream::EXPERIMENT])
}

/// Seed of the poisoning draws for one (attack, percent) scenario.
pub fn attack_seed(master: u64, kind: AttackKind, percent: f64) -> u64 {
    let kind_tag = match kind {
        AttackKind::LabelFlip => 0,
        AttackKind::FeaturePoison => 1,
    };
    seeds::derive(master, &[stream::ATTACK, kind_tag, percent.to_bits()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub client_losses: Vec<f64>,
    pub server_val_accuracy: f64,
}

impl std::fmt::Display for RoundLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "round={} losses=", self.round)?;
        for (i, l) in self.client_losses.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l:.4}")?;
        }
        write!(f, " val_accuracy={:.4}", self.server_val_accuracy)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub final_params: Bau1Params,
    pub round_logs: Vec<RoundLog>,
    pub server_test_accuracy: f64,
    /// Present iff an attack was applied.
    pub asr: Option<f64>,
    pub poison: Option<PoisonReport>,
    pub fp_stats: Option<FpStats>,
}

impl ExperimentOutcome {
    /// Client losses of the last round.
    pub fn final_client_losses(&self) -> &[f64] {
        self.round_logs
            .last()
            .map(|l| l.client_losses.as_slice())
            .unwrap_or(&[])
    }
}

/// Weighted mean of every array, including batch-norm running statistics.
///
/// Computed as `p_0 + sum_i (w_i / W) (p_i - p_0)`, which returns `p_0`
/// exactly when all inputs are equal or all weight sits on client 0.
pub fn fed_avg(params_list: &[Bau1Params], weights: &[f64]) -> Result<Bau1Params> {
    let first = params_list.first().ok_or(Error::EmptyDataset)?;
    if weights.len() != params_list.len() {
        return Err(Error::DimensionMismatch {
            expected: params_list.len(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidWeights);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidWeights);
    }
    let first_arrays = first.arrays();
    for p in &params_list[1..] {
        for (a, b) in p.arrays().iter().zip(&first_arrays) {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    expected: b.len(),
                    found: a.len(),
                });
            }
        }
    }

    let mut out = first.clone();
    for (p, &w) in params_list.iter().zip(weights).skip(1) {
        let share = w / total;
        if share == 0.0 {
            continue;
        }
        for ((dst, src), base) in out.arrays_mut().into_iter().zip(p.arrays()).zip(&first_arrays) {
            for ((d, &s), &b) in dst.iter_mut().zip(src).zip(base.iter()) {
                *d += share * (s - b);
            }
        }
    }
    Ok(out)
}

/// One FedAvg round: every client trains a copy of `server` on its shard, then
/// the server takes the shard-size-weighted mean.
pub fn run_round(
    server: &Bau1Params,
    shards: &[Dataset],
    validation: &Dataset,
    cfg: &FederationConfig,
    round: usize,
) -> Result<(Bau1Params, RoundLog)> {
    if shards.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let results = shards
        .par_iter()
        .enumerate()
        .map(|(c, shard)| train_local(server, shard, &cfg.client_train_config(c, round)))
        .collect::<Result<Vec<_>>>()?;
    let (client_params, client_losses): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let weights: Vec<f64> = shards.iter().map(|s| s.len() as f64).collect();
    let next = fed_avg(&client_params, &weights)?;
    let server_val_accuracy = evaluate(&next, validation)?;
    Ok((
        next,
        RoundLog {
            round,
            client_losses,
            server_val_accuracy,
        },
    ))
}

/// Permutation importance of a random forest fit on the clean training
/// shards and scored on the validation split.
pub fn fp_feature_report(bundle: &SplitBundle, seed: u64) -> Result<ImportanceReport> {
    let cfg = ForestConfig {
        seed: seeds::derive(seed, &[stream::FOREST]),
        ..Default::default()
    };
    forest_importance(
        &bundle.training_set()?,
        &bundle.validation,
        &cfg,
        IMPORTANCE_REPEATS,
    )
}

/// FP target column chosen for the experiment seeded by `seed`.
pub fn select_fp_feature(bundle: &SplitBundle, seed: u64) -> Result<usize> {
    Ok(top_feature(&fp_feature_report(bundle, seed)?))
}

pub fn run_experiment(
    bundle: &SplitBundle,
    attack: Option<&AttackSpec>,
    cfg: &FederationConfig,
) -> Result<ExperimentOutcome> {
    run_experiment_with(bundle, attack, cfg, |_| {})
}

/// Runs all rounds, calling `on_round` after each. The attack, if any,
/// poisons only the target client's shard before the first round.
pub fn run_experiment_with(
    bundle: &SplitBundle,
    attack: Option<&AttackSpec>,
    cfg: &FederationConfig,
    mut on_round: impl FnMut(&RoundLog),
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    if cfg.num_clients != bundle.num_clients() {
        return Err(Error::Config(format!(
            "configured for {} clients but the split has {}",
            cfg.num_clients,
            bundle.num_clients()
        )));
    }

    let mut shards = bundle.client_shards.clone();
    let mut poison = None;
    let mut fp = None;
    if let Some(spec) = attack {
        let wrap = |e: Error| Error::Attack {
            scenario: spec.describe(),
            source: Box::new(e),
        };
        spec.validate().map_err(wrap)?;
        let target = spec.target_client;
        if target >= shards.len() {
            return Err(wrap(Error::Config(format!(
                "target client {target} does not exist"
            ))));
        }
        match spec.kind {
            AttackKind::LabelFlip => {
                let (poisoned, report) =
                    flip_labels(&shards[target], spec.percent, spec.seed).map_err(wrap)?;
                shards[target] = poisoned;
                poison = Some(report);
            }
            AttackKind::FeaturePoison => {
                let feature = match spec.feature_index {
                    Some(f) => f,
                    None => select_fp_feature(bundle, cfg.seed).map_err(wrap)?,
                };
                let resolved = AttackSpec {
                    feature_index: Some(feature),
                    ..spec.clone()
                };
                let (poisoned, stats, report) =
                    fp_poison(&shards[target], &resolved).map_err(wrap)?;
                shards[target] = poisoned;
                poison = Some(report);
                fp = Some(stats);
            }
        }
    }

    let feature_size = bundle.test.num_features();
    let mut server = Bau1Params::init(feature_size, seeds::derive(cfg.seed, &[stream::INIT]));
    let mut round_logs = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let (next, log) = run_round(&server, &shards, &bundle.validation, cfg, round)?;
        on_round(&log);
        server = next;
        round_logs.push(log);
    }

    let server_test_accuracy = evaluate(&server, &bundle.test)?;
    let asr = match (attack.map(|a| a.kind), &fp) {
        (None, _) => None,
        (Some(AttackKind::LabelFlip), _) => {
            Some(attacks::asr(&server, &lf_asr_testset(&bundle.test))?)
        }
        (Some(AttackKind::FeaturePoison), Some(stats)) => {
            let t = fp_asr_testset(&bundle.test, stats.feature_index, stats)?;
            Some(attacks::asr(&server, &t)?)
        }
        (Some(AttackKind::FeaturePoison), None) => unreachable!("FP always records stats"),
    };

    Ok(ExperimentOutcome {
        final_params: server,
        round_logs,
        server_test_accuracy,
        asr,
        poison,
        fp_stats: fp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, split, SyntheticSpec};

    fn params_with(value: f64) -> Bau1Params {
        let mut p = Bau1Params::init(1, 0);
        for a in p.arrays_mut() {
            a.fill(value);
        }
        p
    }

    #[test]
    fn fed_avg_examples() {
        let a = Bau1Params::init(2, 1);
        let b = Bau1Params::init(2, 2);
        assert_eq!(fed_avg(&[a.clone(), a.clone(), a.clone()], &[1.0, 2.0, 3.0]).unwrap(), a);
        assert_eq!(fed_avg(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap(), a);
        assert_eq!(fed_avg(&[a.clone()], &[7.0]).unwrap(), a);
        let avg = fed_avg(&[params_with(2.0), params_with(4.0)], &[1.0, 1.0]).unwrap();
        assert!(avg.arrays().iter().all(|s| s.iter().all(|&v| v == 3.0)));
    }

    #[test]
    fn fed_avg_errors() {
        let a = Bau1Params::init(2, 1);
        assert!(matches!(fed_avg(&[a.clone(), a.clone()], &[0.0, 0.0]), Err(Error::InvalidWeights)));
        assert!(matches!(fed_avg(&[a.clone()], &[-1.0]), Err(Error::InvalidWeights)));
        assert!(fed_avg(&[a.clone(), Bau1Params::init(3, 1)], &[1.0, 1.0]).is_err());
        assert!(fed_avg(&[], &[]).is_err());
    }

    #[test]
    fn round_log_line() {
        let log = RoundLog { round: 3, client_losses: vec![0.5, 0.25], server_val_accuracy: 0.9 };
        assert_eq!(log.to_string(), "round=3 losses=0.5000,0.2500 val_accuracy=0.9000");
    }

    fn small_bundle(k: usize) -> SplitBundle {
        let ds = gen_synthetic(&SyntheticSpec { n: 120, d: 3, seed: 4, ..Default::default() }).unwrap();
        split(&ds, k, 1).unwrap()
    }

    fn quick_cfg(k: usize) -> FederationConfig {
        FederationConfig {
            num_clients: k,
            rounds: 2,
            train: TrainConfig { batch_size: 32, ..Default::default() },
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn zero_local_epochs_leaves_server_unchanged() {
        let bundle = small_bundle(2);
        let cfg = FederationConfig { local_epochs: 0, ..quick_cfg(2) };
        let server = Bau1Params::init(3, 5);
        let (next, log) = run_round(&server, &bundle.client_shards, &bundle.validation, &cfg, 0).unwrap();
        assert_eq!(next, server);
        assert_eq!(log.client_losses.len(), 2);
    }

    #[test]
    fn identical_clients_average_to_either() {
        let bundle = small_bundle(1);
        let shard = bundle.client_shards[0].clone();
        let cfg = quick_cfg(2);
        let server = Bau1Params::init(3, 5);
        // Both clients see the same data with the same seed.
        let local = train_local(&server, &shard, &cfg.client_train_config(0, 0)).unwrap().0;
        let twin = fed_avg(&[local.clone(), local.clone()], &[1.0, 1.0]).unwrap();
        assert_eq!(twin, local);
    }

    #[test]
    fn experiment_shapes_and_lf_complement() {
        let bundle = small_bundle(2);
        let cfg = quick_cfg(2);
        let clean = run_experiment(&bundle, None, &cfg).unwrap();
        assert!(clean.asr.is_none());
        assert_eq!(clean.round_logs.len(), 2);
        assert_eq!(clean.final_client_losses().len(), 2);

        let lf = AttackSpec::new(AttackKind::LabelFlip, 30.0, 1);
        let out = run_experiment(&bundle, Some(&lf), &cfg).unwrap();
        assert!((out.server_test_accuracy + out.asr.unwrap() - 1.0).abs() <= 1e-12);
        assert_eq!(out.poison.unwrap().num_values, bundle.client_shards[0].len() * 30 / 100);

        let zero = AttackSpec::new(AttackKind::LabelFlip, 0.0, 1);
        let out = run_experiment(&bundle, Some(&zero), &cfg).unwrap();
        assert_eq!(out.final_params, clean.final_params);
        assert_eq!(out.round_logs, clean.round_logs);
    }

    #[test]
    fn fp_experiment_and_errors() {
        let bundle = small_bundle(2);
        let cfg = quick_cfg(2);
        let fp = AttackSpec::new(AttackKind::FeaturePoison, 10.0, 1);
        let out = run_experiment(&bundle, Some(&fp), &cfg).unwrap();
        assert!(out.asr.is_some());
        assert_eq!(out.fp_stats.unwrap().feature_index, 0);

        let bad_target = AttackSpec { target_client: 2, ..fp.clone() };
        assert!(matches!(run_experiment(&bundle, Some(&bad_target), &cfg), Err(Error::Attack { .. })));
        assert!(run_experiment(&bundle, None, &quick_cfg(3)).is_err());
    }
}
