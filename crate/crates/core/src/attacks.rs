//! Data poisoning attacks on a client shard and the matching ASR test sets.
//!
//! * Label flipping (LF) complements the labels of a random subset of rows.
//! * Feature poisoning (FP) rewrites one feature column: every value becomes
//!   its class's min-max scaled mean, then label-1 rows among the first
//!   `floor(n * P / 100)` rows receive a random scaled label-0 value.
//!
//! The ASR (attack success rate) of a model is its accuracy on a transformed
//! test set: all labels flipped for LF, class means swapped in the target
//! column for FP.

use std::fmt;

use rand::seq::index;
use rand::Rng;

use crate::data::Dataset;
use crate::nn::{evaluate, Bau1Params};
use crate::seeds;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackKind {
    LabelFlip,
    FeaturePoison,
}

impl AttackKind {
    pub fn code(self) -> &'static str {
        match self {
            AttackKind::LabelFlip => "LF",
            AttackKind::FeaturePoison => "FP",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lf" => Ok(AttackKind::LabelFlip),
            "fp" => Ok(AttackKind::FeaturePoison),
            other => Err(Error::Config(format!("unknown attack {other:?}; expected lf or fp"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Poison percentage `P` in `[0, 100]`.
    pub percent: f64,
    pub target_client: usize,
    /// FP target column; chosen by permutation importance when `None`.
    pub feature_index: Option<usize>,
    pub seed: u64,
    /// Apply the class-mean rewrite to the whole FP column before the
    /// per-row replacement. Off only for ablation.
    pub fp_step3: bool,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, percent: f64, seed: u64) -> Self {
        AttackSpec {
            kind,
            percent,
            target_client: 0,
            feature_index: None,
            seed,
            fp_step3: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.percent) {
            return Err(Error::Config(format!(
                "poison percentage must be in [0, 100], got {}",
                self.percent
            )));
        }
        Ok(())
    }

    /// Short human-readable identity, e.g. `FP attack at 5% on client 0`.
    pub fn describe(&self) -> String {
        format!(
            "{} attack at {}% on client {}",
            self.kind, self.percent, self.target_client
        )
    }
}

/// Column statistics of the FP target feature, computed on the clean shard.
#[derive(Debug, Clone, PartialEq)]
pub struct FpStats {
    pub feature_index: usize,
    pub min_value: f64,
    pub max_value: f64,
    pub average_zero: f64,
    pub average_one: f64,
    pub normalized_avg_zero: f64,
    pub normalized_avg_one: f64,
    /// Distinct label-0 values, min-max scaled, ascending.
    pub unique_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoisonReport {
    pub requested_percent: f64,
    /// `floor(n * P / 100)`.
    pub num_values: usize,
    pub num_actually_modified: usize,
}

/// Number of rows targeted at `percent` of `n`: `floor(n * percent / 100)`.
pub fn num_poison(n: usize, percent: f64) -> usize {
    let count = (n as f64 * percent / 100.0).floor();
    if count <= 0.0 {
        0
    } else {
        (count as usize).min(n)
    }
}

/// Complements the labels of `num_poison(n, percent)` rows drawn uniformly
/// without replacement.
pub fn flip_labels(shard: &Dataset, percent: f64, seed: u64) -> Result<(Dataset, PoisonReport)> {
    if shard.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = shard.len();
    let count = num_poison(n, percent);
    let mut y = shard.y().to_vec();
    for i in index::sample(&mut seeds::rng(seed), n, count) {
        y[i] = 1 - y[i];
    }
    let poisoned = Dataset::new(shard.x().clone(), y, shard.feature_names().to_vec())?;
    Ok((
        poisoned,
        PoisonReport {
            requested_percent: percent,
            num_values: count,
            num_actually_modified: count,
        },
    ))
}

fn check_feature(ds: &Dataset, feature_index: usize) -> Result<()> {
    if feature_index >= ds.num_features() {
        return Err(Error::FeatureIndex {
            index: feature_index,
            features: ds.num_features(),
        });
    }
    Ok(())
}

pub fn compute_fp_stats(shard: &Dataset, feature_index: usize) -> Result<FpStats> {
    check_feature(shard, feature_index)?;
    let column = shard.x().column(feature_index);
    let mut min_value = f64::INFINITY;
    let mut max_value = f64::NEG_INFINITY;
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (&v, &l) in column.iter().zip(shard.y()) {
        min_value = min_value.min(v);
        max_value = max_value.max(v);
        sums[l as usize] += v;
        counts[l as usize] += 1;
    }
    for label in 0..2u8 {
        if counts[label as usize] == 0 {
            return Err(Error::MissingClass(label));
        }
    }
    if max_value <= min_value {
        return Err(Error::DegenerateColumn {
            feature: feature_index,
        });
    }
    let range = max_value - min_value;
    let scale = |v: f64| (v - min_value) / range;
    let average_zero = sums[0] / counts[0] as f64;
    let average_one = sums[1] / counts[1] as f64;

    let mut unique_values: Vec<f64> = column
        .iter()
        .zip(shard.y())
        .filter(|&(_, &l)| l == 0)
        .map(|(&v, _)| v)
        .collect();
    unique_values.sort_by(f64::total_cmp);
    unique_values.dedup();
    let unique_values = unique_values.into_iter().map(scale).collect();

    Ok(FpStats {
        feature_index,
        min_value,
        max_value,
        average_zero,
        average_one,
        normalized_avg_zero: scale(average_zero),
        normalized_avg_one: scale(average_one),
        unique_values,
    })
}

/// Feature poisoning of one column. Labels never change.
///
/// 1. Column min and max, 2. per-class means (both in [`FpStats`]).
/// 3. Every value becomes its row's class mean, min-max scaled (skipped when
///    `spec.fp_step3` is off).
/// 4. For `i` in `0..floor(n * P / 100)` a random index into the scaled
///    label-0 unique values is drawn; if row `i` has label 1 its value is
///    replaced by that unique value.
pub fn fp_poison(shard: &Dataset, spec: &AttackSpec) -> Result<(Dataset, FpStats, PoisonReport)> {
    spec.validate()?;
    let feature = spec
        .feature_index
        .ok_or_else(|| Error::Config("FP attack needs a feature index".into()))?;
    let stats = compute_fp_stats(shard, feature)?;

    let (mut x, y, names) = shard.clone().into_parts();
    let mut column = x.column_mut(feature);
    if spec.fp_step3 {
        for (v, &l) in column.iter_mut().zip(&y) {
            *v = if l == 0 {
                stats.normalized_avg_zero
            } else {
                stats.normalized_avg_one
            };
        }
    }

    let num_values = num_poison(y.len(), spec.percent);
    let mut rng = seeds::rng(spec.seed);
    let mut modified = 0;
    for i in 0..num_values {
        let pick = rng.gen_range(0..stats.unique_values.len());
        if y[i] == 1 {
            column[i] = stats.unique_values[pick];
            modified += 1;
        }
    }

    let report = PoisonReport {
        requested_percent: spec.percent,
        num_values,
        num_actually_modified: modified,
    };
    Ok((Dataset::new(x, y, names)?, stats, report))
}

/// Test set for the LF ASR: every label complemented.
pub fn lf_asr_testset(test: &Dataset) -> Dataset {
    test.with_flipped_labels()
}

/// Test set for the FP ASR: label-0 rows take the scaled label-1 mean in the
/// target column and label-1 rows the scaled label-0 mean.
pub fn fp_asr_testset(test: &Dataset, feature_index: usize, stats: &FpStats) -> Result<Dataset> {
    check_feature(test, feature_index)?;
    let (mut x, y, names) = test.clone().into_parts();
    for (v, &l) in x.column_mut(feature_index).iter_mut().zip(&y) {
        *v = if l == 0 {
            stats.normalized_avg_one
        } else {
            stats.normalized_avg_zero
        };
    }
    Dataset::new(x, y, names)
}

/// Attack success rate: accuracy on the attack's transformed test set.
pub fn asr(params: &Bau1Params, transformed_test: &Dataset) -> Result<f64> {
    evaluate(params, transformed_test)
}
