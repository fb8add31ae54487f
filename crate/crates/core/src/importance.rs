//! Random forest (CART, gini) and permutation feature importance, used to pick
//! the FP target column.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::seeds::{self, stream};
use crate::{Error, Result};

/// Gini impurity `1 - p0^2 - p1^2`.
pub fn gini(class_counts: [usize; 2]) -> Result<f64> {
    let n = class_counts[0] + class_counts[1];
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(gini_unchecked(class_counts[0], class_counts[1]))
}

fn gini_unchecked(zeros: usize, ones: usize) -> f64 {
    let n = (zeros + ones) as f64;
    let (p0, p1) = (zeros as f64 / n, ones as f64 / n);
    1.0 - (p0 * p0 + p1 * p1)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        class_counts: [usize; 2],
    },
    /// Rows with `x[feature] <= threshold` go left.
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> u8 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { class_counts } => return u8::from(class_counts[1] > class_counts[0]),
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Sum of class counts over all leaves.
    pub fn leaf_counts(&self) -> [usize; 2] {
        match self {
            TreeNode::Leaf { class_counts } => *class_counts,
            TreeNode::Internal { left, right, .. } => {
                let (l, r) = (left.leaf_counts(), right.leaf_counts());
                [l[0] + r[0], l[1] + r[1]]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features tried per split; `ceil(sqrt(d))` when `None`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 50,
            max_depth: 10,
            min_samples_split: 10,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_split == 0 {
            return Err(Error::Config(
                "forest counts (trees, depth, min samples) must be at least 1".into(),
            ));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::Config("features per split must be at least 1".into()));
        }
        Ok(())
    }

    fn split_features(&self, d: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
    pub config: ForestConfig,
    pub num_features: usize,
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [u8],
    cfg: &'a ForestConfig,
    mtry: usize,
}

impl Grower<'_> {
    fn counts(&self, rows: &[usize]) -> [usize; 2] {
        let ones = rows.iter().filter(|&&r| self.y[r] == 1).count();
        [rows.len() - ones, ones]
    }

    fn grow(&self, rows: &mut [usize], depth: usize, rng: &mut impl Rng) -> TreeNode {
        let counts = self.counts(rows);
        let pure = counts[0] == 0 || counts[1] == 0;
        if pure || depth >= self.cfg.max_depth || rows.len() < self.cfg.min_samples_split {
            return TreeNode::Leaf {
                class_counts: counts,
            };
        }
        let Some((feature, threshold)) = self.best_split(rows, counts, rng) else {
            return TreeNode::Leaf {
                class_counts: counts,
            };
        };
        let mut left: Vec<usize> = Vec::new();
        let mut right: Vec<usize> = Vec::new();
        for &r in rows.iter() {
            if self.x[[r, feature]] <= threshold {
                left.push(r);
            } else {
                right.push(r);
            }
        }
        TreeNode::Internal {
            feature,
            threshold,
            left: Box::new(self.grow(&mut left, depth + 1, rng)),
            right: Box::new(self.grow(&mut right, depth + 1, rng)),
        }
    }

    /// Best gini gain over a random feature subset. Features are scanned in
    /// ascending index order and thresholds ascending; only a strictly larger
    /// gain replaces the incumbent.
    fn best_split(
        &self,
        rows: &mut [usize],
        counts: [usize; 2],
        rng: &mut impl Rng,
    ) -> Option<(usize, f64)> {
        let d = self.x.ncols();
        let mut features = index::sample(rng, d, self.mtry).into_vec();
        features.sort_unstable();
        let n = rows.len();
        let parent = gini_unchecked(counts[0], counts[1]);
        let mut best: Option<(f64, usize, f64)> = None;
        for f in features {
            rows.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]));
            let mut left = [0usize; 2];
            for i in 0..n - 1 {
                left[self.y[rows[i]] as usize] += 1;
                let (lo, hi) = (self.x[[rows[i], f]], self.x[[rows[i + 1], f]]);
                if lo == hi {
                    continue;
                }
                let nl = i + 1;
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let weighted = (nl as f64 * gini_unchecked(left[0], left[1])
                    + (n - nl) as f64 * gini_unchecked(right[0], right[1]))
                    / n as f64;
                let gain = parent - weighted;
                if best.map_or(true, |(g, _, _)| gain > g) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((gain, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Fits a single tree on the given rows (duplicates allowed).
pub fn fit_tree(ds: &Dataset, rows: &[usize], cfg: &ForestConfig, seed: u64) -> Result<TreeNode> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let grower = Grower {
        x: ds.x().view(),
        y: ds.y(),
        cfg,
        mtry: cfg.split_features(ds.num_features()),
    };
    let mut rows = rows.to_vec();
    Ok(grower.grow(&mut rows, 0, &mut seeds::rng(seed)))
}

/// Fits `n_trees` trees, each on its own seeded bootstrap sample (or on all
/// rows when bootstrap is off). Tree `t` uses seed
/// `derive(cfg.seed, [FOREST, t])`, so the result does not depend on thread
/// scheduling.
pub fn fit_forest(ds: &Dataset, cfg: &ForestConfig) -> Result<Forest> {
    cfg.validate()?;
    let counts = ds.label_counts();
    for label in 0..2u8 {
        if counts[label as usize] == 0 {
            return Err(Error::MissingClass(label));
        }
    }
    if ds.len() < cfg.min_samples_split {
        return Err(Error::Config(format!(
            "{} rows is fewer than min_samples_split = {}",
            ds.len(),
            cfg.min_samples_split
        )));
    }
    let n = ds.len();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let seed = seeds::derive(cfg.seed, &[stream::FOREST, t as u64]);
            let mut rng = seeds::rng(seed);
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(ds, &rows, cfg, rng.gen())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        trees,
        config: cfg.clone(),
        num_features: ds.num_features(),
    })
}

/// Majority vote over trees; ties go to label 0.
pub fn predict_forest(forest: &Forest, x: ArrayView2<'_, f64>) -> Result<Vec<u8>> {
    if x.ncols() != forest.num_features {
        return Err(Error::DimensionMismatch {
            expected: forest.num_features,
            found: x.ncols(),
        });
    }
    Ok(x.rows()
        .into_iter()
        .map(|row| {
            let ones = forest.trees.iter().filter(|t| t.predict_row(row) == 1).count();
            u8::from(2 * ones > forest.trees.len())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    /// Mean accuracy drop per feature.
    pub scores: Vec<f64>,
    /// Accuracy drop of every repeat, indexed `[feature][repeat]`.
    pub repeat_scores: Vec<Vec<f64>>,
    pub repeats: usize,
    pub baseline_accuracy: f64,
}

fn accuracy(pred: &[u8], y: &[u8]) -> f64 {
    pred.iter().zip(y).filter(|(p, y)| p == y).count() as f64 / y.len() as f64
}

/// Permutation importance of every feature for an arbitrary classifier.
///
/// Feature `j`, repeat `r` shuffles column `j` of a copy of the data with seed
/// `derive(seed, [IMPORTANCE, j, r])` and records `baseline - accuracy`.
pub fn permutation_importance<F>(
    predict: F,
    ds: &Dataset,
    repeats: usize,
    seed: u64,
) -> Result<ImportanceReport>
where
    F: Fn(ArrayView2<'_, f64>) -> Vec<u8> + Sync,
{
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if repeats == 0 {
        return Err(Error::Config("permutation repeats must be at least 1".into()));
    }
    let baseline = accuracy(&predict(ds.x().view()), ds.y());
    let repeat_scores: Vec<Vec<f64>> = (0..ds.num_features())
        .into_par_iter()
        .map(|j| {
            let mut x: Array2<f64> = ds.x().clone();
            let original = ds.x().column(j).to_vec();
            (0..repeats)
                .map(|r| {
                    let mut col = original.clone();
                    let s = seeds::derive(seed, &[stream::IMPORTANCE, j as u64, r as u64]);
                    col.shuffle(&mut seeds::rng(s));
                    x.column_mut(j).iter_mut().zip(&col).for_each(|(dst, &v)| *dst = v);
                    baseline - accuracy(&predict(x.view()), ds.y())
                })
                .collect()
        })
        .collect();
    let scores = repeat_scores
        .iter()
        .map(|r| r.iter().sum::<f64>() / repeats as f64)
        .collect();
    Ok(ImportanceReport {
        scores,
        repeat_scores,
        repeats,
        baseline_accuracy: baseline,
    })
}

/// Index of the highest score; ties go to the lowest index.
pub fn top_feature(report: &ImportanceReport) -> usize {
    let mut best = 0;
    for (j, &s) in report.scores.iter().enumerate() {
        if s > report.scores[best] {
            best = j;
        }
    }
    best
}

/// Fits a forest on `train` and ranks features by permutation importance on
/// `eval`.
pub fn forest_importance(
    train: &Dataset,
    eval: &Dataset,
    cfg: &ForestConfig,
    repeats: usize,
) -> Result<ImportanceReport> {
    let forest = fit_forest(train, cfg)?;
    permutation_importance(
        |x| predict_forest(&forest, x).expect("feature count checked"),
        eval,
        repeats,
        seeds::derive(cfg.seed, &[stream::IMPORTANCE]),
    )
}

/// Writes `feature_name,score` rows.
pub fn write_importance_csv(
    report: &ImportanceReport,
    feature_names: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["feature_name", "score"]).map_err(csv_err)?;
    for (name, score) in feature_names.iter().zip(&report.scores) {
        w.write_record([name.as_str(), &score.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
