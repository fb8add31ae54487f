use rand::seq::SliceRandom;

use super::Dataset;
use crate::seeds::{self, stream};
use crate::{Error, Result};

/// Client training shards plus held-out validation and test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub client_shards: Vec<Dataset>,
    pub validation: Dataset,
    pub test: Dataset,
}

impl SplitBundle {
    pub fn num_clients(&self) -> usize {
        self.client_shards.len()
    }

    pub fn train_len(&self) -> usize {
        self.client_shards.iter().map(Dataset::len).sum()
    }

    /// All client shards stacked in client order.
    pub fn training_set(&self) -> Result<Dataset> {
        Dataset::concat(&self.client_shards)
    }
}

/// `(train, validation, test)` row counts for `n` rows: validation and test
/// each get `floor(n / 10)`, training keeps the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held = n / 10;
    (n - 2 * held, held, held)
}

/// Stratified shuffle split into training, validation, and test parts, with
/// the training part partitioned over `num_clients` shards.
///
/// Each part's count of label-1 rows is the part size times the global
/// label-1 fraction, rounded to nearest.
pub fn split(ds: &Dataset, num_clients: usize, seed: u64) -> Result<SplitBundle> {
    let n = ds.len();
    if n < 10 {
        return Err(Error::Stratification(format!(
            "need at least 10 rows, got {n}"
        )));
    }
    let mut rng = seeds::rng(seeds::derive(seed, &[stream::SPLIT]));
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in ds.y().iter().enumerate() {
        by_class[l as usize].push(i);
    }
    for (label, rows) in by_class.iter_mut().enumerate() {
        if rows.is_empty() {
            return Err(Error::Stratification(format!(
                "label {label} does not occur in the data"
            )));
        }
        rows.shuffle(&mut rng);
    }

    let (_, n_val, n_test) = split_sizes(n);
    let ones = by_class[1].len();
    let share = |size: usize| ((size * ones) as f64 / n as f64).round() as usize;

    let mut cursor = [0usize; 2];
    let mut take = |size: usize, want_ones: usize| -> Vec<usize> {
        let avail = [by_class[0].len() - cursor[0], by_class[1].len() - cursor[1]];
        let k1 = want_ones.min(avail[1]).max(size.saturating_sub(avail[0]));
        let counts = [size - k1, k1];
        let mut rows = Vec::with_capacity(size);
        for c in 0..2 {
            rows.extend_from_slice(&by_class[c][cursor[c]..cursor[c] + counts[c]]);
            cursor[c] += counts[c];
        }
        rows
    };
    let mut val_rows = take(n_val, share(n_val));
    let mut test_rows = take(n_test, share(n_test));
    let mut train_rows: Vec<usize> = by_class[0][cursor[0]..]
        .iter()
        .chain(&by_class[1][cursor[1]..])
        .copied()
        .collect();
    if cursor[0] == by_class[0].len() || cursor[1] == by_class[1].len() {
        return Err(Error::Stratification(
            "too few rows to keep both labels in the training part".into(),
        ));
    }
    for rows in [&mut val_rows, &mut test_rows, &mut train_rows] {
        rows.shuffle(&mut rng);
    }

    let train = ds.select(&train_rows);
    let client_shards = partition_clients(
        &train,
        num_clients,
        seeds::derive(seed, &[stream::PARTITION]),
    )?;
    Ok(SplitBundle {
        client_shards,
        validation: ds.select(&val_rows),
        test: ds.select(&test_rows),
    })
}

/// Shuffles the training rows and deals them into `k` contiguous shards whose
/// sizes differ by at most one (earlier shards take the remainder). With
/// `k = 1` the training set is returned as is.
pub fn partition_clients(train: &Dataset, k: usize, seed: u64) -> Result<Vec<Dataset>> {
    if k == 0 {
        return Err(Error::Config("number of clients must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k > train.len() {
        return Err(Error::TooManyClients {
            clients: k,
            rows: train.len(),
        });
    }
    if k == 1 {
        return Ok(vec![train.clone()]);
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut seeds::rng(seed));
    let base = train.len() / k;
    let extra = train.len() % k;
    let mut start = 0;
    Ok((0..k)
        .map(|c| {
            let size = base + usize::from(c < extra);
            let shard = train.select(&order[start..start + size]);
            start += size;
            shard
        })
        .collect())
}
