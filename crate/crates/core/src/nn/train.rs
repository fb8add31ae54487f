use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{loss, Bau1Grads, Bau1Params, ForwardMode};
use crate::data::Dataset;
use crate::seeds;
use crate::{Error, Result};

/// Rows per eval-mode pass.
const EVAL_CHUNK: usize = 1000;

/// Range the per-experiment learning rate is drawn from.
pub const LEARNING_RATE_RANGE: (f64, f64) = (1e-4, 9.9e-3);

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sgd_momentum: f64,
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 1000,
            learning_rate: 5e-3,
            sgd_momentum: 0.9,
            dropout_p: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        if !self.sgd_momentum.is_finite() {
            return Err(Error::Config("momentum must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

/// Uniform draw from [`LEARNING_RATE_RANGE`].
pub fn sample_learning_rate(seed: u64) -> f64 {
    let (lo, hi) = LEARNING_RATE_RANGE;
    seeds::rng(seed).gen_range(lo..=hi)
}

/// Classical momentum on flat arrays: `v = momentum * v + g; p -= lr * v`.
pub fn momentum_update(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    debug_assert!(params.len() == grads.len() && grads.len() == velocity.len());
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// One SGD-with-momentum step over every trainable array.
pub fn sgd_step(
    params: &mut Bau1Params,
    grads: &Bau1Grads,
    velocity: &mut Bau1Grads,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let targets = params.trainable_mut();
    let g = grads.arrays();
    let v = velocity.arrays_mut();
    for ((p, g), v) in targets.iter().zip(&g).zip(&v) {
        if p.len() != g.len() || g.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                found: g.len().min(v.len()),
            });
        }
    }
    for ((p, g), v) in targets.into_iter().zip(g).zip(v) {
        momentum_update(p, g, v, lr, momentum);
    }
    Ok(())
}

fn eval_logprobs(params: &Bau1Params, x: ArrayView2<'_, f64>) -> Result<ndarray::Array2<f64>> {
    // Eval mode never draws from the generator.
    let mut rng = seeds::rng(0);
    let mut parts = Vec::new();
    for chunk in x.axis_chunks_iter(Axis(0), EVAL_CHUNK) {
        parts.push(params.forward(chunk, ForwardMode::Eval, &mut rng)?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(ndarray::concatenate(Axis(0), &views).expect("two columns each"))
}

/// Eval-mode predictions: label 1 only when its log-probability is strictly
/// greater, so ties go to label 0.
pub fn predict(params: &Bau1Params, x: ArrayView2<'_, f64>) -> Result<Vec<u8>> {
    if x.nrows() == 0 {
        return Ok(Vec::new());
    }
    let lp = eval_logprobs(params, x)?;
    Ok(lp.rows().into_iter().map(|r| u8::from(r[1] > r[0])).collect())
}

/// Fraction of rows whose eval-mode prediction matches the label.
pub fn evaluate(params: &Bau1Params, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pred = predict(params, ds.x().view())?;
    let correct = pred.iter().zip(ds.y()).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Trains a copy of `params` on `shard` and returns it with the mean
/// per-sample training loss of the final epoch.
///
/// Every epoch reshuffles the rows with the seeded generator and walks them in
/// batches of `batch_size`; a trailing batch of a single row is skipped. The
/// momentum buffer starts at zero. With `epochs = 0` the parameters are
/// returned unchanged with their eval-mode loss on the shard.
pub fn train_local(
    params: &Bau1Params,
    shard: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Bau1Params, f64)> {
    cfg.validate()?;
    if shard.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.epochs == 0 {
        let lp = eval_logprobs(params, shard.x().view())?;
        return Ok((params.clone(), loss(lp.view(), shard.y())?));
    }
    if shard.len() < 2 {
        return Err(Error::BatchTooSmall(shard.len()));
    }

    let mut params = params.clone();
    let mut velocity = Bau1Grads::zeros_like(&params);
    let mut rng = seeds::rng(cfg.seed);
    let mode = ForwardMode::Train {
        dropout_p: cfg.dropout_p,
    };
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut epoch_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let x = shard.x().select(Axis(0), batch);
            let y: Vec<u8> = batch.iter().map(|&i| shard.y()[i]).collect();
            let bp = params.grad(x.view(), &y, mode, &mut rng)?;
            sgd_step(&mut params, &bp.grads, &mut velocity, cfg.learning_rate, cfg.sgd_momentum)?;
            if let Some(stats) = &bp.batch_stats {
                params.update_running_stats(stats);
            }
            total += bp.loss * batch.len() as f64;
            seen += batch.len();
        }
        epoch_loss = total / seen as f64;
    }
    Ok((params, epoch_loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use ndarray::Array2;

    #[test]
    fn plain_sgd_step() {
        let (mut p, mut v) = ([5.0], [0.0]);
        momentum_update(&mut p, &[2.0], &mut v, 1.0, 0.0);
        assert_eq!(p, [3.0]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = Bau1Params::init(2, 1);
        let before = params.clone();
        let grads = Bau1Grads::zeros_like(&params);
        let mut velocity = Bau1Grads::zeros_like(&params);
        sgd_step(&mut params, &grads, &mut velocity, 0.1, 0.9).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn momentum_recurrence() {
        // v1 = 1, p1 = -0.1; v2 = 1.9, p2 = -0.1 - 0.19
        let (mut p, mut v) = ([0.0], [0.0]);
        for _ in 0..2 {
            momentum_update(&mut p, &[1.0], &mut v, 0.1, 0.9);
        }
        assert!((p[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn sgd_step_rejects_shape_mismatch() {
        let mut params = Bau1Params::init(2, 1);
        let other = Bau1Params::init(3, 1);
        let grads = Bau1Grads::zeros_like(&other);
        let mut velocity = Bau1Grads::zeros_like(&other);
        assert!(sgd_step(&mut params, &grads, &mut velocity, 0.1, 0.9).is_err());
    }

    fn tiny(n: usize, seed: u64) -> Dataset {
        gen_synthetic(&SyntheticSpec {
            n,
            d: 3,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let params = Bau1Params::init(3, 2);
        let shard = tiny(40, 1);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let (out, l) = train_local(&params, &shard, &cfg).unwrap();
        assert_eq!(out, params);
        assert!(l.is_finite() && l > 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let params = Bau1Params::init(3, 2);
        let shard = tiny(60, 1);
        let cfg = TrainConfig { epochs: 2, batch_size: 16, seed: 5, ..Default::default() };
        let a = train_local(&params, &shard, &cfg).unwrap();
        let b = train_local(&params, &shard, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, params);
    }

    #[test]
    fn training_errors() {
        let params = Bau1Params::init(3, 2);
        let one = tiny(40, 1).select(&[0]);
        assert!(matches!(
            train_local(&params, &one, &TrainConfig::default()),
            Err(Error::BatchTooSmall(1))
        ));
        let bad = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(train_local(&params, &tiny(40, 1), &bad).is_err());
    }

    #[test]
    fn training_beats_uniform_baseline() {
        let ds = gen_synthetic(&SyntheticSpec { n: 2000, d: 4, seed: 17, ..Default::default() }).unwrap();
        let params = Bau1Params::init(4, 3);
        let cfg = TrainConfig { epochs: 10, batch_size: 200, seed: 1, ..Default::default() };
        let (trained, l) = train_local(&params, &ds, &cfg).unwrap();
        assert!(l < 2f64.ln(), "final loss {l}");
        assert!(evaluate(&trained, &ds).unwrap() > 0.9);
    }

    #[test]
    fn constant_predictor_on_balanced_data() {
        let mut params = Bau1Params::init(3, 2);
        params.layer3.weights.fill(0.0);
        // tie everywhere -> label 0
        let ds = tiny(50, 4);
        assert_eq!(evaluate(&params, &ds).unwrap(), 0.5);
        params.layer3.bias[1] = 1.0;
        assert_eq!(predict(&params, ds.x().view()).unwrap(), vec![1; 50]);
    }

    #[test]
    fn evaluation_is_duplication_invariant() {
        let params = Bau1Params::init(3, 9);
        let ds = tiny(30, 2);
        let doubled = Dataset::concat(&[ds.clone(), ds.clone()]).unwrap();
        assert_eq!(evaluate(&params, &ds).unwrap(), evaluate(&params, &doubled).unwrap());
    }

    #[test]
    fn separable_data_fits_perfectly() {
        let mut x = Array2::zeros((100, 2));
        let mut y = Vec::new();
        for i in 0..100 {
            let label = (i % 2) as u8;
            x[[i, 0]] = if label == 1 { 0.8 + 0.002 * i as f64 } else { 0.2 - 0.002 * i as f64 };
            x[[i, 1]] = (i as f64 * 0.37).fract();
            y.push(label);
        }
        let ds = Dataset::from_parts(x, y).unwrap();
        let cfg = TrainConfig { epochs: 30, batch_size: 20, seed: 2, ..Default::default() };
        let (trained, _) = train_local(&Bau1Params::init(2, 6), &ds, &cfg).unwrap();
        assert_eq!(evaluate(&trained, &ds).unwrap(), 1.0);
    }

    #[test]
    fn learning_rate_sampling() {
        for s in 0..100 {
            let lr = sample_learning_rate(s);
            assert!((1e-4..=9.9e-3).contains(&lr));
        }
        assert_eq!(sample_learning_rate(4), sample_learning_rate(4));
    }
}
