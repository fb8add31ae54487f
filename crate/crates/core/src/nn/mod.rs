//! The BAU1 network.
//!
//! ```text
//! input (d) -> dense 2048 -> batch-norm -> ReLU -> dropout
//!           -> dense 1024 -> batch-norm -> ReLU -> dropout
//!           -> dense 2    -> log-softmax
//! ```
//!
//! Everything is `f64`. Training uses mean negative log-likelihood of the
//! true class and classical-momentum SGD.

mod backprop;
pub mod checkpoint;
mod train;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::seeds;

pub use backprop::{loss, Backprop, BatchStats, ForwardMode};
pub use train::{
    evaluate, momentum_update, predict, sample_learning_rate, sgd_step, train_local,
    TrainConfig, LEARNING_RATE_RANGE,
};

pub const HIDDEN1: usize = 2048;
pub const HIDDEN2: usize = 1024;
pub const NUM_CLASSES: usize = 2;

/// Fully connected layer computing `x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `outputs x inputs`, row-major.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    /// Weights uniform in `±1/sqrt(inputs)`, zero bias.
    fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        DenseLayer {
            weights: Array2::from_shape_simple_fn((outputs, inputs), || dist.sample(rng)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Per-feature batch normalization: affine parameters plus running statistics
/// used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    /// Weight of the newest batch in the running statistics.
    pub stat_momentum: f64,
}

impl BatchNormState {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_STAT_MOMENTUM: f64 = 0.1;

    fn new(width: usize) -> Self {
        BatchNormState {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            eps: Self::DEFAULT_EPS,
            stat_momentum: Self::DEFAULT_STAT_MOMENTUM,
        }
    }

    /// Folds one batch's mean and (biased) variance into the running stats.
    fn absorb(&mut self, mean: &Array1<f64>, var: &Array1<f64>) {
        let m = self.stat_momentum;
        self.running_mean
            .zip_mut_with(mean, |r, &b| *r = (1.0 - m) * *r + m * b);
        self.running_var
            .zip_mut_with(var, |r, &b| *r = (1.0 - m) * *r + m * b);
    }
}

/// All state of a BAU1 network.
#[derive(Debug, Clone, PartialEq)]
pub struct Bau1Params {
    pub layer1: DenseLayer,
    pub bn1: BatchNormState,
    pub layer2: DenseLayer,
    pub bn2: BatchNormState,
    pub layer3: DenseLayer,
}

/// Number of arrays in [`Bau1Params::arrays`].
pub const NUM_STATE_ARRAYS: usize = 14;
/// Number of arrays in [`Bau1Grads::arrays`].
pub const NUM_TRAINABLE_ARRAYS: usize = 10;

impl Bau1Params {
    pub fn init(feature_size: usize, seed: u64) -> Self {
        assert!(feature_size >= 1, "feature_size must be at least 1");
        let mut rng = seeds::rng(seed);
        let layer1 = DenseLayer::init(feature_size, HIDDEN1, &mut rng);
        let layer2 = DenseLayer::init(HIDDEN1, HIDDEN2, &mut rng);
        let layer3 = DenseLayer::init(HIDDEN2, NUM_CLASSES, &mut rng);
        Bau1Params {
            layer1,
            bn1: BatchNormState::new(HIDDEN1),
            layer2,
            bn2: BatchNormState::new(HIDDEN2),
            layer3,
        }
    }

    pub fn feature_size(&self) -> usize {
        self.layer1.inputs()
    }

    /// Every array of the network in canonical order: for each block the
    /// dense weights and bias, then (hidden blocks only) gamma, beta, running
    /// mean, running variance. Checkpoints and FedAvg use this order.
    pub fn arrays(&self) -> [&[f64]; NUM_STATE_ARRAYS] {
        [
            slice2(&self.layer1.weights),
            slice1(&self.layer1.bias),
            slice1(&self.bn1.gamma),
            slice1(&self.bn1.beta),
            slice1(&self.bn1.running_mean),
            slice1(&self.bn1.running_var),
            slice2(&self.layer2.weights),
            slice1(&self.layer2.bias),
            slice1(&self.bn2.gamma),
            slice1(&self.bn2.beta),
            slice1(&self.bn2.running_mean),
            slice1(&self.bn2.running_var),
            slice2(&self.layer3.weights),
            slice1(&self.layer3.bias),
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut [f64]; NUM_STATE_ARRAYS] {
        [
            slice2_mut(&mut self.layer1.weights),
            slice1_mut(&mut self.layer1.bias),
            slice1_mut(&mut self.bn1.gamma),
            slice1_mut(&mut self.bn1.beta),
            slice1_mut(&mut self.bn1.running_mean),
            slice1_mut(&mut self.bn1.running_var),
            slice2_mut(&mut self.layer2.weights),
            slice1_mut(&mut self.layer2.bias),
            slice1_mut(&mut self.bn2.gamma),
            slice1_mut(&mut self.bn2.beta),
            slice1_mut(&mut self.bn2.running_mean),
            slice1_mut(&mut self.bn2.running_var),
            slice2_mut(&mut self.layer3.weights),
            slice1_mut(&mut self.layer3.bias),
        ]
    }

    /// Trainable arrays in the order of [`Bau1Grads::arrays`].
    pub fn trainable_mut(&mut self) -> [&mut [f64]; NUM_TRAINABLE_ARRAYS] {
        let [w1, b1, g1, be1, _, _, w2, b2, g2, be2, _, _, w3, b3] = self.arrays_mut();
        [w1, b1, g1, be1, w2, b2, g2, be2, w3, b3]
    }

    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        self.bn1.absorb(&stats.mean1, &stats.var1);
        self.bn2.absorb(&stats.mean2, &stats.var2);
    }
}

/// Gradients of the loss with respect to every trainable array; also used as
/// the momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Bau1Grads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub gamma1: Array1<f64>,
    pub beta1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub gamma2: Array1<f64>,
    pub beta2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl Bau1Grads {
    pub fn zeros_like(params: &Bau1Params) -> Self {
        Bau1Grads {
            w1: Array2::zeros(params.layer1.weights.raw_dim()),
            b1: Array1::zeros(params.layer1.bias.raw_dim()),
            gamma1: Array1::zeros(params.bn1.gamma.raw_dim()),
            beta1: Array1::zeros(params.bn1.beta.raw_dim()),
            w2: Array2::zeros(params.layer2.weights.raw_dim()),
            b2: Array1::zeros(params.layer2.bias.raw_dim()),
            gamma2: Array1::zeros(params.bn2.gamma.raw_dim()),
            beta2: Array1::zeros(params.bn2.beta.raw_dim()),
            w3: Array2::zeros(params.layer3.weights.raw_dim()),
            b3: Array1::zeros(params.layer3.bias.raw_dim()),
        }
    }

    pub fn arrays(&self) -> [&[f64]; NUM_TRAINABLE_ARRAYS] {
        [
            slice2(&self.w1),
            slice1(&self.b1),
            slice1(&self.gamma1),
            slice1(&self.beta1),
            slice2(&self.w2),
            slice1(&self.b2),
            slice1(&self.gamma2),
            slice1(&self.beta2),
            slice2(&self.w3),
            slice1(&self.b3),
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut [f64]; NUM_TRAINABLE_ARRAYS] {
        [
            slice2_mut(&mut self.w1),
            slice1_mut(&mut self.b1),
            slice1_mut(&mut self.gamma1),
            slice1_mut(&mut self.beta1),
            slice2_mut(&mut self.w2),
            slice1_mut(&mut self.b2),
            slice1_mut(&mut self.gamma2),
            slice1_mut(&mut self.beta2),
            slice2_mut(&mut self.w3),
            slice1_mut(&mut self.b3),
        ]
    }
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("owned arrays are contiguous")
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("owned arrays are contiguous")
}

fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("owned arrays are contiguous")
}

fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("owned arrays are contiguous")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_rules() {
        let p = Bau1Params::init(3, 1);
        assert_eq!(p.layer1.weights.dim(), (2048, 3));
        assert_eq!(p.layer2.weights.dim(), (1024, 2048));
        assert_eq!(p.layer3.weights.dim(), (2, 1024));
        for b in [&p.layer1.bias, &p.layer2.bias, &p.layer3.bias] {
            assert!(b.iter().all(|&v| v == 0.0));
        }
        let bound = 1.0 / 3f64.sqrt();
        assert!(p.layer1.weights.iter().all(|w| w.abs() <= bound));
        assert!(p.bn1.gamma.iter().all(|&g| g == 1.0));
        assert!(p.bn2.running_var.iter().all(|&v| v == 1.0));
        assert!(p.bn2.running_mean.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(Bau1Params::init(5, 42), Bau1Params::init(5, 42));
        assert_ne!(Bau1Params::init(5, 42), Bau1Params::init(5, 43));
    }
}
