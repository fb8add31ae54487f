use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{Bau1Grads, Bau1Params, BatchNormState, DenseLayer};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardMode {
    /// Batch statistics for normalization, dropout active.
    Train { dropout_p: f64 },
    /// Running statistics for normalization, no dropout.
    Eval,
}

/// Per-feature batch mean and biased variance of both batch-norm inputs,
/// recorded by a train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean1: Array1<f64>,
    pub var1: Array1<f64>,
    pub mean2: Array1<f64>,
    pub var2: Array1<f64>,
}

/// Result of a forward and backward pass over one batch.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub loss: f64,
    pub logprobs: Array2<f64>,
    pub grads: Bau1Grads,
    /// Present in train mode.
    pub batch_stats: Option<BatchStats>,
    /// Dropout multipliers (0 or `1/(1-p)`) of both hidden blocks, present in
    /// train mode with `p > 0`.
    pub dropout_masks: Option<[Array2<f64>; 2]>,
}

struct HiddenTrace {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    pre_relu: Array2<f64>,
    mask: Option<Array2<f64>>,
    out: Array2<f64>,
    stats: Option<(Array1<f64>, Array1<f64>)>,
}

struct Trace {
    h1: HiddenTrace,
    h2: HiddenTrace,
    logprobs: Array2<f64>,
}

/// `a.t().dot(b)` comes out column-major when both operands are also
/// column-contiguous; gradients are addressed as flat row-major slices.
fn row_major(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Mean negative log-probability of the true labels.
pub fn loss(logprobs: ArrayView2<'_, f64>, labels: &[u8]) -> Result<f64> {
    if logprobs.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: logprobs.nrows(),
            found: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (row, &l) in logprobs.rows().into_iter().zip(labels) {
        if l as usize >= row.len() {
            return Err(Error::LabelValue(l));
        }
        total -= row[l as usize];
    }
    Ok(total / labels.len() as f64)
}

fn log_softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
}

fn dense(layer: &DenseLayer, input: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut z = input.dot(&layer.weights.t());
    z += &layer.bias;
    z
}

fn hidden_forward(
    layer: &DenseLayer,
    bn: &BatchNormState,
    input: ArrayView2<'_, f64>,
    mode: ForwardMode,
    rng: &mut impl Rng,
) -> HiddenTrace {
    let mut z = dense(layer, input);
    let rows = z.nrows() as f64;
    let (inv_std, stats) = match mode {
        ForwardMode::Train { .. } => {
            let mean = z.sum_axis(Axis(0)) / rows;
            z -= &mean;
            let var = z.fold_axis(Axis(0), 0.0, |&acc, &v| acc + v * v) / rows;
            (var.mapv(|v| 1.0 / (v + bn.eps).sqrt()), Some((mean, var)))
        }
        ForwardMode::Eval => {
            z -= &bn.running_mean;
            (bn.running_var.mapv(|v| 1.0 / (v + bn.eps).sqrt()), None)
        }
    };
    z *= &inv_std;
    let xhat = z;
    let mut pre_relu = &xhat * &bn.gamma;
    pre_relu += &bn.beta;

    let mut out = pre_relu.mapv(|v| v.max(0.0));
    let mask = match mode {
        ForwardMode::Train { dropout_p } if dropout_p > 0.0 => {
            let scale = 1.0 / (1.0 - dropout_p);
            let mask = Array2::from_shape_simple_fn(out.raw_dim(), || {
                if rng.gen::<f64>() < dropout_p {
                    0.0
                } else {
                    scale
                }
            });
            out *= &mask;
            Some(mask)
        }
        _ => None,
    };
    HiddenTrace {
        xhat,
        inv_std,
        pre_relu,
        mask,
        out,
        stats,
    }
}

/// Maps the gradient at a hidden block's output back to its dense
/// pre-activation, returning `(d_pre_activation, d_gamma, d_beta)`.
fn hidden_backward(
    trace: &HiddenTrace,
    bn: &BatchNormState,
    mut d_out: Array2<f64>,
    mode: ForwardMode,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    // dropout, then ReLU
    if let Some(mask) = &trace.mask {
        d_out *= mask;
    }
    Zip::from(&mut d_out)
        .and(&trace.pre_relu)
        .for_each(|g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
    let dy = d_out;
    let d_beta = dy.sum_axis(Axis(0));
    let d_gamma = (&dy * &trace.xhat).sum_axis(Axis(0));

    let scale = &bn.gamma * &trace.inv_std;
    let dz = match mode {
        ForwardMode::Train { .. } => {
            let rows = dy.nrows() as f64;
            let mut dz = dy;
            Zip::from(dz.rows_mut())
                .and(trace.xhat.rows())
                .for_each(|mut g, xh| {
                    Zip::from(&mut g)
                        .and(&xh)
                        .and(&scale)
                        .and(&d_beta)
                        .and(&d_gamma)
                        .for_each(|g, &xh, &s, &db, &dg| {
                            *g = s / rows * (rows * *g - db - xh * dg);
                        });
                });
            dz
        }
        ForwardMode::Eval => dy * &scale,
    };
    (dz, d_gamma, d_beta)
}

impl Bau1Params {
    fn check_batch(&self, batch: ArrayView2<'_, f64>, mode: ForwardMode) -> Result<()> {
        if batch.ncols() != self.feature_size() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_size(),
                found: batch.ncols(),
            });
        }
        match mode {
            ForwardMode::Train { dropout_p } => {
                if !(0.0..1.0).contains(&dropout_p) {
                    return Err(Error::Config(format!(
                        "dropout probability must be in [0, 1), got {dropout_p}"
                    )));
                }
                if batch.nrows() < 2 {
                    return Err(Error::BatchTooSmall(batch.nrows()));
                }
            }
            ForwardMode::Eval if batch.nrows() == 0 => return Err(Error::EmptyDataset),
            ForwardMode::Eval => {}
        }
        Ok(())
    }

    fn trace(
        &self,
        batch: ArrayView2<'_, f64>,
        mode: ForwardMode,
        rng: &mut impl Rng,
    ) -> Result<Trace> {
        self.check_batch(batch, mode)?;
        let h1 = hidden_forward(&self.layer1, &self.bn1, batch, mode, rng);
        let h2 = hidden_forward(&self.layer2, &self.bn2, h1.out.view(), mode, rng);
        let mut logprobs = dense(&self.layer3, h2.out.view());
        log_softmax_rows(&mut logprobs);
        Ok(Trace { h1, h2, logprobs })
    }

    /// Log-probabilities of both classes for each row of `batch`. A train-mode
    /// pass does not touch the running statistics; see
    /// [`Bau1Params::update_running_stats`].
    pub fn forward(
        &self,
        batch: ArrayView2<'_, f64>,
        mode: ForwardMode,
        rng: &mut impl Rng,
    ) -> Result<Array2<f64>> {
        Ok(self.trace(batch, mode, rng)?.logprobs)
    }

    /// Loss and exact gradients for one batch. The dropout masks used for the
    /// loss are the ones differentiated through.
    pub fn grad(
        &self,
        batch: ArrayView2<'_, f64>,
        labels: &[u8],
        mode: ForwardMode,
        rng: &mut impl Rng,
    ) -> Result<Backprop> {
        if labels.len() != batch.nrows() {
            return Err(Error::DimensionMismatch {
                expected: batch.nrows(),
                found: labels.len(),
            });
        }
        let Trace { h1, h2, logprobs } = self.trace(batch, mode, rng)?;
        let loss = loss(logprobs.view(), labels)?;

        let rows = batch.nrows() as f64;
        let mut dz3 = logprobs.mapv(f64::exp);
        for (mut row, &l) in dz3.rows_mut().into_iter().zip(labels) {
            row[l as usize] -= 1.0;
        }
        dz3 /= rows;
        let w3 = row_major(dz3.t().dot(&h2.out));
        let b3 = dz3.sum_axis(Axis(0));

        let d_out2 = dz3.dot(&self.layer3.weights);
        let (dz2, gamma2, beta2) = hidden_backward(&h2, &self.bn2, d_out2, mode);
        let w2 = row_major(dz2.t().dot(&h1.out));
        let b2 = dz2.sum_axis(Axis(0));

        let d_out1 = dz2.dot(&self.layer2.weights);
        let (dz1, gamma1, beta1) = hidden_backward(&h1, &self.bn1, d_out1, mode);
        let w1 = row_major(dz1.t().dot(&batch));
        let b1 = dz1.sum_axis(Axis(0));

        let batch_stats = match (h1.stats, h2.stats) {
            (Some((mean1, var1)), Some((mean2, var2))) => Some(BatchStats {
                mean1,
                var1,
                mean2,
                var2,
            }),
            _ => None,
        };
        let dropout_masks = match (h1.mask, h2.mask) {
            (Some(m1), Some(m2)) => Some([m1, m2]),
            _ => None,
        };
        Ok(Backprop {
            loss,
            logprobs,
            grads: Bau1Grads {
                w1,
                b1,
                gamma1,
                beta1,
                w2,
                b2,
                gamma2,
                beta2,
                w3,
                b3,
            },
            batch_stats,
            dropout_masks,
        })
    }
}
