use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::seeds::{self, stream};
use crate::{Error, Result};

/// Parameters of a balanced binary dataset with one informative feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub informative_feature: usize,
    /// Gap between the class means of the informative feature, in units of
    /// `noise_sd`.
    pub class_separation: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 5000,
            d: 8,
            informative_feature: 0,
            class_separation: 6.0,
            noise_sd: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Config(format!("synthetic n must be >= 10, got {}", self.n)));
        }
        if self.informative_feature >= self.d {
            return Err(Error::FeatureIndex {
                index: self.informative_feature,
                features: self.d,
            });
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be positive and finite".into()));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(Error::Config("class_separation must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generates `n` rows, half of each label in shuffled order. The informative
/// feature is `N(0, sd)` for label 0 and `N(separation * sd, sd)` for label 1;
/// every other feature is `N(0, sd)` noise. Columns are then min-max scaled
/// into `[0, 1]`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seeds::rng(seeds::derive(spec.seed, &[stream::SYNTHETIC]));
    let mut y: Vec<u8> = (0..spec.n).map(|i| u8::from(i >= spec.n / 2)).collect();
    y.shuffle(&mut rng);

    let noise = Normal::new(0.0, spec.noise_sd).expect("validated sd");
    let gap = spec.class_separation * spec.noise_sd;
    let mut x = Array2::zeros((spec.n, spec.d));
    for (mut row, &label) in x.rows_mut().into_iter().zip(&y) {
        for (j, v) in row.iter_mut().enumerate() {
            let shift = if j == spec.informative_feature && label == 1 {
                gap
            } else {
                0.0
            };
            *v = noise.sample(&mut rng) + shift;
        }
    }
    for mut col in x.columns_mut() {
        let lo = col.fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let range = hi - lo;
        col.mapv_inplace(|v| if range > 0.0 { (v - lo) / range } else { 0.0 });
    }
    Dataset::from_parts(x, y)
}
