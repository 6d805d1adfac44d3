use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{energy_landscape_grid, Energy, Landscape};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: usize,
    pub test: usize,
    pub batch: usize,
    /// Standardize targets with the training mean and std before they
    /// reach the model.
    pub normalize_targets: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train: 2000,
            test: 500,
            batch: 128,
            normalize_targets: true,
        }
    }
}

/// Noiseless samples of `y = x·sin(x)` with `x` uniform on `[0, 2π]`.
/// `train_y`/`test_y` hold raw targets; the model sees
/// `(y − shift) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionDataset {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub test_x: Vec<f64>,
    pub test_y: Vec<f64>,
    pub batch: usize,
    pub shift: f64,
    pub scale: f64,
}

pub fn target(x: f64) -> f64 {
    x * x.sin()
}

impl RegressionDataset {
    /// One pool of distinct draws, split into train then test.
    pub fn generate(cfg: &DatasetConfig, key: StreamKey) -> Result<Self> {
        if cfg.train == 0 || cfg.batch == 0 {
            return Err(Error::Config("dataset.train and dataset.batch must be positive".into()));
        }
        let mut rng = key.rng();
        let total = cfg.train + cfg.test;
        let mut xs: Vec<f64> = Vec::with_capacity(total);
        let mut seen = std::collections::HashSet::new();
        while xs.len() < total {
            let x = rng.random_range(0.0..=TAU);
            if seen.insert(x.to_bits()) {
                xs.push(x);
            }
        }
        let test_x = xs.split_off(cfg.train);
        let train_y: Vec<f64> = xs.iter().copied().map(target).collect();
        let (shift, scale) = if cfg.normalize_targets {
            let n = train_y.len() as f64;
            let mean = train_y.iter().sum::<f64>() / n;
            let var = train_y.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
            (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
        } else {
            (0.0, 1.0)
        };
        Ok(RegressionDataset {
            train_y,
            test_y: test_x.iter().copied().map(target).collect(),
            train_x: xs,
            test_x,
            batch: cfg.batch,
            shift,
            scale,
        })
    }

    pub fn to_model(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }

    pub fn from_model(&self, y: f64) -> f64 {
        y * self.scale + self.shift
    }

    pub fn model_train_y(&self) -> Vec<f64> {
        self.train_y.iter().map(|&y| self.to_model(y)).collect()
    }

    pub fn model_test_y(&self) -> Vec<f64> {
        self.test_y.iter().map(|&y| self.to_model(y)).collect()
    }

    /// Energy landscape of a model trained on this dataset, with the `y`
    /// grid and argmin trace given in raw target units.
    pub fn landscape<E: Energy + ?Sized>(&self, net: &E, xs: &[f64], raw_ys: &[f64]) -> Result<Landscape> {
        let ys: Vec<f64> = raw_ys.iter().map(|&y| self.to_model(y)).collect();
        let mut l = energy_landscape_grid(net, xs, &ys)?;
        l.ys = raw_ys.to_vec();
        l.argmin = l.argmin.iter().map(|&y| self.from_model(y)).collect();
        Ok(l)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.train_x.len().div_ceil(self.batch)
    }

    /// Shuffled training minibatches of inputs and model-scale targets; the
    /// last one may be short.
    pub fn batches(&self, key: StreamKey) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut order: Vec<usize> = (0..self.train_x.len()).collect();
        order.shuffle(&mut key.rng());
        order
            .chunks(self.batch)
            .map(|idx| {
                (
                    idx.iter().map(|&i| self.train_x[i]).collect(),
                    idx.iter().map(|&i| self.to_model(self.train_y[i])).collect(),
                )
            })
            .collect()
    }
}
