use ndarray::{Array1, Array2, Zip};

use crate::error::{Error, Result};

use super::model::{FnnModel, Gradients};

pub const ADAGRAD_EPS: f64 = 1e-8;

/// One AdaGrad update on flat slices: `acc += g^2; p -= lr g / (sqrt(acc) + eps)`.
pub fn adagrad_step(params: &mut [f64], grads: &[f64], acc: &mut [f64], lr: f64, eps: f64) {
    for ((p, &g), a) in params.iter_mut().zip(grads).zip(acc.iter_mut()) {
        *a += g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
}

/// Accumulated squared gradients for every parameter of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGrad {
    pub lr: f64,
    pub eps: f64,
    pub steps: u64,
    acc: Vec<(Array2<f64>, Array1<f64>)>,
}

impl AdaGrad {
    pub fn new(model: &FnnModel, lr: f64, eps: f64) -> Self {
        let acc = model
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
            .collect();
        Self { lr, eps, steps: 0, acc }
    }

    pub fn accumulators(&self) -> &[(Array2<f64>, Array1<f64>)] {
        &self.acc
    }

    pub fn step(&mut self, model: &mut FnnModel, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.acc.len() {
            return Err(Error::shape("gradient layers", (self.acc.len(), 1), (grads.layers.len(), 1)));
        }
        let (lr, eps) = (self.lr, self.eps);
        for ((layer, (gw, gb)), (aw, ab)) in
            model.layers_mut().iter_mut().zip(&grads.layers).zip(&mut self.acc)
        {
            crate::error::ensure_shape("weight gradient", layer.weights.dim(), gw.dim())?;
            Zip::from(&mut layer.weights).and(gw).and(aw).for_each(|p, &g, a| {
                *a += g * g;
                *p -= lr * g / (a.sqrt() + eps);
            });
            Zip::from(&mut layer.bias).and(gb).and(ab).for_each(|p, &g, a| {
                *a += g * g;
                *p -= lr * g / (a.sqrt() + eps);
            });
        }
        self.steps += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops once `patience` consecutive epochs have passed after the last one
/// that beat the reference loss by more than `threshold` (relative), and
/// remembers the lowest loss seen.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub threshold: f64,
    reference: f64,
    since_improvement: usize,
    best: f64,
    best_epoch: Option<usize>,
}

impl EarlyStopping {
    pub fn new(patience: usize, threshold: f64) -> Self {
        Self {
            patience,
            threshold,
            reference: f64::INFINITY,
            since_improvement: 0,
            best: f64::INFINITY,
            best_epoch: None,
        }
    }

    /// Records the validation loss of `epoch`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
        }
        if loss < (1.0 - self.threshold) * self.reference {
            self.reference = loss;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        if self.since_improvement > self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }

    /// Whether the last observed loss is the best so far.
    pub fn is_best(&self, epoch: usize) -> bool {
        self.best_epoch == Some(epoch)
    }
}
