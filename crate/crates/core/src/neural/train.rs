use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::features::{FeatureLayout, NormStats, Normalizer};
use crate::masks::MaskDomain;
use crate::rng;

use super::loss::{LossKind, Targets};
use super::model::{FnnModel, Mode};
use super::optim::{AdaGrad, EarlyStopping, StopDecision, ADAGRAD_EPS};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adagrad_eps: f64,
    pub dropout: f64,
    pub patience: usize,
    /// Relative validation improvement that resets the patience counter.
    pub improvement: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![1024, 1024, 1024],
            batch_size: 1024,
            learning_rate: 0.01,
            adagrad_eps: ADAGRAD_EPS,
            dropout: 0.2,
            patience: 20,
            improvement: 0.01,
            max_epochs: 500,
            seed: 0,
            loss: LossKind::MaskMse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0,1), got {}", self.dropout));
        }
        if !(self.improvement > 0.0 && self.improvement < 1.0) {
            return fail(format!("improvement threshold must be in (0,1), got {}", self.improvement));
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return fail("patience and max_epochs must be >= 1".into());
        }
        if self.hidden.contains(&0) {
            return fail("hidden layer sizes must be >= 1".into());
        }
        Ok(())
    }
}

/// Features (`dims x frames`) with matching per-frame targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(features: Array2<f64>, targets: Targets) -> Result<Self> {
        targets.validate()?;
        if features.ncols() != targets.frames() {
            return Err(Error::shape("dataset frames", (features.nrows(), targets.frames()), features.dim()));
        }
        Ok(Self { features, targets })
    }

    pub fn frames(&self) -> usize {
        self.features.ncols()
    }

    /// Joins datasets frame-wise; all parts must use the same target kind.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::EmptyInput("no datasets to join".into()))?;
        let kind = first.targets.kind();
        if parts.iter().any(|p| p.targets.kind() != kind) {
            return Err(Error::InvalidData("datasets use different target kinds".into()));
        }
        let cat = |arrays: Vec<&Array2<f64>>| -> Result<Array2<f64>> {
            let views: Vec<_> = arrays.iter().map(|a| a.view()).collect();
            ndarray::concatenate(Axis(1), &views).map_err(|_| Error::InvalidData("dataset dims differ".into()))
        };
        let features = cat(parts.iter().map(|p| &p.features).collect())?;
        let n_parts = first.targets.parts().len();
        let joined = (0..n_parts)
            .map(|i| cat(parts.iter().map(|p| p.targets.parts()[i]).collect()))
            .collect::<Result<Vec<_>>>()?;
        let targets = Targets::from_parts(kind, joined)?;
        Dataset::new(features, targets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub early_stopped: bool,
}

/// Mean loss of the model over a whole dataset (already normalised), in eval mode.
pub fn evaluate_loss(model: &FnnModel, features: &Array2<f64>, targets: &Targets, chunk: usize) -> Result<f64> {
    let n = features.ncols();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + chunk.max(1)).min(n);
        let cols: Vec<usize> = (start..end).collect();
        let out = model.forward(features.slice(ndarray::s![.., start..end]), Mode::Eval)?.output;
        let (loss, _) = targets.select(&cols).loss(&out)?;
        total += loss * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Fits the input normaliser on `train`, trains with AdaGrad and early
/// stopping, and returns the snapshot with the lowest validation loss.
///
/// Random streams derived from `cfg.seed`: 0 initialisation, 1 shuffling,
/// 2 dropout.
pub fn train(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    domain: MaskDomain,
    layout: Option<FeatureLayout>,
) -> Result<(FnnModel, TrainHistory)> {
    cfg.validate()?;
    if train.frames() == 0 || val.frames() == 0 {
        return Err(Error::EmptyInput("training and validation sets must be non-empty".into()));
    }
    if train.targets.kind() != cfg.loss || val.targets.kind() != cfg.loss {
        return Err(Error::Config(format!("targets do not match loss {}", cfg.loss)));
    }
    if val.features.nrows() != train.features.nrows() || val.targets.dim().0 != train.targets.dim().0 {
        return Err(Error::shape("validation dims", train.features.dim(), val.features.dim()));
    }
    let mut norm = Normalizer::new(train.features.nrows());
    norm.update(&train.features)?;
    let stats: NormStats = norm.finish()?;
    let xs = stats.apply(&train.features)?;
    let xv = stats.apply(&val.features)?;

    let mut sizes = vec![train.features.nrows()];
    sizes.extend(&cfg.hidden);
    sizes.push(train.targets.dim().0);
    let mut model = FnnModel::new(&sizes, &mut rng::stream(cfg.seed, 0))?;
    model.loss = cfg.loss;
    model.domain = domain;
    model.layout = layout;
    model.norm = Some(stats);

    let mut shuffle_rng = rng::stream(cfg.seed, 1);
    let mut dropout_rng = rng::stream(cfg.seed, 2);
    let mut opt = AdaGrad::new(&model, cfg.learning_rate, cfg.adagrad_eps);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.improvement);
    let mut best = model.clone();
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..train.frames()).collect();
    let mut early_stopped = false;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = xs.select(Axis(1), batch);
            let t = train.targets.select(batch);
            let cache = model.forward(x.view(), Mode::Train { dropout: cfg.dropout, rng: &mut dropout_rng })?;
            let (loss, grad) = t.loss(&cache.output)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("training loss became {loss} in epoch {epoch}")));
            }
            sum += loss * batch.len() as f64;
            let grads = model.backward(&cache, &grad)?;
            opt.step(&mut model, &grads)?;
        }
        let val_loss = evaluate_loss(&model, &xv, &val.targets, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("validation loss became {val_loss} in epoch {epoch}")));
        }
        records.push(EpochRecord { epoch, train_loss: sum / train.frames() as f64, val_loss });
        let decision = stopper.observe(epoch, val_loss);
        if stopper.is_best(epoch) {
            best = model.clone();
        }
        if decision == StopDecision::Stop {
            early_stopped = true;
            break;
        }
    }
    let (best_epoch, best_val_loss) = stopper.best().expect("at least one epoch ran");
    Ok((best, TrainHistory { epochs: records, best_epoch, best_val_loss, early_stopped }))
}
