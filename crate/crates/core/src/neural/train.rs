use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use super::network::{self, batch_loss_and_gradient};
use super::{encode_input, NnoConfig, NnoError, NnoModel, Normalization};
use crate::dataset::{Dataset, Sample};
use crate::util::{norm2, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    /// Adaptive moments with decoupled weight decay.
    AdamW { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adamw() -> Self {
        Self::AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled: `p ← p - lr·wd·p` alongside the gradient step.
    pub weight_decay: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 512,
            learning_rate: 0.005,
            weight_decay: 0.0,
            lr_decay: 0.99,
            seed: 0,
            optimizer: Optimizer::adamw(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnoError> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(NnoError::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(NnoError::InvalidConfig("lr_decay must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(NnoError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(NnoError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean relative L₂ error on the training split after the epoch.
    pub train: f64,
    /// Same on the test split (NaN when the split is empty).
    pub test: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest test error.
    pub model: NnoModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Samples stacked for the network: encoded inputs, target increments
/// `P - X`, and per-sample `‖P‖`.
pub(crate) struct PairSet {
    g: usize,
    inputs: DMatrix<f64>,
    increments: DMatrix<f64>,
    norms: Vec<f64>,
}

impl PairSet {
    pub(crate) fn new<'a>(samples: impl IntoIterator<Item = &'a Sample>, cfg: &NnoConfig) -> Result<Self, NnoError> {
        let samples: Vec<&Sample> = samples.into_iter().collect();
        let g = cfg.grid_points();
        let (n, i) = (cfg.n, cfg.input_dim());
        let mut inputs = DMatrix::zeros(samples.len() * g, i);
        let mut increments = DMatrix::zeros(samples.len() * g, n);
        let mut norms = Vec::with_capacity(samples.len());
        for (s, sample) in samples.iter().enumerate() {
            if sample.hist.points() != g || sample.x.len() != n || sample.hist.input_dim() != cfg.m {
                return Err(NnoError::GridMismatch {
                    expected: g,
                    got: sample.hist.points(),
                    expected_cols: i,
                    got_cols: sample.x.len() + sample.hist.input_dim() + 1,
                });
            }
            inputs.rows_mut(s * g, g).copy_from(&encode_input(&sample.x, &sample.hist));
            for r in 0..g {
                let p = sample.target.value(r);
                for c in 0..n {
                    increments[(s * g + r, c)] = p[c] - sample.x[c];
                }
            }
            norms.push(norm2(sample.target.as_flat()));
        }
        Ok(Self { g, inputs, increments, norms })
    }

    pub(crate) fn len(&self) -> usize {
        self.norms.len()
    }

    fn gather(&self, idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
        let g = self.g;
        let rows = |m: &DMatrix<f64>| DMatrix::from_fn(idx.len() * g, m.ncols(), |r, c| m[(idx[r / g] * g + r % g, c)]);
        (rows(&self.inputs), rows(&self.increments), idx.iter().map(|&s| self.norms[s]).collect())
    }

    /// Mean relative L₂ error of `model` over the set.
    pub(crate) fn evaluate(&self, model: &NnoModel) -> f64 {
        const CHUNK: usize = 1024;
        if self.len() == 0 {
            return f64::NAN;
        }
        let mut total = 0.0;
        for start in (0..self.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(self.len());
            let rows = (end - start) * self.g;
            let z = network::normalize_inputs(model, &self.inputs.rows(start * self.g, rows).into_owned());
            let y = network::forward(model, &z, end - start, None);
            let incs = self.increments.rows(start * self.g, rows).into_owned();
            let (loss, _) = network::relative_loss(model, y, &incs, &self.norms[start..end], self.g, false);
            total += loss * (end - start) as f64;
        }
        total / self.len() as f64
    }
}

/// Mean relative L₂ error `‖P̂ - P‖ / ‖P‖` of the model over `samples`.
pub fn relative_l2<'a>(model: &NnoModel, samples: impl IntoIterator<Item = &'a Sample>) -> Result<f64, NnoError> {
    Ok(PairSet::new(samples, model.config())?.evaluate(model))
}

/// Mini-batch training on the dataset's train split; keeps the parameters
/// with the best test error.
pub fn train_nno(dataset: &Dataset, cfg: &TrainConfig, nno_cfg: NnoConfig) -> Result<TrainOutcome, NnoError> {
    cfg.validate()?;
    nno_cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(NnoError::EmptyDataset);
    }
    let train = PairSet::new(dataset.train.iter().map(|&i| &dataset.samples[i]), &nno_cfg)?;
    let test = PairSet::new(dataset.test.iter().map(|&i| &dataset.samples[i]), &nno_cfg)?;

    let mut model = NnoModel::random(nno_cfg, cfg.seed)?;
    model.set_normalization(Normalization::fit(&train.inputs, &train.increments))?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = stream_rng(cfg.seed, 1);
    let mut state = OptimizerState::new(cfg.optimizer, model.param_count());
    let mut lr = cfg.learning_rate;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0, model.clone());

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (inputs, incs, norms) = train.gather(chunk);
            let (loss, grad) = batch_loss_and_gradient(&model, &inputs, &incs, &norms);
            if !loss.is_finite() {
                return Err(NnoError::DivergedLoss { epoch, history });
            }
            state.step(model.params_mut(), &grad, lr, cfg.weight_decay);
        }
        let train_err = train.evaluate(&model);
        let test_err = test.evaluate(&model);
        if !train_err.is_finite() {
            return Err(NnoError::DivergedLoss { epoch, history });
        }
        history.push(EpochStats { epoch, train: train_err, test: test_err, learning_rate: lr });
        let score = if test.len() > 0 { test_err } else { train_err };
        if score < best.0 {
            best = (score, epoch, model.clone());
        }
        lr *= cfg.lr_decay;
    }
    let (_, best_epoch, best_model) = best;
    let model = if cfg.epochs == 0 { model } else { best_model };
    Ok(TrainOutcome { model, history, best_epoch })
}

struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, len: usize) -> Self {
        let buf = if matches!(kind, Optimizer::AdamW { .. }) { len } else { 0 };
        Self { kind, m: vec![0.0; buf], v: vec![0.0; buf], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, wd: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * (g + wd * *p);
                }
            }
            Optimizer::AdamW { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    params[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * params[i]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, DatasetSpec, NoiseMode};
    use crate::dynamics::LinearPlant;

    fn small_dataset() -> Dataset {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let spec = DatasetSpec {
            trajectories: 6,
            traj_length: 1.5,
            noise_mode: NoiseMode::Both,
            initial_range: (-0.5, 0.5),
            test_fraction: 0.34,
            ..DatasetSpec::desk_default()
        };
        generate_dataset(&spec, &plant).unwrap()
    }

    fn quick(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig { epochs, batch_size: 16, learning_rate: lr, ..TrainConfig::default() }
    }

    fn arch() -> NnoConfig {
        NnoConfig::new(1, 1, 5, 8, 1)
    }

    #[test]
    fn zero_learning_rate_freezes_the_model() {
        let ds = small_dataset();
        let out = train_nno(&ds, &quick(4, 0.0), arch()).unwrap();
        let first = out.history[0].train;
        assert!(out.history.iter().all(|h| h.train == first));
        let mut init = NnoModel::random(arch(), 0).unwrap();
        let train: Vec<&Sample> = ds.train_samples().collect();
        let pairs = PairSet::new(train.iter().copied(), &arch()).unwrap();
        init.set_normalization(Normalization::fit(&pairs.inputs, &pairs.increments)).unwrap();
        assert_eq!(out.model.params(), init.params());
    }

    #[test]
    fn training_is_deterministic_and_reduces_error() {
        let ds = small_dataset();
        let a = train_nno(&ds, &quick(25, 0.01), arch()).unwrap();
        let b = train_nno(&ds, &quick(25, 0.01), arch()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        let start = train_nno(&ds, &quick(1, 0.0), arch()).unwrap().history[0].train;
        assert!(a.history.last().unwrap().train < 0.5 * start, "{start} -> {:?}", a.history.last());
        let best = a.history[a.best_epoch].test;
        assert!(a.history.iter().all(|h| h.test >= best));
        assert!((relative_l2(&a.model, ds.test_samples()).unwrap() - best).abs() < 1e-12);
    }

    #[test]
    fn duplicating_every_sample_leaves_full_batch_training_unchanged() {
        let ds = small_dataset();
        let mut twice = ds.clone();
        let len = ds.samples.len();
        twice.samples.extend(ds.samples.iter().cloned());
        twice.train.extend(ds.train.iter().map(|i| i + len));
        twice.test.extend(ds.test.iter().map(|i| i + len));
        let cfg = TrainConfig { epochs: 5, batch_size: 10_000, learning_rate: 0.05, optimizer: Optimizer::Sgd, ..TrainConfig::default() };
        let a = train_nno(&ds, &cfg, arch()).unwrap();
        let b = train_nno(&twice, &cfg, arch()).unwrap();
        for (x, y) in a.history.iter().zip(&b.history) {
            assert!((x.train - y.train).abs() <= 1e-10 * x.train, "{x:?} {y:?}");
        }
    }

    #[test]
    fn empty_split_and_bad_config_are_rejected() {
        let mut ds = small_dataset();
        assert!(matches!(train_nno(&ds, &TrainConfig { lr_decay: 0.0, ..quick(1, 0.01) }, arch()), Err(NnoError::InvalidConfig(_))));
        assert!(matches!(train_nno(&ds, &quick(1, 0.01), NnoConfig::new(1, 1, 4, 8, 1)), Err(NnoError::GridMismatch { .. })));
        ds.train.clear();
        assert!(matches!(train_nno(&ds, &quick(1, 0.01), arch()), Err(NnoError::EmptyDataset)));
    }

    #[test]
    fn diverging_learning_rate_is_reported() {
        let ds = small_dataset();
        let cfg = TrainConfig { epochs: 50, learning_rate: 1e300, optimizer: Optimizer::Sgd, ..quick(50, 0.0) };
        assert!(matches!(train_nno(&ds, &cfg, arch()), Err(NnoError::DivergedLoss { .. })));
    }
}
