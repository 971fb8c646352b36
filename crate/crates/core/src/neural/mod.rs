//! Nonlocal neural operator with an averaging kernel.
//!
//! ```text
//!   v⁰(x) = R z(x)                                  lift
//!   vˡ(x) = tanh(W_l vˡ⁻¹(x) + b_l + K_l · mean(vˡ⁻¹))   l = 1..L
//!   y(x)  = Q v^L(x)                                projection
//! ```
//!
//! The mean is the trapezoid average over the grid, i.e. the integral
//! against the constant kernel `1/|𝒳|`. Inputs and outputs are z-scored per
//! channel; the network output is the increment `P(θ) - X` and the anchor row
//! is pinned to `X` in [`nno_predict`].

mod checkpoint;
mod network;
mod train;

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::predictor::{ControlHistory, PredictorSolution};
use crate::util::{all_finite, stream_rng};

pub use checkpoint::{load_model, read_model, save_model, write_model};
pub use network::{batch_loss_and_gradient, nno_backward, Gradients};
pub use train::{relative_l2, train_nno, EpochStats, Optimizer, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum NnoError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("input grid has {got} points/{got_cols} columns, model expects {expected}/{expected_cols}")]
    GridMismatch { expected: usize, got: usize, expected_cols: usize, got_cols: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("dataset has no training samples")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize, history: Vec<EpochStats> },
    #[error("unsupported checkpoint (magic/version {0})")]
    VersionMismatch(String),
    #[error("checkpoint header inconsistent with payload: {0}")]
    ShapeHeaderInconsistency(String),
    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Corrupted { stored: u32, computed: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NnoConfig {
    /// State dimension `n`.
    pub n: usize,
    /// Input dimension `m`.
    pub m: usize,
    /// Grid intervals `N`; the operator acts on `N + 1` points.
    pub steps: usize,
    /// Hidden channels `d_c`.
    pub channels: usize,
    /// Hidden layers `L`.
    pub layers: usize,
}

impl NnoConfig {
    pub fn new(n: usize, m: usize, steps: usize, channels: usize, layers: usize) -> Self {
        Self { n, m, steps, channels, layers }
    }

    pub fn validate(&self) -> Result<(), NnoError> {
        if self.n == 0 || self.m == 0 {
            return Err(NnoError::InvalidConfig("n and m must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err(NnoError::InvalidConfig("grid must have at least 2 points".into()));
        }
        if self.channels == 0 || self.layers == 0 {
            return Err(NnoError::InvalidConfig("d_c and L must be >= 1".into()));
        }
        Ok(())
    }

    pub fn grid_points(&self) -> usize {
        self.steps + 1
    }

    /// Columns per grid point: broadcast state, control, coordinate.
    pub fn input_dim(&self) -> usize {
        self.n + self.m + 1
    }

    pub fn param_count(&self) -> usize {
        let (d, i, n) = (self.channels, self.input_dim(), self.n);
        d * i + d + self.layers * (2 * d * d + d) + n * d + n
    }
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

impl Normalization {
    pub fn identity(cfg: &NnoConfig) -> Self {
        Self {
            in_mean: vec![0.0; cfg.input_dim()],
            in_std: vec![1.0; cfg.input_dim()],
            out_mean: vec![0.0; cfg.n],
            out_std: vec![1.0; cfg.n],
        }
    }

    /// Statistics over all rows of the given matrices; near-constant channels
    /// get unit scale.
    pub fn fit(inputs: &DMatrix<f64>, outputs: &DMatrix<f64>) -> Self {
        let (in_mean, in_std) = column_stats(inputs);
        let (out_mean, out_std) = column_stats(outputs);
        Self { in_mean, in_std, out_mean, out_std }
    }

    fn validate(&self, cfg: &NnoConfig) -> Result<(), NnoError> {
        if self.in_mean.len() != cfg.input_dim()
            || self.in_std.len() != cfg.input_dim()
            || self.out_mean.len() != cfg.n
            || self.out_std.len() != cfg.n
        {
            return Err(NnoError::InvalidConfig("normalization length mismatch".into()));
        }
        let all = [&self.in_mean, &self.in_std, &self.out_mean, &self.out_std];
        if !all.iter().all(|v| all_finite(v)) {
            return Err(NnoError::NonFinite("normalization statistics"));
        }
        if self.in_std.iter().chain(&self.out_std).any(|s| !(*s > 0.0)) {
            return Err(NnoError::InvalidConfig("normalization std must be positive".into()));
        }
        Ok(())
    }
}

fn column_stats(a: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let rows = a.nrows().max(1) as f64;
    let mut means = Vec::with_capacity(a.ncols());
    let mut stds = Vec::with_capacity(a.ncols());
    for col in a.column_iter() {
        let mu = col.sum() / rows;
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / rows;
        let sd = var.sqrt();
        means.push(mu);
        stds.push(if sd < 1e-12 { 1.0 } else { sd });
    }
    (means, stds)
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub lift_w: usize,
    pub lift_b: usize,
    pub layer0: usize,
    pub layer_stride: usize,
    pub proj_w: usize,
    pub proj_b: usize,
}

impl Layout {
    pub(crate) fn of(cfg: &NnoConfig) -> Self {
        let (d, i, n) = (cfg.channels, cfg.input_dim(), cfg.n);
        let lift_w = 0;
        let lift_b = lift_w + d * i;
        let layer0 = lift_b + d;
        let layer_stride = 2 * d * d + d;
        let proj_w = layer0 + cfg.layers * layer_stride;
        let proj_b = proj_w + n * d;
        debug_assert_eq!(proj_b + n, cfg.param_count());
        Self { lift_w, lift_b, layer0, layer_stride, proj_w, proj_b }
    }

    /// Offsets of `(W_l, b_l, K_l)`, `l` zero-based.
    pub(crate) fn layer(&self, l: usize, d: usize) -> (usize, usize, usize) {
        let w = self.layer0 + l * self.layer_stride;
        (w, w + d * d, w + d * d + d)
    }
}

/// Parameters stored flat, row-major, in the order lift_W, lift_b,
/// (W_l, b_l, K_l) for each layer, proj_W, proj_b.
#[derive(Debug, Clone, PartialEq)]
pub struct NnoModel {
    config: NnoConfig,
    params: Vec<f64>,
    norm: Normalization,
}

impl NnoModel {
    /// Xavier-uniform weights, zero biases, identity normalization.
    pub fn random(config: NnoConfig, seed: u64) -> Result<Self, NnoError> {
        config.validate()?;
        let layout = Layout::of(&config);
        let (d, i, n) = (config.channels, config.input_dim(), config.n);
        let mut params = vec![0.0; config.param_count()];
        let mut rng = stream_rng(seed, 0);
        let mut xavier = |slice: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            slice.iter_mut().for_each(|p| *p = rng.gen_range(-a..a));
        };
        xavier(&mut params[layout.lift_w..layout.lift_b], i, d);
        for l in 0..config.layers {
            let (w, b, k) = layout.layer(l, d);
            xavier(&mut params[w..b], d, d);
            xavier(&mut params[k..k + d * d], d, d);
        }
        xavier(&mut params[layout.proj_w..layout.proj_b], d, n);
        Ok(Self { norm: Normalization::identity(&config), config, params })
    }

    pub fn from_parts(config: NnoConfig, params: Vec<f64>, norm: Normalization) -> Result<Self, NnoError> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(NnoError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                params.len()
            )));
        }
        if !all_finite(&params) {
            return Err(NnoError::NonFinite("parameters"));
        }
        norm.validate(&config)?;
        Ok(Self { config, params, norm })
    }

    pub fn config(&self) -> &NnoConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn set_normalization(&mut self, norm: Normalization) -> Result<(), NnoError> {
        norm.validate(&self.config)?;
        self.norm = norm;
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::of(&self.config)
    }
}

/// Row `k` is `[x, U(t - D + k dt), k / N]`.
pub fn encode_input(x: &[f64], hist: &ControlHistory) -> DMatrix<f64> {
    let (n, m) = (x.len(), hist.input_dim());
    let steps = hist.steps();
    DMatrix::from_fn(hist.points(), n + m + 1, |k, c| {
        if c < n {
            x[c]
        } else if c < n + m {
            hist.value(k)[c - n]
        } else {
            k as f64 / steps as f64
        }
    })
}

/// Network output in physical units (the increment `P(θ) - X` for a trained
/// predictor), one row per grid point.
pub fn nno_forward(model: &NnoModel, input: &DMatrix<f64>) -> Result<DMatrix<f64>, NnoError> {
    let cfg = model.config();
    check_grid(cfg, input)?;
    if !all_finite(model.params()) {
        return Err(NnoError::NonFinite("parameters"));
    }
    let z = network::normalize_inputs(model, input);
    let y = network::forward(model, &z, 1, None);
    Ok(network::denormalize_outputs(model, y))
}

/// `X + 𝒩(X, U)` with row 0 pinned to `X` exactly.
pub fn nno_predict(model: &NnoModel, x: &[f64], hist: &ControlHistory) -> Result<PredictorSolution, NnoError> {
    let cfg = model.config();
    if x.len() != cfg.n || hist.input_dim() != cfg.m {
        return Err(NnoError::GridMismatch {
            expected: cfg.grid_points(),
            got: hist.points(),
            expected_cols: cfg.input_dim(),
            got_cols: x.len() + hist.input_dim() + 1,
        });
    }
    let input = encode_input(x, hist);
    let out = nno_forward(model, &input)?;
    let n = cfg.n;
    let mut data = Vec::with_capacity(out.nrows() * n);
    data.extend_from_slice(x);
    for k in 1..out.nrows() {
        data.extend((0..n).map(|c| x[c] + out[(k, c)]));
    }
    if !all_finite(&data) {
        return Err(NnoError::NonFinite("network output"));
    }
    Ok(PredictorSolution::from_parts(hist.dt(), n, data))
}

fn check_grid(cfg: &NnoConfig, input: &DMatrix<f64>) -> Result<(), NnoError> {
    if input.nrows() != cfg.grid_points() || input.ncols() != cfg.input_dim() {
        return Err(NnoError::GridMismatch {
            expected: cfg.grid_points(),
            got: input.nrows(),
            expected_cols: cfg.input_dim(),
            got_cols: input.ncols(),
        });
    }
    Ok(())
}
