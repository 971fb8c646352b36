//! Batched forward pass and hand-derived reverse mode.
//!
//! A batch of `B` samples on `G` grid points is stacked into `B·G` rows, one
//! per (sample, grid point). Weights are stored row-major, so a flat slice
//! read as a column-major nalgebra matrix is the transpose `Wᵀ`; every
//! product below is written in that transposed form.

use nalgebra::{DMatrix, DMatrixView};

use super::{check_grid, NnoError, NnoModel};

pub(crate) struct Cache {
    batch: usize,
    z: DMatrix<f64>,
    /// `v⁰ … v^L`.
    vs: Vec<DMatrix<f64>>,
    /// Per-sample grid means of `v⁰ … v^{L-1}`.
    means: Vec<DMatrix<f64>>,
}

fn view(params: &[f64], offset: usize, rows: usize, cols: usize) -> DMatrixView<'_, f64> {
    DMatrixView::from_slice(&params[offset..offset + rows * cols], rows, cols)
}

/// Trapezoid weights on `g` points, summing to one.
pub(crate) fn trapezoid_weights(g: usize) -> Vec<f64> {
    let steps = (g - 1) as f64;
    (0..g).map(|r| if r == 0 || r == g - 1 { 0.5 / steps } else { 1.0 / steps }).collect()
}

fn block_means(v: &DMatrix<f64>, batch: usize, omega: &[f64]) -> DMatrix<f64> {
    let g = omega.len();
    DMatrix::from_fn(batch, v.ncols(), |s, j| {
        let col = v.column(j);
        (0..g).map(|r| omega[r] * col[s * g + r]).sum()
    })
}

fn block_sums(v: &DMatrix<f64>, batch: usize, g: usize) -> DMatrix<f64> {
    DMatrix::from_fn(batch, v.ncols(), |s, j| v.column(j).rows(s * g, g).sum())
}

fn column_sums(v: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    v.column_iter().map(|c| c.sum())
}

/// `tanh` through one `exp`; within a few ulps absolute of `f64::tanh` and
/// about three times cheaper, which dominates the forward pass.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

fn add_row_bias(a: &mut DMatrix<f64>, bias: &[f64]) {
    for (j, mut col) in a.column_iter_mut().enumerate() {
        col.add_scalar_mut(bias[j]);
    }
}

pub(crate) fn normalize_inputs(model: &NnoModel, input: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = model.normalization();
    let mut z = input.clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        let (mu, sd) = (norm.in_mean[j], norm.in_std[j]);
        col.apply(|v| *v = (*v - mu) / sd);
    }
    z
}

pub(crate) fn denormalize_outputs(model: &NnoModel, mut y: DMatrix<f64>) -> DMatrix<f64> {
    let norm = model.normalization();
    for (j, mut col) in y.column_iter_mut().enumerate() {
        let (mu, sd) = (norm.out_mean[j], norm.out_std[j]);
        col.apply(|v| *v = *v * sd + mu);
    }
    y
}

/// Normalized output for normalized, stacked inputs.
pub(crate) fn forward(model: &NnoModel, z: &DMatrix<f64>, batch: usize, cache: Option<&mut Cache>) -> DMatrix<f64> {
    let cfg = model.config();
    let (d, i, n, g) = (cfg.channels, cfg.input_dim(), cfg.n, cfg.grid_points());
    debug_assert_eq!(z.nrows(), batch * g);
    let p = model.params();
    let lay = model.layout();
    let omega = trapezoid_weights(g);

    let mut v = z * view(p, lay.lift_w, i, d);
    add_row_bias(&mut v, &p[lay.lift_b..lay.lift_b + d]);

    let keep = cache.is_some();
    let mut vs = Vec::new();
    let mut means = Vec::new();
    for l in 0..cfg.layers {
        let (w, b, k) = lay.layer(l, d);
        let m = block_means(&v, batch, &omega);
        let km = &m * view(p, k, d, d);
        let mut a = &v * view(p, w, d, d);
        let rows = batch * g;
        for (j, col) in a.as_mut_slice().chunks_exact_mut(rows).enumerate() {
            for (s, block) in col.chunks_exact_mut(g).enumerate() {
                let add = p[b + j] + km[(s, j)];
                block.iter_mut().for_each(|x| *x = tanh(*x + add));
            }
        }
        if keep {
            vs.push(std::mem::replace(&mut v, a));
            means.push(m);
        } else {
            v = a;
        }
    }
    let mut y = &v * view(p, lay.proj_w, d, n);
    add_row_bias(&mut y, &p[lay.proj_b..lay.proj_b + n]);
    if let Some(c) = cache {
        vs.push(v);
        *c = Cache { batch, z: z.clone(), vs, means };
    }
    y
}

impl Cache {
    pub(crate) fn empty() -> Self {
        Self { batch: 0, z: DMatrix::zeros(0, 0), vs: Vec::new(), means: Vec::new() }
    }
}

/// Gradients of `Σ dY ∘ Y` with respect to the parameters (flat, same layout
/// as the model) and the normalized inputs.
pub(crate) fn backward(model: &NnoModel, cache: &Cache, dy: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let cfg = model.config();
    let (d, i, n, g) = (cfg.channels, cfg.input_dim(), cfg.n, cfg.grid_points());
    let batch = cache.batch;
    let p = model.params();
    let lay = model.layout();
    let omega = trapezoid_weights(g);
    let mut grad = vec![0.0; p.len()];
    let mut put = |offset: usize, m: &DMatrix<f64>| {
        grad[offset..offset + m.len()].copy_from_slice(m.as_slice());
    };

    let v_last = &cache.vs[cfg.layers];
    put(lay.proj_w, &v_last.tr_mul(dy));
    put(lay.proj_b, &DMatrix::from_iterator(n, 1, column_sums(dy)));
    let mut dv = dy * view(p, lay.proj_w, d, n).transpose();

    for l in (0..cfg.layers).rev() {
        let (w, b, k) = lay.layer(l, d);
        let v_out = &cache.vs[l + 1];
        let v_in = &cache.vs[l];
        let mut da = dv;
        da.zip_apply(v_out, |g, v| *g *= 1.0 - v * v);
        put(w, &v_in.tr_mul(&da));
        let gs = block_sums(&da, batch, g);
        put(b, &DMatrix::from_iterator(d, 1, column_sums(&gs)));
        put(k, &cache.means[l].tr_mul(&gs));
        let dm = &gs * view(p, k, d, d).transpose();
        dv = &da * view(p, w, d, d).transpose();
        for j in 0..d {
            let mut col = dv.column_mut(j);
            for s in 0..batch {
                let dmj = dm[(s, j)];
                for r in 0..g {
                    col[s * g + r] += omega[r] * dmj;
                }
            }
        }
    }
    put(lay.lift_w, &cache.z.tr_mul(&dv));
    put(lay.lift_b, &DMatrix::from_iterator(d, 1, column_sums(&dv)));
    let dz = &dv * view(p, lay.lift_w, i, d).transpose();
    (grad, dz)
}

/// Gradients of `⟨grad_output, nno_forward(model, input)⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Same layout as [`NnoModel::params`].
    pub params: Vec<f64>,
    /// With respect to the raw (unnormalized) encoded input.
    pub input: DMatrix<f64>,
}

/// Reverse-mode gradient of the physical-unit output contracted with
/// `grad_output` (one row per grid point, `n` columns).
pub fn nno_backward(model: &NnoModel, input: &DMatrix<f64>, grad_output: &DMatrix<f64>) -> Result<Gradients, NnoError> {
    let cfg = model.config();
    check_grid(cfg, input)?;
    if grad_output.shape() != (cfg.grid_points(), cfg.n) {
        return Err(NnoError::GridMismatch {
            expected: cfg.grid_points(),
            got: grad_output.nrows(),
            expected_cols: cfg.n,
            got_cols: grad_output.ncols(),
        });
    }
    let norm = model.normalization();
    let z = normalize_inputs(model, input);
    let mut cache = Cache::empty();
    forward(model, &z, 1, Some(&mut cache));
    let mut dy = grad_output.clone();
    for (j, mut col) in dy.column_iter_mut().enumerate() {
        col *= norm.out_std[j];
    }
    let (params, mut dz) = backward(model, &cache, &dy);
    for (j, mut col) in dz.column_iter_mut().enumerate() {
        col /= norm.in_std[j];
    }
    Ok(Gradients { params, input: dz })
}

/// Mean per-sample relative L₂ error `‖P̂ - P‖ / ‖P‖` over a stacked batch and
/// its parameter gradient.
///
/// `inputs` holds raw encoded inputs, `increments` the targets `P - X` (both
/// stacked `B·G` rows) and `target_norms` the per-sample `‖P‖`. The anchor row
/// is pinned at prediction time, so it carries no error.
pub fn batch_loss_and_gradient(
    model: &NnoModel,
    inputs: &DMatrix<f64>,
    increments: &DMatrix<f64>,
    target_norms: &[f64],
) -> (f64, Vec<f64>) {
    let g = model.config().grid_points();
    let batch = target_norms.len();
    let z = normalize_inputs(model, inputs);
    let mut cache = Cache::empty();
    let y = forward(model, &z, batch, Some(&mut cache));
    let (loss, dy) = relative_loss(model, y, increments, target_norms, g, true);
    let (grad, _) = backward(model, &cache, &dy.expect("gradient requested"));
    (loss, grad)
}

/// Mean relative error and, if requested, its gradient with respect to the
/// normalized network output.
pub(crate) fn relative_loss(
    model: &NnoModel,
    y: DMatrix<f64>,
    increments: &DMatrix<f64>,
    target_norms: &[f64],
    g: usize,
    want_grad: bool,
) -> (f64, Option<DMatrix<f64>>) {
    let batch = target_norms.len();
    let out_std = &model.normalization().out_std;
    let mut err = denormalize_outputs(model, y);
    err -= increments;
    for s in 0..batch {
        err.row_mut(s * g).fill(0.0);
    }
    let mut loss = 0.0;
    let mut scale = vec![0.0; batch];
    for s in 0..batch {
        let e = err.rows(s * g, g).norm();
        let denom = target_norms[s].max(f64::MIN_POSITIVE);
        loss += e / denom;
        scale[s] = if e > 0.0 { 1.0 / (e * denom * batch as f64) } else { 0.0 };
    }
    loss /= batch.max(1) as f64;
    if !want_grad {
        return (loss, None);
    }
    for (j, mut col) in err.column_iter_mut().enumerate() {
        for s in 0..batch {
            col.rows_mut(s * g, g).scale_mut(scale[s] * out_std[j]);
        }
    }
    (loss, Some(err))
}
