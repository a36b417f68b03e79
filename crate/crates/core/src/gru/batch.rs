//! Mini-batch forward pass and backpropagation through time.
//!
//! Sequences are stored time-major: row `t * B + b` holds sample `b` at step
//! `t`, so every per-step slice is a contiguous `B × d` block and the
//! input-side products for all steps collapse into single GEMMs. The kernels
//! are generic over the float type; the public f64 entry points serve
//! evaluation and gradient checks, [`MixedPrecision`] serves training.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use super::{shape_err, sigmoid, GruDims, GruError, GruLayerParams, GruModel, GruParams, Real};

#[derive(Debug, Clone)]
struct LayerCache<T> {
    x: Array2<T>,
    h_prev: Array2<T>,
    /// `r` in the first `d_h` columns, `z` in the rest.
    rz: Array2<T>,
    c: Array2<T>,
}

/// Activations retained from [`forward_batch`] for the matching backward.
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f64> {
    generation: u64,
    batch: usize,
    layers: Vec<LayerCache<T>>,
    top: Array2<T>,
    /// `B × (T_d · d_out)` predictions.
    pub pred: Array2<T>,
}

impl<T> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// `tanh` through the exponential; libm's `tanhf` is several times slower.
fn tanh<T: Real>(x: T) -> T {
    let two = T::one() + T::one();
    two / (T::one() + (-two * x).exp()) - T::one()
}

/// Recurrent blocks of one layer: `[W_r; W_z]` and `W_h` restricted to the
/// hidden columns.
fn recurrent<T: Real>(p: &GruLayerParams<T>) -> (Array2<T>, ArrayView2<'_, T>) {
    let d_h = p.d_h();
    let rz = concatenate![Axis(0), p.w_r.slice(s![.., ..d_h]), p.w_z.slice(s![.., ..d_h])];
    (rz, p.w_h.slice(s![.., ..d_h]))
}

fn layer_forward<T: Real>(p: &GruLayerParams<T>, x: Array2<T>, batch: usize) -> (LayerCache<T>, Array2<T>) {
    let d_h = p.d_h();
    let n = x.nrows();
    let steps = n / batch;
    let w_x = concatenate![Axis(0), p.w_r.slice(s![.., d_h..]), p.w_z.slice(s![.., d_h..]), p.w_h.slice(s![.., d_h..])];
    let bias = concatenate![Axis(0), p.b_r, p.b_z, p.b_h];
    // Input-side pre-activations of all three gates for every step.
    let xa = x.dot(&w_x.t()) + &bias;
    let (w_rz, w_ch) = recurrent(p);

    let mut h_prev = Array2::zeros((n, d_h));
    let mut rz_all = Array2::zeros((n, 2 * d_h));
    let mut c_all = Array2::zeros((n, d_h));
    let mut out = Array2::zeros((n, d_h));
    let mut rh = Array2::zeros((batch, d_h));
    let mut acc = Array2::zeros((batch, d_h));
    let mut h = Array2::<T>::zeros((batch, d_h));
    for t in 0..steps {
        let rows = s![t * batch..(t + 1) * batch, ..];
        let xa_t = xa.slice(rows);
        h_prev.slice_mut(rows).assign(&h);
        let mut rz = rz_all.slice_mut(rows);
        rz.assign(&xa_t.slice(s![.., ..2 * d_h]));
        general_mat_mul(T::one(), &h, &w_rz.t(), T::one(), &mut rz);
        rz.mapv_inplace(sigmoid);
        let (r, z) = rz.view().split_at(Axis(1), d_h);
        Zip::from(&mut rh).and(&r).and(&h).for_each(|o, &r, &h| *o = r * h);
        acc.assign(&xa_t.slice(s![.., 2 * d_h..]));
        general_mat_mul(T::one(), &rh, &w_ch.t(), T::one(), &mut acc);
        let mut c = c_all.slice_mut(rows);
        Zip::from(&mut c).and(&acc).for_each(|c, &a| *c = tanh(a));
        Zip::from(&mut h).and(&z).and(&c).for_each(|h, &z, &c| *h = *h + z * (c - *h));
        out.slice_mut(rows).assign(&h);
    }
    (LayerCache { x, h_prev, rz: rz_all, c: c_all }, out)
}

fn forward_impl<T: Real>(
    params: &GruParams<T>,
    dims: &GruDims,
    generation: u64,
    inputs: ArrayView2<T>,
    batch: usize,
) -> Result<ForwardCache<T>, GruError> {
    if batch == 0 || inputs.nrows() != dims.t_e * batch || inputs.ncols() != dims.d_x {
        return Err(shape_err((dims.t_e * batch, dims.d_x), inputs.dim()));
    }
    let mut x = inputs.to_owned();
    let mut layers = Vec::with_capacity(dims.layers);
    for p in &params.layers {
        let (cache, out) = layer_forward(p, x, batch);
        layers.push(cache);
        x = out;
    }
    let top = x.slice(s![(dims.t_e - 1) * batch.., ..]).to_owned();
    let pred = top.dot(&params.head_w.t()) + &params.head_b;
    Ok(ForwardCache { generation, batch, layers, top, pred })
}

/// Forward `B` sequences given as a time-major `(T_e · B) × d_x` block.
pub fn forward_batch(model: &GruModel, inputs: ArrayView2<f64>, batch: usize) -> Result<ForwardCache, GruError> {
    forward_impl(&model.params, &model.dims, model.generation, inputs, batch)
}

/// Backpropagate one layer. `d_out` is the gradient with respect to every
/// step's output; returns the gradient with respect to the layer input when
/// `want_dx` is set.
fn layer_backward<T: Real>(
    p: &GruLayerParams<T>,
    cache: &LayerCache<T>,
    d_out: &Array2<T>,
    batch: usize,
    grad: &mut GruLayerParams<T>,
    want_dx: bool,
) -> Option<Array2<T>> {
    let d_h = p.d_h();
    let n = cache.h_prev.nrows();
    let steps = n / batch;
    let (w_rz, w_ch) = recurrent(p);
    let one = T::one();

    let mut da_rz = Array2::zeros((n, 2 * d_h));
    let mut da_c = Array2::zeros((n, d_h));
    let mut dh = Array2::<T>::zeros((batch, d_h));
    let mut drh = Array2::<T>::zeros((batch, d_h));
    for t in (0..steps).rev() {
        let rows = s![t * batch..(t + 1) * batch, ..];
        let hp = cache.h_prev.slice(rows);
        let rz = cache.rz.slice(rows);
        let (r, z) = rz.split_at(Axis(1), d_h);
        let c = cache.c.slice(rows);
        // dh carries the gradient from step t + 1.
        Zip::from(&mut dh).and(d_out.slice(rows)).for_each(|g, &d| *g = *g + d);

        let mut dc = da_c.slice_mut(rows);
        Zip::from(&mut dc).and(&dh).and(&z).and(&c).for_each(|o, &g, &z, &c| *o = g * z * (one - c * c));
        general_mat_mul(one, &dc, &w_ch, T::zero(), &mut drh);
        let mut da = da_rz.slice_mut(rows);
        {
            let (mut dr, mut dz) = da.view_mut().split_at(Axis(1), d_h);
            Zip::from(&mut dr).and(&drh).and(&hp).and(&r).for_each(|o, &g, &h, &r| *o = g * h * r * (one - r));
            Zip::from(&mut dz).and(&dh).and(&c).and(&hp).and(&z).for_each(|o, &g, &c, &h, &z| *o = g * (c - h) * z * (one - z));
        }
        Zip::from(&mut dh).and(&z).and(&drh).and(&r).for_each(|g, &z, &d, &r| *g = *g * (one - z) + d * r);
        general_mat_mul(one, &da, &w_rz, one, &mut dh);
    }

    let mut rh = cache.h_prev.clone();
    Zip::from(&mut rh).and(cache.rz.slice(s![.., ..d_h])).for_each(|h, &r| *h = *h * r);
    let g_rz = da_rz.t().dot(&cache.h_prev);
    let (da_r, da_z) = da_rz.view().split_at(Axis(1), d_h);
    grad.w_r.slice_mut(s![.., ..d_h]).assign(&g_rz.slice(s![..d_h, ..]));
    grad.w_z.slice_mut(s![.., ..d_h]).assign(&g_rz.slice(s![d_h.., ..]));
    grad.w_h.slice_mut(s![.., ..d_h]).assign(&da_c.t().dot(&rh));
    let g_x = concatenate![Axis(1), da_rz, da_c].t().dot(&cache.x);
    grad.w_r.slice_mut(s![.., d_h..]).assign(&g_x.slice(s![..d_h, ..]));
    grad.w_z.slice_mut(s![.., d_h..]).assign(&g_x.slice(s![d_h..2 * d_h, ..]));
    grad.w_h.slice_mut(s![.., d_h..]).assign(&g_x.slice(s![2 * d_h.., ..]));
    grad.b_r = da_r.sum_axis(Axis(0));
    grad.b_z = da_z.sum_axis(Axis(0));
    grad.b_h = da_c.sum_axis(Axis(0));

    want_dx.then(|| {
        let w_x = concatenate![Axis(0), p.w_r.slice(s![.., d_h..]), p.w_z.slice(s![.., d_h..]), p.w_h.slice(s![.., d_h..])];
        concatenate![Axis(1), da_rz, da_c].dot(&w_x)
    })
}

/// Gradients for an arbitrary upstream gradient on the predictions.
fn backprop<T: Real>(
    params: &GruParams<T>,
    dims: &GruDims,
    cache: &ForwardCache<T>,
    d_pred: &Array2<T>,
    want_dx: bool,
) -> (GruParams<T>, Option<Array2<T>>) {
    let b = cache.batch;
    let mut grads = GruParams::zeros(dims);
    grads.head_w = d_pred.t().dot(&cache.top);
    grads.head_b = d_pred.sum_axis(Axis(0));

    let mut d_out = Array2::zeros((dims.t_e * b, dims.d_h));
    d_out.slice_mut(s![(dims.t_e - 1) * b.., ..]).assign(&d_pred.dot(&params.head_w));
    let mut dx = None;
    for l in (0..dims.layers).rev() {
        let need = l > 0 || want_dx;
        let out = layer_backward(&params.layers[l], &cache.layers[l], &d_out, b, &mut grads.layers[l], need);
        if l > 0 {
            d_out = out.expect("requested");
        } else {
            dx = out;
        }
    }
    (grads, dx)
}

fn check_cache<T>(dims: &GruDims, generation: u64, cache: &ForwardCache<T>, targets: ArrayView2<T>) -> Result<(), GruError> {
    if cache.generation != generation || cache.layers.len() != dims.layers {
        return Err(GruError::StaleCache);
    }
    if targets.nrows() != cache.batch || targets.ncols() != dims.head_width() {
        return Err(GruError::StaleCache);
    }
    Ok(())
}

/// Loss accumulated in f64 whatever the working precision.
fn loss_impl<T: Real>(
    params: &GruParams<T>,
    dims: &GruDims,
    cache: &ForwardCache<T>,
    targets: ArrayView2<T>,
) -> (f64, GruParams<T>) {
    let diff = &cache.pred - &targets;
    let n = diff.len();
    let loss = diff.iter().map(|v| v.to_f64().expect("float")).map(|v| v * v).sum::<f64>() / n as f64;
    let d_pred = diff * T::from(2.0 / n as f64).expect("float");
    (loss, backprop(params, dims, cache, &d_pred, false).0)
}

/// Batch-mean MSE and its exact gradient with respect to every parameter.
///
/// `targets` is `B × (T_d · d_out)` with each row the flattened target block.
pub fn loss_and_grads(model: &GruModel, cache: &ForwardCache, targets: ArrayView2<f64>) -> Result<(f64, GruParams), GruError> {
    check_cache(&model.dims, model.generation, cache, targets)?;
    Ok(loss_impl(&model.params, &model.dims, cache, targets))
}

/// Gradient of the batch-mean MSE.
pub fn backward(model: &GruModel, cache: &ForwardCache, targets: ArrayView2<f64>) -> Result<GruParams, GruError> {
    loss_and_grads(model, cache, targets).map(|(_, g)| g)
}

/// Gradient of `<u, predict(seq)>` with respect to `seq` for a single
/// `T_e × d_x` sequence and `T_d × d_out` weights `u`.
#[cfg(test)]
pub(crate) fn input_gradient(model: &GruModel, seq: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<Array2<f64>, GruError> {
    let cache = forward_batch(model, seq, 1)?;
    let d_pred = u.to_owned().into_shape_with_order((1, model.dims.head_width())).map_err(|e| shape_err("T_d × d_out", e))?;
    Ok(backprop(&model.params, &model.dims, &cache, &d_pred, true).1.expect("requested"))
}

/// Single-precision working copy of a model's parameters.
///
/// The model keeps the f64 master weights that the optimiser updates; the
/// copy is refreshed whenever the model's generation moves, and gradients
/// are widened back to f64.
#[derive(Debug, Clone)]
pub struct MixedPrecision {
    params: GruParams<f32>,
    generation: Option<u64>,
}

impl MixedPrecision {
    pub fn new(model: &GruModel) -> Self {
        let mut mp = MixedPrecision { params: GruParams::zeros(&model.dims), generation: None };
        mp.sync(model);
        mp
    }

    fn sync(&mut self, model: &GruModel) {
        if self.generation != Some(model.generation) {
            model.params.cast_into(&mut self.params);
            self.generation = Some(model.generation);
        }
    }

    pub fn forward(&mut self, model: &GruModel, inputs: ArrayView2<f32>, batch: usize) -> Result<Array2<f32>, GruError> {
        self.sync(model);
        Ok(forward_impl(&self.params, &model.dims, model.generation, inputs, batch)?.pred)
    }

    /// Batch-mean MSE and its gradient, evaluated in f32.
    pub fn loss_and_grads(
        &mut self,
        model: &GruModel,
        inputs: ArrayView2<f32>,
        targets: ArrayView2<f32>,
        batch: usize,
    ) -> Result<(f64, GruParams), GruError> {
        self.sync(model);
        let cache = forward_impl(&self.params, &model.dims, model.generation, inputs, batch)?;
        check_cache(&model.dims, model.generation, &cache, targets)?;
        let (loss, g32) = loss_impl(&self.params, &model.dims, &cache, targets);
        let mut grads = GruParams::zeros(&model.dims);
        g32.cast_into(&mut grads);
        Ok((loss, grads))
    }
}
