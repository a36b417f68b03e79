//! Stacked GRU with a linear head, trained by exact BPTT.
//!
//! Each layer computes, with the concatenation order `[h; x]`,
//!
//! ```text
//! r = σ(W_r [h; x] + b_r)
//! z = σ(W_z [h; x] + b_z)
//! c = tanh(W_h [r ⊙ h; x] + b_h)
//! h' = (1 - z) ⊙ h + z ⊙ c
//! ```
//!
//! The top layer's final hidden state feeds a linear head producing the
//! whole `T_d × d_out` block at once.

mod adam;
mod batch;
mod checkpoint;
mod fast;
mod schedule;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::NormStats;
use crate::schema::{INPUT_DIM, OUTPUT_DIM};

pub use adam::{adam_step, AdamState};
pub use batch::{backward, forward_batch, loss_and_grads, ForwardCache, MixedPrecision};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use fast::FastGru;
pub use schedule::{lr_on_plateau, PlateauScheduler};

pub const ENCODER_STEPS: usize = 30;
pub const DECODER_STEPS: usize = 10;
pub const ALLOWED_HIDDEN: [usize; 4] = [128, 256, 512, 1024];
pub const ALLOWED_LAYERS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Error)]
pub enum GruError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("cache does not belong to this model state or batch")]
    StaleCache,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("non-finite prediction")]
    NonFinitePrediction,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn shape_err(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> GruError {
    GruError::ShapeMismatch { expected: format!("{expected:?}"), got: format!("{got:?}") }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruDims {
    pub d_x: usize,
    pub d_h: usize,
    pub layers: usize,
    pub t_e: usize,
    pub t_d: usize,
    pub d_out: usize,
}

impl GruDims {
    /// The facility model: 30 × 26 in, 10 × 29 out.
    pub fn facility(hidden: usize, layers: usize) -> Self {
        GruDims { d_x: INPUT_DIM, d_h: hidden, layers, t_e: ENCODER_STEPS, t_d: DECODER_STEPS, d_out: OUTPUT_DIM }
    }

    pub fn head_width(&self) -> usize {
        self.t_d * self.d_out
    }

    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 { self.d_x } else { self.d_h }
    }

    /// Whether hidden size and depth lie in the supported value space.
    pub fn is_standard(&self) -> bool {
        ALLOWED_HIDDEN.contains(&self.d_h) && ALLOWED_LAYERS.contains(&self.layers)
    }

    /// Trainable scalars: three gates of `d_h × (d_h + d_in) + d_h` per layer
    /// plus the head.
    pub fn param_count(&self) -> usize {
        let gates: usize = (0..self.layers).map(|l| 3 * (self.d_h * (self.d_h + self.layer_input(l)) + self.d_h)).sum();
        gates + self.head_width() * self.d_h + self.head_width()
    }

    fn validate(&self) -> Result<(), GruError> {
        if [self.d_x, self.d_h, self.layers, self.t_e, self.t_d, self.d_out].contains(&0) {
            return Err(shape_err("all dimensions > 0", self));
        }
        Ok(())
    }
}

pub fn param_count(hidden: usize, layers: usize) -> usize {
    GruDims::facility(hidden, layers).param_count()
}

/// Floating-point element of parameters and activations.
pub trait Real: ndarray::LinalgScalar + ndarray::ScalarOperand + num_traits::Float + std::fmt::Debug + Send + Sync {}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerParams<T = f64> {
    pub w_r: Array2<T>,
    pub w_z: Array2<T>,
    pub w_h: Array2<T>,
    pub b_r: Array1<T>,
    pub b_z: Array1<T>,
    pub b_h: Array1<T>,
}

impl<T: Real> GruLayerParams<T> {
    pub fn zeros(d_x: usize, d_h: usize) -> Self {
        let w = || Array2::zeros((d_h, d_h + d_x));
        let b = || Array1::zeros(d_h);
        GruLayerParams { w_r: w(), w_z: w(), w_h: w(), b_r: b(), b_z: b(), b_h: b() }
    }

    pub fn d_h(&self) -> usize {
        self.w_r.nrows()
    }

    pub fn d_x(&self) -> usize {
        self.w_r.ncols() - self.w_r.nrows()
    }
}

/// All trainable tensors; also the shape of a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<T = f64> {
    pub layers: Vec<GruLayerParams<T>>,
    pub head_w: Array2<T>,
    pub head_b: Array1<T>,
}

impl<T: Real> GruParams<T> {
    pub fn zeros(dims: &GruDims) -> Self {
        GruParams {
            layers: (0..dims.layers).map(|l| GruLayerParams::zeros(dims.layer_input(l), dims.d_h)).collect(),
            head_w: Array2::zeros((dims.head_width(), dims.d_h)),
            head_b: Array1::zeros(dims.head_width()),
        }
    }

    /// Tensors in a fixed order: per layer `W_r, W_z, W_h, b_r, b_z, b_h`, then
    /// head weight and bias.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(6 * self.layers.len() + 2);
        for l in &self.layers {
            for t in [&l.w_r, &l.w_z, &l.w_h] {
                out.push(t.as_slice().expect("standard layout"));
            }
            for t in [&l.b_r, &l.b_z, &l.b_h] {
                out.push(t.as_slice().expect("standard layout"));
            }
        }
        out.push(self.head_w.as_slice().expect("standard layout"));
        out.push(self.head_b.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(6 * self.layers.len() + 2);
        for l in &mut self.layers {
            let GruLayerParams { w_r, w_z, w_h, b_r, b_z, b_h } = l;
            for t in [w_r, w_z, w_h] {
                out.push(t.as_slice_mut().expect("standard layout"));
            }
            for t in [b_r, b_z, b_h] {
                out.push(t.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.head_w.as_slice_mut().expect("standard layout"));
        out.push(self.head_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Element-wise conversion into `dst`, which must have the same shapes.
    pub fn cast_into<U: Real>(&self, dst: &mut GruParams<U>) {
        for (s, d) in self.tensors().into_iter().zip(dst.tensors_mut()) {
            for (a, b) in s.iter().zip(d.iter_mut()) {
                *b = U::from(*a).expect("finite conversion");
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GruModel {
    pub dims: GruDims,
    pub params: GruParams,
    pub norm: NormStats,
    /// Bumped on every parameter update; forward caches record it.
    pub(crate) generation: u64,
}

impl PartialEq for GruModel {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.params == other.params && self.norm == other.norm
    }
}

impl GruModel {
    /// Uniform `±1/√d_h` initialisation of every GRU tensor and the head
    /// weight; zero head bias; identity normalisation.
    pub fn init(dims: GruDims, seed: u64) -> Result<Self, GruError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (dims.d_h as f64).sqrt();
        let mut params = GruParams::zeros(&dims);
        let n = params.tensors().len();
        for (i, t) in params.tensors_mut().into_iter().enumerate() {
            if i + 1 == n {
                continue;
            }
            t.iter_mut().for_each(|v| *v = rng.gen_range(-k..k));
        }
        Ok(GruModel { dims, params, norm: NormStats::identity(dims.d_x, dims.d_out), generation: 0 })
    }

    /// All-zero parameters.
    pub fn zeros(dims: GruDims) -> Result<Self, GruError> {
        dims.validate()?;
        Ok(GruModel {
            dims,
            params: GruParams::zeros(&dims),
            norm: NormStats::identity(dims.d_x, dims.d_out),
            generation: 0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.dims.param_count()
    }

    /// Signal that parameters were modified outside the optimiser.
    pub fn touch(&mut self) {
        self.generation += 1;
    }
}

/// Gate values of one cell evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GateActivations {
    pub r: Array1<f64>,
    pub z: Array1<f64>,
    pub h_tilde: Array1<f64>,
    pub h: Array1<f64>,
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// One GRU step for a single sample.
pub fn cell_forward(x: &[f64], h_prev: &[f64], p: &GruLayerParams) -> Result<(Array1<f64>, GateActivations), GruError> {
    let (d_h, d_x) = (p.d_h(), p.d_x());
    if x.len() != d_x || h_prev.len() != d_h {
        return Err(shape_err((d_x, d_h), (x.len(), h_prev.len())));
    }
    let mut hx = Array1::zeros(d_h + d_x);
    hx.slice_mut(s![..d_h]).assign(&ndarray::aview1(h_prev));
    hx.slice_mut(s![d_h..]).assign(&ndarray::aview1(x));
    let r = (p.w_r.dot(&hx) + &p.b_r).mapv(sigmoid);
    let z = (p.w_z.dot(&hx) + &p.b_z).mapv(sigmoid);
    let h = ndarray::aview1(h_prev);
    let mut rhx = hx;
    rhx.slice_mut(s![..d_h]).assign(&(&r * &h));
    let h_tilde = (p.w_h.dot(&rhx) + &p.b_h).mapv(f64::tanh);
    let h_new = (1.0 - &z) * &h + &z * &h_tilde;
    Ok((h_new.clone(), GateActivations { r, z, h_tilde, h: h_new }))
}

/// Run the stack over a `T × d_x` sequence from zero hidden state.
///
/// Returns the final hidden state of every layer and the per-layer,
/// per-step gate activations.
pub fn stack_forward(
    seq: ArrayView2<f64>,
    model: &GruModel,
) -> Result<(Vec<Array1<f64>>, Vec<Vec<GateActivations>>), GruError> {
    if seq.ncols() != model.dims.d_x || seq.nrows() == 0 {
        return Err(shape_err(("T", model.dims.d_x), seq.dim()));
    }
    let mut inputs: Vec<Array1<f64>> = seq.axis_iter(Axis(0)).map(|r| r.to_owned()).collect();
    let mut finals = Vec::with_capacity(model.dims.layers);
    let mut caches = Vec::with_capacity(model.dims.layers);
    for layer in &model.params.layers {
        let mut h = Array1::zeros(layer.d_h());
        let mut acts = Vec::with_capacity(inputs.len());
        let mut outputs = Vec::with_capacity(inputs.len());
        for x in &inputs {
            let (h_new, a) = cell_forward(x.as_slice().expect("contiguous"), h.as_slice().expect("contiguous"), layer)?;
            h = h_new;
            outputs.push(h.clone());
            acts.push(a);
        }
        finals.push(h);
        caches.push(acts);
        inputs = outputs;
    }
    Ok((finals, caches))
}

/// Map a normalised `T_e × d_x` window to a normalised `T_d × d_out` block.
pub fn predict(seq: ArrayView2<f64>, model: &GruModel) -> Result<Array2<f64>, GruError> {
    if seq.nrows() != model.dims.t_e {
        return Err(shape_err((model.dims.t_e, model.dims.d_x), seq.dim()));
    }
    let (finals, _) = stack_forward(seq, model)?;
    let top = finals.last().expect("at least one layer");
    let flat = model.params.head_w.dot(top) + &model.params.head_b;
    Ok(flat.into_shape_with_order((model.dims.t_d, model.dims.d_out)).expect("head width"))
}

/// Mean of squared differences over all elements.
pub fn loss_mse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64, GruError> {
    if pred.dim() != target.dim() {
        return Err(shape_err(target.dim(), pred.dim()));
    }
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}
