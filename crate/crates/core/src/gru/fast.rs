//! Single-precision inference for autoregressive rollouts.
//!
//! Each layer's input contribution (`W_x x_t + b` for all three gates) is
//! computed for the whole window in one GEMM; only the `h`-dependent products
//! stay in the time loop, where a four-row AVX2/FMA kernel does the matvecs
//! when the CPU has it.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2};

use super::{GruDims, GruError, GruModel};

#[derive(Debug, Clone)]
struct FastLayer {
    d_h: usize,
    /// `[W_r; W_z]` restricted to the `h` columns, `2 d_h × d_h`.
    w_rz_h: Vec<f32>,
    /// `W_h` restricted to the `h` columns, `d_h × d_h`.
    w_c_h: Vec<f32>,
    /// Input columns of all three gates, transposed: `d_in × 3 d_h`.
    w_x_t: Array2<f32>,
    bias: Vec<f32>,
}

/// f32 copy of a [`GruModel`] with its own scratch buffers.
#[derive(Debug, Clone)]
pub struct FastGru {
    pub dims: GruDims,
    layers: Vec<FastLayer>,
    head_w: Vec<f32>,
    head_b: Vec<f32>,
    seq: Array2<f32>,
    gates: Array2<f32>,
    h: Vec<f32>,
    rh: Vec<f32>,
    rz: Vec<f32>,
    cand: Vec<f32>,
    out: Vec<f32>,
    simd: bool,
}

fn cols_f32(w: ArrayView2<'_, f64>, from: usize, to: usize) -> Vec<f32> {
    w.slice(s![.., from..to]).iter().map(|v| *v as f32).collect()
}

impl FastGru {
    pub fn new(model: &GruModel) -> Self {
        let d = model.dims;
        let layers = model
            .params
            .layers
            .iter()
            .map(|l| {
                let (d_h, d_in) = (l.d_h(), l.d_x());
                let mut w_rz_h = cols_f32(l.w_r.view(), 0, d_h);
                w_rz_h.extend(cols_f32(l.w_z.view(), 0, d_h));
                let w_x_t = Array2::from_shape_fn((d_in, 3 * d_h), |(i, j)| {
                    let w = [&l.w_r, &l.w_z, &l.w_h][j / d_h];
                    w[[j % d_h, d_h + i]] as f32
                });
                let bias = l.b_r.iter().chain(&l.b_z).chain(&l.b_h).map(|v| *v as f32).collect();
                FastLayer { d_h, w_rz_h, w_c_h: cols_f32(l.w_h.view(), 0, d_h), w_x_t, bias }
            })
            .collect();
        FastGru {
            dims: d,
            layers,
            head_w: model.params.head_w.iter().map(|v| *v as f32).collect(),
            head_b: model.params.head_b.iter().map(|v| *v as f32).collect(),
            seq: Array2::zeros((0, 0)),
            gates: Array2::zeros((d.t_e, 3 * d.d_h)),
            h: vec![0.0; d.d_h],
            rh: vec![0.0; d.d_h],
            rz: vec![0.0; 2 * d.d_h],
            cand: vec![0.0; d.d_h],
            out: vec![0.0; d.head_width()],
            simd: simd_available(),
        }
    }

    /// Force the portable path (used to cross-check the SIMD kernel).
    pub fn set_simd(&mut self, on: bool) {
        self.simd = on && simd_available();
    }

    /// Predict a normalised `T_d · d_out` block from a normalised row-major
    /// `T_e × d_x` window.
    pub fn predict(&mut self, window: &[f32]) -> Result<&[f32], GruError> {
        let d = self.dims;
        if window.len() != d.t_e * d.d_x {
            return Err(super::shape_err(d.t_e * d.d_x, window.len()));
        }
        let simd = self.simd;
        let mut seq = std::mem::replace(&mut self.seq, Array2::zeros((0, 0)));
        if seq.dim() != (d.t_e, d.d_x) {
            seq = Array2::zeros((d.t_e, d.d_x));
        }
        seq.as_slice_mut().expect("standard layout").copy_from_slice(window);
        for layer in &self.layers {
            let d_h = layer.d_h;
            let gates = &mut self.gates;
            for mut row in gates.rows_mut() {
                row.as_slice_mut().expect("standard layout").copy_from_slice(&layer.bias);
            }
            general_mat_mul(1.0, &seq, &layer.w_x_t, 1.0, gates);
            if seq.ncols() != d_h {
                seq = Array2::zeros((d.t_e, d_h));
            }
            self.h.fill(0.0);
            for t in 0..d.t_e {
                let g = gates.row(t);
                let g = g.as_slice().expect("standard layout");
                matvec(&layer.w_rz_h, &g[..2 * d_h], &self.h, &mut self.rz, simd);
                for v in self.rz.iter_mut() {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
                let (r, z) = self.rz.split_at(d_h);
                for ((rh, r), h) in self.rh.iter_mut().zip(r).zip(&self.h) {
                    *rh = r * h;
                }
                matvec(&layer.w_c_h, &g[2 * d_h..], &self.rh, &mut self.cand, simd);
                let mut out = seq.row_mut(t);
                let out = out.as_slice_mut().expect("standard layout");
                for i in 0..d_h {
                    let h = (1.0 - z[i]) * self.h[i] + z[i] * self.cand[i].tanh();
                    self.h[i] = h;
                    out[i] = h;
                }
            }
        }
        self.seq = seq;
        matvec(&self.head_w, &self.head_b, &self.h, &mut self.out, simd);
        if self.out.iter().any(|v| !v.is_finite()) {
            return Err(GruError::NonFinitePrediction);
        }
        Ok(&self.out)
    }
}

fn simd_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// `out = b + W x` for row-major `W` with `x.len()` columns.
fn matvec(w: &[f32], b: &[f32], x: &[f32], out: &mut [f32], simd: bool) {
    assert_eq!(w.len(), x.len() * out.len());
    #[cfg(target_arch = "x86_64")]
    if simd {
        // SAFETY: `simd` is only true when AVX2 and FMA were detected.
        unsafe { matvec_avx2(w, b, x, out) };
        return;
    }
    let _ = simd;
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = [0.0f32; 8];
        let mut chunks = row.chunks_exact(8).zip(x.chunks_exact(8));
        for (a, v) in &mut chunks {
            for l in 0..8 {
                acc[l] += a[l] * v[l];
            }
        }
        let tail = cols - cols % 8;
        let mut s: f32 = acc.iter().sum();
        for k in tail..cols {
            s += row[k] * x[k];
        }
        *o = b[i] + s;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn hsum(v: std::arch::x86_64::__m256) -> f32 {
    use std::arch::x86_64::*;
    let q = _mm_add_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
    let q = _mm_add_ps(q, _mm_movehl_ps(q, q));
    let q = _mm_add_ss(q, _mm_shuffle_ps(q, q, 1));
    _mm_cvtss_f32(q)
}

/// Four rows per pass so each load of `x` feeds four FMAs. Loads take the
/// address of a bounds-checked element instead of using pointer offsets or
/// `chunks_exact`, whose unsafe preconditions are re-checked on every call
/// when debug assertions are on and would halve throughput under `cargo test`.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn matvec_avx2(w: &[f32], b: &[f32], x: &[f32], out: &mut [f32]) {
    use std::arch::x86_64::*;
    let cols = x.len();
    let rows = out.len();
    let body = cols - cols % 8;
    // `k + 8 <= body <= cols`, so every 8-lane load stays inside its row.
    let ld = |v: &[f32], k: usize| _mm256_loadu_ps(&v[k] as *const f32);
    let tail = |row: &[f32]| -> f32 { row[body..].iter().zip(&x[body..]).map(|(a, v)| a * v).sum() };
    let mut i = 0;
    while i + 4 <= rows {
        let r0 = &w[i * cols..(i + 1) * cols];
        let r1 = &w[(i + 1) * cols..(i + 2) * cols];
        let r2 = &w[(i + 2) * cols..(i + 3) * cols];
        let r3 = &w[(i + 3) * cols..(i + 4) * cols];
        let (mut a0, mut a1, mut a2, mut a3) = (_mm256_setzero_ps(), _mm256_setzero_ps(), _mm256_setzero_ps(), _mm256_setzero_ps());
        let mut k = 0;
        while k < body {
            let xv = ld(x, k);
            a0 = _mm256_fmadd_ps(ld(r0, k), xv, a0);
            a1 = _mm256_fmadd_ps(ld(r1, k), xv, a1);
            a2 = _mm256_fmadd_ps(ld(r2, k), xv, a2);
            a3 = _mm256_fmadd_ps(ld(r3, k), xv, a3);
            k += 8;
        }
        out[i] = b[i] + hsum(a0) + tail(r0);
        out[i + 1] = b[i + 1] + hsum(a1) + tail(r1);
        out[i + 2] = b[i + 2] + hsum(a2) + tail(r2);
        out[i + 3] = b[i + 3] + hsum(a3) + tail(r3);
        i += 4;
    }
    while i < rows {
        let r = &w[i * cols..(i + 1) * cols];
        let mut a = _mm256_setzero_ps();
        let mut k = 0;
        while k < body {
            a = _mm256_fmadd_ps(ld(r, k), ld(x, k), a);
            k += 8;
        }
        out[i] = b[i] + hsum(a) + tail(r);
        i += 1;
    }
}
