//! Feed-forward tanh networks over a flat parameter slice.
//!
//! A network is described by its layer sizes; parameters live in a caller
//! owned slice laid out layer by layer as `[weights, bias]`. Weights are
//! stored input-major (`w[j * out + i]` connects input `j` to output `i`) so
//! both the forward pass and the weight gradient are contiguous axpy loops.

use rand::Rng;

use crate::rng::standard_normal;
use crate::scalar::{MatMut, MatRef, Scalar};

/// Layer sizes of a tanh MLP with a linear output layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpShape {
    sizes: Vec<usize>,
}

/// Activations recorded by a forward pass, reused across calls.
#[derive(Debug, Clone, Default)]
pub struct MlpCache<T> {
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
}

/// Activations of a batched pass: one row-major `batch × size` matrix per
/// layer.
#[derive(Debug, Clone, Default)]
pub struct MlpBatchCache<T> {
    batch: usize,
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
}

impl<T: Scalar> MlpBatchCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Row-major `batch × output` result of the last forward pass.
    pub fn output(&self) -> &[T] {
        self.acts.last().map_or(&[], |a| &a[..])
    }
}

impl MlpShape {
    /// `sizes = [input, hidden..., output]`.
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        MlpShape { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offset of layer `k`'s weights in the flat parameter slice.
    pub fn layer_offset(&self, k: usize) -> usize {
        self.sizes[..=k].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Range of the output layer's weights (not its bias).
    pub fn output_weight_range(&self) -> std::ops::Range<usize> {
        let k = self.n_layers() - 1;
        let start = self.layer_offset(k);
        start..start + self.sizes[k] * self.sizes[k + 1]
    }

    pub fn new_cache<T: Scalar>(&self) -> MlpCache<T> {
        let width = *self.sizes.iter().max().unwrap();
        MlpCache {
            acts: self.sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            delta: vec![T::zero(); width],
            delta_prev: vec![T::zero(); width],
        }
    }

    /// Orthogonal initialisation: hidden layers scaled by `hidden_gain`, the
    /// output layer by `output_gain`, biases zero.
    pub fn init_params<T: Scalar, R: Rng + ?Sized>(
        &self,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
        params: &mut [T],
    ) {
        assert_eq!(params.len(), self.n_params());
        let last = self.n_layers() - 1;
        for k in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
            let gain = if k == last { output_gain } else { hidden_gain };
            let off = self.layer_offset(k);
            let m = orthogonal(fan_out, fan_in, gain, rng);
            for j in 0..fan_in {
                for i in 0..fan_out {
                    params[off + j * fan_out + i] = T::lit(m[i * fan_in + j]);
                }
            }
            for b in &mut params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out] {
                *b = T::zero();
            }
        }
    }

    /// Forward pass; the output is `cache.output()`.
    pub fn forward<T: Scalar>(&self, params: &[T], input: &[T], cache: &mut MlpCache<T>) {
        debug_assert_eq!(params.len(), self.n_params());
        debug_assert_eq!(input.len(), self.input_dim());
        cache.acts[0].copy_from_slice(input);
        let last = self.n_layers() - 1;
        let mut off = 0;
        for k in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let w = &params[off..off + n_in * n_out];
            let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let (before, after) = cache.acts.split_at_mut(k + 1);
            let x = &before[k];
            let y = &mut after[0];
            y.copy_from_slice(b);
            for (j, &xj) in x.iter().enumerate() {
                let row = &w[j * n_out..(j + 1) * n_out];
                for (yi, &wji) in y.iter_mut().zip(row) {
                    *yi += xj * wji;
                }
            }
            if k != last {
                for yi in y.iter_mut() {
                    *yi = tanh(*yi);
                }
            }
        }
    }

    /// Reverse pass for the activations stored in `cache`.
    ///
    /// Accumulates `∂L/∂params` into `grads` given `d_output = ∂L/∂output`,
    /// and writes `∂L/∂input` into `d_input` when provided.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        cache: &mut MlpCache<T>,
        d_output: &[T],
        grads: &mut [T],
        mut d_input: Option<&mut [T]>,
    ) {
        debug_assert_eq!(grads.len(), self.n_params());
        let last = self.n_layers() - 1;
        let MlpCache {
            acts,
            delta,
            delta_prev,
        } = cache;
        delta[..d_output.len()].copy_from_slice(d_output);
        for k in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let off = self.layer_offset(k);
            if k != last {
                // through tanh: d/dz tanh(z) = 1 − a²
                for (d, &a) in delta[..n_out].iter_mut().zip(&acts[k + 1]) {
                    *d *= T::one() - a * a;
                }
            }
            let dz = &delta[..n_out];
            let x = &acts[k];
            let (gw, gb) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for (g, &d) in gb.iter_mut().zip(dz) {
                *g += d;
            }
            for (j, &xj) in x.iter().enumerate() {
                for (g, &d) in gw[j * n_out..(j + 1) * n_out].iter_mut().zip(dz) {
                    *g += xj * d;
                }
            }
            let need_dx = k > 0 || d_input.is_some();
            if need_dx {
                let w = &params[off..off + n_in * n_out];
                for j in 0..n_in {
                    delta_prev[j] = dot(&w[j * n_out..(j + 1) * n_out], dz);
                }
                if k == 0 {
                    if let Some(dx) = d_input.as_deref_mut() {
                        dx.copy_from_slice(&delta_prev[..n_in]);
                    }
                }
                std::mem::swap(delta, delta_prev);
            }
        }
    }
}

impl MlpShape {
    /// Forward pass over `batch` inputs stored row-major in `inputs`.
    pub fn forward_batch<T: Scalar>(&self, params: &[T], inputs: &[T], batch: usize, cache: &mut MlpBatchCache<T>) {
        assert_eq!(inputs.len(), batch * self.input_dim());
        cache.batch = batch;
        cache.acts.resize_with(self.sizes.len(), Vec::new);
        for (a, &s) in cache.acts.iter_mut().zip(&self.sizes) {
            a.resize(batch * s, T::zero());
        }
        cache.acts[0].copy_from_slice(inputs);
        let last = self.n_layers() - 1;
        let mut off = 0;
        for k in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let w = &params[off..off + n_in * n_out];
            let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let (before, after) = cache.acts.split_at_mut(k + 1);
            let x = &before[k];
            let y = &mut after[0];
            for row in y.chunks_exact_mut(n_out) {
                row.copy_from_slice(b);
            }
            T::gemm(
                MatRef::new(x, batch, n_in),
                MatRef::new(w, n_in, n_out),
                T::one(),
                MatMut::new(y, batch, n_out),
            );
            if k != last {
                for yi in y.iter_mut() {
                    *yi = tanh(*yi);
                }
            }
        }
    }

    /// Batched counterpart of [`MlpShape::backward`]; `d_output` and
    /// `d_input` are row-major `batch × dim`. Gradients are summed over the
    /// batch.
    pub fn backward_batch<T: Scalar>(
        &self,
        params: &[T],
        cache: &mut MlpBatchCache<T>,
        d_output: &[T],
        grads: &mut [T],
        mut d_input: Option<&mut [T]>,
    ) {
        let batch = cache.batch;
        assert_eq!(d_output.len(), batch * self.output_dim());
        let last = self.n_layers() - 1;
        let MlpBatchCache {
            acts,
            delta,
            delta_prev,
            ..
        } = cache;
        delta.clear();
        delta.extend_from_slice(d_output);
        for k in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let off = self.layer_offset(k);
            if k != last {
                for (d, &a) in delta.iter_mut().zip(&acts[k + 1]) {
                    *d *= T::one() - a * a;
                }
            }
            let (gw, gb) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for row in delta.chunks_exact(n_out) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            T::gemm(
                MatRef::new(&acts[k], batch, n_in).t(),
                MatRef::new(delta, batch, n_out),
                T::one(),
                MatMut::new(gw, n_in, n_out),
            );
            if k > 0 || d_input.is_some() {
                let w = &params[off..off + n_in * n_out];
                delta_prev.resize(batch * n_in, T::zero());
                T::gemm(
                    MatRef::new(delta, batch, n_out),
                    MatRef::new(w, n_in, n_out).t(),
                    T::zero(),
                    MatMut::new(delta_prev, batch, n_in),
                );
                if k == 0 {
                    if let Some(dx) = d_input.as_deref_mut() {
                        dx.copy_from_slice(delta_prev);
                    }
                }
                std::mem::swap(delta, delta_prev);
            }
        }
    }
}

impl<T: Scalar> MlpCache<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().unwrap()
    }
}

/// `tanh` through `expm1`; within a few ulp of the libm result and
/// noticeably cheaper, which matters since it dominates small-network passes.
#[inline]
pub fn tanh<T: Scalar>(x: T) -> T {
    let e = (-(x.abs() + x.abs())).exp_m1();
    (-e / (T::lit(2.0) + e)).copysign(x)
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Row-major `rows × cols` matrix with orthonormal rows or columns
/// (whichever is fewer), scaled by `gain`.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // `short` Gaussian vectors of length `tall`, orthonormalised with
    // modified Gram-Schmidt.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..tall).map(|_| standard_normal::<f64, _>(rng)).collect();
        for q in &basis {
            let proj: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= proj * qi;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-10 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    let mut m = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // basis vectors are the columns of a tall matrix or the rows of a wide one
            m[r * cols + c] = gain * if rows >= cols { basis[c][r] } else { basis[r][c] };
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn tanh_matches_libm() {
        let mut x = -25.0f64;
        while x < 25.0 {
            assert!((tanh(x) - x.tanh()).abs() <= 4.0 * f64::EPSILON * x.tanh().abs().max(1e-300), "{x}");
            x += 0.0137;
        }
        assert_eq!(tanh(0.0f64), 0.0);
        assert_eq!(tanh(-0.0f64).to_bits(), (-0.0f64).to_bits());
        assert!((tanh(1e-9f64) - 1e-9).abs() < 1e-24);
    }

    #[test]
    fn parameter_count() {
        let shape = MlpShape::new(vec![2, 64, 64, 1]);
        assert_eq!(shape.n_params(), (2 * 64 + 64) + (64 * 64 + 64) + (64 + 1));
        assert_eq!(shape.layer_offset(1), 2 * 64 + 64);
    }

    #[test]
    fn orthogonal_columns_and_rows() {
        let mut rng = seeded(3);
        for (r, c) in [(5, 3), (3, 5), (4, 4)] {
            let m = orthogonal(r, c, 1.0, &mut rng);
            let short = r.min(c);
            for a in 0..short {
                for b in 0..short {
                    let d: f64 = if r >= c {
                        (0..r).map(|i| m[i * c + a] * m[i * c + b]).sum()
                    } else {
                        (0..c).map(|i| m[a * c + i] * m[b * c + i]).sum()
                    };
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!((d - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hand_computed_tiny_network() {
        // 1-2-1: h = tanh([0.5, -1.0]·x + [0.1, 0.2]); y = [2.0, 3.0]·h + 0.5
        let shape = MlpShape::new(vec![1, 2, 1]);
        let params = [0.5, -1.0, 0.1, 0.2, 2.0, 3.0, 0.5];
        let mut cache = shape.new_cache::<f64>();
        shape.forward(&params, &[0.3], &mut cache);
        let expected = 2.0 * (0.5f64 * 0.3 + 0.1).tanh() + 3.0 * (-0.3f64 + 0.2).tanh() + 0.5;
        assert_eq!(cache.output()[0], expected);
        assert!((expected - 0.6908333409325508).abs() < 1e-12);
    }
}
