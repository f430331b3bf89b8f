use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DiffusionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserDims {
    pub data: usize,
    pub hidden: usize,
    pub layers: usize,
    pub time_embedding: usize,
    pub condition_embedding: usize,
}

impl DenoiserDims {
    pub fn input(&self) -> usize {
        self.data + self.time_embedding + self.condition_embedding
    }
}

/// Affine layer, weights stored column-major (`rows` outputs × `cols` inputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (cols as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        Self {
            rows,
            cols,
            w: (0..rows * cols).map(|_| draw()).collect(),
            b: (0..rows).map(|_| draw()).collect(),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            w: vec![0.0; self.w.len()],
            b: vec![0.0; self.b.len()],
        }
    }

    fn weights(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.w, self.rows, self.cols)
    }

    fn apply(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = self.weights() * h;
        for mut col in z.column_iter_mut() {
            for (v, b) in col.iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        z
    }
}

/// Noise-prediction network ε(x_n, n, α). The condition enters through a
/// learned affine embedding of α, or a learned null vector when dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    pub dims: DenoiserDims,
    pub layers: Vec<Dense>,
    pub cond_w: Vec<f64>,
    pub cond_b: Vec<f64>,
    pub null_token: Vec<f64>,
}

/// Parameter gradients, shaped like the network.
pub type Gradients = Denoiser;

/// Activations kept for the backward pass.
pub(crate) struct ForwardCache {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    cond: Vec<Option<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Sinusoidal embedding of the step index.
pub(crate) fn time_embedding(n: usize, dim: usize) -> impl Iterator<Item = f64> {
    let half = dim / 2;
    let freqs = (0..half).map(move |i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
    let t = n as f64;
    freqs.clone().map(move |f| (t * f).sin()).chain(freqs.map(move |f| (t * f).cos()))
}

impl Denoiser {
    pub fn init<R: Rng + ?Sized>(dims: DenoiserDims, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(dims.layers + 1);
        let mut fan_in = dims.input();
        for _ in 0..dims.layers {
            layers.push(Dense::init(dims.hidden, fan_in, rng));
            fan_in = dims.hidden;
        }
        layers.push(Dense::init(dims.data, fan_in, rng));
        let c = dims.condition_embedding;
        Self {
            dims,
            layers,
            cond_w: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
            cond_b: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
            null_token: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Gradients {
        Self {
            dims: self.dims,
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            cond_w: vec![0.0; self.cond_w.len()],
            cond_b: vec![0.0; self.cond_b.len()],
            null_token: vec![0.0; self.null_token.len()],
        }
    }

    /// Shape consistency, for weights read from disk.
    pub fn check(&self) -> Result<(), DiffusionError> {
        let d = &self.dims;
        let bad = |m: String| Err(DiffusionError::Checkpoint(m));
        if self.layers.len() != d.layers + 1 {
            return bad(format!("expected {} layers, found {}", d.layers + 1, self.layers.len()));
        }
        let mut fan_in = d.input();
        for (i, l) in self.layers.iter().enumerate() {
            let rows = if i == d.layers { d.data } else { d.hidden };
            if l.rows != rows || l.cols != fan_in || l.w.len() != rows * fan_in || l.b.len() != rows {
                return bad(format!("layer {i} has inconsistent shape"));
            }
            fan_in = rows;
        }
        let c = d.condition_embedding;
        if self.cond_w.len() != c || self.cond_b.len() != c || self.null_token.len() != c {
            return bad("condition embedding has inconsistent shape".into());
        }
        Ok(())
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(&l.w);
            out.push(&l.b);
        }
        out.extend([self.cond_w.as_slice(), &self.cond_b, &self.null_token]);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.extend([self.cond_w.as_mut_slice(), &mut self.cond_b, &mut self.null_token]);
        out
    }

    fn input_matrix(&self, x: &DMatrix<f64>, steps: &[usize], cond: &[Option<f64>]) -> DMatrix<f64> {
        let d = self.dims;
        let mut h = DMatrix::zeros(d.input(), x.ncols());
        for (j, mut col) in h.column_iter_mut().enumerate() {
            col.rows_mut(0, d.data).copy_from(&x.column(j));
            for (slot, v) in col.rows_mut(d.data, d.time_embedding).iter_mut().zip(time_embedding(steps[j], d.time_embedding)) {
                *slot = v;
            }
            let off = d.data + d.time_embedding;
            for k in 0..d.condition_embedding {
                col[off + k] = match cond[j] {
                    Some(a) => self.cond_w[k] * a + self.cond_b[k],
                    None => self.null_token[k],
                };
            }
        }
        h
    }

    /// Predicted noise for each column of `x` (normalized data).
    /// `cond[j]` is the normalized α or `None` for the null condition.
    pub fn predict(&self, x: &DMatrix<f64>, steps: &[usize], cond: &[Option<f64>]) -> DMatrix<f64> {
        let mut h = self.input_matrix(x, steps, cond);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i < last {
                h.apply(|v| *v = silu(*v));
            }
        }
        h
    }

    pub(crate) fn forward(&self, x: &DMatrix<f64>, steps: &[usize], cond: &[Option<f64>]) -> (DMatrix<f64>, ForwardCache) {
        let mut h = self.input_matrix(x, steps, cond);
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            inputs.push(h);
            if i < last {
                h = z.map(silu);
                pre.push(z);
            } else {
                h = z;
            }
        }
        (
            h,
            ForwardCache {
                inputs,
                pre,
                cond: cond.to_vec(),
            },
        )
    }

    /// Accumulate parameter gradients into `grads` given ∂L/∂output.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_out: DMatrix<f64>, grads: &mut Gradients) {
        let mut delta = d_out;
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            let g = &mut grads.layers[i];
            let (rows, cols) = (g.rows, g.cols);
            DMatrixViewMut::from_slice(&mut g.w, rows, cols).gemm(1.0, &delta, &input.transpose(), 1.0);
            for (gb, row) in g.b.iter_mut().zip(delta.row_iter()) {
                *gb += row.sum();
            }
            let mut d_in = self.layers[i].weights().transpose() * &delta;
            if i > 0 {
                d_in.zip_apply(&cache.pre[i - 1], |d, z| *d *= silu_prime(z));
            }
            delta = d_in;
        }
        let d = self.dims;
        let off = d.data + d.time_embedding;
        for (j, c) in cache.cond.iter().enumerate() {
            let col: DVector<f64> = delta.column(j).rows(off, d.condition_embedding).into_owned();
            match c {
                Some(a) => {
                    for k in 0..d.condition_embedding {
                        grads.cond_w[k] += col[k] * a;
                        grads.cond_b[k] += col[k];
                    }
                }
                None => {
                    for k in 0..d.condition_embedding {
                        grads.null_token[k] += col[k];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Denoiser {
        let dims = DenoiserDims {
            data: 2,
            hidden: 6,
            layers: 2,
            time_embedding: 4,
            condition_embedding: 3,
        };
        Denoiser::init(dims, &mut ChaCha8Rng::seed_from_u64(1))
    }

    // L = Σ c ∘ output for a fixed weighting c.
    fn loss(net: &Denoiser, x: &DMatrix<f64>, steps: &[usize], cond: &[Option<f64>], c: &DMatrix<f64>) -> f64 {
        net.predict(x, steps, cond).component_mul(c).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = small();
        let x = DMatrix::from_row_slice(2, 3, &[0.3, -1.0, 0.7, 0.2, 0.5, -0.4]);
        let steps = [1, 17, 250];
        let cond = [Some(0.3), None, Some(0.9)];
        let c = DMatrix::from_row_slice(2, 3, &[1.0, -0.5, 0.25, 0.7, 2.0, -1.0]);
        let (_, cache) = net.forward(&x, &steps, &cond);
        let mut grads = net.zeros_like();
        net.backward(&cache, c.clone(), &mut grads);

        let h = 1e-6;
        let analytic: Vec<f64> = grads.slices().concat();
        let mut k = 0;
        let n_slices = net.slices().len();
        for s in 0..n_slices {
            let len = net.slices()[s].len();
            for i in 0..len {
                let mut plus = net.clone();
                plus.slices_mut()[s][i] += h;
                let mut minus = net.clone();
                minus.slices_mut()[s][i] -= h;
                let fd = (loss(&plus, &x, &steps, &cond, &c) - loss(&minus, &x, &steps, &cond, &c)) / (2.0 * h);
                assert!(
                    (fd - analytic[k]).abs() < 1e-7 * (1.0 + fd.abs()),
                    "slice {s} entry {i}: fd {fd} analytic {}",
                    analytic[k]
                );
                k += 1;
            }
        }
    }

    #[test]
    fn predict_equals_forward() {
        let net = small();
        let x = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.2, 0.5]);
        let (out, _) = net.forward(&x, &[3, 4], &[None, Some(0.5)]);
        assert_eq!(out, net.predict(&x, &[3, 4], &[None, Some(0.5)]));
    }

    #[test]
    fn time_embedding_layout() {
        let e: Vec<f64> = time_embedding(0, 8).collect();
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
