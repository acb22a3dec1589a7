//! Dense ReLU networks with hand-written backpropagation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// A flat parameter vector with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub w: Vec<f64>,
    #[serde(skip)]
    pub g: Vec<f64>,
    #[serde(skip)]
    pub m: Vec<f64>,
    #[serde(skip)]
    pub v: Vec<f64>,
}

impl ParamBlock {
    pub fn new(w: Vec<f64>) -> Self {
        let n = w.len();
        Self {
            w,
            g: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Restore optimizer buffers after deserialization.
    pub fn ensure_buffers(&mut self) {
        let n = self.w.len();
        for buf in [&mut self.g, &mut self.m, &mut self.v] {
            if buf.len() != n {
                *buf = vec![0.0; n];
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.g.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Fully connected net. Hidden layers use ReLU; the output layer is linear
/// unless `relu_out` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub relu_out: bool,
    pub params: ParamBlock,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// Input to each layer, then the final output.
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Rows of a random matrix made orthonormal by Gram-Schmidt (or its
/// columns when there are more rows than columns), scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (n, d) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain * if rows <= cols { basis[r][c] } else { basis[c][r] };
        }
    }
    out
}

impl Mlp {
    /// Layer `l` stores a `sizes[l+1] × sizes[l]` row-major weight matrix
    /// followed by its bias.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], relu_out: bool, out_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an Mlp needs at least one layer");
        let mut w = Vec::new();
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let gain = if l + 1 == layers { out_gain } else { 2f64.sqrt() };
            w.extend(orthogonal(sizes[l + 1], sizes[l], gain, rng));
            w.extend(std::iter::repeat_n(0.0, sizes[l + 1]));
        }
        Self {
            sizes: sizes.to_vec(),
            relu_out,
            params: ParamBlock::new(w),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    fn relu_at(&self, l: usize) -> bool {
        l + 2 < self.sizes.len() || self.relu_out
    }

    pub fn forward(&self, x: &[f64]) -> MlpCache {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..self.sizes.len() - 1 {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params.w[off..off + n_in * n_out];
            let b = &self.params.w[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = acts.last().expect("input pushed");
            let relu = self.relu_at(l);
            let out: Vec<f64> = (0..n_out)
                .map(|r| {
                    let row = &w[r * n_in..(r + 1) * n_in];
                    let z = b[r] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
                    if relu {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        MlpCache { acts }
    }

    /// Accumulate parameter gradients for `d_out` and return the gradient
    /// with respect to the input.
    pub fn backward(&mut self, cache: &MlpCache, d_out: &[f64]) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let out = &cache.acts[l + 1];
            if self.relu_at(l) {
                delta.iter_mut().zip(out).for_each(|(d, &y)| {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let input = &cache.acts[l];
            let o = offsets[l];
            let mut d_in = vec![0.0; n_in];
            for r in 0..n_out {
                let dr = delta[r];
                if dr == 0.0 {
                    continue;
                }
                let gw = &mut self.params.g[o + r * n_in..o + (r + 1) * n_in];
                gw.iter_mut().zip(input).for_each(|(g, x)| *g += dr * x);
                self.params.g[o + n_in * n_out + r] += dr;
                let row = &self.params.w[o + r * n_in..o + (r + 1) * n_in];
                d_in.iter_mut().zip(row).for_each(|(d, w)| *d += dr * w);
            }
            delta = d_in;
        }
        delta
    }

    /// Product of per-layer Frobenius norms: a Lipschitz bound for the map
    /// (ReLU is 1-Lipschitz).
    pub fn lipschitz_bound(&self) -> f64 {
        let mut off = 0;
        let mut bound = 1.0;
        for l in 0..self.sizes.len() - 1 {
            let n = self.sizes[l] * self.sizes[l + 1];
            bound *= self.params.w[off..off + n].iter().map(|w| w * w).sum::<f64>().sqrt();
            off += n + self.sizes[l + 1];
        }
        bound
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = stream(3, Purpose::Init);
        let w = orthogonal(4, 7, 1.0, &mut rng);
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = (0..7).map(|c| w[i * 7 + c] * w[j * 7 + c]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream(4, Purpose::Init);
        let mut net = Mlp::new(&[3, 5, 4, 2], false, 1.0, &mut rng);
        for b in net.params.w.iter_mut() {
            *b += 0.1 * rng.random::<f64>();
        }
        let x = [0.3, -0.7, 1.1];
        // loss = 0.5·|y|²
        let cache = net.forward(&x);
        let y = cache.output().to_vec();
        net.params.zero_grad();
        let d_in = net.backward(&cache, &y);
        let loss = |n: &Mlp, x: &[f64]| 0.5 * n.forward(x).output().iter().map(|v| v * v).sum::<f64>();
        let h = 1e-6;
        for i in 0..net.params.len() {
            let mut p = net.clone();
            p.params.w[i] += h;
            let up = loss(&p, &x);
            p.params.w[i] -= 2.0 * h;
            let down = loss(&p, &x);
            let num = (up - down) / (2.0 * h);
            assert!((num - net.params.g[i]).abs() < 1e-6, "param {i}");
        }
        for i in 0..3 {
            let mut xp = x;
            xp[i] += h;
            let up = loss(&net, &xp);
            xp[i] -= 2.0 * h;
            let down = loss(&net, &xp);
            assert!(((up - down) / (2.0 * h) - d_in[i]).abs() < 1e-6);
        }
    }
}
