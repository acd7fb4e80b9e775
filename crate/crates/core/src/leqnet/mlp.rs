//! Locally equivariant MLP with one hidden layer. Tokens enter one-hot, so
//! `(W^k x)_j = sum_{s != j} w[k, j, s, x_s]`; the time features are an extra
//! input with weights `v[k, j, :]`.

use num_traits::Float;
use rand::Rng;

use super::layout::Layout;
use super::TIME_FEATURES;

#[derive(Clone, Debug)]
pub(crate) struct LeMlp {
    d: usize,
    n: usize,
    hidden: usize,
    w: usize,
    b: usize,
    v: usize,
}

impl LeMlp {
    pub fn new(d: usize, n: usize, hidden: usize, layout: &mut Layout) -> Self {
        let w = layout.push("w", &[hidden, d, d, n]);
        let b = layout.push("b", &[hidden, d]);
        let v = layout.push("v", &[hidden, d, TIME_FEATURES]);
        Self { d, n, hidden, w, b, v }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        let scale = 1.0 / ((self.d - 1).max(1) as f64 + TIME_FEATURES as f64).sqrt();
        for v in &mut p[self.w..self.v + self.hidden * self.d * TIME_FEATURES] {
            *v = rng.gen_range(-scale..scale);
        }
        // Masked diagonal entries carry no signal; keep them at zero.
        for k in 0..self.hidden {
            for j in 0..self.d {
                for tok in 0..self.n {
                    p[self.w_index(k, j, j, tok)] = 0.0;
                }
            }
        }
    }

    #[inline]
    fn w_index(&self, k: usize, j: usize, s: usize, tok: usize) -> usize {
        self.w + ((k * self.d + j) * self.d + s) * self.n + tok
    }

    /// `H[j, k] = tanh(sum_{s != j} w[k, j, s, x_s] + b[k, j] + v[k, j] . tau(t))`.
    pub fn head<T: Float>(&self, p: &[T], tf: &[T; TIME_FEATURES], x: &[u8], out: &mut [T]) {
        let (d, hd) = (self.d, self.hidden);
        for j in 0..d {
            for k in 0..hd {
                let mut u = p[self.b + k * d + j];
                let vo = self.v + (k * d + j) * TIME_FEATURES;
                for f in 0..TIME_FEATURES {
                    u = u + p[vo + f] * tf[f];
                }
                for (s, &xs) in x.iter().enumerate() {
                    if s != j {
                        u = u + p[self.w_index(k, j, s, xs as usize)];
                    }
                }
                out[j * hd + k] = u.tanh();
            }
        }
    }

    pub fn head_backward(&self, p: &[f64], tf: &[f64; TIME_FEATURES], x: &[u8], dh: &[f64], grad: &mut [f64]) {
        let (d, hd) = (self.d, self.hidden);
        let mut h = vec![0.0; d * hd];
        self.head(p, tf, x, &mut h);
        for j in 0..d {
            for k in 0..hd {
                let du = dh[j * hd + k] * (1.0 - h[j * hd + k] * h[j * hd + k]);
                if du == 0.0 {
                    continue;
                }
                grad[self.b + k * d + j] += du;
                let vo = self.v + (k * d + j) * TIME_FEATURES;
                for f in 0..TIME_FEATURES {
                    grad[vo + f] += du * tf[f];
                }
                for (s, &xs) in x.iter().enumerate() {
                    if s != j {
                        grad[self.w_index(k, j, s, xs as usize)] += du;
                    }
                }
            }
        }
    }
}
