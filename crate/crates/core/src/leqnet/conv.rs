//! Locally equivariant convolutions with dynamic, per-site kernels.
//!
//! Layer `l` turns the hidden field `h_l(j)` (plus time features) into kernel
//! weights `W_l(j)[o, tau, c] = tanh(a_l[o, tau, c] . z_l(j) + b_l[o, tau, c]) + c_l[o, tau, c]`
//! by a 1x1 transform, then convolves the ORIGINAL one-hot input with them:
//! `h_{l+1}(j)[c] = n_l^{-1/2} sum_{o != 0} W_l(j)[o, x_{j+o}, c]`. The center
//! offset is never visited, and `h_0` is empty, so no layer at site `j` reads `x_j`.
//! Each site's column is independent of the other columns, which makes the
//! backward pass per-site as well.

use num_traits::Float;
use rand::Rng;

use super::layout::Layout;
use super::TIME_FEATURES;
use crate::targets::Geometry;
use crate::{Error, Result};

/// Widest hidden field a column keeps on the stack.
const MAX_WIDTH: usize = 256;

/// `tanh` through one `exp`, several times cheaper than the libm call and
/// equal to it up to rounding; saturates cleanly at both ends.
#[inline]
fn fast_tanh<T: Float>(u: T) -> T {
    let two = T::one() + T::one();
    T::one() - two / ((two * u).exp() + T::one())
}

#[derive(Clone, Debug)]
struct Layer {
    /// Window offsets without the center.
    n_off: usize,
    in_dim: usize,
    out_dim: usize,
    a: usize,
    b: usize,
    c: usize,
    /// `d x n_off` neighbor site table.
    nbr: Vec<usize>,
    scale: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct Lec {
    d: usize,
    n: usize,
    channels: usize,
    layers: Vec<Layer>,
}

impl Lec {
    pub fn new(geo: &Geometry, n: usize, kernel_sizes: &[usize], channels: usize, head_dim: usize, layout: &mut Layout) -> Result<Self> {
        if kernel_sizes.is_empty() {
            return Err(Error::Geometry("LEC needs at least one layer".into()));
        }
        if channels == 0 || head_dim == 0 || channels > MAX_WIDTH || head_dim > MAX_WIDTH {
            return Err(Error::Shape(format!("LEC channels and head_dim must lie in 1..={MAX_WIDTH}")));
        }
        let mut layers = Vec::with_capacity(kernel_sizes.len());
        for (l, &k) in kernel_sizes.iter().enumerate() {
            if k < 3 || k % 2 == 0 {
                return Err(Error::Geometry(format!("kernel sizes must be odd and >= 3, got {k}")));
            }
            let r = k / 2;
            // A radius reaching around the torus would fold an offset onto the center.
            if r >= geo.rows() || r >= geo.cols() {
                return Err(Error::Geometry(format!(
                    "kernel {k} wraps onto its own center on a {}x{} lattice",
                    geo.rows(),
                    geo.cols()
                )));
            }
            let mut offsets = Vec::with_capacity(k * k - 1);
            for dr in -(r as isize)..=(r as isize) {
                for dc in -(r as isize)..=(r as isize) {
                    if dr != 0 || dc != 0 {
                        offsets.push((dr, dc));
                    }
                }
            }
            let n_off = offsets.len();
            let mut nbr = Vec::with_capacity(geo.n_sites() * n_off);
            for j in 0..geo.n_sites() {
                for &(dr, dc) in &offsets {
                    nbr.push(geo.shift(j, dr, dc));
                }
            }
            let in_dim = if l == 0 { 0 } else { channels } + TIME_FEATURES;
            let out_dim = if l + 1 == kernel_sizes.len() { head_dim } else { channels };
            let a = layout.push(format!("a{l}"), &[n_off, n, out_dim, in_dim]);
            let b = layout.push(format!("b{l}"), &[n_off, n, out_dim]);
            let c = layout.push(format!("c{l}"), &[n_off, n, out_dim]);
            layers.push(Layer {
                n_off,
                in_dim,
                out_dim,
                a,
                b,
                c,
                nbr,
                scale: 1.0 / (n_off as f64).sqrt(),
            });
        }
        Ok(Self {
            d: geo.n_sites(),
            n,
            channels,
            layers,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        for layer in &self.layers {
            let s = 1.0 / (layer.in_dim as f64).sqrt();
            for v in &mut p[layer.a..layer.c] {
                *v = rng.gen_range(-s..s);
            }
        }
    }

    fn scratch_len(&self) -> usize {
        self.layers.iter().map(|l| l.n_off * l.out_dim).sum()
    }

    /// Layer-0 kernels read only the time features, so they are shared by all
    /// sites: `table[(o * n + tau) * out + c]` holds the tanh value.
    fn layer0_table<T: Float>(&self, p: &[T], tf: &[T; TIME_FEATURES], table: &mut Vec<T>) {
        let layer = &self.layers[0];
        table.clear();
        for oc in 0..layer.n_off * self.n * layer.out_dim {
            let ao = layer.a + oc * layer.in_dim;
            let mut u = p[layer.b + oc];
            for (wa, zf) in p[ao..ao + layer.in_dim].iter().zip(tf.iter()) {
                u = u + *wa * *zf;
            }
            table.push(fast_tanh(u));
        }
    }

    /// One site's column. `sig` receives the tanh values per layer and `zs`
    /// the layer inputs, for the backward pass.
    #[allow(clippy::too_many_arguments)]
    fn column<T: Float>(
        &self,
        p: &[T],
        tf: &[T; TIME_FEATURES],
        table0: &[T],
        x: &[u8],
        j: usize,
        sig: &mut [T],
        zs: &mut [Vec<T>],
        out: &mut [T],
    ) {
        let mut h = [T::zero(); MAX_WIDTH];
        let mut next = [T::zero(); MAX_WIDTH];
        let mut width = 0;
        let mut so = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = &mut zs[l];
            z.clear();
            z.extend_from_slice(&h[..width]);
            z.extend_from_slice(tf);
            next[..layer.out_dim].iter_mut().for_each(|v| *v = T::zero());
            let nbr = &layer.nbr[j * layer.n_off..(j + 1) * layer.n_off];
            for (o, &s) in nbr.iter().enumerate() {
                let base = (o * self.n + x[s] as usize) * layer.out_dim;
                for c in 0..layer.out_dim {
                    let sg = if l == 0 {
                        table0[base + c]
                    } else {
                        let ao = layer.a + (base + c) * layer.in_dim;
                        let mut u = p[layer.b + base + c];
                        for (wa, zf) in p[ao..ao + layer.in_dim].iter().zip(z.iter()) {
                            u = u + *wa * *zf;
                        }
                        fast_tanh(u)
                    };
                    sig[so + o * layer.out_dim + c] = sg;
                    next[c] = next[c] + sg + p[layer.c + base + c];
                }
            }
            let scale = T::from(layer.scale).unwrap();
            for c in 0..layer.out_dim {
                h[c] = next[c] * scale;
            }
            width = layer.out_dim;
            so += layer.n_off * layer.out_dim;
        }
        out.copy_from_slice(&h[..width]);
    }

    pub fn head<T: Float>(&self, p: &[T], tf: &[T; TIME_FEATURES], x: &[u8], out: &mut [T]) {
        let hd = self.head_dim();
        let mut sig = vec![T::zero(); self.scratch_len()];
        let mut zs = vec![Vec::with_capacity(self.channels + TIME_FEATURES); self.layers.len()];
        let mut table0 = Vec::new();
        self.layer0_table(p, tf, &mut table0);
        for j in 0..self.d {
            self.column(p, tf, &table0, x, j, &mut sig, &mut zs, &mut out[j * hd..(j + 1) * hd]);
        }
    }

    pub fn head_backward(&self, p: &[f64], tf: &[f64; TIME_FEATURES], x: &[u8], dh: &[f64], grad: &mut [f64]) {
        let hd = self.head_dim();
        let mut sig = vec![0.0; self.scratch_len()];
        let mut zs = vec![Vec::with_capacity(self.channels + TIME_FEATURES); self.layers.len()];
        let mut h = vec![0.0; hd];
        let mut dz = vec![0.0; self.channels + TIME_FEATURES];
        let mut dout = vec![0.0; self.channels.max(hd)];
        let mut table0 = Vec::new();
        self.layer0_table(p, tf, &mut table0);
        for j in 0..self.d {
            let dhj = &dh[j * hd..(j + 1) * hd];
            if dhj.iter().all(|&v| v == 0.0) {
                continue;
            }
            self.column(p, tf, &table0, x, j, &mut sig, &mut zs, &mut h);
            dout[..hd].copy_from_slice(dhj);
            let mut so = self.scratch_len();
            for (l, layer) in self.layers.iter().enumerate().rev() {
                so -= layer.n_off * layer.out_dim;
                let z = &zs[l];
                dz[..layer.in_dim].iter_mut().for_each(|v| *v = 0.0);
                let nbr = &layer.nbr[j * layer.n_off..(j + 1) * layer.n_off];
                for (o, &s) in nbr.iter().enumerate() {
                    let base = (o * self.n + x[s] as usize) * layer.out_dim;
                    for c in 0..layer.out_dim {
                        let dw = layer.scale * dout[c];
                        if dw == 0.0 {
                            continue;
                        }
                        grad[layer.c + base + c] += dw;
                        let sg = sig[so + o * layer.out_dim + c];
                        let du = dw * (1.0 - sg * sg);
                        grad[layer.b + base + c] += du;
                        let ao = layer.a + (base + c) * layer.in_dim;
                        for f in 0..layer.in_dim {
                            grad[ao + f] += du * z[f];
                            dz[f] += du * p[ao + f];
                        }
                    }
                }
                if l > 0 {
                    dout[..self.channels].copy_from_slice(&dz[..self.channels]);
                }
            }
        }
    }
}
