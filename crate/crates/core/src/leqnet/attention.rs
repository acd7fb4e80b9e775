//! Locally equivariant multi-head attention. Site `j` attends to every `s != j`;
//! queries read only the positional and time embeddings, so nothing at site
//! `j` depends on `x_j`.

use num_traits::Float;
use rand::Rng;

use super::layout::Layout;
use super::TIME_FEATURES;

#[derive(Clone, Debug)]
pub(crate) struct Lea {
    d: usize,
    heads: usize,
    hd: usize,
    e: usize,
    tok: usize,
    pos: usize,
    time: usize,
    wq: usize,
    wk: usize,
    wv: usize,
}

struct Forward<T> {
    /// Key/value inputs `f_s`, `d x E`.
    f: Vec<T>,
    /// Query inputs `g_j`, `d x E`.
    g: Vec<T>,
    /// Per head: `q, k, v` (`d x hd` each) and attention rows (`d x d`, zero diagonal).
    q: Vec<Vec<T>>,
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    a: Vec<Vec<T>>,
}

impl Lea {
    pub fn new(d: usize, n: usize, heads: usize, hd: usize, e: usize, layout: &mut Layout) -> Self {
        let tok = layout.push("token_embed", &[n, e]);
        let pos = layout.push("pos_embed", &[d, e]);
        let time = layout.push("time_proj", &[TIME_FEATURES, e]);
        let wq = layout.push("wq", &[heads, hd, e]);
        let wk = layout.push("wk", &[heads, hd, e]);
        let wv = layout.push("wv", &[heads, hd, e]);
        Self {
            d,
            heads,
            hd,
            e,
            tok,
            pos,
            time,
            wq,
            wk,
            wv,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.heads * self.hd
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        for v in &mut p[self.tok..self.wq] {
            *v = rng.gen_range(-1.0..1.0);
        }
        let s = 1.0 / (self.e as f64).sqrt();
        for v in &mut p[self.wq..self.wv + self.heads * self.hd * self.e] {
            *v = rng.gen_range(-s..s);
        }
    }

    fn forward<T: Float>(&self, p: &[T], tf: &[T; TIME_FEATURES], x: &[u8]) -> Forward<T> {
        let (d, e, hd) = (self.d, self.e, self.hd);
        let mut tproj = vec![T::zero(); e];
        for (f, &tv) in tf.iter().enumerate() {
            for c in 0..e {
                tproj[c] = tproj[c] + p[self.time + f * e + c] * tv;
            }
        }
        let mut g = vec![T::zero(); d * e];
        let mut fs = vec![T::zero(); d * e];
        for s in 0..d {
            let tok = x[s] as usize;
            for c in 0..e {
                let base = p[self.pos + s * e + c] + tproj[c];
                g[s * e + c] = base;
                fs[s * e + c] = base + p[self.tok + tok * e + c];
            }
        }
        let scale = T::one() / T::from(hd).unwrap().sqrt();
        let mut out = Forward {
            f: fs,
            g,
            q: Vec::with_capacity(self.heads),
            k: Vec::with_capacity(self.heads),
            v: Vec::with_capacity(self.heads),
            a: Vec::with_capacity(self.heads),
        };
        for h in 0..self.heads {
            let q = project(p, self.wq + h * hd * e, &out.g, d, hd, e);
            let k = project(p, self.wk + h * hd * e, &out.f, d, hd, e);
            let v = project(p, self.wv + h * hd * e, &out.f, d, hd, e);
            let mut a = vec![T::zero(); d * d];
            for j in 0..d {
                let row = &mut a[j * d..(j + 1) * d];
                let mut max = T::neg_infinity();
                for s in 0..d {
                    if s != j {
                        let mut l = T::zero();
                        for c in 0..hd {
                            l = l + k[s * hd + c] * q[j * hd + c];
                        }
                        row[s] = l * scale;
                        max = max.max(row[s]);
                    }
                }
                let mut total = T::zero();
                for s in 0..d {
                    if s != j {
                        row[s] = (row[s] - max).exp();
                        total = total + row[s];
                    }
                }
                for s in 0..d {
                    if s != j {
                        row[s] = row[s] / total;
                    }
                }
            }
            out.q.push(q);
            out.k.push(k);
            out.v.push(v);
            out.a.push(a);
        }
        out
    }

    /// `H[j, h * hd + c] = sum_{s != j} a_h[j, s] v_h[s, c]`.
    pub fn head<T: Float>(&self, p: &[T], tf: &[T; TIME_FEATURES], x: &[u8], out: &mut [T]) {
        let fw = self.forward(p, tf, x);
        self.contract(&fw, out);
    }

    fn contract<T: Float>(&self, fw: &Forward<T>, out: &mut [T]) {
        let (d, hd, w) = (self.d, self.hd, self.head_dim());
        out.iter_mut().for_each(|v| *v = T::zero());
        for h in 0..self.heads {
            for j in 0..d {
                for s in 0..d {
                    let a = fw.a[h][j * d + s];
                    if s == j || a == T::zero() {
                        continue;
                    }
                    for c in 0..hd {
                        let o = j * w + h * hd + c;
                        out[o] = out[o] + a * fw.v[h][s * hd + c];
                    }
                }
            }
        }
    }

    /// Attention-row normalization check used by tests: rows sum to one over `s != j`.
    #[cfg(test)]
    pub fn attention_rows(&self, p: &[f64], tf: &[f64; TIME_FEATURES], x: &[u8]) -> Vec<Vec<f64>> {
        self.forward(p, tf, x).a
    }

    pub fn head_backward(&self, p: &[f64], tf: &[f64; TIME_FEATURES], x: &[u8], dh: &[f64], grad: &mut [f64]) {
        let (d, e, hd, w) = (self.d, self.e, self.hd, self.head_dim());
        let fw = self.forward(p, tf, x);
        let scale = 1.0 / (hd as f64).sqrt();
        let mut df = vec![0.0; d * e];
        let mut dg = vec![0.0; d * e];
        let mut dq = vec![0.0; d * hd];
        let mut dk = vec![0.0; d * hd];
        let mut dv = vec![0.0; d * hd];
        let mut da = vec![0.0; d];
        for h in 0..self.heads {
            dq.iter_mut().for_each(|v| *v = 0.0);
            dk.iter_mut().for_each(|v| *v = 0.0);
            dv.iter_mut().for_each(|v| *v = 0.0);
            let (q, k, v, a) = (&fw.q[h], &fw.k[h], &fw.v[h], &fw.a[h]);
            for j in 0..d {
                let dout = &dh[j * w + h * hd..j * w + (h + 1) * hd];
                let mut mean = 0.0;
                for s in 0..d {
                    if s == j {
                        da[s] = 0.0;
                        continue;
                    }
                    let ajs = a[j * d + s];
                    let mut acc = 0.0;
                    for c in 0..hd {
                        acc += dout[c] * v[s * hd + c];
                        dv[s * hd + c] += ajs * dout[c];
                    }
                    da[s] = acc;
                    mean += ajs * acc;
                }
                for s in 0..d {
                    if s == j {
                        continue;
                    }
                    let dl = a[j * d + s] * (da[s] - mean) * scale;
                    if dl == 0.0 {
                        continue;
                    }
                    for c in 0..hd {
                        dq[j * hd + c] += dl * k[s * hd + c];
                        dk[s * hd + c] += dl * q[j * hd + c];
                    }
                }
            }
            project_backward(p, self.wq + h * hd * e, &fw.g, &dq, d, hd, e, grad, &mut dg);
            project_backward(p, self.wk + h * hd * e, &fw.f, &dk, d, hd, e, grad, &mut df);
            project_backward(p, self.wv + h * hd * e, &fw.f, &dv, d, hd, e, grad, &mut df);
        }
        let mut dtproj = vec![0.0; e];
        for s in 0..d {
            let tok = x[s] as usize;
            for c in 0..e {
                grad[self.tok + tok * e + c] += df[s * e + c];
                grad[self.pos + s * e + c] += df[s * e + c] + dg[s * e + c];
                dtproj[c] += df[s * e + c] + dg[s * e + c];
            }
        }
        for (f, &tv) in tf.iter().enumerate() {
            for c in 0..e {
                grad[self.time + f * e + c] += tv * dtproj[c];
            }
        }
    }
}

/// `out[s, c] = sum_e W[c, e] inp[s, e]` with `W` at `p[off..]`, shape `hd x e`.
fn project<T: Float>(p: &[T], off: usize, inp: &[T], d: usize, hd: usize, e: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d * hd];
    for s in 0..d {
        let row = &inp[s * e..(s + 1) * e];
        for c in 0..hd {
            let wrow = &p[off + c * e..off + (c + 1) * e];
            let mut acc = T::zero();
            for (a, b) in wrow.iter().zip(row) {
                acc = acc + *a * *b;
            }
            out[s * hd + c] = acc;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn project_backward(p: &[f64], off: usize, inp: &[f64], dout: &[f64], d: usize, hd: usize, e: usize, grad: &mut [f64], dinp: &mut [f64]) {
    for s in 0..d {
        for c in 0..hd {
            let g = dout[s * hd + c];
            if g == 0.0 {
                continue;
            }
            let wo = off + c * e;
            for m in 0..e {
                grad[wo + m] += g * inp[s * e + m];
                dinp[s * e + m] += g * p[wo + m];
            }
        }
    }
}
