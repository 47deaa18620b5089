//! Minimal dense and GRU layers over a flat parameter vector, with
//! hand-written backward passes. Layers only hold offsets into the vector so
//! a whole model serializes as one `Vec<f64>`.

/// Hands out consecutive parameter ranges.
#[derive(Default)]
pub(crate) struct LayoutBuilder {
    pub len: usize,
}

impl LayoutBuilder {
    pub fn mat(&mut self, rows: usize, cols: usize) -> Mat {
        let m = Mat { off: self.len, rows, cols };
        self.len += rows * cols;
        m
    }

    pub fn vec(&mut self, n: usize) -> usize {
        let off = self.len;
        self.len += n;
        off
    }

    pub fn dense(&mut self, rows: usize, cols: usize) -> Dense {
        let w = self.mat(rows, cols);
        Dense { w, b: self.vec(rows) }
    }
}

/// Row-major `rows x cols` block.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mat {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Mat {
    /// `out += W x`
    pub fn mv_add(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &p[self.off + r * self.cols..self.off + (r + 1) * self.cols];
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates `dW += dout x^T` and, if given, `dx += W^T dout`.
    pub fn backward(&self, p: &[f64], x: &[f64], dout: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        for (r, &d) in dout.iter().enumerate().take(self.rows) {
            if d == 0.0 {
                continue;
            }
            let g = &mut grad[self.off + r * self.cols..self.off + (r + 1) * self.cols];
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += d * xi;
            }
        }
        if let Some(dx) = dx {
            for (r, &d) in dout.iter().enumerate().take(self.rows) {
                if d == 0.0 {
                    continue;
                }
                let row = &p[self.off + r * self.cols..self.off + (r + 1) * self.cols];
                for (dxi, w) in dx.iter_mut().zip(row) {
                    *dxi += d * w;
                }
            }
        }
    }
}

/// `W x + b`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    pub w: Mat,
    pub b: usize,
}

impl Dense {
    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = p[self.b..self.b + self.w.rows].to_vec();
        self.w.mv_add(p, x, &mut out);
        out
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dout: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        for (g, d) in grad[self.b..self.b + self.w.rows].iter_mut().zip(dout) {
            *g += d;
        }
        self.w.backward(p, x, dout, grad, dx);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated recurrent unit:
/// `z = s(Wz x + Uz h + bz)`, `r = s(Wr x + Ur h + br)`,
/// `n = tanh(Wn x + bn + r * (Un h))`, `h' = (1 - z) n + z h`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Gru {
    pub wz: Mat,
    pub wr: Mat,
    pub wn: Mat,
    pub uz: Mat,
    pub ur: Mat,
    pub un: Mat,
    pub bz: usize,
    pub br: usize,
    pub bn: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct GruCache {
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    unh: Vec<f64>,
}

impl Gru {
    pub fn new(b: &mut LayoutBuilder, input: usize, hidden: usize) -> Self {
        Gru {
            wz: b.mat(hidden, input),
            wr: b.mat(hidden, input),
            wn: b.mat(hidden, input),
            uz: b.mat(hidden, hidden),
            ur: b.mat(hidden, hidden),
            un: b.mat(hidden, hidden),
            bz: b.vec(hidden),
            br: b.vec(hidden),
            bn: b.vec(hidden),
        }
    }

    fn hidden(&self) -> usize {
        self.uz.rows
    }

    pub fn step(&self, p: &[f64], x: &[f64], h: &[f64]) -> (Vec<f64>, GruCache) {
        let hd = self.hidden();
        let mut z = p[self.bz..self.bz + hd].to_vec();
        self.wz.mv_add(p, x, &mut z);
        self.uz.mv_add(p, h, &mut z);
        let mut r = p[self.br..self.br + hd].to_vec();
        self.wr.mv_add(p, x, &mut r);
        self.ur.mv_add(p, h, &mut r);
        let mut unh = vec![0.0; hd];
        self.un.mv_add(p, h, &mut unh);
        let mut n = p[self.bn..self.bn + hd].to_vec();
        self.wn.mv_add(p, x, &mut n);
        let mut out = vec![0.0; hd];
        for i in 0..hd {
            z[i] = sigmoid(z[i]);
            r[i] = sigmoid(r[i]);
            n[i] = (n[i] + r[i] * unh[i]).tanh();
            out[i] = (1.0 - z[i]) * n[i] + z[i] * h[i];
        }
        (out, GruCache { z, r, n, unh })
    }

    /// Backpropagates `dh_new` through one step; returns the gradient w.r.t. `h`.
    pub fn backward(&self, p: &[f64], x: &[f64], h: &[f64], c: &GruCache, dh_new: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let hd = self.hidden();
        let mut dh = vec![0.0; hd];
        let (mut daz, mut dar, mut dan, mut dunh) = (vec![0.0; hd], vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]);
        for i in 0..hd {
            let d = dh_new[i];
            dh[i] = d * c.z[i];
            let dz = d * (h[i] - c.n[i]);
            let dn = d * (1.0 - c.z[i]);
            dan[i] = dn * (1.0 - c.n[i] * c.n[i]);
            dunh[i] = dan[i] * c.r[i];
            let dr = dan[i] * c.unh[i];
            dar[i] = dr * c.r[i] * (1.0 - c.r[i]);
            daz[i] = dz * c.z[i] * (1.0 - c.z[i]);
        }
        for (bias, d) in [(self.bz, &daz), (self.br, &dar), (self.bn, &dan)] {
            for (g, v) in grad[bias..bias + hd].iter_mut().zip(d.iter()) {
                *g += v;
            }
        }
        self.wz.backward(p, x, &daz, grad, None);
        self.wr.backward(p, x, &dar, grad, None);
        self.wn.backward(p, x, &dan, grad, None);
        self.uz.backward(p, h, &daz, grad, Some(&mut dh));
        self.ur.backward(p, h, &dar, grad, Some(&mut dh));
        self.un.backward(p, h, &dunh, grad, Some(&mut dh));
        dh
    }
}

/// Softmax over `logits`; entries with `mask[i] == false` get probability 0.
pub(crate) fn softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let ok = |i: usize| mask.is_none_or(|m| m[i]);
    let max = (0..logits.len()).filter(|&i| ok(i)).map(|i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = (0..logits.len()).map(|i| if ok(i) { (logits[i] - max).exp() } else { 0.0 }).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Index of the largest entry; the first one wins ties.
pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Rescales `g` so its L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_global_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_respects_mask() {
        let p = softmax(&[1.0, 5.0, 2.0], Some(&[true, false, true]));
        assert_eq!(p[1], 0.0);
        assert!((p[0] + p[2] - 1.0).abs() < 1e-12);
        assert!(p[2] > p[0]);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let mut g = vec![0.1, 0.0];
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g, vec![0.1, 0.0]);
    }

    #[test]
    fn gru_step_gradient() {
        let mut b = LayoutBuilder::default();
        let gru = Gru::new(&mut b, 3, 2);
        let p: Vec<f64> = (0..b.len).map(|i| ((i * 37 % 11) as f64 - 5.0) / 10.0).collect();
        let x = [0.3, -0.2, 1.0];
        let h = [0.5, -0.4];
        // loss = sum(h')
        let loss = |p: &[f64], h: &[f64]| gru.step(p, &x, h).0.iter().sum::<f64>();
        let (_, c) = gru.step(&p, &x, &h);
        let mut grad = vec![0.0; b.len];
        let dh = gru.backward(&p, &x, &h, &c, &[1.0, 1.0], &mut grad);
        let eps = 1e-6;
        for i in 0..b.len {
            let (mut hi, mut lo) = (p.clone(), p.clone());
            hi[i] += eps;
            lo[i] -= eps;
            let fd = (loss(&hi, &h) - loss(&lo, &h)) / (2.0 * eps);
            assert!((fd - grad[i]).abs() < 1e-8, "param {i}: {fd} vs {}", grad[i]);
        }
        for i in 0..2 {
            let (mut hi, mut lo) = (h, h);
            hi[i] += eps;
            lo[i] -= eps;
            let fd = (loss(&p, &hi) - loss(&p, &lo)) / (2.0 * eps);
            assert!((fd - dh[i]).abs() < 1e-8);
        }
    }
}
