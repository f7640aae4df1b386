//! Pointwise and sequence layers with their reverse-mode adjoints.
//!
//! Every `backward` accumulates parameter gradients into a gradient struct of
//! the same type and returns the gradient with respect to the layer input.

use rand::Rng;

use crate::sscan::sigmoid;
use crate::tensor::{join_path, Mat, Params, Tensor};

pub const LN_EPS: f64 = 1e-5;

fn uniform(t: &mut Tensor, bound: f64, rng: &mut impl Rng) {
    for v in &mut t.data {
        *v = rng.random_range(-bound..bound);
    }
}

/// `y = x W^T + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Tensor::zeros(&[fan_out, fan_in]),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let mut l = Linear::zeros(fan_in, fan_out);
        let bound = (1.0 / fan_in as f64).sqrt();
        uniform(&mut l.w, bound, rng);
        uniform(&mut l.b, bound, rng);
        l
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape[1]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape[0]
    }

    pub fn param_count(fan_in: usize, fan_out: usize) -> usize {
        fan_in * fan_out + fan_out
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let (fi, fo) = (self.fan_in(), self.fan_out());
        assert_eq!(x.cols, fi, "linear expects {fi} inputs, got {}", x.cols);
        let mut y = Mat::zeros(x.rows, fo);
        for r in 0..x.rows {
            let xr = x.row(r);
            let yr = y.row_mut(r);
            for o in 0..fo {
                let w = &self.w.data[o * fi..(o + 1) * fi];
                yr[o] = self.b.data[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        y
    }

    pub fn backward(&self, x: &Mat, dy: &Mat, g: &mut Linear) -> Mat {
        let (fi, fo) = (self.fan_in(), self.fan_out());
        let mut dx = Mat::zeros(x.rows, fi);
        for r in 0..x.rows {
            let xr = x.row(r);
            let dyr = dy.row(r);
            let dxr = dx.row_mut(r);
            for o in 0..fo {
                let go = dyr[o];
                if go == 0.0 {
                    continue;
                }
                g.b.data[o] += go;
                let w = &self.w.data[o * fi..(o + 1) * fi];
                let gw = &mut g.w.data[o * fi..(o + 1) * fi];
                for i in 0..fi {
                    gw[i] += go * xr[i];
                    dxr[i] += go * w[i];
                }
            }
        }
        dx
    }
}

impl Params for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join_path(prefix, "w"), &self.w);
        f(join_path(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join_path(prefix, "w"), &mut self.w);
        f(join_path(prefix, "b"), &mut self.b);
    }
}

/// Depthwise 1D convolution along rows, centered kernel, zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct DwConv1d {
    /// `[channels, kernel]`
    pub w: Tensor,
    pub b: Tensor,
}

impl DwConv1d {
    pub fn zeros(channels: usize, kernel: usize) -> Self {
        DwConv1d {
            w: Tensor::zeros(&[channels, kernel]),
            b: Tensor::zeros(&[channels]),
        }
    }

    pub fn init(channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let mut c = DwConv1d::zeros(channels, kernel);
        let bound = (1.0 / kernel as f64).sqrt();
        uniform(&mut c.w, bound, rng);
        uniform(&mut c.b, bound, rng);
        c
    }

    pub fn param_count(channels: usize, kernel: usize) -> usize {
        channels * kernel + channels
    }

    fn kernel(&self) -> usize {
        self.w.shape[1]
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let (c, k) = (x.cols, self.kernel());
        assert_eq!(c, self.w.shape[0], "conv channel mismatch");
        let half = (k / 2) as isize;
        let n = x.rows as isize;
        let mut y = Mat::zeros(x.rows, c);
        for t in 0..n {
            let yr = y.row_mut(t as usize);
            yr.copy_from_slice(&self.b.data);
            for j in 0..k {
                let src = t + j as isize - half;
                if src < 0 || src >= n {
                    continue;
                }
                let xr = x.row(src as usize);
                for ch in 0..c {
                    yr[ch] += self.w.data[ch * k + j] * xr[ch];
                }
            }
        }
        y
    }

    pub fn backward(&self, x: &Mat, dy: &Mat, g: &mut DwConv1d) -> Mat {
        let (c, k) = (x.cols, self.kernel());
        let half = (k / 2) as isize;
        let n = x.rows as isize;
        let mut dx = Mat::zeros(x.rows, c);
        for t in 0..n {
            let dyr = dy.row(t as usize);
            for ch in 0..c {
                g.b.data[ch] += dyr[ch];
            }
            for j in 0..k {
                let src = t + j as isize - half;
                if src < 0 || src >= n {
                    continue;
                }
                let xr = x.row(src as usize);
                let dxr = dx.row_mut(src as usize);
                for ch in 0..c {
                    g.w.data[ch * k + j] += dyr[ch] * xr[ch];
                    dxr[ch] += dyr[ch] * self.w.data[ch * k + j];
                }
            }
        }
        dx
    }
}

impl Params for DwConv1d {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join_path(prefix, "w"), &self.w);
        f(join_path(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join_path(prefix, "w"), &mut self.w);
        f(join_path(prefix, "b"), &mut self.b);
    }
}

/// Layer normalization over the channels of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Debug, Clone)]
pub struct LnCache {
    xhat: Mat,
    rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(channels: usize) -> Self {
        LayerNorm {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        LayerNorm {
            gamma: Tensor::zeros(&[channels]),
            beta: Tensor::zeros(&[channels]),
        }
    }

    pub fn param_count(channels: usize) -> usize {
        2 * channels
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LnCache) {
        let c = x.cols;
        let mut y = Mat::zeros(x.rows, c);
        let mut xhat = Mat::zeros(x.rows, c);
        let mut rstd = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let xr = x.row(r);
            let mean = xr.iter().sum::<f64>() / c as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(rs);
            let hr = xhat.row_mut(r);
            for ch in 0..c {
                hr[ch] = (xr[ch] - mean) * rs;
            }
            let yr = y.row_mut(r);
            for ch in 0..c {
                yr[ch] = hr[ch] * self.gamma.data[ch] + self.beta.data[ch];
            }
        }
        (y, LnCache { xhat, rstd })
    }

    pub fn backward(&self, cache: &LnCache, dy: &Mat, g: &mut LayerNorm) -> Mat {
        let c = dy.cols;
        let mut dx = Mat::zeros(dy.rows, c);
        let mut dxhat = vec![0.0; c];
        for r in 0..dy.rows {
            let dyr = dy.row(r);
            let hr = cache.xhat.row(r);
            for ch in 0..c {
                g.gamma.data[ch] += dyr[ch] * hr[ch];
                g.beta.data[ch] += dyr[ch];
                dxhat[ch] = dyr[ch] * self.gamma.data[ch];
            }
            let m1 = dxhat.iter().sum::<f64>() / c as f64;
            let m2 = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
            let dxr = dx.row_mut(r);
            for ch in 0..c {
                dxr[ch] = cache.rstd[r] * (dxhat[ch] - m1 - hr[ch] * m2);
            }
        }
        dx
    }
}

impl Params for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join_path(prefix, "gamma"), &self.gamma);
        f(join_path(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join_path(prefix, "gamma"), &mut self.gamma);
        f(join_path(prefix, "beta"), &mut self.beta);
    }
}

pub fn silu(x: &Mat) -> Mat {
    Mat {
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().map(|&v| v * sigmoid(v)).collect(),
    }
}

/// Adjoint of [`silu`] given its input.
pub fn silu_backward(x: &Mat, dy: &Mat) -> Mat {
    Mat {
        rows: x.rows,
        cols: x.cols,
        data: x
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &g)| {
                let s = sigmoid(v);
                g * s * (1.0 + v * (1.0 - s))
            })
            .collect(),
    }
}

/// Two-row lookup table indexed by polarity (row 0 = OFF, row 1 = ON).
#[derive(Debug, Clone, PartialEq)]
pub struct PolarityEmbedding {
    pub table: Tensor,
}

impl PolarityEmbedding {
    pub fn zeros(dim: usize) -> Self {
        PolarityEmbedding {
            table: Tensor::zeros(&[2, dim]),
        }
    }

    pub fn init(dim: usize, rng: &mut impl Rng) -> Self {
        let mut e = PolarityEmbedding::zeros(dim);
        uniform(&mut e.table, 1.0, rng);
        e
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }

    pub fn dim(&self) -> usize {
        self.table.shape[1]
    }

    pub fn row(&self, p: i8) -> &[f64] {
        let d = self.dim();
        let r = usize::from(p > 0);
        &self.table.data[r * d..(r + 1) * d]
    }

    pub fn accumulate(&self, p: i8, grad: &[f64], g: &mut PolarityEmbedding) {
        let d = self.dim();
        let r = usize::from(p > 0);
        for (a, b) in g.table.data[r * d..(r + 1) * d].iter_mut().zip(grad) {
            *a += b;
        }
    }
}

impl Params for PolarityEmbedding {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join_path(prefix, "table"), &self.table);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join_path(prefix, "table"), &mut self.table);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn dot(a: &Mat, b: &Mat) -> f64 {
        a.data.iter().zip(&b.data).map(|(p, q)| p * q).sum()
    }

    /// Central-difference check of `<f(x), up>` against an analytic input
    /// gradient.
    fn check_input_grad(x: &Mat, up: &Mat, f: impl Fn(&Mat) -> Mat, dx: &Mat) {
        let h = 1e-5;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data[i] += h;
            xm.data[i] -= h;
            let fd = (dot(&f(&xp), up) - dot(&f(&xm), up)) / (2.0 * h);
            assert!(
                (fd - dx.data[i]).abs() < 1e-7 * fd.abs().max(1.0),
                "{i}: {fd} vs {}",
                dx.data[i]
            );
        }
    }

    #[test]
    fn linear_param_count() {
        assert_eq!(Linear::param_count(8, 2), 18);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(Linear::init(8, 2, &mut rng).num_params(), 18);
        assert_eq!(PolarityEmbedding::init(4, &mut rng).num_params(), 8);
    }

    #[test]
    fn linear_forward_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::init(3, 4, &mut rng);
        let x = random_mat(5, 3, &mut rng);
        let up = random_mat(5, 4, &mut rng);
        let mut g = Linear::zeros(3, 4);
        let dx = l.backward(&x, &up, &mut g);
        check_input_grad(&x, &up, |x| l.forward(x), &dx);
        // bias gradient is the column sum of upstream
        for o in 0..4 {
            let s: f64 = (0..5).map(|r| up.get(r, o)).sum();
            assert!((g.b.data[o] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_zero_padding_and_adjoint() {
        let mut c = DwConv1d::zeros(1, 3);
        c.w.data.copy_from_slice(&[1.0, 10.0, 100.0]);
        let x = Mat::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        // y_t = x_{t-1} + 10 x_t + 100 x_{t+1}
        assert_eq!(c.forward(&x).data, vec![210.0, 321.0, 32.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = DwConv1d::init(4, 3, &mut rng);
        let x = random_mat(7, 4, &mut rng);
        let up = random_mat(7, 4, &mut rng);
        let mut g = DwConv1d::zeros(4, 3);
        let dx = c.backward(&x, &up, &mut g);
        check_input_grad(&x, &up, |x| c.forward(x), &dx);
    }

    #[test]
    fn layer_norm_normalizes_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ln = LayerNorm::new(6);
        let x = random_mat(4, 6, &mut rng);
        let (y, _) = ln.forward(&x);
        for r in 0..4 {
            let m: f64 = y.row(r).iter().sum::<f64>() / 6.0;
            assert!(m.abs() < 1e-12);
        }
        for v in &mut ln.gamma.data {
            *v = rng.random_range(0.5..1.5);
        }
        let up = random_mat(4, 6, &mut rng);
        let (_, cache) = ln.forward(&x);
        let mut g = LayerNorm::zeros(6);
        let dx = ln.backward(&cache, &up, &mut g);
        check_input_grad(&x, &up, |x| ln.forward(x).0, &dx);
    }

    #[test]
    fn silu_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Mat::from_fn(3, 3, |_, _| rng.random_range(-4.0..4.0));
        let up = random_mat(3, 3, &mut rng);
        let dx = silu_backward(&x, &up);
        check_input_grad(&x, &up, silu, &dx);
    }
}
