//! Selective state-space scan with a diagonal, input-dependent recurrence.
//!
//! For each step `t` with input row `x_t` (D channels):
//!
//! ```text
//! dt_t = softplus(W_dt x_t + b_dt)            (D)
//! B_t  = W_B x_t,   C_t = W_C x_t             (S)
//! h_t[d,s] = exp(dt_t[d] A[d,s]) h_{t-1}[d,s] + dt_t[d] B_t[s] x_t[d]
//! y_t[d]   = sum_s C_t[s] h_t[d,s] + D_skip[d] x_t[d]
//! ```
//!
//! with `A = -exp(A_log)` and `h_0 = 0`. The transition uses a zero-order
//! hold, the input an Euler step. A backward scan runs the same recurrence
//! over the reversed sequence and reverses the result.

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{join_path, Mat, Params, Tensor};

pub const DEFAULT_STATE_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Learnable parameters of one scan over `d` channels with `s` states each.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanParams {
    /// `[d, s]`; the decay rates are `-exp(a_log)`.
    pub a_log: Tensor,
    /// `[s, d]`
    pub w_b: Tensor,
    /// `[s, d]`
    pub w_c: Tensor,
    /// `[d, d]`
    pub w_dt: Tensor,
    /// `[d]`
    pub b_dt: Tensor,
    /// `[d]`
    pub d_skip: Tensor,
}

#[inline]
pub fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl ScanParams {
    pub fn zeros(d: usize, s: usize) -> Self {
        ScanParams {
            a_log: Tensor::zeros(&[d, s]),
            w_b: Tensor::zeros(&[s, d]),
            w_c: Tensor::zeros(&[s, d]),
            w_dt: Tensor::zeros(&[d, d]),
            b_dt: Tensor::zeros(&[d]),
            d_skip: Tensor::zeros(&[d]),
        }
    }

    /// `A_log[d, s] = ln(s + 1)`, linear maps uniform in `+-1/sqrt(d)`,
    /// `softplus(b_dt)` log-uniform in `[1e-3, 1e-1]`, `D_skip = 1`.
    pub fn init(d: usize, s: usize, rng: &mut impl Rng) -> Self {
        let mut p = ScanParams::zeros(d, s);
        for di in 0..d {
            for si in 0..s {
                p.a_log.data[di * s + si] = ((si + 1) as f64).ln();
            }
        }
        let bound = (1.0 / d as f64).sqrt();
        for t in [&mut p.w_b, &mut p.w_c, &mut p.w_dt] {
            for v in &mut t.data {
                *v = rng.random_range(-bound..bound);
            }
        }
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        for v in &mut p.b_dt.data {
            let dt = rng.random_range(lo..hi).exp();
            // inverse softplus
            *v = dt + (-(-dt).exp_m1()).ln();
        }
        p.d_skip.data.fill(1.0);
        p
    }

    pub fn channels(&self) -> usize {
        self.a_log.shape[0]
    }

    pub fn state_size(&self) -> usize {
        self.a_log.shape[1]
    }

    pub fn zeros_like(&self) -> Self {
        ScanParams::zeros(self.channels(), self.state_size())
    }

    fn check(&self) -> Result<()> {
        let (d, s) = (self.channels(), self.state_size());
        let shapes = [
            (&self.w_b, vec![s, d], "w_b"),
            (&self.w_c, vec![s, d], "w_c"),
            (&self.w_dt, vec![d, d], "w_dt"),
            (&self.b_dt, vec![d], "b_dt"),
            (&self.d_skip, vec![d], "d_skip"),
        ];
        for (t, want, name) in shapes {
            if t.shape != want {
                return Err(Error::Shape(format!(
                    "scan {name} has shape {:?}, want {want:?}",
                    t.shape
                )));
            }
        }
        let mut bad = None;
        self.visit("scan", &mut |name, t| {
            if bad.is_none() && !t.is_finite() {
                bad = Some(name);
            }
        });
        match bad {
            Some(name) => Err(Error::NonFinite(name)),
            None => Ok(()),
        }
    }

    /// Decay rates `A = -exp(A_log)`.
    pub fn decay(&self) -> Vec<f64> {
        self.a_log.data.iter().map(|v| -v.exp()).collect()
    }

    pub fn add_scaled(&mut self, other: &ScanParams, k: f64) {
        let mut others = Vec::new();
        other.visit("", &mut |_, t| others.push(t));
        let mut i = 0;
        self.visit_mut("", &mut |_, t| {
            for (a, b) in t.data.iter_mut().zip(&others[i].data) {
                *a += k * b;
            }
            i += 1;
        });
    }
}

impl Params for ScanParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join_path(prefix, "a_log"), &self.a_log);
        f(join_path(prefix, "w_b"), &self.w_b);
        f(join_path(prefix, "w_c"), &self.w_c);
        f(join_path(prefix, "w_dt"), &self.w_dt);
        f(join_path(prefix, "b_dt"), &self.b_dt);
        f(join_path(prefix, "d_skip"), &self.d_skip);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join_path(prefix, "a_log"), &mut self.a_log);
        f(join_path(prefix, "w_b"), &mut self.w_b);
        f(join_path(prefix, "w_c"), &mut self.w_c);
        f(join_path(prefix, "w_dt"), &mut self.w_dt);
        f(join_path(prefix, "b_dt"), &mut self.b_dt);
        f(join_path(prefix, "d_skip"), &mut self.d_skip);
    }
}

fn check_input(x: &Mat, params: &ScanParams) -> Result<()> {
    params.check()?;
    if x.rows == 0 {
        return Err(Error::Empty("scan over an empty sequence"));
    }
    if x.cols != params.channels() {
        return Err(Error::Shape(format!(
            "scan input has {} channels, params expect {}",
            x.cols,
            params.channels()
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("scan input".into()));
    }
    Ok(())
}

/// Forward recurrence over `len` rows of width `d`, generic over the float
/// type so a single-precision inference path shares the arithmetic.
fn scan_rows<F: Float>(
    x: &[F],
    len: usize,
    d: usize,
    s: usize,
    p: &ParamsAs<F>,
    reverse: bool,
) -> Vec<F> {
    let mut y = vec![F::zero(); len * d];
    let mut h = vec![F::zero(); d * s];
    let mut dt = vec![F::zero(); d];
    let mut b = vec![F::zero(); s];
    let mut c = vec![F::zero(); s];
    for step in 0..len {
        let t = if reverse { len - 1 - step } else { step };
        let xt = &x[t * d..(t + 1) * d];
        for di in 0..d {
            let row = &p.w_dt[di * d..(di + 1) * d];
            let pre = row
                .iter()
                .zip(xt)
                .fold(p.b_dt[di], |acc, (&w, &v)| acc + w * v);
            // softplus, stable for both signs
            dt[di] = pre.max(F::zero()) + (-pre.abs()).exp().ln_1p();
        }
        for si in 0..s {
            let rb = &p.w_b[si * d..(si + 1) * d];
            let rc = &p.w_c[si * d..(si + 1) * d];
            b[si] = rb
                .iter()
                .zip(xt)
                .fold(F::zero(), |acc, (&w, &v)| acc + w * v);
            c[si] = rc
                .iter()
                .zip(xt)
                .fold(F::zero(), |acc, (&w, &v)| acc + w * v);
        }
        let yt = &mut y[t * d..(t + 1) * d];
        for di in 0..d {
            let hs = &mut h[di * s..(di + 1) * s];
            let a = &p.a[di * s..(di + 1) * s];
            let drive = dt[di] * xt[di];
            let mut acc = p.d_skip[di] * xt[di];
            for si in 0..s {
                hs[si] = (dt[di] * a[si]).exp() * hs[si] + drive * b[si];
                acc = acc + c[si] * hs[si];
            }
            yt[di] = acc;
        }
    }
    y
}

struct ParamsAs<F> {
    a: Vec<F>,
    w_b: Vec<F>,
    w_c: Vec<F>,
    w_dt: Vec<F>,
    b_dt: Vec<F>,
    d_skip: Vec<F>,
}

impl<F: Float> ParamsAs<F> {
    fn new(p: &ScanParams) -> Self {
        let cast = |v: &[f64]| v.iter().map(|&x| F::from(x).unwrap()).collect::<Vec<F>>();
        ParamsAs {
            a: cast(&p.decay()),
            w_b: cast(&p.w_b.data),
            w_c: cast(&p.w_c.data),
            w_dt: cast(&p.w_dt.data),
            b_dt: cast(&p.b_dt.data),
            d_skip: cast(&p.d_skip.data),
        }
    }
}

/// Runs the scan over `x` (`L x D`) in the given direction.
pub fn selective_scan(x: &Mat, params: &ScanParams, direction: Direction) -> Result<Mat> {
    check_input(x, params)?;
    let (d, s) = (params.channels(), params.state_size());
    let y = scan_rows(
        &x.data,
        x.rows,
        d,
        s,
        &ParamsAs::<f64>::new(params),
        direction == Direction::Backward,
    );
    Mat::from_vec(x.rows, d, y)
}

/// Single-precision scan for inference. `x` is row-major `len x D`.
pub fn selective_scan_f32(
    x: &[f32],
    len: usize,
    params: &ScanParams,
    direction: Direction,
) -> Result<Vec<f32>> {
    params.check()?;
    let d = params.channels();
    if len == 0 || x.len() != len * d {
        return Err(Error::Shape(format!(
            "f32 scan got {} values for {len} rows of {d}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scan input".into()));
    }
    Ok(scan_rows(
        x,
        len,
        d,
        params.state_size(),
        &ParamsAs::<f32>::new(params),
        direction == Direction::Backward,
    ))
}

/// Everything the adjoint needs from a forward pass, stored in scan order.
#[derive(Debug, Clone)]
pub struct ScanCache {
    direction: Direction,
    /// Inputs in scan order.
    x: Mat,
    pre: Vec<f64>,
    dt: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    decay_factor: Vec<f64>,
    h: Vec<f64>,
}

/// Forward scan that also records the intermediates for [`scan_backward`].
pub fn scan_forward_cached(
    x: &Mat,
    params: &ScanParams,
    direction: Direction,
) -> Result<(Mat, ScanCache)> {
    check_input(x, params)?;
    let (len, d, s) = (x.rows, params.channels(), params.state_size());
    let xs = match direction {
        Direction::Forward => x.clone(),
        Direction::Backward => x.reversed(),
    };
    let a = params.decay();
    let (w_b, w_c, w_dt) = (&params.w_b.data, &params.w_c.data, &params.w_dt.data);
    let mut cache = ScanCache {
        direction,
        x: xs,
        pre: vec![0.0; len * d],
        dt: vec![0.0; len * d],
        b: vec![0.0; len * s],
        c: vec![0.0; len * s],
        decay_factor: vec![0.0; len * d * s],
        h: vec![0.0; len * d * s],
    };
    let mut y = Mat::zeros(len, d);
    for t in 0..len {
        let xt = cache.x.row(t);
        for di in 0..d {
            let pre = params.b_dt.data[di]
                + w_dt[di * d..(di + 1) * d]
                    .iter()
                    .zip(xt)
                    .map(|(w, v)| w * v)
                    .sum::<f64>();
            cache.pre[t * d + di] = pre;
            cache.dt[t * d + di] = softplus(pre);
        }
        for si in 0..s {
            cache.b[t * s + si] = w_b[si * d..(si + 1) * d]
                .iter()
                .zip(xt)
                .map(|(w, v)| w * v)
                .sum();
            cache.c[t * s + si] = w_c[si * d..(si + 1) * d]
                .iter()
                .zip(xt)
                .map(|(w, v)| w * v)
                .sum();
        }
        let yt = y.row_mut(t);
        for di in 0..d {
            let dt = cache.dt[t * d + di];
            let drive = dt * xt[di];
            let mut acc = params.d_skip.data[di] * xt[di];
            for si in 0..s {
                let k = di * s + si;
                let prev = if t == 0 {
                    0.0
                } else {
                    cache.h[(t - 1) * d * s + k]
                };
                let f = (dt * a[k]).exp();
                let h = f * prev + drive * cache.b[t * s + si];
                cache.decay_factor[t * d * s + k] = f;
                cache.h[t * d * s + k] = h;
                acc += cache.c[t * s + si] * h;
            }
            yt[di] = acc;
        }
    }
    let y = match direction {
        Direction::Forward => y,
        Direction::Backward => y.reversed(),
    };
    Ok((y, cache))
}

/// Reverse-mode adjoint of [`scan_forward_cached`]. Accumulates parameter
/// gradients into `grads` and returns the input gradient.
pub fn scan_backward(
    cache: &ScanCache,
    params: &ScanParams,
    upstream: &Mat,
    grads: &mut ScanParams,
) -> Result<Mat> {
    let (len, d, s) = (cache.x.rows, params.channels(), params.state_size());
    if upstream.rows != len || upstream.cols != d {
        return Err(Error::Shape(format!(
            "scan upstream is {}x{}, forward was {len}x{d}",
            upstream.rows, upstream.cols
        )));
    }
    let up = match cache.direction {
        Direction::Forward => upstream.clone(),
        Direction::Backward => upstream.reversed(),
    };
    let a = params.decay();
    let mut dx = Mat::zeros(len, d);
    let mut dh = vec![0.0; d * s];
    let mut d_a = vec![0.0; d * s];
    let mut db = vec![0.0; s];
    let mut dc = vec![0.0; s];
    let mut ddt = vec![0.0; d];

    for t in (0..len).rev() {
        let xt = cache.x.row(t);
        let gy = up.row(t);
        let bt = &cache.b[t * s..(t + 1) * s];
        let ct = &cache.c[t * s..(t + 1) * s];
        let ht = &cache.h[t * d * s..(t + 1) * d * s];
        let ft = &cache.decay_factor[t * d * s..(t + 1) * d * s];
        db.fill(0.0);
        dc.fill(0.0);
        ddt.fill(0.0);
        {
            let dxt = dx.row_mut(t);
            for di in 0..d {
                dxt[di] += gy[di] * params.d_skip.data[di];
                grads.d_skip.data[di] += gy[di] * xt[di];
                let dt = cache.dt[t * d + di];
                for si in 0..s {
                    let k = di * s + si;
                    dc[si] += gy[di] * ht[k];
                    let g = dh[k] + gy[di] * ct[si];
                    let prev = if t == 0 {
                        0.0
                    } else {
                        cache.h[(t - 1) * d * s + k]
                    };
                    let f = ft[k];
                    ddt[di] += g * (prev * f * a[k] + bt[si] * xt[di]);
                    d_a[k] += g * prev * f * dt;
                    db[si] += g * dt * xt[di];
                    dxt[di] += g * dt * bt[si];
                    dh[k] = g * f;
                }
            }
        }
        let dxt = dx.row_mut(t);
        for si in 0..s {
            let (gb, gc) = (db[si], dc[si]);
            let rb = &params.w_b.data[si * d..(si + 1) * d];
            let rc = &params.w_c.data[si * d..(si + 1) * d];
            for j in 0..d {
                grads.w_b.data[si * d + j] += gb * xt[j];
                grads.w_c.data[si * d + j] += gc * xt[j];
                dxt[j] += rb[j] * gb + rc[j] * gc;
            }
        }
        for di in 0..d {
            let dpre = ddt[di] * sigmoid(cache.pre[t * d + di]);
            grads.b_dt.data[di] += dpre;
            let row = &params.w_dt.data[di * d..(di + 1) * d];
            for j in 0..d {
                grads.w_dt.data[di * d + j] += dpre * xt[j];
                dxt[j] += row[j] * dpre;
            }
        }
    }
    for (k, g) in d_a.iter().enumerate() {
        grads.a_log.data[k] += g * a[k];
    }
    Ok(match cache.direction {
        Direction::Forward => dx,
        Direction::Backward => dx.reversed(),
    })
}

/// Gradients of `<upstream, selective_scan(x)>` with respect to `x` and the
/// parameters.
pub fn scan_vjp(
    x: &Mat,
    params: &ScanParams,
    direction: Direction,
    upstream: &Mat,
) -> Result<(Mat, ScanParams)> {
    if upstream.rows != x.rows || upstream.cols != x.cols {
        return Err(Error::Shape(format!(
            "upstream {}x{} does not match input {}x{}",
            upstream.rows, upstream.cols, x.rows, x.cols
        )));
    }
    let (_, cache) = scan_forward_cached(x, params, direction)?;
    let mut grads = params.zeros_like();
    let dx = scan_backward(&cache, params, upstream, &mut grads)?;
    Ok((dx, grads))
}

/// Multiply-accumulate count of one scan step per channel group, used for
/// throughput estimates.
pub fn macs_per_step(d: usize, s: usize) -> usize {
    d * d + 2 * s * d + 3 * d * s + d
}
