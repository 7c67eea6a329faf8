//! Stacked LSTM with a linear head, forward and backward passes.
//!
//! Sequences are stored time-major: row `t * batch + b` holds step `t` of
//! sequence `b`. Input projections for all steps are one matrix product;
//! only the recurrent product runs per step.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate order in the 4H blocks: input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Array2<f64>,
    /// Activated gates.
    gates: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    pub h: Array2<f64>,
    steps: usize,
    batch: usize,
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            wx: Array2::zeros((input, 4 * hidden)),
            wh: Array2::zeros((hidden, 4 * hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    /// Uniform(-1/sqrt(H), 1/sqrt(H)) weights; forget-gate bias shifted by 1.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut l = Self::zeros(input, hidden);
        for v in l.wx.iter_mut().chain(l.wh.iter_mut()).chain(l.b.iter_mut()) {
            *v = rng.random_range(-k..k);
        }
        for j in hidden..2 * hidden {
            l.b[j] += 1.0;
        }
        l
    }

    pub fn hidden(&self) -> usize {
        self.wh.nrows()
    }

    pub fn input(&self) -> usize {
        self.wx.nrows()
    }

    /// Input projection `x Wx + b` for all rows.
    pub fn project(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut pre = x.dot(&self.wx);
        pre += &self.b;
        pre
    }

    /// Advance one step in place: `pre` (B x 4H) holds the input projection
    /// and receives the activated gates; `h` and `c` are updated.
    pub fn step(&self, pre: &mut ArrayViewMut2<f64>, h: &mut Array2<f64>, c: &mut Array2<f64>) -> Array2<f64> {
        let hd = self.hidden();
        general_mat_mul(1.0, &h.view(), &self.wh, 1.0, pre);
        let mut tanh_c = Array2::zeros(c.raw_dim());
        for r in 0..pre.nrows() {
            for j in 0..hd {
                let i = sigmoid(pre[[r, j]]);
                let f = sigmoid(pre[[r, hd + j]]);
                let g = pre[[r, 2 * hd + j]].tanh();
                let o = sigmoid(pre[[r, 3 * hd + j]]);
                let cn = f * c[[r, j]] + i * g;
                let tc = cn.tanh();
                pre[[r, j]] = i;
                pre[[r, hd + j]] = f;
                pre[[r, 2 * hd + j]] = g;
                pre[[r, 3 * hd + j]] = o;
                c[[r, j]] = cn;
                tanh_c[[r, j]] = tc;
                h[[r, j]] = o * tc;
            }
        }
        tanh_c
    }

    pub fn forward(&self, x: Array2<f64>, steps: usize, batch: usize) -> LstmCache {
        let hd = self.hidden();
        let mut gates = self.project(&x.view());
        let rows = steps * batch;
        let mut c_all = Array2::zeros((rows, hd));
        let mut tc_all = Array2::zeros((rows, hd));
        let mut h_all = Array2::zeros((rows, hd));
        let mut h = Array2::zeros((batch, hd));
        let mut c = Array2::zeros((batch, hd));
        for t in 0..steps {
            let r = t * batch..(t + 1) * batch;
            let mut g = gates.slice_mut(s![r.clone(), ..]);
            let tc = self.step(&mut g, &mut h, &mut c);
            c_all.slice_mut(s![r.clone(), ..]).assign(&c);
            tc_all.slice_mut(s![r.clone(), ..]).assign(&tc);
            h_all.slice_mut(s![r, ..]).assign(&h);
        }
        LstmCache {
            x,
            gates,
            c: c_all,
            tanh_c: tc_all,
            h: h_all,
            steps,
            batch,
        }
    }

    /// Backpropagate `dh` (gradient w.r.t. every output row) through time.
    /// Accumulates parameter gradients into `grad` and returns `dx`.
    pub fn backward(&self, cache: &LstmCache, dh: &Array2<f64>, grad: &mut LstmLayer) -> Array2<f64> {
        let hd = self.hidden();
        let (steps, batch) = (cache.steps, cache.batch);
        let mut dpre = Array2::zeros((steps * batch, 4 * hd));
        let mut dh_next = Array2::<f64>::zeros((batch, hd));
        let mut dc_next = Array2::<f64>::zeros((batch, hd));
        for t in (0..steps).rev() {
            for r in 0..batch {
                let row = t * batch + r;
                for j in 0..hd {
                    let i = cache.gates[[row, j]];
                    let f = cache.gates[[row, hd + j]];
                    let g = cache.gates[[row, 2 * hd + j]];
                    let o = cache.gates[[row, 3 * hd + j]];
                    let tc = cache.tanh_c[[row, j]];
                    let c_prev = if t > 0 { cache.c[[row - batch, j]] } else { 0.0 };
                    let dhv = dh[[row, j]] + dh_next[[r, j]];
                    let dc = dc_next[[r, j]] + dhv * o * (1.0 - tc * tc);
                    dc_next[[r, j]] = dc * f;
                    dpre[[row, j]] = dc * g * i * (1.0 - i);
                    dpre[[row, hd + j]] = dc * c_prev * f * (1.0 - f);
                    dpre[[row, 2 * hd + j]] = dc * i * (1.0 - g * g);
                    dpre[[row, 3 * hd + j]] = dhv * tc * o * (1.0 - o);
                }
            }
            let dp = dpre.slice(s![t * batch..(t + 1) * batch, ..]);
            general_mat_mul(1.0, &dp, &self.wh.t(), 0.0, &mut dh_next);
        }
        if steps > 1 {
            let h_prev = cache.h.slice(s![..(steps - 1) * batch, ..]);
            let dp = dpre.slice(s![batch.., ..]);
            general_mat_mul(1.0, &h_prev.t(), &dp, 1.0, &mut grad.wh);
        }
        general_mat_mul(1.0, &cache.x.t(), &dpre, 1.0, &mut grad.wx);
        grad.b += &dpre.sum_axis(Axis(0));
        dpre.dot(&self.wx.t())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let k = 1.0 / (input as f64).sqrt();
        let mut d = Self::zeros(input, output);
        for v in d.w.iter_mut() {
            *v = rng.random_range(-k..k);
        }
        d
    }

    pub fn forward(&self, h: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = h.dot(&self.w);
        out += &self.b;
        out
    }
}

/// Stacked LSTM layers followed by one linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub layers: Vec<LstmLayer>,
    pub head: Dense,
}

pub struct NetCache {
    layers: Vec<LstmCache>,
}

impl NetCache {
    pub fn top(&self) -> &Array2<f64> {
        &self.layers.last().expect("at least one layer").h
    }
}

impl Net {
    pub fn init<R: Rng>(input: usize, hidden: usize, layers: usize, output: usize, rng: &mut R) -> Self {
        let layers = (0..layers)
            .map(|l| LstmLayer::init(if l == 0 { input } else { hidden }, hidden, rng))
            .collect();
        Self {
            layers,
            head: Dense::init(hidden, output, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer::zeros(l.input(), l.hidden()))
                .collect(),
            head: Dense::zeros(self.head.w.nrows(), self.head.w.ncols()),
        }
    }

    pub fn input(&self) -> usize {
        self.layers[0].input()
    }

    pub fn forward(&self, x: Array2<f64>, steps: usize, batch: usize) -> (Array2<f64>, NetCache) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut input = x;
        for (k, l) in self.layers.iter().enumerate() {
            let cache = l.forward(input, steps, batch);
            input = if k + 1 < self.layers.len() {
                cache.h.clone()
            } else {
                Array2::zeros((0, 0))
            };
            caches.push(cache);
        }
        let cache = NetCache { layers: caches };
        let out = self.head.forward(&cache.top().view());
        (out, cache)
    }

    /// Gradient of the loss w.r.t. head outputs in, input gradient out.
    pub fn backward(&self, cache: &NetCache, dout: &Array2<f64>, grad: &mut Net) -> Array2<f64> {
        let top = cache.top();
        general_mat_mul(1.0, &top.t(), dout, 1.0, &mut grad.head.w);
        grad.head.b += &dout.sum_axis(Axis(0));
        let mut dh = dout.dot(&self.head.w.t());
        for k in (0..self.layers.len()).rev() {
            dh = self.layers[k].backward(&cache.layers[k], &dh, &mut grad.layers[k]);
        }
        dh
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            v.push(l.wx.as_slice().expect("standard layout"));
            v.push(l.wh.as_slice().expect("standard layout"));
            v.push(l.b.as_slice().expect("standard layout"));
        }
        v.push(self.head.w.as_slice().expect("standard layout"));
        v.push(self.head.b.as_slice().expect("standard layout"));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            v.push(l.wx.as_slice_mut().expect("standard layout"));
            v.push(l.wh.as_slice_mut().expect("standard layout"));
            v.push(l.b.as_slice_mut().expect("standard layout"));
        }
        v.push(self.head.w.as_slice_mut().expect("standard layout"));
        v.push(self.head.b.as_slice_mut().expect("standard layout"));
        v
    }

    /// Shapes in `tensors` order.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.push(l.wx.shape().to_vec());
            v.push(l.wh.shape().to_vec());
            v.push(l.b.shape().to_vec());
        }
        v.push(self.head.w.shape().to_vec());
        v.push(self.head.b.shape().to_vec());
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}
