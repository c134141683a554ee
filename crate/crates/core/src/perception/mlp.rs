//! Fully connected network with ReLU hidden layers and a linear scalar
//! output, trained on mean squared error with Adam.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Parameters are stored flat: for each layer, the weight matrix
/// (`out × in`, row-major) followed by the bias (`out`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

const HIDDEN_BIAS_INIT: f64 = 0.01;

struct Layout {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// He-initialized network. Hidden biases start at a small positive value
    /// so no unit sits on the ReLU kink for a zero input; the output bias is zero.
    pub fn new<R: Rng + ?Sized>(sizes: Vec<usize>, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output layer");
        let mut params = Vec::with_capacity(Self::param_count(&sizes));
        let last = sizes.len() - 2;
        for (li, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let gain = if li == last { 1.0 } else { 2.0 };
            let std = (gain / n_in.max(1) as f64).sqrt();
            for _ in 0..n_in * n_out {
                let z: f64 = StandardNormal.sample(rng);
                params.push(std * z);
            }
            params.extend(std::iter::repeat_n(if li == last { 0.0 } else { HIDDEN_BIAS_INIT }, n_out));
        }
        Mlp { sizes, params }
    }

    fn layout(&self) -> Vec<Layout> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let l = Layout { w: off, b: off + w[0] * w[1], n_in: w[0], n_out: w[1] };
                off += w[0] * w[1] + w[1];
                l
            })
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    /// Activations of every layer (post-ReLU for hidden layers).
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layout = self.layout();
        let last = layout.len() - 1;
        let mut acts = vec![x.to_vec()];
        for (li, l) in layout.iter().enumerate() {
            let input = &acts[li];
            let mut out = vec![0.0; l.n_out];
            for (o, v) in out.iter_mut().enumerate() {
                let row = &self.params[l.w + o * l.n_in..l.w + (o + 1) * l.n_in];
                let mut s = self.params[l.b + o];
                for (wi, xi) in row.iter().zip(input) {
                    s += wi * xi;
                }
                *v = if li == last { s } else { s.max(0.0) };
            }
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.forward_all(x).last().expect("output layer")[0]
    }

    /// Mean squared error over a batch.
    pub fn loss(&self, xs: &[&[f64]], ys: &[f64]) -> f64 {
        let n = xs.len().max(1) as f64;
        xs.iter().zip(ys).map(|(x, y)| (self.forward(x) - y).powi(2)).sum::<f64>() / n
    }

    /// Loss and its gradient with respect to all parameters. Samples are
    /// accumulated in order.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[f64]) -> (f64, Vec<f64>) {
        let layout = self.layout();
        let n = xs.len().max(1) as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let acts = self.forward_all(x);
            let out = acts.last().expect("output")[0];
            loss += (out - y).powi(2);
            let mut delta = vec![2.0 * (out - y) / n];
            for li in (0..layout.len()).rev() {
                let l = &layout[li];
                let input = &acts[li];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let g = &mut grad[l.w + o * l.n_in..l.w + (o + 1) * l.n_in];
                    for (gi, xi) in g.iter_mut().zip(input) {
                        *gi += d * xi;
                    }
                    grad[l.b + o] += d;
                }
                if li == 0 {
                    break;
                }
                let mut prev = vec![0.0; l.n_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &self.params[l.w + o * l.n_in..l.w + (o + 1) * l.n_in];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += d * wi;
                    }
                }
                // ReLU derivative of the hidden layer feeding this one.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        (loss / n, grad)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Finite-difference step used by [`max_gradient_deviation`].
pub const FD_STEP: f64 = 1e-5;

/// Compares the analytic gradient with central finite differences on up to
/// `n_params` randomly chosen parameters. Returns the largest relative
/// deviation `|a - n| / max(|a|, |n|, 1e-6)`; the floor makes parameters
/// with vanishing gradient compare absolutely.
pub fn max_gradient_deviation<R: Rng + ?Sized>(
    mlp: &Mlp,
    xs: &[&[f64]],
    ys: &[f64],
    n_params: usize,
    rng: &mut R,
) -> f64 {
    let (_, grad) = mlp.loss_and_grad(xs, ys);
    let total = mlp.params.len();
    let picks = sample(rng, total, n_params.min(total));
    let mut probe = mlp.clone();
    let mut worst: f64 = 0.0;
    for i in picks.iter() {
        let orig = probe.params[i];
        probe.params[i] = orig + FD_STEP;
        let up = probe.loss(xs, ys);
        probe.params[i] = orig - FD_STEP;
        let down = probe.loss(xs, ys);
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = grad[i];
        let dev = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(dev);
    }
    worst
}
