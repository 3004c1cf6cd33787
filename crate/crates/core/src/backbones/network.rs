//! Two-layer perceptron with manual backpropagation.
//!
//! `hidden = relu(W1 x + b1)`; output row `r` scores either `w_r . hidden + b_r`
//! (linear head) or `eta * cos(hidden, w_r)` (cosine head). Output rows are
//! per class and appended as classes arrive.

use rand::Rng;
use rand_distr::StandardNormal;

/// Smoothing term in `sqrt(|v|^2 + eps^2)` used for every normalization.
pub const NORM_EPS: f64 = 1e-8;

pub(crate) fn smooth_norm(v: &[f64]) -> f64 {
    (dot(v, v) + NORM_EPS * NORM_EPS).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_dim: usize,
    hidden_dim: usize,
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) classes: Vec<usize>,
    pub(crate) first_state: Vec<usize>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
    pub(crate) frozen: Vec<bool>,
    pub(crate) init_rows: Vec<Option<Vec<f64>>>,
    pub(crate) cosine: bool,
    pub(crate) eta: f64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Gradient buffers laid out like the model parameters.
#[derive(Debug, Clone)]
pub(crate) struct Grads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub eta: f64,
}

impl Grads {
    pub fn zeros_like(m: &Model) -> Self {
        Self {
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: vec![0.0; m.b2.len()],
            eta: 0.0,
        }
    }

    pub fn clear(&mut self) {
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
        self.b2.fill(0.0);
        self.eta = 0.0;
    }
}

impl Model {
    /// He-initialized hidden layer, no output rows yet.
    pub fn new<R: Rng>(input_dim: usize, hidden_dim: usize, cosine: bool, eta: f64, rng: &mut R) -> Self {
        let std = (2.0 / input_dim as f64).sqrt();
        let w1 = (0..hidden_dim * input_dim)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            input_dim,
            hidden_dim,
            w1,
            b1: vec![0.0; hidden_dim],
            classes: Vec::new(),
            first_state: Vec::new(),
            w2: Vec::new(),
            b2: Vec::new(),
            frozen: Vec::new(),
            init_rows: Vec::new(),
            cosine,
            eta,
        }
    }

    /// Appends randomly initialized output rows for `classes`, first seen in `state`.
    pub fn add_classes<R: Rng>(&mut self, classes: &[usize], state: usize, rng: &mut R) {
        let std = 1.0 / (self.hidden_dim as f64).sqrt();
        for &c in classes {
            self.classes.push(c);
            self.first_state.push(state);
            self.w2
                .extend((0..self.hidden_dim).map(|_| std * rng.sample::<f64, _>(StandardNormal)));
            self.b2.push(0.0);
            self.frozen.push(false);
            self.init_rows.push(None);
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Hidden-layer weights (row-major `h x d`) and biases.
    pub fn hidden_params(&self) -> (&[f64], &[f64]) {
        (&self.w1, &self.b1)
    }

    pub fn num_outputs(&self) -> usize {
        self.classes.len()
    }

    /// Class id of each output row, in row order.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn is_cosine(&self) -> bool {
        self.cosine
    }

    /// Learned cosine scale.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn row_index(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn output_row(&self, r: usize) -> &[f64] {
        &self.w2[r * self.hidden_dim..(r + 1) * self.hidden_dim]
    }

    pub(crate) fn output_row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.w2[r * self.hidden_dim..(r + 1) * self.hidden_dim]
    }

    pub fn output_bias(&self, r: usize) -> f64 {
        self.b2[r]
    }

    pub fn is_frozen(&self, r: usize) -> bool {
        self.frozen[r]
    }

    pub fn first_state(&self, r: usize) -> usize {
        self.first_state[r]
    }

    /// Output weights recorded at the end of the class's first state.
    pub fn initial_row(&self, r: usize) -> Option<&[f64]> {
        self.init_rows[r].as_deref()
    }

    pub fn hidden(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).hidden
    }

    pub fn forward(&self, x: &[f64]) -> Activations {
        debug_assert_eq!(x.len(), self.input_dim);
        let pre: Vec<f64> = self
            .w1
            .chunks_exact(self.input_dim)
            .zip(&self.b1)
            .map(|(w, b)| dot(w, x) + b)
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let scores = self.head(&hidden);
        Activations { pre, hidden, scores }
    }

    /// Scores of every output row, in row order.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).scores
    }

    fn head(&self, hidden: &[f64]) -> Vec<f64> {
        let rows = self.w2.chunks_exact(self.hidden_dim);
        if self.cosine {
            let nh = smooth_norm(hidden);
            rows.map(|w| self.eta * dot(w, hidden) / (nh * smooth_norm(w)))
                .collect()
        } else {
            rows.zip(&self.b2).map(|(w, b)| dot(w, hidden) + b).collect()
        }
    }

    /// Accumulates parameter gradients of one sample given `dL/dscores` and an
    /// optional extra `dL/dhidden`.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        act: &Activations,
        d_scores: &[f64],
        d_hidden_extra: Option<&[f64]>,
        grads: &mut Grads,
    ) {
        let h = self.hidden_dim;
        let hidden = &act.hidden;
        let mut dh = vec![0.0; h];
        if self.cosine {
            let nh = smooth_norm(hidden);
            for (r, &d) in d_scores.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let w = self.output_row(r);
                let nw = smooth_norm(w);
                let cos = dot(w, hidden) / (nh * nw);
                grads.eta += d * cos;
                let g = d * self.eta;
                let gw = &mut grads.w2[r * h..(r + 1) * h];
                for j in 0..h {
                    dh[j] += g * (w[j] / (nh * nw) - cos * hidden[j] / (nh * nh));
                    gw[j] += g * (hidden[j] / (nh * nw) - cos * w[j] / (nw * nw));
                }
            }
        } else {
            for (r, &d) in d_scores.iter().enumerate() {
                let w = self.output_row(r);
                let gw = &mut grads.w2[r * h..(r + 1) * h];
                for j in 0..h {
                    gw[j] += d * hidden[j];
                    dh[j] += d * w[j];
                }
                grads.b2[r] += d;
            }
        }
        if let Some(extra) = d_hidden_extra {
            for (a, b) in dh.iter_mut().zip(extra) {
                *a += b;
            }
        }
        for (j, (&p, &g)) in act.pre.iter().zip(&dh).enumerate() {
            if p <= 0.0 {
                continue;
            }
            let gw = &mut grads.w1[j * self.input_dim..(j + 1) * self.input_dim];
            for (a, &xi) in gw.iter_mut().zip(x) {
                *a += g * xi;
            }
            grads.b1[j] += g;
        }
    }
}

/// SGD with momentum and L2 weight decay; frozen output rows are skipped.
#[derive(Debug, Clone)]
pub(crate) struct Sgd {
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    vel: Grads,
}

impl Sgd {
    pub fn new(model: &Model, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            vel: Grads::zeros_like(model),
        }
    }

    fn update(p: &mut f64, v: &mut f64, g: f64, lr: f64, mu: f64, wd: f64) {
        *v = mu * *v + g + wd * *p;
        *p -= lr * *v;
    }

    pub fn step(&mut self, model: &mut Model, grads: &Grads) {
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        for ((p, v), &g) in model.w1.iter_mut().zip(&mut self.vel.w1).zip(&grads.w1) {
            Self::update(p, v, g, lr, mu, wd);
        }
        for ((p, v), &g) in model.b1.iter_mut().zip(&mut self.vel.b1).zip(&grads.b1) {
            Self::update(p, v, g, lr, mu, wd);
        }
        let h = model.hidden_dim;
        for r in 0..model.classes.len() {
            if model.frozen[r] {
                continue;
            }
            let range = r * h..(r + 1) * h;
            for ((p, v), &g) in model.w2[range.clone()]
                .iter_mut()
                .zip(&mut self.vel.w2[range.clone()])
                .zip(&grads.w2[range])
            {
                Self::update(p, v, g, lr, mu, wd);
            }
            if !model.cosine {
                Self::update(&mut model.b2[r], &mut self.vel.b2[r], grads.b2[r], lr, mu, wd);
            }
        }
        if model.cosine {
            Self::update(&mut model.eta, &mut self.vel.eta, grads.eta, lr, mu, 0.0);
        }
    }
}
