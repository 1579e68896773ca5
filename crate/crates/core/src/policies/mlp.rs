//! Two-layer feed-forward approximator: `input -> hidden (ReLU) -> output`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Parameter-shaped gradient (or optimizer moment) buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Grads {
    fn zeros_like(net: &Mlp) -> Self {
        Grads {
            w1: Array2::zeros(net.w1.raw_dim()),
            b1: Array1::zeros(net.b1.raw_dim()),
            w2: Array2::zeros(net.w2.raw_dim()),
            b2: Array1::zeros(net.b2.raw_dim()),
        }
    }

    fn norm(&self) -> f64 {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, s: f64) {
        self.w1 *= s;
        self.b1 *= s;
        self.w2 *= s;
        self.b2 *= s;
    }
}

impl Mlp {
    /// He-uniform first layer, small uniform output layer, zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let l1 = (6.0 / input.max(1) as f64).sqrt();
        let l2 = (1.0 / hidden.max(1) as f64).sqrt();
        Mlp {
            w1: Array2::from_shape_fn((input, hidden), |_| rng.random_range(-l1..l1)),
            b1: Array1::zeros(hidden),
            w2: Array2::from_shape_fn((hidden, output), |_| rng.random_range(-l2..l2)),
            b2: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    /// Outputs for a batch of row vectors.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.dot(&self.w1) + &self.b1;
        h.mapv_inplace(|v| v.max(0.0));
        h.dot(&self.w2) + &self.b2
    }

    /// Mean squared error `1/(2B) * sum_b (out[b, a_b] - y_b)^2` over the
    /// chosen outputs only, and its gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<'_, f64>, actions: &[usize], targets: &[f64]) -> (f64, Grads) {
        let batch = x.nrows();
        let z1 = x.dot(&self.w1) + &self.b1;
        let a1 = z1.mapv(|v| v.max(0.0));
        let out = a1.dot(&self.w2) + &self.b2;

        let mut dout = Array2::<f64>::zeros(out.raw_dim());
        let mut loss = 0.0;
        for b in 0..batch {
            let err = out[[b, actions[b]]] - targets[b];
            loss += 0.5 * err * err / batch as f64;
            dout[[b, actions[b]]] = err / batch as f64;
        }
        let w2 = a1.t().dot(&dout);
        let b2 = dout.sum_axis(Axis(0));
        let mut dz1 = dout.dot(&self.w2.t());
        Zip::from(&mut dz1).and(&z1).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let w1 = x.t().dot(&dz1);
        let b1 = dz1.sum_axis(Axis(0));
        (loss, Grads { w1, b1, w2, b2 })
    }

    /// All parameters flattened as `w1, b1, w2, b2` in row-major order.
    pub fn parameters(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::Dimension {
                expected: self.num_parameters(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for p in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
        {
            *p = it.next().unwrap_or_default();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer with optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    max_grad_norm: Option<f64>,
    m: Option<Grads>,
    v: Option<Grads>,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, max_grad_norm: Option<f64>) -> Self {
        Optimizer {
            kind,
            lr,
            max_grad_norm,
            m: None,
            v: None,
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, mut g: Grads) {
        if let Some(max) = self.max_grad_norm {
            let n = g.norm();
            if n > max {
                g.scale(max / n);
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                net.w1.scaled_add(-self.lr, &g.w1);
                net.b1.scaled_add(-self.lr, &g.b1);
                net.w2.scaled_add(-self.lr, &g.w2);
                net.b2.scaled_add(-self.lr, &g.b2);
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let m = self.m.get_or_insert_with(|| Grads::zeros_like(net));
                let v = self.v.get_or_insert_with(|| Grads::zeros_like(net));
                let c1 = 1.0 - ADAM_BETA1.powi(self.t);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                let lr = self.lr;
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                };
                Zip::from(&mut net.w1).and(&mut m.w1).and(&mut v.w1).and(&g.w1).for_each(update);
                Zip::from(&mut net.b1).and(&mut m.b1).and(&mut v.b1).and(&g.b1).for_each(update);
                Zip::from(&mut net.w2).and(&mut m.w2).and(&mut v.w2).and(&g.w2).for_each(update);
                Zip::from(&mut net.b2).and(&mut m.b2).and(&mut v.b2).and(&g.b2).for_each(update);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat(g: &Grads) -> Vec<f64> {
        g.w1.iter().chain(g.b1.iter()).chain(g.w2.iter()).chain(g.b2.iter()).copied().collect()
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let mut net = Mlp::new(6, 8, 3, &mut r);
        // nonzero biases so no hidden unit sits exactly on the ReLU kink
        net.b1.mapv_inplace(|_| r.random_range(-0.3..0.3));
        net.b2.mapv_inplace(|_| r.random_range(-0.3..0.3));
        let x = Array2::from_shape_fn((5, 6), |_| r.random_range(-1.0..1.0));
        let actions = [0, 2, 1, 1, 0];
        let targets = [0.3, -1.2, 0.8, 2.0, -0.1];
        let (_, g) = net.loss_and_grad(x.view(), &actions, &targets);
        let analytic = flat(&g);
        let base = net.parameters();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            net.set_parameters(&p).unwrap();
            let up = net.loss_and_grad(x.view(), &actions, &targets).0;
            p[i] -= 2.0 * h;
            net.set_parameters(&p).unwrap();
            let down = net.loss_and_grad(x.view(), &actions, &targets).0;
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-7);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn parameters_round_trip() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let a = Mlp::new(3, 4, 2, &mut r);
        let mut b = Mlp::new(3, 4, 2, &mut r);
        b.set_parameters(&a.parameters()).unwrap();
        assert_eq!(a, b);
        assert!(b.set_parameters(&[0.0; 3]).is_err());
    }

    #[test]
    fn optimizers_reduce_loss() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut r = ChaCha8Rng::seed_from_u64(4);
            let mut net = Mlp::new(4, 16, 2, &mut r);
            let x = Array2::from_shape_fn((8, 4), |_| r.random_range(-1.0..1.0));
            let actions = [0, 1, 0, 1, 0, 1, 0, 1];
            let targets: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
            let mut opt = Optimizer::new(kind, 0.01, Some(10.0));
            let first = net.loss_and_grad(x.view(), &actions, &targets).0;
            for _ in 0..500 {
                let (_, g) = net.loss_and_grad(x.view(), &actions, &targets);
                opt.step(&mut net, g);
            }
            let last = net.loss_and_grad(x.view(), &actions, &targets).0;
            assert!(last < first * 0.5, "{kind:?}: {first} -> {last}");
        }
    }
}
