//! A small fully-connected network with an explicit reverse pass.
//!
//! Parameters live in one flat vector in declaration order: for every layer,
//! the row-major weight matrix (`out × in`) followed by the bias. Hidden
//! layers use `tanh`; the output layer is linear.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffNet {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Activations recorded by [`DiffNet::forward_cached`] for the reverse pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// Input to each layer; `layers[0]` is the network input.
    layers: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl DiffNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self {
            sizes: sizes.to_vec(),
            activation: Activation::Tanh,
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Checkpoint("network needs at least two layer sizes".into()));
        }
        let expected = param_count(sizes);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation: Activation::Tanh,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).output
    }

    pub fn forward_cached(&self, input: &[f64]) -> Tape {
        debug_assert_eq!(input.len(), self.input_dim());
        let last = self.sizes.len() - 2;
        let mut layers = Vec::with_capacity(self.sizes.len() - 1);
        let mut x = input.to_vec();
        let mut offset = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let mut y: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    bias[o] + row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l != last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            layers.push(std::mem::replace(&mut x, y));
            offset += n_in * n_out + n_out;
        }
        Tape { layers, output: x }
    }

    /// Reverse pass: accumulates `∂L/∂θ` into `param_grad` and returns
    /// `∂L/∂input`, given `∂L/∂output`.
    pub fn backward(&self, tape: &Tape, out_grad: &[f64], param_grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(param_grad.len(), self.params.len());
        let last = self.sizes.len() - 2;
        let mut grad = out_grad.to_vec();
        let mut offset = self.params.len();
        for l in (0..=last).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            if l != last {
                // The stored input of layer l+1 is tanh of this layer's
                // pre-activation.
                let post = &tape.layers[l + 1];
                for (g, y) in grad.iter_mut().zip(post) {
                    *g *= 1.0 - y * y;
                }
            }
            let x = &tape.layers[l];
            let weights = &self.params[offset..offset + n_in * n_out];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let g = grad[o];
                if g == 0.0 {
                    continue;
                }
                let wg = &mut param_grad[offset + o * n_in..offset + (o + 1) * n_in];
                for i in 0..n_in {
                    wg[i] += g * x[i];
                    next[i] += g * weights[o * n_in + i];
                }
                param_grad[offset + n_in * n_out + o] += g;
            }
            grad = next;
        }
        grad
    }
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One descent step on `params` along `-grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1 = 1.0 - self.beta1.powi(self.t as i32);
        let b2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / b1) / ((*v / b2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{central_difference, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DiffNet::new(&[3, 8, 2], &mut rng);
        let x = [0.1, -0.4, 2.0];
        assert_eq!(net.forward(&x), net.forward(&x));
        assert_eq!(net.num_params(), 3 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = DiffNet::new(&[3, 7, 5, 2], &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let c: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |n: &DiffNet, x: &[f64]| {
                n.forward(x).iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
            };
            let tape = net.forward_cached(&x);
            let mut pg = vec![0.0; net.num_params()];
            let ig = net.backward(&tape, &c, &mut pg);

            let fd_p = central_difference(net.params(), 1e-5, |p| {
                loss(&DiffNet::from_params(net.sizes(), p.to_vec()).unwrap(), &x)
            });
            assert!(relative_error(&pg, &fd_p) < 1e-4, "seed {seed}");
            let fd_x = central_difference(&x, 1e-5, |xx| loss(&net, xx));
            assert!(relative_error(&ig, &fd_x) < 1e-4, "seed {seed}");
        }
    }

    #[test]
    fn bias_only_net_has_zero_weight_gradient() {
        let sizes = [2, 3];
        let mut params = vec![0.0; 9];
        params[6..].copy_from_slice(&[0.5, -1.0, 2.0]);
        let net = DiffNet::from_params(&sizes, params).unwrap();
        let x = [0.0, 0.0];
        let tape = net.forward_cached(&x);
        let mut pg = vec![0.0; 9];
        net.backward(&tape, &[1.0, 1.0, 1.0], &mut pg);
        assert!(pg[..6].iter().all(|&g| g == 0.0));
        assert_eq!(&pg[6..], &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn param_count_checked() {
        assert!(DiffNet::from_params(&[2, 2], vec![0.0; 5]).is_err());
    }
}
