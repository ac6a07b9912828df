//! Fully connected Q-network with ReLU hidden layers, batched through GEMM,
//! and the Adam optimizer.

use rand::Rng;

use super::MadqnError;
use crate::scalar::Real;

/// Parameters of an MLP stored flat, layer by layer: a row-major
/// `fan_in x fan_out` weight block followed by `fan_out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<F> {
    dims: Vec<usize>,
    params: Vec<F>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Post-activation outputs of every layer for one batch; `acts[0]` is the input.
pub struct Activations<F> {
    batch: usize,
    acts: Vec<Vec<F>>,
}

impl<F> Activations<F> {
    pub fn output(&self) -> &[F] {
        self.acts.last().expect("at least one layer")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl<F: Real> QNetwork<F> {
    /// Uniform initialization in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "invalid layer sizes {dims:?}");
        let mut params = Vec::with_capacity(param_count(dims));
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(F::of(rng.random_range(-bound..bound)));
            }
        }
        Self {
            dims: dims.to_vec(),
            params,
        }
    }

    pub fn from_params(dims: &[usize], params: Vec<F>) -> Result<Self, MadqnError> {
        if dims.len() < 2 || param_count(dims) != params.len() {
            return Err(MadqnError::ShapeMismatch {
                expected: param_count(dims),
                found: params.len(),
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.dims.windows(2).map(move |w| {
            let start = off;
            off += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Forward pass keeping every layer's output for backpropagation.
    pub fn forward_cached(&self, input: &[F], batch: usize) -> Activations<F> {
        assert_eq!(input.len(), batch * self.input_dim(), "input shape");
        let n_layers = self.dims.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(input.to_vec());
        for (l, (off, fan_in, fan_out)) in self.layers().enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut out = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                out.extend_from_slice(b);
            }
            F::gemm(
                batch,
                fan_in,
                fan_out,
                F::one(),
                &acts[l],
                fan_in as isize,
                1,
                w,
                fan_out as isize,
                1,
                F::one(),
                &mut out,
                fan_out as isize,
                1,
            );
            if l + 1 < n_layers {
                for v in &mut out {
                    if *v < F::zero() {
                        *v = F::zero();
                    }
                }
            }
            acts.push(out);
        }
        Activations { batch, acts }
    }

    /// Q-values, `batch x outputs` row-major.
    pub fn forward(&self, input: &[F], batch: usize) -> Vec<F> {
        let mut a = self.forward_cached(input, batch);
        a.acts.pop().unwrap()
    }

    pub fn q_values(&self, obs: &[F]) -> Vec<F> {
        self.forward(obs, 1)
    }

    /// Mean squared TD error over the batch on the taken actions, with its
    /// gradient written to `grad` (same layout as the parameters).
    pub fn loss_and_grad(&self, input: &[F], batch: usize, actions: &[usize], targets: &[F], grad: &mut [F]) -> F {
        assert_eq!(grad.len(), self.params.len(), "gradient shape");
        assert_eq!(actions.len(), batch);
        assert_eq!(targets.len(), batch);
        let cache = self.forward_cached(input, batch);
        let n_out = self.output_dim();
        let q = cache.output();
        let scale = F::of(2.0 / batch as f64);
        let mut loss = F::zero();
        let mut delta = vec![F::zero(); batch * n_out];
        for b in 0..batch {
            let err = q[b * n_out + actions[b]] - targets[b];
            loss += err * err;
            delta[b * n_out + actions[b]] = scale * err;
        }
        loss /= F::of(batch as f64);
        self.backward(&cache, delta, grad);
        loss
    }

    /// Backpropagates `delta` (gradient w.r.t. the outputs) through the
    /// cached pass.
    fn backward(&self, cache: &Activations<F>, mut delta: Vec<F>, grad: &mut [F]) {
        let batch = cache.batch;
        let layers: Vec<_> = self.layers().collect();
        for (l, &(off, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let input = &cache.acts[l];
            let (gw, rest) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            // dW = input^T * delta
            F::gemm(
                fan_in,
                batch,
                fan_out,
                F::one(),
                input,
                1,
                fan_in as isize,
                &delta,
                fan_out as isize,
                1,
                F::zero(),
                gw,
                fan_out as isize,
                1,
            );
            for (j, gb) in rest.iter_mut().enumerate() {
                let mut s = F::zero();
                for b in 0..batch {
                    s += delta[b * fan_out + j];
                }
                *gb = s;
            }
            if l == 0 {
                break;
            }
            // d(input) = delta * W^T, masked by the ReLU that produced input
            let w = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![F::zero(); batch * fan_in];
            F::gemm(
                batch,
                fan_out,
                fan_in,
                F::one(),
                &delta,
                fan_out as isize,
                1,
                w,
                1,
                fan_out as isize,
                F::zero(),
                &mut prev,
                fan_in as isize,
                1,
            );
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= F::zero() {
                    *p = F::zero();
                }
            }
            delta = prev;
        }
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn soft_update<F: Real>(target: &mut QNetwork<F>, online: &QNetwork<F>, tau: F) -> Result<(), MadqnError> {
    if target.dims != online.dims {
        return Err(MadqnError::ShapeMismatch {
            expected: online.params.len(),
            found: target.params.len(),
        });
    }
    let keep = F::one() - tau;
    for (t, &o) in target.params.iter_mut().zip(&online.params) {
        *t = tau * o + keep * *t;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Real> Adam<F> {
    pub fn new(n_params: usize, lr: F, eps: F) -> Self {
        Self {
            lr,
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps,
            m: vec![F::zero(); n_params],
            v: vec![F::zero(); n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [F], grad: &[F]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let one = F::one();
        let b1 = self.beta1;
        let b2 = self.beta2;
        let lr_t = self.lr * (one - b2.powi(self.t)).sqrt() / (one - b1.powi(self.t));
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            params[i] -= lr_t * self.m[i] / (self.v[i].sqrt() + self.eps);
        }
    }
}
