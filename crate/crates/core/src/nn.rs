//! Small feed-forward networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector, layer by layer: the `out × in`
//! weight matrix (row-major) followed by the `out` biases.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvoError};
use crate::rng::StreamKey;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// ELU with α = 1.
    Elu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = TvoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            other => Err(TvoError::Input(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layer_sizes: Vec<usize>,
    /// One per hidden layer; the output layer is affine.
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    /// `inputs[l]` is the batch fed to layer `l` (row-major, `batch × in_l`).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Network {
    /// A network with all parameters zero.
    pub fn zeros(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(TvoError::Input("a network needs at least two non-empty layers".into()));
        }
        let hidden = layer_sizes.len() - 2;
        Ok(Network {
            params: vec![0.0; param_count(&layer_sizes)],
            activations: vec![activation; hidden],
            layer_sizes,
        })
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier(layer_sizes: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        let mut rng = StreamKey::new(seed, "xavier-init").stream(0);
        let mut offset = 0;
        for w in net.layer_sizes.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += (fan_in + 1) * fan_out;
        }
        Ok(net)
    }

    pub fn from_params(layer_sizes: Vec<usize>, activations: Vec<Activation>, params: Vec<f64>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(TvoError::Input("a network needs at least two non-empty layers".into()));
        }
        if activations.len() != layer_sizes.len() - 2 {
            return Err(TvoError::Input(format!(
                "expected {} hidden activations, got {}",
                layer_sizes.len() - 2,
                activations.len()
            )));
        }
        let expected = param_count(&layer_sizes);
        if params.len() != expected {
            return Err(TvoError::Input(format!("expected {expected} parameters, got {}", params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(TvoError::Input("parameters must be finite".into()));
        }
        Ok(Network {
            layer_sizes,
            activations,
            params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zeroes the weights and biases of the output layer.
    pub fn zero_output_layer(&mut self) {
        let l = self.layer_sizes.len();
        let last = (self.layer_sizes[l - 2] + 1) * self.layer_sizes[l - 1];
        let len = self.params.len();
        self.params[len - last..].iter_mut().for_each(|p| *p = 0.0);
    }

    fn check_batch(&self, inputs: &[f64], width: usize, what: &str) -> Result<usize> {
        if width == 0 || inputs.len() % width != 0 {
            return Err(TvoError::Input(format!(
                "{what} of length {} is not a multiple of width {width}",
                inputs.len()
            )));
        }
        Ok(inputs.len() / width)
    }

    /// Affine map of layer `l`: `out[b] = W x[b] + bias`.
    fn affine(&self, l: usize, offset: usize, x: &[f64], batch: usize) -> Vec<f64> {
        let (nin, nout) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = &self.params[offset..offset + nin * nout];
        let bias = &self.params[offset + nin * nout..offset + (nin + 1) * nout];
        let mut out = vec![0.0; batch * nout];
        for b in 0..batch {
            let xb = &x[b * nin..(b + 1) * nin];
            let ob = &mut out[b * nout..(b + 1) * nout];
            for o in 0..nout {
                let row = &w[o * nin..(o + 1) * nin];
                let mut acc = bias[o];
                for i in 0..nin {
                    acc += row[i] * xb[i];
                }
                ob[o] = acc;
            }
        }
        out
    }

    /// Batched evaluation; `inputs` is row-major `batch × input_dim`.
    pub fn forward(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(inputs)?.0)
    }

    pub fn forward_tape(&self, inputs: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let batch = self.check_batch(inputs, self.input_dim(), "input batch")?;
        let layers = self.layer_sizes.len() - 1;
        let mut tape = Tape {
            batch,
            inputs: Vec::with_capacity(layers),
            pre: Vec::with_capacity(layers - 1),
        };
        let mut x = inputs.to_vec();
        let mut offset = 0;
        for l in 0..layers {
            let z = self.affine(l, offset, &x, batch);
            offset += (self.layer_sizes[l] + 1) * self.layer_sizes[l + 1];
            tape.inputs.push(x);
            if l + 1 < layers {
                let act = self.activations[l];
                x = z.iter().map(|&v| act.apply(v)).collect();
                tape.pre.push(z);
            } else {
                x = z;
            }
        }
        Ok((x, tape))
    }

    /// Gradients of `⟨outputs, upstream⟩` with respect to the parameters and
    /// to the inputs.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let batch = tape.batch;
        if upstream.len() != batch * self.output_dim() {
            return Err(TvoError::Input(format!(
                "upstream gradient has length {}, expected {}",
                upstream.len(),
                batch * self.output_dim()
            )));
        }
        let layers = self.layer_sizes.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += (self.layer_sizes[l] + 1) * self.layer_sizes[l + 1];
        }
        // gradient with respect to the output of layer l
        let mut delta = upstream.to_vec();
        for l in (0..layers).rev() {
            let (nin, nout) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            if l + 1 < layers {
                let act = self.activations[l];
                let pre = &tape.pre[l];
                let post = &tape.inputs[l + 1];
                for (d, (x, y)) in delta.iter_mut().zip(pre.iter().zip(post)) {
                    *d *= act.derivative(*x, *y);
                }
            }
            let x = &tape.inputs[l];
            let o = offsets[l];
            let w = &self.params[o..o + nin * nout];
            let (gw, gb) = grad[o..o + (nin + 1) * nout].split_at_mut(nin * nout);
            let mut dx = vec![0.0; batch * nin];
            for b in 0..batch {
                let db = &delta[b * nout..(b + 1) * nout];
                let xb = &x[b * nin..(b + 1) * nin];
                let dxb = &mut dx[b * nin..(b + 1) * nin];
                for j in 0..nout {
                    let dj = db[j];
                    if dj == 0.0 {
                        continue;
                    }
                    gb[j] += dj;
                    let grow = &mut gw[j * nin..(j + 1) * nin];
                    let wrow = &w[j * nin..(j + 1) * nin];
                    for i in 0..nin {
                        grow[i] += dj * xb[i];
                        dxb[i] += dj * wrow[i];
                    }
                }
            }
            delta = dx;
        }
        Ok((grad, delta))
    }

    /// Parameter gradient of `⟨net(inputs), upstream⟩`.
    pub fn backprop(&self, inputs: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let (_, tape) = self.forward_tape(inputs)?;
        Ok(self.backward(&tape, upstream)?.0)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            activations: self.activations.clone(),
            params: self.params.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ck.into_network()
    }
}

/// Serialized network with layer metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn into_network(self) -> Result<Network> {
        if self.version != CHECKPOINT_VERSION {
            return Err(TvoError::Input(format!("unsupported checkpoint version {}", self.version)));
        }
        Network::from_params(self.layer_sizes, self.activations, self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Rmsprop,
    Nadam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = TvoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            "nadam" => Ok(OptimizerKind::Nadam),
            other => Err(TvoError::Input(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDirection {
    Ascend,
    Descend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Second-moment accumulator.
    v: Vec<f64>,
    /// First moment (Nadam only).
    m: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, n_params: usize) -> Self {
        Optimizer {
            kind,
            learning_rate,
            rho: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            v: vec![0.0; n_params],
            m: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], direction: StepDirection) -> Result<()> {
        if params.len() != self.v.len() || grad.len() != self.v.len() {
            return Err(TvoError::Input("optimizer shape mismatch".into()));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(TvoError::Training(format!("non-finite gradient at parameter {i}")));
        }
        let sign = match direction {
            StepDirection::Ascend => 1.0,
            StepDirection::Descend => -1.0,
        };
        let lr = self.learning_rate;
        self.t += 1;
        match self.kind {
            OptimizerKind::Rmsprop => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(self.v.iter_mut()) {
                    *v = self.rho * *v + (1.0 - self.rho) * g * g;
                    *p += sign * lr * g / (*v + self.eps).sqrt();
                }
            }
            OptimizerKind::Nadam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let t = self.t as i32;
                let c1_next = 1.0 - b1.powi(t + 1);
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (((p, g), v), m) in params.iter_mut().zip(grad).zip(self.v.iter_mut()).zip(self.m.iter_mut()) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = b1 * *m / c1_next + (1.0 - b1) * g / c1;
                    let v_hat = *v / c2;
                    *p += sign * lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_inputs(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = StreamKey::new(seed, "inputs").stream(0);
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    /// Perturbs biases too, so both weights and biases are exercised.
    fn randomized(sizes: Vec<usize>, act: Activation, seed: u64) -> Network {
        let mut net = Network::xavier(sizes, act, seed).unwrap();
        let noise = random_inputs(net.params.len(), seed + 1);
        for (p, e) in net.params.iter_mut().zip(noise) {
            *p += 0.3 * e;
        }
        net
    }

    #[test]
    fn zero_network_outputs_zero() {
        for act in [Activation::Tanh, Activation::Elu] {
            let net = Network::zeros(vec![3, 4, 2], act).unwrap();
            assert!(net.forward(&random_inputs(6, 1)).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn linear_layer_is_affine() {
        let net = Network::from_params(vec![2, 2], vec![], vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5]).unwrap();
        assert_eq!(net.forward(&[1.0, -1.0]).unwrap(), vec![-1.0 + 0.5, -1.0 - 0.5]);
    }

    #[test]
    fn batch_rows_match_single_evaluations() {
        let net = randomized(vec![3, 5, 4, 2], Activation::Elu, 3);
        let x = random_inputs(12, 4);
        let batch = net.forward(&x).unwrap();
        for b in 0..4 {
            let single = net.forward(&x[b * 3..(b + 1) * 3]).unwrap();
            assert_eq!(&batch[b * 2..(b + 1) * 2], single.as_slice());
        }
    }

    #[test]
    fn shape_errors() {
        let net = Network::zeros(vec![3, 2], Activation::Tanh).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
        assert!(net.backprop(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(Network::from_params(vec![3, 2], vec![], vec![0.0; 7]).is_err());
    }

    fn check_gradients(net: &Network, x: &[f64], up: &[f64], tol: f64) {
        let (grad, dx) = {
            let (_, tape) = net.forward_tape(x).unwrap();
            net.backward(&tape, up).unwrap()
        };
        let objective = |n: &Network, x: &[f64]| -> f64 {
            n.forward(x).unwrap().iter().zip(up).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in 0..net.params.len() {
            let mut p = net.clone();
            p.params[i] += h;
            let mut m = net.clone();
            m.params[i] -= h;
            let fd = (objective(&p, x) - objective(&m, x)) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-3);
            assert!((fd - grad[i]).abs() / scale < tol, "param {i}: fd {fd} vs {}", grad[i]);
        }
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            let fd = (objective(net, &xp) - objective(net, &xm)) / (2.0 * h);
            let scale = fd.abs().max(dx[i].abs()).max(1e-3);
            assert!((fd - dx[i]).abs() / scale < tol, "input {i}: fd {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Elu] {
            let net = randomized(vec![3, 4, 2], act, 10);
            check_gradients(&net, &random_inputs(6, 11), &random_inputs(4, 12), 1e-5);
            let deep = randomized(vec![4, 6, 5, 4, 3, 2], act, 20);
            check_gradients(&deep, &random_inputs(12, 21), &random_inputs(6, 22), 1e-5);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = randomized(vec![3, 4, 2], Activation::Tanh, 5);
        let g = net.backprop(&random_inputs(9, 6), &[0.0; 6]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_gradient_is_sum_of_sample_gradients() {
        let net = randomized(vec![3, 4, 2], Activation::Elu, 7);
        let x = random_inputs(9, 8);
        let up = random_inputs(6, 9);
        let total = net.backprop(&x, &up).unwrap();
        let mut sum = vec![0.0; total.len()];
        for b in 0..3 {
            let g = net.backprop(&x[b * 3..(b + 1) * 3], &up[b * 2..(b + 1) * 2]).unwrap();
            for (s, v) in sum.iter_mut().zip(g) {
                *s += v;
            }
        }
        for (a, b) in total.iter().zip(&sum) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn rmsprop_first_step() {
        let mut opt = Optimizer::new(OptimizerKind::Rmsprop, 1e-3, 1);
        let mut p = [0.0];
        opt.step(&mut p, &[1.0], StepDirection::Ascend).unwrap();
        assert_abs_diff_eq!(opt.v[0], 0.1, epsilon = 1e-16);
        assert_abs_diff_eq!(p[0], 3.1623e-3, epsilon = 1e-7);
        assert_abs_diff_eq!(p[0], 1e-3 / (0.1f64 + 1e-8).sqrt(), epsilon = 1e-18);
    }

    #[test]
    fn zero_gradient_does_not_move() {
        for kind in [OptimizerKind::Rmsprop, OptimizerKind::Nadam] {
            let mut opt = Optimizer::new(kind, 1e-2, 3);
            let mut p = [0.5, -1.0, 2.0];
            opt.step(&mut p, &[0.0; 3], StepDirection::Descend).unwrap();
            assert_eq!(p, [0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn ascend_and_descend_are_mirror_images() {
        for kind in [OptimizerKind::Rmsprop, OptimizerKind::Nadam] {
            let g = [0.3, -2.0, 1e-3];
            let mut a = Optimizer::new(kind, 1e-3, 3);
            let mut d = Optimizer::new(kind, 1e-3, 3);
            let mut pa = [0.0; 3];
            let mut pd = [0.0; 3];
            for _ in 0..3 {
                a.step(&mut pa, &g, StepDirection::Ascend).unwrap();
                d.step(&mut pd, &g, StepDirection::Descend).unwrap();
            }
            for i in 0..3 {
                assert_eq!(pa[i], -pd[i]);
            }
        }
    }

    #[test]
    fn nadam_first_step_is_bias_corrected() {
        let mut opt = Optimizer::new(OptimizerKind::Nadam, 1e-3, 1);
        let mut p = [0.0];
        opt.step(&mut p, &[2.0], StepDirection::Descend).unwrap();
        // m̂ = 0.9·0.2/(1−0.81) + 0.1·2/0.1, v̂ = 4
        let m_hat = 0.9 * 0.2 / (1.0 - 0.81) + 2.0;
        assert_abs_diff_eq!(p[0], -1e-3 * m_hat / (2.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut opt = Optimizer::new(OptimizerKind::Rmsprop, 1e-3, 2);
        let mut p = [0.0; 2];
        assert!(matches!(opt.step(&mut p, &[1.0, f64::NAN], StepDirection::Ascend), Err(TvoError::Training(_))));
    }

    #[test]
    fn xavier_is_seeded_and_bounded() {
        let a = Network::xavier(vec![4, 20, 15, 5, 2], Activation::Tanh, 1).unwrap();
        let b = Network::xavier(vec![4, 20, 15, 5, 2], Activation::Tanh, 1).unwrap();
        let c = Network::xavier(vec![4, 20, 15, 5, 2], Activation::Tanh, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut off = 0;
        for w in a.layer_sizes.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let weights = &a.params[off..off + w[0] * w[1]];
            assert!(weights.iter().all(|v| v.abs() <= bound));
            assert!(a.params[off + w[0] * w[1]..off + (w[0] + 1) * w[1]].iter().all(|v| *v == 0.0));
            off += (w[0] + 1) * w[1];
        }
        assert_eq!(off, param_count(a.layer_sizes()));
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = randomized(vec![3, 4, 2], Activation::Elu, 30);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        assert_eq!(Network::load(&path).unwrap(), net);
        let mut ck = net.to_checkpoint();
        ck.params.pop();
        assert!(ck.into_network().is_err());
    }

    proptest! {
        #[test]
        fn random_small_nets_have_exact_gradients(seed in 0u64..1000, hidden in 1usize..6, act in prop::bool::ANY) {
            let act = if act { Activation::Tanh } else { Activation::Elu };
            let net = randomized(vec![3, hidden, 2], act, seed);
            check_gradients(&net, &random_inputs(6, seed + 7), &random_inputs(4, seed + 8), 1e-5);
        }
    }
}
