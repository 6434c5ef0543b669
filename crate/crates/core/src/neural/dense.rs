use rand::Rng;

use super::params::{ParamSet, TapeStamp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

/// y = W x + b, W row-major (out x in).
pub fn affine(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let n_in = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *yo = acc;
    }
}

/// Accumulates dW += dy x^T, db += dy and writes dx = W^T dy.
pub fn affine_backward(w: &[f64], x: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64], dx: &mut [f64]) {
    let n_in = x.len();
    dx.iter_mut().for_each(|v| *v = 0.0);
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        gb[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        let grow = &mut gw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            grow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub w: usize,
    pub b: usize,
}

/// Fully connected chain: hidden layers share one activation, the last
/// layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub params: ParamSet,
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct MlpTape {
    stamp: TapeStamp,
    /// activations[0] is the input, activations[i + 1] the output of layer i
    activations: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("tape has input")
    }

    pub fn activations(&self) -> &[Vec<f64>] {
        &self.activations
    }
}

impl Mlp {
    /// All-zero network with layer sizes `sizes` (input first).
    pub fn zeros(sizes: &[usize], hidden: Activation) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut params = ParamSet::new();
        let mut layers = Vec::new();
        for l in 0..sizes.len() - 1 {
            let w = params.add_block(format!("dense{l}.w"), sizes[l + 1], sizes[l]);
            let b = params.add_block(format!("dense{l}.b"), sizes[l + 1], 1);
            let activation = if l + 2 == sizes.len() { Activation::Linear } else { hidden };
            layers.push(DenseLayer {
                in_dim: sizes[l],
                out_dim: sizes[l + 1],
                activation,
                w,
                b,
            });
        }
        Self { params, layers }
    }

    /// Fan-in uniform weights, zero biases.
    pub fn random<R: Rng>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes, hidden);
        for l in 0..net.layers.len() {
            let w = net.layers[l].w;
            net.params.init_fan_in(w, 1.0, rng);
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.out_dim));
        s
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("input of length {}", self.input_dim()),
                found: format!("length {}", x.len()),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.layers {
            let mut z = vec![0.0; layer.out_dim];
            affine(
                self.params.block(layer.w),
                self.params.block(layer.b),
                activations.last().unwrap(),
                &mut z,
            );
            for v in z.iter_mut() {
                *v = layer.activation.apply(*v);
            }
            activations.push(z);
        }
        let out = activations.last().unwrap().clone();
        Ok((
            out,
            MlpTape {
                stamp: TapeStamp(self.params.version()),
                activations,
            },
        ))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Accumulates parameter gradients of `dy . output` into
    /// `self.params.grads` and returns the input gradient.
    pub fn backward(&mut self, tape: &MlpTape, dy: &[f64]) -> Result<Vec<f64>> {
        tape.stamp.check(&self.params)?;
        if dy.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("upstream gradient of length {}", self.output_dim()),
                found: format!("length {}", dy.len()),
            });
        }
        let mut grad = dy.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &tape.activations[l + 1];
            for (g, a) in grad.iter_mut().zip(out) {
                *g *= layer.activation.grad_from_output(*a);
            }
            let x = &tape.activations[l];
            let mut dx = vec![0.0; layer.in_dim];
            let wr = self.params.blocks[layer.w].range();
            let br = self.params.blocks[layer.b].range();
            let (values, grads) = (&self.params.values, &mut self.params.grads);
            let (gw, gb) = if wr.start < br.start {
                let (lo, hi) = grads.split_at_mut(br.start);
                (&mut lo[wr.clone()], &mut hi[..br.len()])
            } else {
                let (lo, hi) = grads.split_at_mut(wr.start);
                (&mut hi[..wr.len()], &mut lo[br.clone()])
            };
            affine_backward(&values[wr.clone()], x, &grad, gw, gb, &mut dx);
            grad = dx;
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::component_rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Tanh);
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Tanh);
        net.params.values_mut().copy_from_slice(&[2.0, 1.0]);
        assert_eq!(net.predict(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn tanh_at_zero_has_unit_slope() {
        // f(w) = tanh(w x) with x = 1, w = 0, then a unit linear readout
        let mut net = Mlp::zeros(&[1, 1, 1], Activation::Tanh);
        net.params.values_mut().copy_from_slice(&[0.0, 0.0, 1.0, 0.0]);
        let (_, tape) = net.forward(&[1.0]).unwrap();
        net.backward(&tape, &[1.0]).unwrap();
        assert_eq!(net.params.grads[0], 1.0);
    }

    #[test]
    fn matches_scalar_reevaluation() {
        let mut rng = component_rng(11, "dense-test");
        let net = Mlp::random(&[3, 5, 4, 2], Activation::Tanh, &mut rng);
        let x = [0.1, -0.2, 0.3];
        let y = net.predict(&x).unwrap();
        // independent loop-by-loop evaluation
        let mut a: Vec<f64> = x.to_vec();
        for layer in &net.layers {
            let w = net.params.block(layer.w);
            let b = net.params.block(layer.b);
            let mut next = Vec::new();
            for o in 0..layer.out_dim {
                let mut z = b[o];
                for i in 0..layer.in_dim {
                    z += w[o * layer.in_dim + i] * a[i];
                }
                next.push(if layer.activation == Activation::Tanh { z.tanh() } else { z });
            }
            a = next;
        }
        assert_eq!(y, a);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = component_rng(3, "dense-test");
        let mut net = Mlp::random(&[3, 6, 2], Activation::Tanh, &mut rng);
        let (_, tape) = net.forward(&[0.3, 0.1, -0.4]).unwrap();
        let dx = net.backward(&tape, &[0.0, 0.0]).unwrap();
        assert!(net.params.grads.iter().all(|g| *g == 0.0));
        assert!(dx.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn backward_after_mutation_is_refused() {
        let mut rng = component_rng(3, "dense-test");
        let mut net = Mlp::random(&[2, 2], Activation::Tanh, &mut rng);
        let (_, tape) = net.forward(&[0.3, 0.1]).unwrap();
        net.params.set_value(0, 9.0);
        assert!(net.backward(&tape, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = Mlp::zeros(&[3, 2], Activation::Tanh);
        assert!(matches!(net.forward(&[1.0]), Err(Error::ShapeMismatch { .. })));
    }
}
