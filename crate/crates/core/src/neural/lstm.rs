//! Stacked LSTM with a dense readout, trained by backpropagation through time.
//!
//! Gate rows are ordered input, forget, candidate, output. Each layer keeps
//! one weight block of shape (4h, in + h) acting on `[x_t; h_{t-1}]`.

use rand::Rng;

use super::dense::{affine, affine_backward};
use super::params::{ParamSet, TapeStamp};
use crate::error::{Error, Result};

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmLayer {
    pub in_dim: usize,
    pub hidden: usize,
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone)]
struct StepCache {
    xh: Vec<f64>,
    c_prev: Vec<f64>,
    /// i, f, g, o after their nonlinearities
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerTape {
    steps: Vec<StepCache>,
    pub hs: Vec<Vec<f64>>,
    pub cs: Vec<Vec<f64>>,
}

impl LstmLayer {
    pub fn forward(&self, p: &ParamSet, seq: &[Vec<f64>], h0: &[f64], c0: &[f64]) -> Result<LayerTape> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        let h = self.hidden;
        let w = p.block(self.w);
        let b = p.block(self.b);
        let mut h_prev = h0.to_vec();
        let mut c_prev = c0.to_vec();
        let mut tape = LayerTape {
            steps: Vec::with_capacity(seq.len()),
            hs: Vec::with_capacity(seq.len()),
            cs: Vec::with_capacity(seq.len()),
        };
        let mut z = vec![0.0; 4 * h];
        for x in seq {
            if x.len() != self.in_dim {
                return Err(Error::ShapeMismatch {
                    expected: format!("step input of length {}", self.in_dim),
                    found: format!("length {}", x.len()),
                });
            }
            let mut xh = Vec::with_capacity(self.in_dim + h);
            xh.extend_from_slice(x);
            xh.extend_from_slice(&h_prev);
            affine(w, b, &xh, &mut z);
            let mut gates = vec![0.0; 4 * h];
            let mut c = vec![0.0; h];
            let mut tanh_c = vec![0.0; h];
            let mut hn = vec![0.0; h];
            for k in 0..h {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h + k]);
                let g = z[2 * h + k].tanh();
                let o = sigmoid(z[3 * h + k]);
                gates[k] = i;
                gates[h + k] = f;
                gates[2 * h + k] = g;
                gates[3 * h + k] = o;
                c[k] = f * c_prev[k] + i * g;
                tanh_c[k] = c[k].tanh();
                hn[k] = o * tanh_c[k];
            }
            tape.steps.push(StepCache {
                xh,
                c_prev: c_prev.clone(),
                gates,
                tanh_c,
            });
            tape.hs.push(hn.clone());
            tape.cs.push(c.clone());
            h_prev = hn;
            c_prev = c;
        }
        Ok(tape)
    }

    /// BPTT over the whole recorded sequence. `dh_ext[t]` is the gradient
    /// arriving at h_t from outside the layer. Returns the input gradients.
    pub fn backward(&self, p: &mut ParamSet, tape: &LayerTape, dh_ext: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h = self.hidden;
        let n = tape.steps.len();
        let wr = p.blocks[self.w].range();
        let br = p.blocks[self.b].range();
        let mut gw = vec![0.0; wr.len()];
        let mut gb = vec![0.0; br.len()];
        let mut dxs = vec![Vec::new(); n];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        let mut dxh = vec![0.0; self.in_dim + h];
        let w = &p.values[wr.clone()];
        for t in (0..n).rev() {
            let s = &tape.steps[t];
            for k in 0..h {
                let (i, f, g, o) = (s.gates[k], s.gates[h + k], s.gates[2 * h + k], s.gates[3 * h + k]);
                let dh = dh_ext[t][k] + dh_next[k];
                let tc = s.tanh_c[k];
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = dc * s.c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - g * g);
                dz[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            affine_backward(w, &s.xh, &dz, &mut gw, &mut gb, &mut dxh);
            dxs[t] = dxh[..self.in_dim].to_vec();
            dh_next.copy_from_slice(&dxh[self.in_dim..]);
        }
        for (g, d) in p.grads[wr].iter_mut().zip(&gw) {
            *g += d;
        }
        for (g, d) in p.grads[br].iter_mut().zip(&gb) {
            *g += d;
        }
        dxs
    }
}

/// input -> LSTM -> dropout -> LSTM -> dropout -> dense (linear).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmNet {
    pub params: ParamSet,
    pub layers: Vec<LstmLayer>,
    pub head_w: usize,
    pub head_b: usize,
    pub out_dim: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct LstmNetTape {
    stamp: TapeStamp,
    layers: Vec<LayerTape>,
    /// inverted-dropout masks on the inputs of layers 1.., training only
    masks: Option<Vec<Vec<Vec<f64>>>>,
    head_in: Vec<f64>,
    head_mask: Option<Vec<f64>>,
}

impl LstmNet {
    pub fn zeros(in_dim: usize, hidden: &[usize], out_dim: usize, dropout: f64) -> Self {
        let mut params = ParamSet::new();
        let mut layers = Vec::new();
        let mut prev = in_dim;
        for (l, &h) in hidden.iter().enumerate() {
            let w = params.add_block(format!("lstm{l}.w"), 4 * h, prev + h);
            let b = params.add_block(format!("lstm{l}.b"), 4 * h, 1);
            layers.push(LstmLayer {
                in_dim: prev,
                hidden: h,
                w,
                b,
            });
            prev = h;
        }
        let head_w = params.add_block("head.w", out_dim, prev);
        let head_b = params.add_block("head.b", out_dim, 1);
        Self {
            params,
            layers,
            head_w,
            head_b,
            out_dim,
            dropout,
        }
    }

    /// Fan-in uniform weights, forget-gate bias 1, other biases 0.
    pub fn random<R: Rng>(in_dim: usize, hidden: &[usize], out_dim: usize, dropout: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(in_dim, hidden, out_dim, dropout);
        for l in 0..net.layers.len() {
            let layer = net.layers[l];
            net.params.init_fan_in(layer.w, 1.0, rng);
            let b = net.params.block_mut(layer.b);
            for v in &mut b[layer.hidden..2 * layer.hidden] {
                *v = 1.0;
            }
        }
        net.params.init_fan_in(net.head_w, 1.0, rng);
        net
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden).collect()
    }

    fn mask<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let keep = 1.0 - self.dropout;
        (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }

    /// Deterministic forward pass, dropout disabled.
    pub fn forward(&self, seq: &[Vec<f64>]) -> Result<(Vec<f64>, LstmNetTape)> {
        self.forward_impl::<rand_chacha::ChaCha8Rng>(seq, None)
    }

    /// Training forward pass with fresh dropout masks.
    pub fn forward_train<R: Rng>(&self, seq: &[Vec<f64>], rng: &mut R) -> Result<(Vec<f64>, LstmNetTape)> {
        if self.dropout > 0.0 {
            self.forward_impl(seq, Some(rng))
        } else {
            self.forward(seq)
        }
    }

    pub fn predict(&self, seq: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.forward(seq)?.0)
    }

    fn forward_impl<R: Rng>(&self, seq: &[Vec<f64>], mut rng: Option<&mut R>) -> Result<(Vec<f64>, LstmNetTape)> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut masks: Option<Vec<Vec<Vec<f64>>>> = rng.as_ref().map(|_| Vec::new());
        let mut current: Vec<Vec<f64>> = seq.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                if let (Some(r), Some(ms)) = (rng.as_deref_mut(), masks.as_mut()) {
                    let m: Vec<Vec<f64>> = (0..current.len()).map(|_| self.mask(layer.in_dim, r)).collect();
                    for (row, mrow) in current.iter_mut().zip(&m) {
                        for (v, k) in row.iter_mut().zip(mrow) {
                            *v *= k;
                        }
                    }
                    ms.push(m);
                }
            }
            let zeros = vec![0.0; layer.hidden];
            let tape = layer.forward(&self.params, &current, &zeros, &zeros)?;
            current = tape.hs.clone();
            layers.push(tape);
        }
        let mut head_in = current.last().unwrap().clone();
        let head_mask = rng.map(|r| {
            let m = self.mask(head_in.len(), r);
            for (v, k) in head_in.iter_mut().zip(&m) {
                *v *= k;
            }
            m
        });
        let mut out = vec![0.0; self.out_dim];
        affine(
            self.params.block(self.head_w),
            self.params.block(self.head_b),
            &head_in,
            &mut out,
        );
        Ok((
            out,
            LstmNetTape {
                stamp: TapeStamp(self.params.version()),
                layers,
                masks,
                head_in,
                head_mask,
            },
        ))
    }

    /// Accumulates gradients of `dy . output` into the parameter buffer.
    pub fn backward(&mut self, tape: &LstmNetTape, dy: &[f64]) -> Result<()> {
        tape.stamp.check(&self.params)?;
        if dy.len() != self.out_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("upstream gradient of length {}", self.out_dim),
                found: format!("length {}", dy.len()),
            });
        }
        let hw = self.params.blocks[self.head_w].range();
        let hb = self.params.blocks[self.head_b].range();
        let mut gw = vec![0.0; hw.len()];
        let mut gb = vec![0.0; hb.len()];
        let mut dh_last = vec![0.0; tape.head_in.len()];
        affine_backward(&self.params.values[hw.clone()], &tape.head_in, dy, &mut gw, &mut gb, &mut dh_last);
        for (g, d) in self.params.grads[hw].iter_mut().zip(&gw) {
            *g += d;
        }
        for (g, d) in self.params.grads[hb].iter_mut().zip(&gb) {
            *g += d;
        }
        if let Some(m) = &tape.head_mask {
            for (g, k) in dh_last.iter_mut().zip(m) {
                *g *= k;
            }
        }
        let n = tape.layers[0].steps.len();
        let top = self.layers.len() - 1;
        let mut dh_ext: Vec<Vec<f64>> = vec![vec![0.0; self.layers[top].hidden]; n];
        dh_ext[n - 1] = dh_last;
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let mut dx = layer.backward(&mut self.params, &tape.layers[l], &dh_ext);
            if l == 0 {
                break;
            }
            if let Some(ms) = &tape.masks {
                for (row, mrow) in dx.iter_mut().zip(&ms[l - 1]) {
                    for (v, k) in row.iter_mut().zip(mrow) {
                        *v *= k;
                    }
                }
            }
            dh_ext = dx;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::component_rng;

    fn seq(n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|t| (0..d).map(|k| ((t * d + k) as f64 * 0.37).sin()).collect())
            .collect()
    }

    #[test]
    fn zero_parameters_give_zero_state() {
        let net = LstmNet::zeros(4, &[5, 3], 2, 0.0);
        let layer = net.layers[0];
        let tape = layer.forward(&net.params, &seq(4, 4), &[0.0; 5], &[0.0; 5]).unwrap();
        // i = f = o = 0.5, g = 0: the cell never charges
        assert!(tape.hs.last().unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(net.predict(&seq(4, 4)).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_keeps_cell() {
        let mut net = LstmNet::zeros(2, &[3], 1, 0.0);
        let layer = net.layers[0];
        let b = net.params.block_mut(layer.b);
        for k in 0..3 {
            b[k] = -1e3; // input gate shut
            b[3 + k] = 1e3; // forget gate open
        }
        let c0 = [0.3, -0.7, 1.1];
        let tape = layer.forward(&net.params, &seq(6, 2), &[0.0; 3], &c0).unwrap();
        for c in &tape.cs {
            assert_eq!(c.as_slice(), &c0);
        }
    }

    #[test]
    fn matches_manual_recurrence() {
        let mut rng = component_rng(5, "lstm-test");
        let net = LstmNet::random(2, &[3], 1, 0.0, &mut rng);
        let layer = net.layers[0];
        let xs = seq(3, 2);
        let tape = layer.forward(&net.params, &xs, &[0.0; 3], &[0.0; 3]).unwrap();
        let w = net.params.block(layer.w);
        let b = net.params.block(layer.b);
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
        for x in &xs {
            let inp = [x[0], x[1], h[0], h[1], h[2]];
            let pre = |row: usize| b[row] + (0..5).map(|j| w[row * 5 + j] * inp[j]).sum::<f64>();
            let mut hn = vec![0.0; 3];
            for k in 0..3 {
                let i = sig(pre(k));
                let f = sig(pre(3 + k));
                let g = pre(6 + k).tanh();
                let o = sig(pre(9 + k));
                c[k] = f * c[k] + i * g;
                hn[k] = o * c[k].tanh();
            }
            h = hn;
        }
        for k in 0..3 {
            assert!((tape.hs[2][k] - h[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let net = LstmNet::zeros(2, &[3], 1, 0.0);
        assert!(matches!(net.predict(&[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn zero_loss_gradient_leaves_grads_zero() {
        let mut rng = component_rng(5, "lstm-test");
        let mut net = LstmNet::random(2, &[3, 2], 2, 0.0, &mut rng);
        let (_, tape) = net.forward(&seq(3, 2)).unwrap();
        net.backward(&tape, &[0.0, 0.0]).unwrap();
        assert!(net.params.grads.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn inference_ignores_dropout() {
        let mut rng = component_rng(5, "lstm-test");
        let net = LstmNet::random(4, &[6, 3], 3, 0.5, &mut rng);
        let x = seq(5, 4);
        assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
        let (a, _) = net.forward_train(&x, &mut rng).unwrap();
        let (b, _) = net.forward_train(&x, &mut rng).unwrap();
        assert_ne!(a, b);
    }
}
