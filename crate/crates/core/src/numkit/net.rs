use rand::Rng as _;

use super::matrix::{gemm_raw, Matrix};
use crate::error::{ensure_shape, Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
}

/// Fully connected network: tanh on hidden layers, identity output.
///
/// All parameters live in one flat buffer. Layer `l` stores its weight as a
/// `fan_in × fan_out` row-major block followed by a `fan_out` bias, so a
/// forward pass is `A · W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardNet {
    sizes: Vec<usize>,
    spans: Vec<LayerSpan>,
    params: Vec<f32>,
}

fn layout(sizes: &[usize]) -> Result<(Vec<LayerSpan>, usize)> {
    if sizes.len() < 2 {
        return Err(Error::Config(format!("network needs at least 2 layer sizes, got {sizes:?}")));
    }
    if sizes.contains(&0) {
        return Err(Error::Config(format!("zero-width layer in {sizes:?}")));
    }
    let mut spans = Vec::with_capacity(sizes.len() - 1);
    let mut offset = 0;
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        spans.push(LayerSpan { fan_in, fan_out, weight: offset, bias: offset + fan_in * fan_out });
        offset += fan_in * fan_out + fan_out;
    }
    Ok((spans, offset))
}

impl FeedForwardNet {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        let (spans, n) = layout(sizes)?;
        Ok(FeedForwardNet { sizes: sizes.to_vec(), spans, params: vec![0.0; n] })
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for span in net.spans.clone() {
            let limit = (6.0 / (span.fan_in + span.fan_out) as f32).sqrt();
            for w in &mut net.params[span.weight..span.bias] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f32>) -> Result<Self> {
        let (spans, n) = layout(sizes)?;
        ensure_shape!(
            params.len() == n,
            "{} parameters for layer sizes {sizes:?} (expected {n})",
            params.len()
        );
        Ok(FeedForwardNet { sizes: sizes.to_vec(), spans, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.spans.len()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn weight(&self, layer: usize) -> &[f32] {
        let s = self.spans[layer];
        &self.params[s.weight..s.bias]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [f32] {
        let s = self.spans[layer];
        &mut self.params[s.weight..s.bias]
    }

    pub fn bias(&self, layer: usize) -> &[f32] {
        let s = self.spans[layer];
        &self.params[s.bias..s.bias + s.fan_out]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f32] {
        let s = self.spans[layer];
        &mut self.params[s.bias..s.bias + s.fan_out]
    }

    /// Multiplies the output layer's weights by `s`.
    pub fn scale_output_layer(&mut self, s: f32) {
        let last = self.n_layers() - 1;
        self.weight_mut(last).iter_mut().for_each(|w| *w *= s);
    }

    fn affine(&self, layer: usize, input: &Matrix) -> Matrix {
        let s = self.spans[layer];
        let batch = input.rows();
        let bias = self.bias(layer);
        let mut out = Matrix::zeros(batch, s.fan_out);
        for r in 0..batch {
            out.row_mut(r).copy_from_slice(bias);
        }
        gemm_raw(
            batch,
            s.fan_in,
            s.fan_out,
            1.0,
            input.as_slice(),
            false,
            self.weight(layer),
            false,
            1.0,
            out.as_mut_slice(),
        );
        if layer + 1 < self.n_layers() {
            out.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
        }
        out
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        ensure_shape!(
            input.cols() == self.input_dim(),
            "network input has {} columns, expected {}",
            input.cols(),
            self.input_dim()
        );
        Ok(())
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut act = self.affine(0, input);
        for layer in 1..self.n_layers() {
            act = self.affine(layer, &act);
        }
        Ok(act)
    }

    /// Forward pass that keeps every layer input for a later [`backward`](Self::backward).
    pub fn forward_recorded(&self, input: &Matrix) -> Result<(Matrix, GradientTape)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        inputs.push(input.clone());
        for layer in 0..self.n_layers() - 1 {
            let next = self.affine(layer, &inputs[layer]);
            inputs.push(next);
        }
        let out = self.affine(self.n_layers() - 1, inputs.last().unwrap());
        let tape = GradientTape {
            sizes: self.sizes.clone(),
            inputs,
            grads: vec![0.0; self.param_count()],
        };
        Ok((out, tape))
    }

    /// Accumulates dL/dθ into `tape` given dL/d(output).
    pub fn backward(&self, tape: &mut GradientTape, output_grad: &Matrix) -> Result<()> {
        if tape.sizes != self.sizes || tape.grads.len() != self.param_count() {
            return Err(Error::State(format!(
                "tape recorded for layers {:?}, network has {:?}",
                tape.sizes, self.sizes
            )));
        }
        let batch = tape.inputs[0].rows();
        ensure_shape!(
            output_grad.rows() == batch && output_grad.cols() == self.output_dim(),
            "output gradient is {}x{}, expected {batch}x{}",
            output_grad.rows(),
            output_grad.cols(),
            self.output_dim()
        );
        let mut delta = output_grad.clone();
        for layer in (0..self.n_layers()).rev() {
            let s = self.spans[layer];
            let input = &tape.inputs[layer];
            gemm_raw(
                s.fan_in,
                batch,
                s.fan_out,
                1.0,
                input.as_slice(),
                true,
                delta.as_slice(),
                false,
                1.0,
                &mut tape.grads[s.weight..s.bias],
            );
            let gb = &mut tape.grads[s.bias..s.bias + s.fan_out];
            for r in 0..batch {
                for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            if layer > 0 {
                let mut prev = Matrix::zeros(batch, s.fan_in);
                gemm_raw(
                    batch,
                    s.fan_out,
                    s.fan_in,
                    1.0,
                    delta.as_slice(),
                    false,
                    self.weight(layer),
                    true,
                    0.0,
                    prev.as_mut_slice(),
                );
                for (p, a) in prev.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        Ok(())
    }
}

/// Per-call record of layer inputs plus accumulated parameter gradients.
/// Gradients share the network's flat parameter layout.
#[derive(Clone, Debug)]
pub struct GradientTape {
    sizes: Vec<usize>,
    inputs: Vec<Matrix>,
    grads: Vec<f32>,
}

impl GradientTape {
    pub fn gradients(&self) -> &[f32] {
        &self.grads
    }

    pub fn into_gradients(self) -> Vec<f32> {
        self.grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Scalar f64 re-evaluation of the network, independent of gemm.
    fn oracle_forward(sizes: &[usize], params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        let mut off = 0;
        let n_layers = sizes.len() - 1;
        for l in 0..n_layers {
            let (fi, fo) = (sizes[l], sizes[l + 1]);
            let mut out = vec![0.0; fo];
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = params[off + fi * fo + j];
                for (i, a) in act.iter().enumerate() {
                    acc += a * params[off + i * fo + j];
                }
                *o = if l + 1 < n_layers { acc.tanh() } else { acc };
            }
            off += fi * fo + fo;
            act = out;
        }
        act
    }

    fn oracle_sq_loss(sizes: &[usize], params: &[f64], x: &Matrix, target: &Matrix) -> f64 {
        let mut loss = 0.0;
        for r in 0..x.rows() {
            let xr: Vec<f64> = x.row(r).iter().map(|&v| v as f64).collect();
            let out = oracle_forward(sizes, params, &xr);
            for (o, t) in out.iter().zip(target.row(r)) {
                loss += 0.5 * (o - *t as f64).powi(2);
            }
        }
        loss
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        crate::rng::fill_normal(rng, m.as_mut_slice());
        m
    }

    /// Worst relative error between the tape gradient and central differences of the
    /// squared-error loss.
    fn fd_check(sizes: &[usize], seed: u64, h: f64) -> f64 {
        let mut r = rng::seeded(seed);
        let net = FeedForwardNet::xavier(sizes, &mut r).unwrap();
        let x = random_matrix(3, sizes[0], &mut r);
        let target = random_matrix(3, *sizes.last().unwrap(), &mut r);
        let (out, mut tape) = net.forward_recorded(&x).unwrap();
        let g = out.sub(&target).unwrap();
        net.backward(&mut tape, &g).unwrap();
        let base: Vec<f64> = net.params().iter().map(|&v| v as f64).collect();
        let mut worst: f64 = 0.0;
        for (i, &analytic) in tape.gradients().iter().enumerate() {
            let mut p = base.clone();
            p[i] += h;
            let up = oracle_sq_loss(sizes, &p, &x, &target);
            p[i] -= 2.0 * h;
            let down = oracle_sq_loss(sizes, &p, &x, &target);
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(analytic.abs() as f64).max(1e-2);
            worst = worst.max((analytic as f64 - fd).abs() / denom);
        }
        worst
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = FeedForwardNet::zeros(&[3, 5, 2]).unwrap();
        let x = Matrix::from_fn(4, 3, |r, c| r as f32 - c as f32);
        assert!(net.forward(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = FeedForwardNet::zeros(&[3, 3]).unwrap();
        net.weight_mut(0).copy_from_slice(Matrix::identity(3).as_slice());
        let x = Matrix::from_vec(1, 3, vec![1.5, -2.0, 0.25]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let sizes = [4, 6, 3];
        let mut r = rng::seeded(11);
        let net = FeedForwardNet::xavier(&sizes, &mut r).unwrap();
        let x = random_matrix(3, 4, &mut r);
        let out = net.forward(&x).unwrap();
        let p: Vec<f64> = net.params().iter().map(|&v| v as f64).collect();
        for row in 0..3 {
            let xr: Vec<f64> = x.row(row).iter().map(|&v| v as f64).collect();
            for (g, w) in out.row(row).iter().zip(oracle_forward(&sizes, &p, &xr)) {
                assert!((*g as f64 - w).abs() <= 1e-6 * w.abs().max(1.0), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = FeedForwardNet::zeros(&[3, 2]).unwrap();
        assert!(matches!(net.forward(&Matrix::zeros(1, 4)), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = FeedForwardNet::xavier(&[5, 8, 8, 2], &mut rng::seeded(3)).unwrap();
        let x = random_matrix(7, 5, &mut rng::seeded(4));
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let (c, _) = net.forward_recorded(&x).unwrap();
        assert_eq!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let net = FeedForwardNet::xavier(&[3, 4, 2], &mut rng::seeded(1)).unwrap();
        let (_, mut tape) = net.forward_recorded(&Matrix::from_fn(2, 3, |r, c| (r + c) as f32)).unwrap();
        net.backward(&mut tape, &Matrix::zeros(2, 2)).unwrap();
        assert!(tape.gradients().iter().all(|&g| g == 0.0));
        assert_eq!(tape.gradients().len(), net.param_count());
    }

    #[test]
    fn linear_layer_gradient_matches_finite_differences() {
        assert!(fd_check(&[4, 3], 5, 1e-3) < 1e-4);
    }

    #[test]
    fn three_layer_tanh_gradient_matches_finite_differences() {
        for probe in 0..16 {
            let err = fd_check(&[3, 5, 4, 2], 100 + probe, 1e-3);
            assert!(err < 1e-3, "probe {probe}: rel err {err}");
        }
    }

    #[test]
    fn backward_rejects_foreign_tape() {
        let a = FeedForwardNet::zeros(&[2, 3, 1]).unwrap();
        let b = FeedForwardNet::zeros(&[2, 4, 1]).unwrap();
        let (_, mut tape) = a.forward_recorded(&Matrix::zeros(1, 2)).unwrap();
        assert!(matches!(b.backward(&mut tape, &Matrix::zeros(1, 1)), Err(Error::State(_))));
    }

    #[test]
    fn layout_rejects_bad_sizes() {
        assert!(FeedForwardNet::zeros(&[3]).is_err());
        assert!(FeedForwardNet::zeros(&[3, 0, 1]).is_err());
        assert!(FeedForwardNet::from_params(&[2, 1], vec![0.0; 2]).is_err());
        assert_eq!(FeedForwardNet::zeros(&[2, 3, 1]).unwrap().param_count(), 2 * 3 + 3 + 3 + 1);
    }
}
