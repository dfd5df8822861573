//! Fully connected ReLU networks with exact reverse-mode gradients.
//!
//! Every layer computes `h = W a + b`; hidden layers apply ReLU and the last
//! layer is linear. Batches are row-major matrices with one example per row.
//! The ReLU derivative at exactly zero is taken to be zero.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, DenseMatrix, Trans};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Layer>,
    /// Unit-norm left singular vector estimate per layer, reused across
    /// power iterations.
    sn_state: Vec<Vec<f64>>,
}

/// Per-layer activations recorded by a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Activation entering each layer (`batch × in_k`); `inputs[0]` is the
    /// network input.
    pub inputs: Vec<DenseMatrix>,
    /// Pre-activation of each layer (`batch × out_k`); the last entry is the
    /// network output.
    pub pre: Vec<DenseMatrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &DenseMatrix {
        self.pre.last().expect("cache has at least one layer")
    }
}

/// Gradients with the same block structure as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params
                .layers
                .iter()
                .map(|l| DenseMatrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    /// `self += c * other`
    pub fn add_scaled(&mut self, c: f64, other: &MlpGrads) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            for (a, b) in w.data_mut().iter_mut().zip(o.data()) {
                *a += c * b;
            }
        }
        for (w, o) in self.biases.iter_mut().zip(&other.biases) {
            for (a, b) in w.iter_mut().zip(o) {
                *a += c * b;
            }
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn is_zero(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|&v| v == 0.0))
    }
}

fn unit_vector(n: usize) -> Vec<f64> {
    vec![1.0 / (n.max(1) as f64).sqrt(); n]
}

fn relu_inplace(m: &mut DenseMatrix) {
    m.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Zeroes `g` wherever the matching pre-activation is not strictly positive.
fn relu_mask_inplace(g: &mut DenseMatrix, pre: &DenseMatrix) {
    for (gv, &p) in g.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *gv = 0.0;
        }
    }
}

fn add_bias_rows(m: &mut DenseMatrix, bias: &[f64]) {
    let cols = m.cols();
    if cols == 0 {
        return;
    }
    for row in m.data_mut().chunks_exact_mut(cols) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn column_sums(m: &DenseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

impl MlpParams {
    /// Validates that consecutive layer dimensions chain.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return shape_err("network needs at least one layer");
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return shape_err(format!(
                    "layer {k}: bias length {} vs out-dim {}",
                    l.bias.len(),
                    l.out_dim()
                ));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return shape_err(format!(
                    "layer {k} out-dim {} does not match layer {} in-dim {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                ));
            }
        }
        let sn_state = layers.iter().map(|l| unit_vector(l.out_dim())).collect();
        Ok(Self { layers, sn_state })
    }

    /// Rebuilds a network with explicit power-iteration state.
    pub fn with_sn_state(layers: Vec<Layer>, sn_state: Vec<Vec<f64>>) -> Result<Self> {
        let mut p = Self::new(layers)?;
        if sn_state.len() != p.layers.len() {
            return shape_err("sn_state must hold one vector per layer");
        }
        for (k, (s, l)) in sn_state.iter().zip(&p.layers).enumerate() {
            if s.len() != l.out_dim() {
                return shape_err(format!("sn_state {k} has length {}, expected {}", s.len(), l.out_dim()));
            }
        }
        p.sn_state = sn_state;
        Ok(p)
    }

    /// All weights and biases zero. `dims` lists input, hidden and output widths.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return shape_err("dims must list at least input and output width");
        }
        Self::new(
            dims.windows(2)
                .map(|w| Layer {
                    weight: DenseMatrix::zeros(w[1], w[0]),
                    bias: vec![0.0; w[1]],
                })
                .collect(),
        )
    }

    /// He initialisation: weights `N(0, 2 / fan_in)`, zero biases.
    pub fn he_init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        for layer in &mut p.layers {
            let std = (2.0 / layer.in_dim().max(1) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            layer
                .weight
                .data_mut()
                .iter_mut()
                .for_each(|w| *w = normal.sample(rng));
        }
        for (state, layer) in p.sn_state.iter_mut().zip(&p.layers) {
            let mut v: Vec<f64> = (0..layer.out_dim())
                .map(|_| rand_distr::StandardNormal.sample(rng))
                .collect();
            let n = super::matrix::norm2(&v);
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
                *state = v;
            }
        }
        Ok(p)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn sn_state(&self) -> &[Vec<f64>] {
        &self.sn_state
    }

    pub fn sn_state_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.sn_state
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    /// Mutable parameter blocks: weight then bias for each layer.
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let Layer { weight, bias } = l;
                [weight.data_mut(), bias.as_mut_slice()]
            })
            .collect()
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    pub fn block_name(index: usize) -> String {
        let kind = if index % 2 == 0 { "weight" } else { "bias" };
        format!("layer {} {kind}", index / 2)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.in_dim() {
            return shape_err(format!(
                "input width {} does not match network in-dim {}",
                x.cols(),
                self.in_dim()
            ));
        }
        Ok(())
    }

    /// Batched forward pass keeping every intermediate needed by backward.
    pub fn forward_batch(&self, x: &DenseMatrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let depth = self.layers.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut current = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut h = DenseMatrix::zeros(x.rows(), layer.out_dim());
            gemm(1.0, &current, Trans::No, &layer.weight, Trans::Yes, 0.0, &mut h);
            add_bias_rows(&mut h, &layer.bias);
            inputs.push(current);
            if k + 1 < depth {
                let mut a = h.clone();
                relu_inplace(&mut a);
                pre.push(h);
                current = a;
            } else {
                pre.push(h);
                current = DenseMatrix::zeros(0, 0);
            }
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// Batched forward pass returning only the output.
    pub fn predict_batch(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.predict_prefix(x, self.layers.len())
    }

    /// Output of the first `n_layers` layers, with ReLU applied after each
    /// hidden layer (the final network layer stays linear).
    pub fn predict_prefix(&self, x: &DenseMatrix, n_layers: usize) -> Result<DenseMatrix> {
        self.check_input(x)?;
        if n_layers == 0 || n_layers > self.layers.len() {
            return shape_err(format!("prefix of {n_layers} layers out of {}", self.layers.len()));
        }
        let mut current = x.clone();
        for (k, layer) in self.layers[..n_layers].iter().enumerate() {
            let mut h = DenseMatrix::zeros(x.rows(), layer.out_dim());
            gemm(1.0, &current, Trans::No, &layer.weight, Trans::Yes, 0.0, &mut h);
            add_bias_rows(&mut h, &layer.bias);
            if k + 1 < self.layers.len() {
                relu_inplace(&mut h);
            }
            current = h;
        }
        Ok(current)
    }

    fn check_cache(&self, cache: &ForwardCache, out_grad: &DenseMatrix) -> Result<usize> {
        let depth = self.layers.len();
        if cache.inputs.len() != depth || cache.pre.len() != depth {
            return shape_err("stale cache: layer count differs from network");
        }
        let batch = cache.inputs[0].rows();
        for (k, layer) in self.layers.iter().enumerate() {
            if cache.inputs[k].cols() != layer.in_dim()
                || cache.pre[k].cols() != layer.out_dim()
                || cache.inputs[k].rows() != batch
                || cache.pre[k].rows() != batch
            {
                return shape_err(format!("stale cache: layer {k} shape mismatch"));
            }
        }
        if out_grad.rows() != batch || out_grad.cols() != self.out_dim() {
            return shape_err(format!(
                "output gradient is {}x{}, expected {}x{}",
                out_grad.rows(),
                out_grad.cols(),
                batch,
                self.out_dim()
            ));
        }
        Ok(batch)
    }

    /// Reverse-mode gradients of `Σ_rows ⟨out_grad, output⟩` with respect to
    /// all parameters and to the input batch.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        out_grad: &DenseMatrix,
    ) -> Result<(MlpGrads, DenseMatrix)> {
        self.backward_impl(cache, out_grad, true)
            .map(|(g, i)| (g.expect("requested"), i))
    }

    /// Same as [`backward_batch`](Self::backward_batch) but skips the
    /// parameter gradients.
    pub fn input_gradient_batch(&self, cache: &ForwardCache, out_grad: &DenseMatrix) -> Result<DenseMatrix> {
        self.backward_impl(cache, out_grad, false).map(|(_, i)| i)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        out_grad: &DenseMatrix,
        with_params: bool,
    ) -> Result<(Option<MlpGrads>, DenseMatrix)> {
        let batch = self.check_cache(cache, out_grad)?;
        let mut grads = with_params.then(|| MlpGrads::zeros_like(self));
        let mut delta = out_grad.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if let Some(g) = grads.as_mut() {
                gemm(1.0, &delta, Trans::Yes, &cache.inputs[k], Trans::No, 0.0, &mut g.weights[k]);
                g.biases[k] = column_sums(&delta);
            }
            let mut below = DenseMatrix::zeros(batch, layer.in_dim());
            gemm(1.0, &delta, Trans::No, &layer.weight, Trans::No, 0.0, &mut below);
            if k > 0 {
                relu_mask_inplace(&mut below, &cache.pre[k - 1]);
            }
            delta = below;
        }
        Ok((grads, delta))
    }

    /// Squared input-gradient norm `‖∂f/∂x‖²` for every row of a scalar-output
    /// network, plus `Σ_i row_weights[i] · ∂‖∂f/∂x_i‖²/∂θ`.
    ///
    /// The ReLU second derivative is zero almost everywhere, so for a fixed
    /// activation pattern the input gradient is the linear chain
    /// `W_1ᵀ D_1 W_2ᵀ D_2 … W_Lᵀ`, which is differentiated in closed form.
    /// Biases only move the activation pattern and receive zero gradient.
    pub fn input_grad_sq_norm_batch(
        &self,
        x: &DenseMatrix,
        row_weights: &[f64],
    ) -> Result<(Vec<f64>, MlpGrads)> {
        if self.out_dim() != 1 {
            return Err(crate::error::NcError::Contract(format!(
                "input-gradient norm needs a scalar network, out-dim is {}",
                self.out_dim()
            )));
        }
        if row_weights.len() != x.rows() {
            return shape_err("one weight per input row required");
        }
        let cache = self.forward_batch(x)?;
        self.input_grad_sq_norm_from_cache(&cache, row_weights)
    }

    pub(crate) fn input_grad_sq_norm_from_cache(
        &self,
        cache: &ForwardCache,
        row_weights: &[f64],
    ) -> Result<(Vec<f64>, MlpGrads)> {
        let depth = self.layers.len();
        let batch = cache.inputs[0].rows();

        // Forward over the chain: v[k] = D_k ⊙ u[k] for hidden layer k
        // (1-based, matching W_k), with u[L-1] the broadcast output row.
        // `masked[k-1]` holds v_k for k = 1..L-1.
        let last = &self.layers[depth - 1];
        let mut u = DenseMatrix::zeros(batch, last.in_dim());
        for r in 0..batch {
            u.row_mut(r).copy_from_slice(last.weight.row(0));
        }
        let mut masked: Vec<DenseMatrix> = vec![DenseMatrix::zeros(0, 0); depth - 1];
        for k in (1..depth).rev() {
            let mut v = u;
            relu_mask_inplace(&mut v, &cache.pre[k - 1]);
            let mut next = DenseMatrix::zeros(batch, self.layers[k - 1].in_dim());
            gemm(1.0, &v, Trans::No, &self.layers[k - 1].weight, Trans::No, 0.0, &mut next);
            masked[k - 1] = v;
            u = next;
        }
        let input_grad = u;
        let values: Vec<f64> = input_grad.iter_rows().map(|g| super::matrix::dot(g, g)).collect();

        // Reverse over the chain.
        let mut grads = MlpGrads::zeros_like(self);
        let mut s = input_grad;
        for (r, &w) in row_weights.iter().enumerate() {
            s.row_mut(r).iter_mut().for_each(|v| *v *= 2.0 * w);
        }
        for k in 1..depth {
            // u_{k-1} = v_k W_k  ⇒  dW_k = v_kᵀ s
            let v = &masked[k - 1];
            gemm(1.0, v, Trans::Yes, &s, Trans::No, 0.0, &mut grads.weights[k - 1]);
            let mut sv = DenseMatrix::zeros(batch, self.layers[k - 1].out_dim());
            gemm(1.0, &s, Trans::No, &self.layers[k - 1].weight, Trans::Yes, 0.0, &mut sv);
            relu_mask_inplace(&mut sv, &cache.pre[k - 1]);
            s = sv;
        }
        // u_{L-1} = broadcast row of W_L
        let top = column_sums(&s);
        grads.weights[depth - 1].row_mut(0).copy_from_slice(&top);
        Ok((values, grads))
    }
}

/// Single-example forward pass.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let x = DenseMatrix::from_vec(1, input.len(), input.to_vec())?;
    let cache = params.forward_batch(&x)?;
    Ok((cache.output().row(0).to_vec(), cache))
}

/// Single-example backward pass.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    output_grad: &[f64],
) -> Result<(MlpGrads, Vec<f64>)> {
    let g = DenseMatrix::from_vec(1, output_grad.len(), output_grad.to_vec())?;
    let (grads, input_grad) = params.backward_batch(cache, &g)?;
    Ok((grads, input_grad.into_data()))
}

/// `‖∂f/∂x‖²` at one input and its exact parameter gradient.
pub fn input_gradient_sq_norm(params: &MlpParams, input: &[f64]) -> Result<(f64, MlpGrads)> {
    let x = DenseMatrix::from_vec(1, input.len(), input.to_vec())?;
    let (values, grads) = params.input_grad_sq_norm_batch(&x, &[1.0])?;
    Ok((values[0], grads))
}
