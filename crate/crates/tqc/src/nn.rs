//! Dense ReLU networks with hand-rolled reverse-mode differentiation.
//!
//! Networks are multilayer perceptrons with ReLU on hidden layers and an
//! identity output layer. Parameters live in a flat [`ParamVector`] so that
//! optimizer state, EMA targets, and finite-difference probes all operate on
//! plain slices.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Architecture of a dense net: `input_dim -> hidden... -> output_dim`,
/// ReLU on hidden layers, identity on the output layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseNetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl DenseNetSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument(
                "all layer sizes must be positive".into(),
            ));
        }
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
        })
    }

    /// `(fan_in, fan_out)` of every affine layer, in forward order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(fi, fo)| (fi + 1) * fo)
            .sum()
    }
}

/// Flat parameter storage plus the layer layout needed to slice it back into
/// weight matrices and bias vectors. Per layer: row-major `W (fan_out x
/// fan_in)` followed by `b (fan_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    dims: Vec<(usize, usize)>,
}

impl ParamVector {
    pub fn zeros(spec: &DenseNetSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            dims: spec.layer_dims(),
        }
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer.
    pub fn init_uniform<R: Rng>(spec: &DenseNetSpec, rng: &mut R) -> Self {
        let mut pv = Self::zeros(spec);
        let mut offset = 0;
        for &(fan_in, fan_out) in &pv.dims.clone() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = (fan_in + 1) * fan_out;
            for v in &mut pv.values[offset..offset + n] {
                *v = rng.gen_range(-bound..=bound);
            }
            offset += n;
        }
        pv
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn dims(&self) -> &[(usize, usize)] {
        &self.dims
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.dims == other.dims && self.values.len() == other.values.len()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.dims[..layer]
            .iter()
            .map(|&(fi, fo)| (fi + 1) * fo)
            .sum()
    }

    /// Weight matrix of `layer` as a `(fan_out, fan_in)` view.
    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (fan_in, fan_out) = self.dims[layer];
        let off = self.layer_offset(layer);
        ArrayView2::from_shape((fan_out, fan_in), &self.values[off..off + fan_in * fan_out])
            .expect("layout invariant")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (fan_in, fan_out) = self.dims[layer];
        let off = self.layer_offset(layer) + fan_in * fan_out;
        ArrayView1::from_shape(fan_out, &self.values[off..off + fan_out]).expect("layout invariant")
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let (fan_in, fan_out) = self.dims[layer];
        let off = self.layer_offset(layer);
        &mut self.values[off..off + fan_in * fan_out]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let (fan_in, fan_out) = self.dims[layer];
        let off = self.layer_offset(layer) + fan_in * fan_out;
        &mut self.values[off..off + fan_out]
    }
}

/// Recorded activations from one forward pass; consumed by [`backward`].
pub struct Trace {
    input: Array2<f64>,
    /// Post-activation output of each hidden layer.
    hidden: Vec<Array2<f64>>,
    consumed: bool,
}

impl Trace {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

/// Batched forward pass. `input` is `(batch, input_dim)`; the returned output
/// is `(batch, output_dim)` along with the trace needed for [`backward`].
pub fn forward(spec: &DenseNetSpec, params: &ParamVector, input: ArrayView2<f64>) -> Result<(Array2<f64>, Trace)> {
    if input.ncols() != spec.input_dim {
        return Err(Error::ShapeMismatch {
            expected: spec.input_dim,
            got: input.ncols(),
        });
    }
    if params.dims() != spec.layer_dims().as_slice() {
        return Err(Error::LayoutMismatch);
    }
    let n_layers = params.dims().len();
    let mut hidden = Vec::with_capacity(n_layers - 1);
    let mut x = input.to_owned();
    for layer in 0..n_layers {
        let w = params.weights(layer);
        let b = params.bias(layer);
        let mut z = x.dot(&w.t());
        z += &b;
        if layer + 1 < n_layers {
            z.mapv_inplace(|v| v.max(0.0));
            hidden.push(z.clone());
        }
        x = z;
    }
    Ok((
        x,
        Trace {
            input: input.to_owned(),
            hidden,
            consumed: false,
        },
    ))
}

/// Convenience single-sample forward without keeping the trace.
pub fn forward1(spec: &DenseNetSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    let view = ArrayView2::from_shape((1, input.len()), input)
        .map_err(|_| Error::ShapeMismatch { expected: spec.input_dim, got: input.len() })?;
    let (out, _) = forward(spec, params, view)?;
    Ok(out.row(0).to_vec())
}

/// Reverse-mode pass. `upstream` is `dL/d(output)`, shape `(batch,
/// output_dim)`. Returns parameter gradients (summed over the batch) and
/// `dL/d(input)` per sample. A trace can only be walked once.
pub fn backward(
    trace: &mut Trace,
    params: &ParamVector,
    upstream: ArrayView2<f64>,
) -> Result<(ParamVector, Array2<f64>)> {
    if trace.consumed {
        return Err(Error::TraceConsumed);
    }
    trace.consumed = true;
    let n_layers = params.dims().len();
    let (_, out_dim) = params.dims()[n_layers - 1];
    if upstream.ncols() != out_dim || upstream.nrows() != trace.input.nrows() {
        return Err(Error::ShapeMismatch {
            expected: out_dim,
            got: upstream.ncols(),
        });
    }

    let mut grads = ParamVector {
        values: vec![0.0; params.len()],
        dims: params.dims().to_vec(),
    };
    let mut delta = upstream.to_owned();
    for layer in (0..n_layers).rev() {
        let below: &Array2<f64> = if layer == 0 {
            &trace.input
        } else {
            &trace.hidden[layer - 1]
        };
        // dL/dW = delta^T . below, dL/db = column sums of delta
        let gw = delta.t().dot(below);
        // gw may come back column-major; copy in logical row-major order
        for (dst, &src) in grads.weights_mut(layer).iter_mut().zip(gw.iter()) {
            *dst = src;
        }
        let gb = delta.sum_axis(Axis(0));
        grads
            .bias_mut(layer)
            .copy_from_slice(gb.as_slice().expect("contiguous"));

        let mut next = delta.dot(&params.weights(layer));
        if layer > 0 {
            // ReLU gate from the recorded post-activation
            next.zip_mut_with(&trace.hidden[layer - 1], |d, &h| {
                if h <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        delta = next;
    }
    Ok((grads, delta))
}

/// Adam optimizer state over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One Adam step with bias correction, in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LayoutMismatch);
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `target <- beta * online + (1 - beta) * target`, componentwise.
pub fn ema_update(target: &mut ParamVector, online: &ParamVector, beta: f64) -> Result<()> {
    if !target.same_layout(online) {
        return Err(Error::LayoutMismatch);
    }
    for (t, &o) in target.values.iter_mut().zip(&online.values) {
        *t = beta * o + (1.0 - beta) * *t;
    }
    Ok(())
}

/// Result of a finite-difference gradient probe.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Compares the analytic gradient of a scalar loss against central finite
/// differences over every parameter. `loss_and_grad` must return the loss and
/// its analytic gradient; `step` is the FD half-step (1e-5 is a good default).
///
/// Relative error per parameter: `|analytic - numeric| / (|analytic| +
/// |numeric| + 1e-6)`. The absolute floor keeps exactly-zero gradients
/// (inactive units) from registering FD roundoff noise as disagreement.
pub fn finite_diff_check<F>(params: &ParamVector, loss_and_grad: F, step: f64) -> FdReport
where
    F: Fn(&ParamVector) -> (f64, ParamVector),
{
    let (_, analytic) = loss_and_grad(params);
    let mut probe = params.clone();
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for i in 0..params.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + step;
        let (lp, _) = loss_and_grad(&probe);
        probe.values[i] = orig - step;
        let (lm, _) = loss_and_grad(&probe);
        probe.values[i] = orig;
        let numeric = (lp - lm) / (2.0 * step);
        let a = analytic.values[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-6);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    FdReport {
        max_rel_error,
        worst_index,
    }
}

/// Mean-squared-error loss and its gradient through the net, used by tests
/// and the toy laboratory: `L = 1/(2B) * sum ||out - target||^2`.
pub fn mse_loss_and_grad(
    spec: &DenseNetSpec,
    params: &ParamVector,
    input: ArrayView2<f64>,
    target: ArrayView2<f64>,
) -> Result<(f64, ParamVector)> {
    let (out, mut trace) = forward(spec, params, input)?;
    let batch = out.nrows() as f64;
    let diff = &out - &target;
    let loss = diff.mapv(|d| d * d).sum() / (2.0 * batch);
    let upstream = diff / batch;
    let (grads, _) = backward(&mut trace, params, upstream.view())?;
    Ok((loss, grads))
}
