//! Minimal MLP with exact reverse-mode gradients, categorical heads, and
//! Adam. Everything is f64 and allocation-light: parameters live in one
//! flat vector whose layout is derived from the layer spec.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rngstream::sample_standard_normal;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Feedforward architecture: tanh hidden layers, linear output head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        assert!(input_dim >= 1 && output_dim >= 1);
        assert!(hidden_dims.iter().all(|&d| d >= 1));
        MlpSpec {
            input_dim,
            hidden_dims,
            output_dim,
        }
    }

    /// (fan_in, fan_out) per layer, hidden layers then the output head.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }
}

/// Flat parameter vector: per layer, the weight matrix (row-major,
/// out x in) followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &MlpSpec) -> Self {
        ParamVector {
            data: vec![0.0; spec.param_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn check(&self, spec: &MlpSpec) -> Result<(), NnError> {
        if self.data.len() != spec.param_count() {
            return Err(NnError::DimensionMismatch(format!(
                "param vector has {} entries, spec wants {}",
                self.data.len(),
                spec.param_count()
            )));
        }
        Ok(())
    }
}

/// Orthogonal-style initialization: Gaussian matrices orthonormalized by
/// modified Gram-Schmidt, scaled by a per-layer gain; zero biases. The
/// output head takes its own gain (small for actor logits).
pub fn init_mlp<R: Rng>(spec: &MlpSpec, rng: &mut R, hidden_gain: f64, output_gain: f64) -> ParamVector {
    let mut params = ParamVector::zeros(spec);
    let dims = spec.layer_dims();
    let n_layers = dims.len();
    let mut offset = 0;
    for (li, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let gain = if li + 1 == n_layers { output_gain } else { hidden_gain };
        let w = orthogonal_matrix(rng, fan_out, fan_in, gain);
        for r in 0..fan_out {
            for c in 0..fan_in {
                params.data[offset + r * fan_in + c] = w[r][c];
            }
        }
        offset += fan_out * fan_in + fan_out; // biases stay zero
    }
    params
}

fn orthogonal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, gain: f64) -> Vec<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| sample_standard_normal(rng)).collect())
        .collect();
    if rows <= cols {
        gram_schmidt_rows(&mut m);
    } else {
        // orthonormalize columns via the transpose
        let mut t: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| m[r][c]).collect())
            .collect();
        gram_schmidt_rows(&mut t);
        for r in 0..rows {
            for c in 0..cols {
                m[r][c] = t[c][r];
            }
        }
    }
    for row in &mut m {
        for v in row.iter_mut() {
            *v *= gain;
        }
    }
    m
}

fn gram_schmidt_rows(m: &mut [Vec<f64>]) {
    let n = m.len();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = m[i].iter().zip(m[j].iter()).map(|(a, b)| a * b).sum();
            let mj = m[j].clone();
            for (v, w) in m[i].iter_mut().zip(mj.iter()) {
                *v -= dot * w;
            }
        }
        let norm: f64 = m[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        // Gaussian rows are almost surely independent; the guard only
        // protects against pathological draws.
        let inv = if norm > 1e-12 { 1.0 / norm } else { 0.0 };
        for v in m[i].iter_mut() {
            *v *= inv;
        }
    }
}

/// Post-activation values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l+1]` the output of
    /// layer `l` (tanh applied on hidden layers, linear on the head).
    pub activations: Vec<Vec<f64>>,
}

pub fn forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>, NnError> {
    Ok(forward_cached(spec, params, input)?.0)
}

pub fn forward_cached(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
) -> Result<(Vec<f64>, ForwardCache), NnError> {
    params.check(spec)?;
    if input.len() != spec.input_dim {
        return Err(NnError::DimensionMismatch(format!(
            "input has {} entries, spec wants {}",
            input.len(),
            spec.input_dim
        )));
    }
    let dims = spec.layer_dims();
    let n_layers = dims.len();
    let mut activations = Vec::with_capacity(n_layers + 1);
    activations.push(input.to_vec());
    let mut offset = 0;
    for (li, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let prev = &activations[li];
        let mut out = Vec::with_capacity(fan_out);
        for r in 0..fan_out {
            let w_row = &params.data[offset + r * fan_in..offset + (r + 1) * fan_in];
            let mut z = params.data[offset + fan_out * fan_in + r];
            for (w, x) in w_row.iter().zip(prev.iter()) {
                z += w * x;
            }
            out.push(if li + 1 == n_layers { z } else { z.tanh() });
        }
        offset += fan_out * fan_in + fan_out;
        activations.push(out);
    }
    let output = activations.last().unwrap().clone();
    Ok((output, ForwardCache { activations }))
}

/// Exact gradient of the scalar loss whose output-gradient is supplied.
/// Returns the gradient in parameter layout.
pub fn backward(
    spec: &MlpSpec,
    params: &ParamVector,
    cache: &ForwardCache,
    output_grad: &[f64],
) -> Result<ParamVector, NnError> {
    params.check(spec)?;
    if output_grad.len() != spec.output_dim {
        return Err(NnError::DimensionMismatch(format!(
            "output grad has {} entries, spec wants {}",
            output_grad.len(),
            spec.output_dim
        )));
    }
    let dims = spec.layer_dims();
    let n_layers = dims.len();
    if cache.activations.len() != n_layers + 1 {
        return Err(NnError::DimensionMismatch(
            "cache does not match spec".into(),
        ));
    }

    let mut grad = ParamVector::zeros(spec);
    let mut offsets = Vec::with_capacity(n_layers);
    let mut off = 0;
    for &(fan_in, fan_out) in &dims {
        offsets.push(off);
        off += fan_in * fan_out + fan_out;
    }

    // delta = dL/dz for the current layer; the output head is linear.
    let mut delta = output_grad.to_vec();
    for li in (0..n_layers).rev() {
        let (fan_in, fan_out) = dims[li];
        let offset = offsets[li];
        let prev = &cache.activations[li];
        for r in 0..fan_out {
            let d = delta[r];
            let row = &mut grad.data[offset + r * fan_in..offset + (r + 1) * fan_in];
            for (g, x) in row.iter_mut().zip(prev.iter()) {
                *g += d * x;
            }
            grad.data[offset + fan_out * fan_in + r] += d;
        }
        if li > 0 {
            // propagate through W and the tanh of the previous layer
            let mut prev_delta = vec![0.0; fan_in];
            for r in 0..fan_out {
                let d = delta[r];
                let w_row = &params.data[offset + r * fan_in..offset + (r + 1) * fan_in];
                for (pd, w) in prev_delta.iter_mut().zip(w_row.iter()) {
                    *pd += d * w;
                }
            }
            let act = &cache.activations[li];
            for (pd, a) in prev_delta.iter_mut().zip(act.iter()) {
                *pd *= 1.0 - a * a;
            }
            delta = prev_delta;
        }
    }
    Ok(grad)
}

/// Numerically stable softmax head.
#[derive(Debug, Clone)]
pub struct Categorical {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

pub fn categorical_head(logits: &[f64]) -> Categorical {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_sum = sum.ln();
    let probs = exps.iter().map(|e| e / sum).collect();
    let log_probs = logits.iter().map(|&l| l - max - log_sum).collect();
    Categorical { probs, log_probs }
}

/// Inverse-CDF draw; consumes exactly one uniform.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum::<f64>()
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamVector,
    grad: &ParamVector,
) -> Result<(), NnError> {
    if state.m.len() != params.data.len() || grad.data.len() != params.data.len() {
        return Err(NnError::DimensionMismatch(format!(
            "adam state {} / params {} / grad {}",
            state.m.len(),
            params.data.len(),
            grad.data.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for i in 0..params.data.len() {
        let g = grad.data[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params.data[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream::seeded_stream;
    use proptest::prelude::*;

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::new(4, vec![8, 8], 3);
        let params = ParamVector::zeros(&spec);
        let out = forward(&spec, &params, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let spec = MlpSpec::new(3, vec![], 3);
        let mut params = ParamVector::zeros(&spec);
        for i in 0..3 {
            params.data[i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.7, 2.2];
        let out = forward(&spec, &params, &x).unwrap();
        assert_eq!(out, x.to_vec());
    }

    /// Straightforward nested-vec reimplementation used only as an oracle.
    fn naive_forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Vec<f64> {
        let dims = spec.layer_dims();
        let mut offset = 0;
        let mut x = input.to_vec();
        for (li, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let mut w = vec![vec![0.0; fan_in]; fan_out];
            for r in 0..fan_out {
                for c in 0..fan_in {
                    w[r][c] = params.data[offset + r * fan_in + c];
                }
            }
            let b: Vec<f64> =
                params.data[offset + fan_out * fan_in..offset + fan_out * fan_in + fan_out].to_vec();
            let mut y = vec![0.0; fan_out];
            for r in 0..fan_out {
                let mut z = b[r];
                for c in 0..fan_in {
                    z += w[r][c] * x[c];
                }
                y[r] = if li + 1 == dims.len() { z } else { z.tanh() };
            }
            x = y;
            offset += fan_out * fan_in + fan_out;
        }
        x
    }

    #[test]
    fn forward_matches_duplicate_path_oracle() {
        let mut rng = seeded_stream(11, 0);
        for _ in 0..10 {
            let spec = MlpSpec::new(5, vec![7, 6], 4);
            let params = init_mlp(&spec, &mut rng, 2f64.sqrt(), 1.0);
            let input: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = forward(&spec, &params, &input).unwrap();
            let b = naive_forward(&spec, &params, &input);
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_gradient_matches_closed_form() {
        // L = |Wx + b - y|^2 with output_grad = 2(out - y):
        // dW = 2(out - y) x^T, db = 2(out - y).
        let spec = MlpSpec::new(2, vec![], 2);
        let mut params = ParamVector::zeros(&spec);
        params.data.copy_from_slice(&[1.0, -0.5, 0.25, 2.0, 0.1, -0.2]);
        let x = [0.7, -1.1];
        let y = [0.2, 0.9];
        let (out, cache) = forward_cached(&spec, &params, &x).unwrap();
        let og: Vec<f64> = out.iter().zip(y.iter()).map(|(o, t)| 2.0 * (o - t)).collect();
        let grad = backward(&spec, &params, &cache, &og).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let expect = og[r] * x[c];
                assert!((grad.data[r * 2 + c] - expect).abs() < 1e-14);
            }
            assert!((grad.data[4 + r] - og[r]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_gradient() {
        let mut rng = seeded_stream(5, 0);
        let spec = MlpSpec::new(4, vec![6], 3);
        let params = init_mlp(&spec, &mut rng, 2f64.sqrt(), 1.0);
        let (_, cache) = forward_cached(&spec, &params, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let grad = backward(&spec, &params, &cache, &[0.0, 0.0, 0.0]).unwrap();
        assert!(grad.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        let mut rng = seeded_stream(42, 0);
        let spec = MlpSpec::new(3, vec![8, 5], 2);
        let params = init_mlp(&spec, &mut rng, 2f64.sqrt(), 1.0);
        let input: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let loss = |p: &ParamVector| -> f64 {
            let out = forward(&spec, p, &input).unwrap();
            out.iter().zip(target.iter()).map(|(o, t)| 0.5 * (o - t) * (o - t)).sum()
        };
        let (out, cache) = forward_cached(&spec, &params, &input).unwrap();
        let og: Vec<f64> = out.iter().zip(target.iter()).map(|(o, t)| o - t).collect();
        let grad = backward(&spec, &params, &cache, &og).unwrap();

        let h = 1e-5;
        for k in 0..spec.param_count() {
            let mut p_plus = params.clone();
            p_plus.data[k] += h;
            let mut p_minus = params.clone();
            p_minus.data[k] -= h;
            let fd = (loss(&p_plus) - loss(&p_minus)) / (2.0 * h);
            let denom = grad.data[k].abs().max(fd.abs()).max(1e-8);
            assert!(
                (grad.data[k] - fd).abs() / denom < 1e-5,
                "param {k}: analytic {} vs fd {fd}",
                grad.data[k]
            );
        }
    }

    #[test]
    fn uniform_logits_uniform_probs() {
        let cat = categorical_head(&[0.7, 0.7, 0.7]);
        for p in &cat.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((entropy(&cat.probs) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_no_overflow() {
        let cat = categorical_head(&[1000.0, 0.0, -5.0]);
        assert!((cat.probs[0] - 1.0).abs() < 1e-12);
        assert!(cat.probs.iter().all(|p| p.is_finite()));
        assert!(entropy(&cat.probs) >= 0.0);
        assert!(entropy(&cat.probs) < 1e-9);
    }

    #[test]
    fn sampling_matches_probabilities_within_3_sigma() {
        let mut rng = seeded_stream(77, 0);
        let cat = categorical_head(&[0.3, -0.8, 1.4, 0.0]);
        let n = 100_000usize;
        let mut counts = vec![0usize; 4];
        for _ in 0..n {
            counts[sample_categorical(&cat.probs, &mut rng)] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let mean = n as f64 * cat.probs[i];
            let sigma = (n as f64 * cat.probs[i] * (1.0 - cat.probs[i])).sqrt();
            assert!(
                (c as f64 - mean).abs() < 3.0 * sigma,
                "bin {i}: {c} vs mean {mean}"
            );
        }
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let spec = MlpSpec::new(2, vec![3], 1);
        let mut rng = seeded_stream(9, 0);
        let mut params = init_mlp(&spec, &mut rng, 2f64.sqrt(), 1.0);
        let before = params.clone();
        let mut adam = AdamState::new(spec.param_count(), 1e-3);
        adam_step(&mut adam, &mut params, &ParamVector::zeros(&spec)).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_descends_against_constant_gradient() {
        let spec = MlpSpec::new(1, vec![], 1);
        let mut params = ParamVector::zeros(&spec);
        let mut adam = AdamState::new(2, 0.01);
        let mut grad = ParamVector::zeros(&spec);
        grad.data = vec![3.0, -2.0];
        for _ in 0..50 {
            adam_step(&mut adam, &mut params, &grad).unwrap();
        }
        assert!(params.data[0] < 0.0);
        assert!(params.data[1] > 0.0);
    }

    #[test]
    fn adam_matches_hand_recurrence_three_steps() {
        let mut adam = AdamState::new(1, 0.1);
        let mut params = ParamVector { data: vec![0.5] };
        let grads = [0.4, -0.2, 0.1];

        // hand recurrence, written out independently
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let (mut m, mut v, mut p) = (0.0f64, 0.0f64, 0.5f64);
        for (t, &g) in grads.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        for &g in &grads {
            let grad = ParamVector { data: vec![g] };
            adam_step(&mut adam, &mut params, &grad).unwrap();
        }
        assert!((params.data[0] - p).abs() < 1e-15, "{} vs {p}", params.data[0]);
    }

    #[test]
    fn init_is_deterministic_and_orthogonal() {
        let spec = MlpSpec::new(6, vec![4], 2);
        let a = init_mlp(&spec, &mut seeded_stream(3, 0), 2f64.sqrt(), 0.01);
        let b = init_mlp(&spec, &mut seeded_stream(3, 0), 2f64.sqrt(), 0.01);
        assert_eq!(a, b);
        // first layer rows (4x6, rows <= cols) are orthogonal with norm gain
        for r in 0..4 {
            for r2 in 0..4 {
                let dot: f64 = (0..6).map(|c| a.data[r * 6 + c] * a.data[r2 * 6 + c]).sum();
                let expect = if r == r2 { 2.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "rows {r},{r2}: {dot}");
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = MlpSpec::new(3, vec![4], 2);
        let params = ParamVector::zeros(&spec);
        assert!(matches!(
            forward(&spec, &params, &[1.0, 2.0]),
            Err(NnError::DimensionMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            logits in proptest::collection::vec(-10.0f64..10.0, 2..6),
            shift in -50.0f64..50.0,
        ) {
            let a = categorical_head(&logits);
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let b = categorical_head(&shifted);
            for (p, q) in a.probs.iter().zip(b.probs.iter()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
            let sum: f64 = a.probs.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            let h = entropy(&a.probs);
            prop_assert!(h >= -1e-15 && h <= (logits.len() as f64).ln() + 1e-12);
        }
    }
}
