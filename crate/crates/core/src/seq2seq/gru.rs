//! GRU layer with dropout on the non-recurrent input only.
//!
//! Each gate matrix maps the concatenation `[input, state, 1]` to `units`
//! outputs; the trailing constant column is the bias.
//!
//! ```text
//! r  = σ(W_r·[D(x), h, 1])
//! u  = σ(W_u·[D(x), h, 1])
//! p  = tanh(W_p·[D(x), r ⊙ h, 1])
//! h' = (1 − u) ⊙ h + u ⊙ p
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayerParams {
    pub w_r: Matrix,
    pub w_u: Matrix,
    pub w_p: Matrix,
    input_dim: usize,
    units: usize,
}

impl GruLayerParams {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        let cols = input_dim + units + 1;
        GruLayerParams {
            w_r: Matrix::zeros(units, cols),
            w_u: Matrix::zeros(units, cols),
            w_p: Matrix::zeros(units, cols),
            input_dim,
            units,
        }
    }

    /// Uniform in ±1/√(input_dim + units), bias column included.
    pub fn random(input_dim: usize, units: usize, rng: &mut RngState) -> Self {
        let mut layer = Self::zeros(input_dim, units);
        let bound = 1.0 / ((input_dim + units) as f64).sqrt();
        for m in [&mut layer.w_r, &mut layer.w_u, &mut layer.w_p] {
            for v in m.as_mut_slice() {
                *v = rng.uniform_range(-bound, bound);
            }
        }
        layer
    }

    pub fn from_matrices(w_r: Matrix, w_u: Matrix, w_p: Matrix, input_dim: usize) -> Result<Self> {
        let units = w_r.rows();
        let want = (units, input_dim + units + 1);
        if w_r.shape() != want || w_u.shape() != want || w_p.shape() != want {
            return Err(Error::invalid(format!(
                "gate matrices must be {}x{}",
                want.0, want.1
            )));
        }
        Ok(GruLayerParams {
            w_r,
            w_u,
            w_p,
            input_dim,
            units,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.units)
    }

    pub fn matrices(&self) -> [&Matrix; 3] {
        [&self.w_r, &self.w_u, &self.w_p]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 3] {
        [&mut self.w_r, &mut self.w_u, &mut self.w_p]
    }

    pub(crate) fn shape_ok(&self) -> bool {
        let want = (self.units, self.input_dim + self.units + 1);
        self.matrices().iter().all(|m| m.shape() == want)
    }
}

/// Values saved by a forward step for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    /// Input after dropout.
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub h: Vec<f64>,
    /// Dropout multipliers applied to the input, if any.
    pub drop: Option<Vec<f64>>,
}

const ONE: [f64; 1] = [1.0];

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn step_forward(
    layer: &GruLayerParams,
    input: &[f64],
    h_prev: &[f64],
    drop: Option<Vec<f64>>,
) -> StepCache {
    let c = layer.units;
    let x: Vec<f64> = match &drop {
        Some(m) => input.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => input.to_vec(),
    };
    let mut r = vec![0.0; c];
    let mut u = vec![0.0; c];
    layer.w_r.matvec_parts(&[&x, h_prev, &ONE], &mut r);
    layer.w_u.matvec_parts(&[&x, h_prev, &ONE], &mut u);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    u.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut p = vec![0.0; c];
    layer.w_p.matvec_parts(&[&x, &rh, &ONE], &mut p);
    p.iter_mut().for_each(|v| *v = v.tanh());
    let h = (0..c)
        .map(|i| (1.0 - u[i]) * h_prev[i] + u[i] * p[i])
        .collect();
    StepCache {
        x,
        h_prev: h_prev.to_vec(),
        r,
        u,
        p,
        h,
        drop,
    }
}

/// Backward through one step. Accumulates parameter gradients into `grads`
/// and returns (gradient w.r.t. the pre-dropout input, gradient w.r.t. the
/// previous state).
pub(crate) fn step_backward(
    layer: &GruLayerParams,
    cache: &StepCache,
    dh: &[f64],
    grads: &mut GruLayerParams,
) -> (Vec<f64>, Vec<f64>) {
    let c = layer.units;
    let n_in = layer.input_dim;
    let StepCache {
        x,
        h_prev,
        r,
        u,
        p,
        ..
    } = cache;

    let mut dh_prev: Vec<f64> = (0..c).map(|i| dh[i] * (1.0 - u[i])).collect();
    let dp_pre: Vec<f64> = (0..c).map(|i| dh[i] * u[i] * (1.0 - p[i] * p[i])).collect();
    let du_pre: Vec<f64> = (0..c)
        .map(|i| dh[i] * (p[i] - h_prev[i]) * u[i] * (1.0 - u[i]))
        .collect();

    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    grads.w_p.add_outer_parts(&dp_pre, &[x, &rh, &ONE]);
    let mut da_p = vec![0.0; n_in + c + 1];
    layer.w_p.add_transposed_matvec(&dp_pre, &mut da_p);

    let mut dx = da_p[..n_in].to_vec();
    let drh = &da_p[n_in..n_in + c];
    let dr_pre: Vec<f64> = (0..c)
        .map(|i| drh[i] * h_prev[i] * r[i] * (1.0 - r[i]))
        .collect();
    for i in 0..c {
        dh_prev[i] += drh[i] * r[i];
    }

    grads.w_u.add_outer_parts(&du_pre, &[x, h_prev, &ONE]);
    grads.w_r.add_outer_parts(&dr_pre, &[x, h_prev, &ONE]);
    let mut da = vec![0.0; n_in + c + 1];
    layer.w_u.add_transposed_matvec(&du_pre, &mut da);
    layer.w_r.add_transposed_matvec(&dr_pre, &mut da);
    for i in 0..n_in {
        dx[i] += da[i];
    }
    for i in 0..c {
        dh_prev[i] += da[n_in + i];
    }
    if let Some(m) = &cache.drop {
        for (d, k) in dx.iter_mut().zip(m) {
            *d *= k;
        }
    }
    (dx, dh_prev)
}

/// One GRU step. `dropout_mask` holds per-input multipliers (0 for dropped
/// units); `None` means no dropout.
pub fn gru_step(
    layer: &GruLayerParams,
    input_below: &[f64],
    h_prev: &[f64],
    dropout_mask: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if input_below.len() != layer.input_dim || h_prev.len() != layer.units {
        return Err(Error::invalid(format!(
            "gru step expects input {} and state {}, got {} and {}",
            layer.input_dim,
            layer.units,
            input_below.len(),
            h_prev.len()
        )));
    }
    if dropout_mask.is_some_and(|m| m.len() != layer.input_dim) {
        return Err(Error::invalid("dropout mask must match the input width"));
    }
    Ok(step_forward(layer, input_below, h_prev, dropout_mask.map(<[f64]>::to_vec)).h)
}

/// Inverted-dropout multipliers: each unit kept with probability `1 − rate`
/// and scaled by `1 / (1 − rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut RngState) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect()
}

/// Forward trace of a layer stack over a sequence: `steps[t][l]`.
pub(crate) struct StackTrace {
    pub steps: Vec<Vec<StepCache>>,
}

impl StackTrace {
    pub fn final_states(&self, n_layers: usize) -> Vec<Vec<f64>> {
        match self.steps.last() {
            Some(last) => last.iter().map(|c| c.h.clone()).collect(),
            None => vec![Vec::new(); n_layers],
        }
    }
}

/// Runs `layers` over `len` steps. `input(t)` supplies the bottom input;
/// `drop` supplies dropout multipliers for layer `l`'s input at step `t`.
pub(crate) fn run_stack<'a>(
    layers: &[GruLayerParams],
    len: usize,
    mut input: impl FnMut(usize) -> std::borrow::Cow<'a, [f64]>,
    h0: &[Vec<f64>],
    mut drop: Option<&mut dyn FnMut(usize, usize, usize) -> Vec<f64>>,
) -> StackTrace {
    let mut state: Vec<Vec<f64>> = h0.to_vec();
    let mut steps = Vec::with_capacity(len);
    for t in 0..len {
        let mut caches: Vec<StepCache> = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            let mask = drop.as_mut().map(|f| f(t, l, layer.input_dim));
            let cache = match l {
                0 => step_forward(layer, &input(t), &state[l], mask),
                _ => step_forward(layer, &caches[l - 1].h, &state[l], mask),
            };
            state[l].clone_from(&cache.h);
            caches.push(cache);
        }
        steps.push(caches);
    }
    StackTrace { steps }
}

/// Backpropagates through a stack trace. `d_top(t)` is the loss gradient
/// w.r.t. the top layer's state at step `t` (outside the recurrence);
/// `d_final` is the gradient w.r.t. each layer's final state. Returns the
/// gradient w.r.t. each layer's initial state.
pub(crate) fn backprop_stack(
    layers: &[GruLayerParams],
    trace: &StackTrace,
    mut d_top: impl FnMut(usize) -> Option<Vec<f64>>,
    d_final: Vec<Vec<f64>>,
    grads: &mut [GruLayerParams],
) -> Vec<Vec<f64>> {
    let top = layers.len() - 1;
    let mut carry = d_final;
    for t in (0..trace.steps.len()).rev() {
        let mut from_above: Option<Vec<f64>> = d_top(t);
        for l in (0..=top).rev() {
            let mut dh = std::mem::take(&mut carry[l]);
            if let Some(extra) = from_above.take() {
                for (a, b) in dh.iter_mut().zip(&extra) {
                    *a += b;
                }
            }
            let (dx, dh_prev) = step_backward(&layers[l], &trace.steps[t][l], &dh, &mut grads[l]);
            carry[l] = dh_prev;
            if l > 0 {
                from_above = Some(dx);
            }
        }
    }
    carry
}
