use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::gru::{backprop_stack, dropout_mask, run_stack, GruLayerParams, StackTrace};
use crate::dataio::AugmentedWindow;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

/// Which end of the window the decoder reconstructs first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputOrder {
    /// First decoder step reconstructs the last point of the window.
    #[default]
    Reverse,
    Forward,
}

/// Per-step penalty on the masked reconstruction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `‖e ⊙ m‖²`
    #[default]
    Squared,
    /// `‖e ⊙ m‖`
    Norm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width `k` of the values channel (the reconstructed sensors).
    pub sensors: usize,
    /// Feed mask and delta channels alongside the values.
    pub mask_delta: bool,
    /// Units per layer, bottom first. Encoder and decoder share these.
    pub layer_sizes: Vec<usize>,
    pub dropout: f64,
    pub window: usize,
    #[serde(default)]
    pub output_order: OutputOrder,
    #[serde(default)]
    pub loss: LossKind,
}

impl ModelConfig {
    pub fn new(sensors: usize, layer_sizes: Vec<usize>, window: usize) -> Self {
        ModelConfig {
            sensors,
            mask_delta: false,
            layer_sizes,
            dropout: 0.0,
            window,
            output_order: OutputOrder::Reverse,
            loss: LossKind::Squared,
        }
    }

    pub fn input_dim(&self) -> usize {
        if self.mask_delta {
            3 * self.sensors
        } else {
            self.sensors
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors == 0 || self.window == 0 {
            return Err(Error::invalid("sensor count and window length must be >= 1"));
        }
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return Err(Error::invalid("need at least one layer, each with >= 1 unit"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    fn layer_inputs(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layer_sizes.iter().copied())
            .take(self.layer_sizes.len())
            .collect()
    }
}

/// All trainable parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqParams {
    pub encoder: Vec<GruLayerParams>,
    pub decoder: Vec<GruLayerParams>,
    /// k × (c_top + 1) linear output layer, bias in the last column.
    pub output: Matrix,
}

impl Seq2SeqParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let layers = |cfg: &ModelConfig| {
            cfg.layer_inputs()
                .into_iter()
                .zip(&cfg.layer_sizes)
                .map(|(i, &c)| GruLayerParams::zeros(i, c))
                .collect::<Vec<_>>()
        };
        Seq2SeqParams {
            encoder: layers(cfg),
            decoder: layers(cfg),
            output: Matrix::zeros(cfg.sensors, cfg.layer_sizes.last().unwrap() + 1),
        }
    }

    pub fn random(cfg: &ModelConfig, rng: &mut RngState) -> Self {
        let layers = |cfg: &ModelConfig, rng: &mut RngState| {
            cfg.layer_inputs()
                .into_iter()
                .zip(&cfg.layer_sizes)
                .map(|(i, &c)| GruLayerParams::random(i, c, rng))
                .collect::<Vec<_>>()
        };
        let encoder = layers(cfg, rng);
        let decoder = layers(cfg, rng);
        let top = *cfg.layer_sizes.last().unwrap();
        let bound = 1.0 / (top as f64).sqrt();
        let mut output = Matrix::zeros(cfg.sensors, top + 1);
        for v in output.as_mut_slice() {
            *v = rng.uniform_range(-bound, bound);
        }
        Seq2SeqParams {
            encoder,
            decoder,
            output,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Seq2SeqParams {
            encoder: self.encoder.iter().map(GruLayerParams::zeros_like).collect(),
            decoder: self.decoder.iter().map(GruLayerParams::zeros_like).collect(),
            output: Matrix::zeros(self.output.rows(), self.output.cols()),
        }
    }

    /// Every parameter matrix in a fixed order: encoder layers, decoder
    /// layers (each r, u, p), then the output map.
    pub fn matrices(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = Vec::new();
        for l in self.encoder.iter().chain(&self.decoder) {
            v.extend(l.matrices());
        }
        v.push(&self.output);
        v
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = Vec::new();
        for l in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            v.extend(l.matrices_mut());
        }
        v.push(&mut self.output);
        v
    }

    pub fn len(&self) -> usize {
        self.matrices().iter().map(|m| m.as_slice().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.matrices()
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn add_assign(&mut self, other: &Seq2SeqParams) {
        for (a, b) in self.matrices_mut().into_iter().zip(other.matrices()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for m in self.matrices_mut() {
            m.as_mut_slice().iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.matrices()
            .iter()
            .flat_map(|m| m.as_slice())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices()
            .iter()
            .all(|m| m.as_slice().iter().all(|v| v.is_finite()))
    }
}

/// Fixed-length summary of a window: final hidden states of every encoder
/// layer, concatenated bottom to top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub end_index: usize,
    pub instance_id: String,
}

/// GRU encoder-decoder that reconstructs a window from its embedding.
///
/// The decoder starts from the encoder's final states (layer by layer),
/// receives a zero input at every step, and maps its top-layer state to the
/// `k` sensor values through a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub params: Seq2SeqParams,
}

pub(crate) struct Forward {
    enc: StackTrace,
    dec: StackTrace,
    /// Decoder outputs in decoder-step order.
    outputs: Vec<Vec<f64>>,
}

impl Seq2SeqModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Seq2SeqParams::random(&config, &mut RngState::new(seed));
        Ok(Seq2SeqModel { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = Seq2SeqParams::zeros(&config);
        Ok(Seq2SeqModel { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Seq2SeqParams) -> Result<Self> {
        config.validate()?;
        let expect = Seq2SeqParams::zeros(&config);
        let shapes_match = expect.matrices().len() == params.matrices().len()
            && expect
                .matrices()
                .iter()
                .zip(params.matrices())
                .all(|(a, b)| a.shape() == b.shape())
            && params.encoder.iter().chain(&params.decoder).all(|l| l.shape_ok());
        if !shapes_match {
            return Err(Error::invalid("parameter shapes do not match the model config"));
        }
        Ok(Seq2SeqModel { config, params })
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    pub fn check_window(&self, window: &AugmentedWindow) -> Result<()> {
        if window.len() != self.config.window || window.dim() != self.config.sensors {
            return Err(Error::invalid(format!(
                "window is {}x{}, model expects {}x{}",
                window.len(),
                window.dim(),
                self.config.window,
                self.config.sensors
            )));
        }
        Ok(())
    }

    /// Encoder input at row `t`: masked values, then mask and delta when
    /// enabled. Masked values are replaced by the fill value, so the
    /// underlying reading is never observed.
    pub(crate) fn input_row(&self, window: &AugmentedWindow, t: usize) -> Vec<f64> {
        let k = self.config.sensors;
        let mut row = Vec::with_capacity(self.config.input_dim());
        for j in 0..k {
            row.push(if window.mask[(t, j)] == 0.0 {
                0.0
            } else {
                window.values[(t, j)]
            });
        }
        if self.config.mask_delta {
            row.extend_from_slice(window.mask.row(t));
            row.extend_from_slice(window.delta.row(t));
        }
        row
    }

    pub(crate) fn target_row(&self, step: usize) -> usize {
        match self.config.output_order {
            OutputOrder::Reverse => self.config.window - 1 - step,
            OutputOrder::Forward => step,
        }
    }

    fn split_embedding(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.config.layer_sizes.len());
        let mut off = 0;
        for &c in &self.config.layer_sizes {
            out.push(z[off..off + c].to_vec());
            off += c;
        }
        out
    }

    fn run_encoder(&self, window: &AugmentedWindow, rng: Option<&mut RngState>) -> StackTrace {
        let h0: Vec<Vec<f64>> = self.config.layer_sizes.iter().map(|&c| vec![0.0; c]).collect();
        let rows: Vec<Vec<f64>> = (0..self.config.window).map(|t| self.input_row(window, t)).collect();
        let rate = self.config.dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let mut f = |_t: usize, _l: usize, n: usize| dropout_mask(n, rate, rng);
                run_stack(
                    &self.params.encoder,
                    self.config.window,
                    |t| Cow::Borrowed(rows[t].as_slice()),
                    &h0,
                    Some(&mut f),
                )
            }
            _ => run_stack(
                &self.params.encoder,
                self.config.window,
                |t| Cow::Borrowed(rows[t].as_slice()),
                &h0,
                None,
            ),
        }
    }

    fn run_decoder(&self, h0: &[Vec<f64>], rng: Option<&mut RngState>) -> (StackTrace, Vec<Vec<f64>>) {
        let zeros = vec![0.0; self.config.input_dim()];
        let rate = self.config.dropout;
        let trace = match rng {
            Some(rng) if rate > 0.0 => {
                let mut f = |_t: usize, _l: usize, n: usize| dropout_mask(n, rate, rng);
                run_stack(
                    &self.params.decoder,
                    self.config.window,
                    |_| Cow::Borrowed(zeros.as_slice()),
                    h0,
                    Some(&mut f),
                )
            }
            _ => run_stack(
                &self.params.decoder,
                self.config.window,
                |_| Cow::Borrowed(zeros.as_slice()),
                h0,
                None,
            ),
        };
        let top = self.config.layer_sizes.len() - 1;
        let outputs = trace
            .steps
            .iter()
            .map(|s| {
                let mut y = vec![0.0; self.config.sensors];
                self.params.output.matvec_parts(&[&s[top].h, &[1.0]], &mut y);
                y
            })
            .collect();
        (trace, outputs)
    }

    pub(crate) fn forward(&self, window: &AugmentedWindow, mut rng: Option<&mut RngState>) -> Forward {
        let enc = self.run_encoder(window, rng.as_deref_mut());
        let z = enc.final_states(self.config.layer_sizes.len());
        let (dec, outputs) = self.run_decoder(&z, rng);
        Forward { enc, dec, outputs }
    }

    /// Embedding of a window. Dropout is active only when `training`.
    pub fn encode(&self, window: &AugmentedWindow, training: bool, rng: &mut RngState) -> Result<Embedding> {
        self.check_window(window)?;
        let trace = self.run_encoder(window, training.then_some(rng));
        Ok(Embedding {
            values: trace.final_states(self.config.layer_sizes.len()).concat(),
            end_index: window.end_index,
            instance_id: String::new(),
        })
    }

    /// Inference-mode embedding vector.
    pub fn embed(&self, window: &AugmentedWindow) -> Result<Vec<f64>> {
        self.check_window(window)?;
        Ok(self
            .run_encoder(window, None)
            .final_states(self.config.layer_sizes.len())
            .concat())
    }

    /// Reconstruction from an embedding, as a w × k matrix whose row `t`
    /// reconstructs window row `t` (regardless of the decoding order).
    pub fn decode(&self, z: &[f64]) -> Result<Matrix> {
        if z.len() != self.embedding_dim() {
            return Err(Error::invalid(format!(
                "embedding has length {}, model expects {}",
                z.len(),
                self.embedding_dim()
            )));
        }
        let (_, outputs) = self.run_decoder(&self.split_embedding(z), None);
        Ok(self.align_outputs(&outputs))
    }

    fn align_outputs(&self, outputs: &[Vec<f64>]) -> Matrix {
        let mut m = Matrix::zeros(self.config.window, self.config.sensors);
        for (s, y) in outputs.iter().enumerate() {
            m.row_mut(self.target_row(s)).copy_from_slice(y);
        }
        m
    }

    pub fn reconstruct(&self, window: &AugmentedWindow) -> Result<Matrix> {
        self.check_window(window)?;
        Ok(self.align_outputs(&self.forward(window, None).outputs))
    }

    /// Per-step errors `x − x'` (w × k, unmasked) and the masked scalar
    /// window error under the configured loss kind. Inference mode.
    pub fn reconstruction_error(&self, window: &AugmentedWindow) -> Result<(Matrix, f64)> {
        let recon = self.reconstruct(window)?;
        let mut err = Matrix::zeros(self.config.window, self.config.sensors);
        for t in 0..self.config.window {
            for j in 0..self.config.sensors {
                err[(t, j)] = window.values[(t, j)] - recon[(t, j)];
            }
        }
        let total = (0..self.config.window)
            .map(|t| self.step_penalty(window, t, recon.row(t)).0)
            .sum();
        Ok((err, total))
    }

    /// Masked penalty for one reconstructed row and its gradient w.r.t. the
    /// output. Masked entries contribute exactly zero.
    fn step_penalty(&self, window: &AugmentedWindow, row: usize, y: &[f64]) -> (f64, Vec<f64>) {
        let e: Vec<f64> = (0..self.config.sensors)
            .map(|j| {
                if window.mask[(row, j)] == 0.0 {
                    0.0
                } else {
                    window.values[(row, j)] - y[j]
                }
            })
            .collect();
        let sq: f64 = e.iter().map(|v| v * v).sum();
        match self.config.loss {
            LossKind::Squared => (sq, e.iter().map(|v| -2.0 * v).collect()),
            LossKind::Norm => {
                let n = sq.sqrt();
                if n == 0.0 {
                    (0.0, vec![0.0; e.len()])
                } else {
                    (n, e.iter().map(|v| -v / n).collect())
                }
            }
        }
    }

    /// Masked window loss in inference mode.
    pub fn loss(&self, window: &AugmentedWindow) -> Result<f64> {
        Ok(self.reconstruction_error(window)?.1)
    }

    /// Window loss and its gradient w.r.t. every parameter. Dropout is applied
    /// when `rng` is given and the model's rate is positive.
    pub fn loss_and_grad(
        &self,
        window: &AugmentedWindow,
        rng: Option<&mut RngState>,
    ) -> Result<(f64, Seq2SeqParams)> {
        self.check_window(window)?;
        let fwd = self.forward(window, rng);
        let mut grads = self.params.zeros_like();
        let top = self.config.layer_sizes.len() - 1;
        let c_top = self.config.layer_sizes[top];

        let mut loss = 0.0;
        let mut d_top: Vec<Vec<f64>> = Vec::with_capacity(self.config.window);
        for (s, y) in fwd.outputs.iter().enumerate() {
            let (pen, dy) = self.step_penalty(window, self.target_row(s), y);
            loss += pen;
            let h = &fwd.dec.steps[s][top].h;
            grads.output.add_outer_parts(&dy, &[h, &[1.0]]);
            let mut dh = vec![0.0; c_top + 1];
            self.params.output.add_transposed_matvec(&dy, &mut dh);
            dh.truncate(c_top);
            d_top.push(dh);
        }

        let zeros: Vec<Vec<f64>> = self.config.layer_sizes.iter().map(|&c| vec![0.0; c]).collect();
        let mut d_top = d_top.into_iter().map(Some).collect::<Vec<_>>();
        let dz = backprop_stack(
            &self.params.decoder,
            &fwd.dec,
            |t| d_top[t].take(),
            zeros,
            &mut grads.decoder,
        );
        backprop_stack(&self.params.encoder, &fwd.enc, |_| None, dz, &mut grads.encoder);
        Ok((loss, grads))
    }
}
