use qd::Quad;
use rayon::prelude::*;

use super::model::{LossKind, Seq2SeqModel, Seq2SeqParams};
use crate::dataio::AugmentedWindow;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat parameter index (encoder, decoder, output order) of the worst entry.
    pub worst_index: usize,
    pub n_params: usize,
}

/// Compares the analytic gradient of the inference-mode masked loss against
/// central differences with step `epsilon`, parameter by parameter, and
/// returns the largest `|g_a − g_n| / max(|g_a|, |g_n|, 1e-8)`.
///
/// The two perturbed losses come from a separate double-double forward
/// pass. In plain f64 the difference of two losses near `L` resolves only to
/// about `ulp(L) / 2ε`, which swamps gradient entries below roughly 1e-6.
pub fn grad_check(model: &Seq2SeqModel, window: &AugmentedWindow, epsilon: f64) -> Result<GradCheckReport> {
    grad_check_with(model, window, epsilon, |m, w| m.loss_and_grad(w, None))
}

/// Same as [`grad_check`] with a caller-supplied analytic gradient.
pub fn grad_check_with(
    model: &Seq2SeqModel,
    window: &AugmentedWindow,
    epsilon: f64,
    analytic: impl Fn(&Seq2SeqModel, &AugmentedWindow) -> Result<(f64, Seq2SeqParams)>,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let (_, grads) = analytic(model, window)?;
    let ga = grads.to_flat();
    let mats = model.params.matrices();
    let slots: Vec<(usize, usize)> = mats
        .iter()
        .enumerate()
        .flat_map(|(m, mat)| (0..mat.as_slice().len()).map(move |e| (m, e)))
        .collect();
    let eps = Quad::from(epsilon);
    let numeric: Vec<f64> = slots
        .par_iter()
        .map(|&(m, e)| {
            let orig = Quad::from(mats[m].as_slice()[e]);
            let up = reference_loss(model, window, (m, e, orig + eps));
            let down = reference_loss(model, window, (m, e, orig - eps));
            let g = (up - down) / (eps + eps);
            g.0 + g.1
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        n_params: ga.len(),
    };
    for (i, (a, gn)) in ga.iter().zip(&numeric).enumerate() {
        let rel = (a - gn).abs() / a.abs().max(gn.abs()).max(1e-8);
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Parameter matrices with one entry overridden by an extended-precision value.
struct Params<'a> {
    mats: Vec<&'a Matrix>,
    over: (usize, usize, Quad),
}

impl Params<'_> {
    fn get(&self, m: usize, e: usize) -> Quad {
        if (m, e) == (self.over.0, self.over.1) {
            self.over.2
        } else {
            Quad::from(self.mats[m].as_slice()[e])
        }
    }

    /// `M · [parts..., 1]` for parameter matrix `m`.
    fn matvec(&self, m: usize, parts: &[&[Quad]]) -> Vec<Quad> {
        let cols = self.mats[m].cols();
        (0..self.mats[m].rows())
            .map(|r| {
                let mut acc = Quad::from(0.0);
                let mut c = 0;
                for part in parts {
                    for v in *part {
                        acc += self.get(m, r * cols + c) * *v;
                        c += 1;
                    }
                }
                acc + self.get(m, r * cols + c)
            })
            .collect()
    }
}

fn sigmoid(x: Quad) -> Quad {
    let one = Quad::from(1.0);
    if x.0 >= 0.0 {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

fn tanh(x: Quad) -> Quad {
    let one = Quad::from(1.0);
    let two = Quad::from(2.0);
    if x.0 >= 0.0 {
        one - two / ((x + x).exp() + one)
    } else {
        two / ((-(x + x)).exp() + one) - one
    }
}

/// One GRU step; `base` indexes the layer's reset-gate matrix.
fn step(p: &Params<'_>, base: usize, x: &[Quad], h: &[Quad]) -> Vec<Quad> {
    let r: Vec<Quad> = p.matvec(base, &[x, h]).into_iter().map(sigmoid).collect();
    let u: Vec<Quad> = p.matvec(base + 1, &[x, h]).into_iter().map(sigmoid).collect();
    let rh: Vec<Quad> = r.iter().zip(h).map(|(a, b)| *a * *b).collect();
    let cand: Vec<Quad> = p.matvec(base + 2, &[x, &rh]).into_iter().map(tanh).collect();
    let one = Quad::from(1.0);
    (0..h.len()).map(|i| (one - u[i]) * h[i] + u[i] * cand[i]).collect()
}

/// Inference-mode masked loss in double-double arithmetic.
fn reference_loss(model: &Seq2SeqModel, window: &AugmentedWindow, over: (usize, usize, Quad)) -> Quad {
    let cfg = &model.config;
    let n_layers = cfg.layer_sizes.len();
    let p = Params {
        mats: model.params.matrices(),
        over,
    };
    let zero = Quad::from(0.0);
    let mut h: Vec<Vec<Quad>> = cfg.layer_sizes.iter().map(|&c| vec![zero; c]).collect();
    for t in 0..cfg.window {
        let mut below: Vec<Quad> = model.input_row(window, t).into_iter().map(Quad::from).collect();
        for (l, hl) in h.iter_mut().enumerate() {
            *hl = step(&p, 3 * l, &below, hl);
            below = hl.clone();
        }
    }
    let inputs = vec![zero; cfg.input_dim()];
    let mut loss = zero;
    for s in 0..cfg.window {
        let mut below = inputs.clone();
        for (l, hl) in h.iter_mut().enumerate() {
            *hl = step(&p, 3 * (n_layers + l), &below, hl);
            below = hl.clone();
        }
        let y = p.matvec(6 * n_layers, &[&below]);
        let row = model.target_row(s);
        let mut sq = zero;
        for (j, yj) in y.iter().enumerate() {
            if window.mask[(row, j)] != 0.0 {
                let e = Quad::from(window.values[(row, j)]) - *yj;
                sq += e * e;
            }
        }
        loss += match cfg.loss {
            LossKind::Squared => sq,
            LossKind::Norm if sq.0 > 0.0 => sq.sqrt(),
            LossKind::Norm => zero,
        };
    }
    loss
}
