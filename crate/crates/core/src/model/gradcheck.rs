//! Central finite-difference check of the model gradients.

use rand::Rng;

use super::{PreparedInputs, SourceDraws, ToyNsfModel};
use crate::error::Result;
use crate::loss::{build_sine_mask, total_loss_with_grads, LossConfig, LossInputs, SpectralLoss};

/// Comparison for one named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub size: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `|analytic - numeric|` (Euclidean).
    pub diff_norm: f64,
    /// `diff_norm / max(analytic_norm, numeric_norm, floor)`, where the
    /// floor is `1e-6` times the norm of the whole gradient; tensors whose
    /// gradient is numerically zero are therefore compared on an absolute
    /// scale.
    pub rel_error: f64,
}

/// A fixed evaluation point: inputs, target, draws and mask are frozen so
/// the loss is a deterministic function of the parameters.
pub struct FrozenLoss<'a> {
    pub inputs: &'a PreparedInputs,
    pub target: &'a [f64],
    pub draws: SourceDraws,
    pub mask: Option<Vec<f64>>,
    pub loss_cfg: LossConfig,
    evaluator: SpectralLoss,
}

impl<'a> FrozenLoss<'a> {
    pub fn new<R: Rng + ?Sized>(
        model: &ToyNsfModel,
        inputs: &'a PreparedInputs,
        target: &'a [f64],
        loss_cfg: LossConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let draws = model.draw(inputs.num_samples(), rng);
        let mask = if loss_cfg.mask_loss {
            Some(build_sine_mask(&inputs.f0, &model.config.source, rng)?.into_samples())
        } else {
            None
        };
        let evaluator = SpectralLoss::new(&loss_cfg.stft_configs, loss_cfg.eta)?;
        Ok(Self {
            inputs,
            target,
            draws,
            mask,
            loss_cfg,
            evaluator,
        })
    }

    /// Total loss and, when `want_grad`, the flattened parameter gradient.
    pub fn eval(&self, model: &ToyNsfModel, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let pass = model.forward_with_draws(self.inputs, &self.draws, want_grad)?;
        let (report, grads) = total_loss_with_grads(
            LossInputs {
                output: &pass.output,
                blocks: &pass.blocks,
                target: self.target,
                mask: self.mask.as_deref(),
                trainable_beta: model.config.beta_trainable.then_some(model.params.beta),
            },
            &self.loss_cfg,
            &self.evaluator,
            want_grad,
        )?;
        let flat = match grads {
            Some(g) => Some(model.backward(&pass, &g)?.to_flat()),
            None => None,
        };
        Ok((report.total, flat))
    }
}

/// Compares the analytic gradient with central differences of step `h` for
/// every tensor of the model. The five-point stencil
/// `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h` is used: the log
/// spectral loss has steep curvature in bins whose masked power is close to
/// `eta`, where the two-point rule's `O(h^2)` error alone exceeds `1e-4`. A fixed beta is skipped since it is not a
/// trainable parameter.
pub fn check_gradients(
    model: &ToyNsfModel,
    frozen: &FrozenLoss<'_>,
    h: f64,
) -> Result<Vec<GroupCheck>> {
    let (_, analytic) = frozen.eval(model, true)?;
    let analytic = analytic.expect("gradient requested");
    let base = model.params.to_flat();
    let mut numeric = vec![0.0; base.len()];
    let mut probe = model.clone();
    let mut eval_at = |i: usize, x: f64| -> Result<f64> {
        let mut p = base.clone();
        p[i] = x;
        probe.params.set_flat(&p)?;
        Ok(frozen.eval(&probe, false)?.0)
    };
    for i in 0..base.len() {
        let x = base[i];
        let d1 = eval_at(i, x + h)? - eval_at(i, x - h)?;
        let d2 = eval_at(i, x + 2.0 * h)? - eval_at(i, x - 2.0 * h)?;
        numeric[i] = (8.0 * d1 - d2) / (12.0 * h);
    }
    let global = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let floor = 1e-6 * global;
    let mut out = Vec::new();
    let mut pos = 0;
    model.params.visit(&mut |name, _, values| {
        let range = pos..pos + values.len();
        pos += values.len();
        if name == "beta" && !model.config.beta_trainable {
            return;
        }
        let a = &analytic[range.clone()];
        let n = &numeric[range];
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let (an, nn) = (norm(a), norm(n));
        out.push(GroupCheck {
            name: name.to_string(),
            size: values.len(),
            analytic_norm: an,
            numeric_norm: nn,
            diff_norm: diff,
            rel_error: diff / an.max(nn).max(floor),
        });
    });
    Ok(out)
}
