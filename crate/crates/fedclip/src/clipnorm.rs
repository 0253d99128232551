//! Self-tuning clipping norm.
//!
//! The clip norm C is treated as a decision variable of a composite
//! objective: model loss plus `penalty * C`. Its loss sensitivity is
//! estimated by two noise-free virtual SGD probe steps (clip at C(1+h) and
//! C(1-h), step, re-evaluate the batch loss), and C then descends its own
//! gradient, floored at `CLIP_FLOOR`.

use crate::error::{Error, Result};
use crate::mechanism::clip_gradient;
use crate::model::ModelSpec;
use crate::tensor::{Example, ParamVector};

/// Hard lower bound on the clip norm; updates clamp to exactly this value.
pub const CLIP_FLOOR: f64 = 1e-3;

/// Which formula turns the estimated loss slope into a clip-norm gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipGradVariant {
    /// gradient = penalty - slope / C (the slope enters scaled by 1/C).
    Scaled,
    /// gradient = slope + penalty (the slope enters unscaled).
    Direct,
}

/// Mutable per-client state of the clip-norm optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct ClippingState {
    /// Current clip norm C; never below `floor`.
    pub clip_norm: f64,
    /// Weight of the norm term in the composite objective.
    pub penalty: f64,
    /// Step size for clip-norm updates.
    pub lr: f64,
    /// Lower clamp for the clip norm.
    pub floor: f64,
    /// Relative half-width h of the probe pair C(1 +- h).
    pub probe_width: f64,
    pub variant: ClipGradVariant,
}

impl ClippingState {
    pub fn new(clip_norm: f64, penalty: f64, lr: f64) -> Result<Self> {
        let state = ClippingState {
            clip_norm,
            penalty,
            lr,
            floor: CLIP_FLOOR,
            probe_width: 0.1,
            variant: ClipGradVariant::Scaled,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn with_probe_width(mut self, probe_width: f64) -> Self {
        self.probe_width = probe_width;
        self
    }

    pub fn with_variant(mut self, variant: ClipGradVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.clip_norm.is_finite() || self.clip_norm < self.floor {
            return Err(Error::InvalidClipNorm(self.clip_norm));
        }
        if !(self.probe_width > 0.0 && self.probe_width < 1.0) {
            return Err(Error::Validation {
                key: "probe_width".into(),
                reason: format!("must lie in (0, 1), got {}", self.probe_width),
            });
        }
        Ok(())
    }

    /// Composite objective value at the current norm.
    pub fn composite_loss(&self, model_loss: f64) -> f64 {
        model_loss + self.penalty * self.clip_norm
    }

    /// Clip-norm gradient from an estimated loss slope dL/dC.
    pub fn gradient(&self, loss_slope: f64) -> f64 {
        match self.variant {
            ClipGradVariant::Scaled => self.penalty - loss_slope / self.clip_norm,
            ClipGradVariant::Direct => loss_slope + self.penalty,
        }
    }

    /// One descent step on the clip norm, clamped at the floor.
    pub fn descend(&mut self, gradient: f64) {
        self.clip_norm = (self.clip_norm - self.lr * gradient).max(self.floor);
    }

    /// True when a probe pair at the current norm would dip under the floor.
    pub fn probe_fits(&self) -> bool {
        self.clip_norm * (1.0 - self.probe_width) >= self.floor
    }
}

/// A batch objective the probe can step against: loss and per-example
/// gradients at given parameters. Implemented by model batches and by the
/// scalar toys in tests.
pub trait LossProbe {
    fn batch_loss(&self, params: &ParamVector) -> Result<f64>;
    fn per_example_grads(&self, params: &ParamVector) -> Result<Vec<ParamVector>>;
}

/// The production probe target: a model spec plus one batch.
pub struct ModelBatch<'a> {
    pub spec: &'a ModelSpec,
    pub batch: &'a [Example],
}

impl LossProbe for ModelBatch<'_> {
    fn batch_loss(&self, params: &ParamVector) -> Result<f64> {
        self.spec.batch_loss(params, self.batch)
    }

    fn per_example_grads(&self, params: &ParamVector) -> Result<Vec<ParamVector>> {
        self.spec.per_example_grads(params, self.batch)
    }
}

/// Symmetric finite-difference estimate of dL/dC.
///
/// Two virtual noise-free clipped steps are taken from `params`, one with the
/// norm widened to C(1+h) and one narrowed to C(1-h); the slope is
/// (loss_plus - loss_minus) / (2 C h). Parameters and RNG streams are never
/// mutated; probes reuse the caller's current learning rate and draw no
/// noise.
pub fn probe_loss_slope(
    target: &impl LossProbe,
    params: &ParamVector,
    state: &ClippingState,
    probe_lr: f64,
) -> Result<f64> {
    let lower = state.clip_norm * (1.0 - state.probe_width);
    if lower < state.floor {
        return Err(Error::ProbeBelowFloor { lower, floor: state.floor });
    }
    let upper = state.clip_norm * (1.0 + state.probe_width);
    let grads = target.per_example_grads(params)?;
    if grads.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let loss_at = |clip: f64| -> Result<f64> {
        let mut sum = vec![0.0; params.dim()];
        for g in &grads {
            let clipped = clip_gradient(g, clip)?;
            for (s, v) in sum.iter_mut().zip(clipped.values()) {
                *s += v;
            }
        }
        let scale = 1.0 / grads.len() as f64;
        let mean = ParamVector::from_raw(sum.into_iter().map(|s| s * scale).collect());
        target.batch_loss(&params.sub_scaled(probe_lr, &mean))
    };
    let loss_plus = loss_at(upper)?;
    let loss_minus = loss_at(lower)?;
    Ok((loss_plus - loss_minus) / (2.0 * state.clip_norm * state.probe_width))
}

/// `probe_loss_slope` for a model batch.
pub fn model_loss_slope(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[Example],
    state: &ClippingState,
    probe_lr: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    probe_loss_slope(&ModelBatch { spec, batch }, params, state, probe_lr)
}

// ---------------------------------------------------------------------------
// Scalar objectives with the Polyak-Lojasiewicz property, for isolating the
// descent dynamics of the clip norm from the learning problem.
// ---------------------------------------------------------------------------

/// `f(c) = scale * (c - center)^2 + offset`.
///
/// Smoothness is 2 * scale. The declared PL constant is `scale`: the PL
/// inequality 0.5 f'^2 >= pl_constant * (f - f*) holds with a factor-two
/// margin, and the per-step gap factor (1 - 2 * pl_constant * step) is then
/// a true upper bound for steps up to 1 / (2 * scale).
#[derive(Clone, Debug)]
pub struct SyntheticPlObjective {
    pub pl_constant: f64,
    pub smoothness: f64,
    pub optimum_value: f64,
    center: f64,
    scale: f64,
}

impl SyntheticPlObjective {
    pub fn quadratic(center: f64, scale: f64) -> Self {
        assert!(scale > 0.0);
        SyntheticPlObjective {
            pl_constant: scale,
            smoothness: 2.0 * scale,
            optimum_value: 0.0,
            center,
            scale,
        }
    }

    pub fn value(&self, c: f64) -> f64 {
        let d = c - self.center;
        self.scale * d * d + self.optimum_value
    }

    pub fn gradient(&self, c: f64) -> f64 {
        2.0 * self.scale * (c - self.center)
    }

    /// Gap shrink factor promised per noise-free step.
    pub fn gap_factor(&self, step: f64) -> f64 {
        1.0 - 2.0 * self.pl_constant * step
    }

    /// 0.5 f'(c)^2 >= pl_constant * (f(c) - f*), checkable everywhere.
    pub fn pl_inequality_holds(&self, c: f64) -> bool {
        let g = self.gradient(c);
        0.5 * g * g + 1e-15 >= self.pl_constant * (self.value(c) - self.optimum_value)
    }
}

/// Runs plain gradient descent on the objective and returns the loss gap
/// f(c_t) - f* for t = 0..=steps. Step sizes outside (0, 2/smoothness] are
/// rejected as unstable.
pub fn descent_trace(
    objective: &SyntheticPlObjective,
    start: f64,
    step: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let limit = 2.0 / objective.smoothness;
    if !(step > 0.0) || step > limit || !step.is_finite() {
        return Err(Error::UnstableStepSize { step, limit });
    }
    let mut c = start;
    let mut gaps = Vec::with_capacity(steps + 1);
    gaps.push(objective.value(c) - objective.optimum_value);
    for _ in 0..steps {
        c -= step * objective.gradient(c);
        gaps.push(objective.value(c) - objective.optimum_value);
    }
    Ok(gaps)
}
