//! The differentially private update primitive: per-example L2 clipping,
//! Gaussian noise on the clipped sum, and the resulting SGD step.
//!
//! Per batch: every example gradient is clipped to norm at most C, the
//! clipped gradients are summed, a single Gaussian draw with per-coordinate
//! std sigma * C is added to the sum, and the result is divided by the
//! realized batch size.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::StreamRng;
use crate::tensor::{Example, ParamVector};

/// Relative slack on "already inside the ball": vectors within
/// C * (1 + CLIP_SLACK) pass through unchanged, which makes clipping exactly
/// idempotent despite rounding in the scale multiply.
pub const CLIP_SLACK: f64 = 1e-12;

/// Norm tolerance accepted by `noisy_mean` on its inputs.
pub const UNCLIPPED_TOLERANCE: f64 = 1e-9;

/// Gaussian noise source for one batch update.
#[derive(Clone, Debug)]
pub struct NoiseConfig {
    /// Noise multiplier sigma; per-coordinate std on the summed gradients is
    /// sigma * clip_norm.
    pub noise_multiplier: f64,
    /// Key of the stream this batch draws from; one key per
    /// (seed, round, client, batch) so draws never collide.
    pub stream: u64,
}

impl NoiseConfig {
    pub fn new(noise_multiplier: f64, stream: u64) -> Result<Self> {
        if !noise_multiplier.is_finite() || noise_multiplier < 0.0 {
            return Err(Error::InvalidSigma(noise_multiplier));
        }
        Ok(NoiseConfig { noise_multiplier, stream })
    }

    /// Noiseless configuration, used by plain-SGD paths and probes.
    pub fn silent() -> Self {
        NoiseConfig { noise_multiplier: 0.0, stream: 0 }
    }
}

/// What clipping did to one batch.
#[derive(Clone, Debug, Default)]
pub struct ClipReport {
    pub num_clipped: usize,
    pub num_total: usize,
    pub mean_preclip_norm: f64,
    pub clip_fraction: f64,
}

/// Scales `gradient` to norm at most `clip_norm`; inputs already inside the
/// ball are returned bit-for-bit unchanged.
pub fn clip_gradient(gradient: &ParamVector, clip_norm: f64) -> Result<ParamVector> {
    if !(clip_norm > 0.0) || !clip_norm.is_finite() {
        return Err(Error::InvalidClipNorm(clip_norm));
    }
    let norm = gradient.l2_norm();
    if norm <= clip_norm * (1.0 + CLIP_SLACK) {
        Ok(gradient.clone())
    } else {
        Ok(gradient.scale(clip_norm / norm))
    }
}

/// True when `clip_gradient` would rescale this norm.
pub fn norm_exceeds_clip(norm: f64, clip_norm: f64) -> bool {
    norm > clip_norm * (1.0 + CLIP_SLACK)
}

/// Mean of already-clipped gradients plus one Gaussian draw on the sum.
/// Inputs whose norm exceeds the declared clip norm (beyond tolerance) are
/// rejected: noise calibrated to C is meaningless otherwise.
pub fn noisy_mean(
    clipped: &[ParamVector],
    clip_norm: f64,
    noise: &NoiseConfig,
    batch_size: usize,
) -> Result<ParamVector> {
    if clipped.is_empty() || batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    debug_assert_eq!(batch_size, clipped.len());
    if !(clip_norm > 0.0) || !clip_norm.is_finite() {
        return Err(Error::InvalidClipNorm(clip_norm));
    }
    if !noise.noise_multiplier.is_finite() || noise.noise_multiplier < 0.0 {
        return Err(Error::InvalidSigma(noise.noise_multiplier));
    }
    for v in clipped {
        let norm = v.l2_norm();
        if norm > clip_norm * (1.0 + UNCLIPPED_TOLERANCE) {
            return Err(Error::UnclippedInput { norm, clip_norm });
        }
    }
    let dim = clipped[0].dim();
    let mut sum = vec![0.0; dim];
    for v in clipped {
        if v.dim() != dim {
            return Err(Error::ShapeMismatch(format!(
                "gradient dims differ: {} vs {}",
                v.dim(),
                dim
            )));
        }
        for (s, x) in sum.iter_mut().zip(v.values()) {
            *s += x;
        }
    }
    if noise.noise_multiplier > 0.0 {
        // One normal per coordinate, in coordinate order, from this batch's
        // dedicated stream.
        let mut rng = StreamRng::new(noise.stream);
        let std = noise.noise_multiplier * clip_norm;
        for s in sum.iter_mut() {
            *s += std * rng.standard_normal();
        }
    }
    let scale = 1.0 / batch_size as f64;
    Ok(ParamVector::from_raw(sum.into_iter().map(|s| s * scale).collect()))
}

/// One DP-SGD step on a batch: per-example gradients, clip, noisy mean,
/// descend. Returns the new parameters and what clipping did.
pub fn dp_sgd_step(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &[Example],
    clip_norm: f64,
    noise: &NoiseConfig,
    lr: f64,
) -> Result<(ParamVector, ClipReport)> {
    let grads = spec.per_example_grads(params, batch)?;
    let mut clipped = Vec::with_capacity(grads.len());
    let mut norm_sum = 0.0;
    let mut num_clipped = 0usize;
    for g in &grads {
        let norm = g.l2_norm();
        norm_sum += norm;
        if norm_exceeds_clip(norm, clip_norm) {
            num_clipped += 1;
        }
        clipped.push(clip_gradient(g, clip_norm)?);
    }
    let mean = noisy_mean(&clipped, clip_norm, noise, batch.len())?;
    let report = ClipReport {
        num_clipped,
        num_total: grads.len(),
        mean_preclip_norm: norm_sum / grads.len() as f64,
        clip_fraction: num_clipped as f64 / grads.len() as f64,
    };
    Ok((params.sub_scaled(lr, &mean), report))
}
