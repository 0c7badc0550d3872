//! Input-space and latent-space manipulations, and temporal saliency.

use serde::{Deserialize, Serialize};

use crate::embedding::{norm, FeatureVector};
use crate::encoders::AudioEncoder;
use crate::error::{Result, XmaError};
use crate::network::Mlp;

/// A `T x D_A` spectrogram-analog clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    pub timesteps: usize,
    pub dim: usize,
    pub samples: Vec<f64>,
    /// Product of all gains applied so far.
    pub gain: f64,
}

impl AudioClip {
    pub fn new(timesteps: usize, dim: usize, samples: Vec<f64>) -> Result<Self> {
        if timesteps == 0 || dim == 0 {
            return Err(XmaError::InvalidArgument("empty audio clip".into()));
        }
        if samples.len() != timesteps * dim {
            return Err(XmaError::Shape(format!(
                "{} samples for a {timesteps}x{dim} clip",
                samples.len()
            )));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(XmaError::NonFinite("audio clip samples".into()));
        }
        Ok(AudioClip {
            timesteps,
            dim,
            samples,
            gain: 1.0,
        })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.samples[t * self.dim..(t + 1) * self.dim]
    }
}

pub fn scale_volume(clip: &AudioClip, gain: f64) -> Result<AudioClip> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(XmaError::InvalidArgument(format!("gain must be positive, got {gain}")));
    }
    Ok(AudioClip {
        samples: clip.samples.iter().map(|x| x * gain).collect(),
        gain: clip.gain * gain,
        ..*clip
    })
}

pub fn mix_clips(clips: &[&AudioClip], weights: &[f64]) -> Result<AudioClip> {
    let first = clips.first().ok_or_else(|| XmaError::InvalidArgument("nothing to mix".into()))?;
    if clips.len() != weights.len() {
        return Err(XmaError::Shape(format!("{} clips but {} weights", clips.len(), weights.len())));
    }
    if let Some(c) = clips.iter().find(|c| (c.timesteps, c.dim) != (first.timesteps, first.dim)) {
        return Err(XmaError::Shape(format!(
            "cannot mix {}x{} with {}x{}",
            first.timesteps, first.dim, c.timesteps, c.dim
        )));
    }
    let mut samples = vec![0.0; first.samples.len()];
    for (clip, &w) in clips.iter().zip(weights) {
        for (s, x) in samples.iter_mut().zip(&clip.samples) {
            *s += w * x;
        }
    }
    AudioClip::new(first.timesteps, first.dim, samples)
}

fn same_dim(a: &FeatureVector, b: &FeatureVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(XmaError::Shape(format!("dims {} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `lambda * z_a + (1 - lambda) * z_b`, evaluated as `z_b + lambda * (z_a - z_b)`
/// so that equal inputs come back unchanged. Exact at both endpoints.
pub fn interpolate_latent(z_a: &FeatureVector, z_b: &FeatureVector, lambda: f64) -> Result<FeatureVector> {
    same_dim(z_a, z_b)?;
    if lambda == 1.0 {
        return Ok(z_a.clone());
    }
    if lambda == 0.0 {
        return Ok(z_b.clone());
    }
    FeatureVector::new(
        z_a.as_slice()
            .iter()
            .zip(z_b.as_slice())
            .map(|(a, b)| b + lambda * (a - b))
            .collect(),
    )
}

/// `z_inv + lambda * (z_a1 - z_a2)`.
pub fn edit_direction(z_inv: &FeatureVector, z_a1: &FeatureVector, z_a2: &FeatureVector, lambda: f64) -> Result<FeatureVector> {
    same_dim(z_inv, z_a1)?;
    same_dim(z_a1, z_a2)?;
    FeatureVector::new(
        z_inv
            .as_slice()
            .iter()
            .zip(z_a1.as_slice().iter().zip(z_a2.as_slice()))
            .map(|(z, (a, b))| z + lambda * (a - b))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Saliency {
    pub weights: Vec<f64>,
    /// Set when every rectified weight was zero; `weights` is then uniform.
    pub degenerate: bool,
}

/// Grad-CAM over the pooling stage. The objective is `||G(0, unit(f_A(clip)))||^2`;
/// each timestep's weight is the channel mean of gradient times activation at
/// its pre-pooling embedding, rectified, then normalized to sum to one.
pub fn temporal_saliency(encoder: &AudioEncoder, generator: &Mlp, clip: &AudioClip) -> Result<Saliency> {
    let d = encoder.embed_dim();
    let noise_dim = generator
        .input_dim()
        .checked_sub(d)
        .filter(|&n| n > 0)
        .ok_or_else(|| XmaError::Shape("generator input narrower than the embedding".into()))?;
    let t_len = clip.timesteps;
    let uniform = || Saliency {
        weights: vec![1.0 / t_len as f64; t_len],
        degenerate: true,
    };
    let trace = encoder.forward_batch(&clip.samples, 1, t_len)?;
    let z = trace.output();
    let n = norm(z);
    if n == 0.0 {
        return Ok(uniform());
    }
    let u: Vec<f64> = z.iter().map(|x| x / n).collect();
    let mut input = vec![0.0; noise_dim];
    input.extend_from_slice(&u);
    let gen = generator.forward_trace(&input, 1)?;
    let grad_out: Vec<f64> = gen.output().iter().map(|y| 2.0 * y).collect();
    let (_, grad_in) = generator.backward(&gen, &grad_out);
    let g_u = &grad_in[noise_dim..];
    let proj: f64 = g_u.iter().zip(&u).map(|(a, b)| a * b).sum();
    let g_z: Vec<f64> = g_u.iter().zip(&u).map(|(g, ui)| (g - proj * ui) / n).collect();
    let (g_frames, _) = encoder.backward_to_frames(&trace, &g_z);

    let acts = trace.frame_embeddings();
    let e = encoder.frame_net.output_dim();
    let raw: Vec<f64> = (0..t_len)
        .map(|t| {
            let s: f64 = (0..e).map(|c| g_frames[t * e + c] * acts[t * e + c]).sum();
            (s / e as f64).max(0.0)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Ok(uniform());
    }
    Ok(Saliency {
        weights: raw.iter().map(|w| w / total).collect(),
        degenerate: false,
    })
}
