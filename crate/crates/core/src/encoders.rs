//! The three networks of the lab.
//!
//! * visual expert `f_V`: frame -> embedding, frozen after pretraining
//! * generator `G`: `[noise ; condition]` -> frame, frozen after pretraining
//! * audio encoder `f_A`: per-timestep network, mean pooling over time, then
//!   a linear head. Trained to land in the visual embedding space.
//!
//! The generator is conditioned on unit-normalized embeddings, so every
//! embedding fed to it (visual or audio) goes through [`unit_or_error`].

use rand::Rng;

use crate::embedding::{norm, FeatureVector};
use crate::error::{Result, XmaError};
use crate::network::{Activation, InputKind, Mlp, NetworkSpec, Trace};

#[derive(Debug, Clone, PartialEq)]
pub struct VisualModels {
    pub encoder: Mlp,
    pub generator: Mlp,
}

impl VisualModels {
    pub fn embed_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.generator.input_dim() - self.encoder.output_dim()
    }

    pub fn frame_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.generator.input_dim() <= self.encoder.output_dim()
            || self.generator.output_dim() != self.encoder.input_dim()
        {
            return Err(XmaError::Shape(format!(
                "generator {:?} incompatible with encoder {:?}",
                self.generator.spec().widths,
                self.encoder.spec().widths
            )));
        }
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.encoder.freeze();
        self.generator.freeze();
    }

    pub fn checksum(&self) -> String {
        format!("{}:{}", self.encoder.checksum(), self.generator.checksum())
    }
}

pub fn visual_encoder_spec(frame_dim: usize, hidden: usize, embed_dim: usize, act: Activation) -> Result<NetworkSpec> {
    NetworkSpec::new(vec![frame_dim, hidden, embed_dim], act, InputKind::FlatVector, false)
}

pub fn generator_spec(noise_dim: usize, embed_dim: usize, hidden: usize, frame_dim: usize, act: Activation) -> Result<NetworkSpec> {
    NetworkSpec::new(
        vec![noise_dim + embed_dim, hidden, frame_dim],
        act,
        InputKind::FlatVector,
        false,
    )
}

/// `z_V = f_V(frame)`, un-normalized.
pub fn forward_visual(encoder: &Mlp, frame: &FeatureVector) -> Result<FeatureVector> {
    FeatureVector::new(encoder.forward(frame.as_slice(), 1)?)
}

/// `G(z_noise, z_cond)`.
pub fn generate(generator: &Mlp, z_noise: &FeatureVector, z_cond: &FeatureVector) -> Result<FeatureVector> {
    if z_noise.dim() + z_cond.dim() != generator.input_dim() {
        return Err(XmaError::Shape(format!(
            "generator takes {} inputs, got noise {} + condition {}",
            generator.input_dim(),
            z_noise.dim(),
            z_cond.dim()
        )));
    }
    let mut input = z_noise.as_slice().to_vec();
    input.extend_from_slice(z_cond.as_slice());
    FeatureVector::new(generator.forward(&input, 1)?)
}

pub(crate) fn unit_or_error(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return Err(XmaError::Degenerate("zero embedding cannot condition the generator".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Temporal audio encoder: a shared per-timestep network, mean pooling over
/// time, and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioEncoder {
    pub frame_net: Mlp,
    pub head: Mlp,
}

/// Cached activations of a batched audio forward pass.
#[derive(Debug, Clone)]
pub struct AudioTrace {
    pub clips: usize,
    pub timesteps: usize,
    pub frames: Trace,
    pub head: Trace,
}

impl AudioTrace {
    /// Per-timestep embeddings before pooling, `clips*T x e`.
    pub fn frame_embeddings(&self) -> &[f64] {
        self.frames.output()
    }

    pub fn output(&self) -> &[f64] {
        self.head.output()
    }
}

impl AudioEncoder {
    pub fn init<R: Rng>(
        audio_dim: usize,
        hidden: usize,
        frame_dim: usize,
        embed_dim: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let frame_spec = NetworkSpec::new(
            vec![audio_dim, hidden, frame_dim],
            act,
            InputKind::TemporalSequence,
            true,
        )?;
        let head_spec = NetworkSpec::new(vec![frame_dim, embed_dim], act, InputKind::FlatVector, false)?;
        Ok(AudioEncoder {
            frame_net: Mlp::init(frame_spec, rng),
            head: Mlp::init(head_spec, rng),
        })
    }

    pub fn from_networks(frame_net: Mlp, head: Mlp) -> Result<Self> {
        if frame_net.output_dim() != head.input_dim() {
            return Err(XmaError::Shape(format!(
                "frame network emits {} but head expects {}",
                frame_net.output_dim(),
                head.input_dim()
            )));
        }
        if frame_net.spec().hidden_layers() < 1 {
            return Err(XmaError::Shape("frame network needs a hidden layer".into()));
        }
        Ok(AudioEncoder { frame_net, head })
    }

    pub fn audio_dim(&self) -> usize {
        self.frame_net.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.head.output_dim()
    }

    /// Forward over `clips` windows of `timesteps` frames each, row-major
    /// `clips x T x D_A`.
    pub fn forward_batch(&self, windows: &[f64], clips: usize, timesteps: usize) -> Result<AudioTrace> {
        if timesteps == 0 {
            return Err(XmaError::InvalidArgument("empty audio sequence".into()));
        }
        let frames = self.frame_net.forward_trace(windows, clips * timesteps)?;
        let e = self.frame_net.output_dim();
        let per_step = frames.output();
        let mut pooled = vec![0.0; clips * e];
        for c in 0..clips {
            let dst = &mut pooled[c * e..(c + 1) * e];
            for t in 0..timesteps {
                let row = &per_step[(c * timesteps + t) * e..(c * timesteps + t + 1) * e];
                for (p, v) in dst.iter_mut().zip(row) {
                    *p += v;
                }
            }
            dst.iter_mut().for_each(|p| *p /= timesteps as f64);
        }
        let head = self.head.forward_trace(&pooled, clips)?;
        Ok(AudioTrace {
            clips,
            timesteps,
            frames,
            head,
        })
    }

    /// Gradient flowing into the per-timestep embeddings (before pooling),
    /// plus the head parameter gradient.
    pub fn backward_to_frames(&self, trace: &AudioTrace, grad_output: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (g_head, g_pooled) = self.head.backward(&trace.head, grad_output);
        let e = self.frame_net.output_dim();
        let t_len = trace.timesteps;
        let mut g_frames = vec![0.0; trace.clips * t_len * e];
        for c in 0..trace.clips {
            let gp = &g_pooled[c * e..(c + 1) * e];
            for t in 0..t_len {
                let dst = &mut g_frames[(c * t_len + t) * e..(c * t_len + t + 1) * e];
                for (d, g) in dst.iter_mut().zip(gp) {
                    *d = g / t_len as f64;
                }
            }
        }
        (g_frames, g_head)
    }

    /// Parameter gradients `(frame_net, head)` for upstream `grad_output`.
    pub fn backward(&self, trace: &AudioTrace, grad_output: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (g_frames, g_head) = self.backward_to_frames(trace, grad_output);
        let (g_frame_net, _) = self.frame_net.backward(&trace.frames, &g_frames);
        (g_frame_net, g_head)
    }

    /// `f_A(clip)` for one `T x D_A` clip.
    pub fn forward(&self, clip_audio: &[f64], timesteps: usize) -> Result<FeatureVector> {
        let trace = self.forward_batch(clip_audio, 1, timesteps)?;
        FeatureVector::new(trace.output().to_vec())
    }

    pub fn checksum(&self) -> String {
        format!("{}:{}", self.frame_net.checksum(), self.head.checksum())
    }
}

/// `f_A` as a free function.
pub fn forward_audio(encoder: &AudioEncoder, clip_audio: &[f64], timesteps: usize) -> Result<FeatureVector> {
    encoder.forward(clip_audio, timesteps)
}
