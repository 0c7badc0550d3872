//! Per-timestep audio-visual correlation scoring and moment selection.
//!
//! A clip's training pair is taken at the timestep where the two modalities
//! agree most, `C[t] = q_visual[t] . q_audio[t]`, instead of blindly at the
//! middle frame.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, norm};
use crate::error::{Result, XmaError};
use crate::synth::{Basis, ClipRecord, Dataset};

pub const DEFAULT_LOW_CONFIDENCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairSource {
    #[serde(rename = "SELECTED_TOP1")]
    SelectedTop1,
    #[serde(rename = "MID_FRAME")]
    MidFrame,
}

impl PairSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PairSource::SelectedTop1 => "SELECTED_TOP1",
            PairSource::MidFrame => "MID_FRAME",
        }
    }
}

impl std::str::FromStr for PairSource {
    type Err = XmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SELECTED_TOP1" => Ok(PairSource::SelectedTop1),
            "MID_FRAME" => Ok(PairSource::MidFrame),
            other => Err(XmaError::Config(format!("unknown pair source {other:?}"))),
        }
    }
}

impl std::fmt::Display for PairSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-timestep features of both modalities in a shared `m`-dim space.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAlignedFeatures {
    timesteps: usize,
    dim: usize,
    q_visual: Vec<f64>,
    q_audio: Vec<f64>,
}

impl TimeAlignedFeatures {
    pub fn new(timesteps: usize, dim: usize, q_visual: Vec<f64>, q_audio: Vec<f64>) -> Result<Self> {
        if timesteps == 0 || dim == 0 {
            return Err(XmaError::Shape("need T >= 1 and m >= 1".into()));
        }
        if q_visual.len() != timesteps * dim || q_audio.len() != timesteps * dim {
            return Err(XmaError::Shape(format!(
                "expected {timesteps}x{dim} per modality, got {} visual and {} audio values",
                q_visual.len(),
                q_audio.len()
            )));
        }
        Ok(TimeAlignedFeatures {
            timesteps,
            dim,
            q_visual,
            q_audio,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }
}

/// `C[t] = q_visual[t] . q_audio[t]`.
pub fn correlation_scores(f: &TimeAlignedFeatures) -> Vec<f64> {
    let m = f.dim;
    (0..f.timesteps)
        .map(|t| dot(&f.q_visual[t * m..(t + 1) * m], &f.q_audio[t * m..(t + 1) * m]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentAnnotation {
    pub clip_id: u32,
    pub mode: PairSource,
    /// Selected timesteps, best first.
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub low_confidence: bool,
}

impl MomentAnnotation {
    pub fn top1(&self) -> usize {
        self.indices[0]
    }
}

/// The `k` highest-scoring timesteps, ties broken by earlier timestep.
pub fn top_k_moments(clip_id: u32, scores: &[f64], k: usize) -> Result<MomentAnnotation> {
    if k == 0 || k > scores.len() {
        return Err(XmaError::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(XmaError::NonFinite("correlation score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps earlier timesteps first among equal scores.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    let best = scores[order[0]];
    Ok(MomentAnnotation {
        clip_id,
        mode: PairSource::SelectedTop1,
        indices: order,
        scores: scores.to_vec(),
        low_confidence: best < DEFAULT_LOW_CONFIDENCE,
    })
}

/// Scores a synthetic clip by projecting each frame into the shared latent
/// space with the synthesizer's observation bases and unit-normalizing per
/// timestep. Stands in for a pretrained sound-source localizer.
#[derive(Debug, Clone)]
pub struct CorrelationScorer {
    visual: Basis,
    audio: Basis,
}

impl CorrelationScorer {
    pub fn for_dataset(ds: &Dataset) -> Self {
        let (visual, audio) = ds.observation_bases();
        CorrelationScorer { visual, audio }
    }

    pub fn features(&self, clip: &ClipRecord) -> Result<TimeAlignedFeatures> {
        let t_len = clip.timesteps();
        let m = self.visual.cols;
        if clip.visual_dim() != self.visual.rows || clip.audio_dim() != self.audio.rows {
            return Err(XmaError::Shape(format!(
                "clip {} frames do not match the scorer bases",
                clip.id
            )));
        }
        let mut qv = Vec::with_capacity(t_len * m);
        let mut qa = Vec::with_capacity(t_len * m);
        for t in 0..t_len {
            qv.extend(unit_or_zero(self.visual.project(&clip.visual_frame(t))));
            qa.extend(unit_or_zero(self.audio.project(&clip.audio_frame(t))));
        }
        TimeAlignedFeatures::new(t_len, m, qv, qa)
    }

    pub fn scores(&self, clip: &ClipRecord) -> Result<Vec<f64>> {
        Ok(correlation_scores(&self.features(clip)?))
    }
}

fn unit_or_zero(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// One annotation per clip.
pub fn annotate_clips(
    clips: &[&ClipRecord],
    scorer: &CorrelationScorer,
    mode: PairSource,
    low_confidence: f64,
) -> Result<Vec<MomentAnnotation>> {
    clips
        .par_iter()
        .map(|clip| {
            let scores = scorer.scores(clip)?;
            let mut ann = match mode {
                PairSource::SelectedTop1 => top_k_moments(clip.id, &scores, 1)?,
                PairSource::MidFrame => {
                    let mid = clip.timesteps() / 2;
                    MomentAnnotation {
                        clip_id: clip.id,
                        mode,
                        indices: vec![mid],
                        scores: scores.clone(),
                        low_confidence: false,
                    }
                }
            };
            ann.low_confidence = scores[ann.top1()] < low_confidence;
            Ok(ann)
        })
        .collect()
}

pub fn annotate_dataset(ds: &Dataset, mode: PairSource) -> Result<Vec<MomentAnnotation>> {
    if ds.clips.is_empty() {
        return Err(XmaError::InvalidArgument("dataset has no clips".into()));
    }
    let scorer = CorrelationScorer::for_dataset(ds);
    let clips: Vec<&ClipRecord> = ds.clips.iter().collect();
    annotate_clips(&clips, &scorer, mode, DEFAULT_LOW_CONFIDENCE)
}
