//! Deterministic paired audio/visual clip synthesizer.
//!
//! Each class owns a latent prototype. At event timesteps both modalities see
//! a linear projection of `prototype + clip jitter` plus Gaussian noise; at
//! all other timesteps each modality sees independent distractor noise. Every
//! clip draws from its own xoshiro256++ stream keyed by clip id, so clips can
//! be generated in any order.

use rand::SeedableRng;
use rand::Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XmaError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: u32,
    pub clips_per_class: u32,
    pub timesteps: u32,
    pub visual_dim: u32,
    pub audio_dim: u32,
    pub latent_dim: u32,
    pub event_prob: f64,
    pub noise: f64,
    pub distractor: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 8,
            clips_per_class: 64,
            timesteps: 20,
            visual_dim: 64,
            audio_dim: 24,
            latent_dim: 16,
            event_prob: 0.2,
            noise: 0.1,
            distractor: 0.3,
            jitter: 1.0,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(XmaError::InvalidArgument(msg));
        if self.num_classes == 0 || self.clips_per_class == 0 || self.timesteps == 0 {
            return bad("classes, clips per class and timesteps must be positive".into());
        }
        if self.latent_dim == 0
            || self.latent_dim > self.visual_dim
            || self.latent_dim > self.audio_dim
        {
            return bad(format!(
                "latent dim {} must be in 1..=min(visual {}, audio {})",
                self.latent_dim, self.visual_dim, self.audio_dim
            ));
        }
        if !(self.event_prob > 0.0 && self.event_prob < 1.0) && self.event_prob != 1.0 {
            return bad(format!("event probability {} not in (0, 1]", self.event_prob));
        }
        for (name, v) in [
            ("noise", self.noise),
            ("distractor", self.distractor),
            ("jitter", self.jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        split_sizes(self.clips_per_class)?;
        Ok(())
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            num_classes: self.num_classes,
            clips_per_class: self.clips_per_class,
            timesteps: self.timesteps,
            visual_dim: self.visual_dim,
            audio_dim: self.audio_dim,
            latent_dim: self.latent_dim,
            event_prob: self.event_prob,
            noise: self.noise,
            seed: self.seed,
        }
    }
}

/// The generation parameters persisted in the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub num_classes: u32,
    pub clips_per_class: u32,
    pub timesteps: u32,
    pub visual_dim: u32,
    pub audio_dim: u32,
    pub latent_dim: u32,
    pub event_prob: f64,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// `(train, val, test)` clip counts per class: 70/15/15, rounded.
pub fn split_sizes(clips_per_class: u32) -> Result<(u32, u32, u32)> {
    let n = clips_per_class as f64;
    let train = (0.70 * n).round() as u32;
    let val = (0.15 * n).round() as u32;
    let test = clips_per_class.saturating_sub(train + val);
    if train == 0 || val == 0 || test == 0 || train + val + test != clips_per_class {
        return Err(XmaError::InvalidArgument(format!(
            "{clips_per_class} clips per class cannot fill a 70/15/15 split"
        )));
    }
    Ok((train, val, test))
}

/// One paired clip. Frames are stored in single precision, row-major `T x D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: u32,
    pub label: u32,
    pub events: Vec<bool>,
    pub visual: Vec<f32>,
    pub audio: Vec<f32>,
}

impl ClipRecord {
    pub fn timesteps(&self) -> usize {
        self.events.len()
    }

    pub fn visual_dim(&self) -> usize {
        self.visual.len() / self.events.len()
    }

    pub fn audio_dim(&self) -> usize {
        self.audio.len() / self.events.len()
    }

    pub fn visual_frame(&self, t: usize) -> Vec<f64> {
        let d = self.visual_dim();
        self.visual[t * d..(t + 1) * d].iter().map(|&x| x as f64).collect()
    }

    pub fn audio_frame(&self, t: usize) -> Vec<f64> {
        let d = self.audio_dim();
        self.audio[t * d..(t + 1) * d].iter().map(|&x| x as f64).collect()
    }

    /// Audio frames `start..start + len`, flattened, in `f64`.
    pub fn audio_window(&self, start: usize, len: usize) -> Vec<f64> {
        let d = self.audio_dim();
        self.audio[start * d..(start + len) * d]
            .iter()
            .map(|&x| x as f64)
            .collect()
    }

    pub fn event_timesteps(&self) -> impl Iterator<Item = usize> + '_ {
        self.events.iter().enumerate().filter(|(_, &e)| e).map(|(t, _)| t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub clips: Vec<ClipRecord>,
}

impl Dataset {
    pub fn split_of(&self, clip: &ClipRecord) -> Split {
        let (train, val, _) =
            split_sizes(self.header.clips_per_class).expect("validated at construction");
        let idx = clip.id % self.header.clips_per_class;
        if idx < train {
            Split::Train
        } else if idx < train + val {
            Split::Val
        } else {
            Split::Test
        }
    }

    pub fn split(&self, split: Split) -> Vec<&ClipRecord> {
        self.clips.iter().filter(|c| self.split_of(c) == split).collect()
    }

    pub fn timesteps(&self) -> usize {
        self.header.timesteps as usize
    }

    /// The orthonormal `D x m` bases mapping latent semantics into each
    /// observation space, as `(visual, audio)`. Derived from the seed alone.
    pub fn observation_bases(&self) -> (Basis, Basis) {
        let h = &self.header;
        observation_bases(h.seed, h.visual_dim as usize, h.audio_dim as usize, h.latent_dim as usize)
    }
}

/// A `rows x cols` matrix with orthonormal columns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Basis {
    /// `B s`
    pub fn embed(&self, latent: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(latent).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// `B^T x`
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, xr) in x.iter().enumerate().take(self.rows) {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, b) in out.iter_mut().zip(row) {
                *o += b * xr;
            }
        }
        out
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const GLOBAL_STREAM: u64 = u64::MAX;

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, stream)`. `seed_from_u64` expands the key
/// through splitmix64 into the xoshiro256++ state.
pub fn stream_rng(seed: u64, stream: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(mix64(seed ^ stream.wrapping_add(1).wrapping_mul(GOLDEN)))
}

fn gaussian(rng: &mut Xoshiro256PlusPlus) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

fn orthonormal_basis(rng: &mut Xoshiro256PlusPlus, rows: usize, cols: usize) -> Basis {
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while columns.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for c in &columns {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            columns.push(v);
        }
    }
    let mut data = vec![0.0; rows * cols];
    for (c, col) in columns.iter().enumerate() {
        for r in 0..rows {
            data[r * cols + c] = col[r];
        }
    }
    Basis { rows, cols, data }
}

pub fn observation_bases(seed: u64, visual_dim: usize, audio_dim: usize, latent_dim: usize) -> (Basis, Basis) {
    let mut rng = stream_rng(seed, GLOBAL_STREAM);
    let v = orthonormal_basis(&mut rng, visual_dim, latent_dim);
    let a = orthonormal_basis(&mut rng, audio_dim, latent_dim);
    (v, a)
}

/// Class prototypes, centered so they sum to zero when there is more than
/// one class.
pub fn class_prototypes(seed: u64, num_classes: usize, latent_dim: usize) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, GLOBAL_STREAM - 1);
    let mut protos: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..latent_dim).map(|_| gaussian(&mut rng)).collect())
        .collect();
    if num_classes > 1 {
        for i in 0..latent_dim {
            let mean = protos.iter().map(|p| p[i]).sum::<f64>() / num_classes as f64;
            protos.iter_mut().for_each(|p| p[i] -= mean);
        }
    }
    protos
}

fn synth_clip(
    cfg: &SynthConfig,
    id: u32,
    protos: &[Vec<f64>],
    bases: &(Basis, Basis),
) -> ClipRecord {
    let mut rng = stream_rng(cfg.seed, id as u64);
    let label = id / cfg.clips_per_class;
    let (t_len, dv, da, m) = (
        cfg.timesteps as usize,
        cfg.visual_dim as usize,
        cfg.audio_dim as usize,
        cfg.latent_dim as usize,
    );
    let jitter: Vec<f64> = (0..m).map(|_| cfg.jitter * gaussian(&mut rng)).collect();
    let events = loop {
        let mask: Vec<bool> = (0..t_len).map(|_| rng.random::<f64>() < cfg.event_prob).collect();
        if mask.iter().any(|&e| e) {
            break mask;
        }
    };
    let semantic: Vec<f64> = protos[label as usize]
        .iter()
        .zip(&jitter)
        .map(|(p, j)| p + j)
        .collect();
    let clean_v = bases.0.embed(&semantic);
    let clean_a = bases.1.embed(&semantic);
    let mut visual = Vec::with_capacity(t_len * dv);
    let mut audio = Vec::with_capacity(t_len * da);
    for &event in &events {
        if event {
            visual.extend(clean_v.iter().map(|x| (x + cfg.noise * gaussian(&mut rng)) as f32));
            audio.extend(clean_a.iter().map(|x| (x + cfg.noise * gaussian(&mut rng)) as f32));
        } else {
            visual.extend((0..dv).map(|_| (cfg.distractor * gaussian(&mut rng)) as f32));
            audio.extend((0..da).map(|_| (cfg.distractor * gaussian(&mut rng)) as f32));
        }
    }
    ClipRecord {
        id,
        label,
        events,
        visual,
        audio,
    }
}

/// Generates the full dataset. Splits are implied by each clip's position
/// within its class (see [`Dataset::split_of`]).
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let protos = class_prototypes(cfg.seed, cfg.num_classes as usize, cfg.latent_dim as usize);
    let bases = observation_bases(
        cfg.seed,
        cfg.visual_dim as usize,
        cfg.audio_dim as usize,
        cfg.latent_dim as usize,
    );
    let total = cfg.num_classes * cfg.clips_per_class;
    let clips = (0..total)
        .into_par_iter()
        .map(|id| synth_clip(cfg, id, &protos, &bases))
        .collect();
    Ok(Dataset {
        header: cfg.header(),
        clips,
    })
}
