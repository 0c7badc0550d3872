//! Visual pretraining and audio alignment training.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{norm, FeatureMatrix};
use crate::encoders::{generator_spec, visual_encoder_spec, AudioEncoder, VisualModels};
use crate::error::{Result, XmaError};
use crate::evaluation::{recall_at_k, RecallMode};
use crate::network::{Activation, Mlp};
use crate::objectives::{loss_total, LossKind, LossVariant};
use crate::optim::{AdamConfig, OptimizerState};
use crate::pair_selection::{annotate_clips, CorrelationScorer, MomentAnnotation, PairSource, DEFAULT_LOW_CONFIDENCE};
use crate::synth::{stream_rng, ClipRecord, Dataset, Split};

const STREAM_VISUAL_INIT: u64 = 0x5649_5349;
const STREAM_VISUAL_SHUFFLE: u64 = 0x5653_4846;
const STREAM_AUDIO_INIT: u64 = 0x4155_4449;
const STREAM_AUDIO_SHUFFLE: u64 = 0x4153_4846;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_r1: Option<f64>,
    pub val_loss: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Validation R@1 and loss of the initial parameters, when tracked.
    pub initial_val_r1: Option<f64>,
    pub initial_val_loss: Option<f64>,
    /// Epoch whose parameters were kept; `None` means the initialization.
    pub best_epoch: Option<usize>,
    pub early_stop_epoch: Option<usize>,
}

impl TrainingLog {
    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_wall_clock(&self) -> TrainingLog {
        let mut log = self.clone();
        log.epochs.iter_mut().for_each(|e| e.wall_ms = 0.0);
        log
    }

    pub fn best_val_r1(&self) -> Option<f64> {
        match self.best_epoch {
            Some(e) => self.epochs.iter().find(|r| r.epoch == e).and_then(|r| r.val_r1),
            None => self.initial_val_r1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub noise_dim: usize,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Center embeddings per batch and fold the training mean into the
    /// output bias.
    pub center: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            embed_dim: 32,
            hidden: 64,
            noise_dim: 8,
            activation: Activation::Tanh,
            epochs: 60,
            batch_size: 64,
            optimizer: AdamConfig::with_lr(3e-3, 0.0),
            center: false,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub log: TrainingLog,
    /// Mean squared reconstruction error on the training frames before and
    /// after training, and on validation frames after training.
    pub initial_error: f64,
    pub final_error: f64,
    pub val_error: f64,
}

/// Event frames of the given split: the "images" the visual expert learns.
pub fn expert_frames(ds: &Dataset, split: Split) -> Vec<Vec<f64>> {
    ds.split(split)
        .into_iter()
        .flat_map(|c| c.event_timesteps().map(move |t| c.visual_frame(t)))
        .collect()
}

struct ReconPass {
    loss: f64,
    grad_encoder: Vec<f64>,
    grad_generator: Vec<f64>,
}

/// Mean squared reconstruction through `G(noise, unit(f_V(x)))`.
/// With `center`, embeddings are mean-centered across the batch before
/// normalization.
fn reconstruction(
    models: &VisualModels,
    frames: &[f64],
    noise: &[f64],
    rows: usize,
    with_grad: bool,
    center: bool,
) -> Result<ReconPass> {
    let d = models.embed_dim();
    let dn = models.noise_dim();
    let dv = models.frame_dim();
    let enc_trace = models.encoder.forward_trace(frames, rows)?;
    let mut z = enc_trace.output().to_vec();
    let batch_mean = column_mean(&z, rows, d);
    if center && rows > 1 {
        for r in 0..rows {
            for i in 0..d {
                z[r * d + i] -= batch_mean[i];
            }
        }
    }
    let mut gen_in = Vec::with_capacity(rows * (dn + d));
    let mut norms = Vec::with_capacity(rows);
    for r in 0..rows {
        let zr = &z[r * d..(r + 1) * d];
        let n = norm(zr);
        if n == 0.0 {
            return Err(XmaError::Degenerate("visual embedding collapsed to zero".into()));
        }
        norms.push(n);
        gen_in.extend_from_slice(&noise[r * dn..(r + 1) * dn]);
        gen_in.extend(zr.iter().map(|x| x / n));
    }
    let gen_trace = models.generator.forward_trace(&gen_in, rows)?;
    let y = gen_trace.output();
    let mut loss = 0.0;
    let mut grad_y = vec![0.0; rows * dv];
    for i in 0..rows * dv {
        let diff = y[i] - frames[i];
        loss += diff * diff;
        grad_y[i] = 2.0 * diff / rows as f64;
    }
    loss /= rows as f64;
    if !loss.is_finite() {
        return Err(XmaError::NonFinite(format!("reconstruction loss {loss}")));
    }
    if !with_grad {
        return Ok(ReconPass {
            loss,
            grad_encoder: Vec::new(),
            grad_generator: Vec::new(),
        });
    }
    let (grad_generator, grad_in) = models.generator.backward(&gen_trace, &grad_y);
    let mut grad_z = vec![0.0; rows * d];
    for r in 0..rows {
        let u = &gen_in[r * (dn + d) + dn..(r + 1) * (dn + d)];
        let g = &grad_in[r * (dn + d) + dn..(r + 1) * (dn + d)];
        let proj: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
        for i in 0..d {
            grad_z[r * d + i] = (g[i] - proj * u[i]) / norms[r];
        }
    }
    if center && rows > 1 {
        let mean_grad = column_mean(&grad_z, rows, d);
        for r in 0..rows {
            for i in 0..d {
                grad_z[r * d + i] -= mean_grad[i];
            }
        }
    }
    let (grad_encoder, _) = models.encoder.backward(&enc_trace, &grad_z);
    Ok(ReconPass {
        loss,
        grad_encoder,
        grad_generator,
    })
}

fn column_mean(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for (acc, v) in mean.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|x| *x /= rows as f64);
    mean
}

fn sample_noise<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn mean_recon_error(models: &VisualModels, frames: &[Vec<f64>], seed: u64) -> Result<f64> {
    if frames.is_empty() {
        return Err(XmaError::InvalidArgument("no frames".into()));
    }
    let flat: Vec<f64> = frames.iter().flatten().copied().collect();
    let mut rng = stream_rng(seed, 0xE7A1);
    let noise = sample_noise(&mut rng, frames.len() * models.noise_dim());
    Ok(reconstruction(models, &flat, &noise, frames.len(), false, false)?.loss)
}

/// Subtracts the mean embedding over `frames` from the output bias, the
/// frozen form of the batch centering used while training.
fn fold_embedding_mean(encoder: &mut Mlp, frames: &[Vec<f64>]) -> Result<()> {
    let d = encoder.output_dim();
    let flat: Vec<f64> = frames.iter().flatten().copied().collect();
    let out = encoder.forward(&flat, frames.len())?;
    let mean = column_mean(&out, frames.len(), d);
    let params = encoder.params_mut();
    let bias_start = params.len() - d;
    for (b, m) in params[bias_start..].iter_mut().zip(mean) {
        *b -= m;
    }
    Ok(())
}

/// Trains the visual expert and generator jointly as an autoencoder on the
/// training split's event frames, then freezes both. Embeddings are centered
/// per batch during training; the training-set mean is folded into the
/// encoder's output bias at the end, so the frozen expert is a plain network
/// whose embeddings average to zero over its training frames.
pub fn pretrain_visual(ds: &Dataset, cfg: &PretrainConfig) -> Result<(VisualModels, PretrainReport)> {
    let frames = expert_frames(ds, Split::Train);
    if frames.is_empty() {
        return Err(XmaError::InvalidArgument("dataset has no training frames".into()));
    }
    let dv = ds.header.visual_dim as usize;
    let mut init_rng = stream_rng(cfg.seed, STREAM_VISUAL_INIT);
    let mut models = VisualModels {
        encoder: Mlp::init(visual_encoder_spec(dv, cfg.hidden, cfg.embed_dim, cfg.activation)?, &mut init_rng),
        generator: Mlp::init(
            generator_spec(cfg.noise_dim, cfg.embed_dim, cfg.hidden, dv, cfg.activation)?,
            &mut init_rng,
        ),
    };
    let initial_error = mean_recon_error(&models, &frames, cfg.seed)?;
    let mut opt_enc = OptimizerState::new(cfg.optimizer, models.encoder.params().len());
    let mut opt_gen = OptimizerState::new(cfg.optimizer, models.generator.params().len());
    let mut rng = stream_rng(cfg.seed, STREAM_VISUAL_SHUFFLE);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut log = TrainingLog::default();
    let batch = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(batch) {
            let flat: Vec<f64> = chunk.iter().flat_map(|&i| frames[i].iter().copied()).collect();
            let noise = sample_noise(&mut rng, chunk.len() * cfg.noise_dim);
            let pass = reconstruction(&models, &flat, &noise, chunk.len(), true, cfg.center).map_err(|e| {
                XmaError::NonFinite(format!("visual pretraining epoch {epoch}: {e}"))
            })?;
            opt_enc.step(models.encoder.params_mut(), &pass.grad_encoder)?;
            opt_gen.step(models.generator.params_mut(), &pass.grad_generator)?;
            total += pass.loss * chunk.len() as f64;
            count += chunk.len();
        }
        log.epochs.push(EpochRecord {
            epoch,
            loss: total / count as f64,
            val_r1: None,
            val_loss: None,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    log.best_epoch = cfg.epochs.checked_sub(1);
    if cfg.center && cfg.epochs > 0 {
        fold_embedding_mean(&mut models.encoder, &frames)?;
    }
    models.freeze();
    let final_error = mean_recon_error(&models, &frames, cfg.seed)?;
    let val_frames = expert_frames(ds, Split::Val);
    let val_error = if val_frames.is_empty() {
        final_error
    } else {
        mean_recon_error(&models, &val_frames, cfg.seed)?
    };
    Ok((
        models,
        PretrainReport {
            log,
            initial_error,
            final_error,
            val_error,
        },
    ))
}

/// First timestep of a `duration`-long window centered on `moment`, clamped
/// to the clip.
pub fn window_start(moment: usize, duration: usize, timesteps: usize) -> usize {
    let half = duration / 2;
    moment.saturating_sub(half).min(timesteps - duration)
}

/// Where an audio window is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AudioAnchor {
    /// On the annotated moment, as during training.
    Moment,
    /// On the clip middle `T/2`. Held-out queries use this: at inference only
    /// the audio stream exists, so the cross-modal scorer cannot place them.
    ClipMiddle,
}

/// Paired training/evaluation examples: one visual frame and one audio
/// window per clip.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub ids: Vec<u32>,
    pub labels: Vec<u32>,
    pub moments: Vec<usize>,
    pub audio_starts: Vec<usize>,
    pub duration: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    /// `n x D_V`
    pub visual: Vec<f64>,
    /// `n x duration x D_A`
    pub audio: Vec<f64>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn visual_row(&self, i: usize) -> &[f64] {
        &self.visual[i * self.visual_dim..(i + 1) * self.visual_dim]
    }

    pub fn audio_window(&self, i: usize) -> &[f64] {
        let w = self.duration * self.audio_dim;
        &self.audio[i * w..(i + 1) * w]
    }
}

pub fn build_pairs(
    clips: &[&ClipRecord],
    annotations: &[MomentAnnotation],
    duration: usize,
    anchor: AudioAnchor,
) -> Result<PairSet> {
    if clips.is_empty() {
        return Err(XmaError::InvalidArgument("empty pair selection".into()));
    }
    if clips.len() != annotations.len() {
        return Err(XmaError::Shape("one annotation per clip required".into()));
    }
    let t_len = clips[0].timesteps();
    if duration == 0 || duration > t_len {
        return Err(XmaError::InvalidArgument(format!(
            "audio duration {duration} outside 1..={t_len}"
        )));
    }
    let mut set = PairSet {
        ids: Vec::new(),
        labels: Vec::new(),
        moments: Vec::new(),
        audio_starts: Vec::new(),
        duration,
        visual_dim: clips[0].visual_dim(),
        audio_dim: clips[0].audio_dim(),
        visual: Vec::new(),
        audio: Vec::new(),
    };
    for (clip, ann) in clips.iter().zip(annotations) {
        if ann.clip_id != clip.id {
            return Err(XmaError::InvalidArgument(format!(
                "annotation for clip {} paired with clip {}",
                ann.clip_id, clip.id
            )));
        }
        let t = ann.top1();
        let center = match anchor {
            AudioAnchor::Moment => t,
            AudioAnchor::ClipMiddle => t_len / 2,
        };
        let start = window_start(center, duration, t_len);
        set.ids.push(clip.id);
        set.labels.push(clip.label);
        set.moments.push(t);
        set.audio_starts.push(start);
        set.visual.extend(clip.visual_frame(t));
        set.audio.extend(clip.audio_window(start, duration));
    }
    Ok(set)
}

/// Annotates a split and builds training pairs, audio centered on the
/// annotated moment.
pub fn split_pairs(ds: &Dataset, split: Split, source: PairSource, duration: usize) -> Result<PairSet> {
    let clips = ds.split(split);
    let scorer = CorrelationScorer::for_dataset(ds);
    let anns = annotate_clips(&clips, &scorer, source, DEFAULT_LOW_CONFIDENCE)?;
    build_pairs(&clips, &anns, duration, AudioAnchor::Moment)
}

/// Held-out pairs: visual targets at the top-1 selected frame, audio queries
/// centered on the clip middle.
pub fn eval_pairs(ds: &Dataset, split: Split, duration: usize) -> Result<PairSet> {
    let clips = ds.split(split);
    let scorer = CorrelationScorer::for_dataset(ds);
    let anns = annotate_clips(&clips, &scorer, PairSource::SelectedTop1, DEFAULT_LOW_CONFIDENCE)?;
    build_pairs(&clips, &anns, duration, AudioAnchor::ClipMiddle)
}

/// Raw `f_V` embeddings of a pair set's frames, labeled and id-tagged.
pub fn embed_visual(models: &VisualModels, pairs: &PairSet) -> Result<FeatureMatrix> {
    let out = models.encoder.forward(&pairs.visual, pairs.len())?;
    FeatureMatrix::from_flat(pairs.len(), models.embed_dim(), out)?
        .with_labels(pairs.labels.clone())?
        .with_ids(pairs.ids.clone())
}

/// Raw `f_A` embeddings of a pair set's audio windows.
pub fn embed_audio(encoder: &AudioEncoder, pairs: &PairSet) -> Result<FeatureMatrix> {
    let trace = encoder.forward_batch(&pairs.audio, pairs.len(), pairs.duration)?;
    FeatureMatrix::from_flat(pairs.len(), encoder.embed_dim(), trace.output().to_vec())?
        .with_labels(pairs.labels.clone())?
        .with_ids(pairs.ids.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub variant: LossVariant,
    pub pair_source: PairSource,
    pub duration: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub patience: usize,
    pub hidden: usize,
    pub frame_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            variant: LossVariant::of(LossKind::TotalL2Nce),
            pair_source: PairSource::SelectedTop1,
            duration: 20,
            batch_size: 64,
            optimizer: AdamConfig::default(),
            epochs: 50,
            patience: 10,
            hidden: 64,
            frame_dim: 64,
            activation: Activation::Relu,
            seed: 1,
        }
    }
}

pub fn init_audio_encoder(audio_dim: usize, embed_dim: usize, cfg: &AlignConfig) -> Result<AudioEncoder> {
    let mut rng = stream_rng(cfg.seed, STREAM_AUDIO_INIT);
    AudioEncoder::init(audio_dim, cfg.hidden, cfg.frame_dim, embed_dim, cfg.activation, &mut rng)
}

/// Class-level audio-to-visual R@1 of `encoder` on `pairs`.
pub fn retrieval_r1(encoder: &AudioEncoder, visual_targets: &FeatureMatrix, pairs: &PairSet) -> Result<f64> {
    let audio = embed_audio(encoder, pairs)?;
    recall_at_k(&audio, visual_targets, RecallMode::Class, 1)
}

/// Validation R@1 and loss of `encoder`. The loss breaks R@1 ties when
/// choosing the best epoch.
fn validate(encoder: &AudioEncoder, val_targets: &FeatureMatrix, val: &PairSet, variant: LossVariant) -> Result<(f64, f64)> {
    let audio = embed_audio(encoder, val)?;
    let r1 = recall_at_k(&audio, val_targets, RecallMode::Class, 1)?;
    let loss = loss_total(&audio, val_targets, variant)?.value;
    Ok((r1, loss))
}

/// Aligns a fresh audio encoder to the frozen visual expert. Training pairs
/// come from `cfg.pair_source`; validation pairs come from [`eval_pairs`].
/// Returns the parameters with the best validation R@1.
pub fn train_audio_encoder(ds: &Dataset, visual: &VisualModels, cfg: &AlignConfig) -> Result<(AudioEncoder, TrainingLog)> {
    let train = split_pairs(ds, Split::Train, cfg.pair_source, cfg.duration)?;
    let val = eval_pairs(ds, Split::Val, cfg.duration)?;
    train_on_pairs(&train, &val, visual, cfg)
}

pub fn train_on_pairs(train: &PairSet, val: &PairSet, visual: &VisualModels, cfg: &AlignConfig) -> Result<(AudioEncoder, TrainingLog)> {
    if train.is_empty() {
        return Err(XmaError::InvalidArgument("empty training selection".into()));
    }
    let d = visual.embed_dim();
    let targets = embed_visual(visual, train)?;
    let val_targets = embed_visual(visual, val)?;
    let mut encoder = init_audio_encoder(train.audio_dim, d, cfg)?;
    let mut opt_frame = OptimizerState::new(cfg.optimizer, encoder.frame_net.params().len());
    let mut opt_head = OptimizerState::new(cfg.optimizer, encoder.head.params().len());
    let mut rng = stream_rng(cfg.seed, STREAM_AUDIO_SHUFFLE);

    let (r1, loss) = validate(&encoder, &val_targets, val, cfg.variant)?;
    let mut log = TrainingLog {
        initial_val_r1: Some(r1),
        initial_val_loss: Some(loss),
        ..Default::default()
    };
    let mut best = (r1, loss, encoder.clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let window = train.duration * train.audio_dim;
    let batch = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(batch) {
            let audio: Vec<f64> = chunk
                .iter()
                .flat_map(|&i| train.audio[i * window..(i + 1) * window].iter().copied())
                .collect();
            let trace = encoder.forward_batch(&audio, chunk.len(), train.duration)?;
            let z_audio = FeatureMatrix::from_flat(chunk.len(), d, trace.output().to_vec())
                .map_err(|e| XmaError::NonFinite(format!("audio embeddings at epoch {epoch}: {e}")))?;
            let z_visual = targets.select_rows(chunk);
            let res = loss_total(&z_audio, &z_visual, cfg.variant)
                .map_err(|e| XmaError::NonFinite(format!("alignment loss at epoch {epoch}: {e}")))?;
            let (g_frame, g_head) = encoder.backward(&trace, res.grad_audio.as_flat());
            opt_frame.step(encoder.frame_net.params_mut(), &g_frame)?;
            opt_head.step(encoder.head.params_mut(), &g_head)?;
            total += res.value * chunk.len() as f64;
            count += chunk.len();
        }
        let (val_r1, val_loss) = validate(&encoder, &val_targets, val, cfg.variant)?;
        log.epochs.push(EpochRecord {
            epoch,
            loss: total / count as f64,
            val_r1: Some(val_r1),
            val_loss: Some(val_loss),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if val_r1 > best.0 || (val_r1 == best.0 && val_loss < best.1) {
            best = (val_r1, val_loss, encoder.clone());
            log.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.early_stop_epoch = Some(epoch);
                break;
            }
        }
    }
    Ok((best.2, log))
}
