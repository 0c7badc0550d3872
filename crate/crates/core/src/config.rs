//! Flat `key = value` experiment configuration.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys and repeated keys are errors; missing keys keep their
//! defaults. [`ExperimentConfig::to_text`] writes every key, so a config echo
//! parses back to the same value.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, XmaError};
use crate::objectives::{LossKind, LossVariant};
use crate::pair_selection::PairSource;
use crate::synth::SynthConfig;
use crate::training::{AlignConfig, PretrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Full-batch steps for the evaluation classifier.
    pub classifier_steps: usize,
    pub score_splits: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            classifier_steps: 300,
            score_splits: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: SynthConfig,
    pub visual: PretrainConfig,
    /// Alignment settings; `audio.*` and `train.*` keys both land here.
    pub train: AlignConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            dataset: SynthConfig::default(),
            visual: PretrainConfig::default(),
            train: AlignConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// `(line number, key, value)` for every assignment in `text`.
fn assignments(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| XmaError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(XmaError::Config(format!("line {}: empty key or value", i + 1)));
        }
        if !seen.insert(k) {
            return Err(XmaError::Config(format!("line {}: key {k} set twice", i + 1)));
        }
        out.push((i + 1, k, v));
    }
    Ok(out)
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse()
        .map_err(|e| XmaError::Config(format!("line {line}: bad value {v:?} for {key}: {e}")))
}

fn read_file(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(XmaError::MissingArtifact(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| XmaError::io(path, e))
}

fn render(entries: Vec<(&'static str, String)>) -> String {
    entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (line, key, value) in assignments(text)? {
            cfg.set(line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_file(path.as_ref())?)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let (d, vis, tr, ev) = (&mut self.dataset, &mut self.visual, &mut self.train, &mut self.eval);
        match key {
            "seed" => self.seed = parse(line, key, v)?,
            "dataset.num_classes" => d.num_classes = parse(line, key, v)?,
            "dataset.clips_per_class" => d.clips_per_class = parse(line, key, v)?,
            "dataset.timesteps" => d.timesteps = parse(line, key, v)?,
            "dataset.visual_dim" => d.visual_dim = parse(line, key, v)?,
            "dataset.audio_dim" => d.audio_dim = parse(line, key, v)?,
            "dataset.latent_dim" => d.latent_dim = parse(line, key, v)?,
            "dataset.event_prob" => d.event_prob = parse(line, key, v)?,
            "dataset.noise" => d.noise = parse(line, key, v)?,
            "dataset.distractor" => d.distractor = parse(line, key, v)?,
            "dataset.jitter" => d.jitter = parse(line, key, v)?,
            "visual.embed_dim" => vis.embed_dim = parse(line, key, v)?,
            "visual.hidden" => vis.hidden = parse(line, key, v)?,
            "visual.noise_dim" => vis.noise_dim = parse(line, key, v)?,
            "visual.activation" => vis.activation = parse(line, key, v)?,
            "visual.epochs" => vis.epochs = parse(line, key, v)?,
            "visual.batch_size" => vis.batch_size = parse(line, key, v)?,
            "visual.lr" => vis.optimizer.lr = parse(line, key, v)?,
            "visual.weight_decay" => vis.optimizer.weight_decay = parse(line, key, v)?,
            "visual.center" => vis.center = parse(line, key, v)?,
            "audio.hidden" => tr.hidden = parse(line, key, v)?,
            "audio.frame_dim" => tr.frame_dim = parse(line, key, v)?,
            "audio.activation" => tr.activation = parse(line, key, v)?,
            "train.batch_size" => tr.batch_size = parse(line, key, v)?,
            "train.lr" => tr.optimizer.lr = parse(line, key, v)?,
            "train.weight_decay" => tr.optimizer.weight_decay = parse(line, key, v)?,
            "train.epochs" => tr.epochs = parse(line, key, v)?,
            "train.patience" => tr.patience = parse(line, key, v)?,
            "train.loss_variant" => tr.variant.kind = parse(line, key, v)?,
            "train.temperature" => tr.variant.temperature = parse(line, key, v)?,
            "train.pair_source" => tr.pair_source = parse(line, key, v)?,
            "train.duration_timesteps" => tr.duration = parse(line, key, v)?,
            "eval.classifier_steps" => ev.classifier_steps = parse(line, key, v)?,
            "eval.score_splits" => ev.score_splits = parse(line, key, v)?,
            _ => return Err(XmaError::Config(format!("line {line}: unknown key {key}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (d, vis, tr, ev) = (&self.dataset, &self.visual, &self.train, &self.eval);
        vec![
            ("seed", self.seed.to_string()),
            ("dataset.num_classes", d.num_classes.to_string()),
            ("dataset.clips_per_class", d.clips_per_class.to_string()),
            ("dataset.timesteps", d.timesteps.to_string()),
            ("dataset.visual_dim", d.visual_dim.to_string()),
            ("dataset.audio_dim", d.audio_dim.to_string()),
            ("dataset.latent_dim", d.latent_dim.to_string()),
            ("dataset.event_prob", d.event_prob.to_string()),
            ("dataset.noise", d.noise.to_string()),
            ("dataset.distractor", d.distractor.to_string()),
            ("dataset.jitter", d.jitter.to_string()),
            ("visual.embed_dim", vis.embed_dim.to_string()),
            ("visual.hidden", vis.hidden.to_string()),
            ("visual.noise_dim", vis.noise_dim.to_string()),
            ("visual.activation", vis.activation.to_string()),
            ("visual.epochs", vis.epochs.to_string()),
            ("visual.batch_size", vis.batch_size.to_string()),
            ("visual.lr", vis.optimizer.lr.to_string()),
            ("visual.weight_decay", vis.optimizer.weight_decay.to_string()),
            ("visual.center", vis.center.to_string()),
            ("audio.hidden", tr.hidden.to_string()),
            ("audio.frame_dim", tr.frame_dim.to_string()),
            ("audio.activation", tr.activation.to_string()),
            ("train.batch_size", tr.batch_size.to_string()),
            ("train.lr", tr.optimizer.lr.to_string()),
            ("train.weight_decay", tr.optimizer.weight_decay.to_string()),
            ("train.epochs", tr.epochs.to_string()),
            ("train.patience", tr.patience.to_string()),
            ("train.loss_variant", tr.variant.kind.to_string()),
            ("train.temperature", tr.variant.temperature.to_string()),
            ("train.pair_source", tr.pair_source.to_string()),
            ("train.duration_timesteps", tr.duration.to_string()),
            ("eval.classifier_steps", ev.classifier_steps.to_string()),
            ("eval.score_splits", ev.score_splits.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        render(self.entries())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: XmaError| XmaError::Config(e.to_string());
        self.synth().validate().map_err(cfg_err)?;
        LossVariant::new(self.train.variant.kind, self.train.variant.temperature).map_err(cfg_err)?;
        let positive = [
            ("visual.embed_dim", self.visual.embed_dim),
            ("visual.hidden", self.visual.hidden),
            ("visual.noise_dim", self.visual.noise_dim),
            ("visual.batch_size", self.visual.batch_size),
            ("audio.hidden", self.train.hidden),
            ("audio.frame_dim", self.train.frame_dim),
            ("train.batch_size", self.train.batch_size),
            ("train.duration_timesteps", self.train.duration),
            ("eval.score_splits", self.eval.score_splits),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(XmaError::Config(format!("{k} must be positive")));
        }
        if self.train.duration > self.dataset.timesteps as usize {
            return Err(XmaError::Config(format!(
                "train.duration_timesteps {} exceeds dataset.timesteps {}",
                self.train.duration, self.dataset.timesteps
            )));
        }
        for (k, o) in [("visual", &self.visual.optimizer), ("train", &self.train.optimizer)] {
            if !(o.lr >= 0.0 && o.lr.is_finite() && o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
                return Err(XmaError::Config(format!("{k}.lr and {k}.weight_decay must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.dataset.clone()
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            seed: self.seed,
            ..self.visual.clone()
        }
    }

    pub fn align(&self) -> AlignConfig {
        AlignConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// The alignment config with one ablation axis overridden.
    pub fn align_with(&self, kind: LossKind, source: PairSource, duration: usize) -> AlignConfig {
        AlignConfig {
            variant: LossVariant {
                kind,
                ..self.train.variant
            },
            pair_source: source,
            duration,
            ..self.align()
        }
    }
}

/// Parameters of a manipulation run, in the same `key = value` format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationSpec {
    /// Number of test clips to manipulate.
    pub clips: usize,
    pub gain: f64,
    /// The first clip's weight when mixing two clips; the second gets `1 - w`.
    pub mix_weight: f64,
    pub lambda: f64,
    pub edit_lambda: f64,
    pub inversion_steps: usize,
}

impl Default for ManipulationSpec {
    fn default() -> Self {
        ManipulationSpec {
            clips: 4,
            gain: 2.0,
            mix_weight: 0.5,
            lambda: 0.5,
            edit_lambda: 0.5,
            inversion_steps: crate::inversion::InversionConfig::default().steps,
        }
    }
}

impl ManipulationSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = ManipulationSpec::default();
        for (line, key, v) in assignments(text)? {
            match key {
                "clips" => s.clips = parse(line, key, v)?,
                "gain" => s.gain = parse(line, key, v)?,
                "mix_weight" => s.mix_weight = parse(line, key, v)?,
                "lambda" => s.lambda = parse(line, key, v)?,
                "edit_lambda" => s.edit_lambda = parse(line, key, v)?,
                "inversion_steps" => s.inversion_steps = parse(line, key, v)?,
                _ => return Err(XmaError::Config(format!("line {line}: unknown key {key}"))),
            }
        }
        if s.clips < 2 {
            return Err(XmaError::Config("clips must be at least 2".into()));
        }
        if !(s.gain > 0.0 && s.gain.is_finite()) {
            return Err(XmaError::Config(format!("gain must be positive, got {}", s.gain)));
        }
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_file(path.as_ref())?)
    }

    pub fn to_text(&self) -> String {
        render(vec![
            ("clips", self.clips.to_string()),
            ("gain", self.gain.to_string()),
            ("mix_weight", self.mix_weight.to_string()),
            ("lambda", self.lambda.to_string()),
            ("edit_lambda", self.edit_lambda.to_string()),
            ("inversion_steps", self.inversion_steps.to_string()),
        ])
    }
}
