//! End-to-end runs: baseline grid, ablation grid, annotation manifests,
//! manipulation experiments and the JSON reports that carry them.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{EvalConfig, ExperimentConfig, ManipulationSpec};
use crate::embedding::{FeatureMatrix, FeatureVector};
use crate::encoders::{generate, AudioEncoder, VisualModels};
use crate::error::{Result, XmaError};
use crate::evaluation::{
    classifier_recall, frechet_distance, rank_database, recall_at_k, score_analog, LinearClassifier, RecallMode,
};
use crate::gap::GapReport;
use crate::inversion::{invert_generator, InversionConfig};
use crate::manipulation::{edit_direction, interpolate_latent, mix_clips, scale_volume, temporal_saliency, AudioClip};
use crate::objectives::LossKind;
use crate::pair_selection::{annotate_clips, CorrelationScorer, MomentAnnotation, PairSource, DEFAULT_LOW_CONFIDENCE};
use crate::synth::{stream_rng, synth_dataset, Dataset, Split};
use crate::training::{
    embed_audio, embed_visual, eval_pairs, expert_frames, pretrain_visual, split_pairs, train_audio_encoder,
    window_start, PretrainReport, TrainingLog,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const STREAM_EVAL_NOISE: u64 = 0x4556_4e5a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    #[serde(rename = "GENERATED_FROM_AUDIO")]
    GeneratedFromAudio,
    #[serde(rename = "RETRIEVAL_BASELINE")]
    RetrievalBaseline,
    #[serde(rename = "UPPER_BOUND_FRAMES")]
    UpperBoundFrames,
}

/// Classifier-based scores of one set of frames. Frechet distances are
/// measured against `f_V` features of the real training event frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub kind: BaselineKind,
    pub classifier_r1: f64,
    pub classifier_r5: f64,
    pub frechet: f64,
    pub score_analog: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub instance_r1: f64,
    pub instance_r5: f64,
    pub class_r1: f64,
    pub class_r5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecall {
    pub class: u32,
    pub queries: usize,
    /// Class-level audio-to-visual R@1 over this class's queries.
    pub retrieval_r1: f64,
    /// Classifier R@1 of the frames generated from this class's audio.
    pub generated_r1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: usize,
    pub recall: RecallSummary,
    pub frechet: f64,
    pub score_analog: f64,
    pub baselines: Vec<BaselineRow>,
    pub per_class: Vec<ClassRecall>,
}

impl EvalReport {
    pub fn baseline(&self, kind: BaselineKind) -> Option<&BaselineRow> {
        self.baselines.iter().find(|b| b.kind == kind)
    }

    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,queries,retrieval_r1,generated_r1\n");
        for c in &self.per_class {
            out.push_str(&format!("{},{},{},{}\n", c.class, c.queries, c.retrieval_r1, c.generated_r1));
        }
        out
    }
}

/// Labeled `f_V` embeddings of every training event frame.
pub fn expert_training_features(ds: &Dataset, visual: &VisualModels) -> Result<FeatureMatrix> {
    let clips = ds.split(Split::Train);
    let labels: Vec<u32> = clips.iter().flat_map(|c| c.event_timesteps().map(move |_| c.label)).collect();
    let frames = expert_frames(ds, Split::Train);
    let out = visual.encoder.forward(&frames.concat(), frames.len())?;
    FeatureMatrix::from_flat(frames.len(), visual.embed_dim(), out)?.with_labels(labels)
}

/// The evaluation classifier, fit on real training embeddings with labels.
pub fn fit_eval_classifier(ds: &Dataset, visual: &VisualModels, cfg: &EvalConfig) -> Result<LinearClassifier> {
    let feats = expert_training_features(ds, visual)?;
    let labels = feats.labels().map(|l| l.to_vec()).unwrap_or_default();
    LinearClassifier::fit(&feats, &labels, ds.header.num_classes as usize, cfg.classifier_steps)
}

/// `f_V(G(z_N, unit(z)))` for each row of `conditions`, with seeded noise.
pub fn generated_features(visual: &VisualModels, conditions: &FeatureMatrix, seed: u64) -> Result<FeatureMatrix> {
    let unit = conditions.normalized_rows()?;
    let mut rng = stream_rng(seed, STREAM_EVAL_NOISE);
    let mut frames = Vec::with_capacity(unit.rows() * visual.frame_dim());
    for row in unit.iter_rows() {
        let zn: Vec<f64> = (0..visual.noise_dim()).map(|_| rng.sample(StandardNormal)).collect();
        frames.extend_from_slice(generate(&visual.generator, &FeatureVector::new(zn)?, &FeatureVector::new(row.to_vec())?)?.as_slice());
    }
    let out = visual.encoder.forward(&frames, unit.rows())?;
    let m = FeatureMatrix::from_flat(unit.rows(), visual.embed_dim(), out)?;
    match conditions.labels() {
        Some(l) => m.with_labels(l.to_vec()),
        None => Ok(m),
    }
}

fn baseline_row(
    kind: BaselineKind,
    feats: &FeatureMatrix,
    labels: &[u32],
    clf: &LinearClassifier,
    reference: &FeatureMatrix,
    splits: usize,
) -> Result<BaselineRow> {
    let k5 = clf.classes.min(5);
    Ok(BaselineRow {
        kind,
        classifier_r1: classifier_recall(feats, clf, labels, 1)?,
        classifier_r5: classifier_recall(feats, clf, labels, k5)?,
        frechet: frechet_distance(reference, feats)?.distance,
        score_analog: score_analog(&clf.predict_proba(feats)?, splits)?,
    })
}

/// Scores the trained models on the test split: retrieval recall, the
/// generated-from-audio row, nearest-training-frame retrieval, and real test
/// frames as the upper bound.
pub fn run_baseline_grid(
    ds: &Dataset,
    visual: &VisualModels,
    audio: &AudioEncoder,
    duration: usize,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    let test = eval_pairs(ds, Split::Test, duration)?;
    let v_test = embed_visual(visual, &test)?;
    let a_test = embed_audio(audio, &test)?;
    let labels = test.labels.clone();
    let recall = RecallSummary {
        instance_r1: recall_at_k(&a_test, &v_test, RecallMode::Instance, 1)?,
        instance_r5: recall_at_k(&a_test, &v_test, RecallMode::Instance, 5)?,
        class_r1: recall_at_k(&a_test, &v_test, RecallMode::Class, 1)?,
        class_r5: recall_at_k(&a_test, &v_test, RecallMode::Class, 5)?,
    };

    let clf = fit_eval_classifier(ds, visual, cfg)?;
    let reference = expert_training_features(ds, visual)?;
    let generated = generated_features(visual, &a_test, seed)?;

    let train = split_pairs(ds, Split::Train, PairSource::SelectedTop1, duration)?;
    let v_train = embed_visual(visual, &train)?;
    let v_train_unit = v_train.normalized_rows()?;
    let a_unit = a_test.normalized_rows()?;
    let nearest: Vec<usize> = a_unit.iter_rows().map(|q| rank_database(q, &v_train_unit)[0]).collect();
    let retrieved = v_train.select_rows(&nearest);

    let splits = cfg.score_splits;
    let baselines = vec![
        baseline_row(BaselineKind::GeneratedFromAudio, &generated, &labels, &clf, &reference, splits)?,
        baseline_row(BaselineKind::RetrievalBaseline, &retrieved, &labels, &clf, &reference, splits)?,
        baseline_row(BaselineKind::UpperBoundFrames, &v_test, &labels, &clf, &reference, splits)?,
    ];

    let mut per_class = Vec::new();
    for class in 0..ds.header.num_classes {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if rows.is_empty() {
            continue;
        }
        let q = a_test.select_rows(&rows);
        let g = generated.select_rows(&rows);
        per_class.push(ClassRecall {
            class,
            queries: rows.len(),
            retrieval_r1: recall_at_k(&q, &v_test, RecallMode::Class, 1)?,
            generated_r1: classifier_recall(&g, &clf, &vec![class; rows.len()], 1)?,
        });
    }
    let gen = &baselines[0];
    Ok(EvalReport {
        queries: test.len(),
        recall,
        frechet: gen.frechet,
        score_analog: gen.score_analog,
        baselines,
        per_class,
    })
}

/// Test-split gap geometry between `f_V` targets and `f_A` queries.
pub fn gap_report(ds: &Dataset, visual: &VisualModels, audio: &AudioEncoder, duration: usize) -> Result<(GapReport, crate::gap::Projection)> {
    let test = eval_pairs(ds, Split::Test, duration)?;
    let v = embed_visual(visual, &test)?;
    let a = embed_audio(audio, &test)?;
    Ok((GapReport::compute(&v, &a)?, crate::gap::project_2d(&v, &a)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub mode: PairSource,
    pub clips: usize,
    pub low_confidence: usize,
    /// Fraction of clips whose top-1 moment is a ground-truth event.
    pub top1_in_event: f64,
}

pub fn annotate_all(ds: &Dataset, mode: PairSource) -> Result<Vec<MomentAnnotation>> {
    let clips: Vec<_> = ds.clips.iter().collect();
    annotate_clips(&clips, &CorrelationScorer::for_dataset(ds), mode, DEFAULT_LOW_CONFIDENCE)
}

pub fn summarize_annotations(ds: &Dataset, anns: &[MomentAnnotation], mode: PairSource) -> AnnotationSummary {
    let hits = ds.clips.iter().zip(anns).filter(|(c, a)| c.events[a.top1()]).count();
    AnnotationSummary {
        mode,
        clips: anns.len(),
        low_confidence: anns.iter().filter(|a| a.low_confidence).count(),
        top1_in_event: hits as f64 / anns.len().max(1) as f64,
    }
}

pub fn annotation_manifest_csv(ds: &Dataset, anns: &[MomentAnnotation]) -> String {
    let mut out = String::from("clip_id,split,label,mode,top1,score,low_confidence,in_event\n");
    for (clip, a) in ds.clips.iter().zip(anns) {
        let t = a.top1();
        let split = match ds.split_of(clip) {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            clip.id, split, clip.label, a.mode, t, a.scores[t], a.low_confidence, clip.events[t]
        ));
    }
    out
}

/// A self-describing run record. Wall-clock fields are stripped so that two
/// runs with the same config serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    /// The full config in `key = value` form; feeding it back reproduces the
    /// run.
    pub config_echo: String,
    pub dataset_digest: String,
    pub visual_checksum: Option<String>,
    pub audio_checksum: Option<String>,
    pub pretrain: Option<PretrainReport>,
    pub training_log: Option<TrainingLog>,
    pub eval: Option<EvalReport>,
    pub gap: Option<GapReport>,
    pub annotations: Option<AnnotationSummary>,
}

impl RunReport {
    pub fn new(cfg: &ExperimentConfig, ds: &Dataset) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            seed: cfg.seed,
            config_echo: cfg.to_text(),
            dataset_digest: dataset_digest(ds),
            visual_checksum: None,
            audio_checksum: None,
            pretrain: None,
            training_log: None,
            eval: None,
            gap: None,
            annotations: None,
        }
    }

    pub fn with_pretrain(mut self, report: &PretrainReport) -> Self {
        let mut r = report.clone();
        r.log = r.log.without_wall_clock();
        self.pretrain = Some(r);
        self
    }

    pub fn with_training_log(mut self, log: &TrainingLog) -> Self {
        self.training_log = Some(log.without_wall_clock());
        self
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| XmaError::NonFinite(format!("report serialization: {e}")))
}

/// SHA-256 of the serialized dataset.
pub fn dataset_digest(ds: &Dataset) -> String {
    use sha2::{Digest, Sha256};
    let d = Sha256::digest(crate::dataset_io::encode_dataset(ds));
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    crate::io_util::atomic_write(path.as_ref(), text.as_bytes())
}

/// Synthesizes, pretrains and aligns with one config.
pub fn train_all(cfg: &ExperimentConfig) -> Result<(Dataset, VisualModels, PretrainReport, AudioEncoder, TrainingLog)> {
    let ds = synth_dataset(&cfg.synth())?;
    let (visual, pre) = pretrain_visual(&ds, &cfg.pretrain())?;
    let (audio, log) = train_audio_encoder(&ds, &visual, &cfg.align())?;
    Ok((ds, visual, pre, audio, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub loss_variant: LossKind,
    pub pair_source: PairSource,
    pub duration: usize,
    pub class_r1: f64,
    pub class_r5: f64,
    pub instance_r1: f64,
    pub best_epoch: Option<usize>,
}

pub const ABLATION_DURATIONS: [usize; 3] = [2, 10, 20];

/// Every loss variant x pair source x duration, each aligned from scratch
/// against one shared frozen expert. Durations longer than the clip are
/// skipped.
pub fn ablation_grid(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let ds = synth_dataset(&cfg.synth())?;
    let (visual, _) = pretrain_visual(&ds, &cfg.pretrain())?;
    ablation_grid_on(&ds, &visual, cfg, &LossKind::ALL, &[PairSource::SelectedTop1, PairSource::MidFrame], &ABLATION_DURATIONS)
}

pub fn ablation_grid_on(
    ds: &Dataset,
    visual: &VisualModels,
    cfg: &ExperimentConfig,
    kinds: &[LossKind],
    sources: &[PairSource],
    durations: &[usize],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &kind in kinds {
        for &source in sources {
            for &duration in durations.iter().filter(|&&d| d <= ds.timesteps()) {
                let align = cfg.align_with(kind, source, duration);
                let (enc, log) = train_audio_encoder(ds, visual, &align)?;
                let test = eval_pairs(ds, Split::Test, duration)?;
                let v = embed_visual(visual, &test)?;
                let a = embed_audio(&enc, &test)?;
                rows.push(AblationRow {
                    loss_variant: kind,
                    pair_source: source,
                    duration,
                    class_r1: recall_at_k(&a, &v, RecallMode::Class, 1)?,
                    class_r5: recall_at_k(&a, &v, RecallMode::Class, 5)?,
                    instance_r1: recall_at_k(&a, &v, RecallMode::Instance, 1)?,
                    best_epoch: log.best_epoch,
                });
            }
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("loss_variant,pair_source,duration,class_r1,class_r5,instance_r1,best_epoch\n");
    for r in rows {
        let best = r.best_epoch.map(|e| e.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.loss_variant, r.pair_source, r.duration, r.class_r1, r.class_r5, r.instance_r1, best
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationRow {
    pub kind: String,
    /// Clip ids or latent sources involved.
    pub input: String,
    /// Gain, weights or lambda.
    pub params: Vec<f64>,
    /// The unit conditioning vector handed to the generator.
    pub latent: Vec<f64>,
    pub generated: Vec<f64>,
    pub saliency: Option<Vec<f64>>,
    pub inversion_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub spec_echo: String,
    pub rows: Vec<ManipulationRow>,
    /// `(clip id, per-timestep saliency, event mask)` of each unmodified clip.
    pub saliency: Vec<(u32, Vec<f64>, Vec<bool>)>,
}

impl ManipulationReport {
    pub fn saliency_csv(&self) -> String {
        let mut out = String::from("clip_id,t,weight,in_event\n");
        for (id, w, ev) in &self.saliency {
            for (t, (w, e)) in w.iter().zip(ev).enumerate() {
                out.push_str(&format!("{id},{t},{w},{e}\n"));
            }
        }
        out
    }
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    crate::encoders::unit_or_error(v)
}

fn render(visual: &VisualModels, z_noise: &[f64], cond: &[f64]) -> Result<Vec<f64>> {
    Ok(generate(&visual.generator, &FeatureVector::new(z_noise.to_vec())?, &FeatureVector::new(cond.to_vec())?)?
        .as_slice()
        .to_vec())
}

/// Volume, mixing, latent interpolation between a visual and an audio
/// embedding, and an edit of an inverted real frame along an audio
/// difference direction. Generation uses zero noise except for the edit,
/// which keeps the inverted noise.
pub fn run_manipulations(
    ds: &Dataset,
    visual: &VisualModels,
    audio: &AudioEncoder,
    duration: usize,
    spec: &ManipulationSpec,
) -> Result<ManipulationReport> {
    let test = eval_pairs(ds, Split::Test, duration)?;
    if test.len() < spec.clips {
        return Err(XmaError::InvalidArgument(format!(
            "spec asks for {} clips but the test split has {}",
            spec.clips,
            test.len()
        )));
    }
    let by_id = |id: u32| ds.clips.iter().find(|c| c.id == id).expect("pair ids come from the dataset");
    let zeros = vec![0.0; visual.noise_dim()];
    let encode = |c: &AudioClip| -> Result<Vec<f64>> { unit(audio.forward(&c.samples, c.timesteps)?.as_slice()) };
    let clips: Vec<AudioClip> = (0..spec.clips)
        .map(|i| AudioClip::new(duration, test.audio_dim, test.audio_window(i).to_vec()))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut saliency = Vec::new();
    let t_len = ds.timesteps();
    for (i, clip) in clips.iter().enumerate() {
        let s = temporal_saliency(audio, &visual.generator, clip)?;
        let record = by_id(test.ids[i]);
        let start = window_start(t_len / 2, duration, t_len);
        saliency.push((record.id, s.weights, record.events[start..start + duration].to_vec()));
    }

    let (a, b) = (&clips[0], &clips[1]);
    let (id_a, id_b) = (test.ids[0], test.ids[1]);
    let loud = scale_volume(a, spec.gain)?;
    let z = encode(&loud)?;
    rows.push(ManipulationRow {
        kind: "volume".into(),
        input: format!("clip {id_a}"),
        params: vec![spec.gain],
        generated: render(visual, &zeros, &z)?,
        latent: z,
        saliency: Some(temporal_saliency(audio, &visual.generator, &loud)?.weights),
        inversion_residual: None,
    });

    let weights = [spec.mix_weight, 1.0 - spec.mix_weight];
    let mixed = mix_clips(&[a, b], &weights)?;
    let z = encode(&mixed)?;
    rows.push(ManipulationRow {
        kind: "mix".into(),
        input: format!("clips {id_a} {id_b}"),
        params: weights.to_vec(),
        generated: render(visual, &zeros, &z)?,
        latent: z,
        saliency: Some(temporal_saliency(audio, &visual.generator, &mixed)?.weights),
        inversion_residual: None,
    });

    let z_v = FeatureVector::new(unit(&visual.encoder.forward(test.visual_row(0), 1)?)?)?;
    let z_a = FeatureVector::new(encode(b)?)?;
    let mixed_latent = interpolate_latent(&z_v, &z_a, spec.lambda)?;
    let z = unit(mixed_latent.as_slice())?;
    rows.push(ManipulationRow {
        kind: "interpolate".into(),
        input: format!("visual {id_a}, audio {id_b}"),
        params: vec![spec.lambda],
        generated: render(visual, &zeros, &z)?,
        latent: z,
        saliency: None,
        inversion_residual: None,
    });

    let target = FeatureVector::new(test.visual_row(0).to_vec())?;
    let inv_cfg = InversionConfig {
        steps: spec.inversion_steps,
        ..Default::default()
    };
    let inv = invert_generator(&visual.generator, &target, visual.noise_dim(), &inv_cfg)?;
    let z_a2 = FeatureVector::new(encode(&clips[2 % clips.len()])?)?;
    let edited = edit_direction(&inv.z_cond, &z_a, &z_a2, spec.edit_lambda)?;
    rows.push(ManipulationRow {
        kind: "edit".into(),
        input: format!("inverted frame {id_a}, audio {id_b} minus audio {}", test.ids[2 % clips.len()]),
        params: vec![spec.edit_lambda],
        generated: render(visual, inv.z_noise.as_slice(), edited.as_slice())?,
        latent: edited.as_slice().to_vec(),
        saliency: None,
        inversion_residual: Some(inv.residual),
    });

    Ok(ManipulationReport {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        spec_echo: spec.to_text(),
        rows,
        saliency,
    })
}
