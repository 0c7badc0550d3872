//! Alignment objectives with analytic gradients.
//!
//! The contrastive term is `-log(exp(-d(a_j, b_j)/t) / sum_k exp(-d(a_j, b_k)/t))`.
//! `TotalL2Nce` uses the Euclidean distance between unit-normalized features
//! with `t = 1` and averages the audio-anchored and visual-anchored terms.
//! `NceCosine` swaps the distance for `1 - cos`. `L2Only` regresses raw audio
//! features onto the visual ones without any negatives.
//!
//! Normalization happens inside [`loss_total`], and gradients flow back
//! through it, so encoders emit raw features.

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, norm, FeatureMatrix};
use crate::error::{Result, XmaError};

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distance {
    L2,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "L2_ONLY")]
    L2Only,
    #[serde(rename = "NCE_COSINE")]
    NceCosine,
    #[serde(rename = "TOTAL_L2NCE")]
    TotalL2Nce,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::L2Only, LossKind::NceCosine, LossKind::TotalL2Nce];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::L2Only => "L2_ONLY",
            LossKind::NceCosine => "NCE_COSINE",
            LossKind::TotalL2Nce => "TOTAL_L2NCE",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = XmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L2_ONLY" => Ok(LossKind::L2Only),
            "NCE_COSINE" => Ok(LossKind::NceCosine),
            "TOTAL_L2NCE" => Ok(LossKind::TotalL2Nce),
            other => Err(XmaError::Config(format!("unknown loss variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A loss configuration. The temperature only affects `NceCosine`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossVariant {
    pub kind: LossKind,
    pub temperature: f64,
}

impl LossVariant {
    pub fn new(kind: LossKind, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(XmaError::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(LossVariant { kind, temperature })
    }

    pub fn of(kind: LossKind) -> Self {
        LossVariant {
            kind,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_audio: FeatureMatrix,
    pub grad_visual: FeatureMatrix,
}

fn check_unit_rows(m: &FeatureMatrix, what: &str) -> Result<()> {
    for (i, row) in m.iter_rows().enumerate() {
        if (norm(row) - 1.0).abs() > UNIT_TOL {
            return Err(XmaError::InvalidArgument(format!(
                "{what} row {i} is not unit-normalized"
            )));
        }
    }
    Ok(())
}

fn pair_distance(distance: Distance, a: &[f64], b: &[f64]) -> f64 {
    match distance {
        Distance::L2 => crate::embedding::l2_distance_slices(a, b),
        Distance::Cosine => 1.0 - dot(a, b),
    }
}

/// `-log softmax(logits)[target]` with max subtraction.
fn neg_log_softmax(logits: impl Iterator<Item = f64> + Clone, target: f64) -> f64 {
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.map(|l| (l - max).exp()).sum();
    ((max - target) + sum.ln()).max(0.0)
}

/// One contrastive term anchored at row `anchor_index` of `anchors`.
pub fn infonce_term(
    anchor_index: usize,
    anchors: &FeatureMatrix,
    candidates: &FeatureMatrix,
    distance: Distance,
    temperature: f64,
) -> Result<f64> {
    anchors.ensure_same_shape(candidates, "infonce_term")?;
    if anchor_index >= anchors.rows() {
        return Err(XmaError::IndexOutOfRange {
            index: anchor_index,
            len: anchors.rows(),
        });
    }
    if !(temperature > 0.0) {
        return Err(XmaError::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if distance == Distance::Cosine {
        check_unit_rows(anchors, "anchor")?;
        check_unit_rows(candidates, "candidate")?;
    }
    let a = anchors.row(anchor_index);
    let logits = (0..candidates.rows())
        .map(move |k| -pair_distance(distance, a, candidates.row(k)) / temperature);
    let target = -pair_distance(distance, a, candidates.row(anchor_index)) / temperature;
    Ok(neg_log_softmax(logits, target))
}

/// Mean audio-anchored InfoNCE with L2 distance over unit-normalized rows.
pub fn loss_audio_centric(batch_audio: &FeatureMatrix, batch_visual: &FeatureMatrix) -> Result<f64> {
    batch_audio.ensure_same_shape(batch_visual, "loss_audio_centric")?;
    check_unit_rows(batch_audio, "audio")?;
    check_unit_rows(batch_visual, "visual")?;
    let b = batch_audio.rows();
    let mut sum = 0.0;
    for j in 0..b {
        sum += infonce_term(j, batch_audio, batch_visual, Distance::L2, 1.0)?;
    }
    Ok(sum / b as f64)
}

/// Evaluates a loss variant and its gradients with respect to the raw
/// (un-normalized) audio and visual rows.
pub fn loss_total(
    batch_audio: &FeatureMatrix,
    batch_visual: &FeatureMatrix,
    variant: LossVariant,
) -> Result<LossResult> {
    batch_audio.ensure_same_shape(batch_visual, "loss_total")?;
    if !(variant.temperature > 0.0) {
        return Err(XmaError::InvalidArgument("temperature must be positive".into()));
    }
    match variant.kind {
        LossKind::L2Only => l2_only(batch_audio, batch_visual),
        LossKind::TotalL2Nce => symmetric_nce(batch_audio, batch_visual, Distance::L2, 1.0),
        LossKind::NceCosine => {
            symmetric_nce(batch_audio, batch_visual, Distance::Cosine, variant.temperature)
        }
    }
}

fn l2_only(a: &FeatureMatrix, v: &FeatureMatrix) -> Result<LossResult> {
    let (b, d) = (a.rows(), a.dim());
    let mut ga = vec![0.0; b * d];
    let mut gv = vec![0.0; b * d];
    let mut value = 0.0;
    for j in 0..b {
        let (aj, vj) = (a.row(j), v.row(j));
        let dist = crate::embedding::l2_distance_slices(aj, vj);
        value += dist;
        if dist > 0.0 {
            for i in 0..d {
                let g = (aj[i] - vj[i]) / (dist * b as f64);
                ga[j * d + i] = g;
                gv[j * d + i] = -g;
            }
        }
    }
    finish(value / b as f64, b, d, ga, gv)
}

fn finish(value: f64, b: usize, d: usize, ga: Vec<f64>, gv: Vec<f64>) -> Result<LossResult> {
    if !value.is_finite() {
        return Err(XmaError::NonFinite(format!("loss value {value}")));
    }
    Ok(LossResult {
        value,
        grad_audio: FeatureMatrix::from_flat(b, d, ga)?,
        grad_visual: FeatureMatrix::from_flat(b, d, gv)?,
    })
}

/// Row-normalizes and returns `(unit rows, norms)`.
fn normalize_with_norms(m: &FeatureMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = m.dim();
    let mut out = m.as_flat().to_vec();
    let mut norms = Vec::with_capacity(m.rows());
    for (i, row) in out.chunks_exact_mut(d).enumerate() {
        let n = norm(row);
        if n == 0.0 {
            return Err(XmaError::Degenerate(format!("row {i} has zero norm")));
        }
        row.iter_mut().for_each(|x| *x /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Backpropagates through `x / ||x||`: `(g - (g.u) u) / ||x||`.
fn backprop_normalize(unit: &[f64], norms: &[f64], grad_unit: &mut [f64]) {
    let d = unit.len() / norms.len();
    for (j, n) in norms.iter().enumerate() {
        let u = &unit[j * d..(j + 1) * d];
        let g = &mut grad_unit[j * d..(j + 1) * d];
        let proj = dot(g, u);
        for i in 0..d {
            g[i] = (g[i] - proj * u[i]) / n;
        }
    }
}

fn symmetric_nce(
    a: &FeatureMatrix,
    v: &FeatureMatrix,
    distance: Distance,
    temperature: f64,
) -> Result<LossResult> {
    let (b, d) = (a.rows(), a.dim());
    let (ua, na) = normalize_with_norms(a)?;
    let (uv, nv) = normalize_with_norms(v)?;
    let arow = |j: usize| &ua[j * d..(j + 1) * d];
    let vrow = |k: usize| &uv[k * d..(k + 1) * d];

    // dist[j * b + k] = d(a_j, v_k)
    let mut dist = vec![0.0; b * b];
    for j in 0..b {
        for k in 0..b {
            dist[j * b + k] = pair_distance(distance, arow(j), vrow(k));
        }
    }

    // Audio-anchored terms walk rows, visual-anchored terms walk columns.
    // Swapping the arguments transposes `dist`, so the two sums swap exactly.
    let mut grad_dist = vec![0.0; b * b];
    let scale = 1.0 / (2.0 * b as f64 * temperature);
    let mut sum_audio = 0.0;
    let mut sum_visual = 0.0;
    let mut probs = vec![0.0; b];
    for j in 0..b {
        sum_audio += softmax_term(b, |k| dist[j * b + k] / temperature, j, &mut probs);
        for k in 0..b {
            let delta = if k == j { 1.0 } else { 0.0 };
            grad_dist[j * b + k] += (delta - probs[k]) * scale;
        }
    }
    for k in 0..b {
        sum_visual += softmax_term(b, |j| dist[j * b + k] / temperature, k, &mut probs);
        for j in 0..b {
            let delta = if k == j { 1.0 } else { 0.0 };
            grad_dist[j * b + k] += (delta - probs[j]) * scale;
        }
    }
    let value = (sum_audio + sum_visual) / (2.0 * b as f64);

    let mut gua = vec![0.0; b * d];
    let mut guv = vec![0.0; b * d];
    for j in 0..b {
        for k in 0..b {
            let g = grad_dist[j * b + k];
            if g == 0.0 {
                continue;
            }
            let (aj, vk) = (arow(j), vrow(k));
            match distance {
                Distance::L2 => {
                    let dd = dist[j * b + k];
                    if dd == 0.0 {
                        continue;
                    }
                    for i in 0..d {
                        let t = g * (aj[i] - vk[i]) / dd;
                        gua[j * d + i] += t;
                        guv[k * d + i] -= t;
                    }
                }
                Distance::Cosine => {
                    for i in 0..d {
                        gua[j * d + i] -= g * vk[i];
                        guv[k * d + i] -= g * aj[i];
                    }
                }
            }
        }
    }
    backprop_normalize(&ua, &na, &mut gua);
    backprop_normalize(&uv, &nv, &mut guv);
    finish(value, b, d, gua, guv)
}

/// Fills `probs` with softmax(-scaled distances) and returns the term value
/// `-log probs[target]`.
fn softmax_term(n: usize, scaled: impl Fn(usize) -> f64, target: usize, probs: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for k in 0..n {
        max = max.max(-scaled(k));
    }
    let mut sum = 0.0;
    for (k, p) in probs.iter_mut().enumerate().take(n) {
        *p = (-scaled(k) - max).exp();
        sum += *p;
    }
    probs.iter_mut().take(n).for_each(|p| *p /= sum);
    ((max + scaled(target)) + sum.ln()).max(0.0)
}
