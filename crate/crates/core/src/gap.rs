//! Modality-gap geometry on unit-normalized embeddings.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_slices, norm, FeatureMatrix};
use crate::error::{Result, XmaError};

/// Mean gaps shorter than this are treated as degenerate.
pub const DEGENERATE_GAP: f64 = 1e-12;

/// Row `i` is `unit(z_V_i) - unit(z_A_i)`.
pub fn modality_gaps(visual: &FeatureMatrix, audio: &FeatureMatrix) -> Result<FeatureMatrix> {
    visual.ensure_same_shape(audio, "modality gaps")?;
    let v = visual.normalized_rows()?;
    let a = audio.normalized_rows()?;
    let data = v.as_flat().iter().zip(a.as_flat()).map(|(x, y)| x - y).collect();
    FeatureMatrix::from_flat(v.rows(), v.dim(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeStats {
    pub norms: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn magnitude_stats(gaps: &FeatureMatrix) -> Result<MagnitudeStats> {
    if gaps.rows() == 0 {
        return Err(XmaError::InvalidArgument("no gaps".into()));
    }
    let norms: Vec<f64> = gaps.iter_rows().map(norm).collect();
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(MagnitudeStats {
        norms,
        mean,
        std: var.sqrt(),
    })
}

/// A quantity that is undefined when the mean gap vanishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "values", rename_all = "snake_case")]
pub enum GapDependent {
    Defined(Vec<f64>),
    DegenerateMeanGap,
}

impl GapDependent {
    pub fn values(&self) -> Option<&[f64]> {
        match self {
            GapDependent::Defined(v) => Some(v),
            GapDependent::DegenerateMeanGap => None,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, GapDependent::DegenerateMeanGap)
    }
}

fn unit_mean_gap(gaps: &FeatureMatrix) -> Result<Option<Vec<f64>>> {
    if gaps.rows() == 0 {
        return Err(XmaError::InvalidArgument("no gaps".into()));
    }
    let mean = gaps.mean_row();
    let n = norm(&mean);
    Ok((n > DEGENERATE_GAP).then(|| mean.iter().map(|x| x / n).collect()))
}

/// `cos(z_i - E[z], E[g])` per row, on unit-normalized `side` rows. Rows that
/// sit exactly at the mean give 0.
pub fn orthogonality_samples(side: &FeatureMatrix, gaps: &FeatureMatrix) -> Result<GapDependent> {
    if side.dim() != gaps.dim() {
        return Err(XmaError::Shape(format!("features dim {} vs gaps dim {}", side.dim(), gaps.dim())));
    }
    let Some(g) = unit_mean_gap(gaps)? else {
        return Ok(GapDependent::DegenerateMeanGap);
    };
    let z = side.normalized_rows()?;
    let mean = z.mean_row();
    let samples = z
        .iter_rows()
        .map(|row| {
            let centered: Vec<f64> = row.iter().zip(&mean).map(|(a, b)| a - b).collect();
            if norm(&centered) == 0.0 {
                0.0
            } else {
                cosine_slices(&centered, &g).unwrap_or(0.0)
            }
        })
        .collect();
    Ok(GapDependent::Defined(samples))
}

/// Per-dimension mean of unit-normalized `side` rows after removing their
/// projection onto the unit mean gap.
pub fn centering_values(side: &FeatureMatrix, gaps: &FeatureMatrix) -> Result<GapDependent> {
    if side.dim() != gaps.dim() {
        return Err(XmaError::Shape(format!("features dim {} vs gaps dim {}", side.dim(), gaps.dim())));
    }
    let Some(g) = unit_mean_gap(gaps)? else {
        return Ok(GapDependent::DegenerateMeanGap);
    };
    let z = side.normalized_rows()?;
    let mut acc = vec![0.0; z.dim()];
    for row in z.iter_rows() {
        let proj: f64 = row.iter().zip(&g).map(|(a, b)| a * b).sum();
        for (i, a) in acc.iter_mut().enumerate() {
            *a += row[i] - proj * g[i];
        }
    }
    let n = z.rows() as f64;
    Ok(GapDependent::Defined(acc.into_iter().map(|a| a / n).collect()))
}

/// Mean paired cosine similarity.
pub fn alignment_score(visual: &FeatureMatrix, audio: &FeatureMatrix) -> Result<f64> {
    visual.ensure_same_shape(audio, "alignment score")?;
    if visual.rows() == 0 {
        return Err(XmaError::InvalidArgument("no pairs".into()));
    }
    let mut total = 0.0;
    for i in 0..visual.rows() {
        let (v, a) = (visual.row(i), audio.row(i));
        total += cosine_slices(v, a).map_err(|_| XmaError::Degenerate(format!("zero-norm row {i}")))?;
    }
    Ok(total / visual.rows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Audio => "audio",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub modality: Modality,
    pub class: Option<u32>,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<ProjectedPoint>,
    /// Variance along the two axes, descending.
    pub explained: [f64; 2],
    /// True when the data has fewer than two nonzero principal directions.
    pub rank_deficient: bool,
}

impl Projection {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("modality,class,x,y\n");
        for p in &self.points {
            let class = p.class.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", p.modality.as_str(), class, p.x, p.y));
        }
        out
    }
}

const RANK_TOL: f64 = 1e-12;

/// PCA of the stacked rows (visual first, then audio) onto the top two
/// principal axes. Each axis is signed so its first nonzero loading is
/// positive.
pub fn project_2d(visual: &FeatureMatrix, audio: &FeatureMatrix) -> Result<Projection> {
    if visual.dim() != audio.dim() {
        return Err(XmaError::Shape(format!("dims {} vs {}", visual.dim(), audio.dim())));
    }
    let n = visual.rows() + audio.rows();
    if n < 2 {
        return Err(XmaError::InvalidArgument("projection needs at least 2 rows".into()));
    }
    let d = visual.dim();
    let stacked = DMatrix::from_row_iterator(n, d, visual.as_flat().iter().chain(audio.as_flat()).copied());
    let mean = stacked.row_mean();
    let centered = DMatrix::from_fn(n, d, |r, c| stacked[(r, c)] - mean[c]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut axes: Vec<Option<Vec<f64>>> = Vec::with_capacity(2);
    let mut explained = [0.0; 2];
    for (slot, &k) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda <= RANK_TOL * scale {
            axes.push(None);
            continue;
        }
        explained[slot] = lambda;
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        if let Some(first) = axis.iter().find(|v| v.abs() > RANK_TOL) {
            if *first < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
        }
        axes.push(Some(axis));
    }
    while axes.len() < 2 {
        axes.push(None);
    }
    let rank_deficient = axes.iter().any(Option::is_none);

    let coord = |row: usize, axis: &Option<Vec<f64>>| -> f64 {
        axis.as_ref()
            .map(|a| (0..d).map(|c| centered[(row, c)] * a[c]).sum())
            .unwrap_or(0.0)
    };
    let mut points = Vec::with_capacity(n);
    for r in 0..n {
        let (modality, class) = if r < visual.rows() {
            (Modality::Visual, visual.labels().map(|l| l[r]))
        } else {
            (Modality::Audio, audio.labels().map(|l| l[r - visual.rows()]))
        };
        points.push(ProjectedPoint {
            modality,
            class,
            x: coord(r, &axes[0]),
            y: coord(r, &axes[1]),
        });
    }
    Ok(Projection {
        points,
        explained,
        rank_deficient,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub pairs: usize,
    pub magnitudes: Vec<f64>,
    pub magnitude_mean: f64,
    pub magnitude_std: f64,
    pub orthogonality_visual: GapDependent,
    pub orthogonality_audio: GapDependent,
    pub centering_visual: GapDependent,
    pub centering_audio: GapDependent,
    pub alignment: f64,
}

impl GapReport {
    pub fn compute(visual: &FeatureMatrix, audio: &FeatureMatrix) -> Result<GapReport> {
        let gaps = modality_gaps(visual, audio)?;
        let mags = magnitude_stats(&gaps)?;
        Ok(GapReport {
            pairs: gaps.rows(),
            magnitudes: mags.norms,
            magnitude_mean: mags.mean,
            magnitude_std: mags.std,
            orthogonality_visual: orthogonality_samples(visual, &gaps)?,
            orthogonality_audio: orthogonality_samples(audio, &gaps)?,
            centering_visual: centering_values(visual, &gaps)?,
            centering_audio: centering_values(audio, &gaps)?,
            alignment: alignment_score(visual, audio)?,
        })
    }

    /// Mean of all orthogonality samples from both sides.
    pub fn mean_orthogonality(&self) -> Option<f64> {
        let v = self.orthogonality_visual.values()?;
        let a = self.orthogonality_audio.values()?;
        let n = (v.len() + a.len()) as f64;
        Some(v.iter().chain(a).sum::<f64>() / n)
    }

    /// Largest absolute centering value over both sides.
    pub fn max_abs_centering(&self) -> Option<f64> {
        let v = self.centering_visual.values()?;
        let a = self.centering_audio.values()?;
        Some(v.iter().chain(a).fold(0.0f64, |m, x| m.max(x.abs())))
    }
}
