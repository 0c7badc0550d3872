//! Retrieval and generation metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{l2_distance_slices, FeatureMatrix};
use crate::error::{Result, XmaError};
use crate::optim::{AdamConfig, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecallMode {
    /// A hit is any database row with the query's class label.
    Class,
    /// A hit is the database row with the query's id.
    Instance,
}

/// Fraction of queries whose `k` nearest database rows (L2 between unit
/// vectors, ties by database index) contain a match.
pub fn recall_at_k(queries: &FeatureMatrix, database: &FeatureMatrix, mode: RecallMode, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(XmaError::InvalidArgument("K must be at least 1".into()));
    }
    if queries.dim() != database.dim() {
        return Err(XmaError::Shape(format!(
            "query dim {} vs database dim {}",
            queries.dim(),
            database.dim()
        )));
    }
    let keys = |m: &FeatureMatrix, what: &str| -> Result<Vec<u32>> {
        let v = match mode {
            RecallMode::Class => m.labels(),
            RecallMode::Instance => m.ids(),
        };
        v.map(|v| v.to_vec())
            .ok_or_else(|| XmaError::InvalidArgument(format!("{what} rows carry no {mode:?} keys")))
    };
    let q_keys = keys(queries, "query")?;
    let db_keys = keys(database, "database")?;
    let q = queries.normalized_rows()?;
    let db = database.normalized_rows()?;
    let hits: usize = (0..q.rows())
        .into_par_iter()
        .map(|i| {
            let ranked = rank_database(q.row(i), &db);
            ranked.iter().take(k).any(|&j| db_keys[j] == q_keys[i]) as usize
        })
        .sum();
    Ok(hits as f64 / q.rows() as f64)
}

/// Database indices sorted by distance to `query`, ties by index.
pub fn rank_database(query: &[f64], db: &FeatureMatrix) -> Vec<usize> {
    let dists: Vec<f64> = db.iter_rows().map(|r| l2_distance_slices(query, r)).collect();
    let mut order: Vec<usize> = (0..db.rows()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    order
}

/// Softmax-regression head over unit-normalized embeddings. Plays the role of
/// an external evaluation-only classifier; labels never reach alignment
/// training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub classes: usize,
    pub dim: usize,
    /// `classes x dim`, row-major, followed by `classes` biases.
    pub params: Vec<f64>,
}

impl LinearClassifier {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        LinearClassifier {
            classes,
            dim,
            params: vec![0.0; classes * dim + classes],
        }
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let (w, b) = self.params.split_at(self.classes * self.dim);
        (0..self.classes)
            .map(|c| b[c] + w[c * self.dim..(c + 1) * self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Class probabilities for each (normalized) row.
    pub fn predict_proba(&self, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        if features.dim() != self.dim {
            return Err(XmaError::Shape(format!(
                "classifier expects dim {}, got {}",
                self.dim,
                features.dim()
            )));
        }
        let x = features.normalized_rows()?;
        Ok(x.iter_rows().map(|r| softmax(&self.logits(r))).collect())
    }

    /// Full-batch Adam on mean cross-entropy.
    pub fn fit(features: &FeatureMatrix, labels: &[u32], classes: usize, steps: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(XmaError::Shape("one label per row required".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(XmaError::InvalidArgument(format!("label {bad} >= class count {classes}")));
        }
        let x = features.normalized_rows()?;
        let d = x.dim();
        let mut model = LinearClassifier::zeros(classes, d);
        let mut opt = OptimizerState::new(AdamConfig::with_lr(0.05, 0.0), model.params.len());
        let n = x.rows() as f64;
        for _ in 0..steps {
            let mut grad = vec![0.0; model.params.len()];
            for (row, &y) in x.iter_rows().zip(labels) {
                let p = softmax(&model.logits(row));
                for c in 0..classes {
                    let g = (p[c] - if c == y as usize { 1.0 } else { 0.0 }) / n;
                    grad[classes * d + c] += g;
                    for (gw, xi) in grad[c * d..(c + 1) * d].iter_mut().zip(row) {
                        *gw += g * xi;
                    }
                }
            }
            opt.step(&mut model.params, &grad)?;
        }
        Ok(model)
    }

    pub fn accuracy(&self, features: &FeatureMatrix, labels: &[u32]) -> Result<f64> {
        let probs = self.predict_proba(features)?;
        top_k_hit_rate(&probs, labels, 1)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Fraction of rows whose true class is among the `k` largest probabilities
/// (ties by class index).
pub fn top_k_hit_rate(probs: &[Vec<f64>], labels: &[u32], k: usize) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(XmaError::Shape(format!(
            "{} probability rows for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let classes = probs[0].len();
    if k == 0 || k > classes {
        return Err(XmaError::InvalidArgument(format!("K = {k} outside 1..={classes}")));
    }
    let mut hits = 0;
    for (p, &y) in probs.iter().zip(labels) {
        if p.len() != classes || y as usize >= classes {
            return Err(XmaError::InvalidArgument(format!(
                "label {y} does not fit a {classes}-class classifier"
            )));
        }
        let mut order: Vec<usize> = (0..classes).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        hits += order[..k].contains(&(y as usize)) as usize;
    }
    Ok(hits as f64 / probs.len() as f64)
}

/// Classifier-based recall: `features` are embeddings of generated (or real)
/// frames under the frozen visual expert.
pub fn classifier_recall(features: &FeatureMatrix, classifier: &LinearClassifier, labels: &[u32], k: usize) -> Result<f64> {
    if labels.iter().any(|&l| l as usize >= classifier.classes) {
        return Err(XmaError::InvalidArgument("label outside classifier range".into()));
    }
    top_k_hit_rate(&classifier.predict_proba(features)?, labels, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrechetResult {
    pub distance: f64,
    /// Total magnitude of negative eigenvalues zeroed in the square root.
    pub clamped_mass: f64,
}

pub const FRECHET_RIDGE: f64 = 1e-6;

fn moments(m: &FeatureMatrix) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (m.rows(), m.dim());
    let mean = DVector::from_vec(m.mean_row());
    let mut cov = DMatrix::zeros(d, d);
    for row in m.iter_rows() {
        let c = DVector::from_iterator(d, row.iter().zip(mean.iter()).map(|(x, mu)| x - mu));
        cov += &c * c.transpose();
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    if n <= d {
        for i in 0..d {
            cov[(i, i)] += FRECHET_RIDGE;
        }
    }
    (mean, cov)
}

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut clamped = 0.0;
    let roots = eig.eigenvalues.map(|l| {
        if l < 0.0 {
            clamped += -l;
            0.0
        } else {
            l.sqrt()
        }
    });
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&roots) * v.transpose(), clamped)
}

/// `||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})`.
pub fn frechet_from_moments(mu1: &DVector<f64>, cov1: &DMatrix<f64>, mu2: &DVector<f64>, cov2: &DMatrix<f64>) -> Result<FrechetResult> {
    if cov1.iter().chain(cov2.iter()).any(|x| !x.is_finite()) {
        return Err(XmaError::NonFinite("covariance".into()));
    }
    let mean_term = (mu1 - mu2).norm_squared();
    let (s1_half, c1) = psd_sqrt(cov1);
    let inner = &s1_half * cov2 * &s1_half;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let mut clamped = c1;
    let mut tr_sqrt = 0.0;
    for &l in eig.eigenvalues.iter() {
        if l < 0.0 {
            clamped += -l;
        } else {
            tr_sqrt += l.sqrt();
        }
    }
    let distance = (mean_term + cov1.trace() + cov2.trace() - 2.0 * tr_sqrt).max(0.0);
    Ok(FrechetResult {
        distance,
        clamped_mass: clamped,
    })
}

pub fn frechet_distance(real: &FeatureMatrix, generated: &FeatureMatrix) -> Result<FrechetResult> {
    if real.dim() != generated.dim() {
        return Err(XmaError::Shape("feature dimensions differ".into()));
    }
    let (m1, c1) = moments(real);
    let (m2, c2) = moments(generated);
    frechet_from_moments(&m1, &c1, &m2, &c2)
}

pub const SCORE_EPS: f64 = 1e-12;

/// `exp(E_x KL(p(y|x) || p(y)))`, averaged over contiguous splits with `p(y)`
/// estimated per split.
pub fn score_analog(probs: &[Vec<f64>], splits: usize) -> Result<f64> {
    if probs.is_empty() || splits == 0 || splits > probs.len() {
        return Err(XmaError::InvalidArgument(format!(
            "{} rows cannot form {splits} splits",
            probs.len()
        )));
    }
    let classes = probs[0].len();
    let mut rows = Vec::with_capacity(probs.len());
    for (i, p) in probs.iter().enumerate() {
        let s: f64 = p.iter().sum();
        if p.len() != classes || (s - 1.0).abs() > 1e-9 || p.iter().any(|x| !(*x >= 0.0)) {
            return Err(XmaError::InvalidArgument(format!("row {i} is not a probability vector")));
        }
        let floored: Vec<f64> = p.iter().map(|x| x.max(SCORE_EPS)).collect();
        let z: f64 = floored.iter().sum();
        rows.push(floored.into_iter().map(|x| x / z).collect::<Vec<_>>());
    }
    let n = rows.len();
    let mut total = 0.0;
    for s in 0..splits {
        let chunk = &rows[s * n / splits..(s + 1) * n / splits];
        let mut marginal = vec![0.0; classes];
        for r in chunk {
            marginal.iter_mut().zip(r).for_each(|(m, x)| *m += x / chunk.len() as f64);
        }
        let mean_kl: f64 = chunk
            .iter()
            .map(|r| r.iter().zip(&marginal).map(|(p, q)| p * (p / q).ln()).sum::<f64>())
            .sum::<f64>()
            / chunk.len() as f64;
        total += mean_kl.exp();
    }
    Ok(total / splits as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn labeled(rows: &[Vec<f64>], labels: Vec<u32>) -> FeatureMatrix {
        let ids = (0..rows.len() as u32).collect();
        FeatureMatrix::from_rows(rows).unwrap().with_labels(labels).unwrap().with_ids(ids).unwrap()
    }

    #[test]
    fn self_retrieval_is_perfect() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let m = labeled(&rows, (0..10).collect());
        assert_eq!(recall_at_k(&m, &m, RecallMode::Instance, 1).unwrap(), 1.0);
    }

    #[test]
    fn adversarial_retrieval_is_zero() {
        let db = labeled(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]);
        // Query 0 sits on database row 1 and vice versa.
        let q = labeled(&[vec![0.0, 1.0], vec![1.0, 0.0]], vec![0, 1]);
        assert_eq!(recall_at_k(&q, &db, RecallMode::Class, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&q, &db, RecallMode::Class, 2).unwrap(), 1.0);
    }

    #[test]
    fn recall_requires_keys() {
        let m = FeatureMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(recall_at_k(&m, &m, RecallMode::Class, 1).is_err());
        let l = m.clone().with_labels(vec![0]).unwrap();
        assert!(recall_at_k(&l, &l, RecallMode::Class, 0).is_err());
    }

    #[test]
    fn recall_monotone_in_k() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        let mk = |rng: &mut Xoshiro256PlusPlus| -> Vec<Vec<f64>> {
            (0..30).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let labels: Vec<u32> = (0..30).map(|i| i % 4).collect();
        let q = labeled(&mk(&mut rng), labels.clone());
        let db = labeled(&mk(&mut rng), labels);
        let mut prev = 0.0;
        for k in 1..=30 {
            let r = recall_at_k(&q, &db, RecallMode::Class, k).unwrap();
            assert!(r >= prev);
            prev = r;
        }
        assert_eq!(prev, 1.0);
    }

    #[test]
    fn uniform_classifier_full_coverage() {
        let c = LinearClassifier::zeros(5, 3);
        let x = FeatureMatrix::from_rows(&[[1.0, 2.0, 3.0], [0.0, -1.0, 0.5]]).unwrap();
        assert_eq!(classifier_recall(&x, &c, &[4, 0], 5).unwrap(), 1.0);
        assert!(classifier_recall(&x, &c, &[7, 0], 1).is_err());
    }

    #[test]
    fn fitted_classifier_recall_equals_accuracy() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(6);
        let centers = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let c = i % 3;
            rows.push(centers[c].iter().map(|x| x + rng.random_range(-0.2..0.2)).collect::<Vec<f64>>());
            labels.push(c as u32);
        }
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let clf = LinearClassifier::fit(&x, &labels, 3, 200).unwrap();
        let acc = clf.accuracy(&x, &labels).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(classifier_recall(&x, &clf, &labels, 1).unwrap(), acc);
    }

    #[test]
    fn frechet_identity_and_univariate_closed_form() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let a = FeatureMatrix::from_rows(&rows).unwrap();
        assert!(frechet_distance(&a, &a).unwrap().distance <= 1e-6);

        // Sample moments: {-1, 1} has mean 0, {0, 2} has mean 1, equal spread.
        let x = FeatureMatrix::from_rows(&[[-1.0], [1.0]]).unwrap();
        let y = FeatureMatrix::from_rows(&[[0.0], [2.0]]).unwrap();
        let fd = frechet_distance(&x, &y).unwrap().distance;
        assert!((fd - 1.0).abs() < 1e-8, "{fd}");

        let m1 = DVector::from_vec(vec![0.3]);
        let m2 = DVector::from_vec(vec![-0.2]);
        let c1 = DMatrix::from_vec(1, 1, vec![1.5f64.powi(2)]);
        let c2 = DMatrix::from_vec(1, 1, vec![0.5f64.powi(2)]);
        let fd = frechet_from_moments(&m1, &c1, &m2, &c2).unwrap().distance;
        assert!((fd - (0.25 + 1.0)).abs() < 1e-8);
    }

    #[test]
    fn frechet_symmetric() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let mk = |rng: &mut Xoshiro256PlusPlus, s: f64| -> FeatureMatrix {
            let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| s * rng.random_range(-1.0..1.0)).collect()).collect();
            FeatureMatrix::from_rows(&rows).unwrap()
        };
        let a = mk(&mut rng, 1.0);
        let b = mk(&mut rng, 2.0);
        let ab = frechet_distance(&a, &b).unwrap().distance;
        let ba = frechet_distance(&b, &a).unwrap().distance;
        assert!((ab - ba).abs() < 1e-8);
        assert!(ab > 0.0);
    }

    #[test]
    fn score_examples() {
        let uniform = vec![vec![0.25; 4]; 8];
        assert_eq!(score_analog(&uniform, 2).unwrap(), 1.0);
        let mut onehot = Vec::new();
        for i in 0..8 {
            let mut r = vec![0.0; 4];
            r[i % 4] = 1.0;
            onehot.push(r);
        }
        let s = score_analog(&onehot, 2).unwrap();
        assert!((s - 4.0).abs() < 1e-9, "{s}");
        assert!(score_analog(&[vec![0.5, 0.6]], 1).is_err());
        assert!(score_analog(&uniform, 9).is_err());
    }

    #[test]
    fn score_matches_direct_summation_and_is_at_least_one() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(10);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                let r: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let got = score_analog(&rows, 3).unwrap();
        let mut want = 0.0;
        for s in 0..3 {
            let chunk = &rows[s * 4..s * 4 + 4];
            let mut py = [0.0; 3];
            for r in chunk {
                for c in 0..3 {
                    py[c] += r[c] / 4.0;
                }
            }
            let mut kl = 0.0;
            for r in chunk {
                for c in 0..3 {
                    kl += r[c] * (r[c].ln() - py[c].ln());
                }
            }
            want += (kl / 4.0).exp();
        }
        want /= 3.0;
        assert!((got - want).abs() < 1e-10);
        assert!(got >= 1.0);
    }
}
