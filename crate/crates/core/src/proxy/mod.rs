//! Logistic-regression proxy models over embeddings.

mod logistic;
mod resample;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingStore, RowId};
use crate::error::{Error, Result};
use crate::ledger::Work;

pub use logistic::{minimize, sigmoid, BinaryFit, FitParams, LogisticObjective};
pub use resample::{resample_bootstrap, resample_downsample, resample_smote};

pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_MINORITY_FLOOR: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SampleOrigin {
    Original,
    /// Bootstrap copy of an original row.
    Duplicate,
    /// `base + u · (neighbor − base)`.
    Synthetic { base: RowId, neighbor: RowId, u: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: RowId,
    pub vector: Vec<f64>,
    pub label: u32,
    pub origin: SampleOrigin,
}

impl SampleRow {
    pub fn new(id: RowId, vector: Vec<f64>, label: u32) -> SampleRow {
        SampleRow {
            id,
            vector,
            label,
            origin: SampleOrigin::Original,
        }
    }
}

/// Embedded rows with oracle labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub rows: Vec<SampleRow>,
}

impl LabeledSample {
    pub fn new(rows: Vec<SampleRow>) -> Result<LabeledSample> {
        if let Some(first) = rows.first() {
            let d = first.vector.len();
            for r in &rows {
                if r.vector.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: r.vector.len(),
                    });
                }
                if r.vector.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(r.id));
                }
            }
        }
        Ok(LabeledSample { rows })
    }

    /// Build from labels and an embedding store.
    pub fn from_store(store: &EmbeddingStore, labels: &[(RowId, u32)]) -> Result<LabeledSample> {
        let rows = labels
            .iter()
            .map(|&(id, label)| {
                let v = store
                    .get(id)
                    .ok_or_else(|| Error::invalid(format!("no embedding for row {id}")))?;
                Ok(SampleRow::new(id, v.iter().map(|&x| f64::from(x)).collect(), label))
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledSample::new(rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.vector.len())
    }

    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut m = BTreeMap::new();
        for r in &self.rows {
            *m.entry(r.label).or_insert(0) += 1;
        }
        m
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.vector.clone()).collect()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.label).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TechniqueKind {
    Standard,
    Balanced,
    Downsample,
    Bootstrap,
    Smote,
}

impl std::str::FromStr for TechniqueKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "standard" => TechniqueKind::Standard,
            "balanced" => TechniqueKind::Balanced,
            "downsample" => TechniqueKind::Downsample,
            "bootstrap" => TechniqueKind::Bootstrap,
            "smote" => TechniqueKind::Smote,
            other => {
                return Err(Error::invalid(format!(
                    "unknown technique `{other}` (standard, balanced, downsample, bootstrap, smote)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceTechnique {
    pub kind: TechniqueKind,
    pub smote_k: usize,
    pub target_ratio: f64,
}

impl ImbalanceTechnique {
    pub fn of(kind: TechniqueKind) -> Self {
        ImbalanceTechnique {
            kind,
            smote_k: 5,
            target_ratio: 1.0,
        }
    }
}

impl Default for ImbalanceTechnique {
    fn default() -> Self {
        ImbalanceTechnique::of(TechniqueKind::Balanced)
    }
}

/// `total / (num_classes · count_c)` per class.
pub fn class_weights_balanced(counts: &BTreeMap<u32, usize>) -> Result<BTreeMap<u32, f64>> {
    if let Some((c, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(Error::invalid(format!("class {c} has zero count")));
    }
    let total: usize = counts.values().sum();
    let k = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|(&c, &n)| (c, total as f64 / (k * n as f64)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueChoice {
    pub technique: ImbalanceTechnique,
    pub warning: Option<String>,
}

/// Balanced weighting unless the minority class has at most
/// `minority_floor` rows, in which case SMOTE (or bootstrap below 2 rows).
pub fn choose_technique(counts: &BTreeMap<u32, usize>, minority_floor: usize) -> Result<TechniqueChoice> {
    let present: Vec<usize> = counts.values().copied().filter(|&n| n > 0).collect();
    if present.len() < 2 {
        return Err(Error::SingleClass);
    }
    let minority = *present.iter().min().unwrap();
    let (kind, warning) = if minority > minority_floor {
        (TechniqueKind::Balanced, None)
    } else if minority >= 2 {
        (TechniqueKind::Smote, None)
    } else {
        (
            TechniqueKind::Bootstrap,
            Some(format!(
                "minority class has {minority} row; SMOTE needs 2, bootstrapping instead"
            )),
        )
    };
    Ok(TechniqueChoice {
        technique: ImbalanceTechnique::of(kind),
        warning,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub sample_size: usize,
    pub class_counts: BTreeMap<u32, usize>,
    pub seed: u64,
    #[serde(default)]
    pub agreement_on_sample: Option<f64>,
    #[serde(default)]
    pub sample_ids: Vec<RowId>,
    #[serde(default)]
    pub sample_labels: Vec<u32>,
}

/// A trained linear classifier. Two-class models keep a single weight row
/// scoring `classes[1]`; larger models keep one row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyModel {
    pub version: u32,
    pub classes: Vec<u32>,
    pub dim: usize,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub technique: ImbalanceTechnique,
    pub train_meta: TrainMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub technique: ImbalanceTechnique,
    /// Rows after resampling.
    pub training_rows: usize,
    /// One entry per binary sub-problem.
    pub fits: Vec<BinaryFit>,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn converged(&self) -> bool {
        self.fits.iter().all(|f| f.converged)
    }

    pub fn iterations(&self) -> usize {
        self.fits.iter().map(|f| f.iterations).sum()
    }

    /// Deterministic compute charged for training: each objective
    /// evaluation is a pass over the rows with one multiply-add per
    /// coordinate for the margins and one for the gradient.
    pub fn work(&self, dim: usize) -> Work {
        let evals: usize = self.fits.iter().map(|f| f.evaluations).sum();
        let n = self.training_rows as f64;
        Work::new(evals as f64 * n, evals as f64 * n * 2.0 * (dim as f64 + 1.0))
    }
}

fn apply_technique(sample: &LabeledSample, technique: &ImbalanceTechnique, seed: u64) -> Result<LabeledSample> {
    match technique.kind {
        TechniqueKind::Standard | TechniqueKind::Balanced => Ok(sample.clone()),
        TechniqueKind::Downsample => resample_downsample(sample, technique.target_ratio, seed),
        TechniqueKind::Bootstrap => resample_bootstrap(sample, technique.target_ratio, seed),
        TechniqueKind::Smote => resample_smote(sample, technique.target_ratio, technique.smote_k, seed),
    }
}

/// How rows are weighted in the loss.
#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    Uniform,
    /// Inverse class frequency; per sub-problem for one-vs-rest.
    Balanced,
    PerClass(BTreeMap<u32, f64>),
}

fn row_weights(sample: &LabeledSample, y: &[bool], weighting: &Weighting) -> Result<Vec<f64>> {
    let raw: Vec<f64> = match weighting {
        Weighting::Uniform => vec![1.0; y.len()],
        Weighting::Balanced => {
            let pos = y.iter().filter(|&&b| b).count();
            let w = class_weights_balanced(&BTreeMap::from([(0, y.len() - pos), (1, pos)]))?;
            y.iter().map(|&b| w[&u32::from(b)]).collect()
        }
        Weighting::PerClass(m) => sample
            .rows
            .iter()
            .map(|r| {
                m.get(&r.label)
                    .copied()
                    .filter(|w| *w > 0.0 && w.is_finite())
                    .ok_or_else(|| Error::invalid(format!("no positive weight for class {}", r.label)))
            })
            .collect::<Result<_>>()?,
    };
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.iter().map(|w| w / mean).collect())
}

/// Raw parameters of a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub classes: Vec<u32>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub fits: Vec<BinaryFit>,
}

/// Fit binary or one-vs-rest logistic regression. Row weights are rescaled
/// to mean 1, which leaves balanced weights unchanged.
pub fn fit_weighted(sample: &LabeledSample, weighting: &Weighting, params: &FitParams) -> Result<LinearFit> {
    let counts = sample.class_counts();
    if counts.len() < 2 {
        return Err(Error::SingleClass);
    }
    let classes: Vec<u32> = counts.keys().copied().collect();
    let rows: Vec<&[f64]> = sample.rows.iter().map(|r| r.vector.as_slice()).collect();
    let lambda = params
        .reg_lambda
        .unwrap_or(1.0 / (2.0 * sample.len() as f64));
    let targets: &[u32] = if classes.len() == 2 { &classes[1..] } else { &classes };
    let mut out = LinearFit {
        classes: classes.clone(),
        weights: Vec::new(),
        bias: Vec::new(),
        fits: Vec::new(),
    };
    for &t in targets {
        let y: Vec<bool> = sample.rows.iter().map(|r| r.label == t).collect();
        let s = row_weights(sample, &y, weighting)?;
        let obj = LogisticObjective::new(&rows, &y, &s, lambda);
        let (theta, fit) = minimize(&obj, params.tol, params.max_iter);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("training diverged to non-finite parameters"));
        }
        out.weights.push(theta[..sample.dim()].to_vec());
        out.bias.push(theta[sample.dim()]);
        out.fits.push(fit);
    }
    Ok(out)
}

/// Train a proxy on `sample` after applying `technique`.
pub fn fit_logistic(
    sample: &LabeledSample,
    technique: &ImbalanceTechnique,
    params: &FitParams,
    seed: u64,
) -> Result<(ProxyModel, FitReport)> {
    let counts = sample.class_counts();
    if counts.len() < 2 {
        return Err(Error::SingleClass);
    }
    if technique.smote_k == 0 {
        return Err(Error::invalid("smote_k must be at least 1"));
    }
    let mut warnings = Vec::new();
    let train = match apply_technique(sample, technique, seed) {
        Ok(t) => t,
        Err(e) if technique.kind == TechniqueKind::Smote => {
            warnings.push(format!("{e}; bootstrapping instead"));
            apply_technique(sample, &ImbalanceTechnique::of(TechniqueKind::Bootstrap), seed)?
        }
        Err(e) => return Err(e),
    };
    let weighting = if technique.kind == TechniqueKind::Balanced {
        Weighting::Balanced
    } else {
        Weighting::Uniform
    };
    let LinearFit {
        classes,
        weights,
        bias,
        fits,
    } = fit_weighted(&train, &weighting, params)?;
    for f in &fits {
        if !f.converged {
            warnings.push(format!(
                "optimizer stopped after {} iterations with gradient norm {:.3e}",
                f.iterations, f.grad_inf_norm
            ));
        }
    }
    let model = ProxyModel {
        version: MODEL_VERSION,
        classes,
        dim: sample.dim(),
        weights,
        bias,
        technique: *technique,
        train_meta: TrainMeta {
            sample_size: sample.len(),
            class_counts: counts,
            seed,
            agreement_on_sample: None,
            sample_ids: sample.rows.iter().map(|r| r.id).collect(),
            sample_labels: sample.labels(),
        },
    };
    let report = FitReport {
        technique: *technique,
        training_rows: train.len(),
        fits,
        warnings,
    };
    Ok((model, report))
}

impl ProxyModel {
    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                found: d,
            })
        } else {
            Ok(())
        }
    }

    /// Class probabilities for one vector, aligned with `classes`.
    pub fn proba_one<T: Copy + Into<f64>>(&self, x: &[T]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let score = |w: &[f64], b: f64| -> f64 {
            x.iter().zip(w).map(|(&a, c)| a.into() * c).sum::<f64>() + b
        };
        if self.classes.len() == 2 {
            let p = sigmoid(score(&self.weights[0], self.bias[0]));
            return Ok(vec![1.0 - p, p]);
        }
        let s: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, &b)| sigmoid(score(w, b)))
            .collect();
        let total: f64 = s.iter().sum();
        if total <= 0.0 {
            return Ok(vec![1.0 / s.len() as f64; s.len()]);
        }
        Ok(s.iter().map(|v| v / total).collect())
    }

    /// Most probable class; ties go to the smaller class id.
    pub fn argmax(&self, proba: &[f64]) -> u32 {
        let mut best = 0;
        for (i, &p) in proba.iter().enumerate() {
            if p > proba[best] {
                best = i;
            }
        }
        self.classes[best]
    }

    /// Label with a probability threshold on `classes[1]` for two-class
    /// models, argmax otherwise.
    pub fn decide(&self, proba: &[f64], threshold: f64) -> u32 {
        if self.classes.len() == 2 {
            if proba[1] >= threshold {
                self.classes[1]
            } else {
                self.classes[0]
            }
        } else {
            self.argmax(proba)
        }
    }

    /// Σ class · P(class).
    pub fn expected_value(&self, proba: &[f64]) -> f64 {
        self.classes
            .iter()
            .zip(proba)
            .map(|(&c, p)| f64::from(c) * p)
            .sum()
    }
}

/// Probabilities for each vector; rows align with `model.classes`.
pub fn predict_proba(model: &ProxyModel, vecs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    vecs.par_iter().map(|v| model.proba_one(v)).collect()
}

/// Probabilities for stored embeddings of `ids`, in order.
pub fn predict_proba_store(model: &ProxyModel, store: &EmbeddingStore, ids: &[RowId]) -> Result<Vec<Vec<f64>>> {
    model.check_dim(store.dim())?;
    ids.par_iter()
        .map(|&id| {
            let v = store
                .get(id)
                .ok_or_else(|| Error::invalid(format!("no embedding for row {id}")))?;
            model.proba_one(v)
        })
        .collect()
}

/// Work charged for scoring `rows` vectors.
pub fn predict_work(model: &ProxyModel, rows: usize) -> Work {
    let n = rows as f64;
    Work::new(n, n * model.weights.len() as f64 * (model.dim as f64 + 1.0))
}

pub fn save_model(model: &ProxyModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, model)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ProxyModel> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let found = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: "missing model version".into(),
        })?;
    if found != u64::from(MODEL_VERSION) {
        return Err(Error::Version {
            expected: MODEL_VERSION,
            found: found as u32,
        });
    }
    let model: ProxyModel = serde_json::from_value(value).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    let rows = if model.classes.len() == 2 { 1 } else { model.classes.len() };
    let consistent = model.classes.len() >= 2
        && model.weights.len() == rows
        && model.bias.len() == rows
        && model.weights.iter().all(|w| w.len() == model.dim)
        && model.weights.iter().flatten().chain(&model.bias).all(|v| v.is_finite());
    if !consistent {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: "inconsistent model shape or non-finite parameters".into(),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn clusters(seed: u64, per_class: &[usize], dim: usize, sep: f64) -> LabeledSample {
        let mut r = rng::rng(seed, &[]);
        let mut rows = Vec::new();
        let mut id = 0;
        for (c, &n) in per_class.iter().enumerate() {
            for _ in 0..n {
                let v: Vec<f64> = (0..dim)
                    .map(|j| {
                        let g: f64 = StandardNormal.sample(&mut r);
                        g + if j == c { sep } else { 0.0 }
                    })
                    .collect();
                rows.push(SampleRow::new(id, v, c as u32));
                id += 1;
            }
        }
        LabeledSample::new(rows).unwrap()
    }

    #[test]
    fn balanced_weights_examples() {
        let w = class_weights_balanced(&BTreeMap::from([(1, 10), (0, 90)])).unwrap();
        assert!((w[&1] - 5.0).abs() < 1e-12);
        assert!((w[&0] - 100.0 / 180.0).abs() < 1e-12);
        let w = class_weights_balanced(&BTreeMap::from([(0, 50), (1, 50)])).unwrap();
        assert_eq!(w[&0], 1.0);
        assert_eq!(w[&1], 1.0);
        assert!(class_weights_balanced(&BTreeMap::from([(0, 0), (1, 5)])).is_err());
    }

    #[test]
    fn weighted_loss_equals_duplicated_dataset() {
        let s = clusters(4, &[90, 10], 3, 1.0);
        let w = class_weights_balanced(&s.class_counts()).unwrap();
        let rows: Vec<&[f64]> = s.rows.iter().map(|r| r.vector.as_slice()).collect();
        let y: Vec<bool> = s.rows.iter().map(|r| r.label == 1).collect();
        let sw: Vec<f64> = s.rows.iter().map(|r| w[&r.label]).collect();
        let weighted = LogisticObjective::new(&rows, &y, &sw, 0.0);
        let mut dup_rows = Vec::new();
        let mut dup_y = Vec::new();
        for r in &s.rows {
            let copies = if r.label == 1 { 9 } else { 1 };
            for _ in 0..copies {
                dup_rows.push(r.vector.as_slice());
                dup_y.push(r.label == 1);
            }
        }
        let dup = LogisticObjective::new(&dup_rows, &dup_y, &vec![1.0; dup_y.len()], 0.0);
        let mut r = rng::rng(11, &[]);
        for _ in 0..5 {
            let theta: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            assert!((weighted.value(&theta) - dup.value(&theta)).abs() < 1e-9);
        }
    }

    #[test]
    fn separable_clusters_fit_perfectly() {
        let s = clusters(1, &[100, 100], 8, 8.0);
        let (m, rep) = fit_logistic(&s, &ImbalanceTechnique::default(), &FitParams::default(), 1).unwrap();
        let p = predict_proba(&m, &s.vectors()).unwrap();
        for (row, pr) in s.rows.iter().zip(&p) {
            assert_eq!(m.decide(pr, 0.5), row.label);
        }
        for f in &rep.fits {
            for w in f.objective_trace.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let s = clusters(2, &[40, 40, 40], 5, 3.0);
        let (m, _) = fit_logistic(&s, &ImbalanceTechnique::default(), &FitParams::default(), 2).unwrap();
        assert_eq!(m.weights.len(), 3);
        for p in predict_proba(&m, &s.vectors()).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn boundary_and_monotone_margin() {
        let model = ProxyModel {
            version: MODEL_VERSION,
            classes: vec![0, 1],
            dim: 2,
            weights: vec![vec![1.0, -2.0]],
            bias: vec![0.5],
            technique: ImbalanceTechnique::default(),
            train_meta: TrainMeta::default(),
        };
        let p = model.proba_one(&[1.5f64, 1.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let mut last = 0.0;
        for t in -10..=10 {
            let x = [t as f64 * 0.3, 0.0];
            let q = model.proba_one(&x).unwrap()[1];
            assert!(q >= last);
            last = q;
        }
        assert!(model.proba_one(&[1.0f64]).is_err());
    }

    #[test]
    fn class_weight_scale_invariance() {
        let s = clusters(6, &[120, 30], 4, 1.5);
        let base = BTreeMap::from([(0, 0.7), (1, 2.0)]);
        let scaled: BTreeMap<u32, f64> = base.iter().map(|(&k, &v)| (k, v * 3.0)).collect();
        let params = FitParams { tol: 1e-8, ..FitParams::default() };
        let a = fit_weighted(&s, &Weighting::PerClass(base), &params).unwrap();
        let b = fit_weighted(&s, &Weighting::PerClass(scaled), &params).unwrap();
        for (x, y) in a.weights[0].iter().zip(&b.weights[0]) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn standard_equals_balanced_on_balanced_sample() {
        let s = clusters(8, &[60, 60], 4, 2.0);
        let p = FitParams::default();
        let (a, _) = fit_logistic(&s, &ImbalanceTechnique::of(TechniqueKind::Standard), &p, 1).unwrap();
        let (b, _) = fit_logistic(&s, &ImbalanceTechnique::of(TechniqueKind::Balanced), &p, 1).unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn technique_rule() {
        let pick = |a, b| choose_technique(&BTreeMap::from([(0, a), (1, b)]), 100).unwrap();
        assert_eq!(pick(480, 500).technique.kind, TechniqueKind::Balanced);
        assert_eq!(pick(940, 60).technique.kind, TechniqueKind::Smote);
        let c = pick(999, 1);
        assert_eq!(c.technique.kind, TechniqueKind::Bootstrap);
        assert!(c.warning.is_some());
        assert!(matches!(
            choose_technique(&BTreeMap::from([(0, 10)]), 100),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn single_class_sample_is_rejected() {
        let s = clusters(1, &[10], 3, 1.0);
        assert!(matches!(
            fit_logistic(&s, &ImbalanceTechnique::default(), &FitParams::default(), 1),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let s = clusters(3, &[50, 20], 6, 2.0);
        let (m, _) = fit_logistic(&s, &ImbalanceTechnique::default(), &FitParams::default(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let mut r = rng::rng(5, &[]);
        let probe: Vec<Vec<f64>> = (0..100).map(|_| (0..6).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        assert_eq!(predict_proba(&m, &probe).unwrap(), predict_proba(&back, &probe).unwrap());

        let text = std::fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 2");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Version { found: 2, .. })));
        std::fs::write(&path, "{ not json").unwrap();
        assert!(load_model(&path).is_err());
    }
}
