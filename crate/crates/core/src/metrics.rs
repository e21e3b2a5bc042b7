//! Quality metrics, embedding diagnostics and per-slice analysis.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{apply_slice, RowId, Slice, Table};
use crate::error::{Error, Result};

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Full confusion matrix; `matrix[truth][pred]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub matrix: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        ConfusionCounts {
            matrix: vec![vec![0; num_classes]; num_classes],
        }
    }

    /// Build from (predicted, truth) pairs.
    pub fn from_pairs(num_classes: usize, pairs: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let mut c = ConfusionCounts::new(num_classes);
        for (p, t) in pairs {
            let (p, t) = (p as usize, t as usize);
            if p >= num_classes || t >= num_classes {
                return Err(Error::invalid(format!(
                    "label outside 0..{num_classes} in confusion counts"
                )));
            }
            c.matrix[t][p] += 1;
        }
        Ok(c)
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.len()
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    pub fn class(&self, c: usize) -> ClassCounts {
        let total = self.total();
        let tp = self.matrix[c][c];
        let row: u64 = self.matrix[c].iter().sum();
        let col: u64 = self.matrix.iter().map(|r| r[c]).sum();
        ClassCounts {
            tp,
            fp: col - tp,
            fn_: row - tp,
            tn: total + tp - row - col,
        }
    }

    /// Classes that occur in the truth or in the predictions.
    fn active_classes(&self) -> Vec<usize> {
        (0..self.num_classes())
            .filter(|&c| {
                let k = self.class(c);
                k.tp + k.fp + k.fn_ > 0
            })
            .collect()
    }

    fn nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::EmptyEvaluation)
        } else {
            Ok(())
        }
    }
}

fn f1_of(c: &ClassCounts) -> f64 {
    let (p, r) = (c.precision(), c.recall());
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn f1_binary(counts: &ClassCounts) -> Result<f64> {
    if counts.total() == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok(f1_of(counts))
}

/// Unweighted mean of per-class F1 over classes present in truth or predictions.
pub fn macro_f1(counts: &ConfusionCounts) -> Result<f64> {
    counts.nonempty()?;
    let active = counts.active_classes();
    Ok(active.iter().map(|&c| f1_of(&counts.class(c))).sum::<f64>() / active.len() as f64)
}

pub fn macro_precision(counts: &ConfusionCounts) -> Result<f64> {
    counts.nonempty()?;
    let active = counts.active_classes();
    Ok(active.iter().map(|&c| counts.class(c).precision()).sum::<f64>() / active.len() as f64)
}

pub fn macro_recall(counts: &ConfusionCounts) -> Result<f64> {
    counts.nonempty()?;
    let active = counts.active_classes();
    Ok(active.iter().map(|&c| counts.class(c).recall()).sum::<f64>() / active.len() as f64)
}

pub fn accuracy(counts: &ConfusionCounts) -> Result<f64> {
    counts.nonempty()?;
    let diag: u64 = (0..counts.num_classes()).map(|c| counts.matrix[c][c]).sum();
    Ok(diag as f64 / counts.total() as f64)
}

/// F1 of class 1 for two-class tasks, macro-F1 otherwise.
pub fn task_f1(counts: &ConfusionCounts) -> Result<f64> {
    if counts.num_classes() == 2 {
        f1_binary(&counts.class(1))
    } else {
        macro_f1(counts)
    }
}

pub fn relative_accuracy(proxy_f1: f64, llm_f1: f64) -> Result<f64> {
    if !(llm_f1 > 0.0) {
        return Err(Error::invalid("relative accuracy is undefined when the LLM score is 0"));
    }
    Ok(proxy_f1 / llm_f1)
}

fn dcg(levels: &[u32], k: usize) -> f64 {
    levels
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &rel)| (2f64.powi(rel as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k with gain 2^rel − 1 and a log2(i+1) discount.
///
/// The ideal ordering is taken over the full list; a list with no relevant
/// item scores 0.
pub fn ndcg_at_k(ranked_levels: &[u32], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("nDCG cutoff must be positive"));
    }
    let mut ideal = ranked_levels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal, k);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg(ranked_levels, k) / idcg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca2 {
    /// Centered projections onto the two leading components.
    pub projections: Vec<[f64; 2]>,
    pub components: [Vec<f64>; 2],
    /// Variance along each component.
    pub explained_variance: [f64; 2],
    /// Share of total variance along each component.
    pub explained_variance_ratio: [f64; 2],
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
/// Returns eigenvalues and column eigenvectors (as rows of the second matrix).
pub fn symmetric_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let values: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    let vectors: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (values, vectors)
}

fn fix_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Population covariance of rows.
pub fn covariance(vectors: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = vectors.len() as f64;
    let d = vectors[0].len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for v in vectors {
        for i in 0..d {
            let di = v[i] - mean[i];
            for j in i..d {
                cov[i][j] += di * (v[j] - mean[j]) / n;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[i][j] = cov[j][i];
        }
    }
    (mean, cov)
}

/// Project onto the two leading principal components.
pub fn pca2(vectors: &[Vec<f64>]) -> Result<Pca2> {
    if vectors.len() < 3 {
        return Err(Error::invalid("PCA needs at least 3 points"));
    }
    let d = vectors[0].len();
    if d < 2 {
        return Err(Error::invalid("PCA needs at least 2 dimensions"));
    }
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: vectors.iter().map(Vec::len).find(|&l| l != d).unwrap_or(d),
        });
    }
    let (mean, cov) = covariance(vectors);
    let total: f64 = (0..d).map(|i| cov[i][i]).sum();
    if total <= 0.0 {
        return Err(Error::invalid("PCA of zero-variance data"));
    }
    let (values, vectors_) = symmetric_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut c1 = vectors_[order[0]].clone();
    let mut c2 = vectors_[order[1]].clone();
    fix_sign(&mut c1);
    fix_sign(&mut c2);
    let ev = [values[order[0]].max(0.0), values[order[1]].max(0.0)];
    let projections = vectors
        .iter()
        .map(|v| {
            let dot = |c: &[f64]| v.iter().zip(&mean).zip(c).map(|((x, m), w)| (x - m) * w).sum();
            [dot(&c1), dot(&c2)]
        })
        .collect();
    Ok(Pca2 {
        projections,
        components: [c1, c2],
        explained_variance: ev,
        explained_variance_ratio: [ev[0] / total, ev[1] / total],
    })
}

pub const SEPARABILITY_EPS: f64 = 1e-9;

/// Mean pairwise centroid distance over mean within-class (population) variance.
///
/// Within-class variance is the mean squared distance to the class centroid.
pub fn separability_score(vectors: &[Vec<f64>], labels: &[u32]) -> Result<f64> {
    if vectors.len() != labels.len() {
        return Err(Error::invalid("vectors and labels differ in length"));
    }
    let mut groups: BTreeMap<u32, Vec<&Vec<f64>>> = BTreeMap::new();
    for (v, &l) in vectors.iter().zip(labels) {
        groups.entry(l).or_default().push(v);
    }
    if groups.len() < 2 {
        return Err(Error::SingleClass);
    }
    if let Some((c, g)) = groups.iter().find(|(_, g)| g.len() < 2) {
        return Err(Error::invalid(format!(
            "class {c} has {} point(s); separability needs at least 2",
            g.len()
        )));
    }
    let mut centroids = Vec::new();
    let mut variances = Vec::new();
    for g in groups.values() {
        let d = g[0].len();
        let mut c = vec![0.0; d];
        for v in g {
            for (ci, x) in c.iter_mut().zip(v.iter()) {
                *ci += x / g.len() as f64;
            }
        }
        let var = g
            .iter()
            .map(|v| v.iter().zip(&c).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
            .sum::<f64>()
            / g.len() as f64;
        centroids.push(c);
        variances.push(var);
    }
    let mut dist = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            dist += centroids[i]
                .iter()
                .zip(&centroids[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            pairs += 1;
        }
    }
    let mean_dist = dist / pairs as f64;
    let mean_var = variances.iter().sum::<f64>() / variances.len() as f64;
    Ok(mean_dist / (mean_var + SEPARABILITY_EPS))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub name: String,
    pub rows: usize,
    pub proxy_f1: Option<f64>,
    pub llm_f1: Option<f64>,
    pub relative_accuracy: Option<f64>,
    /// Set when the slice has no evaluated rows.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    /// Whether scores are against gold labels (otherwise against the oracle).
    pub against_gold: bool,
    pub rows: Vec<SliceRow>,
}

fn score_rows(
    name: &str,
    ids: &[RowId],
    num_classes: usize,
    proxy: &BTreeMap<RowId, u32>,
    oracle: &BTreeMap<RowId, u32>,
    gold: Option<&BTreeMap<RowId, u32>>,
) -> Result<SliceRow> {
    let truth = gold.unwrap_or(oracle);
    let ids: Vec<RowId> = ids.iter().copied().filter(|id| truth.contains_key(id)).collect();
    if ids.is_empty() {
        return Ok(SliceRow {
            name: name.into(),
            rows: 0,
            proxy_f1: None,
            llm_f1: None,
            relative_accuracy: None,
            empty: true,
        });
    }
    let pc = ConfusionCounts::from_pairs(num_classes, ids.iter().map(|id| (proxy[id], truth[id])))?;
    let lc = ConfusionCounts::from_pairs(num_classes, ids.iter().map(|id| (oracle[id], truth[id])))?;
    let proxy_f1 = task_f1(&pc)?;
    let llm_f1 = task_f1(&lc)?;
    Ok(SliceRow {
        name: name.into(),
        rows: ids.len(),
        proxy_f1: Some(proxy_f1),
        llm_f1: Some(llm_f1),
        relative_accuracy: relative_accuracy(proxy_f1, llm_f1).ok(),
        empty: false,
    })
}

/// Per-slice proxy and LLM F1, preceded by the global `*` row.
///
/// Rows evaluated are those carrying both a proxy and an oracle label. With
/// gold labels both are scored against gold; otherwise the oracle is the
/// reference and its own score is 1.
pub fn slice_report(
    table: &Table,
    slices: &[Slice],
    num_classes: usize,
    proxy_labels: &BTreeMap<RowId, u32>,
    oracle_labels: &BTreeMap<RowId, u32>,
    gold: Option<&BTreeMap<RowId, u32>>,
) -> Result<SliceReport> {
    let evaluated: BTreeSet<RowId> = proxy_labels
        .keys()
        .filter(|id| oracle_labels.contains_key(id))
        .copied()
        .collect();
    let all: Vec<RowId> = evaluated.iter().copied().collect();
    let mut rows = vec![score_rows("*", &all, num_classes, proxy_labels, oracle_labels, gold)?];
    for s in slices {
        let ids: Vec<RowId> = apply_slice(table, s)?
            .into_iter()
            .filter(|id| evaluated.contains(id))
            .collect();
        let row = score_rows(&s.name, &ids, num_classes, proxy_labels, oracle_labels, gold)?;
        if row.empty {
            log::warn!("slice `{}` has no evaluated rows", s.name);
        }
        rows.push(row);
    }
    Ok(SliceReport {
        against_gold: gold.is_some(),
        rows,
    })
}
