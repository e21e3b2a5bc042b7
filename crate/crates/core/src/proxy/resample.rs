//! Rebalancing a labeled sample: downsampling, bootstrapping and SMOTE.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{LabeledSample, SampleOrigin, SampleRow};
use crate::error::{Error, Result};
use crate::rng;

fn check_ratio(target_ratio: f64) -> Result<()> {
    if target_ratio >= 1.0 && target_ratio.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("target ratio {target_ratio} must be ≥ 1")))
    }
}

fn by_class(sample: &LabeledSample) -> BTreeMap<u32, Vec<usize>> {
    let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in sample.rows.iter().enumerate() {
        m.entry(r.label).or_default().push(i);
    }
    m
}

/// Subsample every class above `target_ratio × minority` down to that size.
pub fn resample_downsample(sample: &LabeledSample, target_ratio: f64, seed: u64) -> Result<LabeledSample> {
    check_ratio(target_ratio)?;
    let groups = by_class(sample);
    let Some(min) = groups.values().map(Vec::len).min() else {
        return Ok(sample.clone());
    };
    let cap = (target_ratio * min as f64).floor() as usize;
    let mut keep = vec![true; sample.rows.len()];
    for (&label, idx) in &groups {
        if idx.len() > cap {
            let mut shuffled = idx.clone();
            shuffled.shuffle(&mut rng::rng(seed, &[0x646f776e, u64::from(label)]));
            for &i in &shuffled[cap..] {
                keep[i] = false;
            }
        }
    }
    Ok(LabeledSample {
        rows: sample
            .rows
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(r, _)| r.clone())
            .collect(),
    })
}

fn upsample_target(groups: &BTreeMap<u32, Vec<usize>>, target_ratio: f64) -> usize {
    let max = groups.values().map(Vec::len).max().unwrap_or(0);
    (max as f64 / target_ratio).ceil() as usize
}

/// Duplicate minority rows (with replacement) until every class reaches
/// `majority / target_ratio`.
pub fn resample_bootstrap(sample: &LabeledSample, target_ratio: f64, seed: u64) -> Result<LabeledSample> {
    check_ratio(target_ratio)?;
    let groups = by_class(sample);
    let need = upsample_target(&groups, target_ratio);
    let mut rows = sample.rows.clone();
    for (&label, idx) in &groups {
        let mut r = rng::rng(seed, &[0x626f6f74, u64::from(label)]);
        for _ in idx.len()..need {
            let src = &sample.rows[idx[r.random_range(0..idx.len())]];
            rows.push(SampleRow {
                origin: SampleOrigin::Duplicate,
                ..src.clone()
            });
        }
    }
    Ok(LabeledSample { rows })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices (into `idx`) of the `k` nearest other members, ties by row id.
fn neighbors(sample: &LabeledSample, idx: &[usize], me: usize, k: usize) -> Vec<usize> {
    let x = &sample.rows[idx[me]];
    let mut cand: Vec<(f64, u64, usize)> = idx
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != me)
        .map(|(j, &i)| (sq_dist(&x.vector, &sample.rows[i].vector), sample.rows[i].id, j))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    cand.into_iter().take(k).map(|c| c.2).collect()
}

/// Synthesize minority rows on segments to one of their `k` nearest
/// same-class neighbors until every class reaches `majority / target_ratio`.
pub fn resample_smote(
    sample: &LabeledSample,
    target_ratio: f64,
    smote_k: usize,
    seed: u64,
) -> Result<LabeledSample> {
    check_ratio(target_ratio)?;
    if smote_k == 0 {
        return Err(Error::invalid("smote_k must be at least 1"));
    }
    let groups = by_class(sample);
    let need = upsample_target(&groups, target_ratio);
    let mut rows = sample.rows.clone();
    for (&label, idx) in &groups {
        if idx.len() >= need {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "SMOTE needs at least 2 rows of class {label}, found {}",
                idx.len()
            )));
        }
        let k = smote_k.min(idx.len() - 1);
        let nn: Vec<Vec<usize>> = (0..idx.len()).map(|j| neighbors(sample, idx, j, k)).collect();
        let mut r = rng::rng(seed, &[0x736d6f74, u64::from(label)]);
        for _ in idx.len()..need {
            let j = r.random_range(0..idx.len());
            let m = nn[j][r.random_range(0..k)];
            let u: f64 = r.random_range(0.0..1.0);
            let base = &sample.rows[idx[j]];
            let other = &sample.rows[idx[m]];
            let vector = base
                .vector
                .iter()
                .zip(&other.vector)
                .map(|(a, b)| a + u * (b - a))
                .collect();
            rows.push(SampleRow {
                id: base.id,
                vector,
                label,
                origin: SampleOrigin::Synthetic {
                    base: base.id,
                    neighbor: other.id,
                    u,
                },
            });
        }
    }
    Ok(LabeledSample { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(counts: &[(u32, usize)]) -> LabeledSample {
        let mut rows = Vec::new();
        let mut id = 0;
        for &(label, n) in counts {
            for i in 0..n {
                rows.push(SampleRow::new(id, vec![label as f64, i as f64 * 0.01], label));
                id += 1;
            }
        }
        LabeledSample::new(rows).unwrap()
    }

    #[test]
    fn downsample_to_minority() {
        let s = sample(&[(0, 500), (1, 50)]);
        let d = resample_downsample(&s, 1.0, 1).unwrap();
        assert_eq!(d.class_counts(), BTreeMap::from([(0, 50), (1, 50)]));
        let ids: std::collections::HashSet<u64> = s.rows.iter().map(|r| r.id).collect();
        assert!(d.rows.iter().all(|r| ids.contains(&r.id) && r.origin == SampleOrigin::Original));
        let b = sample(&[(0, 30), (1, 30)]);
        assert_eq!(resample_downsample(&b, 1.0, 1).unwrap(), b);
    }

    #[test]
    fn bootstrap_duplicates_originals() {
        let s = sample(&[(0, 90), (1, 10)]);
        let b = resample_bootstrap(&s, 1.0, 3).unwrap();
        assert_eq!(b.class_counts()[&1], 90);
        let minority: Vec<&SampleRow> = s.rows.iter().filter(|r| r.label == 1).collect();
        for r in b.rows.iter().filter(|r| r.label == 1) {
            assert!(minority.iter().any(|m| m.id == r.id && m.vector == r.vector));
        }
        let even = sample(&[(0, 20), (1, 20)]);
        assert_eq!(resample_bootstrap(&even, 1.0, 3).unwrap(), even);
    }

    #[test]
    fn smote_on_a_segment() {
        let mut rows: Vec<SampleRow> = (0..10).map(|i| SampleRow::new(i, vec![5.0, -5.0 + i as f64], 0)).collect();
        rows.push(SampleRow::new(100, vec![0.0, 0.0], 1));
        rows.push(SampleRow::new(101, vec![1.0, 1.0], 1));
        let s = LabeledSample::new(rows).unwrap();
        let out = resample_smote(&s, 1.0, 5, 9).unwrap();
        assert_eq!(out.class_counts(), BTreeMap::from([(0, 10), (1, 10)]));
        for r in &out.rows {
            if let SampleOrigin::Synthetic { u, .. } = r.origin {
                assert!((0.0..=1.0).contains(&u));
                assert!((r.vector[0] - r.vector[1]).abs() < 1e-12);
                assert!((r.vector[0] - u).abs() < 1e-12 || (r.vector[0] - (1.0 - u)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smote_needs_two_minority_rows() {
        let s = sample(&[(0, 10), (1, 1)]);
        assert!(resample_smote(&s, 1.0, 5, 1).is_err());
    }
}
