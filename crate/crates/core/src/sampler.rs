//! Training-row selection: uniform random, top-K similarity and
//! active learning, plus imbalance diagnostics.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingStore, RowId};
use crate::error::{Error, Result};
use crate::ledger::{Meter, OracleUse, Work};
use crate::oracle::{label_batch, LabelContext, LabelOracle};
use crate::proxy::{fit_logistic, FitParams, ImbalanceTechnique, LabeledSample};
use crate::rng;
use crate::spec_string::KvSpec;

pub const DEFAULT_SAMPLE_N: usize = 1000;
pub const DEFAULT_AL_BATCH: usize = 50;
pub const DEFAULT_PREFILTER_K: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Topk,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub strategy: Strategy,
    pub n: usize,
    pub seed: u64,
    pub batch: usize,
    pub k: usize,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan::random(DEFAULT_SAMPLE_N, 42)
    }
}

impl SamplePlan {
    pub fn random(n: usize, seed: u64) -> SamplePlan {
        SamplePlan {
            strategy: Strategy::Random,
            n,
            seed,
            batch: DEFAULT_AL_BATCH,
            k: DEFAULT_PREFILTER_K,
        }
    }

    pub fn active(n: usize, batch: usize, seed: u64) -> SamplePlan {
        SamplePlan {
            strategy: Strategy::Active,
            batch,
            ..SamplePlan::random(n, seed)
        }
    }

    /// Parse `random:n=1000,seed=42`, `active:n=1000,batch=50,seed=42` or
    /// `topk:n=1000`.
    pub fn parse(text: &str) -> Result<SamplePlan> {
        let s = KvSpec::parse(text)?;
        s.check_keys(&["n", "seed", "batch", "k"])?;
        let strategy = match s.kind.as_str() {
            "random" => Strategy::Random,
            "topk" => Strategy::Topk,
            "active" => Strategy::Active,
            other => return Err(Error::invalid(format!("unknown sampling strategy `{other}`"))),
        };
        let plan = SamplePlan {
            strategy,
            n: s.get_or("n", DEFAULT_SAMPLE_N)?,
            seed: s.get_or("seed", 42)?,
            batch: s.get_or("batch", DEFAULT_AL_BATCH)?,
            k: s.get_or("k", DEFAULT_PREFILTER_K)?,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.batch == 0 || self.k == 0 {
            return Err(Error::invalid("sample n, batch and k must be positive"));
        }
        if self.batch > self.n {
            return Err(Error::invalid("active-learning batch exceeds sample size"));
        }
        Ok(())
    }
}

/// Parse the `--prefilter topk:k=500` flag.
pub fn parse_prefilter(text: &str) -> Result<usize> {
    let s = KvSpec::parse(text)?;
    if s.kind != "topk" {
        return Err(Error::invalid(format!("unknown prefilter `{}`", s.kind)));
    }
    s.check_keys(&["k"])?;
    let k = s.get_or("k", DEFAULT_PREFILTER_K)?;
    if k == 0 {
        return Err(Error::invalid("prefilter k must be positive"));
    }
    Ok(k)
}

/// Uniform sample of `n` ids without replacement.
pub fn sample_random(ids: &[RowId], n: usize, seed: u64) -> Result<Vec<RowId>> {
    if n == 0 || n > ids.len() {
        return Err(Error::invalid(format!(
            "cannot sample {n} rows from {}",
            ids.len()
        )));
    }
    let mut pool = ids.to_vec();
    let (chosen, _) = pool.partial_shuffle(&mut rng::rng(seed, &[0x72616e64]), n);
    Ok(chosen.to_vec())
}

/// Drawing from a pool copies all `population` ids once.
pub fn random_work(population: usize) -> Work {
    Work::new(population as f64, 0.0)
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// The `k` candidates most similar to `query` by dot product, best first;
/// ties go to the smaller id.
pub fn sample_topk_among(
    query: &[f32],
    store: &EmbeddingStore,
    candidates: &[RowId],
    k: usize,
) -> Result<Vec<(RowId, f64)>> {
    if candidates.is_empty() {
        return Err(Error::invalid("top-K over an empty candidate set"));
    }
    if query.len() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            found: query.len(),
        });
    }
    if k == 0 || k > candidates.len() {
        return Err(Error::invalid(format!(
            "top-K size {k} must be in 1..={}",
            candidates.len()
        )));
    }
    let mut scored: Vec<(RowId, f64)> = candidates
        .par_iter()
        .map(|&id| {
            let v = store
                .get(id)
                .ok_or_else(|| Error::invalid(format!("no embedding for row {id}")))?;
            Ok((id, dot(query, v)))
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

pub fn sample_topk(query: &[f32], store: &EmbeddingStore, k: usize) -> Result<Vec<(RowId, f64)>> {
    if store.is_empty() {
        return Err(Error::invalid("top-K over an empty store"));
    }
    sample_topk_among(query, store, store.ids(), k)
}

/// Scoring every candidate plus sorting them.
pub fn topk_work(candidates: usize, dim: usize) -> Work {
    let n = candidates as f64;
    Work::new(n, n * dim as f64 + n * n.max(2.0).log2())
}

/// max / min over classes with a nonzero count.
pub fn imbalance_ratio(counts: &BTreeMap<u32, usize>) -> Result<f64> {
    let present: Vec<usize> = counts.values().copied().filter(|&n| n > 0).collect();
    if present.len() < 2 {
        return Err(Error::UndefinedImbalance);
    }
    let max = *present.iter().max().unwrap();
    let min = *present.iter().min().unwrap();
    Ok(max as f64 / min as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSample {
    /// Labeled rows in labeling order.
    pub labels: Vec<(RowId, u32)>,
    pub rounds: usize,
    /// Rounds that used random selection (the first, and any round without
    /// two observed classes).
    pub random_rounds: usize,
    /// Rows submitted to the oracle.
    pub oracle_calls: usize,
    /// Set when the sample is incomplete or has a single class.
    pub flag: Option<String>,
    pub work: Work,
}

/// Active-learning sampler.
///
/// The first round labels a random batch. Each later round fits a balanced
/// interim proxy on everything labeled so far, scores the unlabeled rows
/// and labels the batch with the highest probability of the current
/// minority class. Exactly `n` rows are submitted unless the oracle fails.
#[allow(clippy::too_many_arguments)]
pub fn sample_active(
    ids: &[RowId],
    store: &EmbeddingStore,
    texts: &dyn Fn(&[RowId]) -> Result<Vec<String>>,
    oracle: &dyn LabelOracle,
    ctx: &LabelContext<'_>,
    n: usize,
    batch: usize,
    seed: u64,
    params: &FitParams,
    meter: &Meter,
) -> Result<ActiveSample> {
    if n > ids.len() {
        return Err(Error::invalid(format!("cannot sample {n} rows from {}", ids.len())));
    }
    if batch == 0 || n < 2 * batch {
        return Err(Error::invalid(format!(
            "active sampling needs n ≥ 2·batch (n = {n}, batch = {batch})"
        )));
    }
    let dim = store.dim() as f64;
    let mut out = ActiveSample {
        labels: Vec::new(),
        rounds: 0,
        random_rounds: 0,
        oracle_calls: 0,
        flag: None,
        work: Work::default(),
    };
    let mut taken: HashSet<RowId> = HashSet::new();
    let mut order = ids.to_vec();
    order.shuffle(&mut rng::rng(seed, &[0x61637476]));
    while out.oracle_calls < n {
        let size = batch.min(n - out.oracle_calls);
        let counts = {
            let mut m = BTreeMap::new();
            for &(_, l) in &out.labels {
                *m.entry(l).or_insert(0usize) += 1;
            }
            m
        };
        let pick: Vec<RowId> = if counts.len() < 2 {
            out.random_rounds += 1;
            out.work.add(Work::new(size as f64, 0.0));
            order.iter().filter(|id| !taken.contains(id)).take(size).copied().collect()
        } else {
            let sample = LabeledSample::from_store(store, &out.labels)?;
            let (model, fit) = fit_logistic(&sample, &ImbalanceTechnique::default(), params, seed)?;
            out.work.add(fit.work(store.dim()));
            let minority = *counts.iter().min_by_key(|(c, n)| (**n, **c)).unwrap().0;
            let col = model.classes.iter().position(|&c| c == minority).unwrap();
            let unlabeled: Vec<RowId> = ids.iter().filter(|id| !taken.contains(id)).copied().collect();
            let mut scored: Vec<(RowId, f64)> = unlabeled
                .par_iter()
                .map(|&id| {
                    let v = store
                        .get(id)
                        .ok_or_else(|| Error::invalid(format!("no embedding for row {id}")))?;
                    Ok((id, model.proba_one(v)?[col]))
                })
                .collect::<Result<_>>()?;
            let u = unlabeled.len() as f64;
            out.work.add(Work::new(u, u * model.weights.len() as f64 * (dim + 1.0) + u * u.max(2.0).log2()));
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored.into_iter().take(size).map(|(id, _)| id).collect()
        };
        out.rounds += 1;
        taken.extend(pick.iter().copied());
        let rows: Vec<(RowId, String)> = pick.iter().copied().zip(texts(&pick)?).collect();
        match label_batch(oracle, ctx, &rows, meter, OracleUse::Sample) {
            Ok(labeled) => {
                out.oracle_calls += rows.len();
                out.labels.extend(labeled.into_iter().map(|(id, l)| (id, l.value)));
            }
            Err(e) => {
                out.flag = Some(format!("oracle failed in round {}: {e}", out.rounds));
                return Ok(out);
            }
        }
    }
    let classes: HashSet<u32> = out.labels.iter().map(|&(_, l)| l).collect();
    if classes.len() < 2 {
        out.flag = Some("sample contains a single class".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Gold, MockOracle, TaskKind};

    #[test]
    fn random_is_a_deterministic_subset() {
        let ids: Vec<RowId> = (0..100).collect();
        let a = sample_random(&ids, 100, 4).unwrap();
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, ids);
        assert_eq!(sample_random(&ids, 30, 9).unwrap(), sample_random(&ids, 30, 9).unwrap());
        assert_ne!(sample_random(&ids, 30, 9).unwrap(), sample_random(&ids, 30, 10).unwrap());
        assert!(sample_random(&ids, 101, 1).is_err());
    }

    fn store() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(2).unwrap();
        s.insert(0, &[1.0, 0.0]).unwrap();
        s.insert(1, &[0.0, 1.0]).unwrap();
        s.insert(2, &[0.6, 0.8]).unwrap();
        s.insert(3, &[0.6, 0.8]).unwrap();
        s.insert(4, &[-1.0, 0.0]).unwrap();
        s
    }

    #[test]
    fn topk_orders_by_similarity() {
        let s = store();
        let top = sample_topk(&[0.6, 0.8], &s, 5).unwrap();
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![2, 3, 1, 0, 4]);
        for w in top.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        assert_eq!(sample_topk(&[1.0, 0.0], &s, 1).unwrap()[0].0, 0);
        assert!(sample_topk(&[1.0], &s, 1).is_err());
        assert!(sample_topk(&[1.0, 0.0], &s, 6).is_err());
    }

    #[test]
    fn imbalance_examples() {
        assert_eq!(imbalance_ratio(&BTreeMap::from([(0, 100), (1, 50)])).unwrap(), 2.0);
        assert_eq!(imbalance_ratio(&BTreeMap::from([(0, 50), (1, 50)])).unwrap(), 1.0);
        let e = imbalance_ratio(&BTreeMap::from([(0, 5), (1, 0)])).unwrap_err();
        assert!(e.to_string().contains("undefined imbalance ratio"));
    }

    #[test]
    fn plan_parsing() {
        let p = SamplePlan::parse("active:n=1000,batch=50,seed=42").unwrap();
        assert_eq!(p, SamplePlan::active(1000, 50, 42));
        assert!(SamplePlan::parse("active:n=10,batch=50").is_err());
        assert!(SamplePlan::parse("stratified:n=10").is_err());
        assert_eq!(parse_prefilter("topk:k=500").unwrap(), 500);
    }

    #[test]
    fn active_single_class_population_is_flagged() {
        let mut s = EmbeddingStore::new(2).unwrap();
        for i in 0..40 {
            s.insert(i, &[i as f32, 1.0]).unwrap();
        }
        let ids: Vec<RowId> = (0..40).collect();
        let oracle = MockOracle::new(TaskKind::Binary, Gold::from_labels((0..40).map(|i| (i, 0))), 0.0, 1).unwrap();
        let meter = Meter::new();
        let texts = |ids: &[RowId]| Ok(ids.iter().map(|i| format!("row {i}")).collect());
        let out = sample_active(&ids, &s, &texts, &oracle, &LabelContext::prompt("p"), 20, 5, 1, &FitParams::default(), &meter).unwrap();
        assert_eq!(out.oracle_calls, 20);
        assert_eq!(out.random_rounds, 4);
        assert!(out.flag.is_some());
        assert_eq!(meter.counts().oracle_label_calls, 20);
    }
}
