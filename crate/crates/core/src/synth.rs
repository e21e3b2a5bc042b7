//! Seeded synthetic benchmarks: Gaussian class clusters for filtering and
//! classification, planted graded relevance for ranking.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnType, EmbeddingStore, RowId, Schema, Table, Value};
use crate::error::{Error, Result};
use crate::oracle::{Gold, MockOracle, TaskKind};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SynthMode {
    Filter,
    Classify,
    /// `n_rows` is the number of queries; documents come from `corpus_size`.
    Rank {
        levels: u32,
        relevant_per_query: f64,
        corpus_size: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_rows: usize,
    pub n_classes: usize,
    pub imbalance_ratio: f64,
    pub cluster_separation: f64,
    pub dim: usize,
    pub oracle_noise: f64,
    pub seed: u64,
    pub mode: SynthMode,
    /// Exchange the embedding directions of classes 0 and 1 while keeping
    /// labels: a planted distribution shift.
    #[serde(default)]
    pub swap_directions: bool,
}

impl SynthSpec {
    pub fn filter(n_rows: usize, imbalance_ratio: f64, cluster_separation: f64, seed: u64) -> SynthSpec {
        SynthSpec {
            n_rows,
            n_classes: 2,
            imbalance_ratio,
            cluster_separation,
            dim: 64,
            oracle_noise: 0.0,
            seed,
            mode: SynthMode::Filter,
            swap_directions: false,
        }
    }

    pub fn classify(n_rows: usize, n_classes: usize, cluster_separation: f64, seed: u64) -> SynthSpec {
        SynthSpec {
            n_classes,
            mode: SynthMode::Classify,
            imbalance_ratio: 1.0,
            ..SynthSpec::filter(n_rows, 1.0, cluster_separation, seed)
        }
    }

    pub fn rank(queries: usize, corpus_size: usize, relevant_per_query: f64, levels: u32, seed: u64) -> SynthSpec {
        SynthSpec {
            n_rows: queries,
            n_classes: levels as usize,
            mode: SynthMode::Rank {
                levels,
                relevant_per_query,
                corpus_size,
            },
            ..SynthSpec::filter(queries, 1.0, 6.0, seed)
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.oracle_noise = noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 {
            return Err(Error::invalid("n_rows must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        if !(self.imbalance_ratio >= 1.0 && self.imbalance_ratio.is_finite()) {
            return Err(Error::invalid("imbalance ratio must be ≥ 1"));
        }
        if !(self.cluster_separation >= 0.0 && self.cluster_separation.is_finite()) {
            return Err(Error::invalid("cluster separation must be ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.oracle_noise) {
            return Err(Error::invalid("oracle noise must be in [0, 1]"));
        }
        match self.mode {
            SynthMode::Filter if self.n_classes != 2 => {
                Err(Error::invalid("filter mode has exactly 2 classes"))
            }
            SynthMode::Filter | SynthMode::Classify => {
                if self.n_classes < 2 {
                    return Err(Error::invalid("need at least 2 classes"));
                }
                if self.n_classes > self.dim {
                    return Err(Error::invalid("dim must be at least the number of classes"));
                }
                if self.n_rows < self.n_classes {
                    return Err(Error::invalid("fewer rows than classes"));
                }
                Ok(())
            }
            SynthMode::Rank {
                levels,
                relevant_per_query,
                corpus_size,
            } => {
                if levels < 2 {
                    return Err(Error::invalid("relevance rubric requires ≥ 2 levels"));
                }
                if !(relevant_per_query >= 1.0) {
                    return Err(Error::invalid("relevant docs per query must be ≥ 1"));
                }
                if relevant_per_query.ceil() as usize > corpus_size {
                    return Err(Error::invalid(format!(
                        "infeasible: {relevant_per_query} relevant docs per query exceeds corpus size {corpus_size}"
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuerySet {
    pub table: Table,
    pub store: EmbeddingStore,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub spec: SynthSpec,
    /// Rows (filter/classify) or the document corpus (rank).
    pub table: Table,
    pub store: EmbeddingStore,
    pub gold: Gold,
    pub queries: Option<QuerySet>,
}

impl SynthData {
    pub fn task(&self) -> TaskKind {
        match self.spec.mode {
            SynthMode::Filter => TaskKind::Binary,
            SynthMode::Classify => TaskKind::Multiclass {
                k: self.spec.n_classes as u32,
            },
            SynthMode::Rank { levels, .. } => TaskKind::Relevance { levels },
        }
    }

    /// Mock oracle over the planted labels with the spec's noise.
    pub fn oracle(&self) -> Result<MockOracle> {
        MockOracle::new(self.task(), self.gold.clone(), self.spec.oracle_noise, self.spec.seed)
    }

    pub fn population_counts(&self) -> BTreeMap<u32, usize> {
        let mut m = BTreeMap::new();
        for &l in self.gold.labels.values() {
            *m.entry(l).or_insert(0) += 1;
        }
        m
    }
}

/// Split `n` into class sizes with max/min = `ratio`, largest first
/// (geometric for k > 2). For two classes the positive class 1 is the minority.
pub fn class_sizes(n: usize, k: usize, ratio: f64) -> Vec<usize> {
    if k == 2 {
        let minority = ((n as f64 / (1.0 + ratio)).round() as usize).clamp(1, n - 1);
        return vec![n - minority, minority];
    }
    let r = ratio.powf(-1.0 / (k as f64 - 1.0));
    let w: Vec<f64> = (0..k).map(|c| r.powi(c as i32)).collect();
    let total: f64 = w.iter().sum();
    let exact: Vec<f64> = w.iter().map(|x| x / total * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| (x.floor() as usize).max(1)).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut i = 0;
    while sizes.iter().sum::<usize>() < n {
        sizes[order[i % k]] += 1;
        i += 1;
    }
    while sizes.iter().sum::<usize>() > n {
        let big = (0..k).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
        sizes[big] -= 1;
    }
    sizes
}

const SHARED_WORDS: usize = 400;
const CLASS_WORDS: usize = 24;

fn text_for(r: &mut impl Rng, class_words: &[String], signal: usize, filler: usize) -> String {
    let mut words: Vec<String> = (0..filler)
        .map(|_| format!("w{}", r.random_range(0..SHARED_WORDS)))
        .collect();
    for _ in 0..signal {
        words.push(class_words[r.random_range(0..class_words.len())].clone());
    }
    words.shuffle(r);
    words.join(" ")
}

fn class_pool(tag: &str, c: usize) -> Vec<String> {
    (0..CLASS_WORDS).map(|j| format!("{tag}{c}v{j}")).collect()
}

fn gaussian(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(r)).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Generate a seeded dataset.
///
/// Classes sit at `(sep/√2)·e_c` so every pair of centroids is `sep` apart,
/// with unit Gaussian noise per coordinate. Ranking documents get
/// `sep·level/(levels−1)` along the unit direction of each query they are
/// relevant to.
pub fn generate_synth(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    match spec.mode {
        SynthMode::Filter | SynthMode::Classify => generate_classes(spec),
        SynthMode::Rank {
            levels,
            relevant_per_query,
            corpus_size,
        } => generate_rank(spec, levels, relevant_per_query, corpus_size),
    }
}

fn row_schema() -> Schema {
    Schema::new(vec![
        ("id".into(), ColumnType::Int),
        ("text".into(), ColumnType::Text),
        ("attr_a".into(), ColumnType::Int),
        ("attr_b".into(), ColumnType::Int),
        ("attr_c".into(), ColumnType::Int),
        ("score".into(), ColumnType::Int),
    ])
}

fn generate_classes(spec: &SynthSpec) -> Result<SynthData> {
    let k = spec.n_classes;
    let sizes = class_sizes(spec.n_rows, k, spec.imbalance_ratio);
    let mut labels: Vec<u32> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n))
        .collect();
    labels.shuffle(&mut rng::rng(spec.seed, &[0x6c61626c]));
    let pools: Vec<Vec<String>> = (0..k).map(|c| class_pool("c", c)).collect();
    let scale = spec.cluster_separation / std::f64::consts::SQRT_2;
    let generated: Vec<(Vec<Value>, Vec<f64>)> = labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let id = i as RowId;
            let mut r = rng::rng(spec.seed, &[id, 0x726f77]);
            let mut v = gaussian(&mut r, spec.dim);
            let axis = match (spec.swap_directions, label) {
                (true, 0) => 1,
                (true, 1) => 0,
                (_, l) => l as usize,
            };
            v[axis] += scale;
            let text = text_for(&mut r, &pools[label as usize], 3, 9);
            let values = vec![
                Value::Int(id as i64),
                Value::Text(text),
                Value::Int(r.random_range(0..2)),
                Value::Int(r.random_range(0..2)),
                Value::Int(r.random_range(0..2)),
                Value::Int(r.random_range(0..100)),
            ];
            (values, v)
        })
        .collect();
    let mut store = EmbeddingStore::new(spec.dim)?;
    let mut rows = Vec::with_capacity(spec.n_rows);
    for (i, (values, v)) in generated.into_iter().enumerate() {
        store.insert(i as RowId, &to_f32(&v))?;
        rows.push((i as RowId, values));
    }
    let table = Table::from_rows("synth", row_schema(), rows)?;
    let gold = Gold::from_labels(labels.iter().enumerate().map(|(i, &l)| (i as RowId, l)));
    Ok(SynthData {
        spec: *spec,
        table,
        store,
        gold,
        queries: None,
    })
}

fn unit_direction(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let g = gaussian(r, dim);
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return g.iter().map(|x| x / n).collect();
        }
    }
}

fn generate_rank(spec: &SynthSpec, levels: u32, gamma: f64, corpus: usize) -> Result<SynthData> {
    let n_queries = spec.n_rows;
    let mut qr = rng::rng(spec.seed, &[0x71756572]);
    let directions: Vec<Vec<f64>> = (0..n_queries).map(|_| unit_direction(&mut qr, spec.dim)).collect();
    let mut gold = Gold::default();
    // doc -> [(query, level)]
    let mut planted: BTreeMap<RowId, Vec<(usize, u32)>> = BTreeMap::new();
    let all: Vec<RowId> = (0..corpus as RowId).collect();
    for (q, _) in directions.iter().enumerate() {
        let frac = gamma - gamma.floor();
        let count = gamma.floor() as usize + usize::from(qr.random_range(0.0..1.0) < frac);
        let count = count.min(corpus);
        let docs: Vec<RowId> = all.choose_multiple(&mut qr, count).copied().collect();
        let m = gold.relevance.entry(q as u64).or_default();
        for d in docs {
            let level = qr.random_range(1..levels);
            m.insert(d, level);
            planted.entry(d).or_default().push((q, level));
        }
    }
    let query_pools: Vec<Vec<String>> = (0..n_queries).map(|q| class_pool("q", q)).collect();
    let docs: Vec<(Vec<Value>, Vec<f64>)> = (0..corpus)
        .into_par_iter()
        .map(|i| {
            let id = i as RowId;
            let mut r = rng::rng(spec.seed, &[id, 0x646f63]);
            let mut v = gaussian(&mut r, spec.dim);
            let mut text = text_for(&mut r, &["doc".to_string()], 0, 12);
            for &(q, level) in planted.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
                let s = spec.cluster_separation * f64::from(level) / f64::from(levels - 1);
                for (x, u) in v.iter_mut().zip(&directions[q]) {
                    *x += s * u;
                }
                text.push(' ');
                text.push_str(&text_for(&mut r, &query_pools[q], level as usize * 2, 0));
            }
            let values = vec![
                Value::Int(id as i64),
                Value::Text(text),
                Value::Int(r.random_range(0..2)),
                Value::Int(r.random_range(0..2)),
                Value::Int(r.random_range(0..2)),
                Value::Int(r.random_range(0..100)),
            ];
            (values, v)
        })
        .collect();
    let mut store = EmbeddingStore::new(spec.dim)?;
    let mut rows = Vec::with_capacity(corpus);
    for (i, (values, v)) in docs.into_iter().enumerate() {
        store.insert(i as RowId, &to_f32(&v))?;
        rows.push((i as RowId, values));
    }
    let table = Table::from_rows("corpus", row_schema(), rows)?;

    let qschema = Schema::new(vec![("id".into(), ColumnType::Int), ("text".into(), ColumnType::Text)]);
    let mut qstore = EmbeddingStore::new(spec.dim)?;
    let mut qrows = Vec::with_capacity(n_queries);
    for (q, dir) in directions.iter().enumerate() {
        qstore.insert(q as RowId, &to_f32(dir))?;
        let text = format!("find documents about {}", query_pools[q][..3].join(" "));
        qrows.push((q as RowId, vec![Value::Int(q as i64), Value::Text(text)]));
    }
    let qtable = Table::from_rows("queries", qschema, qrows)?;
    Ok(SynthData {
        spec: *spec,
        table,
        store,
        gold,
        queries: Some(QuerySet {
            table: qtable,
            store: qstore,
        }),
    })
}
