//! End-to-end pipelines: embed, sample, label, train, gate, then predict
//! with the proxy or fall back to the LLM, with every call on the ledger.

mod filter;
mod offline;
mod rank;

use std::borrow::Cow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingStore, RowId, Table};
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::ledger::{CostLedger, Meter, UnitCosts, Work};
use crate::metrics::{accuracy, macro_f1, macro_precision, macro_recall, relative_accuracy, task_f1, ConfusionCounts};
use crate::oracle::{Gold, Label, LabelOracle, TaskKind};
use crate::proxy::{FitParams, ImbalanceTechnique, TechniqueKind, DEFAULT_MINORITY_FLOOR};
use crate::query::LogicalPlan;
use crate::sampler::{SamplePlan, DEFAULT_PREFILTER_K};
use crate::selector::{GateConfig, GateMetric, SelectionDecision};

pub use filter::{run_classify, run_filter, run_query};
pub use offline::{run_offline, train_offline, OfflineModel};
pub use rank::{run_rank, run_rank_incremental, run_rank_llm, IncrementalQuery, IncrementalReport, QueryInput, RoundRecord};

pub const TOOL_VERSION: &str = concat!("proxyq ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub sample: SamplePlan,
    /// When set, AI.CLASSIFY samples this many rows per declared category.
    pub classify_sample_per_class: Option<usize>,
    pub prefilter_k: usize,
    pub rank_train_n: usize,
    pub rank_round_size: usize,
    pub rank_cutoff: Option<usize>,
    pub rank_levels: u32,
    pub tau: f64,
    pub gate_metric: Option<GateMetric>,
    pub threshold: f64,
    pub minority_floor: usize,
    pub min_minority_support: usize,
    pub technique: Option<ImbalanceTechnique>,
    pub fit: FitParams,
    pub costs: UnitCosts,
    /// Label every evaluated row with the oracle outside the ledger to score the LLM baseline.
    pub evaluate_baseline: bool,
    /// Rows labeled by the oracle to re-check an offline model (0 disables).
    pub offline_recheck: usize,
    pub drift_alarm: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            workers: 1,
            sample: SamplePlan::default(),
            classify_sample_per_class: None,
            prefilter_k: DEFAULT_PREFILTER_K,
            rank_train_n: 200,
            rank_round_size: 20,
            rank_cutoff: None,
            rank_levels: crate::oracle::DEFAULT_LEVELS,
            tau: 0.1,
            gate_metric: None,
            threshold: 0.5,
            minority_floor: DEFAULT_MINORITY_FLOOR,
            min_minority_support: 2,
            technique: None,
            fit: FitParams::default(),
            costs: UnitCosts::default(),
            evaluate_baseline: false,
            offline_recheck: 0,
            drift_alarm: 0.1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau = {} must be in [0, 1]", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("decision threshold must be in [0, 1]"));
        }
        if self.prefilter_k == 0 || self.rank_train_n == 0 || self.rank_round_size == 0 {
            return Err(Error::invalid("prefilter k, rank train n and round size must be positive"));
        }
        if self.rank_cutoff == Some(0) {
            return Err(Error::invalid("rank cutoff must be positive"));
        }
        self.sample.validate()?;
        self.costs.validate()
    }

    pub(crate) fn gate(&self, metric: GateMetric) -> GateConfig {
        GateConfig {
            t: self.tau,
            metric,
            threshold: self.threshold,
            minority_floor: self.minority_floor,
            min_minority_support: self.min_minority_support,
            technique: self.technique,
            fit: self.fit,
        }
    }

    /// Run `f` on a dedicated pool of `workers` threads.
    pub(crate) fn install<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        self.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
        pool.install(f)
    }
}

pub type OracleFactory<'a> = dyn Fn(TaskKind) -> Result<Box<dyn LabelOracle>> + Sync + 'a;

/// External services and side inputs of a run.
pub struct Providers<'a> {
    pub oracle: &'a OracleFactory<'a>,
    pub embedder: Option<&'a Embedder>,
    pub embeddings: Option<&'a EmbeddingStore>,
    /// Ground truth for quality figures; never seen by the pipeline itself.
    pub gold: Option<&'a Gold>,
    /// Pre-labeled rows that replace the training sample as evaluation set.
    pub holdout: Option<&'a Gold>,
}

impl<'a> Providers<'a> {
    pub fn new(oracle: &'a OracleFactory<'a>) -> Self {
        Providers {
            oracle,
            embedder: None,
            embeddings: None,
            gold: None,
            holdout: None,
        }
    }

    pub fn with_embeddings(mut self, store: &'a EmbeddingStore) -> Self {
        self.embeddings = Some(store);
        self
    }

    pub fn with_embedder(mut self, embedder: &'a Embedder) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn with_gold(mut self, gold: &'a Gold) -> Self {
        self.gold = Some(gold);
        self
    }

    pub fn with_holdout(mut self, holdout: &'a Gold) -> Self {
        self.holdout = Some(holdout);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub technique: TechniqueKind,
    pub training_rows: usize,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl Scores {
    pub fn of(counts: &ConfusionCounts) -> Result<Scores> {
        Ok(Scores {
            accuracy: accuracy(counts)?,
            f1: task_f1(counts)?,
            macro_precision: macro_precision(counts)?,
            macro_recall: macro_recall(counts)?,
            macro_f1: macro_f1(counts)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub rows: usize,
    pub proxy_path: Scores,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm: Option<Scores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_accuracy: Option<f64>,
}

/// Everything decided for one semantic operator (or one ranking query).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    pub op_index: usize,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_id: Option<u64>,
    pub rows_in: usize,
    pub sample_size: usize,
    pub sample_counts: BTreeMap<u32, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
    pub decision: SelectionDecision,
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality: Option<Quality>,
    /// Oracle labels of every evaluated row, kept when the baseline is evaluated.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub baseline_labels: BTreeMap<RowId, u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc: RowId,
    pub score: f64,
    pub source: crate::oracle::LabelSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: u64,
    pub cutoff: usize,
    pub entries: Vec<RankedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outputs {
    Labels(BTreeMap<RowId, Label>),
    Rankings(Vec<RankedList>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankQuality {
    pub queries: usize,
    pub mean_ndcg10: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_ndcg10_llm: Option<f64>,
    pub per_query: BTreeMap<u64, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub tool: String,
    pub mode: String,
    pub config: RunConfig,
    pub plan: LogicalPlan,
    pub operators: Vec<OperatorReport>,
    pub ledger: CostLedger,
    pub outputs: Outputs,
    /// Rows passing every operator (filters) in row order, cut by LIMIT.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<Vec<RowId>>,
    /// Category names for AI.CLASSIFY outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_quality: Option<RankQuality>,
    pub flags: Vec<String>,
}

impl ExecutionReport {
    /// The gate decision of the first operator.
    pub fn decision(&self) -> Option<&SelectionDecision> {
        self.operators.first().map(|o| &o.decision)
    }

    pub fn labels(&self) -> Option<&BTreeMap<RowId, Label>> {
        match &self.outputs {
            Outputs::Labels(m) => Some(m),
            Outputs::Rankings(_) => None,
        }
    }

    pub fn rankings(&self) -> Option<&[RankedList]> {
        match &self.outputs {
            Outputs::Rankings(r) => Some(r),
            Outputs::Labels(_) => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Embeddings for `ids`: the pre-computed store when it covers them all,
/// otherwise a new store that embeds the missing texts.
pub(crate) fn resolve_embeddings<'s>(
    table: &Table,
    column: &str,
    ids: &[RowId],
    providers: &Providers<'s>,
    meter: &Meter,
) -> Result<(Cow<'s, EmbeddingStore>, Work)> {
    let reads = Work::new(ids.len() as f64, 0.0);
    let missing: Vec<RowId> = match providers.embeddings {
        Some(store) => ids.iter().copied().filter(|&id| store.get(id).is_none()).collect(),
        None => ids.to_vec(),
    };
    if missing.is_empty() {
        if let Some(store) = providers.embeddings {
            return Ok((Cow::Borrowed(store), reads));
        }
    }
    let embedder = providers.embedder.ok_or_else(|| {
        Error::invalid(format!(
            "{} rows have no pre-computed embedding and no embedding provider is configured",
            missing.len()
        ))
    })?;
    let dim = providers.embeddings.map_or(embedder.dim(), EmbeddingStore::dim);
    if dim != embedder.dim() {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: embedder.dim(),
        });
    }
    let texts = table.texts(column, &missing)?;
    let vecs = embedder.embed_batch(&texts, meter)?;
    let mut store = EmbeddingStore::new(dim)?;
    let computed: BTreeMap<RowId, Vec<f32>> = missing.into_iter().zip(vecs.into_iter().map(|v| v.into_inner())).collect();
    for &id in ids {
        match computed.get(&id) {
            Some(v) => store.insert(id, v)?,
            None => store.insert(id, providers.embeddings.and_then(|s| s.get(id)).expect("covered row"))?,
        }
    }
    Ok((Cow::Owned(store), reads))
}

pub(crate) fn score_labels(
    num_classes: usize,
    predicted: impl IntoIterator<Item = (RowId, u32)>,
    truth: impl Fn(RowId) -> Option<u32>,
) -> Result<Option<(usize, Scores)>> {
    let pairs: Vec<(u32, u32)> = predicted
        .into_iter()
        .filter_map(|(id, p)| truth(id).map(|t| (p, t)))
        .collect();
    if pairs.is_empty() {
        return Ok(None);
    }
    let n = pairs.len();
    let counts = ConfusionCounts::from_pairs(num_classes, pairs)?;
    Ok(Some((n, Scores::of(&counts)?)))
}

pub(crate) fn quality_of(proxy: (usize, Scores), llm: Option<Scores>) -> Quality {
    let relative = llm.and_then(|l| relative_accuracy(proxy.1.f1, l.f1).ok());
    Quality {
        rows: proxy.0,
        proxy_path: proxy.1,
        llm,
        relative_accuracy: relative,
    }
}

pub(crate) fn finish_ledger(
    baseline_rows: u64,
    config: &RunConfig,
    meter: &Meter,
    work: crate::ledger::StageWork,
) -> Result<CostLedger> {
    CostLedger::new(baseline_rows, config.workers, meter.counts(), work).finalize(&config.costs)
}
