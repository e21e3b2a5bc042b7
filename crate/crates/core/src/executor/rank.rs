use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingStore, RowId, Table};
use crate::error::{Error, Result};
use crate::ledger::{CostLedger, Meter, OracleUse, StageWork};
use crate::metrics::ndcg_at_k;
use crate::oracle::{label_batch, LabelContext, LabelOracle, LabelSource, TaskKind};
use crate::proxy::{predict_proba_store, predict_work, LabeledSample, ProxyModel};
use crate::query::{LogicalPlan, OpKind, SemanticOp, DEFAULT_RANK_CUTOFF};
use crate::rng;
use crate::sampler::{random_work, sample_random, sample_topk_among, topk_work};
use crate::selector::{train_and_select, GateMetric, IncrementalSelector, SelectionDecision};

use super::filter::{check_single_table, run_filters, OpRun};
use super::{
    finish_ledger, resolve_embeddings, ExecutionReport, FitSummary, OperatorReport, Outputs, Providers, RankQuality,
    RankedEntry, RankedList, RunConfig,
};

/// One ranking query: its id, the text appended to the operator prompt,
/// and optionally a pre-computed embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryInput {
    pub qid: u64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f32>>,
}

impl QueryInput {
    /// The operator prompt itself as the only query.
    pub fn from_plan(plan: &LogicalPlan) -> Result<QueryInput> {
        plan.ops_of(OpKind::Rank)
            .next()
            .ok_or_else(|| Error::invalid("query has no AI.RANK operator"))?;
        Ok(QueryInput {
            qid: 0,
            text: String::new(),
            vector: None,
        })
    }

    /// Queries from a table with `id` and `text` columns and matching
    /// embeddings when a store is given.
    pub fn from_table(table: &Table, store: Option<&EmbeddingStore>) -> Result<Vec<QueryInput>> {
        let texts = table.texts("text", table.ids())?;
        table
            .ids()
            .iter()
            .zip(texts)
            .map(|(&qid, text)| {
                let vector = match store {
                    Some(s) => Some(
                        s.get(qid)
                            .ok_or_else(|| Error::invalid(format!("no embedding for query {qid}")))?
                            .to_vec(),
                    ),
                    None => None,
                };
                Ok(QueryInput { qid, text, vector })
            })
            .collect()
    }

    fn prompt(&self, op: &SemanticOp) -> String {
        if self.text.is_empty() {
            op.prompt.clone()
        } else {
            format!("{}{}", op.prompt, self.text)
        }
    }
}

struct RankSetup<'p> {
    plan: LogicalPlan,
    op_index: usize,
    op: SemanticOp,
    cutoff: usize,
    filter_runs: Vec<OpRun>,
    filter_baseline: u64,
    pool: Vec<RowId>,
    store: std::borrow::Cow<'p, EmbeddingStore>,
    vectors: Vec<Vec<f32>>,
    oracle: Box<dyn LabelOracle>,
    work: StageWork,
}

fn setup<'p>(
    plan: &LogicalPlan,
    queries: &[QueryInput],
    corpus: &Table,
    providers: &Providers<'p>,
    config: &RunConfig,
    meter: &Meter,
) -> Result<RankSetup<'p>> {
    let plan = check_single_table(plan, corpus)?;
    let ranks: Vec<(usize, &SemanticOp)> = plan
        .semantic_ops
        .iter()
        .enumerate()
        .filter(|(_, op)| op.kind == OpKind::Rank)
        .collect();
    let [(op_index, op)] = ranks.as_slice() else {
        return Err(Error::invalid("ranking queries take exactly one AI.RANK operator"));
    };
    if plan.ops_of(OpKind::Classify).next().is_some() {
        return Err(Error::invalid("AI.RANK cannot be combined with AI.CLASSIFY"));
    }
    if queries.is_empty() {
        return Err(Error::invalid("no ranking queries given"));
    }
    let (op_index, op) = (*op_index, (*op).clone());
    let cutoff = config
        .rank_cutoff
        .or(op.params.top_k)
        .unwrap_or(DEFAULT_RANK_CUTOFF);
    let (pool, filter_runs, filter_baseline) = run_filters(&plan, corpus, providers, config, meter)?;
    if pool.is_empty() {
        return Err(Error::invalid("no documents survive the predicates"));
    }
    let mut work = StageWork::default();
    for r in &filter_runs {
        work.add(&r.work);
    }
    let (store, embed_work) = resolve_embeddings(corpus, &op.column, &pool, providers, meter).map_err(|e| e.at("embed"))?;
    work.embed.add(embed_work);

    let missing: Vec<usize> = (0..queries.len()).filter(|&i| queries[i].vector.is_none()).collect();
    let mut vectors: Vec<Vec<f32>> = queries.iter().map(|q| q.vector.clone().unwrap_or_default()).collect();
    if !missing.is_empty() {
        let embedder = providers
            .embedder
            .ok_or_else(|| Error::invalid("query embeddings need an embedding provider (--embed)").at("embed"))?;
        let texts: Vec<String> = missing.iter().map(|&i| queries[i].prompt(&op)).collect();
        let vecs = embedder.embed_batch(&texts, meter).map_err(|e| e.at("embed"))?;
        for (&i, v) in missing.iter().zip(vecs) {
            vectors[i] = v.into_inner();
        }
    }
    for v in &vectors {
        if v.len() != store.dim() {
            return Err(Error::DimensionMismatch {
                expected: store.dim(),
                found: v.len(),
            });
        }
    }
    let oracle = (providers.oracle)(TaskKind::Relevance {
        levels: config.rank_levels,
    })
    .map_err(|e| e.at("label"))?;
    Ok(RankSetup {
        plan,
        op_index,
        op,
        cutoff,
        filter_runs,
        filter_baseline,
        pool,
        store,
        vectors,
        oracle,
        work,
    })
}

fn candidates(s: &RankSetup<'_>, qi: usize, config: &RunConfig, work: &mut StageWork) -> Result<Vec<RowId>> {
    let k = config.prefilter_k.min(s.pool.len());
    work.sample.add(topk_work(s.pool.len(), s.store.dim()));
    Ok(sample_topk_among(&s.vectors[qi], &s.store, &s.pool, k)
        .map_err(|e| e.at("sample"))?
        .into_iter()
        .map(|(id, _)| id)
        .collect())
}

fn label_docs(
    s: &RankSetup<'_>,
    corpus: &Table,
    ctx: &LabelContext<'_>,
    docs: &[RowId],
    meter: &Meter,
    purpose: OracleUse,
) -> Result<Vec<(RowId, u32)>> {
    if docs.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<(RowId, String)> = docs.iter().copied().zip(corpus.texts(&s.op.column, docs)?).collect();
    Ok(label_batch(s.oracle.as_ref(), ctx, &rows, meter, purpose)
        .map_err(|e| e.at("label"))?
        .into_iter()
        .map(|(id, l)| (id, l.value))
        .collect())
}

fn sort_cut(mut entries: Vec<RankedEntry>, qid: u64, cutoff: usize) -> RankedList {
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc.cmp(&b.doc)));
    entries.truncate(cutoff);
    RankedList {
        query_id: qid,
        cutoff,
        entries,
    }
}

/// Every candidate ranked by its oracle level.
fn llm_ranking(known: &BTreeMap<RowId, u32>, cands: &[RowId], qid: u64, cutoff: usize) -> RankedList {
    let entries = cands
        .iter()
        .filter_map(|id| known.get(id).map(|&l| (id, l)))
        .map(|(&doc, l)| RankedEntry {
            doc,
            score: f64::from(l),
            source: LabelSource::Oracle,
        })
        .collect();
    sort_cut(entries, qid, cutoff)
}

/// Labeled docs keep their level; the rest get the proxy's expected level.
fn proxy_ranking(
    model: &ProxyModel,
    store: &EmbeddingStore,
    known: &BTreeMap<RowId, u32>,
    cands: &[RowId],
    qid: u64,
    cutoff: usize,
) -> Result<(RankedList, usize)> {
    let rest: Vec<RowId> = cands.iter().copied().filter(|id| !known.contains_key(id)).collect();
    let proba = predict_proba_store(model, store, &rest).map_err(|e| e.at("predict"))?;
    let mut entries: Vec<RankedEntry> = cands
        .iter()
        .filter_map(|id| known.get(id).map(|&l| (id, l)))
        .map(|(&doc, l)| RankedEntry {
            doc,
            score: f64::from(l),
            source: LabelSource::Oracle,
        })
        .collect();
    entries.extend(rest.iter().zip(&proba).map(|(&doc, p)| RankedEntry {
        doc,
        score: model.expected_value(p),
        source: LabelSource::Proxy,
    }));
    Ok((sort_cut(entries, qid, cutoff), rest.len()))
}

/// nDCG@10 of a ranking against gold levels; every relevant pool document
/// counts toward the ideal ordering.
fn gold_ndcg(list: &RankedList, gold: &crate::oracle::Gold, pool: &[RowId]) -> Result<f64> {
    let mut levels: Vec<u32> = list.entries.iter().map(|e| gold.level_for(list.query_id, e.doc)).collect();
    if let Some(rel) = gold.relevance.get(&list.query_id) {
        let listed: std::collections::BTreeSet<RowId> = list.entries.iter().map(|e| e.doc).collect();
        let in_pool: std::collections::BTreeSet<RowId> = pool.iter().copied().collect();
        levels.extend(
            rel.iter()
                .filter(|(d, &l)| l > 0 && !listed.contains(d) && in_pool.contains(d))
                .map(|(_, &l)| l),
        );
    }
    ndcg_at_k(&levels, 10)
}

fn rank_quality(per_query: BTreeMap<u64, f64>, llm: Option<BTreeMap<u64, f64>>) -> RankQuality {
    let mean = |m: &BTreeMap<u64, f64>| m.values().sum::<f64>() / m.len().max(1) as f64;
    RankQuality {
        queries: per_query.len(),
        mean_ndcg10: mean(&per_query),
        mean_ndcg10_llm: llm.as_ref().map(mean),
        per_query,
    }
}

fn finish(
    mode: &str,
    s: RankSetup<'_>,
    config: &RunConfig,
    meter: &Meter,
    mut operators: Vec<OperatorReport>,
    rankings: Vec<RankedList>,
    baseline: u64,
    quality: Option<RankQuality>,
) -> Result<ExecutionReport> {
    let mut ops: Vec<OperatorReport> = s.filter_runs.into_iter().map(|r| r.report).collect();
    ops.append(&mut operators);
    let flags = ops.iter().flat_map(|o| o.flags.iter().cloned()).collect();
    Ok(ExecutionReport {
        tool: super::TOOL_VERSION.into(),
        mode: mode.into(),
        config: config.clone(),
        plan: s.plan,
        operators: ops,
        ledger: finish_ledger(baseline + s.filter_baseline, config, meter, s.work)?,
        outputs: Outputs::Rankings(rankings),
        selected: None,
        categories: None,
        rank_quality: quality,
        flags,
    })
}

fn rank_metric(config: &RunConfig) -> GateMetric {
    config.gate_metric.unwrap_or(GateMetric::Ndcg10)
}

/// Per query: top-K prefilter, a random labeled subsample, a multi-class
/// proxy over relevance levels, the nDCG@10 gate, then proxy scores or
/// oracle levels for the remaining candidates.
pub fn run_rank(
    plan: &LogicalPlan,
    queries: &[QueryInput],
    corpus: &Table,
    providers: &Providers<'_>,
    config: &RunConfig,
) -> Result<ExecutionReport> {
    config.install(|| {
        let meter = Meter::new();
        let mut s = setup(plan, queries, corpus, providers, config, &meter)?;
        let gate = config.gate(rank_metric(config));
        let mut operators = Vec::new();
        let mut rankings = Vec::new();
        let mut baseline = 0u64;
        let mut per_query = BTreeMap::new();
        let mut per_query_llm = BTreeMap::new();
        for (qi, q) in queries.iter().enumerate() {
            let mut work = StageWork::default();
            let prompt = q.prompt(&s.op);
            let ctx = LabelContext::query(&prompt, q.qid);
            let cands = candidates(&s, qi, config, &mut work)?;
            baseline += cands.len() as u64;
            let train_n = config.rank_train_n.min(cands.len());
            let seed = rng::derive(config.seed, &[config.sample.seed, q.qid, 0x72616e6b]);
            let picked = if train_n == cands.len() {
                cands.clone()
            } else {
                sample_random(&cands, train_n, seed).map_err(|e| e.at("sample"))?
            };
            work.sample.add(random_work(cands.len()));
            let labeled = label_docs(&s, corpus, &ctx, &picked, &meter, OracleUse::Sample)?;
            let mut known: BTreeMap<RowId, u32> = labeled.iter().copied().collect();
            let sample = LabeledSample::from_store(&s.store, &labeled).map_err(|e| e.at("train"))?;
            let sample_counts = sample.class_counts();
            let (decision, model, fit) = train_and_select(&sample, None, &gate, seed).map_err(|e| e.at("train"))?;
            if let (Some(m), Some(f)) = (&model, &fit) {
                work.train.add(f.work(s.store.dim()));
                work.train.add(predict_work(m, sample.len()));
            }
            let rest: Vec<RowId> = cands.iter().copied().filter(|id| !picked.contains(id)).collect();
            let list = match &model {
                Some(m) if decision.is_proxy() => {
                    let (list, scored) = proxy_ranking(m, &s.store, &known, &cands, q.qid, s.cutoff)?;
                    meter.record_predictions(scored as u64);
                    work.predict.add(predict_work(m, scored));
                    list
                }
                _ => {
                    known.extend(label_docs(&s, corpus, &ctx, &rest, &meter, OracleUse::Fallback)?);
                    llm_ranking(&known, &cands, q.qid, s.cutoff)
                }
            };
            let mut flags = Vec::new();
            if labeled.len() < picked.len() {
                flags.push(format!("{} documents left unlabeled by the oracle", picked.len() - labeled.len()));
            }
            if let Some(gold) = providers.gold {
                per_query.insert(q.qid, gold_ndcg(&list, gold, &s.pool)?);
                if config.evaluate_baseline {
                    let scratch = Meter::new();
                    let missing: Vec<RowId> = cands.iter().copied().filter(|id| !known.contains_key(id)).collect();
                    let mut all = known.clone();
                    all.extend(label_docs(&s, corpus, &ctx, &missing, &scratch, OracleUse::Fallback)?);
                    per_query_llm.insert(q.qid, gold_ndcg(&llm_ranking(&all, &cands, q.qid, s.cutoff), gold, &s.pool)?);
                }
            }
            s.work.add(&work);
            operators.push(OperatorReport {
                op_index: s.op_index,
                prompt,
                query_id: Some(q.qid),
                rows_in: cands.len(),
                sample_size: labeled.len(),
                sample_counts,
                fit: fit.map(|f| FitSummary {
                    technique: f.technique.kind,
                    training_rows: f.training_rows,
                    iterations: f.iterations(),
                    converged: f.converged(),
                    warnings: f.warnings.clone(),
                }),
                decision,
                flags,
                quality: None,
                baseline_labels: BTreeMap::new(),
            });
            rankings.push(list);
        }
        let quality = providers.gold.map(|_| {
            rank_quality(per_query, config.evaluate_baseline.then_some(per_query_llm))
        });
        finish("rank", s, config, &meter, operators, rankings, baseline, quality)
    })
}

/// The pure-LLM plan: every prefiltered candidate labeled by the oracle.
pub fn run_rank_llm(
    plan: &LogicalPlan,
    queries: &[QueryInput],
    corpus: &Table,
    providers: &Providers<'_>,
    config: &RunConfig,
) -> Result<ExecutionReport> {
    config.install(|| {
        let meter = Meter::new();
        let mut s = setup(plan, queries, corpus, providers, config, &meter)?;
        let mut operators = Vec::new();
        let mut rankings = Vec::new();
        let mut baseline = 0u64;
        let mut per_query = BTreeMap::new();
        for (qi, q) in queries.iter().enumerate() {
            let mut work = StageWork::default();
            let prompt = q.prompt(&s.op);
            let ctx = LabelContext::query(&prompt, q.qid);
            let cands = candidates(&s, qi, config, &mut work)?;
            baseline += cands.len() as u64;
            let known: BTreeMap<RowId, u32> = label_docs(&s, corpus, &ctx, &cands, &meter, OracleUse::Fallback)?
                .into_iter()
                .collect();
            let list = llm_ranking(&known, &cands, q.qid, s.cutoff);
            if let Some(gold) = providers.gold {
                per_query.insert(q.qid, gold_ndcg(&list, gold, &s.pool)?);
            }
            s.work.add(&work);
            operators.push(OperatorReport {
                op_index: s.op_index,
                prompt,
                query_id: Some(q.qid),
                rows_in: cands.len(),
                sample_size: 0,
                sample_counts: BTreeMap::new(),
                fit: None,
                decision: SelectionDecision::llm(
                    "pure LLM plan",
                    config.tau,
                    GateMetric::Ndcg10,
                    crate::selector::EvalSet::TrainSample,
                ),
                flags: Vec::new(),
                quality: None,
                baseline_labels: BTreeMap::new(),
            });
            rankings.push(list);
        }
        let quality = providers.gold.map(|_| rank_quality(per_query, None));
        finish("rank_llm", s, config, &meter, operators, rankings, baseline, quality)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub labeled: usize,
    pub decision: SelectionDecision,
    /// The answer had the stream stopped after this round.
    pub output: RankedList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalQuery {
    pub query_id: u64,
    pub rounds: Vec<RoundRecord>,
    /// First round whose decision is the proxy.
    pub flip_round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalReport {
    pub tool: String,
    pub config: RunConfig,
    pub queries: Vec<IncrementalQuery>,
    pub ledger: CostLedger,
}

/// Label the candidates in rounds of `rank_round_size` up to
/// `rank_train_n`, retraining and re-gating after every round.
///
/// While the gate picks the LLM the round's answer is the oracle ranking of
/// every candidate; the needed labels are fetched once and reused by later
/// rounds.
pub fn run_rank_incremental(
    plan: &LogicalPlan,
    queries: &[QueryInput],
    corpus: &Table,
    providers: &Providers<'_>,
    config: &RunConfig,
) -> Result<IncrementalReport> {
    config.install(|| {
        let meter = Meter::new();
        let mut s = setup(plan, queries, corpus, providers, config, &meter)?;
        let gate = config.gate(rank_metric(config));
        let mut out = Vec::new();
        let mut baseline = 0u64;
        for (qi, q) in queries.iter().enumerate() {
            let mut work = StageWork::default();
            let prompt = q.prompt(&s.op);
            let ctx = LabelContext::query(&prompt, q.qid);
            let cands = candidates(&s, qi, config, &mut work)?;
            baseline += cands.len() as u64;
            let seed = rng::derive(config.seed, &[config.sample.seed, q.qid, 0x696e6372]);
            let mut order = cands.clone();
            order.shuffle(&mut rng::rng(seed, &[]));
            order.truncate(config.rank_train_n.min(cands.len()));
            work.sample.add(random_work(cands.len()));
            let mut selector = IncrementalSelector::new(gate, seed)?;
            let mut known: BTreeMap<RowId, u32> = BTreeMap::new();
            let mut fallback_done = false;
            let mut rounds = Vec::new();
            for (r, batch) in order.chunks(config.rank_round_size).enumerate() {
                let fresh: Vec<RowId> = batch.iter().copied().filter(|id| !known.contains_key(id)).collect();
                known.extend(label_docs(&s, corpus, &ctx, &fresh, &meter, OracleUse::Sample)?);
                let rows: Vec<(RowId, u32)> = batch.iter().filter_map(|id| known.get(id).map(|&l| (*id, l))).collect();
                let batch_sample = LabeledSample::from_store(&s.store, &rows).map_err(|e| e.at("train"))?;
                let outcome = selector.push_round(batch_sample.rows).map_err(|e| e.at("train"))?;
                if let (Some(m), Some(f)) = (&outcome.model, &outcome.fit) {
                    work.train.add(f.work(s.store.dim()));
                    work.train.add(predict_work(m, outcome.labeled));
                }
                let output = match &outcome.model {
                    Some(m) if outcome.decision.is_proxy() => {
                        let sampled: BTreeMap<RowId, u32> = selector.labeled().iter().map(|r| (r.id, r.label)).collect();
                        let (list, scored) = proxy_ranking(m, &s.store, &sampled, &cands, q.qid, s.cutoff)?;
                        meter.record_predictions(scored as u64);
                        work.predict.add(predict_work(m, scored));
                        list
                    }
                    _ => {
                        if !fallback_done {
                            let missing: Vec<RowId> = cands.iter().copied().filter(|id| !known.contains_key(id)).collect();
                            known.extend(label_docs(&s, corpus, &ctx, &missing, &meter, OracleUse::Fallback)?);
                            fallback_done = true;
                        }
                        llm_ranking(&known, &cands, q.qid, s.cutoff)
                    }
                };
                rounds.push(RoundRecord {
                    round: r + 1,
                    labeled: outcome.labeled,
                    decision: outcome.decision,
                    output,
                });
            }
            s.work.add(&work);
            let flip_round = rounds.iter().find(|r| r.decision.is_proxy()).map(|r| r.round);
            out.push(IncrementalQuery {
                query_id: q.qid,
                rounds,
                flip_round,
            });
        }
        let ledger = finish_ledger(baseline + s.filter_baseline, config, &meter, s.work)?;
        Ok(IncrementalReport {
            tool: super::TOOL_VERSION.into(),
            config: config.clone(),
            queries: out,
            ledger,
        })
    })
}
