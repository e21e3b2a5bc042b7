use std::collections::{BTreeMap, BTreeSet};

use crate::dataset::{EmbeddingStore, RowId, Table};
use crate::error::{Error, Result};
use crate::ledger::{Meter, OracleUse, StageWork};
use crate::oracle::{label_batch, Label, LabelContext, LabelOracle, TaskKind};
use crate::proxy::{predict_proba_store, predict_work, LabeledSample};
use crate::query::{LogicalPlan, OpKind, SemanticOp};
use crate::rng;
use crate::sampler::{random_work, sample_active, sample_random, sample_topk_among, topk_work, Strategy};
use crate::selector::{train_and_select, GateMetric};

use super::{
    finish_ledger, quality_of, resolve_embeddings, score_labels, ExecutionReport, FitSummary, OperatorReport, Outputs,
    Providers, RunConfig,
};

pub(crate) struct OpRun {
    pub report: OperatorReport,
    pub labels: BTreeMap<RowId, Label>,
    pub work: StageWork,
}

fn sample_size(op: &SemanticOp, task: TaskKind, config: &RunConfig) -> usize {
    match (op.kind, config.classify_sample_per_class) {
        (OpKind::Classify, Some(per_class)) => per_class * task.num_classes() as usize,
        _ => config.sample.n,
    }
}

fn text_rows(table: &Table, column: &str, ids: &[RowId]) -> Result<Vec<(RowId, String)>> {
    Ok(ids.iter().copied().zip(table.texts(column, ids)?).collect())
}

/// Holdout rows present in the store, as an evaluation sample.
fn holdout_sample(providers: &Providers<'_>, prompt: &str, store: &EmbeddingStore) -> Result<Option<LabeledSample>> {
    let Some(h) = providers.holdout else {
        return Ok(None);
    };
    let mut ids: BTreeSet<RowId> = h.labels.keys().copied().collect();
    if let Some(m) = h.by_prompt.get(prompt) {
        ids.extend(m.keys().copied());
    }
    let labels: Vec<(RowId, u32)> = ids
        .into_iter()
        .filter(|&id| store.get(id).is_some())
        .filter_map(|id| h.label_for(prompt, id).map(|l| (id, l)))
        .collect();
    if labels.is_empty() {
        return Err(Error::invalid("holdout file shares no rows with the embedded table"));
    }
    LabeledSample::from_store(store, &labels).map(Some)
}

/// One AI.IF or AI.CLASSIFY operator over `ids`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_label_op(
    op_index: usize,
    op: &SemanticOp,
    task: TaskKind,
    ids: &[RowId],
    table: &Table,
    providers: &Providers<'_>,
    config: &RunConfig,
    meter: &Meter,
) -> Result<OpRun> {
    let oracle = (providers.oracle)(task).map_err(|e| e.at("label"))?;
    let oracle: &dyn LabelOracle = oracle.as_ref();
    let ctx = LabelContext::prompt(&op.prompt);
    let mut work = StageWork::default();
    let mut flags = Vec::new();

    let (store, embed_work) = resolve_embeddings(table, &op.column, ids, providers, meter).map_err(|e| e.at("embed"))?;
    work.embed.add(embed_work);

    let n = sample_size(op, task, config).min(ids.len());
    let sample_seed = rng::derive(config.seed, &[config.sample.seed, op_index as u64]);
    let all = n == ids.len();
    let (sample_labels, submitted): (Vec<(RowId, u32)>, BTreeSet<RowId>) = match config.sample.strategy {
        Strategy::Active if !all => {
            let texts = |rows: &[RowId]| table.texts(&op.column, rows);
            let active = sample_active(
                ids,
                &store,
                &texts,
                oracle,
                &ctx,
                n,
                config.sample.batch,
                sample_seed,
                &config.fit,
                meter,
            )
            .map_err(|e| e.at("sample"))?;
            work.sample.add(active.work);
            flags.extend(active.flag);
            let submitted = active.labels.iter().map(|&(id, _)| id).collect();
            (active.labels, submitted)
        }
        strategy => {
            let picked: Vec<RowId> = if all {
                work.sample.add(random_work(n));
                ids.to_vec()
            } else if strategy == Strategy::Topk {
                let embedder = providers
                    .embedder
                    .ok_or_else(|| Error::invalid("top-K sampling embeds the prompt and needs --embed").at("sample"))?;
                let q = embedder
                    .embed_batch(std::slice::from_ref(&op.prompt), meter)
                    .map_err(|e| e.at("sample"))?;
                work.sample.add(topk_work(ids.len(), store.dim()));
                sample_topk_among(q[0].values(), &store, ids, n)
                    .map_err(|e| e.at("sample"))?
                    .into_iter()
                    .map(|(id, _)| id)
                    .collect()
            } else {
                work.sample.add(random_work(ids.len()));
                sample_random(ids, n, sample_seed).map_err(|e| e.at("sample"))?
            };
            let rows = text_rows(table, &op.column, &picked)?;
            let labels = label_batch(oracle, &ctx, &rows, meter, OracleUse::Sample)
                .map_err(|e| e.at("label"))?
                .into_iter()
                .map(|(id, l)| (id, l.value))
                .collect();
            (labels, picked.into_iter().collect())
        }
    };

    let sample = LabeledSample::from_store(&store, &sample_labels).map_err(|e| e.at("train"))?;
    let sample_counts = sample.class_counts();
    if let TaskKind::Multiclass { k } = task {
        let missing: Vec<String> = (0..k)
            .filter(|c| !sample_counts.contains_key(c))
            .map(|c| op.params.categories.as_ref().map_or(c.to_string(), |cats| cats[c as usize].clone()))
            .collect();
        if !missing.is_empty() {
            flags.push(format!("categories absent from the sample: {}", missing.join(", ")));
        }
    }
    let metric = config.gate_metric.unwrap_or(GateMetric::Accuracy);
    if metric == GateMetric::Ndcg10 {
        return Err(Error::invalid(format!("gate metric ndcg10 does not apply to {}", op.kind)));
    }
    let holdout = holdout_sample(providers, &op.prompt, &store)?;
    let fit_seed = rng::derive(config.seed, &[op_index as u64, 0x666974]);
    let (decision, model, fit) =
        train_and_select(&sample, holdout.as_ref(), &config.gate(metric), fit_seed).map_err(|e| e.at("train"))?;
    if let (Some(model), Some(fit)) = (&model, &fit) {
        work.train.add(fit.work(store.dim()));
        work.train.add(predict_work(model, holdout.as_ref().map_or(sample.len(), LabeledSample::len)));
    }

    let mut labels: BTreeMap<RowId, Label> = sample_labels.iter().map(|&(id, v)| (id, Label::oracle(v))).collect();
    let rest: Vec<RowId> = ids.iter().copied().filter(|id| !submitted.contains(id)).collect();
    match &model {
        Some(m) if decision.is_proxy() => {
            if !rest.is_empty() {
                let proba = predict_proba_store(m, &store, &rest).map_err(|e| e.at("predict"))?;
                meter.record_predictions(rest.len() as u64);
                work.predict.add(predict_work(m, rest.len()));
                for (&id, p) in rest.iter().zip(&proba) {
                    labels.insert(id, Label::proxy(m.decide(p, config.threshold)));
                }
            }
        }
        _ => {
            if !rest.is_empty() {
                let rows = text_rows(table, &op.column, &rest)?;
                for (id, l) in label_batch(oracle, &ctx, &rows, meter, OracleUse::Fallback).map_err(|e| e.at("label"))? {
                    labels.insert(id, l);
                }
            }
        }
    }

    let num_classes = task.num_classes() as usize;
    let mut baseline_labels = BTreeMap::new();
    let mut quality = None;
    if let Some(gold) = providers.gold {
        let truth = |id: RowId| gold.label_for(&op.prompt, id);
        let proxy = score_labels(num_classes, labels.iter().map(|(&id, l)| (id, l.value)), truth)?;
        let llm = if config.evaluate_baseline {
            let scratch = Meter::new();
            let need: Vec<RowId> = labels
                .iter()
                .filter(|(_, l)| l.source == crate::oracle::LabelSource::Proxy)
                .map(|(&id, _)| id)
                .collect();
            baseline_labels = labels
                .iter()
                .filter(|(_, l)| l.source == crate::oracle::LabelSource::Oracle)
                .map(|(&id, l)| (id, l.value))
                .collect();
            if !need.is_empty() {
                let rows = text_rows(table, &op.column, &need)?;
                for (id, l) in label_batch(oracle, &ctx, &rows, &scratch, OracleUse::Fallback)? {
                    baseline_labels.insert(id, l.value);
                }
            }
            score_labels(num_classes, baseline_labels.iter().map(|(&id, &v)| (id, v)), truth)?.map(|s| s.1)
        } else {
            None
        };
        quality = proxy.map(|p| quality_of(p, llm));
    }

    let report = OperatorReport {
        op_index,
        prompt: op.prompt.clone(),
        query_id: None,
        rows_in: ids.len(),
        sample_size: sample_labels.len(),
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
        quality,
        baseline_labels,
    };
    Ok(OpRun { report, labels, work })
}

pub(crate) fn check_single_table(plan: &LogicalPlan, table: &Table) -> Result<LogicalPlan> {
    crate::query::bind_plan(plan, table.schema())
}

/// AI.IF operators left to right, each on the rows the previous kept.
pub(crate) fn run_filters(
    plan: &LogicalPlan,
    table: &Table,
    providers: &Providers<'_>,
    config: &RunConfig,
    meter: &Meter,
) -> Result<(Vec<RowId>, Vec<OpRun>, u64)> {
    let mut ids = table.filter(&plan.relational_predicates)?;
    let mut runs = Vec::new();
    let mut baseline = 0u64;
    for (i, op) in plan.semantic_ops.iter().enumerate() {
        if op.kind != OpKind::If {
            continue;
        }
        if ids.is_empty() {
            break;
        }
        baseline += ids.len() as u64;
        let run = run_label_op(i, op, TaskKind::Binary, &ids, table, providers, config, meter)?;
        ids.retain(|id| run.labels.get(id).is_some_and(|l| l.value == 1));
        runs.push(run);
    }
    Ok((ids, runs, baseline))
}

fn assemble(
    mode: &str,
    plan: LogicalPlan,
    config: &RunConfig,
    meter: &Meter,
    runs: Vec<OpRun>,
    baseline: u64,
    selected: Option<Vec<RowId>>,
    categories: Option<Vec<String>>,
) -> Result<ExecutionReport> {
    let mut work = StageWork::default();
    let mut outputs = BTreeMap::new();
    let mut operators = Vec::new();
    for run in runs {
        work.add(&run.work);
        outputs.extend(run.labels);
        operators.push(run.report);
    }
    let flags = operators.iter().flat_map(|o| o.flags.iter().cloned()).collect();
    Ok(ExecutionReport {
        tool: super::TOOL_VERSION.into(),
        mode: mode.into(),
        config: config.clone(),
        plan,
        operators,
        ledger: finish_ledger(baseline, config, meter, work)?,
        outputs: Outputs::Labels(outputs),
        selected,
        categories,
        rank_quality: None,
        flags,
    })
}

/// Semantic filtering: relational predicates, then every AI.IF.
pub fn run_filter(plan: &LogicalPlan, table: &Table, providers: &Providers<'_>, config: &RunConfig) -> Result<ExecutionReport> {
    let plan = check_single_table(plan, table)?;
    if plan.ops_of(OpKind::If).next().is_none() {
        return Err(Error::invalid("query has no AI.IF operator"));
    }
    if plan.semantic_ops.iter().any(|op| op.kind != OpKind::If) {
        return Err(Error::invalid("run_filter handles AI.IF operators only"));
    }
    config.install(|| {
        let meter = Meter::new();
        let (mut kept, runs, baseline) = run_filters(&plan, table, providers, config, &meter)?;
        if let Some(limit) = plan.limit {
            kept.truncate(limit);
        }
        assemble("filter", plan.clone(), config, &meter, runs, baseline, Some(kept), None)
    })
}

/// Multi-class labeling with the declared categories.
pub fn run_classify(plan: &LogicalPlan, table: &Table, providers: &Providers<'_>, config: &RunConfig) -> Result<ExecutionReport> {
    let plan = check_single_table(plan, table)?;
    let ops: Vec<(usize, &SemanticOp)> = plan.semantic_ops.iter().enumerate().collect();
    let [(index, op)] = ops.as_slice() else {
        return Err(Error::invalid("AI.CLASSIFY queries take exactly one semantic operator"));
    };
    if op.kind != OpKind::Classify {
        return Err(Error::invalid("query has no AI.CLASSIFY operator"));
    }
    let categories = op.params.categories.clone().unwrap_or_default();
    let task = TaskKind::Multiclass {
        k: categories.len() as u32,
    };
    task.validate()?;
    config.install(|| {
        let meter = Meter::new();
        let ids = table.filter(&plan.relational_predicates)?;
        if ids.is_empty() {
            return Err(Error::invalid("no rows survive the relational predicates"));
        }
        let run = run_label_op(*index, op, task, &ids, table, providers, config, &meter)?;
        let baseline = ids.len() as u64;
        assemble("classify", plan.clone(), config, &meter, vec![run], baseline, None, Some(categories.clone()))
    })
}

/// Dispatch on the operators present in the plan.
pub fn run_query(plan: &LogicalPlan, table: &Table, providers: &Providers<'_>, config: &RunConfig) -> Result<ExecutionReport> {
    if plan.ops_of(OpKind::Rank).next().is_some() {
        let q = super::QueryInput::from_plan(plan)?;
        return super::run_rank(plan, &[q], table, providers, config);
    }
    if plan.ops_of(OpKind::Classify).next().is_some() {
        return run_classify(plan, table, providers, config);
    }
    run_filter(plan, table, providers, config)
}
