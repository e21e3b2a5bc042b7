use std::collections::{BTreeMap, BTreeSet};

use crate::dataset::{RowId, Table};
use crate::error::{Error, Result};
use crate::ledger::{Meter, OracleUse, StageWork};
use crate::oracle::{label_batch, Label, LabelContext, TaskKind};
use crate::proxy::{predict_proba_store, predict_work, LabeledSample, ProxyModel};
use crate::query::{LogicalPlan, OpKind, SemanticOp};
use crate::rng;
use crate::sampler::{random_work, sample_random};
use crate::selector::{select, train_and_select, EvalSet, GateMetric, SelectionDecision};

use super::filter::check_single_table;
use super::{finish_ledger, resolve_embeddings, ExecutionReport, FitSummary, OperatorReport, Outputs, Providers, RunConfig};

#[derive(Debug, Clone)]
pub struct OfflineModel {
    pub model: ProxyModel,
    pub report: ExecutionReport,
}

fn single_op(plan: &LogicalPlan) -> Result<(usize, &SemanticOp, TaskKind)> {
    let [op] = plan.semantic_ops.as_slice() else {
        return Err(Error::invalid("offline models serve queries with exactly one AI.IF or AI.CLASSIFY"));
    };
    let task = match op.kind {
        OpKind::If => TaskKind::Binary,
        OpKind::Classify => TaskKind::Multiclass {
            k: op.params.categories.as_ref().map_or(0, Vec::len) as u32,
        },
        OpKind::Rank => return Err(Error::invalid("offline models do not serve AI.RANK")),
    };
    task.validate()?;
    Ok((0, op, task))
}

fn labeled_rows(table: &Table, column: &str, ids: &[RowId]) -> Result<Vec<(RowId, String)>> {
    Ok(ids.iter().copied().zip(table.texts(column, ids)?).collect())
}

fn report(
    mode: &str,
    plan: LogicalPlan,
    config: &RunConfig,
    meter: &Meter,
    op: OperatorReport,
    labels: BTreeMap<RowId, Label>,
    baseline: u64,
    work: StageWork,
    categories: Option<Vec<String>>,
) -> Result<ExecutionReport> {
    let flags = op.flags.clone();
    let selected = (plan.semantic_ops[0].kind == OpKind::If).then(|| {
        let mut kept: Vec<RowId> = labels.iter().filter(|(_, l)| l.value == 1).map(|(&id, _)| id).collect();
        if let Some(limit) = plan.limit {
            kept.truncate(limit);
        }
        kept
    });
    Ok(ExecutionReport {
        tool: super::TOOL_VERSION.into(),
        mode: mode.into(),
        config: config.clone(),
        plan,
        operators: vec![op],
        ledger: finish_ledger(baseline, config, meter, work)?,
        outputs: Outputs::Labels(labels),
        selected,
        categories,
        rank_quality: None,
        flags,
    })
}

/// Sample, label and fit ahead of time; nothing is predicted.
pub fn train_offline(plan: &LogicalPlan, table: &Table, providers: &Providers<'_>, config: &RunConfig) -> Result<OfflineModel> {
    let plan = check_single_table(plan, table)?;
    let (op_index, op, task) = single_op(&plan)?;
    let op = op.clone();
    config.install(|| {
        let meter = Meter::new();
        let mut work = StageWork::default();
        let ids = table.filter(&plan.relational_predicates)?;
        if ids.is_empty() {
            return Err(Error::invalid("no rows survive the relational predicates"));
        }
        let (store, embed_work) = resolve_embeddings(table, &op.column, &ids, providers, &meter).map_err(|e| e.at("embed"))?;
        work.embed.add(embed_work);
        let n = config.sample.n.min(ids.len());
        let seed = rng::derive(config.seed, &[config.sample.seed, op_index as u64]);
        let picked = if n == ids.len() { ids.clone() } else { sample_random(&ids, n, seed).map_err(|e| e.at("sample"))? };
        work.sample.add(random_work(ids.len()));
        let oracle = (providers.oracle)(task).map_err(|e| e.at("label"))?;
        let ctx = LabelContext::prompt(&op.prompt);
        let labeled: Vec<(RowId, u32)> = label_batch(oracle.as_ref(), &ctx, &labeled_rows(table, &op.column, &picked)?, &meter, OracleUse::Sample)
            .map_err(|e| e.at("label"))?
            .into_iter()
            .map(|(id, l)| (id, l.value))
            .collect();
        let sample = LabeledSample::from_store(&store, &labeled).map_err(|e| e.at("train"))?;
        let metric = config.gate_metric.unwrap_or(GateMetric::Accuracy);
        let fit_seed = rng::derive(config.seed, &[op_index as u64, 0x666974]);
        let (decision, model, fit) = train_and_select(&sample, None, &config.gate(metric), fit_seed).map_err(|e| e.at("train"))?;
        let (Some(model), Some(fit)) = (model, fit) else {
            return Err(Error::invalid(format!("offline training failed: {}", decision.reason)).at("train"));
        };
        work.train.add(fit.work(store.dim()));
        work.train.add(predict_work(&model, sample.len()));
        let labels: BTreeMap<RowId, Label> = labeled.iter().map(|&(id, v)| (id, Label::oracle(v))).collect();
        let op_report = OperatorReport {
            op_index,
            prompt: op.prompt.clone(),
            query_id: None,
            rows_in: ids.len(),
            sample_size: labeled.len(),
            sample_counts: sample.class_counts(),
            fit: Some(FitSummary {
                technique: fit.technique.kind,
                training_rows: fit.training_rows,
                iterations: fit.iterations(),
                converged: fit.converged(),
                warnings: fit.warnings.clone(),
            }),
            decision,
            flags: Vec::new(),
            quality: None,
            baseline_labels: BTreeMap::new(),
        };
        let report = report(
            "train_offline",
            plan.clone(),
            config,
            &meter,
            op_report,
            labels,
            labeled.len() as u64,
            work,
            op.params.categories.clone(),
        )?;
        Ok(OfflineModel { model, report })
    })
}

fn check_compatible(model: &ProxyModel, task: TaskKind, dim: usize) -> Result<()> {
    let k = task.num_classes();
    let fits = match task {
        TaskKind::Binary => model.classes == [0, 1],
        _ => model.classes.len() >= 2 && model.classes.iter().all(|&c| c < k),
    };
    if !fits {
        return Err(Error::invalid(format!(
            "model/task mismatch: model classes {:?}, query expects {k} classes",
            model.classes
        )));
    }
    if model.dim != dim {
        return Err(Error::invalid(format!(
            "model/task mismatch: model dimension {}, embeddings have {dim}",
            model.dim
        )));
    }
    Ok(())
}

/// Apply a pre-trained model: no sampling or training on the query path.
///
/// With a holdout file or `offline_recheck > 0` the gate is re-checked; an
/// agreement drop of at least `drift_alarm` against the training-time
/// agreement flags the model for retraining.
pub fn run_offline(
    plan: &LogicalPlan,
    table: &Table,
    model: &ProxyModel,
    providers: &Providers<'_>,
    config: &RunConfig,
) -> Result<ExecutionReport> {
    let plan = check_single_table(plan, table)?;
    let (op_index, op, task) = single_op(&plan)?;
    let op = op.clone();
    config.install(|| {
        let meter = Meter::new();
        let mut work = StageWork::default();
        let ids = table.filter(&plan.relational_predicates)?;
        if ids.is_empty() {
            return Err(Error::invalid("no rows survive the relational predicates"));
        }
        let (store, embed_work) = resolve_embeddings(table, &op.column, &ids, providers, &meter).map_err(|e| e.at("embed"))?;
        work.embed.add(embed_work);
        check_compatible(model, task, store.dim())?;
        let metric = config.gate_metric.unwrap_or(GateMetric::Accuracy);
        let ctx = LabelContext::prompt(&op.prompt);
        let mut labels: BTreeMap<RowId, Label> = BTreeMap::new();
        let mut flags = Vec::new();
        let mut submitted: BTreeSet<RowId> = BTreeSet::new();
        let oracle = (providers.oracle)(task).map_err(|e| e.at("label"))?;

        let eval: Option<(LabeledSample, EvalSet)> = if let Some(h) = providers.holdout {
            let rows: Vec<(RowId, u32)> = ids
                .iter()
                .filter_map(|&id| h.label_for(&op.prompt, id).map(|l| (id, l)))
                .collect();
            if rows.is_empty() {
                return Err(Error::invalid("holdout file shares no rows with the table"));
            }
            Some((LabeledSample::from_store(&store, &rows)?, EvalSet::HoldoutFile))
        } else if config.offline_recheck > 0 {
            let n = config.offline_recheck.min(ids.len());
            let seed = rng::derive(config.seed, &[config.sample.seed, op_index as u64, 0x72636b]);
            let picked = if n == ids.len() { ids.clone() } else { sample_random(&ids, n, seed)? };
            work.sample.add(random_work(ids.len()));
            submitted.extend(picked.iter().copied());
            let labeled: Vec<(RowId, u32)> =
                label_batch(oracle.as_ref(), &ctx, &labeled_rows(table, &op.column, &picked)?, &meter, OracleUse::Sample)
                    .map_err(|e| e.at("label"))?
                    .into_iter()
                    .map(|(id, l)| (id, l.value))
                    .collect();
            labels.extend(labeled.iter().map(|&(id, v)| (id, Label::oracle(v))));
            Some((LabeledSample::from_store(&store, &labeled)?, EvalSet::TrainSample))
        } else {
            None
        };

        let decision = match &eval {
            Some((sample, eval_set)) => {
                work.predict.add(predict_work(model, sample.len()));
                let d = select(model, sample, config.tau, metric, *eval_set, config.threshold)?;
                if let (Some(before), Some(now)) = (model.train_meta.agreement_on_sample, d.agreement) {
                    if before - now >= config.drift_alarm {
                        flags.push(format!(
                            "retrain: agreement dropped from {before:.4} to {now:.4} (alarm at {})",
                            config.drift_alarm
                        ));
                    }
                }
                d
            }
            None => SelectionDecision {
                chosen: crate::selector::Chosen::Proxy,
                agreement: model.train_meta.agreement_on_sample,
                threshold_t: config.tau,
                metric,
                eval_set: EvalSet::TrainSample,
                reason: "pre-trained model; gate not re-checked".into(),
            },
        };

        let rest: Vec<RowId> = ids.iter().copied().filter(|id| !submitted.contains(id)).collect();
        if !rest.is_empty() {
            if decision.is_proxy() {
                let proba = predict_proba_store(model, &store, &rest).map_err(|e| e.at("predict"))?;
                meter.record_predictions(rest.len() as u64);
                work.predict.add(predict_work(model, rest.len()));
                for (&id, p) in rest.iter().zip(&proba) {
                    labels.insert(id, Label::proxy(model.decide(p, config.threshold)));
                }
            } else {
                let rows = labeled_rows(table, &op.column, &rest)?;
                for (id, l) in label_batch(oracle.as_ref(), &ctx, &rows, &meter, OracleUse::Fallback).map_err(|e| e.at("label"))? {
                    labels.insert(id, l);
                }
            }
        }

        let mut quality = None;
        if let Some(gold) = providers.gold {
            let proxy = super::score_labels(task.num_classes() as usize, labels.iter().map(|(&id, l)| (id, l.value)), |id| {
                gold.label_for(&op.prompt, id)
            })?;
            quality = proxy.map(|p| super::quality_of(p, None));
        }
        let op_report = OperatorReport {
            op_index,
            prompt: op.prompt.clone(),
            query_id: None,
            rows_in: ids.len(),
            sample_size: submitted.len(),
            sample_counts: eval.as_ref().map(|(s, _)| s.class_counts()).unwrap_or_default(),
            fit: None,
            decision,
            flags,
            quality,
            baseline_labels: BTreeMap::new(),
        };
        report(
            "offline",
            plan.clone(),
            config,
            &meter,
            op_report,
            labels,
            ids.len() as u64,
            work,
            op.params.categories.clone(),
        )
    })
}
