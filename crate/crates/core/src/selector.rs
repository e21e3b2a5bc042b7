//! The proxy-or-LLM quality gate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{accuracy, macro_f1, ndcg_at_k, ConfusionCounts};
use crate::proxy::{fit_logistic, FitParams, FitReport, ImbalanceTechnique, LabeledSample, ProxyModel, SampleRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMetric {
    Accuracy,
    MacroF1,
    Ndcg10,
}

impl std::str::FromStr for GateMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(GateMetric::Accuracy),
            "macro_f1" => Ok(GateMetric::MacroF1),
            "ndcg10" => Ok(GateMetric::Ndcg10),
            other => Err(Error::invalid(format!(
                "unknown gate metric `{other}` (accuracy, macro_f1, ndcg10)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chosen {
    Proxy,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSet {
    TrainSample,
    HoldoutFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDecision {
    pub chosen: Chosen,
    /// Proxy score against oracle labels; absent when no proxy was trained.
    pub agreement: Option<f64>,
    pub threshold_t: f64,
    pub metric: GateMetric,
    pub eval_set: EvalSet,
    pub reason: String,
}

impl SelectionDecision {
    /// An LLM decision taken before any proxy could be evaluated.
    pub fn llm(reason: impl Into<String>, t: f64, metric: GateMetric, eval_set: EvalSet) -> Self {
        SelectionDecision {
            chosen: Chosen::Llm,
            agreement: None,
            threshold_t: t,
            metric,
            eval_set,
            reason: reason.into(),
        }
    }

    pub fn is_proxy(&self) -> bool {
        self.chosen == Chosen::Proxy
    }
}

/// Absorbs binary rounding in `1 − t` so that boundary agreements pass.
const GATE_SLACK: f64 = 1e-12;

/// The gate: quality drop `1 − agreement` of at most `t`, boundary inclusive.
pub fn passes(agreement: f64, t: f64) -> bool {
    agreement + GATE_SLACK >= 1.0 - t
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::invalid(format!("gate threshold t = {t} must be in [0, 1]")))
    }
}

/// Proxy score on oracle-labeled rows, the oracle taken as ground truth.
///
/// Rank evaluation orders the rows by the proxy's expected level (ties by
/// row id) and reports nDCG@10 of the oracle levels in that order.
pub fn evaluate_proxy(model: &ProxyModel, eval_rows: &LabeledSample, metric: GateMetric, threshold: f64) -> Result<f64> {
    if eval_rows.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let proba: Vec<Vec<f64>> = eval_rows
        .rows
        .iter()
        .map(|r| model.proba_one(&r.vector))
        .collect::<Result<_>>()?;
    match metric {
        GateMetric::Accuracy | GateMetric::MacroF1 => {
            let pairs: Vec<(u32, u32)> = eval_rows
                .rows
                .iter()
                .zip(&proba)
                .map(|(r, p)| (model.decide(p, threshold), r.label))
                .collect();
            let k = pairs.iter().map(|&(p, t)| p.max(t)).max().unwrap_or(0) as usize + 1;
            let counts = ConfusionCounts::from_pairs(k.max(2), pairs)?;
            if metric == GateMetric::Accuracy {
                accuracy(&counts)
            } else {
                macro_f1(&counts)
            }
        }
        GateMetric::Ndcg10 => {
            let mut order: Vec<(f64, u64, u32)> = eval_rows
                .rows
                .iter()
                .zip(&proba)
                .map(|(r, p)| (model.expected_value(p), r.id, r.label))
                .collect();
            order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let levels: Vec<u32> = order.iter().map(|o| o.2).collect();
            ndcg_at_k(&levels, 10)
        }
    }
}

/// Evaluate and apply the gate.
pub fn select(
    model: &ProxyModel,
    eval_rows: &LabeledSample,
    t: f64,
    metric: GateMetric,
    eval_set: EvalSet,
    threshold: f64,
) -> Result<SelectionDecision> {
    check_t(t)?;
    let agreement = evaluate_proxy(model, eval_rows, metric, threshold)?;
    let chosen = if passes(agreement, t) { Chosen::Proxy } else { Chosen::Llm };
    let reason = match chosen {
        Chosen::Proxy => format!("agreement {agreement:.4} ≥ 1 − t = {:.4}", 1.0 - t),
        Chosen::Llm => format!("agreement {agreement:.4} < 1 − t = {:.4}", 1.0 - t),
    };
    Ok(SelectionDecision {
        chosen,
        agreement: Some(agreement),
        threshold_t: t,
        metric,
        eval_set,
        reason,
    })
}

/// Reason to skip training: too few rows outside the majority class.
pub fn insufficient_support(counts: &BTreeMap<u32, usize>, min_minority_support: usize) -> Option<String> {
    let present = counts.values().filter(|&&n| n > 0).count();
    if present < 2 {
        return Some("sample contains a single class".into());
    }
    let total: usize = counts.values().sum();
    let majority = counts.values().copied().max().unwrap_or(0);
    if total - majority < min_minority_support {
        return Some(format!(
            "insufficient minority examples: {} outside the majority class (need {min_minority_support})",
            total - majority
        ));
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub t: f64,
    pub metric: GateMetric,
    pub threshold: f64,
    pub minority_floor: usize,
    pub min_minority_support: usize,
    pub technique: Option<ImbalanceTechnique>,
    pub fit: FitParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round: usize,
    pub labeled: usize,
    pub decision: SelectionDecision,
    pub model: Option<ProxyModel>,
    pub fit: Option<FitReport>,
}

/// Retrain and re-gate after each labeling round on all rows so far.
#[derive(Debug, Clone)]
pub struct IncrementalSelector {
    config: GateConfig,
    seed: u64,
    rows: Vec<SampleRow>,
    round: usize,
}

impl IncrementalSelector {
    pub fn new(config: GateConfig, seed: u64) -> Result<Self> {
        check_t(config.t)?;
        Ok(IncrementalSelector {
            config,
            seed,
            rows: Vec::new(),
            round: 0,
        })
    }

    pub fn labeled(&self) -> &[SampleRow] {
        &self.rows
    }

    pub fn push_round(&mut self, batch: Vec<SampleRow>) -> Result<RoundOutcome> {
        self.round += 1;
        self.rows.extend(batch);
        let sample = LabeledSample::new(self.rows.clone())?;
        let (decision, model, fit) = train_and_select(&sample, None, &self.config, self.seed)?;
        Ok(RoundOutcome {
            round: self.round,
            labeled: sample.len(),
            decision,
            model,
            fit,
        })
    }
}

/// Support check, technique choice, fit and gate on one labeled sample,
/// evaluated on the sample itself unless a holdout set is given.
/// Upstream failures become an LLM decision carrying the reason.
pub fn train_and_select(
    sample: &LabeledSample,
    holdout: Option<&LabeledSample>,
    config: &GateConfig,
    seed: u64,
) -> Result<(SelectionDecision, Option<ProxyModel>, Option<FitReport>)> {
    let eval_set = if holdout.is_some() { EvalSet::HoldoutFile } else { EvalSet::TrainSample };
    let counts = sample.class_counts();
    if let Some(reason) = insufficient_support(&counts, config.min_minority_support) {
        return Ok((SelectionDecision::llm(reason, config.t, config.metric, eval_set), None, None));
    }
    let technique = match config.technique {
        Some(t) => t,
        None => {
            let choice = crate::proxy::choose_technique(&counts, config.minority_floor)?;
            if let Some(w) = &choice.warning {
                log::warn!("{w}");
            }
            choice.technique
        }
    };
    let (mut model, fit) = match fit_logistic(sample, &technique, &config.fit, seed) {
        Ok(m) => m,
        Err(e @ (Error::SingleClass | Error::InvalidArgument(_))) => {
            return Ok((
                SelectionDecision::llm(format!("training failed: {e}"), config.t, config.metric, eval_set),
                None,
                None,
            ))
        }
        Err(e) => return Err(e),
    };
    let decision = select(&model, holdout.unwrap_or(sample), config.t, config.metric, eval_set, config.threshold)?;
    model.train_meta.agreement_on_sample = decision.agreement;
    Ok((decision, Some(model), Some(fit)))
}

/// Run the incremental loop over pre-split rounds.
pub fn incremental_select(
    rounds: impl IntoIterator<Item = Vec<SampleRow>>,
    config: GateConfig,
    seed: u64,
) -> Result<Vec<RoundOutcome>> {
    let mut sel = IncrementalSelector::new(config, seed)?;
    rounds.into_iter().map(|r| sel.push_round(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proxy::{ImbalanceTechnique, TrainMeta, MODEL_VERSION};

    fn sign_model() -> ProxyModel {
        ProxyModel {
            version: MODEL_VERSION,
            classes: vec![0, 1],
            dim: 1,
            weights: vec![vec![10.0]],
            bias: vec![0.0],
            technique: ImbalanceTechnique::default(),
            train_meta: TrainMeta::default(),
        }
    }

    fn rows(labels: &[(f64, u32)]) -> LabeledSample {
        LabeledSample::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, &(x, l))| SampleRow::new(i as u64, vec![x], l))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_and_inverted() {
        let m = sign_model();
        let good = rows(&[(1.0, 1), (-1.0, 0), (2.0, 1), (-0.5, 0)]);
        assert_eq!(evaluate_proxy(&m, &good, GateMetric::Accuracy, 0.5).unwrap(), 1.0);
        assert_eq!(evaluate_proxy(&m, &good, GateMetric::MacroF1, 0.5).unwrap(), 1.0);
        let bad = rows(&[(1.0, 0), (-1.0, 1)]);
        assert_eq!(evaluate_proxy(&m, &bad, GateMetric::Accuracy, 0.5).unwrap(), 0.0);
        assert!(evaluate_proxy(&m, &LabeledSample::default(), GateMetric::Accuracy, 0.5).is_err());
    }

    #[test]
    fn gate_examples() {
        assert!(passes(0.95, 0.1));
        assert!(!passes(0.85, 0.1));
        assert!(passes(0.90, 0.1));
        assert!(passes(0.7, 0.3));
        assert!(passes(0.0, 1.0));
        assert!(!passes(0.999, 0.0));
    }

    #[test]
    fn gate_is_monotone_in_t() {
        for a in 0..=100 {
            let agreement = a as f64 / 100.0;
            let mut was_proxy = false;
            for t in 0..=100 {
                let p = passes(agreement, t as f64 / 100.0);
                assert!(!was_proxy || p);
                was_proxy = p;
            }
        }
    }

    #[test]
    fn select_reports_evidence() {
        let m = sign_model();
        let s = rows(&[(1.0, 1), (-1.0, 0), (2.0, 1), (-0.5, 1)]);
        let d = select(&m, &s, 0.1, GateMetric::Accuracy, EvalSet::TrainSample, 0.5).unwrap();
        assert_eq!(d.chosen, Chosen::Llm);
        assert_eq!(d.agreement, Some(0.75));
        let d = select(&m, &s, 0.25, GateMetric::Accuracy, EvalSet::TrainSample, 0.5).unwrap();
        assert_eq!(d.chosen, Chosen::Proxy);
        assert!(select(&m, &s, 1.5, GateMetric::Accuracy, EvalSet::TrainSample, 0.5).is_err());
    }

    #[test]
    fn ndcg_metric_ranks_by_expected_level() {
        let m = sign_model();
        let s = rows(&[(3.0, 1), (-1.0, 0), (2.0, 1), (-2.0, 0)]);
        assert_eq!(evaluate_proxy(&m, &s, GateMetric::Ndcg10, 0.5).unwrap(), 1.0);
        let inverted = rows(&[(3.0, 0), (-1.0, 1)]);
        assert!(evaluate_proxy(&m, &inverted, GateMetric::Ndcg10, 0.5).unwrap() < 1.0);
    }

    #[test]
    fn support_rule() {
        assert!(insufficient_support(&BTreeMap::from([(0, 199), (2, 1)]), 2).is_some());
        assert!(insufficient_support(&BTreeMap::from([(0, 200)]), 2).is_some());
        assert!(insufficient_support(&BTreeMap::from([(0, 198), (1, 1), (3, 1)]), 2).is_none());
    }
}
