use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use proxyq_core::dataset::{load_table, RowId, SliceFamily, TableFormat};
use proxyq_core::executor::{ExecutionReport, Outputs, Scores};
use proxyq_core::metrics::{ndcg_at_k, relative_accuracy, slice_report, ConfusionCounts, SliceReport};
use proxyq_core::oracle::{Gold, LabelSource};
use proxyq_core::{Error, Result};
use serde::Serialize;

use crate::pipeline::write_text;
use crate::{Globals, Status};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    /// Slice definitions: `{"partition": bool, "slices": [{"name", "where"}]}`.
    #[arg(long)]
    pub slices: Option<PathBuf>,
    /// The table the report was computed on (needed for slices).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Directory for eval.json and CSV tables (stdout JSON when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ScoreRow {
    source: &'static str,
    rows: usize,
    accuracy: f64,
    f1: f64,
    macro_precision: f64,
    macro_recall: f64,
    macro_f1: f64,
}

impl ScoreRow {
    fn new(source: &'static str, rows: usize, s: Scores) -> ScoreRow {
        ScoreRow {
            source,
            rows,
            accuracy: s.accuracy,
            f1: s.f1,
            macro_precision: s.macro_precision,
            macro_recall: s.macro_recall,
            macro_f1: s.macro_f1,
        }
    }
}

#[derive(Debug, Serialize)]
struct QueryRow {
    query_id: u64,
    cutoff: usize,
    ndcg10: f64,
}

#[derive(Debug, Serialize)]
struct Evaluation {
    report: String,
    mode: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    scores: Vec<ScoreRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slices: Option<SliceReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    queries: Vec<QueryRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_ndcg10: Option<f64>,
}

fn score(k: usize, labels: &BTreeMap<RowId, u32>, gold: &BTreeMap<RowId, u32>) -> Result<Option<(usize, Scores)>> {
    let pairs: Vec<(u32, u32)> = labels.iter().filter_map(|(id, &l)| gold.get(id).map(|&g| (l, g))).collect();
    if pairs.is_empty() {
        return Ok(None);
    }
    let n = pairs.len();
    Ok(Some((n, Scores::of(&ConfusionCounts::from_pairs(k, pairs)?)?)))
}

/// nDCG@10 of a returned list: returned levels first, then zeros up to the
/// cutoff, then every relevant document that was not returned.
fn list_ndcg(returned: &[RowId], relevance: Option<&BTreeMap<RowId, u32>>) -> Result<f64> {
    let level = |id: &RowId| relevance.and_then(|r| r.get(id)).copied().unwrap_or(0);
    let mut levels: Vec<u32> = returned.iter().map(level).collect();
    levels.resize(levels.len().max(10), 0);
    if let Some(r) = relevance {
        levels.extend(r.iter().filter(|(id, _)| !returned.contains(id)).map(|(_, &l)| l));
    }
    ndcg_at_k(&levels, 10)
}

fn evaluate(report: &ExecutionReport, source: &Path, gold: &Gold, a: &EvalArgs) -> Result<Evaluation> {
    let mut ev = Evaluation {
        report: source.display().to_string(),
        mode: report.mode.clone(),
        scores: Vec::new(),
        relative_accuracy: None,
        slices: None,
        queries: Vec::new(),
        mean_ndcg10: None,
    };
    match &report.outputs {
        Outputs::Rankings(lists) => {
            for list in lists {
                let docs: Vec<RowId> = list.entries.iter().map(|e| e.doc).collect();
                ev.queries.push(QueryRow {
                    query_id: list.query_id,
                    cutoff: list.cutoff,
                    ndcg10: list_ndcg(&docs, gold.relevance.get(&list.query_id))?,
                });
            }
            if !ev.queries.is_empty() {
                ev.mean_ndcg10 = Some(ev.queries.iter().map(|q| q.ndcg10).sum::<f64>() / ev.queries.len() as f64);
            }
        }
        Outputs::Labels(labels) => {
            let op = report.operators.first().ok_or_else(|| Error::invalid("report has no operators"))?;
            let k = report.categories.as_ref().map_or(2, Vec::len);
            let truth: BTreeMap<RowId, u32> = labels
                .keys()
                .filter_map(|&id| gold.label_for(&op.prompt, id).map(|l| (id, l)))
                .collect();
            if truth.is_empty() {
                return Err(Error::invalid("gold file shares no rows with the report"));
            }
            let all: BTreeMap<RowId, u32> = labels.iter().map(|(&id, l)| (id, l.value)).collect();
            let proxy = score(k, &all, &truth)?;
            let llm = score(k, &op.baseline_labels, &truth)?;
            if let (Some((_, p)), Some((_, l))) = (&proxy, &llm) {
                ev.relative_accuracy = relative_accuracy(p.f1, l.f1).ok();
            }
            ev.scores.extend(proxy.map(|(n, s)| ScoreRow::new("proxy_path", n, s)));
            ev.scores.extend(llm.map(|(n, s)| ScoreRow::new("llm", n, s)));

            if let Some(path) = &a.slices {
                let table_path = a.table.as_ref().ok_or_else(|| Error::invalid("--slices needs --table"))?;
                if op.baseline_labels.is_empty() {
                    return Err(Error::invalid("slice evaluation needs a report produced with --baseline"));
                }
                let table = load_table(table_path, TableFormat::from_path(table_path))?;
                let family = SliceFamily::load(path)?;
                family.apply(&table)?;
                let proxy_only: BTreeMap<RowId, u32> = labels
                    .iter()
                    .filter(|(_, l)| l.source == LabelSource::Proxy)
                    .map(|(&id, l)| (id, l.value))
                    .collect();
                ev.slices = Some(slice_report(&table, &family.slices, k, &proxy_only, &op.baseline_labels, Some(&truth))?);
            }
        }
    }
    Ok(ev)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(g: &Globals, a: &EvalArgs) -> Result<Status> {
    let source = g.report.as_ref().ok_or_else(|| Error::invalid("eval needs --report <report.json>"))?;
    let report: ExecutionReport = serde_json::from_str(&fs::read_to_string(source)?)?;
    let gold = Gold::load(&a.gold)?;
    let ev = evaluate(&report, source, &gold, a)?;
    let json = serde_json::to_string_pretty(&ev)?;
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut written = vec![dir.join("eval.json")];
            write_text(Some(&written[0]), &json)?;
            if !ev.scores.is_empty() {
                written.push(dir.join("eval.csv"));
                write_csv(&written[1], &ev.scores)?;
            }
            if let Some(s) = &ev.slices {
                let p = dir.join("eval_slices.csv");
                write_csv(&p, &s.rows)?;
                written.push(p);
            }
            if !ev.queries.is_empty() {
                let p = dir.join("eval_queries.csv");
                write_csv(&p, &ev.queries)?;
                written.push(p);
            }
            for p in written {
                println!("{}", p.display());
            }
        }
        None => write_text(None, &json)?,
    }
    Ok(Status::Ok)
}
