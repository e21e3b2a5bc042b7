//! The labeling "LLM": a deterministic mock backed by gold labels plus noise,
//! and a JSON-over-HTTP client.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RowId;
use crate::embedding::{http_client, post_json_with_retry};
use crate::error::{Error, Result};
use crate::ledger::{Meter, OracleUse};
use crate::rng;
use crate::spec_string::KvSpec;

pub const DEFAULT_LEVELS: u32 = 4;
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Binary,
    Multiclass { k: u32 },
    Relevance { levels: u32 },
}

impl TaskKind {
    pub fn num_classes(&self) -> u32 {
        match *self {
            TaskKind::Binary => 2,
            TaskKind::Multiclass { k } => k,
            TaskKind::Relevance { levels } => levels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskKind::Multiclass { k } if k < 2 => Err(Error::invalid(
                "classification requires ≥ 2 categories",
            )),
            TaskKind::Relevance { levels } if levels < 2 => {
                Err(Error::invalid("relevance rubric requires ≥ 2 levels"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Oracle,
    Proxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub value: u32,
    pub source: LabelSource,
}

impl Label {
    pub fn oracle(value: u32) -> Label {
        Label {
            value,
            source: LabelSource::Oracle,
        }
    }

    pub fn proxy(value: u32) -> Label {
        Label {
            value,
            source: LabelSource::Proxy,
        }
    }
}

/// What the oracle is being asked, beyond the rows themselves.
#[derive(Debug, Clone, Copy)]
pub struct LabelContext<'a> {
    pub prompt: &'a str,
    /// Set for relevance tasks: the query the documents are judged against.
    pub query_id: Option<u64>,
}

impl<'a> LabelContext<'a> {
    pub fn prompt(prompt: &'a str) -> Self {
        LabelContext {
            prompt,
            query_id: None,
        }
    }

    pub fn query(prompt: &'a str, query_id: u64) -> Self {
        LabelContext {
            prompt,
            query_id: Some(query_id),
        }
    }
}

/// A labeling model. `None` marks a row the oracle failed to label.
pub trait LabelOracle: Send + Sync {
    fn task(&self) -> TaskKind;
    fn label_chunk(&self, ctx: &LabelContext<'_>, rows: &[(RowId, String)]) -> Result<Vec<Option<u32>>>;
}

/// Hidden ground truth for the mock oracle and for quality evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Gold {
    /// Row labels shared by every prompt.
    pub labels: BTreeMap<RowId, u32>,
    /// Row labels specific to one prompt (multi-operator queries).
    pub by_prompt: BTreeMap<String, BTreeMap<RowId, u32>>,
    /// Relevance levels keyed by query id, then document id.
    pub relevance: BTreeMap<u64, BTreeMap<RowId, u32>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GoldRecord {
    Relevance {
        qid: u64,
        id: RowId,
        level: u32,
    },
    Label {
        id: RowId,
        label: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt: Option<String>,
    },
}

impl Gold {
    pub fn from_labels(labels: impl IntoIterator<Item = (RowId, u32)>) -> Gold {
        Gold {
            labels: labels.into_iter().collect(),
            ..Gold::default()
        }
    }

    pub fn label_for(&self, prompt: &str, id: RowId) -> Option<u32> {
        self.by_prompt
            .get(prompt)
            .and_then(|m| m.get(&id))
            .or_else(|| self.labels.get(&id))
            .copied()
    }

    pub fn level_for(&self, qid: u64, id: RowId) -> u32 {
        self.relevance
            .get(&qid)
            .and_then(|m| m.get(&id))
            .copied()
            .unwrap_or(0)
    }

    /// Read JSONL with `{"id","label"[,"prompt"]}` or `{"qid","id","level"}` records.
    pub fn load(path: &Path) -> Result<Gold> {
        let mut gold = Gold::default();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: GoldRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            match rec {
                GoldRecord::Relevance { qid, id, level } => {
                    gold.relevance.entry(qid).or_default().insert(id, level);
                }
                GoldRecord::Label {
                    id,
                    label,
                    prompt: Some(p),
                } => {
                    gold.by_prompt.entry(p).or_default().insert(id, label);
                }
                GoldRecord::Label {
                    id,
                    label,
                    prompt: None,
                } => {
                    gold.labels.insert(id, label);
                }
            }
        }
        Ok(gold)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (&id, &label) in &self.labels {
            serde_json::to_writer(&mut w, &GoldRecord::Label { id, label, prompt: None })?;
            w.write_all(b"\n")?;
        }
        for (p, m) in &self.by_prompt {
            for (&id, &label) in m {
                serde_json::to_writer(
                    &mut w,
                    &GoldRecord::Label {
                        id,
                        label,
                        prompt: Some(p.clone()),
                    },
                )?;
                w.write_all(b"\n")?;
            }
        }
        for (&qid, m) in &self.relevance {
            for (&id, &level) in m {
                serde_json::to_writer(&mut w, &GoldRecord::Relevance { qid, id, level })?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Ground truth plus i.i.d. noise keyed by (seed, row id).
#[derive(Debug, Clone)]
pub struct MockOracle {
    task: TaskKind,
    gold: Gold,
    noise_rate: f64,
    seed: u64,
    row_noise: HashMap<RowId, f64>,
}

impl MockOracle {
    pub fn new(task: TaskKind, gold: Gold, noise_rate: f64, seed: u64) -> Result<MockOracle> {
        task.validate()?;
        check_rate(noise_rate)?;
        Ok(MockOracle {
            task,
            gold,
            noise_rate,
            seed,
            row_noise: HashMap::new(),
        })
    }

    /// Override the noise rate for specific rows.
    pub fn with_row_noise(mut self, overrides: impl IntoIterator<Item = (RowId, f64)>) -> Result<Self> {
        for (id, r) in overrides {
            check_rate(r)?;
            self.row_noise.insert(id, r);
        }
        Ok(self)
    }

    fn rate(&self, id: RowId) -> f64 {
        self.row_noise.get(&id).copied().unwrap_or(self.noise_rate)
    }

    /// Label one row without touching any meter.
    pub fn label_one(&self, ctx: &LabelContext<'_>, id: RowId) -> Result<u32> {
        let rate = self.rate(id);
        match self.task {
            TaskKind::Relevance { levels } => {
                let qid = ctx.query_id.ok_or_else(|| {
                    Error::invalid("relevance labeling needs a query id")
                })?;
                let planted = self.gold.level_for(qid, id).min(levels - 1);
                if rng::unit(self.seed, &[qid, id, 0]) >= rate {
                    return Ok(planted);
                }
                let up = rng::unit(self.seed, &[qid, id, 1]) < 0.5;
                Ok(if up {
                    (planted + 1).min(levels - 1)
                } else {
                    planted.saturating_sub(1)
                })
            }
            task => {
                let k = task.num_classes();
                let planted = self.gold.label_for(ctx.prompt, id).ok_or_else(|| {
                    Error::invalid(format!("mock oracle has no gold label for row {id}"))
                })?;
                if planted >= k {
                    return Err(Error::invalid(format!(
                        "gold label {planted} for row {id} is outside 0..{k}"
                    )));
                }
                if rng::unit(self.seed, &[id, 0]) >= rate {
                    return Ok(planted);
                }
                let shift = 1 + (rng::unit(self.seed, &[id, 1]) * (k - 1) as f64) as u32;
                Ok((planted + shift.min(k - 1)) % k)
            }
        }
    }
}

fn check_rate(r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::invalid(format!("noise rate {r} must be in [0, 1]")))
    }
}

impl LabelOracle for MockOracle {
    fn task(&self) -> TaskKind {
        self.task
    }

    fn label_chunk(&self, ctx: &LabelContext<'_>, rows: &[(RowId, String)]) -> Result<Vec<Option<u32>>> {
        rows.iter()
            .map(|(id, _)| self.label_one(ctx, *id).map(Some))
            .collect()
    }
}

#[derive(Serialize)]
struct RemoteItem<'a> {
    id: RowId,
    text: &'a str,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    query_id: Option<u64>,
    items: Vec<RemoteItem<'a>>,
}

#[derive(Deserialize)]
struct RemoteLabel {
    id: RowId,
    value: serde_json::Value,
}

#[derive(Deserialize)]
struct RemoteResponse {
    labels: Vec<RemoteLabel>,
}

/// Oracle endpoint that must answer with integer labels.
pub struct RemoteOracle {
    task: TaskKind,
    url: String,
    attempts: usize,
    client: reqwest::blocking::Client,
}

impl RemoteOracle {
    pub fn new(task: TaskKind, url: impl Into<String>, attempts: usize) -> Result<RemoteOracle> {
        task.validate()?;
        Ok(RemoteOracle {
            task,
            url: url.into(),
            attempts: attempts.max(1),
            client: http_client()?,
        })
    }
}

impl LabelOracle for RemoteOracle {
    fn task(&self) -> TaskKind {
        self.task
    }

    fn label_chunk(&self, ctx: &LabelContext<'_>, rows: &[(RowId, String)]) -> Result<Vec<Option<u32>>> {
        let req = RemoteRequest {
            prompt: ctx.prompt,
            query_id: ctx.query_id,
            items: rows
                .iter()
                .map(|(id, text)| RemoteItem { id: *id, text })
                .collect(),
        };
        let body = post_json_with_retry(&self.client, &self.url, &req, self.attempts)?;
        let resp: RemoteResponse =
            serde_json::from_str(&body).map_err(|e| Error::Protocol(e.to_string()))?;
        let k = u64::from(self.task.num_classes());
        let mut got: HashMap<RowId, Option<u32>> = HashMap::new();
        for l in resp.labels {
            let v = l.value.as_u64().filter(|&v| v < k).map(|v| v as u32);
            got.insert(l.id, v);
        }
        Ok(rows
            .iter()
            .map(|(id, _)| got.get(id).copied().flatten())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleKind {
    Mock { noise_rate: f64, seed: u64 },
    Remote { url: String, attempts: usize },
}

/// Oracle configuration as given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    #[serde(flatten)]
    pub kind: OracleKind,
    pub levels: u32,
}

impl OracleSpec {
    pub fn mock(noise_rate: f64, seed: u64) -> OracleSpec {
        OracleSpec {
            kind: OracleKind::Mock { noise_rate, seed },
            levels: DEFAULT_LEVELS,
        }
    }

    /// Parse `mock:noise=0.02,seed=42[,levels=4]` or `remote:url=...[,attempts=3]`.
    pub fn parse(text: &str) -> Result<OracleSpec> {
        let s = KvSpec::parse(text)?;
        let kind = match s.kind.as_str() {
            "mock" => {
                s.check_keys(&["noise", "seed", "levels"])?;
                let noise_rate = s.get_or("noise", 0.0)?;
                check_rate(noise_rate)?;
                OracleKind::Mock {
                    noise_rate,
                    seed: s.get_or("seed", 42)?,
                }
            }
            "remote" => {
                s.check_keys(&["url", "attempts", "levels"])?;
                OracleKind::Remote {
                    url: s
                        .options
                        .get("url")
                        .cloned()
                        .ok_or_else(|| Error::invalid("remote oracle needs url="))?,
                    attempts: s.get_or("attempts", 3)?,
                }
            }
            other => return Err(Error::invalid(format!("unknown oracle `{other}`"))),
        };
        let levels = s.get_or("levels", DEFAULT_LEVELS)?;
        if levels < 2 {
            return Err(Error::invalid("relevance rubric requires ≥ 2 levels"));
        }
        Ok(OracleSpec { kind, levels })
    }

    /// Instantiate for a task. The mock needs gold labels.
    pub fn build(&self, task: TaskKind, gold: Option<&Gold>) -> Result<Box<dyn LabelOracle>> {
        match &self.kind {
            OracleKind::Mock { noise_rate, seed } => {
                let gold = gold.ok_or_else(|| {
                    Error::invalid("the mock oracle needs gold labels (--gold)")
                })?;
                Ok(Box::new(MockOracle::new(task, gold.clone(), *noise_rate, *seed)?))
            }
            OracleKind::Remote { url, attempts } => {
                Ok(Box::new(RemoteOracle::new(task, url.clone(), *attempts)?))
            }
        }
    }
}

/// Label `rows` for `ctx`, one oracle call per row.
///
/// Rows the oracle could not label are dropped from the output and counted
/// as warnings. Chunks run in parallel; output keeps input order.
pub fn label_batch(
    oracle: &dyn LabelOracle,
    ctx: &LabelContext<'_>,
    rows: &[(RowId, String)],
    meter: &Meter,
    purpose: OracleUse,
) -> Result<Vec<(RowId, Label)>> {
    if rows.is_empty() {
        return Err(Error::invalid("label_batch needs at least one row"));
    }
    let chunks: Vec<Vec<Option<u32>>> = rows
        .par_chunks(CHUNK)
        .map(|c| oracle.label_chunk(ctx, c))
        .collect::<Result<_>>()?;
    meter.record_oracle(purpose, rows.len() as u64);
    let mut out = Vec::with_capacity(rows.len());
    let mut dropped = 0u64;
    for ((id, _), v) in rows.iter().zip(chunks.into_iter().flatten()) {
        match v {
            Some(v) => out.push((*id, Label::oracle(v))),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("oracle returned no usable label for {dropped} rows; they are excluded");
        meter.warn(dropped);
    }
    Ok(out)
}

/// Relevance level of one document for one query.
pub fn relevance_of(
    oracle: &dyn LabelOracle,
    query: &str,
    query_id: u64,
    doc: (RowId, &str),
    meter: &Meter,
) -> Result<Label> {
    if !matches!(oracle.task(), TaskKind::Relevance { .. }) {
        return Err(Error::invalid("relevance_of needs a relevance task"));
    }
    let rows = [(doc.0, doc.1.to_string())];
    label_batch(oracle, &LabelContext::query(query, query_id), &rows, meter, OracleUse::Sample)?
        .pop()
        .map(|(_, l)| l)
        .ok_or_else(|| Error::Protocol(format!("no relevance label for document {}", doc.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: u64) -> Vec<(RowId, String)> {
        (0..n).map(|i| (i, format!("row {i}"))).collect()
    }

    fn binary_gold(n: u64) -> Gold {
        Gold::from_labels((0..n).map(|i| (i, (i % 3 == 0) as u32)))
    }

    #[test]
    fn noiseless_mock_returns_gold() {
        let o = MockOracle::new(TaskKind::Binary, binary_gold(100), 0.0, 42).unwrap();
        let m = Meter::new();
        let out = label_batch(&o, &LabelContext::prompt("p"), &rows(100), &m, OracleUse::Sample).unwrap();
        for (id, l) in &out {
            assert_eq!(l.value, (id % 3 == 0) as u32);
            assert_eq!(l.source, LabelSource::Oracle);
        }
        assert_eq!(m.counts().oracle_label_calls, 100);
    }

    #[test]
    fn full_noise_complements_binary() {
        let o = MockOracle::new(TaskKind::Binary, binary_gold(50), 1.0, 42).unwrap();
        let m = Meter::new();
        let out = label_batch(&o, &LabelContext::prompt("p"), &rows(50), &m, OracleUse::Fallback).unwrap();
        for (id, l) in &out {
            assert_eq!(l.value, 1 - (id % 3 == 0) as u32);
        }
        assert_eq!(m.counts().oracle_fallback_calls, 50);
    }

    #[test]
    fn flip_fraction_matches_binomial_bound() {
        let n = 10_000u64;
        let o = MockOracle::new(TaskKind::Binary, binary_gold(n), 0.02, 42).unwrap();
        let out = label_batch(&o, &LabelContext::prompt("p"), &rows(n), &Meter::new(), OracleUse::Sample).unwrap();
        let flips = out.iter().filter(|(id, l)| l.value != (id % 3 == 0) as u32).count();
        let frac = flips as f64 / n as f64;
        // 0.02 ± 5 standard deviations of a Binomial(10000, 0.02) fraction.
        let sd = (0.02f64 * 0.98 / n as f64).sqrt();
        assert!((frac - 0.02).abs() <= 5.0 * sd, "flip fraction {frac}");
        assert!((0.01..=0.03).contains(&frac));
    }

    #[test]
    fn repeated_labeling_is_identical() {
        let o = MockOracle::new(TaskKind::Binary, binary_gold(500), 0.3, 9).unwrap();
        let a = label_batch(&o, &LabelContext::prompt("p"), &rows(500), &Meter::new(), OracleUse::Sample).unwrap();
        let b = label_batch(&o, &LabelContext::prompt("p"), &rows(500), &Meter::new(), OracleUse::Sample).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn multiclass_noise_changes_class() {
        let gold = Gold::from_labels((0..300).map(|i| (i, (i % 5) as u32)));
        let o = MockOracle::new(TaskKind::Multiclass { k: 5 }, gold, 1.0, 3).unwrap();
        let out = label_batch(&o, &LabelContext::prompt("p"), &rows(300), &Meter::new(), OracleUse::Sample).unwrap();
        for (id, l) in out {
            assert!(l.value < 5);
            assert_ne!(l.value, (id % 5) as u32);
        }
    }

    #[test]
    fn relevance_levels() {
        let mut gold = Gold::default();
        gold.relevance.entry(1).or_default().insert(7, 3);
        let clean = MockOracle::new(TaskKind::Relevance { levels: 4 }, gold.clone(), 0.0, 1).unwrap();
        let m = Meter::new();
        assert_eq!(relevance_of(&clean, "q", 1, (7, "doc"), &m).unwrap().value, 3);
        assert_eq!(relevance_of(&clean, "q", 1, (8, "doc"), &m).unwrap().value, 0);
        assert_eq!(m.counts().oracle_label_calls, 2);

        let noisy = MockOracle::new(TaskKind::Relevance { levels: 4 }, gold, 1.0, 1).unwrap();
        for d in 0..200 {
            let v = relevance_of(&noisy, "q", 1, (d, "doc"), &Meter::new()).unwrap().value;
            assert!(v <= 3);
            if d == 7 {
                assert!(v == 2 || v == 3);
            } else {
                assert!(v <= 1);
            }
        }
    }

    #[test]
    fn classify_needs_two_categories() {
        let e = MockOracle::new(TaskKind::Multiclass { k: 1 }, Gold::default(), 0.0, 1).unwrap_err();
        assert!(e.to_string().contains("classification requires ≥ 2 categories"));
    }

    #[test]
    fn prompt_specific_gold() {
        let mut gold = binary_gold(10);
        gold.by_prompt.entry("other".into()).or_default().insert(1, 1);
        assert_eq!(gold.label_for("other", 1), Some(1));
        assert_eq!(gold.label_for("p", 1), Some(0));
        assert_eq!(gold.label_for("other", 2), Some(0));
    }

    #[test]
    fn gold_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gold.jsonl");
        let mut gold = binary_gold(5);
        gold.by_prompt.entry("x".into()).or_default().insert(2, 1);
        gold.relevance.entry(4).or_default().insert(9, 2);
        gold.write_jsonl(&path).unwrap();
        assert_eq!(Gold::load(&path).unwrap(), gold);
    }

    #[test]
    fn spec_parsing() {
        let s = OracleSpec::parse("mock:noise=0.02,seed=42").unwrap();
        assert_eq!(s.kind, OracleKind::Mock { noise_rate: 0.02, seed: 42 });
        assert!(OracleSpec::parse("mock:noise=1.5").is_err());
        assert!(OracleSpec::parse("remote:attempts=2").is_err());
        assert!(OracleSpec::parse("mock:levels=1").is_err());
        assert!(s.build(TaskKind::Binary, None).is_err());
    }
}
