//! Desk-scale experiments on synthetic data. Each returns typed results and
//! can be rendered as one JSON document plus CSV tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{RowId, Slice};
use crate::embedding::DEFAULT_BATCH_SIZE;
use crate::error::{Error, Result};
use crate::executor::{
    run_filter, run_rank, run_rank_incremental, run_rank_llm, train_offline, ExecutionReport, Providers, QueryInput, RunConfig,
};
use crate::ledger::{CostLedger, Meter, StageLatency, UnitCosts, Work};
use crate::metrics::{macro_f1, macro_precision, macro_recall, slice_report, task_f1, ConfusionCounts, SliceReport};
use crate::oracle::{Gold, LabelContext, LabelOracle, LabelSource, MockOracle, TaskKind};
use crate::proxy::{
    choose_technique, fit_logistic, predict_proba_store, FitParams, ImbalanceTechnique, LabeledSample, ProxyModel, TechniqueKind,
};
use crate::query::{parse_query, LogicalPlan};
use crate::sampler::{imbalance_ratio, random_work, sample_active, sample_random, sample_topk, topk_work, SamplePlan};
use crate::selector::Chosen;
use crate::synth::{class_sizes, generate_synth, SynthData, SynthSpec};

pub const EXPERIMENTS: [&str; 7] = [
    "table4_scaling",
    "figure2_stages",
    "figure4_sampling",
    "figure5_imbalance",
    "figure3_incremental",
    "table10_slices",
    "classify_tables",
];

pub const FILTER_SQL: &str = r#"SELECT * FROM synth WHERE AI.IF("is it positive? ", text)"#;
pub const RANK_SQL: &str = r#"SELECT AI.RANK("relevance to: ", text) FROM corpus LIMIT 10"#;

/// The filter benchmark: 100K rows shaped like a 4.69 imbalance with 2%
/// oracle noise. Separation 6 puts the oracle's F1 near 0.95.
pub const BENCH_ROWS: usize = 100_000;
pub const BENCH_RATIO: f64 = 4.69;
pub const BENCH_SEPARATION: f64 = 6.0;
pub const BENCH_NOISE: f64 = 0.02;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReproOptions {
    /// First seed; repeated experiments use `seed..seed + seeds`.
    pub seed: u64,
    pub seeds: usize,
    pub workers: usize,
}

impl Default for ReproOptions {
    fn default() -> Self {
        ReproOptions {
            seed: 0,
            seeds: 10,
            workers: 8,
        }
    }
}

impl ReproOptions {
    fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds.max(1) as u64).map(|i| self.seed + i).collect()
    }
}

/// Rendered output of one experiment.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub json: String,
    /// (file suffix, CSV text); an empty suffix means `<name>.csv`.
    pub tables: Vec<(String, String)>,
}

impl Artifact {
    fn build<T: Serialize>(name: &str, result: &T, tables: Vec<(&str, String)>) -> Result<Artifact> {
        Ok(Artifact {
            name: name.into(),
            json: serde_json::to_string_pretty(result)?,
            tables: tables.into_iter().map(|(s, t)| (s.to_string(), t)).collect(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = vec![dir.join(format!("{}.json", self.name))];
        fs::write(&written[0], &self.json)?;
        for (suffix, csv) in &self.tables {
            let file = if suffix.is_empty() {
                format!("{}.csv", self.name)
            } else {
                format!("{}_{suffix}.csv", self.name)
            };
            let path = dir.join(file);
            fs::write(&path, csv)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn csv_of<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

pub fn run_experiment(name: &str, opts: &ReproOptions) -> Result<Artifact> {
    match name {
        "table4_scaling" => {
            let r = table4_scaling(opts)?;
            Artifact::build(name, &r, vec![("", csv_of(&r.rows)?)])
        }
        "figure2_stages" => {
            let r = figure2_stages(opts)?;
            Artifact::build(name, &r, vec![("", csv_of(&r.rows)?)])
        }
        "figure4_sampling" => {
            let r = figure4_sampling(opts)?;
            Artifact::build(
                name,
                &r,
                vec![
                    ("sampling", csv_of(&r.sampling)?),
                    ("overheads", csv_of(&r.overheads)?),
                    ("needle", csv_of(&r.needle)?),
                ],
            )
        }
        "figure5_imbalance" => {
            let r = figure5_imbalance(opts)?;
            Artifact::build(name, &r, vec![("", csv_of(&r.rows)?), ("means", csv_of(&r.means)?)])
        }
        "figure3_incremental" => {
            let r = figure3_incremental(opts)?;
            Artifact::build(name, &r, vec![("", csv_of(&r.rows)?)])
        }
        "table10_slices" => {
            let r = table10_slices(opts)?;
            Artifact::build(
                name,
                &r,
                vec![("slices", csv_of(&r.slices.rows)?), ("per_slice", csv_of(&r.per_slice)?)],
            )
        }
        "classify_tables" => {
            let r = classify_tables(opts)?;
            Artifact::build(name, &r, vec![("", csv_of(&r.rows)?), ("means", csv_of(&r.means)?)])
        }
        other => Err(Error::invalid(format!(
            "unknown experiment `{other}`; available: {}",
            EXPERIMENTS.join(", ")
        ))),
    }
}

/// Oracle factory over a mock oracle with uniform noise.
pub fn mock_factory(gold: Gold, noise: f64, seed: u64) -> impl Fn(TaskKind) -> Result<Box<dyn LabelOracle>> + Sync {
    move |task| Ok(Box::new(MockOracle::new(task, gold.clone(), noise, seed)?) as Box<dyn LabelOracle>)
}

fn filter_plan() -> LogicalPlan {
    parse_query(FILTER_SQL).expect("built-in filter query parses")
}

fn rank_plan() -> LogicalPlan {
    parse_query(RANK_SQL).expect("built-in rank query parses")
}

fn bench_config(seed: u64, workers: usize) -> RunConfig {
    RunConfig {
        seed,
        workers,
        evaluate_baseline: true,
        ..RunConfig::default()
    }
}

pub fn bench_data(n: usize, seed: u64) -> Result<SynthData> {
    generate_synth(&SynthSpec::filter(n, BENCH_RATIO, BENCH_SEPARATION, seed).with_noise(BENCH_NOISE))
}

/// One online filter run over the benchmark with pre-computed embeddings.
pub fn filter_benchmark(data: &SynthData, seed: u64, workers: usize) -> Result<ExecutionReport> {
    let factory = mock_factory(data.gold.clone(), data.spec.oracle_noise, data.spec.seed);
    let providers = Providers::new(&factory).with_embeddings(&data.store).with_gold(&data.gold);
    run_filter(&filter_plan(), &data.table, &providers, &bench_config(seed, workers))
}

fn f1_against_gold(model: &ProxyModel, data: &SynthData, ids: &[RowId]) -> Result<f64> {
    let proba = predict_proba_store(model, &data.store, ids)?;
    let pairs = ids.iter().zip(&proba).map(|(id, p)| (model.decide(p, 0.5), data.gold.labels[id]));
    task_f1(&ConfusionCounts::from_pairs(model.classes.len().max(2), pairs)?)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

// ---------------------------------------------------------------------------
// table4_scaling

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    Precomputed,
    OnTheFly,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n: usize,
    pub mode: ScalingMode,
    /// `closed_form` or `measured`.
    pub source: String,
    pub oracle_calls: u64,
    pub embed_texts: u64,
    pub proxy_predictions: u64,
    pub cost_proxy_path: f64,
    pub cost_llm_baseline: f64,
    pub savings_multiplier: f64,
    pub latency_multiplier: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingTable {
    pub sample: usize,
    pub workers: usize,
    pub costs: UnitCosts,
    pub train_work: Work,
    pub predict_work_per_row: Work,
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    pub fn series(&self, mode: ScalingMode, source: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.mode == mode && r.source == source)
            .map(|r| (r.n, r.savings_multiplier))
            .collect()
    }

    pub fn row(&self, n: usize, mode: ScalingMode, source: &str) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.n == n && r.mode == mode && r.source == source)
    }
}

pub const SCALING_SIZES: [usize; 4] = [10_000, 100_000, 1_000_000, 10_000_000];
pub const SCALING_MEASURED: [usize; 2] = [10_000, 100_000];

/// Ledger of a filter run over `n` rows in which the proxy serves every
/// unsampled row.
pub fn scaling_ledger(
    n: usize,
    sample: usize,
    mode: ScalingMode,
    train: Work,
    predict_per_row: Work,
    workers: usize,
    costs: &UnitCosts,
) -> Result<CostLedger> {
    if sample > n {
        return Err(Error::invalid(format!("sample {sample} exceeds {n} rows")));
    }
    let mut ledger = CostLedger::new(n as u64, workers, Default::default(), Default::default());
    ledger.work.embed.add(Work::new(n as f64, 0.0));
    let predictions = match mode {
        ScalingMode::Offline => n,
        _ => {
            ledger.counts.oracle_label_calls = sample as u64;
            ledger.work.sample.add(random_work(n));
            ledger.work.train.add(train);
            n - sample
        }
    };
    if mode == ScalingMode::OnTheFly {
        ledger.counts.embed_texts = n as u64;
        ledger.counts.embed_calls = n.div_ceil(DEFAULT_BATCH_SIZE) as u64;
    }
    ledger.counts.proxy_predictions = predictions as u64;
    let p = predictions as f64;
    ledger.work.predict.add(Work::new(predict_per_row.rows * p, predict_per_row.flops * p));
    ledger.finalize(costs)
}

fn scaling_row(n: usize, mode: ScalingMode, source: &str, l: &CostLedger) -> ScalingRow {
    ScalingRow {
        n,
        mode,
        source: source.into(),
        oracle_calls: l.counts.oracle_calls(),
        embed_texts: l.counts.embed_texts,
        proxy_predictions: l.counts.proxy_predictions,
        cost_proxy_path: l.totals.cost_proxy_path,
        cost_llm_baseline: l.totals.cost_llm_baseline,
        savings_multiplier: l.totals.savings_multiplier,
        latency_multiplier: l.totals.latency_multiplier,
    }
}

/// Savings against N. Pipeline runs at the measured sizes supply the
/// training and per-row prediction work; the closed form extends them.
pub fn table4_scaling(opts: &ReproOptions) -> Result<ScalingTable> {
    let config = bench_config(opts.seed, opts.workers);
    let sample = config.sample.n;
    let costs = config.costs;
    let mut measured = Vec::new();
    for &n in &SCALING_MEASURED {
        let data = bench_data(n, opts.seed)?;
        let report = filter_benchmark(&data, opts.seed, opts.workers)?;
        measured.push((n, report.ledger));
    }
    let (_, last) = measured.last().expect("measured sizes");
    let preds = last.counts.proxy_predictions.max(1) as f64;
    let train_work = last.work.train;
    let per_row = Work::new(last.work.predict.rows / preds, last.work.predict.flops / preds);

    let mut rows = Vec::new();
    for &n in &SCALING_SIZES {
        for mode in [ScalingMode::Precomputed, ScalingMode::OnTheFly, ScalingMode::Offline] {
            let l = scaling_ledger(n, sample, mode, train_work, per_row, opts.workers, &costs)?;
            rows.push(scaling_row(n, mode, "closed_form", &l));
        }
    }
    for (n, l) in &measured {
        rows.push(scaling_row(*n, ScalingMode::Precomputed, "measured", l));
    }
    Ok(ScalingTable {
        sample,
        workers: opts.workers,
        costs,
        train_work,
        predict_work_per_row: per_row,
        rows,
    })
}

// ---------------------------------------------------------------------------
// figure2_stages

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRow {
    pub mode: String,
    pub stage: String,
    pub latency: f64,
    pub share: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageShares {
    pub n: usize,
    pub workers: usize,
    pub chosen: Chosen,
    pub relative_accuracy: Option<f64>,
    pub precomputed: StageLatency,
    pub precomputed_shares: StageLatency,
    pub on_the_fly: StageLatency,
    pub on_the_fly_shares: StageLatency,
    pub rows: Vec<StageRow>,
}

fn stage_rows(mode: &str, lat: &StageLatency) -> Vec<StageRow> {
    let sh = lat.shares();
    [
        ("embed", lat.embed, sh.embed),
        ("sample", lat.sample, sh.sample),
        ("label", lat.label, sh.label),
        ("train", lat.train, sh.train),
        ("predict", lat.predict, sh.predict),
    ]
    .into_iter()
    .map(|(stage, latency, share)| StageRow {
        mode: mode.into(),
        stage: stage.into(),
        latency,
        share,
    })
    .collect()
}

/// Per-stage simulated latency of the 100K benchmark run. The on-the-fly
/// variant adds the embedding calls a run without a pre-computed store
/// would make.
pub fn figure2_stages(opts: &ReproOptions) -> Result<StageShares> {
    let data = bench_data(BENCH_ROWS, opts.seed)?;
    let report = filter_benchmark(&data, opts.seed, opts.workers)?;
    let op = &report.operators[0];
    let pre = report.ledger.clone();
    let mut fly = CostLedger::new(pre.baseline_rows, pre.parallelism, pre.counts, pre.work);
    fly.counts.embed_texts += BENCH_ROWS as u64;
    fly.counts.embed_calls += BENCH_ROWS.div_ceil(DEFAULT_BATCH_SIZE) as u64;
    let fly = fly.finalize(&report.config.costs)?;
    let mut rows = stage_rows("precomputed", &pre.stage_latency);
    rows.extend(stage_rows("on_the_fly", &fly.stage_latency));
    Ok(StageShares {
        n: BENCH_ROWS,
        workers: opts.workers,
        chosen: op.decision.chosen,
        relative_accuracy: op.quality.as_ref().and_then(|q| q.relative_accuracy),
        precomputed: pre.stage_latency,
        precomputed_shares: pre.stage_latency.shares(),
        on_the_fly: fly.stage_latency,
        on_the_fly_shares: fly.stage_latency.shares(),
        rows,
    })
}

// ---------------------------------------------------------------------------
// figure4_sampling

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingRow {
    pub population_ratio: f64,
    pub seed: u64,
    pub al_ratio: f64,
    pub random_ratio: f64,
    pub al_f1: f64,
    pub random_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadRow {
    pub strategy: String,
    pub sample_latency: f64,
    pub relative_to_random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeedleRow {
    pub sample_size: usize,
    /// Queries whose relevant document is among the candidates.
    pub queries: usize,
    pub mean_imbalance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplingStudy {
    pub population_rows: usize,
    pub sample: usize,
    pub batch: usize,
    pub sampling: Vec<SamplingRow>,
    pub overheads: Vec<OverheadRow>,
    pub needle: Vec<NeedleRow>,
    pub needle_slope: f64,
    pub rank_queries: usize,
    pub rank_fallbacks: usize,
}

pub const SAMPLING_RATIOS: [f64; 2] = [11.6, 1.0];
const SAMPLING_ROWS: usize = 20_000;
const SAMPLING_N: usize = 500;
const SAMPLING_BATCH: usize = 50;
const SAMPLING_SEPARATION: f64 = 3.0;

fn ratio_or_inf(labels: &[(RowId, u32)]) -> f64 {
    let mut counts = BTreeMap::new();
    for &(_, l) in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    imbalance_ratio(&counts).unwrap_or(f64::INFINITY)
}

fn balanced_f1(data: &SynthData, labels: &[(RowId, u32)], seed: u64) -> Result<f64> {
    let sample = LabeledSample::from_store(&data.store, labels)?;
    match fit_logistic(&sample, &ImbalanceTechnique::of(TechniqueKind::Balanced), &FitParams::default(), seed) {
        Ok((model, _)) => f1_against_gold(&model, data, data.table.ids()),
        Err(Error::SingleClass) => Ok(0.0),
        Err(e) => Err(e),
    }
}

struct SamplingRun {
    row: SamplingRow,
    work: [Work; 3],
}

fn sampling_run(ratio: f64, seed: u64) -> Result<SamplingRun> {
    let data = generate_synth(&SynthSpec::filter(SAMPLING_ROWS, ratio, SAMPLING_SEPARATION, seed).with_noise(0.02))?;
    let oracle = data.oracle()?;
    let ids = data.table.ids();
    let ctx = LabelContext::prompt("is it positive? ");
    let meter = Meter::new();
    let texts = |ids: &[RowId]| data.table.texts("text", ids);
    let active = sample_active(
        ids,
        &data.store,
        &texts,
        &oracle,
        &ctx,
        SAMPLING_N,
        SAMPLING_BATCH,
        seed,
        &FitParams::default(),
        &meter,
    )?;
    let picked = sample_random(ids, SAMPLING_N, seed)?;
    let random: Vec<(RowId, u32)> = picked
        .iter()
        .map(|&id| Ok((id, oracle.label_one(&ctx, id)?)))
        .collect::<Result<_>>()?;
    Ok(SamplingRun {
        row: SamplingRow {
            population_ratio: ratio,
            seed,
            al_ratio: ratio_or_inf(&active.labels),
            random_ratio: ratio_or_inf(&random),
            al_f1: balanced_f1(&data, &active.labels, seed)?,
            random_f1: balanced_f1(&data, &random, seed)?,
        },
        work: [random_work(ids.len()), topk_work(ids.len(), data.store.dim()), active.work],
    })
}

/// Least-squares slope of y on x.
pub fn slope(points: &[(f64, f64)]) -> f64 {
    let mx = mean(points.iter().map(|p| p.0));
    let my = mean(points.iter().map(|p| p.1));
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub const NEEDLE_QUERIES: usize = 20;
pub const NEEDLE_CORPUS: usize = 5_000;

/// Active learning against random sampling at two population imbalance
/// ratios, sampling overheads, and the γ = 1 needle regime for ranking.
pub fn figure4_sampling(opts: &ReproOptions) -> Result<SamplingStudy> {
    let runs: Vec<SamplingRun> = SAMPLING_RATIOS
        .iter()
        .flat_map(|&r| opts.seed_list().into_iter().map(move |s| (r, s)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(r, s)| sampling_run(r, s))
        .collect::<Result<_>>()?;
    let costs = UnitCosts::default();
    let w = &runs[0].work;
    let base = w[0].vcpu_seconds(&costs);
    let overheads = ["random", "topk", "active"]
        .iter()
        .zip(w)
        .map(|(name, work)| {
            let t = work.vcpu_seconds(&costs);
            OverheadRow {
                strategy: name.to_string(),
                sample_latency: t,
                relative_to_random: t / base,
            }
        })
        .collect();

    let data = generate_synth(&SynthSpec::rank(NEEDLE_QUERIES, NEEDLE_CORPUS, 1.0, 4, opts.seed))?;
    let qs = data.queries.as_ref().expect("rank data has queries");
    let mut needle = Vec::new();
    for s in (100..=1000).step_by(100) {
        let mut ratios = Vec::new();
        for q in 0..NEEDLE_QUERIES as u64 {
            let top = sample_topk(qs.store.get(q).expect("query vector"), &data.store, s)?;
            let pos = top.iter().filter(|(d, _)| data.gold.level_for(q, *d) > 0).count();
            if pos > 0 {
                ratios.push((s - pos) as f64 / pos as f64);
            }
        }
        needle.push(NeedleRow {
            sample_size: s,
            queries: ratios.len(),
            mean_imbalance: mean(ratios),
        });
    }
    let points: Vec<(f64, f64)> = needle.iter().map(|r| (r.sample_size as f64, r.mean_imbalance)).collect();
    let needle_slope = slope(&points);

    let factory = mock_factory(data.gold.clone(), 0.0, opts.seed);
    let providers = Providers::new(&factory).with_embeddings(&data.store).with_gold(&data.gold);
    let inputs = QueryInput::from_table(&qs.table, Some(&qs.store))?;
    let config = RunConfig {
        seed: opts.seed,
        workers: opts.workers,
        ..RunConfig::default()
    };
    let report = run_rank(&rank_plan(), &inputs, &data.table, &providers, &config)?;
    let rank_fallbacks = report.operators.iter().filter(|o| !o.decision.is_proxy()).count();

    Ok(SamplingStudy {
        population_rows: SAMPLING_ROWS,
        sample: SAMPLING_N,
        batch: SAMPLING_BATCH,
        sampling: runs.into_iter().map(|r| r.row).collect(),
        overheads,
        needle,
        needle_slope,
        rank_queries: report.operators.len(),
        rank_fallbacks,
    })
}

// ---------------------------------------------------------------------------
// figure5_imbalance

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImbalanceRow {
    pub ratio: f64,
    pub technique: TechniqueKind,
    pub seed: u64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImbalanceMean {
    pub ratio: f64,
    pub technique: TechniqueKind,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImbalanceStudy {
    pub population_rows: usize,
    pub sample: usize,
    pub separation: f64,
    pub rows: Vec<ImbalanceRow>,
    pub means: Vec<ImbalanceMean>,
}

impl ImbalanceStudy {
    pub fn mean(&self, ratio: f64, technique: TechniqueKind) -> Option<f64> {
        self.means
            .iter()
            .find(|m| m.ratio == ratio && m.technique == technique)
            .map(|m| m.mean_f1)
    }
}

pub const IMBALANCE_RATIOS: [f64; 3] = [2.0, 10.0, 50.0];
pub const TECHNIQUES: [TechniqueKind; 5] = [
    TechniqueKind::Standard,
    TechniqueKind::Balanced,
    TechniqueKind::Downsample,
    TechniqueKind::Bootstrap,
    TechniqueKind::Smote,
];
const IMBALANCE_ROWS: usize = 20_000;
const IMBALANCE_SAMPLE: usize = 1_000;
const IMBALANCE_SEPARATION: f64 = 2.0;

fn imbalance_runs(ratio: f64, seed: u64) -> Result<Vec<ImbalanceRow>> {
    let data = generate_synth(&SynthSpec::filter(IMBALANCE_ROWS, 1.0, IMBALANCE_SEPARATION, seed))?;
    let sizes = class_sizes(IMBALANCE_SAMPLE, 2, ratio);
    let mut labels = Vec::new();
    for (c, &size) in sizes.iter().enumerate() {
        let pool: Vec<RowId> = data
            .table
            .ids()
            .iter()
            .copied()
            .filter(|id| data.gold.labels[id] == c as u32)
            .collect();
        let draw = sample_random(&pool, size, crate::rng::derive(seed, &[c as u64, 0x696d62]))?;
        labels.extend(draw.into_iter().map(|id| (id, c as u32)));
    }
    labels.sort_unstable();
    let sampled: BTreeSet<RowId> = labels.iter().map(|&(id, _)| id).collect();
    let test: Vec<RowId> = data.table.ids().iter().copied().filter(|id| !sampled.contains(id)).collect();
    let sample = LabeledSample::from_store(&data.store, &labels)?;
    TECHNIQUES
        .iter()
        .map(|&kind| {
            let (model, _) = fit_logistic(&sample, &ImbalanceTechnique::of(kind), &FitParams::default(), seed)?;
            Ok(ImbalanceRow {
                ratio,
                technique: kind,
                seed,
                f1: f1_against_gold(&model, &data, &test)?,
            })
        })
        .collect()
}

/// Imbalance techniques on training samples drawn at a simulated ratio from
/// a balanced population, scored on the rest of that population.
pub fn figure5_imbalance(opts: &ReproOptions) -> Result<ImbalanceStudy> {
    let jobs: Vec<(f64, u64)> = IMBALANCE_RATIOS
        .iter()
        .flat_map(|&r| opts.seed_list().into_iter().map(move |s| (r, s)))
        .collect();
    let rows: Vec<ImbalanceRow> = jobs
        .into_par_iter()
        .map(|(r, s)| imbalance_runs(r, s))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut means = Vec::new();
    for &ratio in &IMBALANCE_RATIOS {
        for &technique in &TECHNIQUES {
            let m = mean(rows.iter().filter(|r| r.ratio == ratio && r.technique == technique).map(|r| r.f1));
            means.push(ImbalanceMean {
                ratio,
                technique,
                mean_f1: m,
            });
        }
    }
    Ok(ImbalanceStudy {
        population_rows: IMBALANCE_ROWS,
        sample: IMBALANCE_SAMPLE,
        separation: IMBALANCE_SEPARATION,
        rows,
        means,
    })
}

// ---------------------------------------------------------------------------
// figure3_incremental

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementalRow {
    pub query_id: u64,
    pub round: usize,
    pub labeled: usize,
    pub chosen: Chosen,
    pub agreement: Option<f64>,
    /// Output serializes identically to the pure-LLM ranking.
    pub matches_llm: bool,
    pub proxy_entries: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct IncrementalStudy {
    pub queries: usize,
    pub relevant_per_query: f64,
    pub round_size: usize,
    pub rows: Vec<IncrementalRow>,
    pub flip_rounds: BTreeMap<u64, Option<usize>>,
    pub pre_flip_rounds: usize,
    pub pre_flip_matching: usize,
}

pub const INCREMENTAL_QUERIES: usize = 10;
pub const INCREMENTAL_GAMMA: f64 = 10.0;

/// Per-round gate decisions of the incremental rank stream next to the
/// pure-LLM ranking of the same candidates.
pub fn figure3_incremental(opts: &ReproOptions) -> Result<IncrementalStudy> {
    let data = generate_synth(&SynthSpec::rank(INCREMENTAL_QUERIES, NEEDLE_CORPUS, INCREMENTAL_GAMMA, 4, opts.seed))?;
    let qs = data.queries.as_ref().expect("rank data has queries");
    let factory = mock_factory(data.gold.clone(), 0.0, opts.seed);
    let providers = Providers::new(&factory).with_embeddings(&data.store).with_gold(&data.gold);
    let inputs = QueryInput::from_table(&qs.table, Some(&qs.store))?;
    let config = RunConfig {
        seed: opts.seed,
        workers: opts.workers,
        rank_train_n: 300,
        rank_round_size: 10,
        ..RunConfig::default()
    };
    let plan = rank_plan();
    let stream = run_rank_incremental(&plan, &inputs, &data.table, &providers, &config)?;
    let llm = run_rank_llm(&plan, &inputs, &data.table, &providers, &config)?;
    let llm_lists: BTreeMap<u64, String> = llm
        .rankings()
        .unwrap_or_default()
        .iter()
        .map(|l| Ok((l.query_id, serde_json::to_string(l)?)))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut flip_rounds = BTreeMap::new();
    let (mut pre, mut matching) = (0, 0);
    for q in &stream.queries {
        flip_rounds.insert(q.query_id, q.flip_round);
        for r in &q.rounds {
            let same = llm_lists.get(&q.query_id) == Some(&serde_json::to_string(&r.output)?);
            if q.flip_round.is_none_or(|f| r.round < f) {
                pre += 1;
                matching += usize::from(same);
            }
            rows.push(IncrementalRow {
                query_id: q.query_id,
                round: r.round,
                labeled: r.labeled,
                chosen: r.decision.chosen,
                agreement: r.decision.agreement,
                matches_llm: same,
                proxy_entries: r.output.entries.iter().filter(|e| e.source == LabelSource::Proxy).count(),
            });
        }
    }
    Ok(IncrementalStudy {
        queries: stream.queries.len(),
        relevant_per_query: INCREMENTAL_GAMMA,
        round_size: config.rank_round_size,
        rows,
        flip_rounds,
        pre_flip_rounds: pre,
        pre_flip_matching: matching,
    })
}

// ---------------------------------------------------------------------------
// table10_slices

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerSliceRow {
    pub seed: u64,
    pub slice: String,
    pub eval_rows: usize,
    pub sample_rows: usize,
    pub per_slice_f1: f64,
    pub global_f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceStudy {
    pub noisy_slice: String,
    pub noisy_rate: f64,
    pub chosen: Chosen,
    pub slices: SliceReport,
    pub per_slice: Vec<PerSliceRow>,
    /// Seeds where the global proxy beats per-slice proxies on average.
    pub global_wins: usize,
    pub seeds: usize,
}

const SLICE_ROWS: usize = 20_000;
const SLICE_SEPARATION: f64 = 4.0;
pub const NOISY_SLICE: &str = "a1b1c1";
pub const NOISY_RATE: f64 = 0.3;

fn attribute_slices() -> Result<Vec<Slice>> {
    let mut out = Vec::new();
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                out.push(Slice::new(
                    format!("a{a}b{b}c{c}"),
                    &format!("attr_a = {a} AND attr_b = {b} AND attr_c = {c}"),
                )?);
            }
        }
    }
    Ok(out)
}

fn score_slices() -> Result<Vec<Slice>> {
    (0..4)
        .map(|i| Slice::new(format!("score{i}"), &format!("score >= {} AND score < {}", 2 * i, 2 * i + 2)))
        .collect()
}

fn fit_default(sample: &LabeledSample, seed: u64) -> Result<Option<ProxyModel>> {
    let counts = sample.class_counts();
    if counts.len() < 2 {
        return Ok(None);
    }
    let choice = choose_technique(&counts, crate::proxy::DEFAULT_MINORITY_FLOOR)?;
    Ok(Some(fit_logistic(sample, &choice.technique, &FitParams::default(), seed)?.0))
}

fn predictions(model: Option<&ProxyModel>, fallback: u32, data: &SynthData, ids: &[RowId]) -> Result<Vec<u32>> {
    match model {
        Some(m) => Ok(predict_proba_store(m, &data.store, ids)?
            .iter()
            .map(|p| m.decide(p, 0.5))
            .collect()),
        None => Ok(vec![fallback; ids.len()]),
    }
}

fn per_slice_seed(seed: u64) -> Result<Vec<PerSliceRow>> {
    let data = generate_synth(&SynthSpec::filter(SLICE_ROWS, BENCH_RATIO, SLICE_SEPARATION, seed).with_noise(0.02))?;
    let oracle = data.oracle()?;
    let ctx = LabelContext::prompt("is it positive? ");
    let picked = sample_random(data.table.ids(), 1000, seed)?;
    let labels: BTreeMap<RowId, u32> = picked
        .iter()
        .map(|&id| Ok((id, oracle.label_one(&ctx, id)?)))
        .collect::<Result<_>>()?;
    let all: Vec<(RowId, u32)> = labels.iter().map(|(&k, &v)| (k, v)).collect();
    let global = fit_default(&LabeledSample::from_store(&data.store, &all)?, seed)?;
    let mut rows = Vec::new();
    for slice in score_slices()? {
        let members = crate::dataset::apply_slice(&data.table, &slice)?;
        let in_sample: Vec<(RowId, u32)> = members.iter().filter_map(|id| labels.get(id).map(|&l| (*id, l))).collect();
        let eval: Vec<RowId> = members.iter().copied().filter(|id| !labels.contains_key(id)).collect();
        if in_sample.is_empty() || eval.is_empty() {
            continue;
        }
        let local = fit_default(&LabeledSample::from_store(&data.store, &in_sample)?, seed)?;
        let majority = {
            let ones = in_sample.iter().filter(|&&(_, l)| l == 1).count();
            u32::from(2 * ones > in_sample.len())
        };
        let truth: Vec<u32> = eval.iter().map(|id| data.gold.labels[id]).collect();
        let f1 = |pred: Vec<u32>| -> Result<f64> {
            let c = ConfusionCounts::from_pairs(2, pred.into_iter().zip(truth.iter().copied()))?;
            Ok(task_f1(&c).unwrap_or(0.0))
        };
        rows.push(PerSliceRow {
            seed,
            slice: slice.name.clone(),
            eval_rows: eval.len(),
            sample_rows: in_sample.len(),
            per_slice_f1: f1(predictions(local.as_ref(), majority, &data, &eval)?)?,
            global_f1: f1(predictions(global.as_ref(), 0, &data, &eval)?)?,
        });
    }
    Ok(rows)
}

/// Proxy and oracle F1 per attribute slice against gold, with one slice
/// whose oracle labels are much noisier; then per-slice proxies on tiny
/// skewed slices against the global proxy.
pub fn table10_slices(opts: &ReproOptions) -> Result<SliceStudy> {
    let data = generate_synth(&SynthSpec::filter(SLICE_ROWS, BENCH_RATIO, BENCH_SEPARATION, opts.seed).with_noise(0.02))?;
    let slices = attribute_slices()?;
    let noisy = slices.iter().find(|s| s.name == NOISY_SLICE).expect("noisy slice defined");
    let noisy_ids = crate::dataset::apply_slice(&data.table, noisy)?;
    let gold = data.gold.clone();
    let seed = opts.seed;
    let factory = move |task: TaskKind| -> Result<Box<dyn LabelOracle>> {
        let oracle = MockOracle::new(task, gold.clone(), 0.02, seed)?.with_row_noise(noisy_ids.iter().map(|&id| (id, NOISY_RATE)))?;
        Ok(Box::new(oracle))
    };
    let providers = Providers::new(&factory).with_embeddings(&data.store).with_gold(&data.gold);
    let report = run_filter(&filter_plan(), &data.table, &providers, &bench_config(opts.seed, opts.workers))?;
    let op = &report.operators[0];
    let proxy: BTreeMap<RowId, u32> = report
        .labels()
        .map(|m| {
            m.iter()
                .filter(|(_, l)| l.source == LabelSource::Proxy)
                .map(|(&id, l)| (id, l.value))
                .collect()
        })
        .unwrap_or_default();
    let slice_table = slice_report(&data.table, &slices, 2, &proxy, &op.baseline_labels, Some(&data.gold.labels))?;

    let per_slice: Vec<PerSliceRow> = opts
        .seed_list()
        .into_par_iter()
        .map(per_slice_seed)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let global_wins = opts
        .seed_list()
        .iter()
        .filter(|&&s| {
            let rows: Vec<&PerSliceRow> = per_slice.iter().filter(|r| r.seed == s).collect();
            mean(rows.iter().map(|r| r.global_f1)) > mean(rows.iter().map(|r| r.per_slice_f1))
        })
        .count();
    Ok(SliceStudy {
        noisy_slice: NOISY_SLICE.into(),
        noisy_rate: NOISY_RATE,
        chosen: op.decision.chosen,
        slices: slice_table,
        per_slice,
        global_wins,
        seeds: opts.seeds.max(1),
    })
}

// ---------------------------------------------------------------------------
// classify_tables

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifyRow {
    pub classes: usize,
    pub sample: usize,
    pub seed: u64,
    pub proxy_macro_precision: f64,
    pub proxy_macro_recall: f64,
    pub proxy_macro_f1: f64,
    pub llm_macro_precision: f64,
    pub llm_macro_recall: f64,
    pub llm_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifyMean {
    pub classes: usize,
    pub sample: usize,
    pub proxy_macro_precision: f64,
    pub proxy_macro_recall: f64,
    pub llm_macro_precision: f64,
    pub llm_macro_recall: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifyTables {
    pub population_rows: usize,
    pub separation: f64,
    pub rows: Vec<ClassifyRow>,
    pub means: Vec<ClassifyMean>,
}

impl ClassifyTables {
    pub fn mean(&self, classes: usize, sample: usize) -> Option<&ClassifyMean> {
        self.means.iter().find(|m| m.classes == classes && m.sample == sample)
    }
}

pub const CLASSIFY_RUNS: [(usize, usize); 4] = [(5, 1_000), (14, 1_000), (14, 4_000), (14, 8_000)];
const CLASSIFY_ROWS: usize = 30_000;
const CLASSIFY_SEPARATION: f64 = 5.0;

fn classify_run(k: usize, n: usize, seed: u64, workers: usize) -> Result<ClassifyRow> {
    let data = generate_synth(&SynthSpec::classify(CLASSIFY_ROWS, k, CLASSIFY_SEPARATION, seed).with_noise(0.02))?;
    let factory = mock_factory(data.gold.clone(), 0.02, seed);
    let providers = Providers::new(&factory).with_embeddings(&data.store);
    let cats: Vec<String> = (0..k).map(|c| format!("'class_{c}'")).collect();
    let plan = parse_query(&format!(
        "SELECT id, AI.CLASSIFY(\"topic of: \", text, [{}]) FROM synth",
        cats.join(", ")
    ))?;
    let config = RunConfig {
        seed,
        workers,
        sample: SamplePlan::random(n, seed),
        ..RunConfig::default()
    };
    let trained = train_offline(&plan, &data.table, &providers, &config)?;
    let sampled: BTreeSet<RowId> = trained.model.train_meta.sample_ids.iter().copied().collect();
    let rest: Vec<RowId> = data.table.ids().iter().copied().filter(|id| !sampled.contains(id)).collect();
    let proba = predict_proba_store(&trained.model, &data.store, &rest)?;
    let oracle = data.oracle()?;
    let ctx = LabelContext::prompt("topic of: ");
    let pc = ConfusionCounts::from_pairs(
        k,
        rest.iter().zip(&proba).map(|(id, p)| (trained.model.argmax(p), data.gold.labels[id])),
    )?;
    let llm_pairs: Vec<(u32, u32)> = rest
        .iter()
        .map(|id| Ok((oracle.label_one(&ctx, *id)?, data.gold.labels[id])))
        .collect::<Result<_>>()?;
    let lc = ConfusionCounts::from_pairs(k, llm_pairs)?;
    Ok(ClassifyRow {
        classes: k,
        sample: n,
        seed,
        proxy_macro_precision: macro_precision(&pc)?,
        proxy_macro_recall: macro_recall(&pc)?,
        proxy_macro_f1: macro_f1(&pc)?,
        llm_macro_precision: macro_precision(&lc)?,
        llm_macro_recall: macro_recall(&lc)?,
        llm_macro_f1: macro_f1(&lc)?,
    })
}

/// Multi-class proxies trained offline on random samples, scored with the
/// oracle against gold on every unsampled row.
pub fn classify_tables(opts: &ReproOptions) -> Result<ClassifyTables> {
    let mut rows = Vec::new();
    for &(k, n) in &CLASSIFY_RUNS {
        for seed in opts.seed_list() {
            rows.push(classify_run(k, n, seed, opts.workers)?);
        }
    }
    let means = CLASSIFY_RUNS
        .iter()
        .map(|&(k, n)| {
            let sel: Vec<&ClassifyRow> = rows.iter().filter(|r| r.classes == k && r.sample == n).collect();
            ClassifyMean {
                classes: k,
                sample: n,
                proxy_macro_precision: mean(sel.iter().map(|r| r.proxy_macro_precision)),
                proxy_macro_recall: mean(sel.iter().map(|r| r.proxy_macro_recall)),
                llm_macro_precision: mean(sel.iter().map(|r| r.llm_macro_precision)),
                llm_macro_recall: mean(sel.iter().map(|r| r.llm_macro_recall)),
            }
        })
        .collect();
    Ok(ClassifyTables {
        population_rows: CLASSIFY_ROWS,
        separation: CLASSIFY_SEPARATION,
        rows,
        means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_experiment_lists_names() {
        let err = run_experiment("nonexistent", &ReproOptions::default()).unwrap_err().to_string();
        for name in EXPERIMENTS {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn slope_of_a_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 * i as f64 - 1.0)).collect();
        assert!((slope(&pts) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_ledger_counts() {
        let costs = UnitCosts::default();
        let l = scaling_ledger(10_000, 1_000, ScalingMode::OnTheFly, Work::default(), Work::default(), 1, &costs).unwrap();
        assert_eq!(l.counts.oracle_calls(), 1_000);
        assert_eq!(l.counts.proxy_predictions, 9_000);
        assert_eq!(l.counts.embed_texts, 10_000);
        assert_eq!(l.counts.embed_calls, 500);
        let want = 10_000.0 / (1_000.0 + 10_000.0 / 3.0 + l.work.sample.vcpu_seconds(&costs) * costs.vcpu_rate
            + l.work.embed.vcpu_seconds(&costs) * costs.vcpu_rate);
        assert!((l.totals.savings_multiplier - want).abs() < 1e-9);
        assert!(scaling_ledger(10, 11, ScalingMode::Precomputed, Work::default(), Work::default(), 1, &costs).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = vec![
            StageRow { mode: "m".into(), stage: "s".into(), latency: 1.5, share: 0.25 },
            StageRow { mode: "m".into(), stage: "t".into(), latency: 2.0, share: 0.75 },
        ];
        let text = csv_of(&rows).unwrap();
        assert_eq!(text.lines().next(), Some("mode,stage,latency,share"));
        assert_eq!(text.lines().count(), 3);
    }
}
