use std::fs;
use std::io::Write;
use std::path::Path;

use clap::Args;
use proxyq_core::dataset::{load_embeddings, load_table, EmbeddingStore, Table, TableFormat};
use proxyq_core::embedding::{Embedder, ProviderSpec};
use proxyq_core::executor::{
    run_offline, run_query, run_rank, train_offline, ExecutionReport, Providers, QueryInput, RunConfig,
};
use proxyq_core::oracle::{Gold, LabelOracle, OracleSpec, TaskKind, DEFAULT_LEVELS};
use proxyq_core::proxy::{load_model, save_model};
use proxyq_core::query::{bind_plan, parse_query, LogicalPlan};
use proxyq_core::sampler::{parse_prefilter, SamplePlan};
use proxyq_core::{Error, Result};

use crate::{Globals, Status};

#[derive(Args, Debug)]
pub struct QueryArgs {
    /// SQL text with AI.IF, AI.CLASSIFY or AI.RANK.
    #[arg(long)]
    pub query: String,
    /// Input table (JSONL, or CSV by extension).
    #[arg(long)]
    pub table: std::path::PathBuf,
    /// Pre-computed embeddings JSONL (`{"id", "vector"}` per line).
    #[arg(long)]
    pub embeddings: Option<std::path::PathBuf>,
    /// Embed on the fly, e.g. `mock:dim=64,seed=1` or `remote:url=...,dim=768`.
    #[arg(long)]
    pub embed: Option<String>,
    /// Shorthand for `--embed remote:url=<URL>`.
    #[arg(long = "embed-endpoint")]
    pub embed_endpoint: Option<String>,
    /// Labeling model, e.g. `mock:noise=0.02,seed=7` or `remote:url=...`.
    #[arg(long, default_value = "mock:noise=0")]
    pub oracle: String,
    /// Gold labels JSONL: drives the mock oracle and quality scores.
    #[arg(long)]
    pub gold: Option<std::path::PathBuf>,
    /// Labeled rows used to evaluate the gate instead of the training sample.
    #[arg(long)]
    pub holdout: Option<std::path::PathBuf>,
    /// Sampling plan, e.g. `random:n=1000` or `active:n=1000,batch=50`.
    #[arg(long)]
    pub sample: Option<String>,
    /// Gate threshold t.
    #[arg(long)]
    pub tau: Option<f64>,
    /// accuracy, macro_f1 or ndcg10.
    #[arg(long = "gate-metric")]
    pub gate_metric: Option<String>,
    /// Also label every row with the oracle to score the LLM baseline.
    #[arg(long)]
    pub baseline: bool,
    /// Exit with status 2 when the gate falls back to the LLM.
    #[arg(long = "require-proxy")]
    pub require_proxy: bool,
    /// Print the plan and configuration without executing.
    #[arg(long)]
    pub explain: bool,
}

pub fn load_config(g: &Globals, q: Option<&QueryArgs>) -> Result<RunConfig> {
    let mut config: RunConfig = match &g.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(w) = g.workers {
        config.workers = w;
    }
    if let Some(q) = q {
        if let Some(s) = &q.sample {
            config.sample = SamplePlan::parse(s)?;
        }
        if let Some(t) = q.tau {
            config.tau = t;
        }
        if let Some(m) = &q.gate_metric {
            config.gate_metric = Some(m.parse()?);
        }
        config.evaluate_baseline |= q.baseline;
    }
    config.validate()?;
    Ok(config)
}

fn table_at(path: &Path) -> Result<Table> {
    load_table(path, TableFormat::from_path(path))
}

/// Everything loaded from disk for one query run.
struct Inputs {
    plan: LogicalPlan,
    table: Table,
    store: Option<EmbeddingStore>,
    embedder: Option<Embedder>,
    gold: Option<Gold>,
    holdout: Option<Gold>,
    oracle: OracleSpec,
}

impl Inputs {
    fn load(q: &QueryArgs) -> Result<Inputs> {
        let plan = parse_query(&q.query)?;
        let table = table_at(&q.table)?;
        let embed_spec = match (&q.embed, &q.embed_endpoint) {
            (Some(_), Some(_)) => return Err(Error::invalid("give either --embed or --embed-endpoint, not both")),
            (Some(s), None) => Some(ProviderSpec::parse(s)?),
            (None, Some(url)) => Some(ProviderSpec::parse(&format!("remote:url={url}"))?),
            (None, None) => None,
        };
        if q.embeddings.is_none() && embed_spec.is_none() {
            return Err(Error::invalid("no embeddings: pass --embeddings or --embed"));
        }
        let store = q.embeddings.as_deref().map(|p| load_embeddings(p, None)).transpose()?;
        if let Some(s) = &store {
            let missing = s.unmatched_ids(&table);
            if missing > 0 {
                log::warn!("{missing} embedding ids do not match any table row");
            }
        }
        Ok(Inputs {
            plan,
            table,
            store,
            embedder: embed_spec.map(Embedder::new).transpose()?,
            gold: q.gold.as_deref().map(Gold::load).transpose()?,
            holdout: q.holdout.as_deref().map(Gold::load).transpose()?,
            oracle: OracleSpec::parse(&q.oracle)?,
        })
    }

    fn with_providers<T>(&self, f: impl FnOnce(&Providers<'_>) -> Result<T>) -> Result<T> {
        let gold = self.gold.as_ref();
        let factory = |task: TaskKind| -> Result<Box<dyn LabelOracle>> { self.oracle.build(task, gold) };
        let mut providers = Providers::new(&factory);
        if let Some(s) = &self.store {
            providers = providers.with_embeddings(s);
        }
        if let Some(e) = &self.embedder {
            providers = providers.with_embedder(e);
        }
        if let Some(g) = gold {
            providers = providers.with_gold(g);
        }
        if let Some(h) = &self.holdout {
            providers = providers.with_holdout(h);
        }
        f(&providers)
    }

    fn configure(&self, config: &mut RunConfig) {
        if self.oracle.levels != DEFAULT_LEVELS {
            config.rank_levels = self.oracle.levels;
        }
    }
}

pub fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, format!("{text}\n"))?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn summarize(report: &ExecutionReport) {
    for op in &report.operators {
        let d = &op.decision;
        let scope = op.query_id.map_or(format!("op {}", op.op_index), |q| format!("query {q}"));
        let agreement = d.agreement.map_or("n/a".to_string(), |a| format!("{a:.4}"));
        eprintln!(
            "{scope}: {:?} (agreement {agreement}, t = {}) on {} rows, {} sampled; {}",
            d.chosen, d.threshold_t, op.rows_in, op.sample_size, d.reason
        );
        if let Some(q) = &op.quality {
            eprintln!("  F1 vs gold: proxy path {:.4}", q.proxy_path.f1);
            if let (Some(l), Some(r)) = (&q.llm, q.relative_accuracy) {
                eprintln!("  F1 vs gold: LLM {:.4}, relative accuracy {r:.4}", l.f1);
            }
        }
    }
    if let Some(q) = &report.rank_quality {
        eprintln!("mean nDCG@10 over {} queries: {:.4}", q.queries, q.mean_ndcg10);
    }
    let t = &report.ledger.totals;
    eprintln!(
        "cost {:.2} vs {:.2} for the LLM plan ({:.1}x); latency {:.1}x",
        t.cost_proxy_path, t.cost_llm_baseline, t.savings_multiplier, t.latency_multiplier
    );
    for f in &report.flags {
        eprintln!("flag: {f}");
    }
}

fn finish(g: &Globals, q: &QueryArgs, report: &ExecutionReport) -> Result<Status> {
    write_text(g.report.as_deref(), &report.to_json()?)?;
    summarize(report);
    if q.require_proxy && report.operators.iter().any(|o| !o.decision.is_proxy()) {
        eprintln!("the gate fell back to the LLM and --require-proxy is set");
        return Ok(Status::ProxyRefused);
    }
    Ok(Status::Ok)
}

fn explain_plan(plan: &LogicalPlan, config: &RunConfig) -> Result<Status> {
    let text = serde_json::to_string_pretty(&serde_json::json!({ "plan": plan, "config": config }))?;
    write_text(None, &text)?;
    Ok(Status::Ok)
}

pub fn run(g: &Globals, q: &QueryArgs, model: Option<&Path>, recheck: usize) -> Result<Status> {
    let mut config = load_config(g, Some(q))?;
    config.offline_recheck = recheck;
    if q.explain {
        let plan = bind_plan(&parse_query(&q.query)?, table_at(&q.table)?.schema())?;
        return explain_plan(&plan, &config);
    }
    let inputs = Inputs::load(q)?;
    inputs.configure(&mut config);
    let report = match model {
        Some(path) => {
            let model = load_model(path)?;
            inputs.with_providers(|p| run_offline(&inputs.plan, &inputs.table, &model, p, &config))?
        }
        None => inputs.with_providers(|p| run_query(&inputs.plan, &inputs.table, p, &config))?,
    };
    finish(g, q, &report)
}

pub fn rank(
    g: &Globals,
    q: &QueryArgs,
    queries: Option<&Path>,
    query_embeddings: Option<&Path>,
    prefilter: Option<&str>,
) -> Result<Status> {
    let mut config = load_config(g, Some(q))?;
    if let Some(p) = prefilter {
        config.prefilter_k = parse_prefilter(p)?;
    }
    if q.explain {
        let plan = bind_plan(&parse_query(&q.query)?, table_at(&q.table)?.schema())?;
        return explain_plan(&plan, &config);
    }
    let inputs = Inputs::load(q)?;
    inputs.configure(&mut config);
    let query_inputs = match queries {
        Some(path) => {
            let store = query_embeddings.map(|p| load_embeddings(p, None)).transpose()?;
            QueryInput::from_table(&table_at(path)?, store.as_ref())?
        }
        None => vec![QueryInput::from_plan(&inputs.plan)?],
    };
    let report = inputs.with_providers(|p| run_rank(&inputs.plan, &query_inputs, &inputs.table, p, &config))?;
    finish(g, q, &report)
}

pub fn train(g: &Globals, q: &QueryArgs, model_path: &Path) -> Result<Status> {
    let mut config = load_config(g, Some(q))?;
    if q.explain {
        let plan = bind_plan(&parse_query(&q.query)?, table_at(&q.table)?.schema())?;
        return explain_plan(&plan, &config);
    }
    let inputs = Inputs::load(q)?;
    inputs.configure(&mut config);
    let trained = inputs.with_providers(|p| train_offline(&inputs.plan, &inputs.table, p, &config))?;
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_model(&trained.model, model_path)?;
    eprintln!("model written to {}", model_path.display());
    finish(g, q, &trained.report)
}

pub fn explain(query: &str, table: Option<&Path>) -> Result<Status> {
    let mut plan = parse_query(query)?;
    if let Some(path) = table {
        plan = bind_plan(&plan, table_at(path)?.schema())?;
    }
    write_text(None, &serde_json::to_string_pretty(&plan)?)?;
    Ok(Status::Ok)
}
