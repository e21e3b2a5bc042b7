use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use proxyq_core::sampler::imbalance_ratio;
use proxyq_core::synth::{generate_synth, SynthSpec};
use proxyq_core::Result;

use crate::{Globals, Status};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Filter,
    Classify,
    Rank,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "filter")]
    pub mode: Mode,
    /// Rows (filter, classify); ignored for rank.
    #[arg(long, default_value_t = 1000)]
    pub rows: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Majority/minority population ratio.
    #[arg(long, default_value_t = 1.0)]
    pub ratio: f64,
    /// Distance between class centroids.
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Label noise rate the bundled mock oracle should use.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 10)]
    pub queries: usize,
    #[arg(long, default_value_t = 5000)]
    pub corpus: usize,
    /// Mean relevant documents per query.
    #[arg(long, default_value_t = 10.0)]
    pub relevant: f64,
    #[arg(long, default_value_t = 4)]
    pub levels: u32,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(g: &Globals, a: &SynthArgs) -> Result<Status> {
    let seed = g.seed.unwrap_or(42);
    let spec = match a.mode {
        Mode::Filter => SynthSpec {
            n_classes: a.classes,
            ..SynthSpec::filter(a.rows, a.ratio, a.separation, seed)
        },
        Mode::Classify => SynthSpec {
            imbalance_ratio: a.ratio,
            ..SynthSpec::classify(a.rows, a.classes, a.separation, seed)
        },
        Mode::Rank => SynthSpec {
            cluster_separation: a.separation,
            ..SynthSpec::rank(a.queries, a.corpus, a.relevant, a.levels, seed)
        },
    }
    .with_dim(a.dim)
    .with_noise(a.noise);
    let data = generate_synth(&spec)?;

    fs::create_dir_all(&a.out)?;
    let mut written = vec![a.out.join("table.jsonl"), a.out.join("embeddings.jsonl"), a.out.join("gold.jsonl")];
    data.table.write_jsonl(&written[0])?;
    data.store.write_jsonl(&written[1])?;
    data.gold.write_jsonl(&written[2])?;
    if let Some(q) = &data.queries {
        let (t, e) = (a.out.join("queries.jsonl"), a.out.join("query_embeddings.jsonl"));
        q.table.write_jsonl(&t)?;
        q.store.write_jsonl(&e)?;
        written.extend([t, e]);
    }
    let spec_path = a.out.join("spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&spec)? + "\n")?;
    written.push(spec_path);
    for p in &written {
        println!("{}", p.display());
    }
    if data.queries.is_none() {
        let counts = data.population_counts();
        eprintln!(
            "{} rows, class counts {:?}, population ratio {:.3}",
            data.table.len(),
            counts,
            imbalance_ratio(&counts)?
        );
    }
    Ok(Status::Ok)
}
