//! Embedding providers: a deterministic hashed bag-of-tokens mock, a remote
//! JSON-over-HTTP adapter, prefix (MRL) truncation and a shared cache.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::RwLock;
use std::time::Duration;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::Meter;
use crate::rng;
use crate::spec_string::KvSpec;

pub const DEFAULT_MAX_DIM: usize = 768;
pub const DEFAULT_BATCH_SIZE: usize = 20;

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalize `values` to unit L2 norm.
    pub fn normalized(values: &[f64]) -> Result<EmbeddingVector> {
        if values.is_empty() {
            return Err(Error::invalid("embedding must have at least one coordinate"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding has non-finite coordinates"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        Ok(EmbeddingVector(
            values.iter().map(|v| (v / norm) as f32).collect(),
        ))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

/// Keep the first `d` coordinates and renormalize.
pub fn truncate_mrl(vec: &EmbeddingVector, d: usize) -> Result<EmbeddingVector> {
    if d == 0 || d > vec.dim() {
        return Err(Error::invalid(format!(
            "truncation dimension {d} must be in 1..={}",
            vec.dim()
        )));
    }
    let prefix: Vec<f64> = vec.0[..d].iter().map(|&v| f64::from(v)).collect();
    EmbeddingVector::normalized(&prefix)
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Weight of the seeded per-token direction relative to the signed hash bucket.
const SEMANTIC_WEIGHT: f64 = 1.0;

/// Deterministic mock embedding.
///
/// Each token contributes a signed one-hot bucket plus a seeded Gaussian
/// direction; texts sharing tokens therefore point the same way. Token order
/// and multiplicity scaling do not change the result after normalization.
pub fn mock_embed(text: &str, dim: usize, seed: u64) -> Result<EmbeddingVector> {
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let mut acc = vec![0.0f64; dim];
    let mut any = false;
    let scale = SEMANTIC_WEIGHT / (dim as f64).sqrt();
    for tok in tokens(text) {
        any = true;
        let h = rng::fnv1a(tok.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        acc[bucket] += sign;
        let mut r = rng::rng(seed, &[h]);
        for a in acc.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut r);
            *a += scale * g;
        }
    }
    if !any {
        return Err(Error::EmptyText);
    }
    EmbeddingVector::normalized(&acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderKind {
    Mock { seed: u64 },
    Remote { url: String },
}

/// Embedding provider configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    #[serde(flatten)]
    pub kind: ProviderKind,
    pub dim: usize,
    pub max_dim: usize,
    pub batch_size: usize,
    pub max_attempts: usize,
}

impl ProviderSpec {
    pub fn mock(dim: usize, seed: u64) -> ProviderSpec {
        ProviderSpec {
            kind: ProviderKind::Mock { seed },
            dim,
            max_dim: DEFAULT_MAX_DIM.max(dim),
            batch_size: DEFAULT_BATCH_SIZE,
            max_attempts: 3,
        }
    }

    /// Parse `mock:dim=768,seed=42` or `remote:url=...,dim=768`.
    pub fn parse(text: &str) -> Result<ProviderSpec> {
        let s = KvSpec::parse(text)?;
        let kind = match s.kind.as_str() {
            "mock" => {
                s.check_keys(&["dim", "seed", "batch", "max_dim"])?;
                ProviderKind::Mock {
                    seed: s.get_or("seed", 42)?,
                }
            }
            "remote" => {
                s.check_keys(&["url", "dim", "batch", "max_dim", "attempts"])?;
                ProviderKind::Remote {
                    url: s
                        .options
                        .get("url")
                        .cloned()
                        .ok_or_else(|| Error::invalid("remote provider needs url="))?,
                }
            }
            other => return Err(Error::invalid(format!("unknown embedding provider `{other}`"))),
        };
        let spec = ProviderSpec {
            kind,
            dim: s.get_or("dim", DEFAULT_MAX_DIM)?,
            max_dim: s.get_or("max_dim", DEFAULT_MAX_DIM)?,
            batch_size: s.get_or("batch", DEFAULT_BATCH_SIZE)?,
            max_attempts: s.get_or("attempts", 3)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > self.max_dim {
            return Err(Error::invalid(format!(
                "embedding dim {} must be in 1..={}",
                self.dim, self.max_dim
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.max_attempts == 0 {
            return Err(Error::invalid("max attempts must be positive"));
        }
        Ok(())
    }
}

/// Something that turns a chunk of texts into raw (unnormalized) vectors.
pub trait EmbeddingBackend: Send + Sync {
    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

struct MockBackend {
    dim: usize,
    seed: u64,
}

impl EmbeddingBackend for MockBackend {
    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| {
                mock_embed(t, self.dim, self.seed)
                    .map(|v| v.values().iter().map(|&x| f64::from(x)).collect())
            })
            .collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

pub(crate) fn http_client() -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(60))
        .build()
        .map_err(|e| Error::Transport {
            attempts: 0,
            message: e.to_string(),
        })
}

/// POST `body` as JSON, retrying transport failures and 5xx responses.
pub(crate) fn post_json_with_retry<Req: Serialize + ?Sized>(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &Req,
    attempts: usize,
) -> Result<String> {
    let mut last = String::new();
    for attempt in 1..=attempts {
        match client.post(url).json(body).send() {
            Ok(resp) if resp.status().is_success() => {
                return resp.text().map_err(|e| Error::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })
            }
            Ok(resp) if resp.status().is_client_error() => {
                return Err(Error::Transport {
                    attempts: attempt,
                    message: format!("HTTP {}", resp.status()),
                })
            }
            Ok(resp) => last = format!("HTTP {}", resp.status()),
            Err(e) => last = e.to_string(),
        }
        if attempt < attempts {
            std::thread::sleep(Duration::from_millis(25 * attempt as u64));
        }
    }
    Err(Error::Transport {
        attempts,
        message: last,
    })
}

struct RemoteBackend {
    url: String,
    attempts: usize,
    client: reqwest::blocking::Client,
}

impl EmbeddingBackend for RemoteBackend {
    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let body = post_json_with_retry(&self.client, &self.url, &EmbedRequest { texts }, self.attempts)?;
        let resp: EmbedResponse =
            serde_json::from_str(&body).map_err(|e| Error::Protocol(e.to_string()))?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "expected {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        Ok(resp.vectors)
    }
}

/// Thread-safe text → vector cache.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    map: RwLock<HashMap<String, EmbeddingVector>>,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    text: String,
    vec: EmbeddingVector,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        EmbeddingCache::default()
    }

    pub fn get(&self, text: &str) -> Option<EmbeddingVector> {
        self.map.read().unwrap().get(text).cloned()
    }

    pub fn insert(&self, text: String, vec: EmbeddingVector) {
        self.map.write().unwrap().insert(text, vec);
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Load a JSONL cache file; entries with a different dimension are skipped.
    pub fn load(path: &Path, dim: usize) -> Result<EmbeddingCache> {
        let cache = EmbeddingCache::new();
        if !path.exists() {
            return Ok(cache);
        }
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheRecord = serde_json::from_str(&line)?;
            if rec.vec.dim() == dim {
                cache.insert(rec.text, rec.vec);
            }
        }
        Ok(cache)
    }

    /// Write entries sorted by text.
    pub fn save(&self, path: &Path) -> Result<()> {
        let map = self.map.read().unwrap();
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();
        let mut w = BufWriter::new(File::create(path)?);
        for k in keys {
            serde_json::to_writer(
                &mut w,
                &CacheRecord {
                    text: k.clone(),
                    vec: map[k].clone(),
                },
            )?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A configured provider plus optional cache.
pub struct Embedder {
    spec: ProviderSpec,
    backend: Box<dyn EmbeddingBackend>,
    cache: Option<EmbeddingCache>,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder").field("spec", &self.spec).finish()
    }
}

impl Embedder {
    pub fn new(spec: ProviderSpec) -> Result<Embedder> {
        spec.validate()?;
        let backend: Box<dyn EmbeddingBackend> = match &spec.kind {
            ProviderKind::Mock { seed } => Box::new(MockBackend {
                dim: spec.dim,
                seed: *seed,
            }),
            ProviderKind::Remote { url } => Box::new(RemoteBackend {
                url: url.clone(),
                attempts: spec.max_attempts,
                client: http_client()?,
            }),
        };
        Ok(Embedder {
            spec,
            backend,
            cache: None,
        })
    }

    /// Use a custom backend (tests, adapters).
    pub fn with_backend(spec: ProviderSpec, backend: Box<dyn EmbeddingBackend>) -> Result<Embedder> {
        spec.validate()?;
        Ok(Embedder {
            spec,
            backend,
            cache: None,
        })
    }

    pub fn with_cache(mut self, cache: EmbeddingCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn cache(&self) -> Option<&EmbeddingCache> {
        self.cache.as_ref()
    }

    pub fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    fn finish(&self, raw: Vec<f64>) -> Result<EmbeddingVector> {
        if raw.len() < self.spec.dim {
            return Err(Error::Protocol(format!(
                "provider returned {} coordinates, need {}",
                raw.len(),
                self.spec.dim
            )));
        }
        // Longer vectors are prefix-truncated to the configured dimension.
        EmbeddingVector::normalized(&raw[..self.spec.dim])
    }

    /// Embed `texts`, one unit vector per text in input order.
    ///
    /// Uncached texts are sent in chunks of `batch_size`; each chunk is one
    /// provider call on the meter. Chunks may run in parallel.
    pub fn embed_batch(&self, texts: &[String], meter: &Meter) -> Result<Vec<EmbeddingVector>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::EmptyText);
        }
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        let mut pending: Vec<usize> = Vec::new();
        match &self.cache {
            Some(cache) => {
                let mut first: HashMap<&str, usize> = HashMap::new();
                for (i, t) in texts.iter().enumerate() {
                    if let Some(v) = cache.get(t) {
                        out[i] = Some(v);
                    } else if !first.contains_key(t.as_str()) {
                        first.insert(t, i);
                        pending.push(i);
                    }
                }
            }
            None => pending.extend(0..texts.len()),
        }

        let chunks: Vec<&[usize]> = pending.chunks(self.spec.batch_size).collect();
        let results: Vec<Vec<EmbeddingVector>> = chunks
            .par_iter()
            .map(|idx| {
                let batch: Vec<String> = idx.iter().map(|&i| texts[i].clone()).collect();
                let raw = self.backend.embed_chunk(&batch)?;
                raw.into_iter().map(|r| self.finish(r)).collect()
            })
            .collect::<Result<_>>()?;
        meter.record_embed(chunks.len() as u64, pending.len() as u64);

        for (idx, vecs) in chunks.iter().zip(results) {
            for (&i, v) in idx.iter().zip(vecs) {
                if let Some(cache) = &self.cache {
                    cache.insert(texts[i].clone(), v.clone());
                }
                out[i] = Some(v);
            }
        }
        if let Some(cache) = &self.cache {
            for (i, slot) in out.iter_mut().enumerate() {
                if slot.is_none() {
                    *slot = cache.get(&texts[i]);
                }
            }
        }
        Ok(out
            .into_iter()
            .map(|v| v.expect("every text embedded"))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_unit(v: &EmbeddingVector) {
        assert!((v.norm() - 1.0).abs() < 1e-6, "norm {}", v.norm());
    }

    #[test]
    fn mock_is_deterministic_and_unit() {
        let a = mock_embed("the quick brown fox", 64, 42).unwrap();
        let b = mock_embed("the quick brown fox", 64, 42).unwrap();
        assert_eq!(a, b);
        assert_unit(&a);
        assert_ne!(a, mock_embed("the quick brown fox", 64, 43).unwrap());
    }

    #[test]
    fn repeated_tokens_are_colinear() {
        let a = mock_embed("good good", 32, 7).unwrap();
        let b = mock_embed("good", 32, 7).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn bag_of_words_is_order_free() {
        assert_eq!(
            mock_embed("a b", 16, 1).unwrap(),
            mock_embed("b a", 16, 1).unwrap()
        );
        assert_eq!(
            mock_embed("Hello, World!", 16, 1).unwrap(),
            mock_embed("world hello", 16, 1).unwrap()
        );
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(mock_embed("  ..  ", 8, 1), Err(Error::EmptyText)));
        let e = Embedder::new(ProviderSpec::mock(8, 1)).unwrap();
        let m = Meter::new();
        assert!(matches!(
            e.embed_batch(&["ok".into(), " ".into()], &m),
            Err(Error::EmptyText)
        ));
    }

    #[test]
    fn truncation_renormalizes() {
        let v = EmbeddingVector::normalized(&[3.0, 4.0, 0.0, 0.0]).unwrap();
        let t = truncate_mrl(&v, 2).unwrap();
        assert!((t.values()[0] - 0.6).abs() < 1e-6);
        assert!((t.values()[1] - 0.8).abs() < 1e-6);
        let full = truncate_mrl(&v, 4).unwrap();
        for (a, b) in full.values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(truncate_mrl(&v, 0).is_err());
        assert!(truncate_mrl(&v, 5).is_err());
    }

    #[test]
    fn nested_truncation_agrees() {
        let v = mock_embed("nested prefix check", 64, 3).unwrap();
        let a = truncate_mrl(&truncate_mrl(&v, 32).unwrap(), 8).unwrap();
        let b = truncate_mrl(&v, 8).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_call_count() {
        let e = Embedder::new(ProviderSpec::mock(16, 42)).unwrap();
        let texts: Vec<String> = (0..3534).map(|i| format!("tweet number {i}")).collect();
        let m = Meter::new();
        let vecs = e.embed_batch(&texts, &m).unwrap();
        assert_eq!(vecs.len(), 3534);
        assert_eq!(m.counts().embed_calls, 177);
        assert_eq!(vecs[10], mock_embed(&texts[10], 16, 42).unwrap());
        for v in &vecs {
            assert_unit(v);
        }
    }

    #[test]
    fn cache_hits_make_no_calls() {
        let e = Embedder::new(ProviderSpec::mock(16, 42))
            .unwrap()
            .with_cache(EmbeddingCache::new());
        let texts: Vec<String> = vec!["a".into(), "b".into(), "a".into()];
        let m = Meter::new();
        let first = e.embed_batch(&texts, &m).unwrap();
        assert_eq!(m.counts().embed_texts, 2);
        let m2 = Meter::new();
        let second = e.embed_batch(&texts, &m2).unwrap();
        assert_eq!(m2.counts(), Default::default());
        assert_eq!(first, second);
    }

    #[test]
    fn cache_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = EmbeddingCache::new();
        cache.insert("x".into(), mock_embed("x", 8, 1).unwrap());
        cache.save(&path).unwrap();
        let back = EmbeddingCache::load(&path, 8).unwrap();
        assert_eq!(back.get("x"), cache.get("x"));
        assert!(EmbeddingCache::load(&path, 4).unwrap().is_empty());
    }

    #[test]
    fn spec_parsing() {
        let s = ProviderSpec::parse("mock:dim=768,seed=42").unwrap();
        assert_eq!(s.dim, 768);
        assert_eq!(s.kind, ProviderKind::Mock { seed: 42 });
        assert!(ProviderSpec::parse("mock:dim=769").is_err());
        assert!(ProviderSpec::parse("remote:dim=8").is_err());
        assert!(ProviderSpec::parse("gecko:dim=8").is_err());
    }
}
