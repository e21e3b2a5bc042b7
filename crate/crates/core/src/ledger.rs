//! Call accounting and the simulated cost/latency model.
//!
//! Provider calls are counted with atomic counters while a pipeline runs.
//! Local compute is charged by a deterministic work model (rows touched and
//! multiply-adds performed) rather than wall-clock time so that reports are
//! reproducible byte for byte.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Why an oracle was invoked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleUse {
    /// Labels for proxy training (and gate evaluation).
    Sample,
    /// Labels for rows the gate sent back to the LLM.
    Fallback,
}

/// Live counters shared by every worker of one pipeline run.
#[derive(Debug, Default)]
pub struct Meter {
    embed_calls: AtomicU64,
    embed_texts: AtomicU64,
    oracle_label_calls: AtomicU64,
    oracle_fallback_calls: AtomicU64,
    proxy_predictions: AtomicU64,
    warnings: AtomicU64,
}

impl Meter {
    pub fn new() -> Self {
        Meter::default()
    }

    pub fn record_embed(&self, calls: u64, texts: u64) {
        self.embed_calls.fetch_add(calls, Ordering::Relaxed);
        self.embed_texts.fetch_add(texts, Ordering::Relaxed);
    }

    pub fn record_oracle(&self, purpose: OracleUse, rows: u64) {
        let c = match purpose {
            OracleUse::Sample => &self.oracle_label_calls,
            OracleUse::Fallback => &self.oracle_fallback_calls,
        };
        c.fetch_add(rows, Ordering::Relaxed);
    }

    pub fn record_predictions(&self, rows: u64) {
        self.proxy_predictions.fetch_add(rows, Ordering::Relaxed);
    }

    pub fn warn(&self, n: u64) {
        self.warnings.fetch_add(n, Ordering::Relaxed);
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            embed_calls: self.embed_calls.load(Ordering::Relaxed),
            embed_texts: self.embed_texts.load(Ordering::Relaxed),
            oracle_label_calls: self.oracle_label_calls.load(Ordering::Relaxed),
            oracle_fallback_calls: self.oracle_fallback_calls.load(Ordering::Relaxed),
            proxy_predictions: self.proxy_predictions.load(Ordering::Relaxed),
            warnings: self.warnings.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub embed_calls: u64,
    pub embed_texts: u64,
    pub oracle_label_calls: u64,
    pub oracle_fallback_calls: u64,
    pub proxy_predictions: u64,
    pub warnings: u64,
}

impl CallCounts {
    pub fn oracle_calls(&self) -> u64 {
        self.oracle_label_calls + self.oracle_fallback_calls
    }

    /// Rows that received exactly one label source.
    pub fn labeled_rows(&self) -> u64 {
        self.oracle_label_calls + self.oracle_fallback_calls + self.proxy_predictions
    }

    pub fn add(&mut self, other: &CallCounts) {
        self.embed_calls += other.embed_calls;
        self.embed_texts += other.embed_texts;
        self.oracle_label_calls += other.oracle_label_calls;
        self.oracle_fallback_calls += other.oracle_fallback_calls;
        self.proxy_predictions += other.proxy_predictions;
        self.warnings += other.warnings;
    }
}

/// Local compute performed by one stage, in rows touched and multiply-adds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Work {
    pub rows: f64,
    pub flops: f64,
}

impl Work {
    pub fn new(rows: f64, flops: f64) -> Self {
        Work { rows, flops }
    }

    pub fn add(&mut self, other: Work) {
        self.rows += other.rows;
        self.flops += other.flops;
    }

    pub fn vcpu_seconds(&self, costs: &UnitCosts) -> f64 {
        self.rows * costs.compute.row_latency + self.flops * costs.compute.flop_latency
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageWork {
    pub embed: Work,
    pub sample: Work,
    pub train: Work,
    pub predict: Work,
}

impl StageWork {
    pub fn add(&mut self, other: &StageWork) {
        self.embed.add(other.embed);
        self.sample.add(other.sample);
        self.train.add(other.train);
        self.predict.add(other.predict);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProviderLatencies {
    /// Seconds per LLM call (one row).
    pub llm: f64,
    /// Seconds per embedding request (one batch).
    pub embed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeModel {
    /// vCPU seconds per row read or written.
    pub row_latency: f64,
    /// vCPU seconds per multiply-add.
    pub flop_latency: f64,
}

/// Unit prices and latencies. Costs are in LLM-call units by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnitCosts {
    /// Cost of one LLM call (one row).
    pub llm_unit: f64,
    /// Cost of embedding one text.
    pub embed_unit: f64,
    /// Cost of one vCPU second.
    pub vcpu_rate: f64,
    pub provider_latencies: ProviderLatencies,
    pub compute: ComputeModel,
}

impl Default for UnitCosts {
    fn default() -> Self {
        UnitCosts {
            llm_unit: 1.0,
            embed_unit: 1.0 / 3.0,
            vcpu_rate: 0.01,
            provider_latencies: ProviderLatencies {
                llm: 0.5,
                embed: 0.25,
            },
            compute: ComputeModel {
                row_latency: 1e-6,
                flop_latency: 1e-9,
            },
        }
    }
}

impl UnitCosts {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("llm_unit", self.llm_unit),
            ("embed_unit", self.embed_unit),
            ("vcpu_rate", self.vcpu_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("provider_latencies.llm", self.provider_latencies.llm),
            ("provider_latencies.embed", self.provider_latencies.embed),
            ("compute.row_latency", self.compute.row_latency),
            ("compute.flop_latency", self.compute.flop_latency),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub embed: f64,
    pub sample: f64,
    pub label: f64,
    pub train: f64,
    pub predict: f64,
}

impl StageLatency {
    pub fn total(&self) -> f64 {
        self.embed + self.sample + self.label + self.train + self.predict
    }

    /// Fraction of the total spent in each stage.
    pub fn shares(&self) -> StageLatency {
        let t = self.total();
        if t <= 0.0 {
            return StageLatency::default();
        }
        StageLatency {
            embed: self.embed / t,
            sample: self.sample / t,
            label: self.label / t,
            train: self.train / t,
            predict: self.predict / t,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub cost_proxy_path: f64,
    pub cost_llm_baseline: f64,
    pub savings_multiplier: f64,
    pub latency_proxy_path: f64,
    pub latency_llm_baseline: f64,
    pub latency_multiplier: f64,
}

/// Everything the cost model needs about one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    /// Rows a pure-LLM plan would have labeled.
    pub baseline_rows: u64,
    pub parallelism: usize,
    pub counts: CallCounts,
    pub work: StageWork,
    pub stage_latency: StageLatency,
    pub totals: Totals,
}

impl CostLedger {
    pub fn new(baseline_rows: u64, parallelism: usize, counts: CallCounts, work: StageWork) -> Self {
        CostLedger {
            baseline_rows,
            parallelism: parallelism.max(1),
            counts,
            work,
            stage_latency: StageLatency::default(),
            totals: Totals::default(),
        }
    }

    /// Fill `stage_latency` and `totals` from counts and work.
    pub fn finalize(mut self, costs: &UnitCosts) -> Result<Self> {
        self.stage_latency = stage_latency(&self, costs);
        self.totals = ledger_report(&self, costs)?;
        Ok(self)
    }

    pub fn merge(&mut self, other: &CostLedger) {
        self.baseline_rows += other.baseline_rows;
        self.counts.add(&other.counts);
        self.work.add(&other.work);
    }
}

/// Simulated per-stage latency.
///
/// Provider calls and row-parallel compute are divided by the parallelism
/// degree; training is a serial barrier.
pub fn stage_latency(ledger: &CostLedger, costs: &UnitCosts) -> StageLatency {
    let p = ledger.parallelism.max(1) as f64;
    let c = &ledger.counts;
    let w = &ledger.work;
    StageLatency {
        embed: (c.embed_calls as f64 * costs.provider_latencies.embed + w.embed.vcpu_seconds(costs))
            / p,
        sample: w.sample.vcpu_seconds(costs) / p,
        label: c.oracle_calls() as f64 * costs.provider_latencies.llm / p,
        train: w.train.vcpu_seconds(costs),
        predict: w.predict.vcpu_seconds(costs) / p,
    }
}

/// Cost and latency totals for the proxy path against the pure-LLM baseline.
pub fn ledger_report(ledger: &CostLedger, costs: &UnitCosts) -> Result<Totals> {
    costs.validate()?;
    let c = &ledger.counts;
    let w = &ledger.work;
    let vcpu = w.embed.vcpu_seconds(costs)
        + w.sample.vcpu_seconds(costs)
        + w.train.vcpu_seconds(costs)
        + w.predict.vcpu_seconds(costs);
    let cost_proxy_path = c.embed_texts as f64 * costs.embed_unit
        + c.oracle_calls() as f64 * costs.llm_unit
        + vcpu * costs.vcpu_rate;
    let cost_llm_baseline = ledger.baseline_rows as f64 * costs.llm_unit;
    let latency_proxy_path = stage_latency(ledger, costs).total();
    let latency_llm_baseline = ledger.baseline_rows as f64 * costs.provider_latencies.llm
        / ledger.parallelism.max(1) as f64;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(Totals {
        cost_proxy_path,
        cost_llm_baseline,
        savings_multiplier: ratio(cost_llm_baseline, cost_proxy_path),
        latency_proxy_path,
        latency_llm_baseline,
        latency_multiplier: ratio(latency_llm_baseline, latency_proxy_path),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_unit_defaults_to_a_third_of_llm() {
        let c = UnitCosts::default();
        assert!((c.embed_unit - c.llm_unit / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_units() {
        let ledger = CostLedger::new(10, 1, CallCounts::default(), StageWork::default());
        let mut c = UnitCosts::default();
        c.llm_unit = 0.0;
        assert!(ledger_report(&ledger, &c).is_err());
        let mut c = UnitCosts::default();
        c.embed_unit = -1.0;
        assert!(ledger_report(&ledger, &c).is_err());
    }

    #[test]
    fn closed_form_precomputed_savings() {
        // Precomputed embeddings: only the sample is billed to the LLM.
        let n = 1_000_000u64;
        let counts = CallCounts {
            oracle_label_calls: 1000,
            proxy_predictions: n - 1000,
            ..Default::default()
        };
        let work = StageWork {
            predict: Work::new((n - 1000) as f64, (n - 1000) as f64 * 768.0),
            ..Default::default()
        };
        let costs = UnitCosts::default();
        let ledger = CostLedger::new(n, 8, counts, work).finalize(&costs).unwrap();
        let vcpu = (n - 1000) as f64 * (1e-6 + 768.0 * 1e-9);
        let expected = n as f64 / (1000.0 + vcpu * 0.01);
        assert!((ledger.totals.savings_multiplier - expected).abs() < 1e-9 * expected);
        assert!(ledger.totals.savings_multiplier >= 100.0);
    }

    #[test]
    fn meter_counts_by_purpose() {
        let m = Meter::new();
        m.record_oracle(OracleUse::Sample, 5);
        m.record_oracle(OracleUse::Fallback, 7);
        m.record_predictions(3);
        m.record_embed(2, 40);
        let c = m.counts();
        assert_eq!(c.oracle_calls(), 12);
        assert_eq!(c.labeled_rows(), 15);
        assert_eq!((c.embed_calls, c.embed_texts), (2, 40));
    }

    #[test]
    fn shares_sum_to_one() {
        let s = StageLatency {
            embed: 1.0,
            sample: 2.0,
            label: 3.0,
            train: 0.5,
            predict: 1.5,
        }
        .shares();
        assert!((s.total() - 1.0).abs() < 1e-12);
    }
}
