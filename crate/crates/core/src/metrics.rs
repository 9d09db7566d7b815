//! nDCG@k and average precision with `trec_eval` semantics: linear gain,
//! `log2(rank + 1)` discount, binary relevance `grade > 0` for AP, unjudged
//! documents count as non-relevant.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trec_io::{QrelsSet, Run};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("unknown metric `{0}` (expected `map` or `ndcg@k`)")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Ndcg(usize),
    Map,
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "map" {
            return Ok(Metric::Map);
        }
        let cutoff = lower
            .strip_prefix("ndcg@")
            .or_else(|| lower.strip_prefix("ndcg_cut_"));
        match cutoff.and_then(|k| k.parse::<usize>().ok()) {
            Some(k) if k >= 1 => Ok(Metric::Ndcg(k)),
            _ => Err(MetricError::Unknown(s.to_string())),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
            Metric::Map => f.write_str("map"),
        }
    }
}

/// Parses a comma-separated list such as `ndcg@10,map`.
pub fn parse_metric_list(s: &str) -> Result<Vec<Metric>, MetricError> {
    s.split(',')
        .filter(|m| !m.trim().is_empty())
        .map(str::parse)
        .collect()
}

impl Metric {
    pub fn score(&self, ranked_docs: &[&str], judgments: &BTreeMap<String, u32>) -> f64 {
        match *self {
            Metric::Ndcg(k) => ndcg_at_k(ranked_docs, judgments, k),
            Metric::Map => average_precision(ranked_docs, judgments),
        }
    }
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

pub fn ndcg_at_k(ranked_docs: &[&str], judgments: &BTreeMap<String, u32>, k: usize) -> f64 {
    let mut ideal: Vec<u32> = judgments.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() || k == 0 {
        return 0.0;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| f64::from(g) / discount(i + 1))
        .sum();
    let dcg: f64 = ranked_docs
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| f64::from(judgments.get(*d).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    dcg / idcg
}

pub fn average_precision(ranked_docs: &[&str], judgments: &BTreeMap<String, u32>) -> f64 {
    let total_relevant = judgments.values().filter(|&&g| g > 0).count();
    if total_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranked_docs.iter().enumerate() {
        if judgments.get(*d).is_some_and(|&g| g > 0) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total_relevant as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicScore {
    pub topic_id: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sorted by topic id, then by the requested metric order.
    pub per_topic: Vec<TopicScore>,
    pub mean: BTreeMap<String, f64>,
    pub topic_count: usize,
    pub metrics: Vec<String>,
}

impl EvalReport {
    /// Per-topic values of one metric, keyed by topic id.
    pub fn scores(&self, metric: &str) -> BTreeMap<String, f64> {
        self.per_topic
            .iter()
            .filter(|s| s.metric == metric)
            .map(|s| (s.topic_id.clone(), s.value))
            .collect()
    }

    pub fn mean_of(&self, metric: &str) -> Option<f64> {
        self.mean.get(metric).copied()
    }

    /// `topic_id,metric,value` rows followed by `all` rows for the means.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("topic_id,metric,value\n");
        for s in &self.per_topic {
            out.push_str(&format!("{},{},{}\n", s.topic_id, s.metric, s.value));
        }
        for m in &self.metrics {
            out.push_str(&format!("all,{},{}\n", m, self.mean[m]));
        }
        out
    }

    /// One line per metric with the mean at four decimals.
    pub fn summary(&self) -> String {
        self.metrics
            .iter()
            .map(|m| {
                format!(
                    "{m}\tall\t{:.4}\t(topics: {})\n",
                    self.mean[m], self.topic_count
                )
            })
            .collect()
    }
}

/// Scores every judged topic, optionally restricted to `topic_filter`.
/// Judged topics absent from the run score 0 and count toward the mean.
pub fn evaluate(
    run: &Run,
    qrels: &QrelsSet,
    metrics: &[Metric],
    topic_filter: Option<&BTreeSet<String>>,
) -> EvalReport {
    let topics: Vec<&str> = qrels
        .topic_ids()
        .filter(|t| topic_filter.is_none_or(|f| f.contains(*t)))
        .collect();
    let per_topic: Vec<TopicScore> = topics
        .par_iter()
        .flat_map_iter(|&t| {
            let judged = qrels.judgments(t).expect("topic listed by qrels");
            let ranked = run.ranked_docs(t).unwrap_or_default();
            metrics.iter().map(move |m| TopicScore {
                topic_id: t.to_string(),
                metric: m.to_string(),
                value: m.score(&ranked, judged),
            })
        })
        .collect();
    let names: Vec<String> = metrics.iter().map(Metric::to_string).collect();
    let mean = names
        .iter()
        .map(|name| {
            let (sum, n) = per_topic
                .iter()
                .filter(|s| &s.metric == name)
                .fold((0.0, 0usize), |(acc, n), s| (acc + s.value, n + 1));
            let value = if n == 0 { 0.0 } else { sum / n as f64 };
            (name.clone(), value)
        })
        .collect();
    EvalReport {
        per_topic,
        mean,
        topic_count: topics.len(),
        metrics: names,
    }
}
