//! Effectiveness on the full topic set versus the topics the quiz did not
//! flag, with percentile bootstrap intervals telling whether the filtered
//! score is unusual for a topic sample of that size.
//!
//! Replicate `r` draws its topic indices from `ChaCha8(seed)` on stream `r`,
//! over topic ids in sorted order, so serial and parallel runs agree bit for
//! bit on every platform.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcq::{format_interval, ContaminationReport};
use crate::metrics::{evaluate, EvalReport, Metric};
use crate::trec_io::{QrelsSet, Run};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no run supplied for system {0}")]
    MissingRun(String),
    #[error("bootstrap needs at least one score and a sample size of at least 1")]
    EmptyBootstrap,
    #[error("confidence level must lie in (0, 1), got {0}")]
    Level(f64),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicPartition {
    pub pc_topics: BTreeSet<String>,
    pub nc_topics: BTreeSet<String>,
    /// Topics in the evaluated set the quiz had no passage for. They stay
    /// in NC.
    pub never_quizzed: BTreeSet<String>,
}

impl TopicPartition {
    pub fn retention(&self) -> f64 {
        if self.pc_topics.is_empty() {
            0.0
        } else {
            self.nc_topics.len() as f64 / self.pc_topics.len() as f64
        }
    }
}

pub fn partition_topics<'a>(
    report: &ContaminationReport,
    all_topics: impl IntoIterator<Item = &'a str>,
) -> TopicPartition {
    let mut p = TopicPartition::default();
    for t in all_topics {
        p.pc_topics.insert(t.to_string());
        match report.per_topic_flags.get(t) {
            Some(true) => {}
            Some(false) => {
                p.nc_topics.insert(t.to_string());
            }
            None => {
                p.nc_topics.insert(t.to_string());
                p.never_quizzed.insert(t.to_string());
            }
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub metric: String,
    pub level: f64,
    pub n_resamples: usize,
    pub sample_size: usize,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            n_resamples: 10_000,
            level: 0.95,
            seed: 0,
            parallel: true,
        }
    }
}

/// Linear interpolation between closest ranks of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let below = h.floor() as usize;
    let above = (below + 1).min(sorted.len() - 1);
    sorted[below] + (h - below as f64) * (sorted[above] - sorted[below])
}

fn replicate_indices(seed: u64, replicate: usize, pool: usize, sample_size: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    (0..sample_size)
        .map(|_| rng.random_range(0..pool))
        .collect()
}

/// Intervals for several metrics from one shared index stream: replicate
/// `r` uses the same resampled topics for every metric. All maps must be
/// keyed by the same topic ids.
pub fn bootstrap_cis(
    scores: &BTreeMap<String, BTreeMap<String, f64>>,
    sample_size: usize,
    opts: &BootstrapOptions,
) -> Result<Vec<BootstrapCI>, EvalError> {
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(EvalError::Level(opts.level));
    }
    let columns: Vec<(&String, Vec<f64>)> = scores
        .iter()
        .map(|(m, per_topic)| (m, per_topic.values().copied().collect()))
        .collect();
    let pool = columns.first().map_or(0, |(_, v)| v.len());
    if pool == 0 || sample_size == 0 || opts.n_resamples == 0 {
        return Err(EvalError::EmptyBootstrap);
    }
    assert!(
        columns.iter().all(|(_, v)| v.len() == pool),
        "metrics must cover the same topics"
    );
    let replicate = |r: usize| -> Vec<f64> {
        let idx = replicate_indices(opts.seed, r, pool, sample_size);
        columns
            .iter()
            .map(|(_, v)| idx.iter().map(|&i| v[i]).sum::<f64>() / sample_size as f64)
            .collect()
    };
    let means: Vec<Vec<f64>> = if opts.parallel {
        (0..opts.n_resamples)
            .into_par_iter()
            .map(replicate)
            .collect()
    } else {
        (0..opts.n_resamples).map(replicate).collect()
    };
    let alpha = (1.0 - opts.level) / 2.0;
    Ok(columns
        .iter()
        .enumerate()
        .map(|(j, (metric, _))| {
            let mut dist: Vec<f64> = means.iter().map(|row| row[j]).collect();
            dist.sort_by(f64::total_cmp);
            BootstrapCI {
                metric: metric.to_string(),
                level: opts.level,
                n_resamples: opts.n_resamples,
                sample_size,
                lo: percentile(&dist, alpha),
                hi: percentile(&dist, 1.0 - alpha),
                seed: opts.seed,
            }
        })
        .collect())
}

/// Percentile interval of the mean of `sample_size` topics drawn with
/// replacement from `per_topic_scores`.
pub fn bootstrap_ci(
    metric: &str,
    per_topic_scores: &BTreeMap<String, f64>,
    sample_size: usize,
    opts: &BootstrapOptions,
) -> Result<BootstrapCI, EvalError> {
    let scores = BTreeMap::from([(metric.to_string(), per_topic_scores.clone())]);
    Ok(bootstrap_cis(&scores, sample_size, opts)?.remove(0))
}

/// True when the score lies strictly outside the interval.
pub fn flag_outside_ci(nc_mean: f64, ci: &BootstrapCI) -> bool {
    nc_mean < ci.lo || nc_mean > ci.hi
}

/// Which topics the bootstrap draws from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleSource {
    /// The full topic set, at the size of the filtered set.
    #[default]
    Pc,
    /// Only the flagged topics (PC minus NC), at the size of the filtered set.
    PcMinusNc,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TableOptions {
    pub bootstrap: BootstrapOptions,
    pub source: ResampleSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub pc_mean: f64,
    pub nc_mean: Option<f64>,
    pub ci: Option<BootstrapCI>,
    pub outside_ci: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub system: String,
    pub input_pairs: Option<usize>,
    pub contamination_interval: Option<[f64; 2]>,
    pub pc_topics: usize,
    pub nc_topics: usize,
    pub never_quizzed: usize,
    pub metrics: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationTable {
    pub dataset: String,
    pub resample_source: ResampleSource,
    pub systems: Vec<SystemRow>,
}

/// PC and NC means per system and metric, the bootstrap interval for a
/// topic sample of NC's size, and whether the NC mean falls outside it.
/// Systems are the keys of `partitions`; contamination reports are optional
/// and only feed the descriptive rows.
pub fn contamination_table(
    dataset: &str,
    runs: &BTreeMap<String, Run>,
    qrels: &QrelsSet,
    partitions: &BTreeMap<String, TopicPartition>,
    reports: &BTreeMap<String, ContaminationReport>,
    metrics: &[Metric],
    opts: &TableOptions,
) -> Result<ContaminationTable, EvalError> {
    let mut systems = Vec::new();
    for (system, partition) in partitions {
        let run = runs
            .get(system)
            .ok_or_else(|| EvalError::MissingRun(system.clone()))?;
        let pc = evaluate(run, qrels, metrics, Some(&partition.pc_topics));
        let nc = evaluate(run, qrels, metrics, Some(&partition.nc_topics));
        let cis = table_cis(&pc, partition, metrics, nc.topic_count, opts)?;
        let rows = metrics
            .iter()
            .map(|m| {
                let name = m.to_string();
                let pc_mean = pc.mean_of(&name).unwrap_or(0.0);
                let nc_mean = (nc.topic_count > 0).then(|| nc.mean_of(&name).unwrap_or(0.0));
                let ci = cis
                    .as_ref()
                    .and_then(|c| c.iter().find(|ci| ci.metric == name).cloned());
                // NC == PC: the filter removed nothing, so there is no gap to flag
                let unfiltered = nc.topic_count == pc.topic_count;
                let outside_ci = match (nc_mean, &ci) {
                    (Some(v), Some(ci)) if !unfiltered => flag_outside_ci(v, ci),
                    _ => false,
                };
                MetricRow {
                    metric: name,
                    pc_mean,
                    nc_mean,
                    ci,
                    outside_ci,
                }
            })
            .collect();
        let report = reports.get(system);
        systems.push(SystemRow {
            system: system.clone(),
            input_pairs: report.map(|r| r.items_total),
            contamination_interval: report.map(|r| r.corrected_interval),
            pc_topics: pc.topic_count,
            nc_topics: nc.topic_count,
            never_quizzed: partition.never_quizzed.len(),
            metrics: rows,
        });
    }
    Ok(ContaminationTable {
        dataset: dataset.to_string(),
        resample_source: opts.source,
        systems,
    })
}

fn table_cis(
    pc: &EvalReport,
    partition: &TopicPartition,
    metrics: &[Metric],
    sample_size: usize,
    opts: &TableOptions,
) -> Result<Option<Vec<BootstrapCI>>, EvalError> {
    let mut scores = BTreeMap::new();
    for m in metrics {
        let name = m.to_string();
        let mut per_topic = pc.scores(&name);
        if opts.source == ResampleSource::PcMinusNc {
            per_topic.retain(|t, _| !partition.nc_topics.contains(t));
        }
        scores.insert(name, per_topic);
    }
    let pool = scores.values().next().map_or(0, BTreeMap::len);
    if sample_size == 0 || pool == 0 {
        return Ok(None);
    }
    bootstrap_cis(&scores, sample_size, &opts.bootstrap).map(Some)
}

impl ContaminationTable {
    /// Fixed-width text laid out like a results table: descriptive rows,
    /// then per metric the PC and NC means and the interval row. NC means
    /// outside the interval carry a dagger.
    pub fn render_text(&self) -> String {
        const LABEL: usize = 24;
        const COL: usize = 10;
        let mut out = String::new();
        let _ = writeln!(out, "Dataset: {}", self.dataset);
        let mut header = format!("{:LABEL$}", "");
        let mut sub = format!("{:LABEL$}", "");
        for s in &self.systems {
            let _ = write!(header, "{:<width$}", s.system, width = 2 * COL);
            let _ = write!(sub, "{:<COL$}{:<COL$}", "PC", "NC");
        }
        let _ = writeln!(out, "{}", header.trim_end());
        let _ = writeln!(out, "{}", sub.trim_end());
        let spanning = |label: &str, cell: &dyn Fn(&SystemRow) -> String| {
            let mut line = format!("{label:LABEL$}");
            for s in &self.systems {
                let _ = write!(line, "{:<width$}", cell(s), width = 2 * COL);
            }
            line.trim_end().to_string()
        };
        let _ = writeln!(
            out,
            "{}",
            spanning("Input pairs", &|s| s
                .input_pairs
                .map_or("-".into(), |n| n.to_string()))
        );
        let _ = writeln!(
            out,
            "{}",
            spanning("Contamination level", &|s| s
                .contamination_interval
                .map_or("-".into(), format_interval))
        );
        let mut topics = format!("{:LABEL$}", "Topics evaluated");
        for s in &self.systems {
            let _ = write!(topics, "{:<COL$}{:<COL$}", s.pc_topics, s.nc_topics);
        }
        let _ = writeln!(out, "{}", topics.trim_end());
        let metric_names: Vec<&str> = self
            .systems
            .first()
            .map(|s| s.metrics.iter().map(|m| m.metric.as_str()).collect())
            .unwrap_or_default();
        for (j, name) in metric_names.iter().enumerate() {
            let mut line = format!("{name:LABEL$}");
            for s in &self.systems {
                let m = &s.metrics[j];
                let nc = m.nc_mean.map_or("-".to_string(), |v| {
                    format!("{v:.4}{}", if m.outside_ci { "\u{2020}" } else { "" })
                });
                let _ = write!(line, "{:<COL$}{:<COL$}", format!("{:.4}", m.pc_mean), nc);
            }
            let _ = writeln!(out, "{}", line.trim_end());
            let level = self.systems[0].metrics[j]
                .ci
                .as_ref()
                .map_or(95.0, |c| (c.level * 100.0).round());
            let _ = writeln!(
                out,
                "{}",
                spanning(&format!("  CI{level} {name}"), &|s| s.metrics[j]
                    .ci
                    .as_ref()
                    .map_or("-".into(), |c| format!("[{:.4}, {:.4}]", c.lo, c.hi)))
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "dataset,system,metric,pc_topics,nc_topics,pc_mean,nc_mean,ci_lo,ci_hi,level,n_resamples,sample_size,outside_ci\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for s in &self.systems {
            for m in &s.metrics {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    self.dataset,
                    s.system,
                    m.metric,
                    s.pc_topics,
                    s.nc_topics,
                    m.pc_mean,
                    opt(m.nc_mean),
                    opt(m.ci.as_ref().map(|c| c.lo)),
                    opt(m.ci.as_ref().map(|c| c.hi)),
                    opt(m.ci.as_ref().map(|c| c.level)),
                    m.ci.as_ref()
                        .map_or(String::new(), |c| c.n_resamples.to_string()),
                    m.ci.as_ref()
                        .map_or(String::new(), |c| c.sample_size.to_string()),
                    m.outside_ci
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trec_io::{parse_qrels, parse_run};

    fn ci(lo: f64, hi: f64) -> BootstrapCI {
        BootstrapCI {
            metric: "ndcg@10".into(),
            level: 0.95,
            n_resamples: 10_000,
            sample_size: 6,
            lo,
            hi,
            seed: 0,
        }
    }

    fn report(flags: &[(&str, bool)]) -> ContaminationReport {
        ContaminationReport {
            model_id: "m".into(),
            dataset_id: "d".into(),
            items_total: flags.len(),
            per_position_accuracy: [0.0; 4],
            corrected_per_position: [0.0; 4],
            corrected_interval: [0.0, 0.0],
            per_topic_flags: flags.iter().map(|(t, f)| (t.to_string(), *f)).collect(),
        }
    }

    #[test]
    fn outside_ci_flags() {
        assert!(flag_outside_ci(0.6437, &ci(0.6741, 0.9163)));
        assert!(!flag_outside_ci(0.5440, &ci(0.5266, 0.5907)));
        assert!(!flag_outside_ci(0.5266, &ci(0.5266, 0.5907)));
        assert!(!flag_outside_ci(0.5907, &ci(0.5266, 0.5907)));
        assert!(flag_outside_ci(0.9164, &ci(0.6741, 0.9163)));
    }

    #[test]
    fn partition_keeps_unquizzed_in_nc() {
        let r = report(&[("1", true), ("2", false)]);
        let p = partition_topics(&r, ["1", "2", "3"]);
        assert_eq!(p.pc_topics.len(), 3);
        assert_eq!(
            p.nc_topics,
            ["2", "3"].iter().map(|s| s.to_string()).collect()
        );
        assert_eq!(p.never_quizzed.len(), 1);
        let empty = partition_topics(&report(&[]), ["1", "2"]);
        assert_eq!(empty.nc_topics, empty.pc_topics);
    }

    #[test]
    fn zero_variance_gives_point_interval() {
        let scores: BTreeMap<String, f64> = (0..20).map(|i| (format!("t{i}"), 0.5)).collect();
        let c = bootstrap_ci("map", &scores, 7, &BootstrapOptions::default()).unwrap();
        assert_eq!((c.lo, c.hi), (0.5, 0.5));
    }

    #[test]
    fn rejects_degenerate_input() {
        let empty = BTreeMap::new();
        assert_eq!(
            bootstrap_ci("map", &empty, 3, &BootstrapOptions::default()),
            Err(EvalError::EmptyBootstrap)
        );
        let one = BTreeMap::from([("t".to_string(), 0.1)]);
        assert!(bootstrap_ci("map", &one, 0, &BootstrapOptions::default()).is_err());
        let opts = BootstrapOptions {
            level: 1.0,
            ..BootstrapOptions::default()
        };
        assert!(bootstrap_ci("map", &one, 1, &opts).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&xs, 0.0), 1.0);
        assert_eq!(percentile(&xs, 0.5), 3.0);
        assert_eq!(percentile(&xs, 1.0), 5.0);
        assert!((percentile(&xs, 0.125) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn narrower_with_larger_samples() {
        let scores: BTreeMap<String, f64> = (0..100)
            .map(|i| (format!("t{i:03}"), f64::from(i % 7) / 6.0))
            .collect();
        let opts = BootstrapOptions {
            n_resamples: 2000,
            ..BootstrapOptions::default()
        };
        let widths: Vec<f64> = [5, 20, 80]
            .iter()
            .map(|&m| {
                let c = bootstrap_ci("x", &scores, m, &opts).unwrap();
                c.hi - c.lo
            })
            .collect();
        assert!(widths[0] > widths[1] && widths[1] > widths[2], "{widths:?}");
    }

    #[test]
    fn table_uses_the_filtered_evaluation() {
        let qrels = parse_qrels("1 0 a 1\n2 0 b 1\n3 0 c 1\n4 0 d 1").unwrap();
        let run = parse_run("1 Q0 a 1 1 t\n2 Q0 x 1 2 t\n2 Q0 b 2 1 t\n3 Q0 x 1 1 t\n4 Q0 d 1 1 t")
            .unwrap();
        let r = report(&[("1", true), ("2", false), ("3", false), ("4", true)]);
        let partition = partition_topics(&r, qrels.topic_ids());
        let runs = BTreeMap::from([("sys".to_string(), run.clone())]);
        let parts = BTreeMap::from([("sys".to_string(), partition.clone())]);
        let reports = BTreeMap::from([("sys".to_string(), r)]);
        let metrics = [Metric::Ndcg(10), Metric::Map];
        let t = contamination_table(
            "toy",
            &runs,
            &qrels,
            &parts,
            &reports,
            &metrics,
            &TableOptions::default(),
        )
        .unwrap();
        let row = &t.systems[0];
        assert_eq!((row.pc_topics, row.nc_topics), (4, 2));
        let map = &row.metrics[1];
        let pc = evaluate(&run, &qrels, &[Metric::Map], None)
            .mean_of("map")
            .unwrap();
        let nc = evaluate(&run, &qrels, &[Metric::Map], Some(&partition.nc_topics))
            .mean_of("map")
            .unwrap();
        assert_eq!(map.pc_mean, pc);
        assert_eq!(map.nc_mean, Some(nc));
        assert_eq!(map.ci.as_ref().unwrap().sample_size, 2);
        let text = t.render_text();
        assert!(
            text.contains("Topics evaluated        4         2"),
            "{text}"
        );
        assert!(text.contains("CI95 map"));
        assert_eq!(t.to_csv().lines().count(), 3);

        let missing = BTreeMap::new();
        assert_eq!(
            contamination_table(
                "toy",
                &missing,
                &qrels,
                &parts,
                &reports,
                &metrics,
                &TableOptions::default()
            ),
            Err(EvalError::MissingRun("sys".into()))
        );
    }

    #[test]
    fn unfiltered_system_is_never_flagged() {
        let qrels = parse_qrels("1 0 a 1\n2 0 b 1\n3 0 c 1").unwrap();
        let run = parse_run("1 Q0 a 1 1 t\n2 Q0 x 1 2 t\n2 Q0 b 2 1 t").unwrap();
        let partition = partition_topics(&report(&[]), qrels.topic_ids());
        let t = contamination_table(
            "toy",
            &BTreeMap::from([("s".to_string(), run)]),
            &qrels,
            &BTreeMap::from([("s".to_string(), partition)]),
            &BTreeMap::new(),
            &[Metric::Ndcg(10), Metric::Map],
            &TableOptions::default(),
        )
        .unwrap();
        for m in &t.systems[0].metrics {
            assert_eq!(Some(m.pc_mean), m.nc_mean);
            assert!(!m.outside_ci);
        }
    }
}
