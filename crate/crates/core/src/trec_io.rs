//! TREC text formats: qrels, run files, topics and a JSONL passage corpus.
//!
//! Runs are always held in the order a reference evaluator would score them:
//! descending score, ties broken by descending `doc_id`, ranks renumbered
//! `1..n` after sorting.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrecError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: duplicate judgment for topic {topic_id}, document {doc_id}")]
    DuplicateJudgment {
        line: usize,
        topic_id: String,
        doc_id: String,
    },
    #[error("line {line}: document {doc_id} appears twice in topic {topic_id}")]
    DuplicateRunDoc {
        line: usize,
        topic_id: String,
        doc_id: String,
    },
    #[error("duplicate topic id {0}")]
    DuplicateTopic(String),
    #[error("duplicate document id {0} in corpus")]
    DuplicateDoc(String),
    #[error("topic {0} is not judged in the qrels")]
    UnknownTopic(String),
    #[error("topic {0} has no relevant passages present in the corpus")]
    NoRelevantPassages(String),
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, TrecError>;

/// Reads a file as UTF-8, replacing invalid sequences instead of failing.
pub fn read_lossy(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| TrecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn malformed(line: usize, msg: impl Into<String>) -> TrecError {
    TrecError::Malformed {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: String,
    pub text: String,
}

/// Topics keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TopicSet {
    topics: BTreeMap<String, String>,
}

impl TopicSet {
    pub fn from_topics(topics: impl IntoIterator<Item = Topic>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for t in topics {
            if map.insert(t.topic_id.clone(), t.text).is_some() {
                return Err(TrecError::DuplicateTopic(t.topic_id));
            }
        }
        Ok(Self { topics: map })
    }

    pub fn text(&self, topic_id: &str) -> Option<&str> {
        self.topics.get(topic_id).map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }
}

/// Parses topics from either `topic_id<TAB>text` lines or JSONL objects with
/// `topic_id` and `text` fields. The format is detected from the first
/// non-empty line.
pub fn parse_topics(text: &str) -> Result<TopicSet> {
    let jsonl = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim_start().starts_with('{'));
    let mut topics = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let topic = if jsonl {
            serde_json::from_str::<Topic>(line).map_err(|e| malformed(lineno, e.to_string()))?
        } else {
            let (id, body) = line
                .split_once('\t')
                .ok_or_else(|| malformed(lineno, "expected `topic_id<TAB>text`"))?;
            Topic {
                topic_id: id.trim().to_string(),
                text: body.trim().to_string(),
            }
        };
        if topic.topic_id.is_empty() {
            return Err(malformed(lineno, "empty topic id"));
        }
        if topic.text.trim().is_empty() {
            return Err(malformed(
                lineno,
                format!("topic {} has empty text", topic.topic_id),
            ));
        }
        topics.push(topic);
    }
    TopicSet::from_topics(topics)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Qrel {
    pub topic_id: String,
    pub doc_id: String,
    pub grade: u32,
}

/// Graded judgments grouped by topic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelsSet {
    topics: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelsSet {
    pub fn from_qrels(qrels: impl IntoIterator<Item = Qrel>) -> Result<Self> {
        let mut set = Self::default();
        for (i, q) in qrels.into_iter().enumerate() {
            set.insert(i + 1, q)?;
        }
        Ok(set)
    }

    fn insert(&mut self, line: usize, q: Qrel) -> Result<()> {
        let judged = self.topics.entry(q.topic_id.clone()).or_default();
        if judged.contains_key(&q.doc_id) {
            return Err(TrecError::DuplicateJudgment {
                line,
                topic_id: q.topic_id,
                doc_id: q.doc_id,
            });
        }
        judged.insert(q.doc_id, q.grade);
        Ok(())
    }

    pub fn judgments(&self, topic_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.topics.get(topic_id)
    }

    pub fn topic_ids(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    pub fn num_topics(&self) -> usize {
        self.topics.len()
    }

    pub fn num_relevant(&self, topic_id: &str) -> usize {
        self.topics
            .get(topic_id)
            .map_or(0, |j| j.values().filter(|&&g| g > 0).count())
    }

    pub fn iter(&self) -> impl Iterator<Item = Qrel> + '_ {
        self.topics.iter().flat_map(|(t, docs)| {
            docs.iter().map(move |(d, &g)| Qrel {
                topic_id: t.clone(),
                doc_id: d.clone(),
                grade: g,
            })
        })
    }
}

/// Parses `topic_id 0 doc_id grade` lines.
pub fn parse_qrels(text: &str) -> Result<QrelsSet> {
    let mut set = QrelsSet::default();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [topic_id, _iter, doc_id, grade] = fields[..] else {
            return Err(malformed(
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        };
        let grade: u32 = grade
            .parse()
            .map_err(|_| malformed(lineno, format!("invalid relevance grade `{grade}`")))?;
        set.insert(
            lineno,
            Qrel {
                topic_id: topic_id.to_string(),
                doc_id: doc_id.to_string(),
                grade,
            },
        )?;
    }
    Ok(set)
}

pub fn write_qrels(qrels: &QrelsSet) -> String {
    let mut out = String::new();
    for q in qrels.iter() {
        let _ = writeln!(out, "{} 0 {} {}", q.topic_id, q.doc_id, q.grade);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub topic_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

fn evaluation_order(a: &RunEntry, b: &RunEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.doc_id.cmp(&a.doc_id))
}

/// Ranked results per topic, held in evaluation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    topics: BTreeMap<String, Vec<RunEntry>>,
}

impl Run {
    /// Groups, sorts and renumbers entries. Fails on a repeated document
    /// within a topic; `line` in the error is the 1-based entry position.
    pub fn from_entries(entries: impl IntoIterator<Item = RunEntry>) -> Result<Self> {
        let mut topics: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
        let mut seen: HashMap<(String, String), ()> = HashMap::new();
        for (i, e) in entries.into_iter().enumerate() {
            if seen
                .insert((e.topic_id.clone(), e.doc_id.clone()), ())
                .is_some()
            {
                return Err(TrecError::DuplicateRunDoc {
                    line: i + 1,
                    topic_id: e.topic_id,
                    doc_id: e.doc_id,
                });
            }
            topics.entry(e.topic_id.clone()).or_default().push(e);
        }
        for list in topics.values_mut() {
            list.sort_by(evaluation_order);
            for (i, e) in list.iter_mut().enumerate() {
                e.rank = i + 1;
            }
        }
        Ok(Self { topics })
    }

    /// Builds a run from an already ordered doc list per topic, assigning
    /// strictly decreasing scores so the stored order is the given one.
    pub fn from_rankings<'a, I, D>(rankings: I, tag: &str) -> Self
    where
        I: IntoIterator<Item = (&'a str, D)>,
        D: IntoIterator<Item = String>,
    {
        let mut topics = BTreeMap::new();
        for (topic_id, docs) in rankings {
            let docs: Vec<String> = docs.into_iter().collect();
            let n = docs.len();
            let entries = docs
                .into_iter()
                .enumerate()
                .map(|(i, doc_id)| RunEntry {
                    topic_id: topic_id.to_string(),
                    doc_id,
                    rank: i + 1,
                    score: (n - i) as f64,
                    tag: tag.to_string(),
                })
                .collect();
            topics.insert(topic_id.to_string(), entries);
        }
        Self { topics }
    }

    pub fn entries(&self, topic_id: &str) -> Option<&[RunEntry]> {
        self.topics.get(topic_id).map(Vec::as_slice)
    }

    pub fn ranked_docs(&self, topic_id: &str) -> Option<Vec<&str>> {
        self.entries(topic_id)
            .map(|es| es.iter().map(|e| e.doc_id.as_str()).collect())
    }

    pub fn topic_ids(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    pub fn num_topics(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }
}

/// Parses `topic_id Q0 doc_id rank score tag` lines. The rank column is read
/// but replaced by the position after sorting.
pub fn parse_run(text: &str) -> Result<Run> {
    let mut entries = Vec::new();
    let mut lines = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [topic_id, _q0, doc_id, rank, score, tag] = fields[..] else {
            return Err(malformed(
                lineno,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        };
        let rank: usize = rank
            .parse()
            .map_err(|_| malformed(lineno, format!("invalid rank `{rank}`")))?;
        let score: f64 = score
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| malformed(lineno, format!("invalid score `{score}`")))?;
        entries.push(RunEntry {
            topic_id: topic_id.to_string(),
            doc_id: doc_id.to_string(),
            rank,
            score,
            tag: tag.to_string(),
        });
        lines.push(lineno);
    }
    Run::from_entries(entries).map_err(|e| match e {
        TrecError::DuplicateRunDoc {
            line,
            topic_id,
            doc_id,
        } => TrecError::DuplicateRunDoc {
            line: lines[line - 1],
            topic_id,
            doc_id,
        },
        other => other,
    })
}

pub fn write_run(run: &Run) -> String {
    let mut out = String::new();
    for entries in run.topics.values() {
        for e in entries {
            let _ = writeln!(
                out,
                "{} Q0 {} {} {} {}",
                e.topic_id, e.doc_id, e.rank, e.score, e.tag
            );
        }
    }
    out
}

#[derive(Debug, Deserialize)]
struct CorpusLine {
    doc_id: String,
    text: String,
}

/// Passage texts keyed by document id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: HashMap<String, String>,
}

impl Corpus {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut docs = HashMap::new();
        for (id, text) in pairs {
            if docs.insert(id.clone(), text).is_some() {
                return Err(TrecError::DuplicateDoc(id));
            }
        }
        Ok(Self { docs })
    }

    pub fn get(&self, doc_id: &str) -> Option<&str> {
        self.docs.get(doc_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Parses `{"doc_id": ..., "text": ...}` lines.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut docs = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusLine =
            serde_json::from_str(line).map_err(|e| malformed(lineno, e.to_string()))?;
        if rec.text.trim().is_empty() {
            return Err(malformed(
                lineno,
                format!("document {} has empty text", rec.doc_id),
            ));
        }
        if docs.insert(rec.doc_id.clone(), rec.text).is_some() {
            return Err(TrecError::DuplicateDoc(rec.doc_id));
        }
    }
    Ok(Corpus { docs })
}

/// Stable 64-bit value derived from a string, used to give every topic its
/// own random stream under one seed.
pub(crate) fn stream_id(key: &str) -> u64 {
    let digest = Sha256::digest(key.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Draws up to `n` distinct relevant passages (grade > 0) for a topic,
/// uniformly without replacement. Relevant documents missing from the corpus
/// are skipped with a warning.
pub fn sample_relevant_passages(
    qrels: &QrelsSet,
    corpus: &Corpus,
    topic_id: &str,
    n: usize,
    seed: u64,
) -> Result<Vec<(String, String)>> {
    if n == 0 {
        return Err(TrecError::EmptySample);
    }
    let judged = qrels
        .judgments(topic_id)
        .ok_or_else(|| TrecError::UnknownTopic(topic_id.to_string()))?;
    let mut usable = Vec::new();
    for (doc_id, _) in judged.iter().filter(|(_, &g)| g > 0) {
        match corpus.get(doc_id) {
            Some(text) => usable.push((doc_id.clone(), text.to_string())),
            None => log::warn!("topic {topic_id}: relevant document {doc_id} missing from corpus"),
        }
    }
    if usable.is_empty() {
        return Err(TrecError::NoRelevantPassages(topic_id.to_string()));
    }
    if usable.len() <= n {
        return Ok(usable);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(topic_id));
    let mut picked = rand::seq::index::sample(&mut rng, usable.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| usable[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn qrels_single_line() {
        let q = parse_qrels("301 0 FBIS3-10082 1").unwrap();
        assert_eq!(q.judgments("301").unwrap()["FBIS3-10082"], 1);
    }

    #[test]
    fn qrels_grade_partition() {
        let q = parse_qrels("301 0 d1 2\n301 0 d2 0").unwrap();
        assert_eq!(q.num_relevant("301"), 1);
        assert_eq!(q.judgments("301").unwrap().len(), 2);
    }

    #[test]
    fn qrels_bad_grade_reports_line() {
        let err = parse_qrels("301 0 d1 x").unwrap_err();
        assert!(matches!(err, TrecError::Malformed { line: 1, .. }), "{err}");
        let err = parse_qrels("301 0 d1 1\n\n301 0 d2").unwrap_err();
        assert!(matches!(err, TrecError::Malformed { line: 3, .. }), "{err}");
        assert!(parse_qrels("301 0 d1 -1").is_err());
    }

    #[test]
    fn qrels_duplicate_rejected() {
        let err = parse_qrels("301 0 d1 1\n301 0 d1 2").unwrap_err();
        assert!(matches!(err, TrecError::DuplicateJudgment { line: 2, .. }));
    }

    #[test]
    fn run_single_line() {
        let r = parse_run("1 Q0 dA 1 12.5 splade").unwrap();
        let e = &r.entries("1").unwrap()[0];
        assert_eq!((e.doc_id.as_str(), e.rank, e.score), ("dA", 1, 12.5));
        assert_eq!(e.tag, "splade");
    }

    #[test]
    fn run_ties_break_on_doc_id_descending() {
        let r = parse_run("1 Q0 dA 1 3.0 t\n1 Q0 dB 2 3.0 t\n1 Q0 dC 3 4.0 t").unwrap();
        assert_eq!(r.ranked_docs("1").unwrap(), vec!["dC", "dB", "dA"]);
        let ranks: Vec<usize> = r.entries("1").unwrap().iter().map(|e| e.rank).collect();
        assert_eq!(ranks, vec![1, 2, 3]);
    }

    #[test]
    fn run_duplicate_doc_rejected() {
        let err = parse_run("1 Q0 dA 1 12.5 splade\n1 Q0 dA 2 11.0 splade").unwrap_err();
        assert!(
            matches!(err, TrecError::DuplicateRunDoc { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn run_malformed_lines() {
        assert!(parse_run("1 Q0 dA 1 12.5").is_err());
        assert!(parse_run("1 Q0 dA x 12.5 t").is_err());
        assert!(parse_run("1 Q0 dA 1 NaN t").is_err());
    }

    #[test]
    fn write_empty_run() {
        assert_eq!(write_run(&Run::default()), "");
    }

    #[test]
    fn write_hundred_entries() {
        let text: String = (0..100)
            .map(|i| format!("7 Q0 d{i} {} {} tag\n", i + 1, 100 - i))
            .collect();
        let run = parse_run(&text).unwrap();
        let out = write_run(&run);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 100);
        for (i, l) in lines.iter().enumerate() {
            assert_eq!(l.split_whitespace().nth(3).unwrap(), (i + 1).to_string());
        }
    }

    #[test]
    fn topics_tsv_and_jsonl() {
        let tsv = parse_topics("301\tinternational organized crime\n302\tpolio\n").unwrap();
        assert_eq!(tsv.text("302"), Some("polio"));
        let jsonl = parse_topics("{\"topic_id\":\"1\",\"text\":\"q one\"}\n").unwrap();
        assert_eq!(jsonl.text("1"), Some("q one"));
        assert!(parse_topics("1\tx\n1\ty").is_err());
        assert!(parse_topics("1\t  ").is_err());
    }

    #[test]
    fn corpus_validation() {
        let c = parse_corpus("{\"doc_id\":\"a\",\"text\":\"alpha\"}\n").unwrap();
        assert_eq!(c.get("a"), Some("alpha"));
        assert!(parse_corpus("{\"doc_id\":\"a\",\"text\":\"\"}").is_err());
        assert!(parse_corpus(
            "{\"doc_id\":\"a\",\"text\":\"x\"}\n{\"doc_id\":\"a\",\"text\":\"y\"}"
        )
        .is_err());
    }

    fn fixture(n_rel: usize) -> (QrelsSet, Corpus) {
        let mut qrels = Vec::new();
        let mut docs = Vec::new();
        for i in 0..n_rel {
            qrels.push(Qrel {
                topic_id: "t".into(),
                doc_id: format!("d{i:02}"),
                grade: 1 + (i % 2) as u32,
            });
            docs.push((format!("d{i:02}"), format!("passage {i}")));
        }
        qrels.push(Qrel {
            topic_id: "t".into(),
            doc_id: "nonrel".into(),
            grade: 0,
        });
        docs.push(("nonrel".into(), "not relevant".into()));
        (
            QrelsSet::from_qrels(qrels).unwrap(),
            Corpus::from_pairs(docs).unwrap(),
        )
    }

    #[test]
    fn sampling_fewer_than_requested() {
        let (q, c) = fixture(3);
        let got = sample_relevant_passages(&q, &c, "t", 5, 1).unwrap();
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn sampling_is_deterministic() {
        let (q, c) = fixture(20);
        let a = sample_relevant_passages(&q, &c, "t", 5, 42).unwrap();
        let b = sample_relevant_passages(&q, &c, "t", 5, 42).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
        let other = sample_relevant_passages(&q, &c, "t", 5, 43).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn sampling_skips_missing_and_errors_when_empty() {
        let q = parse_qrels("t 0 gone 1\nt 0 here 1\nu 0 gone 2\nu 0 here 0").unwrap();
        let c = Corpus::from_pairs([("here".to_string(), "text".to_string())]).unwrap();
        let got = sample_relevant_passages(&q, &c, "t", 5, 0).unwrap();
        assert_eq!(got, vec![("here".to_string(), "text".to_string())]);
        assert!(matches!(
            sample_relevant_passages(&q, &c, "u", 5, 0),
            Err(TrecError::NoRelevantPassages(t)) if t == "u"
        ));
        assert!(matches!(
            sample_relevant_passages(&q, &c, "zzz", 5, 0),
            Err(TrecError::UnknownTopic(_))
        ));
        assert!(matches!(
            sample_relevant_passages(&q, &c, "t", 0, 0),
            Err(TrecError::EmptySample)
        ));
    }

    proptest! {
        #[test]
        fn run_round_trip(
            topics in proptest::collection::btree_map(
                "[0-9]{1,3}",
                proptest::collection::btree_map("[a-zA-Z0-9-]{1,8}", -1e6f64..1e6, 1..15),
                0..5,
            )
        ) {
            let entries = topics.iter().flat_map(|(t, docs)| docs.iter().map(move |(d, s)| RunEntry {
                topic_id: t.clone(), doc_id: d.clone(), rank: 0, score: *s, tag: "tag".into(),
            }));
            let run = Run::from_entries(entries).unwrap();
            let reparsed = parse_run(&write_run(&run)).unwrap();
            prop_assert_eq!(&reparsed, &run);
            for t in run.topic_ids() {
                let es = run.entries(t).unwrap();
                for (i, w) in es.windows(2).enumerate() {
                    prop_assert!(evaluation_order(&w[0], &w[1]) != Ordering::Greater);
                    prop_assert_eq!(w[0].rank, i + 1);
                }
            }
        }

        #[test]
        fn qrels_round_trip(
            topics in proptest::collection::btree_map(
                "[0-9]{1,3}",
                proptest::collection::btree_map("[a-zA-Z0-9-]{1,8}", 0u32..4, 1..10),
                0..5,
            )
        ) {
            let qrels = QrelsSet::from_qrels(topics.iter().flat_map(|(t, docs)| docs.iter().map(move |(d, g)| Qrel {
                topic_id: t.clone(), doc_id: d.clone(), grade: *g,
            }))).unwrap();
            prop_assert_eq!(parse_qrels(&write_qrels(&qrels)).unwrap(), qrels);
        }

        #[test]
        fn sample_is_subset_of_relevant(n_rel in 1usize..30, n in 1usize..8, seed: u64) {
            let (q, c) = fixture(n_rel);
            let got = sample_relevant_passages(&q, &c, "t", n, seed).unwrap();
            prop_assert_eq!(got.len(), n.min(n_rel));
            let judged = q.judgments("t").unwrap();
            let mut ids: Vec<&String> = got.iter().map(|(d, _)| d).collect();
            prop_assert!(ids.iter().all(|d| judged[*d] > 0));
            ids.dedup();
            prop_assert_eq!(ids.len(), got.len());
        }
    }
}
