//! Contamination quiz over relevance-judged passages.
//!
//! Each quiz item pairs an original relevant passage with three paraphrases.
//! The item is asked four times with the original rotated through every
//! option slot, so a model with a positional preference cannot score above
//! chance without recognising the original text. Accuracy per slot is
//! corrected for the 1/4 guessing rate and the reported contamination level
//! is the `[min, max]` over slots.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_client::{self, ChatModel, LlmError};
use crate::trec_io::{self, Corpus, QrelsSet, TopicSet, TrecError};

/// Options per question.
pub const NUM_OPTIONS: usize = 4;
/// Paraphrases kept per item; the remaining option slot holds the original.
pub const NUM_DISTRACTORS: usize = NUM_OPTIONS - 1;

pub const DEFAULT_QUIZ_TEMPLATE: &str = include_str!("../prompts/dcq_quiz.txt");

const OPTION_PLACEHOLDERS: [&str; NUM_OPTIONS] =
    ["{option_a}", "{option_b}", "{option_c}", "{option_d}"];

#[derive(Debug, Error)]
pub enum DcqError {
    #[error(transparent)]
    Trec(#[from] TrecError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("item {item_id}: only {valid} usable paraphrases after {attempts} attempts")]
    ParaphraseExhausted {
        item_id: String,
        valid: usize,
        attempts: u32,
    },
    #[error("item {0} is incomplete: needs exactly 3 distinct paraphrases")]
    IncompleteItem(String),
    #[error("prompt template is missing placeholder {0}")]
    Template(String),
    #[error("line {line}: {source}")]
    Jsonl {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

type Result<T> = std::result::Result<T, DcqError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizItem {
    pub item_id: String,
    pub topic_id: String,
    pub doc_id: String,
    pub topic_text: String,
    pub original: String,
    #[serde(default)]
    pub paraphrases: Vec<String>,
}

impl QuizItem {
    pub fn is_complete(&self) -> bool {
        self.paraphrases.len() == NUM_DISTRACTORS
            && distinct_texts(&self.original, &self.paraphrases)
    }
}

pub fn item_id(topic_id: &str, doc_id: &str) -> String {
    format!("{topic_id}/{doc_id}")
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn distinct_texts(original: &str, paraphrases: &[String]) -> bool {
    let mut seen = HashSet::new();
    seen.insert(normalize(original));
    paraphrases
        .iter()
        .all(|p| !p.trim().is_empty() && seen.insert(normalize(p)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizTrial {
    pub item_id: String,
    pub topic_id: String,
    pub doc_id: String,
    pub topic_text: String,
    pub permutation_index: usize,
    pub options: Vec<String>,
    pub gold_position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizAnswer {
    pub item_id: String,
    pub topic_id: String,
    pub doc_id: String,
    pub permutation_index: usize,
    pub gold_position: usize,
    /// `None` when no option letter could be read from the response.
    pub chosen_position: Option<usize>,
    pub raw_response: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl QuizAnswer {
    fn new(trial: &QuizTrial, chosen_position: Option<usize>, raw_response: String) -> Self {
        Self {
            item_id: trial.item_id.clone(),
            topic_id: trial.topic_id.clone(),
            doc_id: trial.doc_id.clone(),
            permutation_index: trial.permutation_index,
            gold_position: trial.gold_position,
            correct: chosen_position == Some(trial.gold_position),
            chosen_position,
            raw_response,
            error: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildOutcome {
    pub drafts: Vec<QuizItem>,
    /// Topics without any relevant passage present in the corpus.
    pub skipped_topics: Vec<String>,
}

/// One draft item (no paraphrases yet) per sampled relevant passage of each
/// topic in `topics` that is judged in `qrels`.
pub fn build_quiz_items(
    qrels: &QrelsSet,
    corpus: &Corpus,
    topics: &TopicSet,
    n_per_topic: usize,
    seed: u64,
) -> Result<BuildOutcome> {
    let mut out = BuildOutcome::default();
    for topic_id in topics.ids() {
        let topic_text = topics.text(topic_id).expect("listed topic has text");
        match trec_io::sample_relevant_passages(qrels, corpus, topic_id, n_per_topic, seed) {
            Ok(passages) => {
                out.drafts
                    .extend(passages.into_iter().map(|(doc_id, original)| QuizItem {
                        item_id: item_id(topic_id, &doc_id),
                        topic_id: topic_id.to_string(),
                        doc_id,
                        topic_text: topic_text.to_string(),
                        original,
                        paraphrases: Vec::new(),
                    }));
            }
            Err(TrecError::NoRelevantPassages(t) | TrecError::UnknownTopic(t)) => {
                log::warn!("topic {t}: no usable relevant passage, not quizzed");
                out.skipped_topics.push(t);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Requests `k` paraphrases per attempt and keeps the first three that
/// differ from the original and from each other after whitespace and case
/// normalisation. Gives up after `max_attempts`.
pub fn fill_paraphrases(
    draft: &QuizItem,
    paraphraser: &dyn ChatModel,
    k: usize,
    max_attempts: u32,
) -> Result<QuizItem> {
    let mut seen: HashSet<String> = HashSet::from([normalize(&draft.original)]);
    let mut kept: Vec<String> = Vec::new();
    let mut attempts = 0;
    while attempts < max_attempts && kept.len() < NUM_DISTRACTORS {
        let candidates =
            match llm_client::paraphrase_attempt(paraphraser, &draft.original, k, attempts) {
                Ok(c) => c,
                Err(LlmError::Format { msg, .. }) => {
                    log::warn!("item {}: {msg}", draft.item_id);
                    Vec::new()
                }
                Err(e) => return Err(e.into()),
            };
        attempts += 1;
        for c in candidates {
            let c = c.trim().to_string();
            if kept.len() < NUM_DISTRACTORS && !c.is_empty() && seen.insert(normalize(&c)) {
                kept.push(c);
            }
        }
    }
    if kept.len() < NUM_DISTRACTORS {
        return Err(DcqError::ParaphraseExhausted {
            item_id: draft.item_id.clone(),
            valid: kept.len(),
            attempts,
        });
    }
    Ok(QuizItem {
        paraphrases: kept,
        ..draft.clone()
    })
}

#[derive(Debug, Clone, Default)]
pub struct FillOutcome {
    pub items: Vec<QuizItem>,
    pub excluded: Vec<String>,
}

/// Fills every draft, excluding the ones whose paraphrase generation ran out
/// of attempts. Other errors abort.
pub fn fill_all(
    drafts: &[QuizItem],
    paraphraser: &dyn ChatModel,
    k: usize,
    max_attempts: u32,
    jobs: usize,
) -> Result<FillOutcome> {
    let results: Vec<Result<QuizItem>> = with_jobs(jobs, || {
        drafts
            .par_iter()
            .map(|d| fill_paraphrases(d, paraphraser, k, max_attempts))
            .collect()
    });
    let mut out = FillOutcome::default();
    for r in results {
        match r {
            Ok(item) => out.items.push(item),
            Err(DcqError::ParaphraseExhausted {
                item_id,
                valid,
                attempts,
            }) => {
                log::warn!("excluding {item_id}: {valid} paraphrases after {attempts} attempts");
                out.excluded.push(item_id);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Trial `p` puts the original at slot `p` and the paraphrases, in their
/// stored order, in the remaining slots.
pub fn assemble_trials(item: &QuizItem) -> Result<Vec<QuizTrial>> {
    if !item.is_complete() {
        return Err(DcqError::IncompleteItem(item.item_id.clone()));
    }
    Ok((0..NUM_OPTIONS)
        .map(|p| {
            let mut options = item.paraphrases.clone();
            options.insert(p, item.original.clone());
            QuizTrial {
                item_id: item.item_id.clone(),
                topic_id: item.topic_id.clone(),
                doc_id: item.doc_id.clone(),
                topic_text: item.topic_text.clone(),
                permutation_index: p,
                options,
                gold_position: p,
            }
        })
        .collect())
}

pub fn validate_template(template: &str) -> Result<()> {
    for ph in std::iter::once("{topic}").chain(OPTION_PLACEHOLDERS) {
        if !template.contains(ph) {
            return Err(DcqError::Template(ph.to_string()));
        }
    }
    Ok(())
}

pub fn render_prompt(template: &str, trial: &QuizTrial) -> String {
    let mut prompt = template.replace("{topic}", &trial.topic_text);
    for (ph, text) in OPTION_PLACEHOLDERS.iter().zip(&trial.options) {
        prompt = prompt.replace(ph, text);
    }
    prompt
}

/// Asks every trial once. Transport failures are recorded as unanswered
/// trials; configuration problems and missing replay fixtures abort.
pub fn run_quiz(
    trials: &[QuizTrial],
    model: &dyn ChatModel,
    template: &str,
    jobs: usize,
) -> Result<Vec<QuizAnswer>> {
    validate_template(template)?;
    let answers: Vec<Result<QuizAnswer>> = with_jobs(jobs, || {
        trials
            .par_iter()
            .map(|t| match model.complete(&render_prompt(template, t)) {
                Ok(raw) => Ok(QuizAnswer::new(t, parse_choice(&raw), raw)),
                Err(e @ LlmError::Transport { .. }) => {
                    log::warn!("trial {}#{}: {e}", t.item_id, t.permutation_index);
                    let mut a = QuizAnswer::new(t, None, String::new());
                    a.error = Some(e.to_string());
                    Ok(a)
                }
                Err(e) => Err(e.into()),
            })
            .collect()
    });
    answers.into_iter().collect()
}

fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn explicit_choice() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)(?:\b(?:option|answer|choice|passage)\s*(?:is\s*|:\s*)?[\(\[]?([a-d])\b)|(?:[\(\[]([a-d])[\)\]])",
        )
        .expect("valid regex")
    })
}

fn standalone_letter() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-Da-d])\b").expect("valid regex"))
}

/// Reads the chosen option from a free-text reply: 0..=3 for A..D.
///
/// Explicit mentions (`option C`, `answer: b`, `(c)`) win; otherwise the
/// first standalone letter is taken. A lone lowercase `a` inside a longer
/// reply is read as the article, not as option A.
pub fn parse_choice(raw: &str) -> Option<usize> {
    let index = |c: &str| {
        let b = c.as_bytes()[0].to_ascii_uppercase();
        usize::from(b - b'A')
    };
    if let Some(caps) = explicit_choice().captures(raw) {
        let letter = caps
            .get(1)
            .or_else(|| caps.get(2))
            .expect("one group matches");
        return Some(index(letter.as_str()));
    }
    let bare = raw.trim().trim_matches(|c: char| !c.is_alphanumeric());
    if bare.eq_ignore_ascii_case("a") {
        return Some(0);
    }
    standalone_letter()
        .find_iter(raw)
        .find(|m| m.as_str() != "a")
        .map(|m| index(m.as_str()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationReport {
    pub model_id: String,
    pub dataset_id: String,
    pub items_total: usize,
    pub per_position_accuracy: [f64; NUM_OPTIONS],
    pub corrected_per_position: [f64; NUM_OPTIONS],
    /// `[lo, hi]` fractions in `[0, 1]`.
    pub corrected_interval: [f64; 2],
    pub per_topic_flags: BTreeMap<String, bool>,
}

impl ContaminationReport {
    /// Interval as percentages with two decimals, e.g. `[26.12%, 31.95%]`.
    pub fn interval_display(&self) -> String {
        format_interval(self.corrected_interval)
    }

    pub fn contaminated_topics(&self) -> BTreeSet<String> {
        self.per_topic_flags
            .iter()
            .filter(|(_, &f)| f)
            .map(|(t, _)| t.clone())
            .collect()
    }
}

pub fn format_interval(interval: [f64; 2]) -> String {
    format!("[{:.2}%, {:.2}%]", interval[0] * 100.0, interval[1] * 100.0)
}

/// `max(0, (acc - 1/k) / (1 - 1/k))` for `k` options.
pub fn chance_corrected(accuracy: f64, k: usize) -> f64 {
    let chance = 1.0 / k as f64;
    ((accuracy - chance) / (1.0 - chance)).max(0.0)
}

/// Folds answers into per-slot accuracies over all `items`. A missing answer
/// counts as incorrect. A topic is flagged when any trial of any of its items
/// was answered correctly.
pub fn score_contamination(
    answers: &[QuizAnswer],
    items: &[QuizItem],
    model_id: &str,
    dataset_id: &str,
) -> ContaminationReport {
    let known: HashSet<&str> = items.iter().map(|i| i.item_id.as_str()).collect();
    let mut per_topic_flags: BTreeMap<String, bool> =
        items.iter().map(|i| (i.topic_id.clone(), false)).collect();
    let mut correct: HashSet<(&str, usize)> = HashSet::new();
    for a in answers
        .iter()
        .filter(|a| known.contains(a.item_id.as_str()))
    {
        let is_correct = a.correct && a.chosen_position == Some(a.gold_position);
        if is_correct && a.gold_position < NUM_OPTIONS {
            correct.insert((a.item_id.as_str(), a.gold_position));
            per_topic_flags.insert(a.topic_id.clone(), true);
        }
    }
    let mut per_position_accuracy = [0.0; NUM_OPTIONS];
    if !items.is_empty() {
        for (p, acc) in per_position_accuracy.iter_mut().enumerate() {
            let hits = correct.iter().filter(|(_, pos)| *pos == p).count();
            *acc = hits as f64 / items.len() as f64;
        }
    }
    let corrected_per_position = per_position_accuracy.map(|a| chance_corrected(a, NUM_OPTIONS));
    let lo = corrected_per_position
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = corrected_per_position
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    ContaminationReport {
        model_id: model_id.to_string(),
        dataset_id: dataset_id.to_string(),
        items_total: items.len(),
        per_position_accuracy,
        corrected_per_position,
        corrected_interval: [lo, hi],
        per_topic_flags,
    }
}

pub fn write_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| DcqError::Jsonl {
                line: i + 1,
                source,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trec_io::{parse_corpus, parse_qrels, parse_topics};
    use proptest::prelude::*;
    use std::sync::Mutex;

    fn item(id: &str, topic: &str) -> QuizItem {
        QuizItem {
            item_id: id.into(),
            topic_id: topic.into(),
            doc_id: id.into(),
            topic_text: "topic".into(),
            original: "O".into(),
            paraphrases: vec!["P1".into(), "P2".into(), "P3".into()],
        }
    }

    struct Replies(Mutex<Vec<&'static str>>);

    impl ChatModel for Replies {
        fn model_id(&self) -> &str {
            "replies"
        }
        fn complete(&self, _: &str) -> std::result::Result<String, LlmError> {
            let mut r = self.0.lock().unwrap();
            Ok(if r.is_empty() { "" } else { r.remove(0) }.to_string())
        }
    }

    #[test]
    fn builds_one_draft_per_sampled_passage() {
        let qrels = parse_qrels("1 0 a 1\n1 0 b 2\n1 0 c 0\n2 0 z 1").unwrap();
        let corpus = parse_corpus(
            "{\"doc_id\":\"a\",\"text\":\"alpha\"}\n{\"doc_id\":\"b\",\"text\":\"beta\"}\n{\"doc_id\":\"c\",\"text\":\"gamma\"}",
        )
        .unwrap();
        let topics = parse_topics("1\tfirst\n2\tsecond\n3\tthird").unwrap();
        let out = build_quiz_items(&qrels, &corpus, &topics, 5, 9).unwrap();
        assert_eq!(out.drafts.len(), 2);
        assert_eq!(out.drafts[0].item_id, "1/a");
        assert!(out.drafts.iter().all(|d| d.paraphrases.is_empty()));
        assert_eq!(out.skipped_topics, vec!["2".to_string(), "3".to_string()]);
        assert_eq!(
            out,
            build_quiz_items(&qrels, &corpus, &topics, 5, 9).unwrap()
        );
    }

    #[test]
    fn keeps_first_three_valid_paraphrases() {
        let model = Replies(Mutex::new(vec!["1. one\n2. two\n3. three\n4. four"]));
        let mut d = item("x", "t");
        d.paraphrases.clear();
        let filled = fill_paraphrases(&d, &model, 4, 3).unwrap();
        assert_eq!(filled.paraphrases, vec!["one", "two", "three"]);
    }

    #[test]
    fn verbatim_copy_triggers_regeneration() {
        let model = Replies(Mutex::new(vec![
            "1. o\n2. one\n3.   ONE \n4. two",
            "1. three\n2. four",
        ]));
        let mut d = item("x", "t");
        d.paraphrases.clear();
        let filled = fill_paraphrases(&d, &model, 4, 3).unwrap();
        assert_eq!(filled.paraphrases, vec!["one", "two", "three"]);
    }

    #[test]
    fn exhausted_paraphrases_exclude_item() {
        let model = Replies(Mutex::new(vec![
            "1. one\n2. two",
            "1. one\n2. two",
            "garbage",
        ]));
        let mut d = item("x", "t");
        d.paraphrases.clear();
        match fill_paraphrases(&d, &model, 4, 3) {
            Err(DcqError::ParaphraseExhausted {
                valid: 2,
                attempts: 3,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let model = Replies(Mutex::new(vec!["1. one\n2. two"]));
        let out = fill_all(&[d], &model, 4, 1, 1).unwrap();
        assert!(out.items.is_empty());
        assert_eq!(out.excluded, vec!["x".to_string()]);
    }

    #[test]
    fn trial_rotation() {
        let trials = assemble_trials(&item("x", "t")).unwrap();
        assert_eq!(trials.len(), 4);
        assert_eq!(trials[0].options, vec!["O", "P1", "P2", "P3"]);
        assert_eq!(trials[2].options, vec!["P1", "P2", "O", "P3"]);
        let golds: BTreeSet<usize> = trials.iter().map(|t| t.gold_position).collect();
        assert_eq!(golds, (0..4).collect());
        for t in &trials {
            assert_eq!(t.options.iter().filter(|o| *o == "O").count(), 1);
            assert_eq!(t.options[t.gold_position], "O");
            assert_eq!(t.permutation_index, t.gold_position);
        }
        let mut broken = item("y", "t");
        broken.paraphrases[1] = "o".into();
        assert!(assemble_trials(&broken).is_err());
    }

    #[test]
    fn choice_parsing() {
        let cases = [
            ("A", Some(0)),
            ("B", Some(1)),
            ("c", Some(2)),
            ("a.", Some(0)),
            ("I believe the answer is D.", Some(3)),
            ("The original is option (c).", Some(2)),
            ("Option C", Some(2)),
            ("Answer: b", Some(1)),
            ("**B**", Some(1)),
            ("both A and B", Some(0)),
            ("It is a tricky one, but B", Some(1)),
            ("none of these", None),
            ("", None),
        ];
        for (raw, want) in cases {
            assert_eq!(parse_choice(raw), want, "{raw:?}");
        }
    }

    #[test]
    fn quiz_records_answers() {
        let trials = assemble_trials(&item("x", "t")).unwrap();
        let model = Replies(Mutex::new(vec!["B"; 4]));
        let answers = run_quiz(&trials, &model, DEFAULT_QUIZ_TEMPLATE, 1).unwrap();
        assert_eq!(answers.len(), 4);
        assert!(answers[1].correct);
        assert!(!answers[0].correct);
        let model = Replies(Mutex::new(vec!["none of these"; 4]));
        let answers = run_quiz(&trials, &model, DEFAULT_QUIZ_TEMPLATE, 2).unwrap();
        assert!(answers
            .iter()
            .all(|a| a.chosen_position.is_none() && !a.correct));
        assert!(run_quiz(&trials, &model, "no placeholders", 1).is_err());
    }

    #[test]
    fn prompt_contains_topic_and_options() {
        let trials = assemble_trials(&item("x", "t")).unwrap();
        let p = render_prompt(DEFAULT_QUIZ_TEMPLATE, &trials[1]);
        assert!(p.contains("Topic: topic"));
        assert!(p.contains("A) P1") && p.contains("B) O") && p.contains("D) P3"));
    }

    fn answers_with(correct: &[(usize, usize)], items: &[QuizItem]) -> Vec<QuizAnswer> {
        // (item index, gold position) pairs answered correctly; everything else wrong
        let mut out = Vec::new();
        for (i, it) in items.iter().enumerate() {
            for t in assemble_trials(it).unwrap() {
                let ok = correct.contains(&(i, t.gold_position));
                let chosen = if ok {
                    t.gold_position
                } else {
                    (t.gold_position + 1) % 4
                };
                out.push(QuizAnswer::new(&t, Some(chosen), String::new()));
            }
        }
        out
    }

    #[test]
    fn all_correct_and_chance_level() {
        let items: Vec<QuizItem> = (0..4).map(|i| item(&format!("i{i}"), "t")).collect();
        let all: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..4).map(move |p| (i, p))).collect();
        let r = score_contamination(&answers_with(&all, &items), &items, "m", "d");
        assert_eq!(r.corrected_interval, [1.0, 1.0]);
        assert_eq!(r.interval_display(), "[100.00%, 100.00%]");
        // one of four items correct at every slot: accuracy 0.25
        let chance: Vec<(usize, usize)> = (0..4).map(|p| (p, p)).collect();
        let r = score_contamination(&answers_with(&chance, &items), &items, "m", "d");
        assert_eq!(r.per_position_accuracy, [0.25; 4]);
        assert_eq!(r.corrected_interval, [0.0, 0.0]);
    }

    #[test]
    fn correction_arithmetic() {
        let got: Vec<f64> = [0.40, 0.43, 0.44, 0.46]
            .iter()
            .map(|&a| chance_corrected(a, 4))
            .collect();
        let want = [0.20, 0.24, 0.253_333_333_333, 0.28];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
        assert_eq!(chance_corrected(0.1, 4), 0.0);
        assert_eq!(format_interval([0.20, 0.28]), "[20.00%, 28.00%]");
    }

    #[test]
    fn missing_and_invalid_answers_count_wrong() {
        let items = vec![item("a", "t1"), item("b", "t2")];
        let trials = assemble_trials(&items[0]).unwrap();
        let answers = vec![
            QuizAnswer::new(&trials[0], Some(0), "A".into()),
            QuizAnswer::new(&trials[1], None, "?".into()),
        ];
        let r = score_contamination(&answers, &items, "m", "d");
        assert_eq!(r.per_position_accuracy, [0.5, 0.0, 0.0, 0.0]);
        assert!(r.per_topic_flags["t1"]);
        assert!(!r.per_topic_flags["t2"]);
        assert_eq!(r.contaminated_topics().len(), 1);
    }

    #[test]
    fn jsonl_round_trip() {
        let items = vec![item("a", "t1"), item("b", "t2")];
        let text = write_jsonl(&items);
        assert_eq!(read_jsonl::<QuizItem>(&text).unwrap(), items);
        assert!(matches!(
            read_jsonl::<QuizItem>("{}\n"),
            Err(DcqError::Jsonl { line: 1, .. })
        ));
        let trials = assemble_trials(&items[0]).unwrap();
        let line = write_jsonl(&[QuizAnswer::new(&trials[0], None, "x".into())]);
        for field in [
            "item_id",
            "topic_id",
            "doc_id",
            "gold_position",
            "chosen_position",
            "raw_response",
        ] {
            assert!(line.contains(&format!("\"{field}\"")), "{field}");
        }
        assert!(line.contains("\"chosen_position\":null"));
    }

    proptest! {
        #[test]
        fn flags_are_monotone(
            base in proptest::collection::vec((0usize..6, 0usize..4), 0..12),
            extra in (0usize..6, 0usize..4),
        ) {
            let items: Vec<QuizItem> = (0..6).map(|i| item(&format!("i{i}"), &format!("t{}", i % 3))).collect();
            let before = score_contamination(&answers_with(&base, &items), &items, "m", "d");
            let mut more = base.clone();
            more.push(extra);
            let after = score_contamination(&answers_with(&more, &items), &items, "m", "d");
            for (t, flagged) in &before.per_topic_flags {
                prop_assert!(!flagged || after.per_topic_flags[t]);
            }
            prop_assert!(after.corrected_interval[1] >= before.corrected_interval[1]);
        }

        #[test]
        fn interval_ignores_paraphrase_order(
            correct in proptest::collection::vec((0usize..5, 0usize..4), 0..15),
            perm in Just([0usize, 1, 2]).prop_shuffle(),
        ) {
            let items: Vec<QuizItem> = (0..5).map(|i| item(&format!("i{i}"), "t")).collect();
            let shuffled: Vec<QuizItem> = items.iter().map(|it| {
                let mut s = it.clone();
                s.paraphrases = perm.iter().map(|&j| it.paraphrases[j].clone()).collect();
                s
            }).collect();
            let a = score_contamination(&answers_with(&correct, &items), &items, "m", "d");
            let b = score_contamination(&answers_with(&correct, &shuffled), &shuffled, "m", "d");
            prop_assert_eq!(a.corrected_interval, b.corrected_interval);
        }
    }
}
