//! Sliding-window listwise reranking.
//!
//! The top `depth` candidates are reordered by a chat model that sees
//! `window_size` numbered passages at a time. Windows move from the bottom
//! of the list to the top in steps of `stride`, so strong documents can
//! bubble up across windows. Candidates below `depth` keep their order.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use thiserror::Error;

use crate::llm_client::{ChatModel, LlmError};
use crate::trec_io::{Corpus, Run, Topic, TopicSet};

pub const DEFAULT_RERANK_TEMPLATE: &str = include_str!("../prompts/rerank_listwise.txt");

#[derive(Debug, Error)]
pub enum RerankError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("invalid rerank configuration: {0}")]
    Config(String),
    #[error("topic {topic_id}: no text for candidate {doc_id}")]
    MissingPassage { topic_id: String, doc_id: String },
    #[error("topic {0} has no query text")]
    MissingTopic(String),
}

type Result<T> = std::result::Result<T, RerankError>;

#[derive(Debug, Clone, PartialEq)]
pub struct RerankConfig {
    pub depth: usize,
    pub window_size: usize,
    pub stride: usize,
    /// Whitespace tokens kept per passage in the prompt.
    pub max_words: usize,
    pub prompt_template: String,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            depth: 100,
            window_size: 20,
            stride: 10,
            max_words: 300,
            prompt_template: DEFAULT_RERANK_TEMPLATE.to_string(),
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.stride && self.stride <= self.window_size && self.window_size <= self.depth)
        {
            return Err(RerankError::Config(format!(
                "need 1 <= stride ({}) <= window_size ({}) <= depth ({})",
                self.stride, self.window_size, self.depth
            )));
        }
        for ph in ["{topic}", "{passages}"] {
            if !self.prompt_template.contains(ph) {
                return Err(RerankError::Config(format!("prompt template lacks {ph}")));
            }
        }
        Ok(())
    }
}

fn bracketed() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[(\d+)\]").expect("valid regex"))
}

/// Reads a `[3] > [1] > [2]` style answer into a permutation of
/// `1..=window_len`. Out-of-range and repeated identifiers are dropped and
/// identifiers never mentioned are appended in ascending order.
pub fn parse_permutation(raw: &str, window_len: usize) -> Vec<usize> {
    let mut seen = vec![false; window_len + 1];
    let mut perm = Vec::with_capacity(window_len);
    for caps in bracketed().captures_iter(raw) {
        let Ok(idx) = caps[1].parse::<usize>() else {
            continue;
        };
        if (1..=window_len).contains(&idx) && !seen[idx] {
            seen[idx] = true;
            perm.push(idx);
        }
    }
    perm.extend((1..=window_len).filter(|&i| !seen[i]));
    perm
}

fn truncate_words(text: &str, max_words: usize) -> String {
    text.split_whitespace()
        .take(max_words)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn render_window_prompt(
    template: &str,
    topic: &str,
    passages: &[&str],
    max_words: usize,
) -> String {
    let listed = passages
        .iter()
        .enumerate()
        .map(|(i, p)| format!("[{}] {}", i + 1, truncate_words(p, max_words)))
        .collect::<Vec<_>>()
        .join("\n");
    template
        .replace("{num}", &passages.len().to_string())
        .replace("{topic}", topic)
        .replace("{passages}", &listed)
}

/// Reranks one topic's ordered `(doc_id, text)` candidates and returns the
/// full doc id list: reordered head followed by the untouched tail.
pub fn rerank_topic(
    topic: &Topic,
    candidates: &[(String, String)],
    config: &RerankConfig,
    model: &dyn ChatModel,
) -> Result<Vec<String>> {
    config.validate()?;
    let head_len = candidates.len().min(config.depth);
    let mut order: Vec<usize> = (0..head_len).collect();
    if head_len > 1 {
        let mut end = head_len;
        loop {
            let start = end.saturating_sub(config.window_size);
            let window = &order[start..end];
            let texts: Vec<&str> = window.iter().map(|&i| candidates[i].1.as_str()).collect();
            let prompt = render_window_prompt(
                &config.prompt_template,
                &topic.text,
                &texts,
                config.max_words,
            );
            let raw = model.complete(&prompt)?;
            if !bracketed().is_match(&raw) {
                log::warn!(
                    "topic {}: unparseable ranking for window {start}..{end}, order kept",
                    topic.topic_id
                );
            }
            let perm = parse_permutation(&raw, window.len());
            let reordered: Vec<usize> = perm.iter().map(|&p| window[p - 1]).collect();
            order[start..end].copy_from_slice(&reordered);
            if start == 0 {
                break;
            }
            end -= config.stride;
        }
    }
    Ok(order
        .into_iter()
        .chain(head_len..candidates.len())
        .map(|i| candidates[i].0.clone())
        .collect())
}

/// Reranks every topic of `run`, topics in parallel. The output run is
/// tagged `<model>-rerank`.
pub fn rerank_run(
    run: &Run,
    corpus: &Corpus,
    topics: &TopicSet,
    config: &RerankConfig,
    model: &dyn ChatModel,
    jobs: usize,
) -> Result<Run> {
    config.validate()?;
    let topic_ids: Vec<&str> = run.topic_ids().collect();
    let work = || {
        topic_ids
            .par_iter()
            .map(|&t| {
                let text = topics
                    .text(t)
                    .ok_or_else(|| RerankError::MissingTopic(t.to_string()))?;
                let candidates = run
                    .entries(t)
                    .unwrap_or_default()
                    .iter()
                    .map(|e| {
                        corpus
                            .get(&e.doc_id)
                            .map(|txt| (e.doc_id.clone(), txt.to_string()))
                            .ok_or_else(|| RerankError::MissingPassage {
                                topic_id: t.to_string(),
                                doc_id: e.doc_id.clone(),
                            })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let topic = Topic {
                    topic_id: t.to_string(),
                    text: text.to_string(),
                };
                Ok((t, rerank_topic(&topic, &candidates, config, model)?))
            })
            .collect::<Result<BTreeMap<&str, Vec<String>>>>()
    };
    let ranked = match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
    {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }?;
    let tag = format!("{}-rerank", model.model_id());
    Ok(Run::from_rankings(ranked, &tag))
}
