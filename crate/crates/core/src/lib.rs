//! Contamination-aware evaluation for IR test collections.
//!
//! The crate covers the full pipeline used to judge whether LLM reranking
//! gains on a benchmark could be explained by memorized test data:
//!
//! - [`trec_io`]: qrels, runs, topics and passage corpora in TREC text formats
//! - [`metrics`]: `ndcg@k` and MAP with reference-evaluator semantics
//! - [`dcq`]: multiple-choice contamination quiz built from relevant passages
//! - [`llm_client`]: chat-completion client with retries and a replayable cache
//! - [`rerank`]: sliding-window listwise reranking through a chat model
//! - [`contamination_eval`]: contaminated-topic filtering and bootstrap CIs
//! - [`trends`]: longitudinal analysis of results extracted from the literature
//! - [`cli`]: the `ircontam` command-line front end

pub mod cli;
pub mod contamination_eval;
pub mod dcq;
pub mod llm_client;
pub mod metrics;
pub mod rerank;
pub mod trec_io;
pub mod trends;

/// Version string embedded into every artifact the CLI writes.
pub const TOOLKIT_VERSION: &str = concat!("ircontam ", env!("CARGO_PKG_VERSION"));
