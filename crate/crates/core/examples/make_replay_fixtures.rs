//! Regenerates `tests/fixtures/replay`: a small synthetic collection, a
//! response cache recorded from a deterministic local chat server, and the
//! expected pipeline outputs when replaying that cache offline.
//!
//!     cargo run --example make_replay_fixtures

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const THEMES: [(&str, &str); 8] = [
    ("volcanic", "eruptions"),
    ("coral", "bleaching"),
    ("solar", "panels"),
    ("railway", "signalling"),
    ("honey", "bees"),
    ("glacier", "retreat"),
    ("vaccine", "trials"),
    ("tidal", "energy"),
];

const FILLER: [&str; 40] = [
    "the",
    "study",
    "reports",
    "regional",
    "data",
    "over",
    "several",
    "years",
    "with",
    "new",
    "measurements",
    "showing",
    "clear",
    "changes",
    "in",
    "local",
    "conditions",
    "and",
    "wider",
    "effects",
    "on",
    "communities",
    "experts",
    "noted",
    "that",
    "long",
    "term",
    "monitoring",
    "remains",
    "limited",
    "while",
    "funding",
    "for",
    "research",
    "grew",
    "steadily",
    "across",
    "public",
    "agencies",
    "recently",
];

fn digest(text: &str) -> u64 {
    let d = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn sentence(rng: &mut ChaCha8Rng, keywords: &[&str], len: usize) -> String {
    let mut words: Vec<String> = (0..len)
        .map(|_| FILLER[rng.random_range(0..FILLER.len())].to_string())
        .collect();
    for k in keywords {
        let at = rng.random_range(0..=words.len());
        words.insert(at, k.to_string());
    }
    let mut s = words.join(" ");
    s[..1].make_ascii_uppercase();
    s + "."
}

fn write(path: &Path, text: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

fn make_collection(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let mut topics = String::new();
    let mut corpus = String::new();
    let mut qrels = String::new();
    let mut run = String::new();
    for (t, (a, b)) in THEMES.iter().enumerate() {
        let tid = format!("{}", 801 + t);
        writeln!(topics, "{tid}\t{a} {b} impact").unwrap();
        let mut docs = Vec::new();
        for d in 0..10 {
            let doc = format!("T{tid}-{d:02}");
            let grade = match d {
                0 | 1 => 2,
                2..=4 => 1,
                _ => 0,
            };
            let keywords: Vec<&str> = match grade {
                2 => vec![a, b, a],
                1 => vec![a, b],
                _ => vec![if d % 2 == 0 { a } else { b }],
            };
            let text = format!(
                "{} {}",
                sentence(&mut rng, &keywords, 14),
                sentence(&mut rng, &[], 10)
            );
            // the last topic's relevant passages are judged but absent from the corpus
            let in_corpus = !(t == THEMES.len() - 1 && grade > 0);
            if in_corpus {
                corpus.push_str(&json!({"doc_id": doc, "text": text}).to_string());
                corpus.push('\n');
                docs.push(doc.clone());
            }
            if grade > 0 || d < 8 {
                writeln!(qrels, "{tid} 0 {doc} {grade}").unwrap();
            }
        }
        docs.extend((0..3).map(|n| format!("N-{n:02}")));
        let mut candidates = docs;
        candidates.shuffle(&mut rng);
        for (rank, doc) in candidates.iter().enumerate() {
            writeln!(run, "{tid} Q0 {doc} {} {} bm25", rank + 1, 20 - rank).unwrap();
        }
    }
    // unjudged noise passages shared by all topics
    for n in 0..6 {
        let doc = format!("N-{n:02}");
        let text = sentence(&mut rng, &[], 20);
        corpus.push_str(&json!({"doc_id": doc, "text": text}).to_string());
        corpus.push('\n');
    }
    write(&dir.join("topics.tsv"), &topics);
    write(&dir.join("corpus.jsonl"), &corpus);
    write(&dir.join("qrels.txt"), &qrels);
    write(&dir.join("bm25.run"), &run);
}

fn paraphrase_reply(prompt: &str) -> String {
    let passage = prompt.split("\nPassage:\n").nth(1).unwrap_or("");
    let k: usize = prompt
        .split_whitespace()
        .nth(5)
        .and_then(|w| w.parse().ok())
        .unwrap_or(4);
    let words: Vec<&str> = passage.split_whitespace().collect();
    // about one passage in three never gets enough distinct rewrites
    let stubborn = digest(passage).is_multiple_of(3);
    (0..k)
        .map(|i| {
            if stubborn {
                return format!("{}. {passage}", i + 1);
            }
            let mut w = words.clone();
            if !w.is_empty() {
                let by = (i + 1) % w.len();
                w.rotate_left(by);
            }
            format!("{}. Rephrased, version {}: {}", i + 1, i + 1, w.join(" "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn quiz_reply(prompt: &str) -> String {
    let topic = prompt
        .lines()
        .find_map(|l| l.strip_prefix("Topic: "))
        .unwrap_or("");
    let options: Vec<(char, &str)> = prompt
        .lines()
        .filter_map(|l| {
            let mut c = l.chars();
            let letter = c.next()?;
            (matches!(letter, 'A'..='D') && l[1..].starts_with(") ")).then(|| (letter, &l[3..]))
        })
        .collect();
    let h = digest(prompt);
    let memorised = digest(topic).is_multiple_of(2) && !h.is_multiple_of(5);
    let letter = if memorised {
        options
            .iter()
            .find(|(_, text)| !text.starts_with("Rephrased"))
            .map_or('A', |(l, _)| *l)
    } else if h.is_multiple_of(9) {
        ['A', 'B', 'C', 'D'][(h % 4) as usize]
    } else {
        options
            .iter()
            .find(|(_, text)| text.starts_with("Rephrased"))
            .map_or('B', |(l, _)| *l)
    };
    match h % 4 {
        0 => format!("{letter}"),
        1 => format!("Answer: {letter}"),
        2 => format!("The original passage is option ({letter})."),
        _ if h.is_multiple_of(3) => "I cannot tell these apart.".to_string(),
        _ => format!("{}", letter.to_ascii_lowercase()),
    }
}

fn rerank_reply(prompt: &str) -> String {
    let query = prompt
        .lines()
        .find_map(|l| l.strip_prefix("Search query: "))
        .unwrap_or("");
    let terms: Vec<String> = query.split_whitespace().map(str::to_lowercase).collect();
    let mut scored: Vec<(usize, usize)> = prompt
        .lines()
        .filter_map(|l| {
            let rest = l.strip_prefix('[')?;
            let (id, text) = rest.split_once("] ")?;
            let id: usize = id.parse().ok()?;
            let hits = text
                .split_whitespace()
                .map(|w| {
                    w.trim_matches(|c: char| !c.is_alphanumeric())
                        .to_lowercase()
                })
                .filter(|w| terms.contains(w))
                .count();
            Some((id, hits))
        })
        .collect();
    scored.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut ranking: Vec<String> = scored.iter().map(|(id, _)| format!("[{id}]")).collect();
    if digest(prompt).is_multiple_of(3) {
        // sloppy answer: a repeat, an out-of-range id and a dropped passage
        ranking.pop();
        ranking.insert(1, ranking[0].clone());
        ranking.push("[99]".into());
    }
    ranking.join(" > ")
}

fn handle(mut stream: TcpStream) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).unwrap();
    let request: Value = serde_json::from_slice(&body).unwrap();
    let prompt = request["messages"][0]["content"].as_str().unwrap_or("");
    let reply = if prompt.starts_with("Rewrite the passage") {
        paraphrase_reply(prompt)
    } else if prompt.contains("Which option is the original passage?") {
        quiz_reply(prompt)
    } else {
        rerank_reply(prompt)
    };
    let response = json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": reply}}],
        "usage": {"prompt_tokens": prompt.split_whitespace().count(), "completion_tokens": reply.split_whitespace().count()}
    })
    .to_string();
    let _ = write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response}",
        response.len()
    );
}

fn serve() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            std::thread::spawn(move || handle(stream));
        }
    });
    format!("http://{addr}/v1")
}

fn cli(args: &[String]) {
    let mut argv = vec!["ircontam".to_string()];
    argv.extend(args.iter().cloned());
    let code = ircontam::cli::run_from_args(&argv);
    assert_eq!(code, 0, "command failed: {argv:?}");
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// The pipeline the acceptance test replays; keep the two in sync.
fn pipeline(fx: &Path, configs: &Path, out: &Path) {
    let conf = |name: &str| s(&configs.join(name));
    let f = |name: &str| s(&fx.join(name));
    let o = |name: &str| s(&out.join(name));
    let run = |args: &[&str]| cli(&args.iter().map(|a| a.to_string()).collect::<Vec<_>>());
    run(&[
        "quiz",
        "build",
        "--config",
        &conf("quiz.conf"),
        "--qrels",
        &f("qrels.txt"),
        "--corpus",
        &f("corpus.jsonl"),
        "--topics",
        &f("topics.tsv"),
        "--out",
        &o("drafts.jsonl"),
    ]);
    run(&[
        "quiz",
        "paraphrase",
        "--config",
        &conf("paraphraser.conf"),
        "--drafts",
        &o("drafts.jsonl"),
        "--out",
        &o("items.jsonl"),
    ]);
    run(&[
        "quiz",
        "run",
        "--config",
        &conf("quiz.conf"),
        "--items",
        &o("items.jsonl"),
        "--out",
        &o("answers.jsonl"),
    ]);
    run(&[
        "quiz",
        "score",
        "--config",
        &conf("quiz.conf"),
        "--items",
        &o("items.jsonl"),
        "--answers",
        &o("answers.jsonl"),
        "--dataset",
        "toy",
        "--out",
        &o("report.json"),
    ]);
    run(&[
        "partition",
        "--report",
        &o("report.json"),
        "--qrels",
        &f("qrels.txt"),
        "--out",
        &o("partition.json"),
    ]);
    run(&[
        "rerank",
        "--config",
        &conf("reranker.conf"),
        "--run",
        &f("bm25.run"),
        "--corpus",
        &f("corpus.jsonl"),
        "--topics",
        &f("topics.tsv"),
        "--depth",
        "10",
        "--window",
        "4",
        "--stride",
        "2",
        "--out",
        &o("reranked.run"),
    ]);
    run(&[
        "eval",
        "--run",
        &o("reranked.run"),
        "--qrels",
        &f("qrels.txt"),
        "--partition",
        &o("partition.json"),
        "--subset",
        "nc",
        "--out",
        &o("eval_nc.csv"),
    ]);
    let bm25 = format!(
        "bm25:{}:{}:{}",
        f("bm25.run"),
        o("partition.json"),
        o("report.json")
    );
    let rr = format!("reranked:{}:{}", o("reranked.run"), o("partition.json"));
    run(&[
        "table",
        "--config",
        &conf("quiz.conf"),
        "--dataset",
        "toy",
        "--qrels",
        &f("qrels.txt"),
        "--system",
        &bm25,
        "--system",
        &rr,
        "--resamples",
        "2000",
        "--out",
        &o("table.txt"),
        "--csv",
        &o("table.csv"),
        "--json",
        &o("table.json"),
    ]);
}

fn configs(dir: &Path, base_url: &str, cache: &Path, replay: bool) {
    for (file, model) in [
        ("quiz.conf", "memo-7b"),
        ("paraphraser.conf", "para-1"),
        ("reranker.conf", "lister-1"),
    ] {
        let mut text = format!(
            "model = {model}\nbase_url = {base_url}\napi_key_env =\ncache_dir = {}\nseed = 11\nper_topic = 2\n",
            s(cache)
        );
        if replay {
            text.push_str("replay_only = true\n");
        }
        write(&dir.join(file), &text);
    }
}

fn main() {
    let fx: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/replay");
    if fx.exists() {
        std::fs::remove_dir_all(&fx).unwrap();
    }
    make_collection(&fx);

    let live = tempfile::tempdir().unwrap();
    configs(live.path(), &serve(), &fx.join("cache"), false);
    pipeline(&fx, live.path(), live.path());

    // committed configs: relative cache dir, unreachable endpoint, replay only
    configs(&fx, "http://127.0.0.1:9/v1", Path::new("cache"), true);
    pipeline(&fx, &fx, &fx.join("expected"));
    for entry in std::fs::read_dir(fx.join("expected")).unwrap() {
        let p = entry.unwrap().path();
        if p.to_string_lossy().ends_with(".meta.json") {
            std::fs::remove_file(p).unwrap();
        }
    }
    println!("fixtures written to {}", fx.display());
}
