#![allow(dead_code)]
pub mod oracle;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use scopetree::gateway::{CompletionExchange, FixtureStore, ModelParams};
use scopetree::prompt::{render_prompt, PromptRequest, PromptStrategy};
use scopetree::run::GenerationSettings;
use scopetree::testsuite::TestSuite;

/// Numbered list of `k` made-up subtopics of `topic`.
pub fn synthetic_list(topic: &str, k: usize) -> String {
    (1..=k)
        .map(|i| format!("{i}. {topic} subtopic {i}\n"))
        .collect()
}

/// Records one synthetic fixture per (strategy, target) of `suite`.
pub fn seed_fixtures(
    store: &FixtureStore,
    suite: &TestSuite,
    strategies: &[PromptStrategy],
    settings: &GenerationSettings,
) -> usize {
    let mut n = 0;
    for strategy in strategies {
        for target in suite.prompt_targets() {
            let prompt = render_prompt(
                &PromptRequest::new(*strategy, target.clone())
                    .with_k(settings.k)
                    .with_format_hint(settings.format_hint),
            )
            .unwrap();
            let raw = synthetic_list(target.current(), settings.k);
            store
                .record(&CompletionExchange::new(
                    prompt,
                    settings.params.clone(),
                    raw,
                ))
                .unwrap();
            n += 1;
        }
    }
    n
}

pub fn record_fixture(store: &FixtureStore, prompt: &str, params: &ModelParams, raw: &str) {
    store
        .record(&CompletionExchange::new(prompt, params.clone(), raw))
        .unwrap();
}

/// Minimal HTTP/1.1 server replying with a scripted sequence of
/// (status, body) pairs, one per connection.
pub struct StubServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(script: Vec<(u16, String)>) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let handle = std::thread::spawn(move || {
            for (status, body) in script {
                let Ok((stream, _)) = listener.accept() else {
                    return;
                };
                counter.fetch_add(1, Ordering::SeqCst);
                respond(stream, status, &body);
            }
        });
        StubServer {
            url,
            hits,
            handle: Some(handle),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        // The accept loop ends once the script runs out; don't block on it.
        drop(self.handle.take());
    }
}

fn respond(mut stream: TcpStream, status: u16, body: &str) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
        if line == "\r\n" {
            break;
        }
    }
    let mut buf = vec![0u8; content_length];
    let _ = reader.read_exact(&mut buf);
    let reason = match status {
        200 => "OK",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Status",
    };
    let reply = format!(
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(reply.as_bytes());
    let _ = stream.flush();
}

pub fn chat_reply(content: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

use scopetree::hierarchy::TopicPath;
use scopetree::metrics::{AnnotationLabel, AnnotationRecord};
use scopetree::run::{GenerationRecord, RecordStatus};

/// An `ok` record whose `n` subtopics sit at `output_level`.
pub fn make_record(
    id: &str,
    strategy: PromptStrategy,
    output_level: usize,
    n: usize,
) -> GenerationRecord {
    let labels: Vec<String> = (1..output_level).map(|i| format!("Topic L{i}")).collect();
    GenerationRecord {
        record_id: id.to_string(),
        run_id: "synthetic".into(),
        target_path: TopicPath::new(labels).unwrap(),
        strategy,
        k: n,
        prompt: String::new(),
        format_hint: false,
        raw_response: String::new(),
        subtopics: (0..n).map(|i| format!("subtopic {i}")).collect(),
        params: ModelParams::default(),
        status: RecordStatus::Ok,
        error: None,
        timestamp: chrono::DateTime::UNIX_EPOCH,
    }
}

/// One record per item (k = 1) with the given output levels, labeled by
/// each annotator row. Returns records and annotations.
pub fn annotated_items(
    strategy: PromptStrategy,
    levels: &[usize],
    rows: &[Vec<AnnotationLabel>],
) -> (Vec<GenerationRecord>, Vec<AnnotationRecord>) {
    let tag = strategy.short_name();
    let records: Vec<GenerationRecord> = levels
        .iter()
        .enumerate()
        .map(|(i, level)| make_record(&format!("{tag}-{i}"), strategy, *level, 1))
        .collect();
    let mut annotations = Vec::new();
    for (a, row) in rows.iter().enumerate() {
        for (i, label) in row.iter().enumerate() {
            annotations.push(AnnotationRecord {
                record_id: records[i].record_id.clone(),
                subtopic_index: 0,
                annotator_id: format!("annotator-{a}"),
                label: *label,
            });
        }
    }
    (records, annotations)
}
