use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use uniparse::corpus::{gen_corpus, CorpusSpec};
use uniparse::docmodel::SemanticCategory;
use uniparse::experts::{
    spawn_echo_server, Expert, ExpertDescriptor, ExpertError, ExpertRequest, LatencyModel, Modality,
    RemoteExpert, WireResponse,
};
use uniparse::format::to_structured;
use uniparse::runtime::{run_threaded, simulate, Mode, PipelineConfig};
use uniparse::ContentPayload;

fn req(id: &str, text: &str) -> ExpertRequest {
    ExpertRequest {
        task_id: id.into(),
        modality: Modality::Ocr,
        doc_id: "d".into(),
        page_index: 0,
        detection_id: id.into(),
        category: SemanticCategory::Paragraph,
        truth_text: Some(text.into()),
        truth_payload: None,
        placeholders: vec![],
        attempt: 0,
    }
}

fn ocr(endpoint: &str, timeout_ms: u64) -> RemoteExpert {
    RemoteExpert::new(
        ExpertDescriptor::new(Modality::Ocr, LatencyModel::zero()),
        endpoint,
        Duration::from_millis(timeout_ms),
    )
}

/// Serves one connection with a canned reply built from the request body.
fn one_shot(reply: impl FnOnce(&str) -> Vec<u8> + Send + 'static, delay: Duration) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            if line == "\r\n" || line.is_empty() {
                break;
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        std::thread::sleep(delay);
        let mut stream = stream;
        let _ = stream.write_all(&reply(std::str::from_utf8(&body).unwrap()));
    });
    format!("http://{addr}")
}

fn http(status: &str, body: &str) -> Vec<u8> {
    format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .into_bytes()
}

#[test]
fn echo_server_answers_in_request_order() {
    let server = spawn_echo_server("127.0.0.1:0".parse().unwrap()).unwrap();
    let expert = ocr(&server.endpoint(), 5_000);
    let batch: Vec<_> = (0..5).map(|i| req(&format!("t{i}"), &format!("text {i}"))).collect();
    let out = expert.process_batch(&batch).unwrap();
    let ids: Vec<_> = out.iter().map(|r| r.task_id.as_str()).collect();
    assert_eq!(ids, ["t0", "t1", "t2", "t3", "t4"]);
    assert_eq!(out[3].payload, Some(ContentPayload::text("text 3")));
}

#[test]
fn shuffled_response_is_put_back_in_order() {
    let endpoint = one_shot(
        |_| {
            let items = vec![
                uniparse::experts::ExpertResponse::ok("b", ContentPayload::text("B")),
                uniparse::experts::ExpertResponse::ok("a", ContentPayload::text("A")),
            ];
            http("200 OK", &serde_json::to_string(&WireResponse { items }).unwrap())
        },
        Duration::ZERO,
    );
    let out = ocr(&endpoint, 5_000).process_batch(&[req("a", "A"), req("b", "B")]).unwrap();
    assert_eq!(out[0].task_id, "a");
    assert_eq!(out[1].payload, Some(ContentPayload::text("B")));
}

#[test]
fn unavailable_is_retryable() {
    let endpoint = one_shot(|_| http("503 Service Unavailable", "busy"), Duration::ZERO);
    let err = ocr(&endpoint, 5_000).process_batch(&[req("a", "x")]).unwrap_err();
    assert!(matches!(err, ExpertError::Retryable(_)), "{err:?}");
    assert!(err.is_retryable());
}

#[test]
fn bad_request_is_fatal() {
    let endpoint = one_shot(|_| http("400 Bad Request", "nope"), Duration::ZERO);
    let err = ocr(&endpoint, 5_000).process_batch(&[req("a", "x")]).unwrap_err();
    assert_eq!(err, ExpertError::Fatal("nope".into()));
}

#[test]
fn truncated_body_is_a_protocol_error() {
    let endpoint = one_shot(
        |_| b"HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: 200\r\n\r\n{\"items\":[".to_vec(),
        Duration::ZERO,
    );
    let err = ocr(&endpoint, 5_000).process_batch(&[req("a", "x")]).unwrap_err();
    assert!(matches!(err, ExpertError::Protocol { status: 200, .. }), "{err:?}");
}

#[test]
fn missing_item_is_a_protocol_error() {
    let endpoint = one_shot(|_| http("200 OK", r#"{"items":[]}"#), Duration::ZERO);
    let err = ocr(&endpoint, 5_000).process_batch(&[req("a", "x")]).unwrap_err();
    assert!(matches!(err, ExpertError::Protocol { .. }), "{err:?}");
}

#[test]
fn slow_server_times_out() {
    let endpoint = one_shot(|_| http("200 OK", r#"{"items":[]}"#), Duration::from_millis(800));
    let err = ocr(&endpoint, 100).process_batch(&[req("a", "x")]).unwrap_err();
    assert!(err.is_retryable(), "{err:?}");
}

#[test]
fn threaded_run_over_http_matches_simulation() {
    let server = spawn_echo_server("127.0.0.1:0".parse().unwrap()).unwrap();
    let spec = CorpusSpec {
        seed: 3,
        n_docs: 3,
        pages_per_doc: [1, 2],
        ..CorpusSpec::default()
    };
    let (docs, _) = gen_corpus(&spec).unwrap();
    let cfg = PipelineConfig::new(Mode::PipelineParallel, 2);
    let experts: BTreeMap<Modality, Arc<dyn Expert>> = cfg
        .experts
        .iter()
        .map(|d| {
            let e: Arc<dyn Expert> = Arc::new(RemoteExpert::new(d.clone(), server.endpoint(), Duration::from_secs(10)));
            (d.modality, e)
        })
        .collect();
    let over_http = run_threaded(&docs, &cfg, Some(experts), 0.0).unwrap();
    let simulated = simulate(&docs, &cfg).unwrap();
    let dump = |o: &uniparse::runtime::RunOutput| o.outputs.iter().map(to_structured).collect::<Vec<_>>();
    assert_eq!(dump(&over_http), dump(&simulated));
}
