use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use serde_json::{json, Value};
use slotwise_cli::server::{router, AppState};
use slotwise_core::orchestrator::{lint, Assets, RunTrace};

fn assets() -> Assets {
    Assets::new(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets"))
}

struct Server {
    base: String,
    http: reqwest::Client,
    token: Option<String>,
}

impl Server {
    async fn start(state: AppState, static_dir: Option<PathBuf>, token: Option<&str>) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let app = router(Arc::new(state.with_token(token.map(String::from))), static_dir);
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        Self {
            base: format!("http://{addr}"),
            http: reqwest::Client::new(),
            token: token.map(String::from),
        }
    }

    fn req(&self, method: reqwest::Method, path: &str) -> reqwest::RequestBuilder {
        let r = self.http.request(method, format!("{}{path}", self.base));
        match &self.token {
            Some(t) => r.bearer_auth(t),
            None => r,
        }
    }

    async fn create(&self, body: Value) -> String {
        let r = self
            .req(reqwest::Method::POST, "/api/sessions")
            .json(&body)
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), 201);
        r.json::<Value>().await.unwrap()["id"].as_str().unwrap().to_string()
    }

    async fn reply(&self, id: &str, inquiry: &str, reply: Value) -> reqwest::Response {
        self.req(reqwest::Method::POST, &format!("/api/sessions/{id}/reply"))
            .json(&json!({ "inquiry_id": inquiry, "reply": reply }))
            .send()
            .await
            .unwrap()
    }

    async fn trace(&self, id: &str) -> RunTrace {
        let text = self
            .req(reqwest::Method::GET, &format!("/api/sessions/{id}/trace"))
            .send()
            .await
            .unwrap()
            .text()
            .await
            .unwrap();
        RunTrace::from_jsonl(&text).unwrap()
    }
}

fn state() -> AppState {
    AppState::new(assets()).with_reply_timeout(Some(Duration::from_secs(20)))
}

/// Follows the event stream, answering inquiries the way a console user
/// would. Returns every event received.
async fn drive(s: &Server, id: &str, from: u64, mut answer: impl FnMut(&Value) -> Option<Value>) -> Vec<Value> {
    let resp = s
        .req(reqwest::Method::GET, &format!("/api/sessions/{id}/events?from={from}"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.headers()["content-type"], "application/x-ndjson");
    let mut stream = resp.bytes_stream();
    let mut buf = String::new();
    let mut out = Vec::new();
    while let Some(chunk) = stream.next().await {
        buf.push_str(std::str::from_utf8(&chunk.unwrap()).unwrap());
        while let Some(i) = buf.find('\n') {
            let line: String = buf.drain(..=i).collect();
            let e: Value = serde_json::from_str(&line).unwrap();
            let reply = if e["kind"] == "inquiry" {
                answer(&e["payload"])
            } else {
                None
            };
            if let Some(r) = reply {
                let pending: Value = s
                    .req(reqwest::Method::GET, &format!("/api/sessions/{id}/pending"))
                    .send()
                    .await
                    .unwrap()
                    .json()
                    .await
                    .unwrap();
                assert_eq!(pending["id"], e["payload"]["id"]);
                let inquiry = e["payload"]["id"].as_str().unwrap();
                assert_eq!(s.reply(id, inquiry, r.clone()).await.status(), 200);
                let again = s.reply(id, inquiry, r).await;
                assert_eq!(again.status(), 409);
                assert!(again.text().await.unwrap().contains("already_answered"));
            }
            out.push(e);
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn conflict_session_over_http() {
    let s = Server::start(state(), None, None).await;
    let id = s.create(json!({ "scenario": "takeaway-conflict" })).await;
    let events = drive(&s, &id, 0, |inq| match inq["kind"].as_str() {
        Some("conflict") => Some(json!({ "value": "20 RMB" })),
        Some("takeover") => Some(json!("takeover_done")),
        _ => None,
    })
    .await;

    let kinds: Vec<&str> = events.iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds.first(), Some(&"session_started"));
    assert_eq!(kinds.last(), Some(&"task_end"));
    let end = events.last().unwrap();
    assert_eq!(end["payload"]["status"], "success");
    let upd = events.iter().find(|e| e["kind"] == "slot_updated").unwrap();
    assert_eq!(upd["payload"]["new"], "20 RMB");
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e["seq"], i as u64);
    }

    let trace = s.trace(&id).await;
    assert_eq!(trace.events.len(), events.len());
    assert!(lint(&trace).is_empty());

    // resume from the middle: no gaps, no duplicates
    let tail = drive(&s, &id, 17, |_| None).await;
    assert_eq!(tail.len(), events.len() - 17);
    assert_eq!(tail[..], events[17..]);

    let list: Value = s
        .req(reqwest::Method::GET, "/api/sessions")
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(list[0]["id"], id.as_str());
    assert_eq!(list[0]["done"], true);
}

#[tokio::test(flavor = "multi_thread")]
async fn declined_reply_aborts() {
    let s = Server::start(state(), None, None).await;
    let id = s
        .create(json!({ "scenario": "hotel-ambiguous", "backend": { "kind": "fixtures" } }))
        .await;
    let events = drive(&s, &id, 0, |_| Some(json!("declined"))).await;
    let end = &events.last().unwrap()["payload"];
    assert_eq!(end["status"], "aborted");
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_and_unknown_ids() {
    let s = Server::start(state(), None, None).await;
    let r = s
        .req(reqwest::Method::POST, "/api/sessions")
        .json(&json!({ "scenario": "no-such-scenario" }))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 400);
    let r = s
        .req(reqwest::Method::POST, "/api/sessions")
        .json(&json!({ "scenario": "takeaway", "run": { "window": 0 } }))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 400);
    let r = s
        .req(reqwest::Method::GET, "/api/sessions/s99/trace")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 404);

    let id = s.create(json!({ "scenario": "takeaway-ambiguous" })).await;
    let r = s.reply(&id, "q42", json!({ "value": "x" })).await;
    assert_eq!(r.status(), 404);
    assert!(r.text().await.unwrap().contains("unknown_inquiry"));
    drive(&s, &id, 0, |inq| {
        Some(if inq["kind"] == "takeover" {
            json!("takeover_done")
        } else {
            json!({ "value": "Large" })
        })
    })
    .await;
}

#[tokio::test(flavor = "multi_thread")]
async fn token_static_assets_and_saved_traces() {
    let www = tempfile::tempdir().unwrap();
    std::fs::write(www.path().join("index.html"), "<title>console</title>").unwrap();
    let traces = tempfile::tempdir().unwrap();
    let st = state().with_trace_dir(Some(traces.path().to_path_buf()));
    let s = Server::start(st, Some(www.path().to_path_buf()), Some("sekrit")).await;

    let page = reqwest::get(format!("{}/", s.base)).await.unwrap();
    assert_eq!(page.status(), 200);
    assert!(page.text().await.unwrap().contains("console"));

    let anon = reqwest::get(format!("{}/api/sessions", s.base)).await.unwrap();
    assert_eq!(anon.status(), 401);
    let wrong = s
        .http
        .get(format!("{}/api/sessions", s.base))
        .bearer_auth("nope")
        .send()
        .await
        .unwrap();
    assert_eq!(wrong.status(), 401);
    let by_query = reqwest::get(format!("{}/api/sessions?token=sekrit", s.base))
        .await
        .unwrap();
    assert_eq!(by_query.status(), 200);

    let id = s
        .create(json!({ "scenario": "shopping", "run": { "window": 2 } }))
        .await;
    drive(&s, &id, 0, |_| Some(json!("takeover_done"))).await;
    let live = s.trace(&id).await;
    let path = traces.path().join(format!("{id}.jsonl"));
    for _ in 0..100 {
        if path.exists() {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let saved = RunTrace::load(&path).unwrap();
    assert_eq!(saved, live);
}
