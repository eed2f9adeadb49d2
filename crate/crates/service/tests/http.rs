mod common;

use std::sync::Arc;

use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

use hear_service::{http, Store};

use common::{route_nodes, study};

struct Server {
    base: String,
    client: Client,
}

impl Server {
    async fn start() -> Self {
        let store = Arc::new(Store::in_memory(study()));
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(http::serve(store, listener));
        Self { base: format!("http://{addr}"), client: Client::new() }
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self.client.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn session(&self, condition: &str, seed: u64) -> Value {
        let (status, body) = self.post("/session", json!({"condition": condition, "seed": seed})).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body
    }
}

fn has_key(v: &Value, key: &str) -> bool {
    match v {
        Value::Object(m) => m.contains_key(key) || m.values().any(|x| has_key(x, key)),
        Value::Array(a) => a.iter().any(|x| has_key(x, key)),
        _ => false,
    }
}

fn tasks(session: &Value) -> Vec<String> {
    session["task_ids"].as_array().unwrap().iter().map(|t| t.as_str().unwrap().to_owned()).collect()
}

#[tokio::test]
async fn payloads_respect_condition_gating() {
    let srv = Server::start().await;
    for condition in ["none", "model_highlights", "oracle_highlights", "model_full", "oracle_full"] {
        let s = srv.session(condition, 1).await;
        let id = s["id"].as_str().unwrap();
        assert_eq!(s["schema_version"], 1);
        for tid in tasks(&s) {
            let (status, view) = srv.get(&format!("/session/{id}/task/{tid}")).await;
            assert_eq!(status, StatusCode::OK);
            assert_eq!(view["schema_version"], 1);
            assert_eq!(view["notice"], "This instruction may be imperfect.");
            assert!(!has_key(&view, "items") && !has_key(&view, "score") && !has_key(&view, "candidate"));
            let highlights = view["instruction"]["highlights"].as_array().unwrap();
            assert!(highlights.len() <= 3);
            if condition == "none" {
                assert!(highlights.is_empty());
                assert_eq!(view["flags"], json!({"highlights": false, "suggestions": false}));
            }
            let full = condition.ends_with("full");
            assert_eq!(view["flags"]["suggestions"], full);
            let span = highlights.first().map_or("0-0".to_owned(), |h| h["span"].as_str().unwrap().to_owned());
            let (status, body) = srv.get(&format!("/session/{id}/task/{tid}/suggestions?span={span}")).await;
            if full && !highlights.is_empty() {
                assert_eq!(status, StatusCode::OK, "{body}");
                let items = body["items"].as_array().unwrap();
                if condition == "oracle_full" {
                    assert_eq!(items.len(), 2);
                } else {
                    assert!(!items.is_empty() && items.len() <= 3);
                    let scores: Vec<f64> = items.iter().map(|i| i["score"].as_f64().unwrap()).collect();
                    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
                }
            } else if !full {
                assert_eq!(status, StatusCode::FORBIDDEN);
                assert_eq!(body["error"]["code"], "suggestions_disabled");
                assert_eq!(body["error"]["message"], "suggestions disabled");
                assert!(!has_key(&body, "items"));
            }
        }
    }
}

#[tokio::test]
async fn walk_check_and_rate_over_http() {
    let srv = Server::start().await;
    let s = srv.session("none", 4).await;
    let id = s["id"].as_str().unwrap();
    let study = study();
    let (_, export) = srv.get(&format!("/export?session={id}")).await;
    let ep = export["episodes"].as_array().unwrap().iter().find(|e| !e["qc"].as_bool().unwrap()).unwrap();
    let tid = ep["task"].as_str().unwrap();
    let route_id = study.assign_tasks(4).unwrap().into_iter().find(|t| t.id == tid).unwrap().route_id;
    let route = route_nodes(&study, &route_id);

    let path = format!("/session/{id}/task/{tid}");
    let (status, body) = srv.post(&format!("{path}/move"), json!({"target": "no-such-node", "seq": 1})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "not_adjacent");
    let (status, body) = srv.post(&format!("{path}/move"), json!({"target": route[1], "seq": 5})).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
    for (k, node) in route[1..].iter().enumerate() {
        let (status, body) = srv.post(&format!("{path}/move"), json!({"target": node, "seq": k + 1})).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["event"]["kind"], "move");
        assert_eq!(body["task"]["view"]["node"], *node);
    }
    let (status, body) = srv.post(&format!("{path}/check"), Value::Null).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["event"]["payload"]["success"], true);
    assert_eq!(body["task"]["finalized"], true);
    let (status, _) = srv.post(&format!("{path}/check"), json!({})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, body) = srv.post(&format!("{path}/rating"), json!({"easy_to_follow": 6, "confident": 1, "mental_demand": 1})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let (status, _) = srv.post(&format!("{path}/rating"), json!({"easy_to_follow": 5, "confident": 4, "mental_demand": 2})).await;
    assert_eq!(status, StatusCode::OK);

    let (_, export) = srv.get(&format!("/export?session={id}")).await;
    let ep = export["episodes"].as_array().unwrap().iter().find(|e| e["task"] == tid).unwrap();
    assert_eq!(ep["episode"]["trajectory"], json!(route));
    assert_eq!(ep["episode"]["checks_used"], 1);
    assert_eq!(ep["rating"], json!({"easy_to_follow": 5, "confident": 4, "mental_demand": 2}));
    let kinds: Vec<&str> = export["events"].as_array().unwrap().iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds.last(), Some(&"rating"));
    assert_eq!(kinds.iter().filter(|k| **k == "move").count(), route.len() - 1);
}

#[tokio::test]
async fn apply_and_revert_over_http() {
    let srv = Server::start().await;
    for seed in 0..30 {
        let s = srv.session("oracle_full", seed).await;
        let id = s["id"].as_str().unwrap().to_owned();
        for tid in tasks(&s) {
            let path = format!("/session/{id}/task/{tid}");
            let (_, view) = srv.get(&path).await;
            let Some(h) = view["instruction"]["highlights"].as_array().unwrap().first().cloned() else { continue };
            let span = h["span"].as_str().unwrap();
            let (status, menu) = srv.get(&format!("{path}/suggestions?span={span}")).await;
            assert_eq!(status, StatusCode::OK);
            let (_, again) = srv.get(&format!("{path}/suggestions?span={span}")).await;
            assert_eq!(menu, again);
            let item = &menu["items"][1];
            let (status, not_served) = srv.post(&format!("{path}/apply"), json!({"span": span, "candidate": "upstairs hallway"})).await;
            assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{not_served}");
            let (status, applied) =
                srv.post(&format!("{path}/apply"), json!({"span": span, "candidate": item["candidate"], "target": item["target"]})).await;
            assert_eq!(status, StatusCode::OK, "{applied}");
            assert_eq!(applied["task"]["edited"], true);
            assert_eq!(applied["task"]["can_revert"], true);
            let (_, later) = srv.get(&path).await;
            assert_eq!(later["instruction"], applied["task"]["instruction"]);
            let (status, reverted) = srv.post(&format!("{path}/revert"), json!({})).await;
            assert_eq!(status, StatusCode::OK);
            assert_eq!(reverted["task"]["instruction"], view["instruction"]);
            let (status, _) = srv.post(&format!("{path}/revert"), json!({})).await;
            assert_eq!(status, StatusCode::CONFLICT);
            let (_, export) = srv.get(&format!("/export?session={id}")).await;
            let kinds: Vec<&str> = export["events"].as_array().unwrap().iter().map(|e| e["kind"].as_str().unwrap()).collect();
            assert_eq!(kinds, ["open_menu", "open_menu", "apply_suggestion", "revert"]);
            return;
        }
    }
    panic!("no highlighted oracle task found");
}

#[tokio::test]
async fn errors_are_structured() {
    let srv = Server::start().await;
    let (status, body) = srv.post("/session", json!({"condition": "telepathy"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "unknown_condition");
    let (status, body) = srv.get("/session/abc/task/t0").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body, json!({"schema_version": 1, "error": {"code": "unknown_session", "message": "unknown session `abc`"}}));
    let s = srv.session("model_full", 0).await;
    let id = s["id"].as_str().unwrap();
    let (status, body) = srv.get(&format!("/session/{id}/task/t99")).await;
    assert_eq!((status, body["error"]["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_task")));
    let (status, body) = srv.get(&format!("/session/{id}/task/t0/suggestions?span=7-2")).await;
    assert_eq!((status, body["error"]["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));
    let (status, body) = srv.get(&format!("/session/{id}/task/t0/suggestions?span=999-999")).await;
    assert_eq!((status, body["error"]["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("not_highlighted")));
    let (status, _) = srv.post(&format!("/session/{id}/task/t0/dance"), json!({})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = srv.get("/nowhere").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["schema_version"], 1);
    let (status, body) = srv.get("/export").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["sessions"].as_array().unwrap().len(), 1);
    assert!(body["events"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn same_seed_sessions_share_tasks() {
    let srv = Server::start().await;
    let a = srv.session("none", 8).await;
    let b = srv.session("oracle_full", 8).await;
    assert_ne!(a["id"], b["id"]);
    let (_, ea) = srv.get(&format!("/export?session={}", a["id"].as_str().unwrap())).await;
    let (_, eb) = srv.get(&format!("/export?session={}", b["id"].as_str().unwrap())).await;
    let starts = |e: &Value| e["episodes"].as_array().unwrap().iter().map(|x| x["episode"]["goal"].clone()).collect::<Vec<_>>();
    assert_eq!(starts(&ea), starts(&eb));
}
