//! Golden request/response runner shared by the API tests and the
//! acceptance suite.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use corpusforge_cli::{router, AppState};
use corpusforge_core::{ProjectConfig, Store};

pub const TOKEN: &str = "golden-token";
const VOLATILE: [&str; 3] = ["created_at", "started_at", "finished_at"];

/// The endpoint set every golden run must exercise with a 2xx response.
pub const ENDPOINTS: [(&str, &str); 13] = [
    ("GET", "/api/health"),
    ("POST", "/api/projects"),
    ("GET", "/api/projects"),
    ("GET", "/api/projects/{id}"),
    ("POST", "/api/projects/{id}/corpus"),
    ("POST", "/api/projects/{id}/run"),
    ("GET", "/api/projects/{id}/report"),
    ("GET", "/api/projects/{id}/preview"),
    ("GET", "/api/projects/{id}/tasks"),
    ("POST", "/api/tasks/{id}/claim"),
    ("POST", "/api/tasks/{id}/release"),
    ("POST", "/api/tasks/{id}/resolve"),
    ("GET", "/api/projects/{id}/export"),
];

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/api.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn app(store: Arc<Store>, token: Option<&str>) -> Router {
    router(
        AppState {
            store,
            token: token.map(str::to_string),
            default_config: ProjectConfig::default(),
        },
        None,
    )
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("non-JSON body ({e}): {}", String::from_utf8_lossy(&self.body)))
    }
}

pub async fn send(app: &Router, method: &str, path: &str, headers: &[(&str, &str)], body: Vec<u8>) -> Reply {
    let mut req = Request::builder().method(method).uri(path);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let resp = app.clone().oneshot(req.body(Body::from(body)).unwrap()).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

pub fn normalize(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if VOLATILE.contains(&k.as_str()) && v.is_string() {
                    *v = Value::from("<timestamp>");
                } else {
                    normalize(v);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(normalize),
        _ => {}
    }
}

/// Validates `instance` against `#/$defs/<def>` of the published schema.
pub fn check_schema(schema: &Value, def: &str, instance: &Value) -> Result<(), String> {
    if schema["$defs"].get(def).is_none() {
        return Err(format!("schema has no definition `{def}`"));
    }
    let wrapper = json!({
        "$schema": schema["$schema"],
        "$defs": schema["$defs"],
        "$ref": format!("#/$defs/{def}"),
    });
    let validator = jsonschema::validator_for(&wrapper).map_err(|e| format!("bad schema: {e}"))?;
    let errors: Vec<String> = validator
        .iter_errors(instance)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors.join("; "))
    }
}

fn template(path: &str) -> String {
    let path = path.split('?').next().unwrap();
    let parts: Vec<&str> = path.split('/').collect();
    parts
        .iter()
        .enumerate()
        .map(|(i, p)| match (i, parts.get(2)) {
            (3, Some(&"projects")) | (3, Some(&"tasks")) => "{id}",
            _ => p,
        })
        .collect::<Vec<_>>()
        .join("/")
}

pub struct Outcome {
    pub name: String,
    pub result: Result<(), String>,
}

pub struct GoldenRun {
    pub outcomes: Vec<Outcome>,
    /// (method, path template) of every exchange answered with 2xx.
    pub covered: Vec<(String, String)>,
    /// Every error code seen, with the status it came with.
    pub error_statuses: Vec<(String, u16)>,
}

/// Replays every fixture in `tests/golden` in file-name order against one
/// fresh service. With `CORPUSFORGE_BLESS=1` the expected responses are
/// rewritten from the actual ones.
pub async fn run_golden() -> GoldenRun {
    let bless = std::env::var("CORPUSFORGE_BLESS").is_ok_and(|v| v == "1");
    let schema = schema();
    let app = app(Arc::new(Store::in_memory()), Some(TOKEN));
    let mut files: Vec<PathBuf> = std::fs::read_dir(golden_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();

    let mut run = GoldenRun {
        outcomes: Vec::new(),
        covered: Vec::new(),
        error_statuses: Vec::new(),
    };
    for file in files {
        let name = file.file_stem().unwrap().to_string_lossy().into_owned();
        let mut fixture: Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
        let req = &fixture["request"];
        let method = req["method"].as_str().unwrap().to_string();
        let path = req["path"].as_str().unwrap().to_string();
        let headers: Vec<(String, String)> = req["headers"]
            .as_object()
            .map(|h| {
                h.iter()
                    .map(|(k, v)| (k.clone(), v.as_str().unwrap().to_string()))
                    .collect()
            })
            .unwrap_or_default();
        let body = match (&req["json"], &req["text"]) {
            (Value::Null, Value::String(t)) => t.clone().into_bytes(),
            (Value::Null, _) => Vec::new(),
            (j, _) => serde_json::to_vec(j).unwrap(),
        };
        let header_refs: Vec<(&str, &str)> = headers.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let reply = send(&app, &method, &path, &header_refs, body).await;

        let expected = &fixture["response"];
        let mut problems = Vec::new();
        let status = reply.status.as_u16();
        if reply.status.is_success() {
            run.covered.push((method.clone(), template(&path)));
        }
        let is_text = expected.get("text").is_some();
        let actual_body = if is_text {
            Value::from(String::from_utf8_lossy(&reply.body).into_owned())
        } else {
            let mut v = reply.json();
            normalize(&mut v);
            v
        };
        if !reply.status.is_success() {
            match actual_body["code"].as_str() {
                Some(code) => run.error_statuses.push((code.to_string(), status)),
                None => problems.push("error response without an ApiError body".to_string()),
            }
        }
        if let Some(def) = expected["schema"].as_str() {
            if let Err(e) = check_schema(&schema, def, &actual_body) {
                problems.push(format!("schema {def}: {e}"));
            }
        } else if !is_text {
            problems.push("fixture names no schema".into());
        }
        if let Some(ct) = expected["content_type"].as_str() {
            if reply.content_type != ct {
                problems.push(format!("content-type {} != {ct}", reply.content_type));
            }
        }

        if bless {
            let resp = &mut fixture["response"];
            resp["status"] = Value::from(status);
            if is_text {
                resp["text"] = actual_body;
                resp["content_type"] = Value::from(reply.content_type.clone());
            } else {
                resp["json"] = actual_body;
            }
            std::fs::write(&file, serde_json::to_string_pretty(&fixture).unwrap() + "\n").unwrap();
        } else {
            if expected["status"].as_u64() != Some(status as u64) {
                problems.push(format!("status {status} != {}", expected["status"]));
            }
            let want = if is_text { &expected["text"] } else { &expected["json"] };
            if *want != actual_body {
                problems.push(format!(
                    "body differs\n  expected: {}\n  actual:   {}",
                    want, actual_body
                ));
            }
        }
        run.outcomes.push(Outcome {
            name,
            result: if problems.is_empty() {
                Ok(())
            } else {
                Err(problems.join("\n"))
            },
        });
    }
    run
}
