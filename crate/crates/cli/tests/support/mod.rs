#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use oxy_core::config::MasConfig;
use oxy_service::http::router;
use oxy_service::Workspace;
use serde_json::Value;
use tower::ServiceExt;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn config_path(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}

pub fn file_assistant() -> PathBuf {
    config_path("file_assistant.json")
}

/// Runs the CLI in-process; returns (exit code, stdout, stderr).
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("oxy").chain(args.iter().copied());
    let code = oxy_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Runs `oxy --store <store> --json <args>` and parses the envelope.
pub fn cli_json(store: &Path, args: &[&str]) -> (i32, Value) {
    let store = store.to_str().unwrap();
    let mut full = vec!["--store", store, "--json"];
    full.extend_from_slice(args);
    let (code, out, err) = cli(&full);
    let value = serde_json::from_str(&out).unwrap_or_else(|e| panic!("bad CLI JSON ({e}): {out}\nstderr: {err}"));
    (code, value)
}

/// Issues HTTP requests against a service freshly opened on `store`, so it
/// sees everything the CLI has written.
pub struct Http {
    rt: tokio::runtime::Runtime,
}

impl Http {
    pub fn new() -> Self {
        Self { rt: tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap() }
    }

    pub fn raw(&self, store: &Path, config: Option<&Path>, method: &str, uri: &str, body: Option<Value>) -> (u16, Vec<u8>) {
        let cfg = config.map(|p| MasConfig::load(p).unwrap());
        let ws = Arc::new(Workspace::open(Some(store), cfg.as_ref()).unwrap());
        let app = router(ws);
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
            .unwrap();
        self.rt.block_on(async move {
            let resp = app.oneshot(req).await.unwrap();
            let status = resp.status().as_u16();
            let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
            (status, bytes)
        })
    }

    pub fn json(&self, store: &Path, config: Option<&Path>, method: &str, uri: &str, body: Option<Value>) -> (u16, Value) {
        let (status, bytes) = self.raw(store, config, method, uri, body);
        (status, serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("bad HTTP JSON ({e}) from {uri}")))
    }
}

/// (event, id, data) per SSE frame.
pub fn parse_sse(text: &str) -> Vec<(String, Option<String>, String)> {
    text.split("\n\n")
        .filter_map(|frame| {
            let mut event = None;
            let mut id = None;
            let mut data = String::new();
            for line in frame.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    event = Some(v.trim().to_owned());
                } else if let Some(v) = line.strip_prefix("id:") {
                    id = Some(v.trim().to_owned());
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim_start());
                }
            }
            event.map(|e| (e, id, data))
        })
        .collect()
}
