#![no_main]

use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use libfuzzer_sys::fuzz_target;
use optistack_cli::service::{build, ServiceConfig};
use tower::ServiceExt;

// run submission is left out: accepted bodies would queue real training
const ROUTES: [&str; 4] = ["/api/simulate", "/api/dbr", "/api/whatif", "/api/qvalues"];

fn app() -> &'static (tokio::runtime::Runtime, Router) {
    static APP: OnceLock<(tokio::runtime::Runtime, Router)> = OnceLock::new();
    APP.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let router = rt.block_on(async { build(ServiceConfig::new(dir)).unwrap() });
        (rt, router)
    })
}

// first byte picks the route; the rest is the body, or the query string for metrics
fuzz_target!(|data: &[u8]| {
    let Some((&sel, rest)) = data.split_first() else { return };
    let (rt, router) = app();
    let req = match sel as usize % (ROUTES.len() + 1) {
        i if i < ROUTES.len() => Request::post(ROUTES[i])
            .header("content-type", "application/json")
            .body(Body::from(rest.to_vec())),
        _ => {
            let Ok(q) = std::str::from_utf8(rest) else { return };
            let Ok(req) = Request::get(format!("/api/runs/run-000001/metrics?{q}")).body(Body::empty()) else {
                return;
            };
            Ok(req)
        }
    };
    let Ok(req) = req else { return };
    let status = rt.block_on(router.clone().oneshot(req)).unwrap().status();
    assert_ne!(status, StatusCode::INTERNAL_SERVER_ERROR);
});
