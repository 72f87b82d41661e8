#![allow(dead_code)]

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use feedsim::http::router;
use feedsim::service::{Service, ServiceOptions};
use feedsim_core::acquire::kmedoids::ActionLibrary;
use feedsim_core::runtime::ActionRecord;
use feedsim_core::safety::GuardState;
use feedsim_core::scenario::{build_library, build_robot, Scenario};
use serde_json::Value;

pub const NOMINAL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/nominal_meal.json");

pub fn nominal() -> Scenario {
    Scenario::from_json(&std::fs::read_to_string(NOMINAL).unwrap()).unwrap()
}

fn library() -> ActionLibrary {
    static LIB: OnceLock<ActionLibrary> = OnceLock::new();
    LIB.get_or_init(|| build_library(&nominal().library).unwrap().0)
        .clone()
}

pub struct Server {
    pub base: String,
    pub service: Service,
    pub client: reqwest::Client,
}

pub async fn start_with(scenario: Scenario, opts: ServiceOptions) -> Server {
    let robot = build_robot(&scenario, Some(library())).unwrap();
    let service = Service::spawn(robot, opts).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = router(service.handle.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    // The receiver guard starts in shutdown until the first all-clear arrives.
    let deadline = Instant::now() + Duration::from_secs(5);
    while service.handle.state().await.unwrap().guard != GuardState::Run {
        assert!(Instant::now() < deadline, "guard never reached run");
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
    Server {
        base,
        service,
        client: reqwest::Client::new(),
    }
}

pub async fn start(speedup: f64) -> Server {
    start_with(
        nominal(),
        ServiceOptions {
            speedup,
            violation_log: None,
        },
    )
    .await
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.client.post(self.url(path)).json(&body).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    pub async fn patch(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.client.patch(self.url(path)).json(&body).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    pub async fn wait_terminal(&self, id: u64, limit: Duration) -> ActionRecord {
        let deadline = Instant::now() + limit;
        loop {
            let (code, v) = self.get(&format!("/actions/{id}")).await;
            assert_eq!(code, 200, "{v}");
            let rec: ActionRecord = serde_json::from_value(v).unwrap();
            if rec.state.is_terminal() {
                return rec;
            }
            assert!(Instant::now() < deadline, "action {id} still {:?}", rec.state);
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    /// Wait until the action has started ticking.
    pub async fn wait_running(&self, id: u64) {
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            let (_, v) = self.get(&format!("/actions/{id}")).await;
            if v["state"] == "running" {
                return;
            }
            assert!(Instant::now() < deadline, "never ran: {v}");
            tokio::time::sleep(Duration::from_millis(2)).await;
        }
    }
}
