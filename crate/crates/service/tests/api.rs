use std::net::SocketAddr;
use std::time::{Duration, Instant};

use abyss_service::{serve_on, AppState};
use futures_util::StreamExt;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

async fn start() -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_on(listener, AppState::default()));
    addr
}

fn rect(x1: f64, y1: f64) -> Value {
    json!({
        "polygon": [
            {"x": 0, "y": 0, "z": 0}, {"x": x1, "y": 0, "z": 0},
            {"x": x1, "y": y1, "z": 0}, {"x": 0, "y": y1, "z": 0}
        ],
        "depth_range": [0, 0]
    })
}

fn request(time_scale: Value) -> Value {
    json!({
        "area": rect(200.0, 40.0),
        "fleet_size": 1,
        "plan": { "spacing": 20 },
        "seed": 3,
        "time_scale": time_scale,
    })
}

struct Api {
    base: String,
    http: Client,
}

impl Api {
    async fn new() -> Self {
        let addr = start().await;
        Self {
            base: format!("http://{addr}/v1"),
            http: Client::new(),
        }
    }

    async fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let r = self.http.post(format!("{}{path}", self.base)).json(body).send().await.unwrap();
        let s = r.status();
        (s, r.json().await.unwrap_or(Value::Null))
    }

    async fn post_raw(&self, path: &str, body: &str) -> StatusCode {
        self.http
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .body(body.to_owned())
            .send()
            .await
            .unwrap()
            .status()
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        let s = r.status();
        (s, r.json().await.unwrap_or(Value::Null))
    }

    async fn create(&self, body: &Value) -> String {
        let (s, v) = self.post("/missions", body).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_owned()
    }

    async fn command(&self, id: &str, cmd: Value) -> (StatusCode, Value) {
        self.post(&format!("/missions/{id}/commands"), &cmd).await
    }

    async fn wait_terminal(&self, id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let (_, v) = self.get(&format!("/missions/{id}")).await;
            if v["status"] == "FINISHED" || v["status"] == "FAILED" {
                return v;
            }
            assert!(Instant::now() < deadline, "mission {id} did not finish");
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    }

    fn ws_url(&self, id: &str) -> String {
        format!("{}/missions/{id}/stream", self.base.replace("http://", "ws://"))
    }
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn next_frame(ws: &mut Ws) -> Option<Value> {
    loop {
        match tokio::time::timeout(Duration::from_secs(30), ws.next()).await.ok()?? {
            Ok(Message::Text(t)) => return Some(serde_json::from_str(&t).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

fn has_event(frame: &Value, pred: impl Fn(&Value) -> bool) -> bool {
    frame["type"] == "events" && frame["events"].as_array().unwrap().iter().any(pred)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn create_square_mission() {
    let api = Api::new().await;
    let mut body = request(json!("AS_FAST_AS_POSSIBLE"));
    body["area"] = rect(40.0, 40.0);
    let (s, v) = api.post("/missions", &body).await;
    assert_eq!(s, StatusCode::CREATED);
    assert!(v["id"].is_string());
    assert_eq!(v["plan_summary"]["strips"], 3);
    let id = v["id"].as_str().unwrap();
    let done = api.wait_terminal(id).await;
    assert_eq!(done["status"], "FINISHED");
    let (s, report) = api.get(&format!("/missions/{id}/report")).await;
    assert_eq!(s, StatusCode::OK);
    // No pollutants: nothing detected, but ground was covered.
    assert_eq!(report["detections"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum::<u64>(), 0);
    assert!(report["coverage"]["fraction"].as_f64().unwrap() > 0.0);
    assert_eq!(report["log_hash"].as_str().unwrap().len(), 64);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn invalid_requests_rejected() {
    let api = Api::new().await;
    assert_eq!(api.post_raw("/missions", "{not json").await, StatusCode::BAD_REQUEST);
    assert_eq!(api.post_raw("/missions", r#"{"fleet_size": 1}"#).await, StatusCode::BAD_REQUEST);
    assert_eq!(api.post_raw("/missions", r#"{"bogus": 1}"#).await, StatusCode::BAD_REQUEST);

    let mut bow_tie = request(json!(1.0));
    bow_tie["area"]["polygon"] = json!([
        {"x": 0, "y": 0, "z": 0}, {"x": 10, "y": 10, "z": 0},
        {"x": 10, "y": 0, "z": 0}, {"x": 0, "y": 10, "z": 0}
    ]);
    let (s, v) = api.post("/missions", &bow_tie).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");

    let mut zero_spacing = request(json!(1.0));
    zero_spacing["plan"]["spacing"] = json!(0);
    assert_eq!(api.post("/missions", &zero_spacing).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn comms_infeasible_fleet_is_unprocessable() {
    let api = Api::new().await;
    let mut body = request(json!(1.0));
    body["area"] = rect(200.0, 60.0);
    body["fleet_size"] = json!(3);
    body["mission"] = json!({ "comms_range": 5.0 });
    let (s, v) = api.post("/missions", &body).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let msg = v["error"].as_str().unwrap();
    assert!(msg.contains("AUVs 0 and 1"), "{msg}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unknown_mission_is_404() {
    let api = Api::new().await;
    assert_eq!(api.get("/missions/nope").await.0, StatusCode::NOT_FOUND);
    assert_eq!(api.get("/missions/nope/report").await.0, StatusCode::NOT_FOUND);
    assert_eq!(api.command("nope", json!({"kind": "PAUSE"})).await.0, StatusCode::NOT_FOUND);
    match tokio_tungstenite::connect_async(api.ws_url("nope")).await {
        Err(tokio_tungstenite::tungstenite::Error::Http(r)) => assert_eq!(r.status(), 404),
        other => panic!("expected 404 handshake, got {other:?}"),
    }
    assert_eq!(api.get("/schemas/nope").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn schemas_published() {
    let api = Api::new().await;
    for n in ["scenario", "mission-request", "command", "bench-config"] {
        let (s, v) = api.get(&format!("/schemas/{n}")).await;
        assert_eq!(s, StatusCode::OK, "{n}");
        assert!(v["$schema"].is_string());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_halts_sim_time_and_resume_continues() {
    let api = Api::new().await;
    let id = api.create(&request(json!(100.0))).await;
    tokio::time::sleep(Duration::from_millis(300)).await;
    let (s, v) = api.command(&id, json!({"kind": "PAUSE", "issued_at": 1.0})).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    assert_eq!(v["issued_at"], 1.0);
    let t_pause = v["sim_time"].as_f64().unwrap();
    assert!(t_pause > 0.0);
    tokio::time::sleep(Duration::from_millis(500)).await;
    let (_, m) = api.get(&format!("/missions/{id}")).await;
    assert_eq!(m["status"], "PAUSED");
    assert_eq!(m["sim_time"].as_f64().unwrap(), t_pause);
    assert_eq!(api.get(&format!("/missions/{id}/report")).await.0, StatusCode::CONFLICT);

    assert_eq!(api.command(&id, json!({"kind": "RESUME"})).await.0, StatusCode::ACCEPTED);
    tokio::time::sleep(Duration::from_millis(300)).await;
    let (_, m) = api.get(&format!("/missions/{id}")).await;
    assert!(m["sim_time"].as_f64().unwrap() > t_pause);

    assert_eq!(api.command(&id, json!({"kind": "ABORT"})).await.0, StatusCode::ACCEPTED);
    api.wait_terminal(&id).await;
    let (s, report) = api.get(&format!("/missions/{id}/report")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(report["commands"], json!(["PAUSE", "RESUME", "ABORT"]));
    assert_eq!(api.command(&id, json!({"kind": "RESUME"})).await.0, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_command_rejected() {
    let api = Api::new().await;
    let id = api.create(&request(json!(10.0))).await;
    assert_eq!(api.command(&id, json!({"kind": "JUMP"})).await.0, StatusCode::BAD_REQUEST);
    let mut bad_area = rect(10.0, 10.0);
    bad_area["polygon"] = json!([{"x": 0, "y": 0, "z": 0}, {"x": 1, "y": 1, "z": 0}]);
    let (s, _) = api.command(&id, json!({"kind": "RETASK", "area": bad_area})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    api.command(&id, json!({"kind": "ABORT"})).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn constraint_removes_strip_and_abort_terminates_stream() {
    let api = Api::new().await;
    let id = api.create(&request(json!(50.0))).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(api.ws_url(&id)).await.unwrap();
    let snap = next_frame(&mut ws).await.unwrap();
    assert_eq!(snap["type"], "telemetry");
    let t0 = snap["time"].as_f64().unwrap();

    // A band around the far strip (y = 40), well away from the others.
    let band = json!([
        {"x": -10, "y": 35, "z": 0}, {"x": 210, "y": 35, "z": 0},
        {"x": 210, "y": 45, "z": 0}, {"x": -10, "y": 45, "z": 0}
    ]);
    let (s, v) = api
        .command(&id, json!({"kind": "ADD_CONSTRAINT", "constraint": {"reference": {"region": band}, "distance": 1.0}}))
        .await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");

    let mut removed = false;
    let mut last_t = t0;
    while !removed {
        let f = next_frame(&mut ws).await.expect("stream ended early");
        let t = f["time"].as_f64().unwrap();
        assert!(t >= last_t);
        last_t = t;
        removed = has_event(&f, |e| e["kind"] == "STRIP_REMOVED" && e["payload"]["reason"] == "constraint");
    }

    assert_eq!(api.command(&id, json!({"kind": "ABORT"})).await.0, StatusCode::ACCEPTED);
    let mut saw_returning = false;
    let mut terminal = None;
    while let Some(f) = next_frame(&mut ws).await {
        let t = f["time"].as_f64().unwrap();
        assert!(t >= last_t);
        last_t = t;
        if f["type"] == "telemetry" && !saw_returning {
            let auvs = f["auvs"].as_array().unwrap();
            if auvs.iter().all(|a| a["status"] == "RETURNING" || a["status"] == "DOCKED") {
                saw_returning = true;
            }
        }
        if f["terminal"] == true {
            terminal = Some(f);
        }
    }
    assert!(saw_returning);
    let terminal = terminal.expect("terminal frame");
    assert_eq!(terminal["status"], "FINISHED");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_subscribers_see_same_frames() {
    let api = Api::new().await;
    let mut body = request(json!(200.0));
    body["area"] = rect(60.0, 40.0);
    let id = api.create(&body).await;
    api.command(&id, json!({"kind": "PAUSE"})).await;
    let (mut a, _) = tokio_tungstenite::connect_async(api.ws_url(&id)).await.unwrap();
    let (mut b, _) = tokio_tungstenite::connect_async(api.ws_url(&id)).await.unwrap();
    next_frame(&mut a).await.unwrap();
    next_frame(&mut b).await.unwrap();
    api.command(&id, json!({"kind": "RESUME"})).await;

    async fn collect(ws: &mut Ws) -> (Vec<Value>, Vec<Duration>) {
        let mut frames = Vec::new();
        let mut gaps = Vec::new();
        let mut last = Instant::now();
        while let Some(f) = next_frame(ws).await {
            gaps.push(last.elapsed());
            last = Instant::now();
            frames.push(f);
        }
        (frames, gaps)
    }
    let ((fa, gaps), (fb, _)) = tokio::join!(collect(&mut a), collect(&mut b));
    let resumed = |fs: &[Value]| {
        fs.iter()
            .position(|f| has_event(f, |e| e["kind"] == "COMMAND_APPLIED" && e["payload"]["kind"] == "RESUME"))
            .expect("resume seen")
    };
    let (ia, ib) = (resumed(&fa), resumed(&fb));
    assert_eq!(fa[ia..], fb[ib..]);
    assert_eq!(fa.last().unwrap()["terminal"], true);
    assert!(gaps.iter().all(|g| *g < Duration::from_secs(1)), "{gaps:?}");
    for w in fa.windows(2) {
        assert!(w[1]["time"].as_f64() >= w[0]["time"].as_f64());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn late_subscriber_to_finished_mission_gets_terminal_snapshot() {
    let api = Api::new().await;
    let mut body = request(json!("AS_FAST_AS_POSSIBLE"));
    body["area"] = rect(40.0, 40.0);
    let id = api.create(&body).await;
    api.wait_terminal(&id).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(api.ws_url(&id)).await.unwrap();
    let f = next_frame(&mut ws).await.unwrap();
    assert_eq!(f["terminal"], true);
    assert!(next_frame(&mut ws).await.is_none());
}
