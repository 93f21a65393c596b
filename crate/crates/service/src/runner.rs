//! The per-mission simulation thread.
//!
//! The thread owns the [`ScenarioRun`]. HTTP handlers reach it only through a
//! bounded command queue and read the state it publishes.

use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use abyss_core::engine::SimEvent;
use abyss_core::mission::ControlCommand;
use abyss_core::report::Report;
use abyss_core::scenario::{Scenario, ScenarioRun};
use abyss_core::Error;
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot};

use crate::request::TimeScale;

pub const COMMAND_QUEUE: usize = 64;
const FRAME_CHANNEL: usize = 256;
/// Telemetry is published at least this often while the mission runs.
const FRAME_INTERVAL: Duration = Duration::from_millis(200);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Running,
    Paused,
    Finished,
    Failed,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Finished | Status::Failed)
    }
}

/// One WebSocket message, serialized once and fanned out.
#[derive(Debug)]
pub struct Frame {
    pub time: f64,
    pub terminal: bool,
    pub text: String,
}

pub struct Shared {
    pub status: Status,
    pub sim_time: f64,
    pub plan_summary: Value,
    /// Latest telemetry frame; late subscribers start from it.
    pub latest: Arc<Frame>,
    pub report: Option<Report>,
    pub error: Option<String>,
}

pub struct CommandMsg {
    pub command: ControlCommand,
    pub reply: oneshot::Sender<Result<f64, Error>>,
}

pub enum Enqueue {
    Queued,
    Full,
    Closed,
}

/// Handle kept by the API for one mission.
pub struct MissionHandle {
    pub id: String,
    pub shared: Arc<Mutex<Shared>>,
    pub frames: broadcast::Sender<Arc<Frame>>,
    commands: SyncSender<CommandMsg>,
}

impl MissionHandle {
    pub fn enqueue(&self, msg: CommandMsg) -> Enqueue {
        match self.commands.try_send(msg) {
            Ok(()) => Enqueue::Queued,
            Err(TrySendError::Full(_)) => Enqueue::Full,
            Err(TrySendError::Disconnected(_)) => Enqueue::Closed,
        }
    }

    /// Subscribes and returns the current snapshot atomically with respect
    /// to publication.
    pub fn subscribe(&self) -> (Arc<Frame>, broadcast::Receiver<Arc<Frame>>) {
        let s = self.shared.lock().expect("mission state lock");
        (s.latest.clone(), self.frames.subscribe())
    }
}

struct Runner {
    id: String,
    run: ScenarioRun,
    shared: Arc<Mutex<Shared>>,
    frames: broadcast::Sender<Arc<Frame>>,
    commands: Receiver<CommandMsg>,
    pace: Option<f64>,
    dt: f64,
    sent_events: usize,
    last_frame: Instant,
    log_dir: Option<std::path::PathBuf>,
}

/// Builds the run on a new thread and reports construction errors back.
pub fn spawn(
    id: String,
    scenario: Scenario,
    seed: Option<u64>,
    time_scale: TimeScale,
    log_dir: Option<std::path::PathBuf>,
) -> oneshot::Receiver<Result<MissionHandle, Error>> {
    let (ready_tx, ready_rx) = oneshot::channel();
    std::thread::Builder::new()
        .name(format!("mission-{id}"))
        .spawn(move || {
            let run = match ScenarioRun::new(&scenario, seed) {
                Ok(r) => r,
                Err(e) => {
                    let _ = ready_tx.send(Err(e));
                    return;
                }
            };
            let (cmd_tx, cmd_rx) = mpsc::sync_channel(COMMAND_QUEUE);
            let (frames, _) = broadcast::channel(FRAME_CHANNEL);
            let plan_summary = run.mission().map_or(Value::Null, |m| m.plan().summary());
            let first = telemetry(&id, &run, false, Status::Running);
            let shared = Arc::new(Mutex::new(Shared {
                status: Status::Running,
                sim_time: run.now(),
                plan_summary,
                latest: Arc::new(first),
                report: None,
                error: None,
            }));
            let handle = MissionHandle {
                id: id.clone(),
                shared: shared.clone(),
                frames: frames.clone(),
                commands: cmd_tx,
            };
            if ready_tx.send(Ok(handle)).is_err() {
                return;
            }
            let mut r = Runner {
                id,
                dt: scenario.mission.dt,
                run,
                shared,
                frames,
                commands: cmd_rx,
                pace: time_scale.wall_per_sim(),
                sent_events: 0,
                last_frame: Instant::now(),
                log_dir,
            };
            r.main_loop();
        })
        .expect("spawn mission thread");
    ready_rx
}

fn telemetry(id: &str, run: &ScenarioRun, terminal: bool, status: Status) -> Frame {
    let time = run.now();
    let (auvs, coverage, detections) = match run.mission() {
        Some(m) => {
            let s = m.snapshot();
            (json!(s.auvs), s.coverage, json!(s.detections))
        }
        None => (json!([]), 0.0, json!({})),
    };
    let v = json!({
        "type": "telemetry",
        "mission_id": id,
        "time": time,
        "status": status,
        "auvs": auvs,
        "coverage": coverage,
        "detections": detections,
        "terminal": terminal,
    });
    Frame {
        time,
        terminal,
        text: v.to_string(),
    }
}

fn event_json(e: &SimEvent) -> Value {
    json!({ "seq": e.seq, "time": e.time, "kind": e.kind, "payload": e.payload })
}

impl Runner {
    fn paused(&self) -> bool {
        self.run.mission().is_some_and(|m| m.is_paused())
    }

    fn status(&self) -> Status {
        if self.paused() {
            Status::Paused
        } else {
            Status::Running
        }
    }

    fn apply(&mut self, msg: CommandMsg) {
        let res = self.run.apply_command(&msg.command).map(|()| self.run.now());
        let _ = msg.reply.send(res);
        self.publish(false, self.status());
    }

    /// Sends new log records, then a telemetry frame, and updates the shared state.
    fn publish(&mut self, terminal: bool, status: Status) {
        let events = &self.run.log().events()[self.sent_events..];
        let time = self.run.now();
        let batch = (!events.is_empty()).then(|| {
            let v = json!({
                "type": "events",
                "mission_id": self.id,
                "time": time,
                "events": events.iter().map(event_json).collect::<Vec<_>>(),
            });
            Arc::new(Frame {
                time,
                terminal: false,
                text: v.to_string(),
            })
        });
        self.sent_events = self.run.log().len();
        let frame = Arc::new(telemetry(&self.id, &self.run, terminal, status));
        let mut s = self.shared.lock().expect("mission state lock");
        s.status = status;
        s.sim_time = time;
        s.latest = frame.clone();
        // Send errors only mean nobody is listening.
        if let Some(b) = batch {
            let _ = self.frames.send(b);
        }
        let _ = self.frames.send(frame);
        self.last_frame = Instant::now();
    }

    fn publish_if_due(&mut self) {
        if self.last_frame.elapsed() >= FRAME_INTERVAL {
            self.publish(false, self.status());
        }
    }

    /// Waits until `deadline`, applying commands as they arrive. Returns
    /// false once every handle is gone.
    fn wait_until(&mut self, deadline: Instant) -> bool {
        loop {
            let now = Instant::now();
            if now >= deadline {
                return true;
            }
            let slice = (deadline - now).min(FRAME_INTERVAL);
            match self.commands.recv_timeout(slice) {
                Ok(msg) => self.apply(msg),
                Err(RecvTimeoutError::Timeout) => self.publish_if_due(),
                Err(RecvTimeoutError::Disconnected) => return false,
            }
        }
    }

    fn main_loop(&mut self) {
        let mut next_wall = Instant::now();
        let mut failure = None;
        loop {
            while let Ok(msg) = self.commands.try_recv() {
                self.apply(msg);
            }
            if self.paused() {
                self.publish_if_due();
                match self.commands.recv_timeout(FRAME_INTERVAL) {
                    Ok(msg) => self.apply(msg),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
                next_wall = Instant::now();
                continue;
            }
            if self.run.is_done() {
                break;
            }
            let target = self.run.now() + self.dt;
            if let Err(e) = self.run.advance_to(target) {
                failure = Some(e.to_string());
                break;
            }
            if let Some(k) = self.pace {
                next_wall += Duration::from_secs_f64(self.dt * k);
                if !self.wait_until(next_wall) {
                    break;
                }
            } else {
                self.publish_if_due();
            }
        }
        self.finish(failure);
    }

    fn finish(&mut self, failure: Option<String>) {
        let status = if failure.is_some() {
            Status::Failed
        } else {
            // Match a headless run, which always ends with the clock at the duration.
            let end = self.run.duration();
            let _ = self.run.advance_to(end);
            Status::Finished
        };
        self.run.finish_in_place();
        let report = Report::from_log(self.run.log()).ok();
        if let Some(dir) = &self.log_dir {
            let path = dir.join(format!("{}.ndjson", self.id));
            let _ = std::fs::create_dir_all(dir).and_then(|()| {
                std::fs::write(&path, self.run.log().to_ndjson())
            });
        }
        {
            let mut s = self.shared.lock().expect("mission state lock");
            s.report = report;
            s.error = failure;
        }
        self.publish(true, status);
        // Commands that raced with termination get a definite answer.
        while let Ok(msg) = self.commands.try_recv() {
            let _ = msg.reply.send(Err(Error::Argument("mission has terminated".into())));
        }
    }
}
