//! Master/worker micro-cloud frame offloading.
//!
//! One randomly elected master streams video frames one-by-one to workers
//! picked round-robin. Each worker processes frames FIFO and returns a result
//! to the master. Lost frames or results are never retransmitted, so the
//! session's completion and success rates reflect link loss directly.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::comms::{Delivery, Network, Message};
use crate::engine::{Engine, EventLog, EventPayload, Handle, SimEvent};
use crate::error::{Error, Result};

pub const OFFLOAD_STREAM: &str = "offload";
pub const FRAME_KIND: &str = "FRAME";
pub const RESULT_KIND: &str = "RESULT";

pub type DeviceId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroCloudGroup {
    pub members: Vec<DeviceId>,
    pub master: DeviceId,
    pub workers: Vec<DeviceId>,
}

impl MicroCloudGroup {
    pub fn with_master(members: Vec<DeviceId>, master: DeviceId) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::config(
                "a micro-cloud needs at least two members",
            ));
        }
        if !members.contains(&master) {
            return Err(Error::config(format!("master {master} is not a member")));
        }
        let workers = members.iter().copied().filter(|&m| m != master).collect();
        Ok(Self {
            members,
            master,
            workers,
        })
    }
}

/// Picks the master uniformly at random; workers keep input order.
pub fn elect_master<R: Rng + ?Sized>(members: &[DeviceId], rng: &mut R) -> Result<MicroCloudGroup> {
    if members.len() < 2 {
        return Err(Error::config(format!(
            "a micro-cloud needs at least two members, got {}",
            members.len()
        )));
    }
    let master = members[rng.random_range(0..members.len())];
    MicroCloudGroup::with_master(members.to_vec(), master)
}

/// Round-robin worker choice; advances `counter`.
pub fn dispatch_next(group: &MicroCloudGroup, counter: &mut u64) -> DeviceId {
    let w = group.workers[(*counter % group.workers.len() as u64) as usize];
    *counter += 1;
    w
}

/// 224x224 RGB at 8 bits per channel.
pub const DEFAULT_FRAME_BITS: f64 = 224.0 * 224.0 * 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameJob {
    pub frame_id: u64,
    /// Bits.
    pub size: f64,
    pub resolution: (u32, u32),
}

impl FrameJob {
    pub fn standard(frame_id: u64) -> Self {
        Self {
            frame_id,
            size: DEFAULT_FRAME_BITS,
            resolution: (224, 224),
        }
    }
}

/// Per-frame processing time and the overheads of casing and submersion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ProcessingModel {
    pub base_time: f64,
    pub encasing_overhead: f64,
    pub submersion_overhead: f64,
}

impl Default for ProcessingModel {
    /// 28 ms base keeps an encased device at the surface just above 30 fps;
    /// casing adds ~5 ms and submersion ~20 ms.
    fn default() -> Self {
        Self {
            base_time: 0.028,
            encasing_overhead: 0.005,
            submersion_overhead: 0.020,
        }
    }
}

impl ProcessingModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_time >= 0.0 && self.encasing_overhead >= 0.0 && self.submersion_overhead >= 0.0) {
            return Err(Error::config("processing times must be >= 0"));
        }
        Ok(())
    }
}

pub fn frame_duration(model: &ProcessingModel, encased: bool, submerged: bool) -> Result<f64> {
    if submerged && !encased {
        return Err(Error::arg("a bare device cannot be submerged"));
    }
    let mut t = model.base_time;
    if encased {
        t += model.encasing_overhead;
    }
    if submerged {
        t += model.submersion_overhead;
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffloadStats {
    pub frames_sent: u64,
    pub frames_processed: u64,
    pub results_received: u64,
    pub completion_rate: f64,
    pub success_rate: f64,
}

impl OffloadStats {
    pub fn from_counts(sent: u64, processed: u64, received: u64) -> Result<Self> {
        if sent == 0 {
            return Err(Error::UndefinedRate("no frames were sent".into()));
        }
        Ok(Self {
            frames_sent: sent,
            frames_processed: processed,
            results_received: received,
            completion_rate: processed as f64 / sent as f64,
            success_rate: received as f64 / sent as f64,
        })
    }
}

fn msg_kind(e: &SimEvent) -> Option<&str> {
    e.field("msg").and_then(|m| m["kind"].as_str())
}

/// Tallies FRAME sends, PROCESS completions and RESULT receipts.
pub fn compute_stats(events: &[SimEvent]) -> Result<OffloadStats> {
    let (mut sent, mut processed, mut received) = (0, 0, 0);
    for e in events {
        match e.kind.as_str() {
            "SEND" if msg_kind(e) == Some(FRAME_KIND) => sent += 1,
            "PROCESS" => processed += 1,
            "RECEIVE" if msg_kind(e) == Some(RESULT_KIND) => received += 1,
            _ => {}
        }
    }
    OffloadStats::from_counts(sent, processed, received)
}

/// Steady-state processing rate: frames completed per simulated second
/// between the first and last PROCESS record.
pub fn processing_throughput(events: &[SimEvent]) -> Option<f64> {
    let times: Vec<f64> = events
        .iter()
        .filter(|e| e.kind == "PROCESS")
        .map(|e| e.time)
        .collect();
    let (first, last) = (times.first()?, times.last()?);
    if times.len() < 2 || last <= first {
        return None;
    }
    Some((times.len() - 1) as f64 / (last - first))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SendMode {
    /// Next frame goes out as soon as the previous transmission finishes.
    #[default]
    Pipelined,
    /// Next frame waits for the previous result or a timeout.
    StopAndWait,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PairDistance {
    pub a: DeviceId,
    pub b: DeviceId,
    pub distance: f64,
}

/// Symmetric per-pair distances with a default.
#[derive(Debug, Clone, PartialEq)]
pub struct Distances {
    default: f64,
    pairs: BTreeMap<(DeviceId, DeviceId), f64>,
}

impl Distances {
    pub fn uniform(d: f64) -> Self {
        Self {
            default: d,
            pairs: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, a: DeviceId, b: DeviceId, d: f64) {
        self.pairs.insert((a.min(b), a.max(b)), d);
    }

    pub fn get(&self, a: DeviceId, b: DeviceId) -> f64 {
        self.pairs
            .get(&(a.min(b), a.max(b)))
            .copied()
            .unwrap_or(self.default)
    }
}

/// Scenario block for a micro-cloud session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OffloadConfig {
    pub devices: u32,
    pub frames: u64,
    /// Master to worker link profile.
    pub link: String,
    /// Worker to master link profile; defaults to `link`.
    #[serde(default)]
    pub uplink: Option<String>,
    /// Meters between every pair unless overridden.
    pub distance: f64,
    #[serde(default)]
    pub pair_distances: Vec<PairDistance>,
    #[serde(default)]
    pub encased: bool,
    #[serde(default)]
    pub submerged: bool,
    #[serde(default)]
    pub processing: Option<ProcessingModel>,
    #[serde(default)]
    pub mode: SendMode,
    #[serde(default = "default_frame_bits")]
    pub frame_size: f64,
    #[serde(default = "default_result_bits")]
    pub result_size: f64,
    /// Stop-and-wait timeout in seconds.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default)]
    pub start_time: f64,
}

fn default_frame_bits() -> f64 {
    DEFAULT_FRAME_BITS
}
fn default_result_bits() -> f64 {
    8000.0
}
fn default_timeout() -> f64 {
    1.0
}

impl OffloadConfig {
    pub fn validate(&self, network: &Network) -> Result<()> {
        if self.devices < 2 {
            return Err(Error::config("offload needs at least 2 devices"));
        }
        if self.frames == 0 {
            return Err(Error::config("offload needs at least one frame"));
        }
        network.get(&self.link)?;
        if let Some(up) = &self.uplink {
            network.get(up)?;
        }
        if !(self.distance >= 0.0) || self.pair_distances.iter().any(|p| !(p.distance >= 0.0)) {
            return Err(Error::config("offload distances must be >= 0"));
        }
        if !(self.frame_size > 0.0 && self.result_size > 0.0 && self.timeout > 0.0) {
            return Err(Error::config("frame/result sizes and timeout must be > 0"));
        }
        if !(self.start_time >= 0.0) {
            return Err(Error::config("offload start_time must be >= 0"));
        }
        self.processing.unwrap_or_default().validate()?;
        frame_duration(&ProcessingModel::default(), self.encased, self.submerged)
            .map_err(|e| Error::config(e.to_string()))?;
        Ok(())
    }

    pub fn distances(&self) -> Distances {
        let mut d = Distances::uniform(self.distance);
        for p in &self.pair_distances {
            d.set(p.a, p.b, p.distance);
        }
        d
    }
}

#[derive(Debug, Clone)]
pub enum OffloadEvent {
    SendNext,
    Receive(Delivery),
    ProcessDone { worker: DeviceId, frame_id: u64 },
    Timeout { frame_id: u64 },
}

impl EventPayload for OffloadEvent {
    fn kind(&self) -> &'static str {
        match self {
            OffloadEvent::SendNext => "OFFLOAD_SEND_READY",
            OffloadEvent::Receive(d) => d.kind(),
            OffloadEvent::ProcessDone { .. } => "PROCESS",
            OffloadEvent::Timeout { .. } => "OFFLOAD_TIMEOUT",
        }
    }

    fn payload(&self) -> Value {
        match self {
            OffloadEvent::SendNext => json!({}),
            OffloadEvent::Receive(d) => d.payload(),
            OffloadEvent::ProcessDone { worker, frame_id } => {
                json!({ "worker": worker, "frame_id": frame_id })
            }
            OffloadEvent::Timeout { frame_id } => json!({ "frame_id": frame_id }),
        }
    }
}

#[derive(Debug, Default)]
struct WorkerState {
    busy: bool,
    queue: VecDeque<u64>,
}

/// Session state machine; drive it with [`OffloadSession::handle`].
#[derive(Debug)]
pub struct OffloadSession {
    pub group: MicroCloudGroup,
    frames: Vec<FrameJob>,
    downlink: String,
    uplink: String,
    distances: Distances,
    frame_time: f64,
    mode: SendMode,
    result_size: f64,
    timeout: f64,
    next_frame: usize,
    dispatch_counter: u64,
    workers: BTreeMap<DeviceId, WorkerState>,
    pending_timeout: Option<(u64, Handle)>,
}

impl OffloadSession {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        group: MicroCloudGroup,
        frames: Vec<FrameJob>,
        downlink: &str,
        uplink: &str,
        distances: Distances,
        model: &ProcessingModel,
        encased: bool,
        submerged: bool,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::arg("offload session needs at least one frame"));
        }
        let workers = group
            .workers
            .iter()
            .map(|&w| (w, WorkerState::default()))
            .collect();
        Ok(Self {
            group,
            frames,
            downlink: downlink.to_owned(),
            uplink: uplink.to_owned(),
            distances,
            frame_time: frame_duration(model, encased, submerged)?,
            mode: SendMode::Pipelined,
            result_size: default_result_bits(),
            timeout: default_timeout(),
            next_frame: 0,
            dispatch_counter: 0,
            workers,
            pending_timeout: None,
        })
    }

    /// Elects a master from the engine's offload stream and builds the session.
    pub fn from_config<E: EventPayload>(config: &OffloadConfig, engine: &mut Engine<E>) -> Result<Self> {
        let members: Vec<DeviceId> = (0..config.devices).collect();
        let group = elect_master(&members, engine.rng(OFFLOAD_STREAM))?;
        let frames = (0..config.frames)
            .map(|i| FrameJob {
                size: config.frame_size,
                ..FrameJob::standard(i)
            })
            .collect();
        let uplink = config.uplink.clone().unwrap_or_else(|| config.link.clone());
        let mut s = Self::new(
            group,
            frames,
            &config.link,
            &uplink,
            config.distances(),
            &config.processing.unwrap_or_default(),
            config.encased,
            config.submerged,
        )?;
        s.mode = config.mode;
        s.result_size = config.result_size;
        s.timeout = config.timeout;
        Ok(s)
    }

    pub fn with_mode(mut self, mode: SendMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn frame_time(&self) -> f64 {
        self.frame_time
    }

    pub fn start<E: EventPayload + From<OffloadEvent>>(&self, engine: &mut Engine<E>, at: f64) -> Result<()> {
        engine.record(
            "OFFLOAD_START",
            json!({
                "master": self.group.master,
                "workers": self.group.workers,
                "frames": self.frames.len(),
                "frame_time": self.frame_time,
            }),
        );
        engine.schedule(at, OffloadEvent::SendNext.into())?;
        Ok(())
    }

    fn send_frame<E: EventPayload + From<OffloadEvent>>(
        &mut self,
        engine: &mut Engine<E>,
        network: &mut Network,
    ) -> Result<()> {
        let Some(frame) = self.frames.get(self.next_frame).copied() else {
            return Ok(());
        };
        self.next_frame += 1;
        let worker = dispatch_next(&self.group, &mut self.dispatch_counter);
        let msg = Message {
            id: network.next_message_id(),
            src: self.group.master,
            dst: worker,
            size: frame.size,
            kind: FRAME_KIND.into(),
            payload: json!({ "frame_id": frame.frame_id }),
        };
        let d = self.distances.get(self.group.master, worker);
        network.transmit(engine, &self.downlink, msg, d, |dl| OffloadEvent::Receive(dl).into())?;

        let more = self.next_frame < self.frames.len();
        match self.mode {
            SendMode::Pipelined if more => {
                let tx = frame.size / network.get(&self.downlink)?.bandwidth;
                engine.schedule_in(tx, OffloadEvent::SendNext.into())?;
            }
            SendMode::StopAndWait => {
                let h = engine.schedule_in(
                    self.timeout,
                    OffloadEvent::Timeout {
                        frame_id: frame.frame_id,
                    }
                    .into(),
                )?;
                self.pending_timeout = Some((frame.frame_id, h));
            }
            _ => {}
        }
        Ok(())
    }

    fn start_processing<E: EventPayload + From<OffloadEvent>>(
        &mut self,
        engine: &mut Engine<E>,
        worker: DeviceId,
    ) -> Result<()> {
        let frame_time = self.frame_time;
        let w = self
            .workers
            .get_mut(&worker)
            .ok_or_else(|| Error::arg(format!("device {worker} is not a worker")))?;
        if w.busy {
            return Ok(());
        }
        if let Some(frame_id) = w.queue.pop_front() {
            w.busy = true;
            engine.schedule_in(frame_time, OffloadEvent::ProcessDone { worker, frame_id }.into())?;
        }
        Ok(())
    }

    pub fn handle<E: EventPayload + From<OffloadEvent>>(
        &mut self,
        engine: &mut Engine<E>,
        network: &mut Network,
        event: OffloadEvent,
    ) -> Result<()> {
        match event {
            OffloadEvent::SendNext => self.send_frame(engine, network),
            OffloadEvent::Receive(d) => {
                let frame_id = d.msg.payload["frame_id"]
                    .as_u64()
                    .ok_or_else(|| Error::arg("offload message without frame_id"))?;
                if d.msg.kind == FRAME_KIND {
                    let worker = d.msg.dst;
                    self.workers
                        .get_mut(&worker)
                        .ok_or_else(|| Error::arg(format!("device {worker} is not a worker")))?
                        .queue
                        .push_back(frame_id);
                    self.start_processing(engine, worker)
                } else {
                    match self.pending_timeout {
                        Some((pending, h)) if pending == frame_id && self.mode == SendMode::StopAndWait => {
                            engine.cancel(h);
                            self.pending_timeout = None;
                            self.send_frame(engine, network)
                        }
                        _ => Ok(()),
                    }
                }
            }
            OffloadEvent::ProcessDone { worker, frame_id } => {
                if let Some(w) = self.workers.get_mut(&worker) {
                    w.busy = false;
                }
                let msg = Message {
                    id: network.next_message_id(),
                    src: worker,
                    dst: self.group.master,
                    size: self.result_size,
                    kind: RESULT_KIND.into(),
                    payload: json!({ "frame_id": frame_id }),
                };
                let d = self.distances.get(worker, self.group.master);
                network.transmit(engine, &self.uplink, msg, d, |dl| OffloadEvent::Receive(dl).into())?;
                self.start_processing(engine, worker)
            }
            OffloadEvent::Timeout { frame_id } => {
                if matches!(self.pending_timeout, Some((p, _)) if p == frame_id) {
                    self.pending_timeout = None;
                    self.send_frame(engine, network)?;
                }
                Ok(())
            }
        }
    }
}

/// Runs one session on a fresh engine and derives stats from its log.
pub fn run_offload_session(
    seed: u64,
    network: &Network,
    config: &OffloadConfig,
) -> Result<(OffloadStats, EventLog)> {
    config.validate(network)?;
    let mut net = network.clone();
    let mut engine: Engine<OffloadEvent> = Engine::new(seed);
    let mut session = OffloadSession::from_config(config, &mut engine)?;
    session.start(&mut engine, config.start_time)?;
    engine.run_to_completion(&mut |eng: &mut Engine<OffloadEvent>, ev| session.handle(eng, &mut net, ev))?;
    let log = engine.into_log();
    Ok((compute_stats(log.events())?, log))
}
