//! Deterministic discrete-event engine and the canonical event log.
//!
//! Events pop in lexicographic `(time, insertion_seq)` order. Every dispatched
//! event is appended to the log before its handler runs; handlers may append
//! further records and schedule new events but never execute them directly.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Typed engine events expose a log label and a structured payload.
pub trait EventPayload {
    fn kind(&self) -> &'static str;
    fn payload(&self) -> Value;
}

/// One record of the canonical event log.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub seq: u64,
    pub time: f64,
    pub kind: String,
    pub payload: Value,
}

impl SimEvent {
    /// Canonical single-line JSON: keys in fixed order, object keys sorted,
    /// floats printed with six decimals.
    pub fn to_canonical_line(&self) -> String {
        let mut out = String::with_capacity(96);
        let _ = write!(out, "{{\"seq\":{},\"time\":{},\"kind\":", self.seq, fmt_float(self.time));
        write_json_string(&mut out, &self.kind);
        out.push_str(",\"payload\":");
        write_canonical(&mut out, &self.payload);
        out.push('}');
        out
    }

    pub fn parse_line(line: &str) -> Result<SimEvent> {
        let v: Value = serde_json::from_str(line)?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Json("log record is not an object".into()))?;
        if obj.len() != 4 {
            return Err(Error::Json("log record must have exactly 4 keys".into()));
        }
        let seq = obj
            .get("seq")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Json("missing integer 'seq'".into()))?;
        let time = obj
            .get("time")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Json("missing numeric 'time'".into()))?;
        let kind = obj
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Json("missing string 'kind'".into()))?
            .to_owned();
        let payload = obj
            .get("payload")
            .cloned()
            .ok_or_else(|| Error::Json("missing 'payload'".into()))?;
        Ok(SimEvent {
            seq,
            time,
            kind,
            payload,
        })
    }

    pub fn field(&self, key: &str) -> Option<&Value> {
        self.payload.get(key)
    }
}

fn fmt_float(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_owned()
    } else {
        s
    }
}

fn write_json_string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"));
}

fn write_canonical(out: &mut String, v: &Value) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                out.push_str(&fmt_float(n.as_f64().unwrap_or(0.0)));
            }
        }
        Value::String(s) => write_json_string(out, s),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_json_string(out, k);
                out.push(':');
                write_canonical(out, &map[k]);
            }
            out.push('}');
        }
    }
}

/// Canonical JSON text for an arbitrary value (sorted keys, 6-decimal floats).
pub fn canonical_json(v: &Value) -> String {
    let mut s = String::new();
    write_canonical(&mut s, v);
    s
}

/// Append-only record of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<SimEvent>,
}

impl EventLog {
    pub fn from_events(events: Vec<SimEvent>) -> Self {
        Self { events }
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last(&self) -> Option<&SimEvent> {
        self.events.last()
    }

    fn push(&mut self, time: f64, kind: &str, payload: Value) -> u64 {
        let seq = self.events.len() as u64;
        self.events.push(SimEvent {
            seq,
            time,
            kind: kind.to_owned(),
            payload,
        });
        seq
    }

    pub fn to_ndjson(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&e.to_canonical_line());
            s.push('\n');
        }
        s
    }

    /// Hex SHA-256 of the canonical ndjson text.
    pub fn sha256(&self) -> String {
        sha256_hex(self.to_ndjson().as_bytes())
    }

    pub fn write_ndjson(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.events {
            f.write_all(e.to_canonical_line().as_bytes())?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SimEvent> {
        self.events.iter()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Cancellation handle returned by [`Engine::schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Handle(u64);

struct Entry<E> {
    time: f64,
    insert_seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest entry.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.insert_seq.cmp(&self.insert_seq))
    }
}

/// Pending events ordered by `(time, insertion_seq)`.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    next_insert: u64,
    cancelled: HashSet<u64>,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_insert: 0,
            cancelled: HashSet::new(),
        }
    }
}

impl<E> EventQueue<E> {
    pub fn push(&mut self, time: f64, event: E) -> Handle {
        let insert_seq = self.next_insert;
        self.next_insert += 1;
        self.heap.push(Entry {
            time,
            insert_seq,
            event,
        });
        Handle(insert_seq)
    }

    pub fn cancel(&mut self, handle: Handle) -> bool {
        if handle.0 >= self.next_insert || !self.heap.iter().any(|e| e.insert_seq == handle.0) {
            return false;
        }
        self.cancelled.insert(handle.0)
    }

    fn drop_cancelled_head(&mut self) {
        while let Some(head) = self.heap.peek() {
            if self.cancelled.remove(&head.insert_seq) {
                self.heap.pop();
            } else {
                break;
            }
        }
    }

    pub fn peek_time(&mut self) -> Option<f64> {
        self.drop_cancelled_head();
        self.heap.peek().map(|e| e.time)
    }

    pub fn pop(&mut self) -> Option<(f64, E)> {
        self.drop_cancelled_head();
        self.heap.pop().map(|e| (e.time, e.event))
    }

    pub fn len(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reacts to dispatched events.
pub trait Handler<E> {
    fn handle(&mut self, engine: &mut Engine<E>, event: E) -> Result<()>;
}

impl<E, F> Handler<E> for F
where
    F: FnMut(&mut Engine<E>, E) -> Result<()>,
{
    fn handle(&mut self, engine: &mut Engine<E>, event: E) -> Result<()> {
        self(engine, event)
    }
}

/// Single-threaded event loop with seeded per-subsystem randomness.
pub struct Engine<E> {
    clock: f64,
    queue: EventQueue<E>,
    log: EventLog,
    seed: u64,
    streams: BTreeMap<String, RngStream>,
}

impl<E: EventPayload> Engine<E> {
    pub fn new(seed: u64) -> Self {
        Self {
            clock: 0.0,
            queue: EventQueue::default(),
            log: EventLog::default(),
            seed,
            streams: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> f64 {
        self.clock
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn next_event_time(&mut self) -> Option<f64> {
        self.queue.peek_time()
    }

    /// Stream for `label`, derived from the engine seed on first use.
    pub fn rng(&mut self, label: &str) -> &mut RngStream {
        let seed = self.seed;
        self.streams
            .entry(label.to_owned())
            .or_insert_with(|| RngStream::derive(seed, label))
    }

    pub fn schedule(&mut self, time: f64, event: E) -> Result<Handle> {
        if time.is_nan() || time < self.clock {
            return Err(Error::Schedule {
                time,
                clock: self.clock,
            });
        }
        Ok(self.queue.push(time, event))
    }

    pub fn schedule_in(&mut self, delay: f64, event: E) -> Result<Handle> {
        self.schedule(self.clock + delay, event)
    }

    pub fn cancel(&mut self, handle: Handle) -> bool {
        self.queue.cancel(handle)
    }

    /// Appends a record stamped with the current clock; returns its seq.
    pub fn record(&mut self, kind: &str, payload: Value) -> u64 {
        self.log.push(self.clock, kind, payload)
    }

    fn dispatch<H: Handler<E>>(&mut self, time: f64, event: E, handler: &mut H) -> Result<()> {
        self.clock = time;
        self.log.push(time, event.kind(), event.payload());
        if let Err(e) = handler.handle(self, event) {
            let message = e.to_string();
            self.record("ERROR", serde_json::json!({ "message": message }));
            return Err(Error::Handler { time, message });
        }
        Ok(())
    }

    /// Dispatches every event with `time <= t_end`; the clock ends at `t_end`.
    pub fn run_until<H: Handler<E>>(&mut self, t_end: f64, handler: &mut H) -> Result<f64> {
        if t_end.is_nan() || t_end < self.clock {
            return Err(Error::arg(format!(
                "run_until target {t_end} precedes clock {}",
                self.clock
            )));
        }
        while let Some(t) = self.queue.peek_time() {
            if t > t_end {
                break;
            }
            let (time, event) = self.queue.pop().expect("peeked entry exists");
            self.dispatch(time, event, handler)?;
        }
        if t_end.is_finite() {
            self.clock = t_end;
        }
        Ok(self.clock)
    }

    /// Dispatches until the queue drains; the clock stays at the last event.
    pub fn run_to_completion<H: Handler<E>>(&mut self, handler: &mut H) -> Result<f64> {
        while let Some((time, event)) = self.queue.pop() {
            self.dispatch(time, event, handler)?;
        }
        Ok(self.clock)
    }
}
