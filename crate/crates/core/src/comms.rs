//! Underwater link models: bandwidth, latency and distance-dependent
//! Bernoulli delivery.
//!
//! All distances are meters. The built-in `paper-wifi` profile encodes the
//! centimetre-scale delivery steps measured for WiFi between submerged
//! devices: full delivery up to 7 cm, 70 % up to 10 cm, nothing beyond.

use std::collections::HashMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::{Engine, EventPayload};
use crate::error::{Error, Result};

/// Log label and stream label for link draws.
pub const COMMS_STREAM: &str = "comms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Breakpoint {
    pub max_distance: f64,
    pub probability: f64,
}

/// Piecewise-constant distance to delivery probability map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(try_from = "Vec<Breakpoint>", into = "Vec<Breakpoint>")]
pub struct DeliveryCurve {
    breakpoints: Vec<Breakpoint>,
}

impl DeliveryCurve {
    pub fn new(breakpoints: Vec<Breakpoint>) -> Result<Self> {
        for b in &breakpoints {
            if !(0.0..=1.0).contains(&b.probability) {
                return Err(Error::config(format!(
                    "delivery probability {} outside [0,1]",
                    b.probability
                )));
            }
            if !(b.max_distance >= 0.0) {
                return Err(Error::config("breakpoint distance must be >= 0"));
            }
        }
        if breakpoints
            .windows(2)
            .any(|w| !(w[0].max_distance < w[1].max_distance))
        {
            return Err(Error::config(
                "breakpoint distances must be strictly increasing",
            ));
        }
        Ok(Self { breakpoints })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(max_distance, probability)| Breakpoint {
                    max_distance,
                    probability,
                })
                .collect(),
        )
    }

    /// Probability of the first breakpoint whose `max_distance >= d`, else 0.
    pub fn probability(&self, d: f64) -> f64 {
        self.breakpoints
            .iter()
            .find(|b| b.max_distance >= d)
            .map_or(0.0, |b| b.probability)
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.breakpoints
    }

    pub fn is_non_increasing(&self) -> bool {
        self.breakpoints
            .windows(2)
            .all(|w| w[1].probability <= w[0].probability)
    }

    /// Largest distance with non-zero delivery probability.
    pub fn range(&self) -> f64 {
        self.breakpoints
            .iter()
            .rev()
            .find(|b| b.probability > 0.0)
            .map_or(0.0, |b| b.max_distance)
    }
}

impl TryFrom<Vec<Breakpoint>> for DeliveryCurve {
    type Error = Error;
    fn try_from(v: Vec<Breakpoint>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DeliveryCurve> for Vec<Breakpoint> {
    fn from(c: DeliveryCurve) -> Self {
        c.breakpoints
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    #[serde(default)]
    pub name: String,
    /// Bits per second.
    pub bandwidth: f64,
    /// Meters per second.
    pub propagation_speed: f64,
    /// Seconds.
    #[serde(default)]
    pub fixed_latency: f64,
    pub curve: DeliveryCurve,
}

pub const PAPER_WIFI: &str = "paper-wifi";
pub const ACOUSTIC: &str = "acoustic";
pub const OPTICAL: &str = "optical";

impl LinkSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !(self.propagation_speed > 0.0) {
            return Err(Error::config(format!(
                "link '{}' needs bandwidth > 0 and propagation_speed > 0",
                self.name
            )));
        }
        if !(self.fixed_latency >= 0.0) {
            return Err(Error::config(format!(
                "link '{}' has negative fixed latency",
                self.name
            )));
        }
        Ok(())
    }

    /// 802.11 between devices a few centimetres apart underwater.
    pub fn paper_wifi() -> Self {
        Self {
            name: PAPER_WIFI.into(),
            bandwidth: 1.0e8,
            // Radio in water: roughly c / 9.
            propagation_speed: 3.3e7,
            fixed_latency: 0.001,
            curve: DeliveryCurve::from_pairs(&[(0.07, 1.0), (0.10, 0.70)]).unwrap(),
        }
    }

    /// Long-range acoustic modem. Placeholder figures.
    pub fn acoustic() -> Self {
        Self {
            name: ACOUSTIC.into(),
            bandwidth: 1.0e4,
            propagation_speed: 1500.0,
            fixed_latency: 0.0,
            curve: DeliveryCurve::from_pairs(&[(1000.0, 1.0)]).unwrap(),
        }
    }

    /// Short-range optical modem with meter-scale steps.
    pub fn optical() -> Self {
        Self {
            name: OPTICAL.into(),
            bandwidth: 1.0e6,
            propagation_speed: 2.25e8,
            fixed_latency: 0.0,
            curve: DeliveryCurve::from_pairs(&[(5.0, 1.0), (10.0, 0.7)]).unwrap(),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            PAPER_WIFI => Some(Self::paper_wifi()),
            ACOUSTIC => Some(Self::acoustic()),
            OPTICAL => Some(Self::optical()),
            _ => None,
        }
    }
}

pub fn delivery_probability(link: &LinkSpec, d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::arg(format!("distance must be >= 0, got {d}")));
    }
    Ok(link.curve.probability(d))
}

/// Fixed latency plus transmission plus propagation delay.
pub fn latency(link: &LinkSpec, size_bits: f64, d: f64) -> Result<f64> {
    if !(size_bits > 0.0) {
        return Err(Error::arg("message size must be > 0"));
    }
    if !(d >= 0.0) {
        return Err(Error::arg("distance must be >= 0"));
    }
    Ok(link.fixed_latency + size_bits / link.bandwidth + d / link.propagation_speed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: u64,
    pub src: u32,
    pub dst: u32,
    /// Bits.
    pub size: f64,
    pub kind: String,
    pub payload: Value,
}

impl Message {
    pub fn to_json(&self) -> Value {
        json!({
            "id": self.id,
            "src": self.src,
            "dst": self.dst,
            "size": self.size,
            "kind": self.kind,
            "payload": self.payload,
        })
    }
}

/// A delivered message arriving at its destination; logged as `RECEIVE`.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub link: String,
    pub msg: Message,
}

impl EventPayload for Delivery {
    fn kind(&self) -> &'static str {
        "RECEIVE"
    }
    fn payload(&self) -> Value {
        json!({ "link": self.link, "msg": self.msg.to_json() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeliveryOutcome {
    Delivered { at: f64 },
    Dropped,
}

impl DeliveryOutcome {
    pub fn is_delivered(&self) -> bool {
        matches!(self, DeliveryOutcome::Delivered { .. })
    }
}

/// Link registry plus per-pair FIFO state.
#[derive(Debug, Clone, Default)]
pub struct Network {
    links: HashMap<String, LinkSpec>,
    last_arrival: HashMap<(String, u32, u32), f64>,
    next_msg_id: u64,
}

impl Network {
    /// Registry preloaded with the built-in profiles.
    pub fn with_builtins() -> Self {
        let mut n = Self::default();
        for l in [LinkSpec::paper_wifi(), LinkSpec::acoustic(), LinkSpec::optical()] {
            n.links.insert(l.name.clone(), l);
        }
        n
    }

    /// Adds or replaces a profile; built-in profiles must stay non-increasing.
    pub fn insert(&mut self, mut link: LinkSpec, name: &str) -> Result<()> {
        link.name = name.to_owned();
        link.validate()?;
        self.links.insert(name.to_owned(), link);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&LinkSpec> {
        self.links
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown link profile '{name}'")))
    }

    pub fn next_message_id(&mut self) -> u64 {
        let id = self.next_msg_id;
        self.next_msg_id += 1;
        id
    }

    /// Sends `msg` over `link_name`: one uniform draw decides delivery. Logs
    /// `SEND`, then either `DROP` now or a scheduled `RECEIVE` built by
    /// `on_receive`. Deliveries between a pair never overtake each other.
    pub fn transmit<E, F>(
        &mut self,
        engine: &mut Engine<E>,
        link_name: &str,
        msg: Message,
        d: f64,
        on_receive: F,
    ) -> Result<DeliveryOutcome>
    where
        E: EventPayload,
        F: FnOnce(Delivery) -> E,
    {
        if msg.src == msg.dst {
            return Err(Error::arg(format!("message {} sent to itself", msg.id)));
        }
        let link = self.get(link_name)?;
        let p = delivery_probability(link, d)?;
        let lat = latency(link, msg.size, d)?;
        let name = link.name.clone();

        let draw = engine.rng(COMMS_STREAM).uniform();
        engine.record(
            "SEND",
            json!({ "link": name, "distance": d, "msg": msg.to_json() }),
        );
        if draw < p {
            let key = (name.clone(), msg.src, msg.dst);
            let earliest = engine.now() + lat;
            let at = self
                .last_arrival
                .get(&key)
                .map_or(earliest, |&prev| prev.max(earliest));
            self.last_arrival.insert(key, at);
            engine.schedule(at, on_receive(Delivery { link: name, msg }))?;
            Ok(DeliveryOutcome::Delivered { at })
        } else {
            engine.record(
                "DROP",
                json!({ "link": name, "distance": d, "msg": msg.to_json() }),
            );
            Ok(DeliveryOutcome::Dropped)
        }
    }
}

/// Delivered counts for one probe distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub distance: f64,
    pub sent: u64,
    pub delivered: u64,
}

impl ProbeResult {
    pub fn fraction(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.delivered as f64 / self.sent as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub link: String,
    pub distances: Vec<f64>,
    pub trials: u64,
    /// Bits per probe message.
    #[serde(default = "default_probe_size")]
    pub message_size: f64,
}

fn default_probe_size() -> f64 {
    8000.0
}

/// Probe traffic driven by the engine; a sender at node 0 transmits
/// back-to-back messages to node 1 at each configured distance in turn.
#[derive(Debug, Clone)]
pub enum ProbeEvent {
    Send { distance_ix: usize, trial: u64 },
    Receive(Delivery),
}

impl EventPayload for ProbeEvent {
    fn kind(&self) -> &'static str {
        match self {
            ProbeEvent::Send { .. } => "PROBE_TICK",
            ProbeEvent::Receive(d) => d.kind(),
        }
    }
    fn payload(&self) -> Value {
        match self {
            ProbeEvent::Send { distance_ix, trial } => {
                json!({ "distance_ix": distance_ix, "trial": trial })
            }
            ProbeEvent::Receive(d) => d.payload(),
        }
    }
}

pub const PROBE_KIND: &str = "PROBE";

#[derive(Debug, Clone)]
pub struct LinkProbe {
    pub config: ProbeConfig,
}

impl LinkProbe {
    pub fn new(config: ProbeConfig, network: &Network) -> Result<Self> {
        network.get(&config.link)?;
        if config.distances.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::config("probe distances must be >= 0"));
        }
        if !(config.message_size > 0.0) {
            return Err(Error::config("probe message size must be > 0"));
        }
        Ok(Self { config })
    }

    pub fn start<E: EventPayload + From<ProbeEvent>>(&self, engine: &mut Engine<E>) -> Result<()> {
        if self.config.trials > 0 && !self.config.distances.is_empty() {
            engine.schedule(
                engine.now(),
                ProbeEvent::Send {
                    distance_ix: 0,
                    trial: 0,
                }
                .into(),
            )?;
        }
        Ok(())
    }

    pub fn handle<E: EventPayload + From<ProbeEvent>>(
        &mut self,
        engine: &mut Engine<E>,
        network: &mut Network,
        event: ProbeEvent,
    ) -> Result<()> {
        let ProbeEvent::Send { distance_ix, trial } = event else {
            return Ok(());
        };
        let d = self.config.distances[distance_ix];
        let msg = Message {
            id: network.next_message_id(),
            src: 0,
            dst: 1,
            size: self.config.message_size,
            kind: PROBE_KIND.into(),
            payload: json!({ "distance_ix": distance_ix, "trial": trial }),
        };
        network.transmit(engine, &self.config.link, msg, d, |dl| {
            ProbeEvent::Receive(dl).into()
        })?;
        let link = network.get(&self.config.link)?;
        let gap = self.config.message_size / link.bandwidth;
        let next = if trial + 1 < self.config.trials {
            Some((distance_ix, trial + 1))
        } else if distance_ix + 1 < self.config.distances.len() {
            Some((distance_ix + 1, 0))
        } else {
            None
        };
        if let Some((distance_ix, trial)) = next {
            engine.schedule_in(gap, ProbeEvent::Send { distance_ix, trial }.into())?;
        }
        Ok(())
    }
}

/// Runs a standalone probe and tallies delivery per distance from the log.
pub fn probe_delivery(seed: u64, network: &Network, config: ProbeConfig) -> Result<Vec<ProbeResult>> {
    let mut net = network.clone();
    let mut probe = LinkProbe::new(config, &net)?;
    let mut engine: Engine<ProbeEvent> = Engine::new(seed);
    probe.start(&mut engine)?;
    let mut handler = |eng: &mut Engine<ProbeEvent>, ev: ProbeEvent| probe.handle(eng, &mut net, ev);
    engine.run_to_completion(&mut handler)?;
    Ok(tally_probe(engine.log().events(), &probe.config.distances))
}

/// Counts probe SEND and RECEIVE records per distance index.
pub fn tally_probe(events: &[crate::engine::SimEvent], distances: &[f64]) -> Vec<ProbeResult> {
    let mut out: Vec<ProbeResult> = distances
        .iter()
        .map(|&distance| ProbeResult {
            distance,
            sent: 0,
            delivered: 0,
        })
        .collect();
    for e in events {
        let Some(msg) = e.field("msg") else { continue };
        if msg["kind"] != PROBE_KIND {
            continue;
        }
        let Some(ix) = msg["payload"]["distance_ix"].as_u64() else {
            continue;
        };
        let Some(r) = out.get_mut(ix as usize) else {
            continue;
        };
        match e.kind.as_str() {
            "SEND" => r.sent += 1,
            "RECEIVE" => r.delivered += 1,
            _ => {}
        }
    }
    out
}
