//! Run summaries derived from the canonical event log.
//!
//! Reports are always computed from the canonical text form so a report
//! recomputed from a file on disk is identical to one computed in-process.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::comms::{tally_probe, ProbeResult};
use crate::engine::{sha256_hex, EventLog, SimEvent};
use crate::error::{Error, Result};
use crate::model::MaterialClass;
use crate::offload::{compute_stats, processing_throughput, OffloadStats, FRAME_KIND};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub fraction: f64,
    pub covered_cells: u64,
    pub total_cells: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    /// Joules drawn by the whole fleet.
    pub total_used: f64,
    /// Meters travelled by the whole fleet.
    pub distance: f64,
    pub per_auv: Vec<Value>,
}

/// Ground truth against prediction; `counts[true][predicted]` in
/// [`MaterialClass::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTally {
    pub materials: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl Default for ConfusionTally {
    fn default() -> Self {
        Self {
            materials: MaterialClass::ALL.iter().map(|m| m.as_str().to_owned()).collect(),
            counts: vec![vec![0; MaterialClass::COUNT]; MaterialClass::COUNT],
        }
    }
}

impl ConfusionTally {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAccuracy {
    pub classified: u64,
    pub correct: u64,
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadReport {
    pub stats: OffloadStats,
    /// Frames per simulated second between the first and last completion.
    pub throughput: Option<f64>,
    /// Frames dispatched to each worker, keyed by device id.
    pub dispatch: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub distance: f64,
    pub sent: u64,
    pub delivered: u64,
    pub fraction: f64,
}

impl From<ProbeResult> for ProbeRow {
    fn from(r: ProbeResult) -> Self {
        Self {
            distance: r.distance,
            sent: r.sent,
            delivered: r.delivered,
            fraction: r.fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: Option<u64>,
    pub end_time: f64,
    pub event_count: u64,
    pub log_hash: String,
    pub coverage: Option<CoverageSummary>,
    /// Detected items by true material.
    pub detections: BTreeMap<String, u64>,
    /// Classified items by predicted material.
    pub classifications: BTreeMap<String, u64>,
    pub confusion: ConfusionTally,
    /// Correct-classification fraction per sensing condition.
    pub per_condition: BTreeMap<String, ConditionAccuracy>,
    pub offload: Option<OffloadReport>,
    pub probe: Option<Vec<ProbeRow>>,
    pub energy: Option<EnergySummary>,
    pub lost: u64,
    pub mission_finished: Option<bool>,
    /// Applied operator command kinds, in order.
    pub commands: Vec<String>,
    pub sensing_bench: Option<Value>,
}

fn material_map() -> BTreeMap<String, u64> {
    MaterialClass::ALL
        .iter()
        .map(|m| (m.as_str().to_owned(), 0))
        .collect()
}

fn material_of(v: Option<&Value>) -> Option<MaterialClass> {
    v.and_then(Value::as_str).and_then(|s| s.parse().ok())
}

impl Report {
    pub fn from_log(log: &EventLog) -> Result<Self> {
        Self::from_ndjson(&log.to_ndjson())
    }

    /// Parses canonical ndjson and tallies it. The hash covers the text as given.
    pub fn from_ndjson(text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let e = SimEvent::parse_line(line)
                .map_err(|err| Error::Json(format!("line {}: {err}", i + 1)))?;
            events.push(e);
        }
        Ok(Self::tally(&events, sha256_hex(text.as_bytes())))
    }

    fn tally(events: &[SimEvent], log_hash: String) -> Self {
        let mut r = Report {
            seed: None,
            end_time: events.last().map_or(0.0, |e| e.time),
            event_count: events.len() as u64,
            log_hash,
            coverage: None,
            detections: material_map(),
            classifications: material_map(),
            confusion: ConfusionTally::default(),
            per_condition: BTreeMap::new(),
            offload: None,
            probe: None,
            energy: None,
            lost: 0,
            mission_finished: None,
            commands: Vec::new(),
            sensing_bench: None,
        };
        let mut probe_distances: Option<Vec<f64>> = None;
        let mut offload_seen = false;

        for e in events {
            match e.kind.as_str() {
                "SCENARIO_START" => r.seed = e.field("seed").and_then(Value::as_u64),
                "CLASSIFIED" => {
                    let truth = material_of(e.field("true_material"));
                    let pred = material_of(e.field("predicted"));
                    if let (Some(t), Some(p)) = (truth, pred) {
                        // Every detection is classified exactly once.
                        *r.detections.entry(t.as_str().to_owned()).or_default() += 1;
                        *r.classifications.entry(p.as_str().to_owned()).or_default() += 1;
                        r.confusion.counts[t.index()][p.index()] += 1;
                        let cond = e
                            .field("condition")
                            .and_then(Value::as_str)
                            .unwrap_or("unknown")
                            .to_owned();
                        let acc = r.per_condition.entry(cond).or_insert(ConditionAccuracy {
                            classified: 0,
                            correct: 0,
                            fraction: None,
                        });
                        acc.classified += 1;
                        acc.correct += u64::from(t == p);
                    }
                }
                "LOST" => r.lost += 1,
                "COMMAND_APPLIED" => r.commands.push(
                    e.field("kind")
                        .and_then(Value::as_str)
                        .unwrap_or("UNKNOWN")
                        .to_owned(),
                ),
                "MISSION_SUMMARY" => {
                    let p = &e.payload;
                    r.coverage = Some(CoverageSummary {
                        fraction: p["coverage"].as_f64().unwrap_or(0.0),
                        covered_cells: p["covered_cells"].as_u64().unwrap_or(0),
                        total_cells: p["total_cells"].as_u64().unwrap_or(0),
                    });
                    r.energy = Some(EnergySummary {
                        total_used: p["energy_used"].as_f64().unwrap_or(0.0),
                        distance: p["distance"].as_f64().unwrap_or(0.0),
                        per_auv: p["auvs"].as_array().cloned().unwrap_or_default(),
                    });
                    r.mission_finished = p["finished"].as_bool();
                }
                "PROBE_START" => {
                    probe_distances = e.field("distances").and_then(Value::as_array).map(|a| {
                        a.iter().filter_map(Value::as_f64).collect()
                    });
                }
                "OFFLOAD_START" => offload_seen = true,
                "SENSING_BENCH" => r.sensing_bench = Some(e.payload.clone()),
                _ => {}
            }
        }

        for acc in r.per_condition.values_mut() {
            if acc.classified > 0 {
                acc.fraction = Some(acc.correct as f64 / acc.classified as f64);
            }
        }
        if let Some(d) = probe_distances {
            r.probe = Some(tally_probe(events, &d).into_iter().map(ProbeRow::from).collect());
        }
        if offload_seen {
            if let Ok(stats) = compute_stats(events) {
                let mut dispatch = BTreeMap::new();
                for e in events.iter().filter(|e| e.kind == "SEND") {
                    let msg = &e.payload["msg"];
                    if msg["kind"] == FRAME_KIND {
                        if let Some(dst) = msg["dst"].as_u64() {
                            *dispatch.entry(dst.to_string()).or_default() += 1;
                        }
                    }
                }
                r.offload = Some(OffloadReport {
                    stats,
                    throughput: processing_throughput(events),
                    dispatch,
                });
            }
        }
        r
    }

    /// Flat `(metric, value)` pairs for tabular output.
    pub fn csv_rows(&self) -> Vec<(String, String)> {
        let mut rows: Vec<(String, String)> = Vec::new();
        let mut push = |k: String, v: String| rows.push((k, v));
        push("seed".into(), self.seed.map(|s| s.to_string()).unwrap_or_default());
        push("end_time".into(), format!("{:.6}", self.end_time));
        push("event_count".into(), self.event_count.to_string());
        push("log_hash".into(), self.log_hash.clone());
        if let Some(c) = &self.coverage {
            push("coverage.fraction".into(), format!("{:.6}", c.fraction));
            push("coverage.covered_cells".into(), c.covered_cells.to_string());
            push("coverage.total_cells".into(), c.total_cells.to_string());
        }
        for (m, n) in &self.detections {
            push(format!("detections.{m}"), n.to_string());
        }
        for (m, n) in &self.classifications {
            push(format!("classifications.{m}"), n.to_string());
        }
        for (i, t) in self.confusion.materials.iter().enumerate() {
            for (j, p) in self.confusion.materials.iter().enumerate() {
                push(format!("confusion.{t}.{p}"), self.confusion.counts[i][j].to_string());
            }
        }
        for (c, a) in &self.per_condition {
            push(format!("condition.{c}.classified"), a.classified.to_string());
            push(format!("condition.{c}.correct"), a.correct.to_string());
            if let Some(f) = a.fraction {
                push(format!("condition.{c}.fraction"), format!("{f:.6}"));
            }
        }
        if let Some(o) = &self.offload {
            push("offload.frames_sent".into(), o.stats.frames_sent.to_string());
            push("offload.frames_processed".into(), o.stats.frames_processed.to_string());
            push("offload.results_received".into(), o.stats.results_received.to_string());
            push("offload.completion_rate".into(), format!("{:.6}", o.stats.completion_rate));
            push("offload.success_rate".into(), format!("{:.6}", o.stats.success_rate));
            if let Some(t) = o.throughput {
                push("offload.throughput".into(), format!("{t:.6}"));
            }
            for (w, n) in &o.dispatch {
                push(format!("offload.dispatch.{w}"), n.to_string());
            }
        }
        if let Some(p) = &self.probe {
            for row in p {
                let d = format!("{:.3}", row.distance);
                push(format!("probe.{d}.sent"), row.sent.to_string());
                push(format!("probe.{d}.delivered"), row.delivered.to_string());
                push(format!("probe.{d}.fraction"), format!("{:.6}", row.fraction));
            }
        }
        if let Some(e) = &self.energy {
            push("energy.total_used".into(), format!("{:.6}", e.total_used));
            push("energy.distance".into(), format!("{:.6}", e.distance));
        }
        push("lost".into(), self.lost.to_string());
        if let Some(f) = self.mission_finished {
            push("mission_finished".into(), f.to_string());
        }
        push("commands".into(), self.commands.join(" "));
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ev(seq: u64, time: f64, kind: &str, payload: Value) -> SimEvent {
        SimEvent {
            seq,
            time,
            kind: kind.into(),
            payload,
        }
    }

    #[test]
    fn tallies_classifications() {
        let log = EventLog::from_events(vec![
            ev(0, 0.0, "SCENARIO_START", json!({"seed": 4})),
            ev(1, 1.0, "DETECTION", json!({"item": 0})),
            ev(2, 1.0, "CLASSIFIED", json!({"true_material": "PET", "predicted": "PET", "condition": "water-ambient"})),
            ev(3, 2.0, "DETECTION", json!({"item": 1})),
            ev(4, 2.0, "CLASSIFIED", json!({"true_material": "HDPE", "predicted": "WOOD", "condition": "water-ambient"})),
            ev(5, 3.0, "COMMAND_APPLIED", json!({"kind": "PAUSE"})),
        ]);
        let r = Report::from_log(&log).unwrap();
        assert_eq!(r.seed, Some(4));
        assert_eq!(r.detections["PET"], 1);
        assert_eq!(r.detections["HDPE"], 1);
        assert_eq!(r.classifications["WOOD"], 1);
        assert_eq!(r.confusion.total(), 2);
        assert_eq!(r.confusion.correct(), 1);
        assert_eq!(r.per_condition["water-ambient"].fraction, Some(0.5));
        assert_eq!(r.commands, vec!["PAUSE"]);
        assert_eq!(r.log_hash, log.sha256());
        assert!(r.offload.is_none());
    }

    #[test]
    fn empty_log() {
        let r = Report::from_ndjson("").unwrap();
        assert_eq!(r.event_count, 0);
        assert_eq!(r.detections.values().sum::<u64>(), 0);
    }

    #[test]
    fn bad_line_names_line_number() {
        let err = Report::from_ndjson("{\"seq\":0,\"time\":0.0,\"kind\":\"A\",\"payload\":{}}\nnope\n")
            .unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
