//! Published JSON schemas.

use abyss_core::scenario::Scenario;
use abyss_core::sensing::BenchConfig;
use schemars::schema_for;
use serde_json::Value;

use crate::request::{CommandRequest, MissionRequest};

pub const NAMES: [&str; 4] = ["scenario", "mission-request", "command", "bench-config"];

pub fn schema(name: &str) -> Option<Value> {
    let s = match name {
        "scenario" => schema_for!(Scenario),
        "mission-request" => schema_for!(MissionRequest),
        "command" => schema_for!(CommandRequest),
        "bench-config" => schema_for!(BenchConfig),
        _ => return None,
    };
    Some(serde_json::to_value(s).expect("schemas serialize"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves() {
        for n in NAMES {
            let s = schema(n).unwrap();
            assert!(s.get("$schema").is_some(), "{n}");
        }
        assert!(schema("nope").is_none());
    }
}
