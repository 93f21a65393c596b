use std::io::{BufRead, Write};

use rand_distr::{Distribution, StandardNormal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Condition, Luminosity, MaterialClass, Medium};
use crate::rng::RngStream;

pub const SAMPLE_RATE_HZ: f64 = 100.0;
pub const TRACE_SECONDS: f64 = 90.0;
/// Ambient light level during the reference measurements, in lux.
pub const AMBIENT_FLOOR_LUX: f64 = 15.5;

/// Light intensity time series for one object under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct LightTrace {
    pub material: MaterialClass,
    pub condition: Condition,
    pub samples: Vec<f64>,
    pub rate: f64,
}

impl LightTrace {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    /// Splits into `n` equal consecutive windows (the tail remainder is dropped).
    pub fn windows(&self, n: usize) -> Vec<&[f64]> {
        let len = self.samples.len() / n.max(1);
        if len == 0 {
            return vec![];
        }
        self.samples.chunks_exact(len).take(n).collect()
    }

    /// Means over consecutive windows of `seconds` length.
    pub fn window_means(&self, seconds: f64) -> Vec<f64> {
        let len = ((seconds * self.rate).round() as usize).max(1);
        self.samples
            .chunks_exact(len)
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect()
    }

    /// Writes `t_seconds,intensity` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_seconds,intensity")?;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(w, "{:.2},{:.6}", i as f64 / self.rate, s)?;
        }
        Ok(())
    }

    /// Reads a `t_seconds,intensity` CSV; the rate is inferred from the first
    /// two timestamps.
    pub fn read_csv<R: BufRead>(r: R, material: MaterialClass, condition: Condition) -> Result<Self> {
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (ix, line) in r.lines().enumerate() {
            let line = line?;
            if ix == 0 && line.trim() == "t_seconds,intensity" {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let (Some(t), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::arg(format!("line {}: expected 2 columns", ix + 1)));
            };
            let t: f64 = t
                .trim()
                .parse()
                .map_err(|_| Error::arg(format!("line {}: bad time", ix + 1)))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::arg(format!("line {}: bad intensity", ix + 1)))?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::arg(format!("line {}: intensity must be finite and >= 0", ix + 1)));
            }
            times.push(t);
            samples.push(v);
        }
        let rate = match times.as_slice() {
            [a, b, ..] if b > a => 1.0 / (b - a),
            _ => SAMPLE_RATE_HZ,
        };
        Ok(Self {
            material,
            condition,
            samples,
            rate,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GeneratorEntry {
    pub material: MaterialClass,
    pub condition: Condition,
    pub mean: f64,
    pub std: f64,
    pub drift: f64,
}

/// Per (material, condition) trace statistics.
///
/// A trace is `mean + floor + N(0, std) + drift * sin(2 pi t / drift_period + phase)`
/// with a random phase per trace, clamped at zero. With a drift period well
/// above the trace length the drift mostly shifts the level of each
/// repetition, which is what makes repetitions of one object differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default = "default_floor")]
    pub ambient_floor: f64,
    #[serde(default = "default_drift_period")]
    pub drift_period: f64,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default = "default_seconds")]
    pub seconds: f64,
    pub entries: Vec<GeneratorEntry>,
}

fn default_floor() -> f64 {
    AMBIENT_FLOOR_LUX
}
fn default_drift_period() -> f64 {
    300.0
}
fn default_rate() -> f64 {
    SAMPLE_RATE_HZ
}
fn default_seconds() -> f64 {
    TRACE_SECONDS
}

impl GeneratorSpec {
    pub fn entry(&self, material: MaterialClass, condition: Condition) -> Option<&GeneratorEntry> {
        self.entries
            .iter()
            .find(|e| e.material == material && e.condition == condition)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.seconds > 0.0 && self.drift_period > 0.0) {
            return Err(Error::config("generator rate, seconds and drift_period must be > 0"));
        }
        if !(self.ambient_floor >= 0.0) {
            return Err(Error::config("ambient floor must be >= 0"));
        }
        for e in &self.entries {
            if !(e.std >= 0.0 && e.drift >= 0.0 && e.mean.is_finite()) {
                return Err(Error::config(format!(
                    "generator entry {}/{} needs finite mean and std, drift >= 0",
                    e.material, e.condition
                )));
            }
        }
        Ok(())
    }

    pub fn from_fn(f: impl Fn(MaterialClass, Condition) -> (f64, f64, f64)) -> Self {
        let entries = Condition::ALL
            .iter()
            .flat_map(|&c| MaterialClass::ALL.iter().map(move |&m| (m, c)))
            .map(|(material, condition)| {
                let (mean, std, drift) = f(material, condition);
                GeneratorEntry {
                    material,
                    condition,
                    mean,
                    std,
                    drift,
                }
            })
            .collect();
        Self {
            ambient_floor: AMBIENT_FLOOR_LUX,
            drift_period: default_drift_period(),
            rate: SAMPLE_RATE_HZ,
            seconds: TRACE_SECONDS,
            entries,
        }
    }

    /// Preset whose classification accuracy resembles the reference
    /// measurements: objects separate cleanly within one condition, while
    /// water attenuation and the ambient floor make levels collide across
    /// conditions.
    pub fn paper_like() -> Self {
        Self::from_fn(|m, c| {
            // Reflected level in air under darkness, and per-object noise.
            let (level, std) = match m {
                MaterialClass::Paperboard => (40.0, 1.6),
                MaterialClass::Hdpe => (52.0, 2.4),
                MaterialClass::Pet => (24.0, 1.0),
                MaterialClass::Aluminium => (88.0, 3.2),
                MaterialClass::Ceramic => (68.0, 2.0),
                MaterialClass::Wood => (32.0, 1.3),
            };
            let gain = match c.medium {
                Medium::Air => 1.0,
                Medium::Water => 0.78,
            };
            let ambient_boost = match c.luminosity {
                Luminosity::Ambient => 0.08 * level,
                Luminosity::Darkness => 0.0,
            };
            (level * gain + ambient_boost, std * gain, 3.0)
        })
    }

    /// Every object and condition shares one distribution.
    pub fn chance() -> Self {
        let mut s = Self::from_fn(|_, _| (50.0, 3.0, 1.0));
        s.ambient_floor = 0.0;
        s
    }

    /// Widely spaced levels and noise scales in every condition.
    pub fn separable() -> Self {
        Self::from_fn(|m, _| {
            let i = m.index() as f64;
            (20.0 + 30.0 * i, 0.5 + 0.5 * i, 0.2)
        })
    }
}

/// Draws one trace for `(material, condition)`.
pub fn generate_trace(
    spec: &GeneratorSpec,
    material: MaterialClass,
    condition: Condition,
    rng: &mut RngStream,
) -> Result<LightTrace> {
    let e = spec.entry(material, condition).ok_or_else(|| {
        Error::config(format!("generator has no entry for {material}/{condition}"))
    })?;
    let n = (spec.rate * spec.seconds).round() as usize;
    let floor = match condition.luminosity {
        Luminosity::Ambient => spec.ambient_floor,
        Luminosity::Darkness => 0.0,
    };
    let phase = rng.uniform() * std::f64::consts::TAU;
    let omega = std::f64::consts::TAU / spec.drift_period;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / spec.rate;
            let noise: f64 = StandardNormal.sample(rng);
            let v = e.mean + floor + e.std * noise + e.drift * (omega * t + phase).sin();
            v.max(0.0)
        })
        .collect();
    Ok(LightTrace {
        material,
        condition,
        samples,
        rate: spec.rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn single(mean: f64, std: f64, drift: f64) -> GeneratorSpec {
        GeneratorSpec::from_fn(|_, _| (mean, std, drift))
    }

    #[test]
    fn paper_conformant_length() {
        let mut rng = derive_stream(1, "sensing");
        for c in Condition::ALL {
            let t = generate_trace(&GeneratorSpec::paper_like(), MaterialClass::Pet, c, &mut rng).unwrap();
            assert_eq!(t.samples.len(), 9000);
            assert_eq!(t.rate, 100.0);
            assert!(t.samples.iter().all(|s| s.is_finite() && *s >= 0.0));
        }
    }

    #[test]
    fn noiseless_darkness_is_constant() {
        let mut rng = derive_stream(1, "sensing");
        let dark = Condition::new(Medium::Water, Luminosity::Darkness);
        let t = generate_trace(&single(12.5, 0.0, 0.0), MaterialClass::Wood, dark, &mut rng).unwrap();
        assert!(t.samples.iter().all(|&s| s == 12.5));
        let amb = Condition::new(Medium::Water, Luminosity::Ambient);
        let t = generate_trace(&single(12.5, 0.0, 0.0), MaterialClass::Wood, amb, &mut rng).unwrap();
        assert!(t.samples.iter().all(|&s| s == 12.5 + AMBIENT_FLOOR_LUX));
    }

    #[test]
    fn sample_mean_near_configured() {
        // sd of the mean over 1e4 samples with std 2 is 0.02; 0.1 is 5 sd.
        let mut spec = single(40.0, 2.0, 0.0);
        spec.seconds = 100.0;
        let dark = Condition::new(Medium::Air, Luminosity::Darkness);
        let t = generate_trace(&spec, MaterialClass::Hdpe, dark, &mut derive_stream(9, "sensing")).unwrap();
        assert_eq!(t.samples.len(), 10_000);
        let mean = t.samples.iter().sum::<f64>() / t.samples.len() as f64;
        assert!((mean - 40.0).abs() <= 0.1, "{mean}");
    }

    #[test]
    fn missing_entry_is_config_error() {
        let mut spec = GeneratorSpec::paper_like();
        spec.entries.retain(|e| e.material != MaterialClass::Wood);
        let r = generate_trace(&spec, MaterialClass::Wood, Condition::default(), &mut derive_stream(1, "s"));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn csv_round_trip() {
        let t = LightTrace {
            material: MaterialClass::Ceramic,
            condition: Condition::default(),
            samples: vec![1.0, 2.5, 3.25],
            rate: 100.0,
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_seconds,intensity\n0.00,1.000000\n0.01,2.500000"));
        let back = LightTrace::read_csv(&buf[..], t.material, t.condition).unwrap();
        assert_eq!(back.samples, t.samples);
        assert!((back.rate - 100.0).abs() < 1e-9);
        assert!(LightTrace::read_csv(&b"0,1,2\n"[..], t.material, t.condition).is_err());
    }

    #[test]
    fn window_means_count() {
        let t = generate_trace(
            &GeneratorSpec::paper_like(),
            MaterialClass::Aluminium,
            Condition::default(),
            &mut derive_stream(3, "sensing"),
        )
        .unwrap();
        assert_eq!(t.window_means(1.0).len(), 90);
        assert_eq!(t.windows(3).len(), 3);
        assert_eq!(t.windows(3)[0].len(), 3000);
    }
}
