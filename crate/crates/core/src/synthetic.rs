//! Synthetic event logs drawn from a small process description.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Duration, SecondsFormat, TimeZone, Utc};
use rand::Rng;

use crate::config::{ConfigError, KeyValues};
use crate::event_log::{build_log, EventLog, LogError, RawEvent, RawTrace};
use crate::training::stream;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid process spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub activities: Vec<String>,
    pub probability: f64,
}

/// Mean duration with uniform integer jitter in `[-jitter, jitter]`,
/// truncated at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DurationLaw {
    pub mean_seconds: u64,
    pub jitter_seconds: u64,
}

/// An optional repeated block inserted into one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopSpec {
    pub variant: usize,
    /// Number of leading variant activities before the loop.
    pub after: usize,
    /// Each body position draws uniformly from its alternatives.
    pub body: Vec<Vec<String>>,
    /// Probability of one more repetition; the count is geometric.
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessSpec {
    pub variants: Vec<Variant>,
    pub durations: BTreeMap<String, DurationLaw>,
    pub default_duration: DurationLaw,
    pub loop_spec: Option<LoopSpec>,
}

fn acts(s: &str) -> Vec<String> {
    s.split(',')
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .collect()
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.variants.is_empty() {
            return bad("no variants".into());
        }
        let total: f64 = self.variants.iter().map(|v| v.probability).sum();
        if (total - 1.0).abs() > 1e-9 || self.variants.iter().any(|v| !(v.probability >= 0.0)) {
            return bad(format!("variant probabilities sum to {total}, expected 1"));
        }
        if let Some(v) = self.variants.iter().find(|v| v.activities.is_empty()) {
            return bad(format!("empty variant with probability {}", v.probability));
        }
        if let Some(l) = &self.loop_spec {
            if l.variant >= self.variants.len() {
                return bad(format!("loop refers to missing variant {}", l.variant));
            }
            if !(0.0..1.0).contains(&l.p) {
                return bad(format!("loop probability {} outside [0, 1)", l.p));
            }
            if l.body.is_empty() || l.body.iter().any(Vec::is_empty) {
                return bad("loop body has an empty position".into());
            }
        }
        Ok(())
    }

    fn law(&self, activity: &str) -> DurationLaw {
        self.durations.get(activity).copied().unwrap_or(self.default_duration)
    }

    /// Three fixed variants over 8 activities that differ at the second
    /// event; lengths 4, 6 and 8; deterministic hour-scale durations.
    pub fn memorization() -> Self {
        let hours = |h: f64| DurationLaw {
            mean_seconds: (h * 3600.0) as u64,
            jitter_seconds: 0,
        };
        let durations = [
            ("A", 1.0),
            ("B", 2.0),
            ("C", 1.5),
            ("D", 3.0),
            ("E", 0.5),
            ("F", 4.0),
            ("G", 2.5),
            ("H", 1.0),
        ]
        .into_iter()
        .map(|(a, h)| (a.to_string(), hours(h)))
        .collect();
        Self {
            variants: vec![
                Variant {
                    activities: acts("A,B,C,D"),
                    probability: 0.5,
                },
                Variant {
                    activities: acts("A,E,F,G,C,D"),
                    probability: 0.3,
                },
                Variant {
                    activities: acts("A,H,B,E,F,G,C,D"),
                    probability: 0.2,
                },
            ],
            durations,
            default_duration: hours(1.0),
            loop_spec: None,
        }
    }

    /// Two short fixed variants and one with a geometric loop of random
    /// three-event blocks, giving a heavy length tail.
    pub fn skewed_loop(p: f64) -> Self {
        let block = acts("X,Y,Z");
        Self {
            variants: vec![
                Variant {
                    activities: acts("A,B,C,D,E,F"),
                    probability: 0.35,
                },
                Variant {
                    activities: acts("A,C,B,D,F"),
                    probability: 0.35,
                },
                Variant {
                    activities: acts("A,G,H"),
                    probability: 0.3,
                },
            ],
            durations: BTreeMap::new(),
            default_duration: DurationLaw {
                mean_seconds: 3600,
                jitter_seconds: 600,
            },
            loop_spec: Some(LoopSpec {
                variant: 2,
                after: 2,
                body: vec![block.clone(), block.clone(), block],
                p,
            }),
        }
    }

    /// Reads a spec from `key = value` text:
    ///
    /// ```text
    /// variant.0 = A,B,C
    /// variant.0.p = 0.7
    /// duration.A = 3600,600
    /// duration.default = 3600,0
    /// loop.variant = 0
    /// loop.after = 2
    /// loop.body = X|Y,Z
    /// loop.p = 0.5
    /// ```
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, SynthError> {
        let mut variants = Vec::new();
        for i in 0.. {
            let Some(v) = kv.get(&format!("variant.{i}")) else {
                break;
            };
            variants.push(Variant {
                activities: acts(v),
                probability: kv.required(&format!("variant.{i}.p"))?,
            });
        }
        let law = |s: &str| -> Result<DurationLaw, SynthError> {
            let parts: Vec<&str> = s.split(',').map(str::trim).collect();
            let num = |x: &str| {
                x.parse::<u64>()
                    .map_err(|_| SynthError::Spec(format!("bad duration `{s}`")))
            };
            match parts.as_slice() {
                [m] => Ok(DurationLaw {
                    mean_seconds: num(m)?,
                    jitter_seconds: 0,
                }),
                [m, j] => Ok(DurationLaw {
                    mean_seconds: num(m)?,
                    jitter_seconds: num(j)?,
                }),
                _ => Err(SynthError::Spec(format!("bad duration `{s}`"))),
            }
        };
        let mut durations = BTreeMap::new();
        let mut default_duration = DurationLaw {
            mean_seconds: 3600,
            jitter_seconds: 0,
        };
        for key in kv.keys_with_prefix("duration.") {
            let name = &key["duration.".len()..];
            let l = law(kv.get(key).expect("listed"))?;
            if name == "default" {
                default_duration = l;
            } else {
                durations.insert(name.to_string(), l);
            }
        }
        let loop_spec = match kv.get("loop.body") {
            None => None,
            Some(body) => Some(LoopSpec {
                variant: kv.parsed("loop.variant")?.unwrap_or(0),
                after: kv.required("loop.after")?,
                body: body
                    .split(',')
                    .map(|pos| pos.split('|').map(|a| a.trim().to_string()).collect())
                    .collect(),
                p: kv.required("loop.p")?,
            }),
        };
        let spec = Self {
            variants,
            durations,
            default_duration,
            loop_spec,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn epoch_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).single().expect("valid date")
}

fn draw_duration<R: Rng + ?Sized>(law: DurationLaw, rng: &mut R) -> i64 {
    let j = law.jitter_seconds as i64;
    let offset = if j == 0 { 0 } else { rng.random_range(-j..=j) };
    (law.mean_seconds as i64 + offset).max(0)
}

/// Draws one activity sequence.
pub fn sample_activities<R: Rng + ?Sized>(spec: &ProcessSpec, rng: &mut R) -> Vec<String> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = spec.variants.len() - 1;
    for (i, v) in spec.variants.iter().enumerate() {
        acc += v.probability;
        if u < acc {
            chosen = i;
            break;
        }
    }
    let base = &spec.variants[chosen].activities;
    match &spec.loop_spec {
        Some(l) if l.variant == chosen => {
            let cut = l.after.min(base.len());
            let mut out = base[..cut].to_vec();
            while rng.random_bool(l.p) {
                for pos in &l.body {
                    out.push(pos[rng.random_range(0..pos.len())].clone());
                }
            }
            out.extend_from_slice(&base[cut..]);
            out
        }
        _ => base.clone(),
    }
}

/// Raw traces with synthesised timestamps; the first event of each trace
/// has duration zero, later ones follow the duration law of their activity.
pub fn sample_raw(spec: &ProcessSpec, n_traces: usize, seed: u64) -> Result<Vec<RawTrace>, SynthError> {
    spec.validate()?;
    if n_traces == 0 {
        return Err(SynthError::Spec("need at least one trace".into()));
    }
    let start = epoch_start();
    Ok((0..n_traces)
        .map(|i| {
            let mut rng = stream(seed, 1000 + i as u64);
            let activities = sample_activities(spec, &mut rng);
            let mut t = start + Duration::hours(i as i64);
            let events = activities
                .into_iter()
                .enumerate()
                .map(|(j, a)| {
                    if j > 0 {
                        t += Duration::seconds(draw_duration(spec.law(&a), &mut rng));
                    }
                    RawEvent {
                        activity: a,
                        timestamp: t,
                    }
                })
                .collect();
            RawTrace {
                case_id: format!("case-{i:06}"),
                events,
            }
        })
        .collect())
}

pub fn sample_log(spec: &ProcessSpec, n_traces: usize, seed: u64) -> Result<EventLog, SynthError> {
    Ok(build_log(sample_raw(spec, n_traces, seed)?)?)
}

/// Writes raw traces in the CSV input schema (`case_id,activity,timestamp`).
pub fn write_csv<W: Write>(w: W, traces: &[RawTrace]) -> Result<(), SynthError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["case_id", "activity", "timestamp"])?;
    for t in traces {
        for e in &t.events {
            out.write_record([
                t.case_id.as_str(),
                e.activity.as_str(),
                &e.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
