use std::io::BufRead;
use std::path::Path;

use quick_xml::events::{BytesStart, Event as XmlEvent};
use quick_xml::{Reader, XmlVersion};

use super::{build_log, parse_timestamp, EventLog, LogError, RawEvent, RawTrace};

pub fn parse_xes(path: &Path) -> Result<EventLog, LogError> {
    let file = std::fs::File::open(path)?;
    parse_xes_reader(std::io::BufReader::new(file))
}

fn attrs(e: &BytesStart, offset: u64) -> Result<(Option<String>, Option<String>), LogError> {
    let mut key = None;
    let mut value = None;
    for a in e.attributes() {
        let a = a.map_err(|err| LogError::Xml {
            offset,
            message: err.to_string(),
        })?;
        let v = a
            .normalized_value(XmlVersion::Implicit1_0)
            .map_err(|err| LogError::Xml {
                offset,
                message: err.to_string(),
            })?
            .into_owned();
        match a.key.as_ref() {
            "key" => key = Some(v),
            "value" => value = Some(v),
            _ => {}
        }
    }
    Ok((key, value))
}

#[derive(Default)]
struct PendingEvent {
    activity: Option<String>,
    timestamp: Option<String>,
}

/// Reads `<trace>` / `<event>` elements, keeping only `concept:name` and
/// `time:timestamp` attributes that sit directly on the trace or event.
pub fn parse_xes_reader<R: BufRead>(input: R) -> Result<EventLog, LogError> {
    let mut reader = Reader::from_reader(input);
    let mut buf = Vec::new();
    // element nesting: log=1, trace=2, event=3
    let mut depth = 0usize;
    let mut trace_depth = None;
    let mut event_depth = None;
    let mut traces: Vec<RawTrace> = Vec::new();
    let mut current: Option<RawTrace> = None;
    let mut event: Option<PendingEvent> = None;
    let mut event_offset = 0u64;

    loop {
        let offset = reader.buffer_position();
        let ev = reader.read_event_into(&mut buf).map_err(|e| LogError::Xml {
            offset: reader.error_position(),
            message: e.to_string(),
        })?;
        match ev {
            XmlEvent::Start(ref e) | XmlEvent::Empty(ref e) => {
                let is_empty = matches!(ev, XmlEvent::Empty(_));
                let name = e.local_name();
                let name = name.as_ref();
                if name == "trace" && trace_depth.is_none() {
                    current = Some(RawTrace {
                        case_id: format!("trace-{}", traces.len()),
                        events: Vec::new(),
                    });
                    if is_empty {
                        traces.push(current.take().expect("just set"));
                    } else {
                        trace_depth = Some(depth + 1);
                    }
                } else if name == "event" && trace_depth.is_some() && event_depth.is_none() {
                    event = Some(PendingEvent::default());
                    event_offset = offset;
                    if is_empty {
                        finish_event(&mut current, event.take(), event_offset)?;
                    } else {
                        event_depth = Some(depth + 1);
                    }
                } else if let Some(ed) = event_depth {
                    if depth == ed {
                        let (key, value) = attrs(e, offset)?;
                        let pending = event.as_mut().expect("inside event");
                        match key.as_deref() {
                            Some("concept:name") if name == "string" => pending.activity = value,
                            Some("time:timestamp") if name == "date" => pending.timestamp = value,
                            _ => {}
                        }
                    }
                } else if let Some(td) = trace_depth {
                    if depth == td && name == "string" {
                        let (key, value) = attrs(e, offset)?;
                        if let (Some("concept:name"), Some(v)) = (key.as_deref(), value) {
                            current.as_mut().expect("inside trace").case_id = v;
                        }
                    }
                }
                if !is_empty {
                    depth += 1;
                }
            }
            XmlEvent::End(ref e) => {
                depth = depth.saturating_sub(1);
                let name = e.local_name();
                if name.as_ref() == "event" && event_depth == Some(depth + 1) {
                    event_depth = None;
                    finish_event(&mut current, event.take(), event_offset)?;
                } else if name.as_ref() == "trace" && trace_depth == Some(depth + 1) {
                    trace_depth = None;
                    traces.push(current.take().expect("inside trace"));
                }
            }
            XmlEvent::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if depth != 0 {
        return Err(LogError::Xml {
            offset: reader.buffer_position(),
            message: "unexpected end of document".into(),
        });
    }
    build_log(traces)
}

fn finish_event(
    trace: &mut Option<RawTrace>,
    event: Option<PendingEvent>,
    offset: u64,
) -> Result<(), LogError> {
    let event = event.unwrap_or_default();
    let activity = event.activity.ok_or_else(|| {
        LogError::Schema(format!("event at byte {offset} has no concept:name"))
    })?;
    let raw_ts = event.timestamp.ok_or_else(|| {
        LogError::Schema(format!("event at byte {offset} has no time:timestamp"))
    })?;
    let timestamp = parse_timestamp(&raw_ts).ok_or_else(|| LogError::Timestamp {
        row: offset as usize,
        value: raw_ts.clone(),
    })?;
    trace
        .as_mut()
        .expect("events only inside traces")
        .events
        .push(RawEvent {
            activity,
            timestamp,
        });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<EventLog, LogError> {
        parse_xes_reader(s.as_bytes())
    }

    const MINIMAL: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<log xes.version="1.0">
  <extension name="Lifecycle" prefix="lifecycle" uri="http://www.xes-standard.org/lifecycle.xesext"/>
  <trace>
    <string key="concept:name" value="case-7"/>
    <event>
      <string key="concept:name" value="Register"/>
      <string key="lifecycle:transition" value="complete"/>
      <date key="time:timestamp" value="2024-01-01T10:00:00.000+01:00"/>
    </event>
    <event>
      <date key="time:timestamp" value="2024-01-01T10:01:00.000+01:00"/>
      <string key="concept:name" value="Decide &amp; close"/>
      <list key="notes"><string key="concept:name" value="ignored"/></list>
    </event>
  </trace>
</log>"#;

    #[test]
    fn minimal_log() {
        let log = parse(MINIMAL).unwrap();
        assert_eq!(log.len(), 1);
        let t = &log.traces[0];
        assert_eq!(t.case_id, "case-7");
        assert_eq!(t.len(), 3);
        assert_eq!(t.events[1].duration, 60.0);
        // lifecycle and nested attributes are not activities
        assert_eq!(log.vocabulary.num_activities(), 2);
        assert!(log.vocabulary.index("Decide & close").is_some());
        assert!(log.vocabulary.index("complete").is_none());
    }

    #[test]
    fn empty_and_broken() {
        assert!(matches!(parse("<log></log>"), Err(LogError::Empty)));
        let missing = r#"<log><trace><event><date key="time:timestamp" value="2024-01-01T00:00:00Z"/></event></trace></log>"#;
        assert!(matches!(parse(missing), Err(LogError::Schema(_))));
        let broken = "<log><trace><event></trace></log>";
        assert!(matches!(parse(broken), Err(LogError::Xml { .. })));
        let truncated = "<log><trace>";
        assert!(matches!(parse(truncated), Err(LogError::Xml { .. })));
    }
}
