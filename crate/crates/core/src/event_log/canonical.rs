//! Canonical binary log written by `ingest`.
//!
//! Little-endian: magic `SBLG`, `u32` version, `u32` vocabulary size, the
//! names (`u32` length + UTF-8), `u32` trace count, then per trace the case
//! id (`u32` length + UTF-8), `u32` event count and `(u32 activity, f64
//! duration)` pairs.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::{Event, EventLog, LogError, Trace, Vocabulary};

const MAGIC: &[u8; 4] = b"SBLG";
const VERSION: u32 = 1;

fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub fn write_canonical<W: Write>(w: &mut W, log: &EventLog) -> Result<(), LogError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(log.vocabulary.len() as u32).to_le_bytes())?;
    for n in log.vocabulary.names() {
        put_str(w, n)?;
    }
    w.write_all(&(log.traces.len() as u32).to_le_bytes())?;
    for t in &log.traces {
        put_str(w, &t.case_id)?;
        w.write_all(&(t.events.len() as u32).to_le_bytes())?;
        for e in &t.events {
            w.write_all(&(e.activity as u32).to_le_bytes())?;
            w.write_all(&e.duration.to_le_bytes())?;
        }
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, LogError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String, LogError> {
    let n = get_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| LogError::Format("string is not UTF-8".into()))
}

pub fn read_canonical<R: Read>(r: &mut R) -> Result<EventLog, LogError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LogError::Format("not a canonical log".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(LogError::Format(format!("unsupported version {version}")));
    }
    let nv = get_u32(r)? as usize;
    let names = (0..nv).map(|_| get_str(r)).collect::<Result<Vec<_>, _>>()?;
    let vocabulary = Vocabulary::from_ordered(names)
        .ok_or_else(|| LogError::Format("invalid vocabulary".into()))?;
    let nt = get_u32(r)? as usize;
    let mut traces = Vec::with_capacity(nt);
    for _ in 0..nt {
        let case_id = get_str(r)?;
        let ne = get_u32(r)? as usize;
        let mut events = Vec::with_capacity(ne);
        for _ in 0..ne {
            let a = get_u32(r)? as usize;
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            events.push(Event::new(a, f64::from_le_bytes(b)));
        }
        traces.push(Trace { case_id, events });
    }
    let log = EventLog { traces, vocabulary };
    if log.is_empty() {
        return Err(LogError::Empty);
    }
    log.validate()?;
    Ok(log)
}

/// Git-style content hash: SHA-256 over `blob <len>\0` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::{parse_csv_reader, ColumnMap};

    #[test]
    fn round_trip() {
        let log = parse_csv_reader(
            "case_id,activity,timestamp\na,X,2024-01-01T00:00:00Z\na,Y,2024-01-02T00:00:00Z\nb,Y,2024-01-01T00:00:00Z\n"
                .as_bytes(),
            &ColumnMap::default(),
        )
        .unwrap();
        let mut bytes = Vec::new();
        write_canonical(&mut bytes, &log).unwrap();
        let back = read_canonical(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, log);
        assert_eq!(content_hash(&bytes).len(), 64);
        assert_ne!(content_hash(&bytes), content_hash(b""));
    }
}
