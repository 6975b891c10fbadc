//! Session snapshot layout (little-endian):
//!
//! ```text
//! "ICSS" | u16 version
//! u32 len | config text (key = value lines)
//! u64 sequence | u64 selection round | u32 classes | u64 count
//! u64 len | pool index snapshot ("ICVI")
//! u64 len | labeled index snapshot ("ICVI")
//! u64 len | sample table, count rows of:
//!     u32 len | id bytes
//!     u8 status
//!     u8 source | f64 alpha | classes x f64 probs       fused belief
//!     u8 has_model [| f64 alpha | classes x f64 probs]  model view
//!     f64 gain
//!     i32 label (-1 none) | u64 annotated_at (0 none) | i32 oracle label (-1 none)
//!     u8 has_payload [| u32 len | payload bytes]
//! ```

use std::collections::HashMap;

use super::{Engine, EngineConfig, Sample, Status};
use crate::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::fusion::{PredictionState, Source};
use crate::index::VectorIndex;

pub const SESSION_MAGIC: &[u8; 4] = b"ICSS";
pub const SESSION_VERSION: u16 = 1;
const FORMAT: &str = "session snapshot";

fn status_byte(s: Status) -> u8 {
    s as u8
}

fn status_from(b: u8) -> Result<Status> {
    Ok(match b {
        0 => Status::Unlabeled,
        1 => Status::Selected,
        2 => Status::Annotated,
        3 => Status::Tombstoned,
        other => return Err(Error::corrupt(FORMAT, format!("unknown status {other}"))),
    })
}

fn opt_index(v: Option<usize>) -> i32 {
    v.map_or(-1, |x| x as i32)
}

fn put_state(w: &mut ByteWriter, s: &PredictionState) {
    w.put_f64(s.alpha());
    s.probs().iter().for_each(|&p| w.put_f64(p));
}

fn read_state(r: &mut ByteReader<'_>, classes: usize, source: Source) -> Result<PredictionState> {
    let alpha = r.f64()?;
    let probs = (0..classes).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    PredictionState::new(probs, alpha, source)
        .map_err(|e| Error::corrupt(FORMAT, format!("invalid prediction state: {e}")))
}

pub(super) fn encode(engine: &Engine) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.put_bytes(SESSION_MAGIC);
    w.put_u16(SESSION_VERSION);
    w.put_str(&engine.config.to_text());
    w.put_u64(engine.sequence);
    w.put_u64(engine.round);
    w.put_u32(engine.config.num_classes() as u32);
    w.put_u64(engine.samples.len() as u64);
    w.put_section(&engine.pool.snapshot());
    w.put_section(&engine.labeled.snapshot());

    let mut table = ByteWriter::new();
    for (id, s) in engine.ids.iter().zip(&engine.samples) {
        table.put_str(id);
        table.put_u8(status_byte(s.status));
        table.put_u8(s.state.source().to_byte());
        put_state(&mut table, &s.state);
        match &s.model {
            Some(m) => {
                table.put_u8(1);
                put_state(&mut table, m);
            }
            None => table.put_u8(0),
        }
        table.put_f64(s.gain);
        table.put_i32(opt_index(s.label));
        table.put_u64(s.annotated_at.unwrap_or(0));
        table.put_i32(opt_index(s.oracle_label));
        match &s.payload_uri {
            Some(uri) => {
                table.put_u8(1);
                table.put_str(uri);
            }
            None => table.put_u8(0),
        }
    }
    w.put_section(&table.into_inner());
    w.into_inner()
}

fn read_index(r: &mut ByteReader<'_>, which: &str) -> Result<VectorIndex> {
    let mut section = r.section()?;
    let bytes = section.take(section.remaining())?;
    VectorIndex::restore(bytes).map_err(|e| match e {
        Error::Version { .. } => e,
        other => Error::corrupt(FORMAT, format!("{which} index: {other}")),
    })
}

fn read_label(r: &mut ByteReader<'_>, classes: usize, what: &str) -> Result<Option<usize>> {
    match r.i32()? {
        -1 => Ok(None),
        l if l >= 0 && (l as usize) < classes => Ok(Some(l as usize)),
        l => Err(Error::corrupt(FORMAT, format!("{what} {l} out of range"))),
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<Engine> {
    let mut r = ByteReader::new(bytes, FORMAT);
    r.header(SESSION_MAGIC, SESSION_VERSION)?;
    let config = EngineConfig::parse(&r.str()?)
        .map_err(|e| Error::corrupt(FORMAT, format!("embedded config: {e}")))?;
    let sequence = r.u64()?;
    let round = r.u64()?;
    let classes = r.u32()? as usize;
    let count = r.u64()?;
    if classes != config.num_classes() {
        return Err(Error::corrupt(FORMAT, "class count disagrees with config"));
    }
    let pool = read_index(&mut r, "pool")?;
    let labeled = read_index(&mut r, "labeled")?;
    let mut table = r.section()?;
    r.finish()?;

    if pool.len() as u64 != count || pool.dim() != config.dim || labeled.dim() != config.dim {
        return Err(Error::corrupt(FORMAT, "index shape disagrees with sample table"));
    }
    if pool.ids().iter().enumerate().any(|(i, &id)| id != i as u64) {
        return Err(Error::corrupt(FORMAT, "pool index ids are not dense positions"));
    }

    // Each row is at least 40 bytes even with an empty id.
    let n = table.check_count(count, 40)?;
    let mut ids = Vec::with_capacity(n);
    let mut positions = HashMap::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for position in 0..n {
        let id = table.str()?;
        if positions.insert(id.clone(), position as u32).is_some() {
            return Err(Error::corrupt(FORMAT, format!("duplicate id {id}")));
        }
        let status = status_from(table.u8()?)?;
        let source = Source::from_byte(table.u8()?)
            .ok_or_else(|| Error::corrupt(FORMAT, "unknown source"))?;
        let state = read_state(&mut table, classes, source)?;
        let model = match table.u8()? {
            0 => None,
            1 => Some(read_state(&mut table, classes, Source::Model)?),
            other => return Err(Error::corrupt(FORMAT, format!("bad model flag {other}"))),
        };
        let gain = table.f64()?;
        if !(gain >= 0.0 && gain.is_finite()) {
            return Err(Error::corrupt(FORMAT, format!("invalid gain {gain}")));
        }
        let label = read_label(&mut table, classes, "label")?;
        let annotated_at = Some(table.u64()?).filter(|&s| s != 0);
        let oracle_label = read_label(&mut table, classes, "oracle label")?;
        let payload_uri = match table.u8()? {
            0 => None,
            1 => Some(table.str()?),
            other => return Err(Error::corrupt(FORMAT, format!("bad payload flag {other}"))),
        };
        if status == Status::Annotated && (label.is_none() || !labeled.contains(position as u64)) {
            return Err(Error::corrupt(FORMAT, format!("annotated sample {id} has no label")));
        }
        ids.push(id);
        samples.push(Sample {
            status,
            state,
            model,
            gain,
            label,
            annotated_at,
            oracle_label,
            payload_uri,
        });
    }
    table.finish()?;
    if labeled
        .ids()
        .iter()
        .any(|&id| samples.get(id as usize).is_none_or(|s| s.label.is_none()))
    {
        return Err(Error::corrupt(FORMAT, "labeled index holds an unlabeled sample"));
    }

    Ok(Engine {
        config,
        pool,
        labeled,
        ids,
        positions,
        samples,
        sequence,
        round,
    })
}
