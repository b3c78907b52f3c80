//! Line formats for the BSM / SPaT event log.
//!
//! ```text
//! BSM <vehicle_id> <tick> <position_m> <speed_mps> <phase> <falsified 0|1>
//! SPAT <tick> <8 state chars, phase 1 first> <remaining ticks, comma separated>
//! ```
//!
//! Ticks are fixed-point timestamps in resolution steps (0.1 s at 10 Hz).
//! Kinematics are printed with three decimals so identical runs produce
//! identical bytes.

use std::fmt::Write as _;

use crate::domain::{BsmRecord, PhaseId, SignalState, SpatRecord, VehicleId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    Bsm(BsmRecord),
    Spat(SpatRecord),
}

pub fn format_bsm(r: &BsmRecord) -> String {
    format!(
        "BSM {} {} {:.3} {:.3} {} {}",
        r.vehicle_id,
        r.tick,
        r.position,
        r.speed,
        r.phase,
        u8::from(r.is_falsified)
    )
}

pub fn format_spat(r: &SpatRecord) -> String {
    let mut s = format!("SPAT {} ", r.tick);
    for st in r.states {
        s.push(st.code());
    }
    s.push(' ');
    for (i, rem) in r.remaining.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{rem}");
    }
    s
}

fn field<'a, T: std::str::FromStr>(it: &mut impl Iterator<Item = &'a str>, line: usize, what: &str) -> Result<T> {
    let raw = it.next().ok_or_else(|| Error::Parse { line, msg: format!("missing {what}") })?;
    raw.parse().map_err(|_| Error::Parse { line, msg: format!("bad {what}: {raw:?}") })
}

pub fn parse_line(text: &str, line: usize) -> Result<LogRecord> {
    let mut it = text.split_ascii_whitespace();
    let tag = it.next().ok_or_else(|| Error::Parse { line, msg: "empty line".into() })?;
    let rec = match tag {
        "BSM" => {
            let vehicle_id = VehicleId(field(&mut it, line, "vehicle id")?);
            let tick = field(&mut it, line, "tick")?;
            let position = field(&mut it, line, "position")?;
            let speed = field(&mut it, line, "speed")?;
            let phase: u8 = field(&mut it, line, "phase")?;
            let phase = PhaseId::new(phase).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
            let flag: u8 = field(&mut it, line, "falsified flag")?;
            LogRecord::Bsm(BsmRecord { vehicle_id, tick, position, speed, phase, is_falsified: flag != 0 })
        }
        "SPAT" => {
            let tick = field(&mut it, line, "tick")?;
            let codes: String = field(&mut it, line, "states")?;
            let mut states = [SignalState::Red; 8];
            if codes.chars().count() != 8 {
                return Err(Error::Parse { line, msg: "expected 8 state codes".into() });
            }
            for (i, c) in codes.chars().enumerate() {
                states[i] = SignalState::from_code(c)
                    .ok_or_else(|| Error::Parse { line, msg: format!("bad state code {c:?}") })?;
            }
            let rem: String = field(&mut it, line, "remaining")?;
            let parts: Vec<&str> = rem.split(',').collect();
            if parts.len() != 8 {
                return Err(Error::Parse { line, msg: "expected 8 remaining times".into() });
            }
            let mut remaining = [0u32; 8];
            for (i, p) in parts.iter().enumerate() {
                remaining[i] = p.parse().map_err(|_| Error::Parse { line, msg: format!("bad remaining {p:?}") })?;
            }
            LogRecord::Spat(SpatRecord { tick, states, remaining })
        }
        other => return Err(Error::Parse { line, msg: format!("unknown record tag {other:?}") }),
    };
    if it.next().is_some() {
        return Err(Error::Parse { line, msg: "trailing fields".into() });
    }
    Ok(rec)
}

pub fn parse_log(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}
