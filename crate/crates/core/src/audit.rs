//! Controller audit log: one line per barrier optimization.
//!
//! ```text
//! OPT <tick> <M|m> <g_d1> <g_d2> <g_g1> <g_g2> <seq ring1><seq ring2> <predicted cost> <feature digest> <48 features>
//! ```
//!
//! Floats are written in shortest round-trip form so a parsed log retrains
//! to the identical model.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::domain::{Barrier, Sequence, TimingPlan};
use crate::error::{Error, Result};
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub tick: u64,
    pub plan: TimingPlan,
    pub predicted_cost: f64,
    /// Features of the observed (unattacked) traffic at the snapshot.
    pub features: FeatureVector,
}

impl AuditRecord {
    pub fn barrier(&self) -> Barrier {
        self.plan.barrier
    }

    /// First 16 hex digits of SHA-256 over the feature values' bit patterns.
    pub fn feature_digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.features.flat() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn to_line(&self) -> String {
        let p = &self.plan;
        let mut s = format!("OPT {} {}", self.tick, p.barrier.code());
        for g in p.greens {
            let _ = write!(s, " {g:?}");
        }
        let _ = write!(
            s,
            " {}{} {:?} {}",
            p.sequence[0].code(),
            p.sequence[1].code(),
            self.predicted_cost,
            self.feature_digest()
        );
        for v in self.features.flat() {
            let _ = write!(s, " {v:?}");
        }
        s
    }

    pub fn parse_line(text: &str, line: usize, transition: f64) -> Result<Self> {
        let err = |msg: String| Error::Parse { line, msg };
        let f: Vec<&str> = text.split_ascii_whitespace().collect();
        if f.len() != 10 + 48 || f[0] != "OPT" {
            return Err(err(format!("expected OPT record with 58 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
        let tick = f[1].parse().map_err(|_| err("bad tick".into()))?;
        let barrier = match f[2] {
            "M" => Barrier::Major,
            "m" => Barrier::Minor,
            b => return Err(err(format!("bad barrier {b:?}"))),
        };
        let greens = [num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?];
        let seq = |c: char| match c {
            'L' => Ok(Sequence::LeftLead),
            'T' => Ok(Sequence::ThroughLead),
            _ => Err(err(format!("bad sequence code {c:?}"))),
        };
        let mut sc = f[7].chars();
        let (Some(a), Some(b), None) = (sc.next(), sc.next(), sc.next()) else {
            return Err(err("bad sequence field".into()));
        };
        let sequence = [seq(a)?, seq(b)?];
        let predicted_cost = num(f[8])?;
        let values = f[10..].iter().map(|s| num(s)).collect::<Result<Vec<f64>>>()?;
        let features = FeatureVector::from_flat(&values).ok_or_else(|| err("bad feature count".into()))?;
        let rec = AuditRecord {
            tick,
            plan: TimingPlan { barrier, greens, sequence, transition },
            predicted_cost,
            features,
        };
        if rec.feature_digest() != f[9] {
            return Err(err("feature digest mismatch".into()));
        }
        Ok(rec)
    }
}

pub fn parse_audit_log(text: &str, transition: f64) -> Result<Vec<AuditRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| AuditRecord::parse_line(l, i + 1, transition))
        .collect()
}
