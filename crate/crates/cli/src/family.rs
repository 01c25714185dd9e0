//! The eight tonal families: one tone fixed, the other free.

use std::fmt;
use std::str::FromStr;

use covtransport::curves::{CurveMeta, Tone};
use covtransport::meanmodel::TonePosition;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TonalFamily {
    /// `TiTx`: first tone fixed.
    Row(Tone),
    /// `TxTj`: second tone fixed.
    Column(Tone),
}

impl TonalFamily {
    pub fn all() -> Vec<TonalFamily> {
        Tone::ALL
            .iter()
            .map(|&t| TonalFamily::Row(t))
            .chain(Tone::ALL.iter().map(|&t| TonalFamily::Column(t)))
            .collect()
    }

    /// Stable index in `1..=8` used to derive per-family seeds.
    pub fn id(self) -> u64 {
        match self {
            TonalFamily::Row(t) => t.number() as u64,
            TonalFamily::Column(t) => 4 + t.number() as u64,
        }
    }

    pub fn contains(self, meta: &CurveMeta) -> bool {
        match self {
            TonalFamily::Row(t) => meta.tone_first == t,
            TonalFamily::Column(t) => meta.tone_second == t,
        }
    }

    /// The syllable whose tone varies within the family.
    pub fn free_position(self) -> TonePosition {
        match self {
            TonalFamily::Row(_) => TonePosition::Second,
            TonalFamily::Column(_) => TonePosition::First,
        }
    }

    /// The four `(first, second)` combinations, ordered by the free tone.
    pub fn combinations(self) -> Vec<(Tone, Tone)> {
        Tone::ALL
            .iter()
            .map(|&free| match self {
                TonalFamily::Row(t) => (t, free),
                TonalFamily::Column(t) => (free, t),
            })
            .collect()
    }
}

impl fmt::Display for TonalFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TonalFamily::Row(t) => write!(f, "{t}x"),
            TonalFamily::Column(t) => write!(f, "Tx{}", t.number()),
        }
    }
}

impl FromStr for TonalFamily {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let bad = || CliError::Config(format!("unknown tonal family '{s}' (expected T1x..T4x or Tx1..Tx4)"));
        let tone = |digit: &str| digit.parse::<u8>().ok().and_then(Tone::from_number).ok_or_else(bad);
        if let Some(d) = lower.strip_prefix("tx") {
            Ok(TonalFamily::Column(tone(d)?))
        } else if let Some(d) = lower.strip_prefix('t').and_then(|r| r.strip_suffix('x')) {
            Ok(TonalFamily::Row(tone(d)?))
        } else {
            Err(bad())
        }
    }
}

/// Parses `all` or a comma-separated list, dropping repeats.
pub fn parse_families(s: &str) -> Result<Vec<TonalFamily>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(TonalFamily::all());
    }
    let mut out: Vec<TonalFamily> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let f: TonalFamily = part.parse()?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no tonal family selected".into()));
    }
    Ok(out)
}

/// Inverse of [`parse_families`].
pub fn format_families(families: &[TonalFamily]) -> String {
    if families == TonalFamily::all().as_slice() {
        return "all".into();
    }
    families.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}
