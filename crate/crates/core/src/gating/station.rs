//! IASLC thoracic lymph node stations and their grouping onto classifier heads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Station {
    S1L,
    S1R,
    S2L,
    S2R,
    S3A,
    S3P,
    S4L,
    S4R,
    S5,
    S6,
    S7,
    S8,
    S9,
    /// Pulmonary nodes, stations 10 through 14.
    S10To14,
}

impl Station {
    pub const ALL: [Station; 14] = [
        Station::S1L,
        Station::S1R,
        Station::S2L,
        Station::S2R,
        Station::S3A,
        Station::S3P,
        Station::S4L,
        Station::S4R,
        Station::S5,
        Station::S6,
        Station::S7,
        Station::S8,
        Station::S9,
        Station::S10To14,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Station::S1L => "1L",
            Station::S1R => "1R",
            Station::S2L => "2L",
            Station::S2R => "2R",
            Station::S3A => "3A",
            Station::S3P => "3P",
            Station::S4L => "4L",
            Station::S4R => "4R",
            Station::S5 => "5",
            Station::S6 => "6",
            Station::S7 => "7",
            Station::S8 => "8",
            Station::S9 => "9",
            Station::S10To14 => "10-14",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Station {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Station {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let canon = t.to_ascii_uppercase();
        if let Some(st) = Station::ALL.iter().find(|st| st.name() == canon) {
            return Ok(*st);
        }
        // individual pulmonary stations collapse onto the shared label
        match canon.as_str() {
            "10" | "11" | "12" | "13" | "14" | "10–14" | "10_14" => Ok(Station::S10To14),
            _ => Err(Error::UnknownStation(t.to_owned())),
        }
    }
}

impl TryFrom<String> for Station {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Station> for String {
    fn from(s: Station) -> String {
        s.name().to_owned()
    }
}

/// Total map from the 14 stations onto `num_heads` classifier heads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationGrouping {
    num_heads: usize,
    heads: [usize; 14],
}

impl StationGrouping {
    pub fn new(heads: [usize; 14]) -> Result<Self> {
        let num_heads = heads.iter().max().map_or(0, |m| m + 1);
        let mut used = vec![false; num_heads];
        for &h in &heads {
            used[h] = true;
        }
        if let Some(h) = used.iter().position(|u| !u) {
            return Err(Error::InvalidGrouping(format!(
                "head {h} has no station mapped to it"
            )));
        }
        Ok(Self { num_heads, heads })
    }

    /// No stratification: every station shares one head.
    pub fn single() -> Self {
        Self {
            num_heads: 1,
            heads: [0; 14],
        }
    }

    /// Six super-stations: supraclavicular (1L, 1R), superior mediastinal
    /// (2L–4R), aortopulmonary (5, 6), subcarinal (7), inferior mediastinal
    /// (8, 9) and pulmonary (10–14).
    pub fn six() -> Self {
        Self {
            num_heads: 6,
            heads: [0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 3, 4, 4, 5],
        }
    }

    /// One head per station.
    pub fn fourteen() -> Self {
        let mut heads = [0; 14];
        for (i, h) in heads.iter_mut().enumerate() {
            *h = i;
        }
        Self {
            num_heads: 14,
            heads,
        }
    }

    pub fn preset(num_heads: usize) -> Option<Self> {
        match num_heads {
            1 => Some(Self::single()),
            6 => Some(Self::six()),
            14 => Some(Self::fourteen()),
            _ => None,
        }
    }

    /// Parse `station = head` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut heads: [Option<usize>; 14] = [None; 14];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, head) = line.split_once('=').ok_or_else(|| {
                Error::InvalidGrouping(format!("line {}: expected `station = head`", n + 1))
            })?;
            let station: Station = name.parse()?;
            let head: usize = head.trim().parse().map_err(|_| {
                Error::InvalidGrouping(format!("line {}: bad head index `{}`", n + 1, head.trim()))
            })?;
            if let Some(prev) = heads[station.index()] {
                if prev != head {
                    return Err(Error::InvalidGrouping(format!(
                        "line {}: station {station} mapped to both {prev} and {head}",
                        n + 1
                    )));
                }
            }
            heads[station.index()] = Some(head);
        }
        let mut out = [0; 14];
        for (i, h) in heads.iter().enumerate() {
            out[i] = h.ok_or_else(|| {
                Error::InvalidGrouping(format!("station {} is not mapped", Station::ALL[i]))
            })?;
        }
        Self::new(out)
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn head(&self, station: Station) -> usize {
        self.heads[station.index()]
    }

    pub fn to_config_string(&self) -> String {
        Station::ALL
            .iter()
            .map(|s| format!("{} = {}\n", s, self.head(*s)))
            .collect()
    }
}

/// Head index for a station name under `grouping`.
pub fn group_station(name: &str, grouping: &StationGrouping) -> Result<usize> {
    Ok(grouping.head(name.parse()?))
}
