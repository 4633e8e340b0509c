//! JSON-lines record formats and readers.
//!
//! Every reader reports the 1-based line number of the first bad record.
//! Unknown keys are ignored. Floating-point output is rounded to nine
//! significant digits.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Lines, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use stratdet_core::{Box2D, Box3D, GateInput, GroundTruthLesion, Proposal, Station};

use crate::error::{CliError, Result};

/// Rounds to nine significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Nine-significant-digit decimal text, as written to CSV files.
pub fn fmt_num(x: f64) -> String {
    format!("{}", round_sig(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub patient: String,
    pub lesion: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub z1: i64,
    pub z2: i64,
    pub short_axis_mm: f64,
    pub long_axis_mm: f64,
    pub station: String,
}

impl GtRecord {
    pub fn into_lesion(self) -> stratdet_core::Result<GroundTruthLesion> {
        let extent = Box3D::new(
            self.patient,
            [self.x1, self.y1, self.x2, self.y2],
            (self.z1, self.z2),
            0.0,
        )?;
        GroundTruthLesion::new(
            self.lesion,
            extent,
            self.short_axis_mm,
            self.long_axis_mm,
            self.station,
        )
    }

    pub fn from_lesion(g: &GroundTruthLesion) -> Self {
        let e = &g.extent;
        Self {
            patient: e.patient_id.clone(),
            lesion: g.lesion_id.clone(),
            x1: round_sig(e.x1),
            y1: round_sig(e.y1),
            x2: round_sig(e.x2),
            y2: round_sig(e.y2),
            z1: e.z1,
            z2: e.z2,
            short_axis_mm: round_sig(g.short_axis_mm),
            long_axis_mm: round_sig(g.long_axis_mm),
            station: g.station.clone(),
        }
    }
}

fn label_from_json<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Bool(bool),
        Int(i64),
    }
    match Raw::deserialize(d)? {
        Raw::Bool(b) => Ok(b),
        Raw::Int(0) => Ok(false),
        Raw::Int(1) => Ok(true),
        Raw::Int(other) => Err(serde::de::Error::custom(format!(
            "label must be 0 or 1, got {other}"
        ))),
    }
}

fn label_to_json<S: serde::Serializer>(label: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*label))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub id: String,
    pub patient: String,
    #[serde(deserialize_with = "label_from_json", serialize_with = "label_to_json")]
    pub label: bool,
    #[serde(default)]
    pub tp: bool,
    #[serde(default)]
    pub station: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station_logits: Option<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl ProposalRecord {
    pub fn into_proposal(self) -> stratdet_core::Result<Proposal> {
        let gate = match (self.gate, self.station_logits) {
            (Some(g), None) => GateInput::Probabilities(g),
            (None, Some(z)) => GateInput::StationLogits(z),
            (Some(_), Some(_)) => {
                return Err(stratdet_core::Error::InvalidProposal {
                    id: self.id,
                    reason: "give either `gate` or `station_logits`, not both".into(),
                })
            }
            (None, None) => {
                return Err(stratdet_core::Error::InvalidProposal {
                    id: self.id,
                    reason: "missing `gate` or `station_logits`".into(),
                })
            }
        };
        let station = self
            .station
            .as_deref()
            .map(str::parse::<Station>)
            .transpose()?;
        Ok(Proposal::new(self.id, self.patient, self.label, self.logits, gate)?
            .with_station(station, self.tp))
    }

    pub fn from_proposal(p: &Proposal) -> Self {
        let round = |v: &[f64]| v.iter().copied().map(round_sig).collect::<Vec<_>>();
        let (gate, station_logits) = match p.station_logits() {
            Some(z) => (None, Some(round(z))),
            None => (Some(round(p.gate())), None),
        };
        Self {
            id: p.id.clone(),
            patient: p.patient_id.clone(),
            label: p.label,
            tp: p.is_true_positive,
            station: p.true_station.map(|s| s.name().to_owned()),
            gate,
            station_logits,
            logits: round(&p.head_logits),
        }
    }
}

pub fn box2d_out(b: &Box2D) -> Box2D {
    Box2D {
        x1: round_sig(b.x1),
        y1: round_sig(b.y1),
        x2: round_sig(b.x2),
        y2: round_sig(b.y2),
        score: round_sig(b.score),
        ..b.clone()
    }
}

pub fn box3d_out(b: &Box3D) -> Box3D {
    Box3D {
        x1: round_sig(b.x1),
        y1: round_sig(b.y1),
        x2: round_sig(b.x2),
        y2: round_sig(b.y2),
        score: round_sig(b.score),
        ..b.clone()
    }
}

/// A parsed record with the line it came from.
pub struct Numbered<T> {
    pub line: usize,
    pub value: T,
}

/// Iterator over the non-blank lines of a JSONL file, decoded as `T`.
pub struct JsonLines<T> {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: serde::de::DeserializeOwned> JsonLines<T> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(CliError::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            lines: BufReader::new(file).lines(),
            line: 0,
            _marker: std::marker::PhantomData,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl<T: serde::de::DeserializeOwned> Iterator for JsonLines<T> {
    type Item = Result<Numbered<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(CliError::io(&self.path)(e))),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(
                serde_json::from_str(&text)
                    .map(|value| Numbered {
                        line: self.line,
                        value,
                    })
                    .map_err(|e| CliError::record(&self.path, self.line, e)),
            );
        }
    }
}

/// Reads every record of a file, checking each with `convert`.
pub fn read_all<T, U, E>(path: &Path, convert: impl Fn(T) -> std::result::Result<U, E>) -> Result<Vec<U>>
where
    T: serde::de::DeserializeOwned,
    E: ToString,
{
    JsonLines::<T>::open(path)?
        .map(|r| {
            let r = r?;
            convert(r.value).map_err(|e| CliError::record(path, r.line, e))
        })
        .collect()
}

/// Splits a stream into runs of records sharing a patient.
///
/// Each patient must occupy one contiguous block of lines, so only one
/// patient's records are held at a time.
pub struct PatientRuns<T, I: Iterator<Item = Result<Numbered<T>>>> {
    inner: std::iter::Peekable<I>,
    path: PathBuf,
    finished: HashSet<String>,
    key: fn(&T) -> &str,
}

impl<T, I: Iterator<Item = Result<Numbered<T>>>> PatientRuns<T, I> {
    pub fn new(inner: I, path: &Path, key: fn(&T) -> &str) -> Self {
        Self {
            inner: inner.peekable(),
            path: path.to_path_buf(),
            finished: HashSet::new(),
            key,
        }
    }
}

impl<T, I: Iterator<Item = Result<Numbered<T>>>> Iterator for PatientRuns<T, I> {
    type Item = Result<(String, Vec<Numbered<T>>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let first = match self.inner.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(e)),
        };
        let patient = (self.key)(&first.value).to_owned();
        if !self.finished.insert(patient.clone()) {
            return Some(Err(CliError::record(
                &self.path,
                first.line,
                format!("records for patient `{patient}` are not contiguous; group the input by patient"),
            )));
        }
        let mut run = vec![first];
        while let Some(Ok(next)) = self.inner.peek() {
            if (self.key)(&next.value) != patient {
                break;
            }
            run.push(self.inner.next().unwrap().unwrap());
        }
        if let Some(Err(_)) = self.inner.peek() {
            return Some(Err(self.inner.next().unwrap().err().unwrap()));
        }
        Some(Ok((patient, run)))
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(out: &mut impl Write, records: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, &r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
