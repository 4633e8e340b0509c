//! Stacking per-slice 2D detections into 3D detections.
//!
//! Two procedures are provided. [`merge_lesion_centric`] grows every 3D box
//! outward from its most confident 2D box, always comparing candidates with
//! that seed. [`merge_slice_wise`] scans slices top to bottom and links each
//! box to a track ending on the previous slice, so a track's geometry is
//! anchored at the lesion's first (often weakest) slice.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou2d, Box2D, Box3D};

/// Default in-plane IoU threshold for linking boxes across slices.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    #[default]
    LesionCentric,
    SliceWise,
}

impl FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lesion-centric" | "lesion_centric" => Ok(Self::LesionCentric),
            "slice-wise" | "slice_wise" => Ok(Self::SliceWise),
            other => Err(Error::InvalidConfig(format!("unknown merge mode `{other}`"))),
        }
    }
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LesionCentric => "lesion-centric",
            Self::SliceWise => "slice-wise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeConfig {
    iou_threshold: f64,
    pub mode: MergeMode,
}

impl MergeConfig {
    pub fn new(iou_threshold: f64, mode: MergeMode) -> Result<Self> {
        if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "IoU threshold must lie in (0, 1), got {iou_threshold}"
            )));
        }
        Ok(Self {
            iou_threshold,
            mode,
        })
    }

    pub fn iou_threshold(&self) -> f64 {
        self.iou_threshold
    }
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            mode: MergeMode::LesionCentric,
        }
    }
}

/// Merge one patient's boxes with the procedure selected by `cfg.mode`.
pub fn merge(boxes: &[Box2D], cfg: &MergeConfig) -> Result<Vec<Box3D>> {
    match cfg.mode {
        MergeMode::LesionCentric => merge_lesion_centric(boxes, cfg),
        MergeMode::SliceWise => merge_slice_wise(boxes, cfg),
    }
}

fn single_patient(boxes: &[Box2D]) -> Result<Option<&str>> {
    let Some(first) = boxes.first() else {
        return Ok(None);
    };
    if let Some(other) = boxes.iter().find(|b| b.patient_id != first.patient_id) {
        return Err(Error::PatientMismatch {
            left: first.patient_id.clone(),
            right: other.patient_id.clone(),
        });
    }
    Ok(Some(&first.patient_id))
}

/// Indices ordered by descending score; equal scores keep input order.
fn by_score_desc(boxes: &[Box2D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score));
    order
}

/// Enclosing rectangle, slice span and maximum score of a set of boxes.
fn enclose(patient: &str, members: impl IntoIterator<Item = usize>, boxes: &[Box2D]) -> Box3D {
    let mut it = members.into_iter();
    let first = &boxes[it.next().expect("non-empty member list")];
    let mut out = Box3D {
        patient_id: patient.to_owned(),
        x1: first.x1,
        y1: first.y1,
        x2: first.x2,
        y2: first.y2,
        z1: first.slice_index,
        z2: first.slice_index,
        score: first.score,
    };
    for b in it.map(|i| &boxes[i]) {
        out.x1 = out.x1.min(b.x1);
        out.y1 = out.y1.min(b.y1);
        out.x2 = out.x2.max(b.x2);
        out.y2 = out.y2.max(b.y2);
        out.z1 = out.z1.min(b.slice_index);
        out.z2 = out.z2.max(b.slice_index);
        out.score = out.score.max(b.score);
    }
    out
}

/// Lesion-centric merging.
///
/// Repeatedly takes the most confident unconsumed box as a seed, then walks
/// upward (`slice + 1, + 2, ...`) and downward, consuming on each slice the
/// unconsumed box with the highest IoU against the seed provided it exceeds
/// the threshold. A walk stops at the first slice without such a box.
/// Among qualifying candidates, ties on IoU go to the higher score, then to
/// the earlier input position.
pub fn merge_lesion_centric(boxes: &[Box2D], cfg: &MergeConfig) -> Result<Vec<Box3D>> {
    let Some(patient) = single_patient(boxes)? else {
        return Ok(Vec::new());
    };
    Ok(lesion_centric_groups(boxes, cfg)?
        .into_iter()
        .map(|chain| enclose(patient, chain, boxes))
        .collect())
}

/// Input indices forming each lesion-centric 3D box, seed first, in output
/// order.
pub fn lesion_centric_groups(boxes: &[Box2D], cfg: &MergeConfig) -> Result<Vec<Vec<usize>>> {
    single_patient(boxes)?;
    let theta = cfg.iou_threshold();

    let mut per_slice: HashMap<i64, Vec<usize>> = HashMap::new();
    for (i, b) in boxes.iter().enumerate() {
        per_slice.entry(b.slice_index).or_default().push(i);
    }

    let mut consumed = vec![false; boxes.len()];
    let mut out = Vec::new();
    for seed in by_score_desc(boxes) {
        if consumed[seed] {
            continue;
        }
        consumed[seed] = true;
        let mut chain = vec![seed];
        let anchor = &boxes[seed];
        for step in [1_i64, -1] {
            let mut slice = anchor.slice_index + step;
            loop {
                let pick = per_slice.get(&slice).and_then(|cands| {
                    best_candidate(cands, &consumed, |i| iou2d(anchor, &boxes[i]), boxes, theta)
                });
                let Some(i) = pick else { break };
                consumed[i] = true;
                chain.push(i);
                slice += step;
            }
        }
        out.push(chain);
    }
    Ok(out)
}

/// Best unconsumed candidate whose IoU exceeds `theta`.
fn best_candidate(
    candidates: &[usize],
    consumed: &[bool],
    iou: impl Fn(usize) -> f64,
    boxes: &[Box2D],
    theta: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    // candidates are in input order, so strict comparisons keep the earliest on ties
    for &i in candidates {
        if consumed[i] {
            continue;
        }
        let v = iou(i);
        if v <= theta {
            continue;
        }
        let better = match best {
            None => true,
            Some((j, bv)) => v > bv || (v == bv && boxes[i].score > boxes[j].score),
        };
        if better {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Slice-wise merging, the baseline procedure.
///
/// Slices are scanned in ascending order. Within a slice, boxes are visited
/// by descending score and each joins the open track (one ending on the
/// previous slice and not yet extended on this slice) whose last box it
/// overlaps best with IoU above the threshold, otherwise it opens a new
/// track. Tracks not extended on a slice are closed.
pub fn merge_slice_wise(boxes: &[Box2D], cfg: &MergeConfig) -> Result<Vec<Box3D>> {
    let Some(patient) = single_patient(boxes)? else {
        return Ok(Vec::new());
    };
    Ok(slice_wise_groups(boxes, cfg)?
        .into_iter()
        .map(|track| enclose(patient, track, boxes))
        .collect())
}

/// Input indices forming each slice-wise track, top slice first, in output
/// order.
pub fn slice_wise_groups(boxes: &[Box2D], cfg: &MergeConfig) -> Result<Vec<Vec<usize>>> {
    single_patient(boxes)?;
    let theta = cfg.iou_threshold();

    let mut order = by_score_desc(boxes);
    // stable: slice ascending, then score descending, then input order
    order.sort_by_key(|&i| boxes[i].slice_index);

    let mut tracks: Vec<Vec<usize>> = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let slice = boxes[order[start]].slice_index;
        let end = start
            + order[start..]
                .iter()
                .take_while(|&&i| boxes[i].slice_index == slice)
                .count();

        let continuable: Vec<usize> = open
            .iter()
            .copied()
            .filter(|&t| {
                let last = *tracks[t].last().unwrap();
                boxes[last].slice_index == slice - 1
            })
            .collect();
        let mut extended = vec![false; continuable.len()];
        let mut next_open = Vec::new();
        for &i in &order[start..end] {
            let mut best: Option<(usize, f64)> = None;
            for (k, &t) in continuable.iter().enumerate() {
                if extended[k] {
                    continue;
                }
                let last = *tracks[t].last().unwrap();
                let v = iou2d(&boxes[last], &boxes[i]);
                if v > theta && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((k, v));
                }
            }
            match best {
                Some((k, _)) => {
                    extended[k] = true;
                    tracks[continuable[k]].push(i);
                    next_open.push(continuable[k]);
                }
                None => {
                    tracks.push(vec![i]);
                    next_open.push(tracks.len() - 1);
                }
            }
        }
        open = next_open;
        start = end;
    }

    let best = |t: &Vec<usize>| t.iter().map(|&i| boxes[i].score).fold(f64::MIN, f64::max);
    tracks.sort_by(|a, b| best(b).total_cmp(&best(a)));
    Ok(tracks)
}
