//! Axis-aligned box arithmetic for slice-wise and volumetric detections.
//!
//! In-plane coordinates are continuous (pixels), so a rectangle covers
//! `(x2 - x1) * (y2 - y1)`. The axial direction is discrete: a [`Box3D`]
//! spanning slices `z1..=z2` has depth `z2 - z1 + 1`. All overlap measures
//! are computed in voxel space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A detection rectangle on a single axial slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    #[serde(rename = "patient")]
    pub patient_id: String,
    #[serde(rename = "slice")]
    pub slice_index: i64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

/// A volumetric detection (or ground-truth extent) spanning slices `z1..=z2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    #[serde(rename = "patient")]
    pub patient_id: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub z1: i64,
    pub z2: i64,
    pub score: f64,
}

fn check_rect(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<()> {
    if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
        return Err(Error::InvalidBox("non-finite coordinate".into()));
    }
    if x2 <= x1 || y2 <= y1 {
        return Err(Error::InvalidBox(format!(
            "zero or negative area rectangle ({x1}, {y1}, {x2}, {y2})"
        )));
    }
    Ok(())
}

fn check_score(score: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::InvalidBox(format!("score {score} outside [0, 1]")));
    }
    Ok(())
}

impl Box2D {
    pub fn new(
        patient_id: impl Into<String>,
        slice_index: i64,
        [x1, y1, x2, y2]: [f64; 4],
        score: f64,
    ) -> Result<Self> {
        let b = Self {
            patient_id: patient_id.into(),
            slice_index,
            x1,
            y1,
            x2,
            y2,
            score,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        check_rect(self.x1, self.y1, self.x2, self.y2)?;
        check_score(self.score)?;
        if self.slice_index < 0 {
            return Err(Error::InvalidBox(format!(
                "negative slice index {}",
                self.slice_index
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

impl Box3D {
    pub fn new(
        patient_id: impl Into<String>,
        [x1, y1, x2, y2]: [f64; 4],
        (z1, z2): (i64, i64),
        score: f64,
    ) -> Result<Self> {
        let b = Self {
            patient_id: patient_id.into(),
            x1,
            y1,
            x2,
            y2,
            z1,
            z2,
            score,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        check_rect(self.x1, self.y1, self.x2, self.y2)?;
        check_score(self.score)?;
        if self.z2 < self.z1 {
            return Err(Error::InvalidBox(format!(
                "z range {}..={} is empty",
                self.z1, self.z2
            )));
        }
        Ok(())
    }

    /// Number of slices covered.
    pub fn depth(&self) -> i64 {
        self.z2 - self.z1 + 1
    }

    pub fn volume(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1) * self.depth() as f64
    }
}

fn overlap_len(a1: f64, a2: f64, b1: f64, b2: f64) -> f64 {
    (a2.min(b2) - a1.max(b1)).max(0.0)
}

fn slice_overlap(a: &Box3D, b: &Box3D) -> i64 {
    (a.z2.min(b.z2) - a.z1.max(b.z1) + 1).max(0)
}

fn intersection_volume(a: &Box3D, b: &Box3D) -> f64 {
    let dz = slice_overlap(a, b);
    if dz == 0 {
        return 0.0;
    }
    overlap_len(a.x1, a.x2, b.x1, b.x2) * overlap_len(a.y1, a.y2, b.y1, b.y2) * dz as f64
}

fn same_patient(a: &Box3D, b: &Box3D) -> Result<()> {
    if a.patient_id != b.patient_id {
        return Err(Error::PatientMismatch {
            left: a.patient_id.clone(),
            right: b.patient_id.clone(),
        });
    }
    Ok(())
}

/// In-plane intersection over union. Slice indices are not compared.
pub fn iou2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = overlap_len(a.x1, a.x2, b.x1, b.x2) * overlap_len(a.y1, a.y2, b.y1, b.y2);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric intersection over union.
pub fn iou3d(a: &Box3D, b: &Box3D) -> Result<f64> {
    same_patient(a, b)?;
    let inter = intersection_volume(a, b);
    if inter <= 0.0 {
        return Ok(0.0);
    }
    let union = a.volume() + b.volume() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Intersection over the detected box: `|det ∩ gt| / |det|`.
///
/// Deliberately asymmetric: a small detection lying inside a large lesion
/// scores 1 even when its IoU is low.
pub fn iobb3d(det: &Box3D, gt: &Box3D) -> Result<f64> {
    same_patient(det, gt)?;
    Ok((intersection_volume(det, gt) / det.volume()).clamp(0.0, 1.0))
}
