//! Lesion-level detection matching and FROC analysis.
//!
//! A detection hits a lesion when the intersection over the *detected* box
//! exceeds the threshold. Lesions whose short axis is below the size cut-off
//! are not targets: hitting one is neither a TP nor an FP. Repeated hits on
//! an already-detected lesion are likewise ignored.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::geometry::{iobb3d, Box3D};

pub const DEFAULT_IOBB_THRESHOLD: f64 = 0.3;
pub const DEFAULT_MIN_SHORT_AXIS_MM: f64 = 7.0;
pub const DEFAULT_FP_POINTS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const DEFAULT_SIZE_BANDS: [f64; 4] = [0.0, 5.0, 7.0, 10.0];

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthLesion {
    pub lesion_id: String,
    /// Lesion extent; its `score` is unused.
    pub extent: Box3D,
    pub short_axis_mm: f64,
    pub long_axis_mm: f64,
    pub station: String,
}

impl GroundTruthLesion {
    pub fn new(
        lesion_id: impl Into<String>,
        extent: Box3D,
        short_axis_mm: f64,
        long_axis_mm: f64,
        station: impl Into<String>,
    ) -> Result<Self> {
        let gt = Self {
            lesion_id: lesion_id.into(),
            extent,
            short_axis_mm,
            long_axis_mm,
            station: station.into(),
        };
        gt.validate()?;
        Ok(gt)
    }

    pub fn validate(&self) -> Result<()> {
        self.extent.validate()?;
        if !(self.short_axis_mm > 0.0 && self.long_axis_mm > 0.0) {
            return Err(Error::InvalidBox(format!(
                "lesion `{}`: axes must be positive",
                self.lesion_id
            )));
        }
        if self.short_axis_mm > self.long_axis_mm {
            return Err(Error::InvalidBox(format!(
                "lesion `{}`: short axis {} exceeds long axis {}",
                self.lesion_id, self.short_axis_mm, self.long_axis_mm
            )));
        }
        Ok(())
    }

    pub fn patient_id(&self) -> &str {
        &self.extent.patient_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    iobb_threshold: f64,
    min_short_axis_mm: f64,
    fp_points: Vec<f64>,
}

impl EvalConfig {
    pub fn new(iobb_threshold: f64, min_short_axis_mm: f64, fp_points: Vec<f64>) -> Result<Self> {
        if !(iobb_threshold > 0.0 && iobb_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "IoBB threshold must lie in (0, 1), got {iobb_threshold}"
            )));
        }
        if !(min_short_axis_mm >= 0.0 && min_short_axis_mm.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "minimum short axis must be >= 0, got {min_short_axis_mm}"
            )));
        }
        if fp_points.is_empty() {
            return Err(Error::InvalidConfig("no FP operating points".into()));
        }
        if fp_points.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidConfig("FP points must be positive".into()));
        }
        if fp_points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "FP points must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            iobb_threshold,
            min_short_axis_mm,
            fp_points,
        })
    }

    pub fn iobb_threshold(&self) -> f64 {
        self.iobb_threshold
    }

    pub fn min_short_axis_mm(&self) -> f64 {
        self.min_short_axis_mm
    }

    pub fn fp_points(&self) -> &[f64] {
        &self.fp_points
    }

    /// Same settings with a different size cut-off.
    pub fn with_min_short_axis(&self, min_short_axis_mm: f64) -> Result<Self> {
        Self::new(self.iobb_threshold, min_short_axis_mm, self.fp_points.clone())
    }

    pub fn is_eligible(&self, gt: &GroundTruthLesion) -> bool {
        gt.short_axis_mm >= self.min_short_axis_mm
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iobb_threshold: DEFAULT_IOBB_THRESHOLD,
            min_short_axis_mm: DEFAULT_MIN_SHORT_AXIS_MM,
            fp_points: DEFAULT_FP_POINTS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    TruePositive,
    FalsePositive,
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// One verdict per prediction, in input order.
    pub verdicts: Vec<Verdict>,
    /// The lesion credited to each TP prediction.
    pub matched_lesion: Vec<Option<usize>>,
    /// One flag per lesion, in input order.
    pub detected: Vec<bool>,
    pub eligible: Vec<bool>,
}

impl MatchOutcome {
    pub fn count(&self, v: Verdict) -> usize {
        self.verdicts.iter().filter(|&&x| x == v).count()
    }

    pub fn num_eligible(&self) -> usize {
        self.eligible.iter().filter(|&&e| e).count()
    }

    pub fn num_detected(&self) -> usize {
        self.detected.iter().filter(|&&d| d).count()
    }
}

/// Indices ordered by descending score; ties keep input order.
fn score_order(preds: &[Box3D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

/// Greedy matching in descending score order.
///
/// A prediction becomes a TP for the undetected eligible lesion it overlaps
/// best (IoBB above threshold). Otherwise it is ignored if it hits any
/// lesion (an already-detected eligible one, or one below the size
/// cut-off), and an FP if it hits nothing. Predictions from patients without
/// lesions are FPs.
pub fn match_detections(
    preds: &[Box3D],
    gts: &[GroundTruthLesion],
    cfg: &EvalConfig,
) -> Result<MatchOutcome> {
    let mut by_patient: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_patient.entry(g.patient_id()).or_default().push(i);
    }
    let eligible: Vec<bool> = gts.iter().map(|g| cfg.is_eligible(g)).collect();
    let mut detected = vec![false; gts.len()];
    let mut verdicts = vec![Verdict::FalsePositive; preds.len()];
    let mut matched_lesion = vec![None; preds.len()];
    let thr = cfg.iobb_threshold();

    for i in score_order(preds) {
        let pred = &preds[i];
        let Some(cands) = by_patient.get(pred.patient_id.as_str()) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        let mut hit_any = false;
        for &g in cands {
            let v = iobb3d(pred, &gts[g].extent)?;
            if v <= thr {
                continue;
            }
            hit_any = true;
            if eligible[g] && !detected[g] && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            detected[g] = true;
            verdicts[i] = Verdict::TruePositive;
            matched_lesion[i] = Some(g);
        } else if hit_any {
            verdicts[i] = Verdict::Ignored;
        }
    }

    Ok(MatchOutcome {
        verdicts,
        matched_lesion,
        detected,
        eligible,
    })
}

/// A prediction's score together with its matching verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredVerdict {
    pub score: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrocPoint {
    /// Predictions scoring at or above this value are kept.
    pub threshold: f64,
    pub fp_per_patient: f64,
    pub sensitivity: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrocCurve {
    /// One point per distinct prediction score, thresholds descending.
    pub points: Vec<FrocPoint>,
    /// `(fp_point, sensitivity)` pairs, in the configured order.
    pub sens_at: Vec<(f64, f64)>,
    pub avg_sensitivity: f64,
    pub num_eligible: usize,
    pub num_patients: usize,
}

impl FrocCurve {
    /// Sensitivity of the most permissive operating point whose FP rate does
    /// not exceed `fp_per_patient`; 0 when no point qualifies.
    pub fn sensitivity_at(&self, fp_per_patient: f64) -> f64 {
        let budget = fp_per_patient * self.num_patients as f64;
        self.points
            .iter()
            .filter(|p| p.false_positives as f64 <= budget + 1e-9)
            .map(|p| p.sensitivity)
            .fold(0.0, f64::max)
    }
}

/// Sweep the score threshold over already-matched predictions.
///
/// Greedy matching visits predictions in score order, so the verdicts of a
/// full run restricted to scores `>= τ` equal those of a run on only those
/// predictions; the sweep is therefore a cumulative count.
pub fn froc_from_verdicts(
    scored: &[ScoredVerdict],
    num_eligible: usize,
    num_patients: usize,
    fp_points: &[f64],
) -> Result<FrocCurve> {
    if num_eligible == 0 {
        return Err(Error::NoEligibleLesions);
    }
    if num_patients == 0 {
        return Err(Error::InvalidConfig("num_patients must be at least 1".into()));
    }
    let mut sorted: Vec<ScoredVerdict> = scored.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        while i < sorted.len() && sorted[i].score == threshold {
            match sorted[i].verdict {
                Verdict::TruePositive => tp += 1,
                Verdict::FalsePositive => fp += 1,
                Verdict::Ignored => {}
            }
            i += 1;
        }
        points.push(FrocPoint {
            threshold,
            fp_per_patient: fp as f64 / num_patients as f64,
            sensitivity: tp as f64 / num_eligible as f64,
            true_positives: tp,
            false_positives: fp,
        });
    }

    let mut curve = FrocCurve {
        points,
        sens_at: Vec::new(),
        avg_sensitivity: 0.0,
        num_eligible,
        num_patients,
    };
    curve.sens_at = fp_points
        .iter()
        .map(|&f| (f, curve.sensitivity_at(f)))
        .collect();
    curve.avg_sensitivity =
        curve.sens_at.iter().map(|(_, s)| s).sum::<f64>() / curve.sens_at.len().max(1) as f64;
    Ok(curve)
}

fn count_patients(preds: &[Box3D], gts: &[GroundTruthLesion]) -> usize {
    preds
        .iter()
        .map(|p| p.patient_id.as_str())
        .chain(gts.iter().map(|g| g.patient_id()))
        .collect::<HashSet<_>>()
        .len()
}

/// Full FROC analysis over all patients.
pub fn froc(
    preds: &[Box3D],
    gts: &[GroundTruthLesion],
    num_patients: usize,
    cfg: &EvalConfig,
) -> Result<FrocCurve> {
    if num_patients == 0 {
        return Err(Error::InvalidConfig("num_patients must be at least 1".into()));
    }
    let found = count_patients(preds, gts);
    if found > num_patients {
        return Err(Error::TooManyPatients {
            declared: num_patients,
            found,
        });
    }
    let outcome = match_detections(preds, gts, cfg)?;
    let scored: Vec<ScoredVerdict> = preds
        .iter()
        .zip(&outcome.verdicts)
        .map(|(p, &verdict)| ScoredVerdict {
            score: p.score,
            verdict,
        })
        .collect();
    froc_from_verdicts(&scored, outcome.num_eligible(), num_patients, cfg.fp_points())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeBand {
    pub min_short_axis_mm: f64,
    /// `None` when no lesion reaches the band's size.
    pub curve: Option<FrocCurve>,
}

/// One FROC curve per minimum short-axis size.
pub fn size_banded_report(
    preds: &[Box3D],
    gts: &[GroundTruthLesion],
    num_patients: usize,
    bands: &[f64],
    cfg: &EvalConfig,
) -> Result<Vec<SizeBand>> {
    bands
        .iter()
        .map(|&band| {
            let band_cfg = cfg.with_min_short_axis(band)?;
            let curve = match froc(preds, gts, num_patients, &band_cfg) {
                Ok(c) => Some(c),
                Err(Error::NoEligibleLesions) => None,
                Err(e) => return Err(e),
            };
            Ok(SizeBand {
                min_short_axis_mm: band,
                curve,
            })
        })
        .collect()
}
