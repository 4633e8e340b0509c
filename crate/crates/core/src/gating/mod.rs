//! Station-stratified multi-head scoring.
//!
//! Each proposal carries `c` head logits (one LN-vs-background classifier per
//! station group) and a gate, the station branch's probability vector over
//! the same `c` groups. Training weights every head's binary cross-entropy by
//! the gate; inference takes the gate-weighted sum of head logits. Gates are
//! constants with respect to the detection loss, so the gradient interface
//! only reports derivatives with respect to head logits.
//!
//! The ablation strategies (hard gating, pooled single head, uniform
//! ensemble, multi-class classifier) are provided alongside for comparison.

mod station;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use station::{group_station, Station, StationGrouping};

/// Tolerance on `Σ gate = 1`.
pub const GATE_SUM_TOLERANCE: f64 = 1e-9;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy of label `y` against `σ(logit)`, in log-sum form:
/// `-[y ln σ(s) + (1-y) ln(1-σ(s))] = softplus(s) - y s`.
pub fn bce_with_logits(label: bool, logit: f64) -> f64 {
    if label {
        softplus(-logit)
    } else {
        softplus(logit)
    }
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// How a station gate is supplied when building a [`Proposal`].
#[derive(Debug, Clone, PartialEq)]
pub enum GateInput {
    /// Already-normalized station probabilities.
    Probabilities(Vec<f64>),
    /// Raw station-branch logits; softmax-normalized on ingestion.
    StationLogits(Vec<f64>),
}

/// A second-stage candidate: binary label, per-head logits and station gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub id: String,
    pub patient_id: String,
    pub label: bool,
    pub head_logits: Vec<f64>,
    gate: Vec<f64>,
    station_logits: Option<Vec<f64>>,
    pub true_station: Option<Station>,
    pub is_true_positive: bool,
}

impl Proposal {
    pub fn new(
        id: impl Into<String>,
        patient_id: impl Into<String>,
        label: bool,
        head_logits: Vec<f64>,
        gate: GateInput,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| Error::InvalidProposal {
            id: id.clone(),
            reason,
        };
        if head_logits.is_empty() {
            return Err(invalid("no head logits".into()));
        }
        if head_logits.iter().any(|s| !s.is_finite()) {
            return Err(invalid("non-finite head logit".into()));
        }
        let (gate, station_logits) = match gate {
            GateInput::Probabilities(g) => {
                if g.is_empty() {
                    return Err(invalid("empty gate".into()));
                }
                if g.iter().any(|t| !t.is_finite() || *t < 0.0) {
                    return Err(invalid("gate entries must be finite and non-negative".into()));
                }
                let sum: f64 = g.iter().sum();
                if (sum - 1.0).abs() > GATE_SUM_TOLERANCE {
                    return Err(invalid(format!("gate sums to {sum}, expected 1")));
                }
                (g, None)
            }
            GateInput::StationLogits(z) => {
                if z.is_empty() {
                    return Err(invalid("empty station logits".into()));
                }
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("non-finite station logit".into()));
                }
                (softmax(&z), Some(z))
            }
        };
        Ok(Self {
            id,
            patient_id: patient_id.into(),
            label,
            head_logits,
            gate,
            station_logits,
            true_station: None,
            is_true_positive: false,
        })
    }

    /// Attach the annotated station and the TP flag used to mask the
    /// station loss.
    pub fn with_station(mut self, station: Option<Station>, is_true_positive: bool) -> Self {
        self.true_station = station;
        self.is_true_positive = is_true_positive;
        self
    }

    pub fn gate(&self) -> &[f64] {
        &self.gate
    }

    pub fn station_logits(&self) -> Option<&[f64]> {
        self.station_logits.as_deref()
    }

    /// Number of station groups, `c`.
    pub fn num_heads(&self) -> usize {
        self.gate.len()
    }

    /// Copy with the gate replaced by a one-hot vector on its argmax.
    pub fn hardened(&self) -> Self {
        let mut gate = vec![0.0; self.gate.len()];
        gate[argmax(&self.gate)] = 1.0;
        Self {
            gate,
            station_logits: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Gate-weighted heads (the proposed strategy).
    Soft,
    /// Only the head with the highest station probability.
    Hard,
    /// One `c + 1`-way softmax classifier with a background class.
    Multiclass,
    /// A single head trained on everything.
    Pooled,
    /// `c` heads trained on everything, averaged at inference.
    UniformEnsemble,
}

impl GateMode {
    pub const ALL: [GateMode; 5] = [
        GateMode::Pooled,
        GateMode::UniformEnsemble,
        GateMode::Multiclass,
        GateMode::Hard,
        GateMode::Soft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GateMode::Soft => "soft",
            GateMode::Hard => "hard",
            GateMode::Multiclass => "multiclass",
            GateMode::Pooled => "pooled",
            GateMode::UniformEnsemble => "uniform",
        }
    }
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "soft" => Ok(GateMode::Soft),
            "hard" => Ok(GateMode::Hard),
            "multiclass" | "multi-class" => Ok(GateMode::Multiclass),
            "pooled" => Ok(GateMode::Pooled),
            "uniform" | "uniform_ensemble" | "uniform-ensemble" => Ok(GateMode::UniformEnsemble),
            other => Err(Error::InvalidConfig(format!("unknown gate mode `{other}`"))),
        }
    }
}

/// Checks a batch for the gated losses and returns its head count.
fn gated_heads(batch: &[Proposal]) -> Result<usize> {
    let first = batch.first().ok_or(Error::EmptyBatch)?;
    let c = first.num_heads();
    for p in batch {
        if p.num_heads() != c || p.head_logits.len() != c {
            return Err(Error::HeadCountMismatch {
                id: p.id.clone(),
                expected: c,
                found: if p.num_heads() != c {
                    p.num_heads()
                } else {
                    p.head_logits.len()
                },
            });
        }
    }
    Ok(c)
}

/// Gate-weighted binary cross-entropy averaged over the batch:
/// `(1/n) Σ_i Σ_j t_ij · BCE(y_i, σ(s_ij))`.
pub fn gated_loss(batch: &[Proposal]) -> Result<f64> {
    gated_heads(batch)?;
    let total: f64 = batch
        .iter()
        .map(|p| {
            p.gate
                .iter()
                .zip(&p.head_logits)
                .map(|(&t, &s)| t * bce_with_logits(p.label, s))
                .sum::<f64>()
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// `∂L/∂s_ij = t_ij (σ(s_ij) - y_i) / n`, one row per proposal.
///
/// There is no gate gradient: the station branch receives no signal from
/// the detection loss.
pub fn gated_loss_grad(batch: &[Proposal]) -> Result<Vec<Vec<f64>>> {
    gated_heads(batch)?;
    let n = batch.len() as f64;
    Ok(batch
        .iter()
        .map(|p| {
            let y = if p.label { 1.0 } else { 0.0 };
            p.gate
                .iter()
                .zip(&p.head_logits)
                .map(|(&t, &s)| t * (sigmoid(s) - y) / n)
                .collect()
        })
        .collect())
}

fn check_gated(p: &Proposal) -> Result<()> {
    gated_heads(std::slice::from_ref(p)).map(|_| ())
}

/// Gate-weighted sum of head logits (a logit-scale score).
pub fn final_score(p: &Proposal) -> Result<f64> {
    check_gated(p)?;
    Ok(p.gate.iter().zip(&p.head_logits).map(|(t, s)| t * s).sum())
}

/// Gate-weighted sum of head probabilities, `Σ_j t_j σ(s_j)`.
pub fn probability_weighted_score(p: &Proposal) -> Result<f64> {
    check_gated(p)?;
    Ok(p.gate
        .iter()
        .zip(&p.head_logits)
        .map(|(t, s)| t * sigmoid(*s))
        .sum())
}

/// Logit of the head with the largest gate entry (lowest index on ties).
pub fn hard_gate_score(p: &Proposal) -> Result<f64> {
    check_gated(p)?;
    Ok(p.head_logits[argmax(&p.gate)])
}

/// The single logit of a one-head proposal.
pub fn pooled_score(p: &Proposal) -> Result<f64> {
    if p.head_logits.len() != 1 {
        return Err(Error::HeadCountMismatch {
            id: p.id.clone(),
            expected: 1,
            found: p.head_logits.len(),
        });
    }
    Ok(p.head_logits[0])
}

/// Unweighted mean of head logits.
pub fn uniform_ensemble_score(p: &Proposal) -> Result<f64> {
    check_gated(p)?;
    Ok(p.head_logits.iter().sum::<f64>() / p.head_logits.len() as f64)
}

/// Result of [`station_ce_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationLoss {
    pub value: f64,
    pub true_positives: usize,
}

impl StationLoss {
    /// Set when the batch held no TP proposal and the loss defaulted to 0.
    pub fn no_true_positives(&self) -> bool {
        self.true_positives == 0
    }
}

/// Softmax cross-entropy of the station branch, averaged over TP proposals.
///
/// Uses the raw station logits when the proposal was built from them, else
/// `-ln t_k` of the stored gate, which is the same quantity.
pub fn station_ce_loss(batch: &[Proposal], grouping: &StationGrouping) -> Result<StationLoss> {
    let c = grouping.num_heads();
    let mut total = 0.0;
    let mut count = 0;
    for p in batch {
        if p.num_heads() != c {
            return Err(Error::HeadCountMismatch {
                id: p.id.clone(),
                expected: c,
                found: p.num_heads(),
            });
        }
        if !p.is_true_positive {
            continue;
        }
        let station = p.true_station.ok_or_else(|| Error::InvalidProposal {
            id: p.id.clone(),
            reason: "true-positive proposal without a station label".into(),
        })?;
        let k = grouping.head(station);
        total -= match &p.station_logits {
            Some(z) => log_softmax(z)[k],
            None => p.gate[k].ln(),
        };
        count += 1;
    }
    Ok(StationLoss {
        value: if count == 0 { 0.0 } else { total / count as f64 },
        true_positives: count,
    })
}

/// Class targeted by a proposal in the multi-class variant: the station's
/// head for LN proposals, the appended background class `c` otherwise.
fn multiclass_target(p: &Proposal, grouping: &StationGrouping) -> Result<usize> {
    let c = grouping.num_heads();
    if p.head_logits.len() != c + 1 {
        return Err(Error::HeadCountMismatch {
            id: p.id.clone(),
            expected: c + 1,
            found: p.head_logits.len(),
        });
    }
    if !p.label {
        return Ok(c);
    }
    let station = p.true_station.ok_or_else(|| Error::InvalidProposal {
        id: p.id.clone(),
        reason: "LN proposal without a station label".into(),
    })?;
    Ok(grouping.head(station))
}

/// Mean softmax cross-entropy over `c + 1` classes (stations + background).
pub fn multiclass_loss(batch: &[Proposal], grouping: &StationGrouping) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for p in batch {
        let k = multiclass_target(p, grouping)?;
        total -= log_softmax(&p.head_logits)[k];
    }
    Ok(total / batch.len() as f64)
}

/// `∂L/∂z_ik = (softmax(z_i)_k - [k = target_i]) / n`.
pub fn multiclass_loss_grad(
    batch: &[Proposal],
    grouping: &StationGrouping,
) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    batch
        .iter()
        .map(|p| {
            let k = multiclass_target(p, grouping)?;
            let mut g = softmax(&p.head_logits);
            g[k] -= 1.0;
            g.iter_mut().for_each(|v| *v /= n);
            Ok(g)
        })
        .collect()
}

/// `1 - P(background)` for a `c + 1`-logit proposal, computed as the summed
/// station probabilities to avoid cancellation.
pub fn multiclass_score(p: &Proposal) -> Result<f64> {
    if p.head_logits.len() < 2 {
        return Err(Error::InvalidProposal {
            id: p.id.clone(),
            reason: "multi-class scoring needs at least one station class plus background".into(),
        });
    }
    let probs = softmax(&p.head_logits);
    Ok(probs[..probs.len() - 1].iter().sum())
}

/// Inference score under `mode`.
pub fn score(p: &Proposal, mode: GateMode) -> Result<f64> {
    match mode {
        GateMode::Soft => final_score(p),
        GateMode::Hard => hard_gate_score(p),
        GateMode::Multiclass => multiclass_score(p),
        GateMode::Pooled => pooled_score(p),
        GateMode::UniformEnsemble => uniform_ensemble_score(p),
    }
}
