//! Synthetic station-stratification study.
//!
//! Proposals are drawn from station-specific clusters: every station has its
//! own context mean and its own LN-vs-background direction, and the
//! directions are mutually orthogonal. A single linear probe has to compromise
//! across stations, while per-station probes combined through the gate can
//! each use their station's direction. Linear probes are trained with the
//! losses in [`crate::gating`] and compared through the FROC protocol in
//! [`crate::evaluation`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::evaluation::{froc, EvalConfig, FrocCurve, GroundTruthLesion};
use crate::gating::{self, GateInput, GateMode, Proposal, Station, StationGrouping};
use crate::geometry::Box3D;

/// Fraction of patients used for training; the rest are held out.
pub const TRAIN_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub step_size: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            step_size: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Number of station groups, at most 14.
    pub num_stations: usize,
    pub feature_dim: usize,
    pub proposals_per_station: usize,
    pub patients: usize,
    /// Probability that a gate leans toward a wrong station.
    pub station_noise: f64,
    /// Distance between the LN and background class means along the
    /// station's direction.
    pub margin: f64,
    pub seed: u64,
    /// Share of proposals that are lymph nodes.
    pub positive_fraction: f64,
    /// Scale of the per-station context means.
    pub context_scale: f64,
    /// Standard deviation of the isotropic feature noise.
    pub feature_noise: f64,
    /// Gate mass on the proposal's own station when the gate is clean.
    pub gate_confidence: f64,
    /// Mass moved onto the wrong station when a gate is corrupted.
    pub corruption_strength: f64,
    pub train: TrainConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_stations: 6,
            feature_dim: 16,
            proposals_per_station: 100,
            patients: 40,
            station_noise: 0.1,
            margin: 3.5,
            seed: 42,
            positive_fraction: 0.3,
            context_scale: 1.0,
            feature_noise: 1.0,
            gate_confidence: 0.9,
            corruption_strength: 0.6,
            train: TrainConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_stations == 0 || self.num_stations > Station::ALL.len() {
            return bad(format!(
                "num_stations must be in 1..=14, got {}",
                self.num_stations
            ));
        }
        if self.feature_dim < self.num_stations {
            return bad(format!(
                "feature_dim {} is smaller than num_stations {}; station directions cannot be orthogonal",
                self.feature_dim, self.num_stations
            ));
        }
        if self.proposals_per_station == 0 || self.patients == 0 {
            return bad("proposal and patient counts must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.station_noise) {
            return bad(format!("station_noise must lie in [0, 1), got {}", self.station_noise));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return bad("positive_fraction must lie in (0, 1)".into());
        }
        if !(self.context_scale >= 0.0 && self.feature_noise >= 0.0) {
            return bad("context_scale and feature_noise must be non-negative".into());
        }
        if !(self.gate_confidence > 0.0 && self.gate_confidence <= 1.0) {
            return bad("gate_confidence must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.corruption_strength) {
            return bad("corruption_strength must lie in [0, 1]".into());
        }
        if !(self.train.step_size > 0.0 && self.train.step_size.is_finite()) {
            return bad("step_size must be positive".into());
        }
        Ok(())
    }

    /// Grouping that sends the first `num_stations` IASLC stations to their
    /// own heads (the remainder share the last head).
    pub fn grouping(&self) -> StationGrouping {
        let c = self.num_stations;
        let mut heads = [0; 14];
        for (i, h) in heads.iter_mut().enumerate() {
            *h = i.min(c - 1);
        }
        StationGrouping::new(heads).expect("prefix grouping is surjective")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub patient: usize,
    pub station: usize,
    pub label: bool,
    pub features: Vec<f64>,
    pub gate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub samples: Vec<SynthSample>,
    /// Unit LN-vs-background direction per station, mutually orthogonal.
    pub directions: Vec<Vec<f64>>,
    pub context_means: Vec<Vec<f64>>,
}

pub fn patient_name(patient: usize) -> String {
    format!("synth-{patient:03}")
}

impl SynthSample {
    /// A point-like detection box, unique to this sample.
    pub fn detection_box(&self, index: usize, score: f64) -> Box3D {
        let x = 20.0 * index as f64;
        Box3D {
            patient_id: patient_name(self.patient),
            x1: x,
            y1: 0.0,
            x2: x + 10.0,
            y2: 10.0,
            z1: 0,
            z2: 0,
            score,
        }
    }

    /// Ground-truth lesion at the same location, for LN samples.
    pub fn lesion(&self, index: usize) -> Option<GroundTruthLesion> {
        self.label.then(|| GroundTruthLesion {
            lesion_id: format!("lesion-{index}"),
            extent: self.detection_box(index, 0.0),
            short_axis_mm: 10.0,
            long_axis_mm: 12.0,
            station: Station::ALL[self.station].name().to_owned(),
        })
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `count` orthonormal vectors by Gram-Schmidt on Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, dim, 1.0);
        for b in &basis {
            let d = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

fn clean_gate(c: usize, station: usize, confidence: f64) -> Vec<f64> {
    if c == 1 {
        return vec![1.0];
    }
    let rest = (1.0 - confidence) / (c - 1) as f64;
    (0..c)
        .map(|j| if j == station { confidence } else { rest })
        .collect()
}

/// Draw a synthetic proposal set. Deterministic for a given configuration.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.num_stations;
    let d = cfg.feature_dim;

    let directions = orthonormal(&mut rng, d, c);
    let context_means: Vec<Vec<f64>> = (0..c)
        .map(|_| gaussian_vec(&mut rng, d, cfg.context_scale))
        .collect();

    let mut samples = Vec::with_capacity(c * cfg.proposals_per_station);
    for station in 0..c {
        for _ in 0..cfg.proposals_per_station {
            let label = rng.random_bool(cfg.positive_fraction);
            let patient = rng.random_range(0..cfg.patients);
            let shift = if label { 0.5 } else { -0.5 } * cfg.margin;
            let noise = gaussian_vec(&mut rng, d, cfg.feature_noise);
            let features = (0..d)
                .map(|k| context_means[station][k] + shift * directions[station][k] + noise[k])
                .collect();

            let mut gate = clean_gate(c, station, cfg.gate_confidence);
            if c > 1 && rng.random_bool(cfg.station_noise) {
                let mut wrong = rng.random_range(0..c - 1);
                if wrong >= station {
                    wrong += 1;
                }
                let lambda = cfg.corruption_strength;
                gate.iter_mut().for_each(|t| *t *= 1.0 - lambda);
                gate[wrong] += lambda;
            }
            samples.push(SynthSample {
                patient,
                station,
                label,
                features,
                gate,
            });
        }
    }
    Ok(SynthData {
        samples,
        directions,
        context_means,
    })
}

/// One linear probe per head: `logit_j = w_j · x + b_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHeads {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearHeads {
    pub fn zeros(heads: usize, dim: usize) -> Self {
        Self {
            weights: vec![vec![0.0; dim]; heads],
            bias: vec![0.0; heads],
        }
    }

    pub fn num_heads(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHeads {
    pub mode: GateMode,
    pub heads: LinearHeads,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

fn heads_for(mode: GateMode, c: usize) -> usize {
    match mode {
        GateMode::Pooled => 1,
        GateMode::Multiclass => c + 1,
        GateMode::Soft | GateMode::Hard | GateMode::UniformEnsemble => c,
    }
}

/// Gate used for a sample under `mode`, both in training and at inference.
fn mode_gate(mode: GateMode, sample: &SynthSample, c: usize) -> Vec<f64> {
    match mode {
        GateMode::Soft | GateMode::Multiclass => sample.gate.clone(),
        GateMode::Hard => {
            let mut g = vec![0.0; c];
            g[gating::argmax(&sample.gate)] = 1.0;
            g
        }
        GateMode::Pooled => vec![1.0],
        GateMode::UniformEnsemble => vec![1.0 / c as f64; c],
    }
}

fn proposal_for(
    mode: GateMode,
    sample: &SynthSample,
    index: usize,
    heads: &LinearHeads,
    c: usize,
) -> Result<Proposal> {
    Proposal::new(
        format!("s{index}"),
        patient_name(sample.patient),
        sample.label,
        heads.logits(&sample.features),
        GateInput::Probabilities(mode_gate(mode, sample, c)),
    )
    .map(|p| p.with_station(Some(Station::ALL[sample.station]), sample.label))
}

fn batch_loss_and_grad(
    mode: GateMode,
    batch: &[Proposal],
    grouping: &StationGrouping,
) -> Result<(f64, Vec<Vec<f64>>)> {
    match mode {
        GateMode::Multiclass => Ok((
            gating::multiclass_loss(batch, grouping)?,
            gating::multiclass_loss_grad(batch, grouping)?,
        )),
        _ => Ok((gating::gated_loss(batch)?, gating::gated_loss_grad(batch)?)),
    }
}

/// Full-batch gradient descent on the loss associated with `mode`.
///
/// Soft and hard gating use the gate-weighted BCE (hard with one-hot argmax
/// gates), pooled a single BCE head, uniform ensemble an equally weighted
/// BCE over heads, multiclass the `c + 1`-way cross-entropy. Uniform-ensemble
/// steps are scaled by `c` so every head moves as if trained alone.
pub fn train_heads(
    samples: &[SynthSample],
    num_stations: usize,
    mode: GateMode,
    epochs: usize,
    step_size: f64,
) -> Result<TrainedHeads> {
    let first = samples.first().ok_or(Error::EmptyBatch)?;
    let dim = first.features.len();
    let c = num_stations;
    if c == 0 || c > Station::ALL.len() {
        return Err(Error::InvalidConfig(format!("num_stations {c} out of range")));
    }
    let grouping = SynthConfig {
        num_stations: c,
        ..SynthConfig::default()
    }
    .grouping();
    let step = match mode {
        GateMode::UniformEnsemble => step_size * c as f64,
        _ => step_size,
    };

    let mut heads = LinearHeads::zeros(heads_for(mode, c), dim);
    let evaluate = |heads: &LinearHeads| -> Result<(f64, Vec<Vec<f64>>)> {
        let batch = samples
            .iter()
            .enumerate()
            .map(|(i, s)| proposal_for(mode, s, i, heads, c))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad) = batch_loss_and_grad(mode, &batch, &grouping)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "{mode} loss became non-finite; reduce the step size"
            )));
        }
        Ok((loss, grad))
    };

    let (initial_loss, mut grad) = evaluate(&heads)?;
    let mut loss = initial_loss;
    for _ in 0..epochs {
        for (sample, g) in samples.iter().zip(&grad) {
            for (j, gij) in g.iter().enumerate() {
                if *gij == 0.0 {
                    continue;
                }
                heads.bias[j] -= step * gij;
                heads.weights[j]
                    .iter_mut()
                    .zip(&sample.features)
                    .for_each(|(w, x)| *w -= step * gij * x);
            }
        }
        (loss, grad) = evaluate(&heads)?;
    }
    if epochs > 0 && loss >= initial_loss {
        return Err(Error::Training(format!(
            "{mode} loss did not decrease ({initial_loss} -> {loss})"
        )));
    }
    Ok(TrainedHeads {
        mode,
        heads,
        initial_loss,
        final_loss: loss,
        epochs,
    })
}

impl TrainedHeads {
    /// Inference score of one sample under the trained mode.
    pub fn score(&self, sample: &SynthSample, num_stations: usize) -> Result<f64> {
        let p = proposal_for(self.mode, sample, 0, &self.heads, num_stations)?;
        gating::score(&p, self.mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub mode: GateMode,
    pub curve: FrocCurve,
    pub avg_sensitivity: f64,
    /// Held-out classification accuracy at the natural decision boundary.
    pub accuracy: f64,
    /// Raw held-out scores in sample order.
    pub scores: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub config: SynthConfig,
    pub train_patients: usize,
    pub test_patients: usize,
    pub modes: Vec<ModeReport>,
}

impl StudyReport {
    pub fn get(&self, mode: GateMode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

/// Split patients into training and held-out sets.
fn split_patients(cfg: &SynthConfig) -> Result<Vec<bool>> {
    if cfg.patients < 2 {
        return Err(Error::InvalidConfig(
            "at least two patients are needed for a train/test split".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // separate stream from the generator's
    rng.set_stream(1);
    let mut ids: Vec<usize> = (0..cfg.patients).collect();
    ids.shuffle(&mut rng);
    let n_train =
        ((cfg.patients as f64 * TRAIN_FRACTION).round() as usize).clamp(1, cfg.patients - 1);
    let mut is_train = vec![false; cfg.patients];
    for &p in &ids[..n_train] {
        is_train[p] = true;
    }
    Ok(is_train)
}

fn accuracy(mode: GateMode, samples: &[&SynthSample], scores: &[f64]) -> f64 {
    let boundary = match mode {
        GateMode::Multiclass => 0.5,
        _ => 0.0,
    };
    let correct = samples
        .iter()
        .zip(scores)
        .filter(|(s, &v)| (v > boundary) == s.label)
        .count();
    correct as f64 / samples.len().max(1) as f64
}

/// Generate data, train every requested mode on the training patients and
/// evaluate each on the held-out patients.
pub fn run_study(cfg: &SynthConfig, modes: &[GateMode]) -> Result<StudyReport> {
    let data = generate(cfg)?;
    let is_train = split_patients(cfg)?;
    let (train, test): (Vec<&SynthSample>, Vec<&SynthSample>) =
        data.samples.iter().partition(|s| is_train[s.patient]);
    let train: Vec<SynthSample> = train.into_iter().cloned().collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidConfig(
            "train/test split left one side without proposals".into(),
        ));
    }
    let test_patients = is_train.iter().filter(|t| !**t).count();

    let lesions: Vec<GroundTruthLesion> = test
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.lesion(i))
        .collect();
    let eval_cfg = EvalConfig::default();
    let c = cfg.num_stations;

    let mut reports = Vec::with_capacity(modes.len());
    for &mode in modes {
        let trained = train_heads(&train, c, mode, cfg.train.epochs, cfg.train.step_size)?;
        let scores = test
            .iter()
            .map(|s| trained.score(s, c))
            .collect::<Result<Vec<f64>>>()?;
        let preds: Vec<Box3D> = test
            .iter()
            .zip(&scores)
            .enumerate()
            .map(|(i, (s, &v))| {
                let p = if mode == GateMode::Multiclass { v } else { gating::sigmoid(v) };
                s.detection_box(i, p)
            })
            .collect();
        let curve = froc(&preds, &lesions, test_patients, &eval_cfg)?;
        reports.push(ModeReport {
            mode,
            avg_sensitivity: curve.avg_sensitivity,
            accuracy: accuracy(mode, &test, &scores),
            curve,
            scores,
            initial_loss: trained.initial_loss,
            final_loss: trained.final_loss,
            epochs: trained.epochs,
        });
    }
    Ok(StudyReport {
        config: cfg.clone(),
        train_patients: cfg.patients - test_patients,
        test_patients,
        modes: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            proposals_per_station: 30,
            patients: 10,
            seed,
            train: TrainConfig {
                epochs: 50,
                step_size: 0.5,
            },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn validation() {
        assert!(SynthConfig::default().validate().is_ok());
        let bad = [
            SynthConfig { num_stations: 0, ..small(0) },
            SynthConfig { num_stations: 15, feature_dim: 20, ..small(0) },
            SynthConfig { feature_dim: 5, ..small(0) },
            SynthConfig { station_noise: 1.0, ..small(0) },
            SynthConfig { margin: 0.0, ..small(0) },
            SynthConfig { patients: 0, ..small(0) },
            SynthConfig { positive_fraction: 1.0, ..small(0) },
        ];
        for cfg in bad {
            assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
        let one_patient = SynthConfig { patients: 1, ..small(0) };
        assert!(generate(&one_patient).is_ok());
        assert!(run_study(&one_patient, &[GateMode::Pooled]).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(&small(42)).unwrap(), generate(&small(42)).unwrap());
        assert_ne!(generate(&small(42)).unwrap(), generate(&small(43)).unwrap());
    }

    #[test]
    fn directions_are_orthonormal() {
        let data = generate(&small(7)).unwrap();
        for (i, a) in data.directions.iter().enumerate() {
            for (j, b) in data.directions.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(a, b) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gates_are_distributions() {
        let cfg = SynthConfig { station_noise: 0.5, ..small(3) };
        let data = generate(&cfg).unwrap();
        let mut corrupted = 0;
        for s in &data.samples {
            assert!((s.gate.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if gating::argmax(&s.gate) != s.station {
                corrupted += 1;
            }
        }
        assert!(corrupted > 0 && corrupted < data.samples.len());

        let clean = generate(&SynthConfig { station_noise: 0.0, ..small(3) }).unwrap();
        assert!(clean.samples.iter().all(|s| gating::argmax(&s.gate) == s.station));
    }

    #[test]
    fn single_station_gate_is_trivial() {
        let cfg = SynthConfig { num_stations: 1, station_noise: 0.5, ..small(1) };
        let data = generate(&cfg).unwrap();
        assert!(data.samples.iter().all(|s| s.gate == vec![1.0]));
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let data = generate(&small(5)).unwrap();
        for mode in GateMode::ALL {
            let t = train_heads(&data.samples, 6, mode, 0, 0.5).unwrap();
            assert_eq!(t.heads, LinearHeads::zeros(heads_for(mode, 6), 16));
            assert_eq!(t.initial_loss, t.final_loss);
        }
    }

    #[test]
    fn training_reduces_every_loss() {
        let data = generate(&small(5)).unwrap();
        for mode in GateMode::ALL {
            let t = train_heads(&data.samples, 6, mode, 20, 0.2).unwrap();
            assert!(t.final_loss < t.initial_loss, "{mode}");
        }
    }

    #[test]
    fn divergent_step_is_reported() {
        let cfg = SynthConfig { context_scale: 50.0, ..small(5) };
        let data = generate(&cfg).unwrap();
        let err = train_heads(&data.samples, 6, GateMode::Soft, 200, 1e6).unwrap_err();
        assert!(matches!(err, Error::Training(_)), "{err:?}");
    }

    #[test]
    fn report_contains_requested_modes() {
        let r = run_study(&small(9), &[GateMode::Pooled]).unwrap();
        assert_eq!(r.modes.len(), 1);
        assert!(r.get(GateMode::Pooled).is_some());
        assert!(r.get(GateMode::Soft).is_none());
        assert_eq!(r.train_patients + r.test_patients, 10);
        assert_eq!(r.train_patients, 6);
    }

    #[test]
    fn study_is_deterministic() {
        let a = run_study(&small(11), &GateMode::ALL).unwrap();
        let b = run_study(&small(11), &GateMode::ALL).unwrap();
        assert_eq!(a, b);
    }
}
