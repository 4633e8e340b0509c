//! Acceptance gate: every criterion at its pinned tolerance, one PASS/FAIL
//! line each. Exits non-zero if any criterion fails.

use std::fs;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stratdet_cli::{cmd_merge, MergeArgs};
use stratdet_core::gating::{gated_loss, gated_loss_grad, softmax};
use stratdet_core::{
    froc, iou2d, lesion_centric_groups, match_detections, merge_lesion_centric, run_study, Box2D,
    Box3D, EvalConfig, GateInput, GateMode, GroundTruthLesion, MergeConfig, MergeMode, Proposal,
    SynthConfig, Verdict,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, t: Duration) -> bool {
    t < limit
}

// 1. analytic gradient vs central differences

fn gradient_check() -> Outcome {
    const H: f64 = 1e-5;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let c = [1, 6, 14][k % 3];
        let n = rng.random_range(1..=64);
        let batch: Vec<Proposal> = (0..n)
            .map(|i| {
                let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-6.0..6.0)).collect();
                let z: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
                Proposal::new(
                    format!("{i}"),
                    "p",
                    rng.random_bool(0.5),
                    logits,
                    GateInput::Probabilities(softmax(&z)),
                )
                .unwrap()
            })
            .collect();
        let grad = gated_loss_grad(&batch).unwrap();
        let mut work = batch.clone();
        let (mut max_diff, mut max_abs) = (0.0f64, 0.0f64);
        for i in 0..n {
            for j in 0..c {
                let s = batch[i].head_logits[j];
                work[i].head_logits[j] = s + H;
                let up = gated_loss(&work).unwrap();
                work[i].head_logits[j] = s - H;
                let down = gated_loss(&work).unwrap();
                work[i].head_logits[j] = s;
                max_diff = max_diff.max(((up - down) / (2.0 * H) - grad[i][j]).abs());
                max_abs = max_abs.max(grad[i][j].abs());
            }
        }
        worst = worst.max(max_diff / max_abs);
    }
    let t = start.elapsed();
    outcome(
        worst < 1e-5 && within(Duration::from_secs(5), t),
        format!("max relative error {worst:.2e} (< 1e-5), {t:.2?} (< 5s)"),
    )
}

// 2. single-head gated loss vs scalar BCE

fn bce_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s: f64 = rng.random_range(-20.0..20.0);
        let y = rng.random_bool(0.5);
        let p = Proposal::new("q", "p", y, vec![s], GateInput::Probabilities(vec![1.0])).unwrap();
        let got = gated_loss(&[p]).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let want = if y { -sig(s).ln() } else { -sig(-s).ln() };
        worst = worst.max((got - want).abs());
    }
    outcome(worst < 1e-12, format!("max |delta| {worst:.2e} over 1000 cases (< 1e-12)"))
}

// 3. lesion-centric merging vs a naive transcription

fn naive_merge(boxes: &[Box2D], theta: f64) -> Vec<Box3D> {
    let mut left: Vec<usize> = (0..boxes.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut seed = left[0];
        for &i in &left {
            if boxes[i].score > boxes[seed].score {
                seed = i;
            }
        }
        left.retain(|&i| i != seed);
        let b = &boxes[seed];
        let mut chain = vec![seed];
        for dir in [1i64, -1] {
            let mut z = b.slice_index + dir;
            loop {
                let mut pick: Option<usize> = None;
                for &i in &left {
                    let v = iou2d(b, &boxes[i]);
                    if boxes[i].slice_index != z || v <= theta {
                        continue;
                    }
                    let better = match pick {
                        None => true,
                        Some(j) => {
                            let w = iou2d(b, &boxes[j]);
                            v > w || (v == w && boxes[i].score > boxes[j].score)
                        }
                    };
                    if better {
                        pick = Some(i);
                    }
                }
                let Some(i) = pick else { break };
                left.retain(|&k| k != i);
                chain.push(i);
                z += dir;
            }
        }
        let m: Vec<&Box2D> = chain.iter().map(|&i| &boxes[i]).collect();
        out.push(Box3D {
            patient_id: b.patient_id.clone(),
            x1: m.iter().map(|v| v.x1).fold(f64::INFINITY, f64::min),
            y1: m.iter().map(|v| v.y1).fold(f64::INFINITY, f64::min),
            x2: m.iter().map(|v| v.x2).fold(f64::NEG_INFINITY, f64::max),
            y2: m.iter().map(|v| v.y2).fold(f64::NEG_INFINITY, f64::max),
            z1: m.iter().map(|v| v.slice_index).min().unwrap(),
            z2: m.iter().map(|v| v.slice_index).max().unwrap(),
            score: m.iter().map(|v| v.score).fold(0.0, f64::max),
        });
    }
    out
}

fn merging_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = Vec::new();
    let mut multi = 0;
    for case in 0..500 {
        let theta = [0.3, 0.5, 0.7][case % 3];
        let n = rng.random_range(1..=30);
        let slices = rng.random_range(1..=10);
        let centres: Vec<f64> = (0..rng.random_range(1..=3)).map(|k| k as f64 * 12.0).collect();
        let boxes: Vec<Box2D> = (0..n)
            .map(|_| {
                let cx = centres[rng.random_range(0..centres.len())];
                let x = cx + rng.random_range(-3..=3) as f64 * 0.5;
                let y = rng.random_range(-3..=3) as f64 * 0.5;
                let w = 8.0 + rng.random_range(0..=4) as f64 * 0.5;
                let score = rng.random_range(0..=50) as f64 / 50.0;
                Box2D::new("p", rng.random_range(0..slices), [x, y, x + w, y + w], score).unwrap()
            })
            .collect();
        let cfg = MergeConfig::new(theta, MergeMode::LesionCentric).unwrap();
        let got = merge_lesion_centric(&boxes, &cfg).unwrap();
        if got != naive_merge(&boxes, theta) {
            failures.push(format!("case {case}: oracle mismatch"));
            continue;
        }
        let groups = lesion_centric_groups(&boxes, &cfg).unwrap();
        let mut seen = vec![0; n];
        groups.iter().flatten().for_each(|&i| seen[i] += 1);
        if seen.iter().any(|&c| c != 1) {
            failures.push(format!("case {case}: not a partition"));
        }
        for (g, b) in groups.iter().zip(&got) {
            let max = g.iter().map(|&i| boxes[i].score).fold(0.0, f64::max);
            if b.score != max {
                failures.push(format!("case {case}: score law"));
            }
            multi += usize::from(g.len() > 1);
        }
    }
    let t = start.elapsed();
    outcome(
        failures.is_empty() && within(Duration::from_secs(10), t),
        format!(
            "500 instances, {multi} multi-slice chains, {} failures{}, {t:.2?} (< 10s)",
            failures.len(),
            failures.first().map(|f| format!(" [{f}]")).unwrap_or_default()
        ),
    )
}

// 4. the three-slice hand trace

fn merging_hand_trace() -> Outcome {
    let boxes = [
        Box2D::new("p", 2, [0.0, 0.0, 10.0, 9.0], 0.5).unwrap(),
        Box2D::new("p", 3, [0.0, 0.0, 10.0, 10.0], 0.9).unwrap(),
        Box2D::new("p", 4, [1.0, 0.0, 10.0, 10.0], 0.4).unwrap(),
    ];
    let ious = (iou2d(&boxes[1], &boxes[0]), iou2d(&boxes[1], &boxes[2]));
    let cfg = MergeConfig::new(0.7, MergeMode::LesionCentric).unwrap();
    let got = merge_lesion_centric(&boxes, &cfg).unwrap();
    let want = vec![Box3D::new("p", [0.0, 0.0, 10.0, 10.0], (2, 4), 0.9).unwrap()];
    outcome(
        got == want && (ious.0 - 0.9).abs() < 1e-12 && (ious.1 - 0.9).abs() < 1e-12,
        format!("neighbour IoUs {:.3}/{:.3}, output {:?}", ious.0, ious.1, got.iter().map(|b| (b.x1, b.y1, b.x2, b.y2, b.z1, b.z2, b.score)).collect::<Vec<_>>()),
    )
}

// 5 and 6. evaluation

fn cube(patient: &str, x: f64, z: i64, size: f64, score: f64) -> Box3D {
    Box3D::new(patient, [x, 0.0, x + size, size], (z, z + 2), score).unwrap()
}

fn lesion(id: &str, extent: Box3D, short: f64) -> GroundTruthLesion {
    GroundTruthLesion::new(id, extent, short, short + 5.0, "7").unwrap()
}

fn random_scene(rng: &mut ChaCha8Rng, max_preds: usize) -> (Vec<Box3D>, Vec<GroundTruthLesion>, usize) {
    let np = rng.random_range(1..=4);
    let mut gts = Vec::new();
    for p in 0..np {
        for j in 0..rng.random_range(1..=4) {
            let x = (j * 20) as f64;
            let size = rng.random_range(6..=12) as f64;
            let short = rng.random_range(3..=12) as f64;
            gts.push(lesion(&format!("{p}.{j}"), cube(&format!("P{p}"), x, rng.random_range(0..4), size, 0.0), short));
        }
    }
    let mut pool: Vec<u32> = (1..=999).collect();
    let preds = (0..rng.random_range(0..=max_preds))
        .map(|_| {
            let score = pool.swap_remove(rng.random_range(0..pool.len())) as f64 / 1000.0;
            if rng.random_bool(0.6) {
                let g = &gts[rng.random_range(0..gts.len())].extent;
                let dx = rng.random_range(-4..=4) as f64;
                cube(&g.patient_id, g.x1 + dx, g.z1 + rng.random_range(-1..=1), g.x2 - g.x1, score)
            } else {
                let p = format!("P{}", rng.random_range(0..np));
                cube(&p, rng.random_range(0..120) as f64, rng.random_range(0..6), 8.0, score)
            }
        })
        .collect();
    (preds, gts, np)
}

fn froc_hand_trace() -> Outcome {
    let gts = vec![
        lesion("A1", cube("A", 0.0, 0, 10.0, 0.0), 8.0),
        lesion("A2", cube("A", 50.0, 10, 10.0, 0.0), 12.0),
        lesion("B1", cube("B", 0.0, 5, 10.0, 0.0), 9.0),
    ];
    let preds = vec![
        cube("A", 0.0, 0, 10.0, 0.9),
        cube("A", 300.0, 0, 10.0, 0.8),
        cube("B", 1.0, 5, 10.0, 0.7),
        cube("B", 300.0, 5, 10.0, 0.6),
        cube("A", 2.0, 0, 10.0, 0.5),
        cube("A", 50.0, 10, 10.0, 0.4),
    ];
    let cfg = EvalConfig::default();
    let c = froc(&preds, &gts, 2, &cfg).unwrap();
    let (s05, s1) = (c.sensitivity_at(0.5), c.sensitivity_at(1.0));
    let trace_ok = s05 == 2.0 / 3.0 && s1 == 1.0;

    let small = [lesion("n", cube("A", 0.0, 0, 10.0, 0.0), 5.0)];
    let hit = [cube("A", 0.0, 0, 10.0, 0.9)];
    let m = match_detections(&hit, &small, &cfg).unwrap();
    let ignore_ok = m.verdicts == [Verdict::Ignored] && m.count(Verdict::FalsePositive) == 0;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sweep_ok = true;
    for _ in 0..100 {
        let (preds, gts, np) = random_scene(&mut rng, 50);
        let cfg = EvalConfig::default().with_min_short_axis(0.0).unwrap();
        let curve = froc(&preds, &gts, np, &cfg).unwrap();
        for pt in &curve.points {
            let kept: Vec<Box3D> = preds.iter().filter(|p| p.score >= pt.threshold).cloned().collect();
            let m = match_detections(&kept, &gts, &cfg).unwrap();
            sweep_ok &= pt.true_positives == m.num_detected()
                && pt.false_positives == m.count(Verdict::FalsePositive)
                && pt.sensitivity == m.num_detected() as f64 / gts.len() as f64;
        }
        sweep_ok &= curve.points.len() == preds.len();
    }
    outcome(
        trace_ok && ignore_ok && sweep_ok,
        format!(
            "sens_at(0.5)={s05:.6} sens_at(1)={s1:.6}; 5mm hit FPs={}; sweep = brute force on 100 scenes: {sweep_ok}",
            m.count(Verdict::FalsePositive)
        ),
    )
}

fn evaluation_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bad = Vec::new();
    for scene in 0..200 {
        let (preds, gts, np) = random_scene(&mut rng, 40);
        let cfg = EvalConfig::default().with_min_short_axis(0.0).unwrap();
        let m = match_detections(&preds, &gts, &cfg).unwrap();
        if m.count(Verdict::TruePositive) + m.count(Verdict::FalsePositive) + m.count(Verdict::Ignored)
            != preds.len()
            || m.num_detected() > m.num_eligible()
        {
            bad.push(format!("scene {scene}: conservation"));
        }
        let curve = froc(&preds, &gts, np, &cfg).unwrap();
        if curve.points.windows(2).any(|w| {
            w[1].sensitivity < w[0].sensitivity || w[1].fp_per_patient < w[0].fp_per_patient
        }) {
            bad.push(format!("scene {scene}: monotonicity"));
        }
        let k = rng.random_range(0.05..1.0);
        let scaled: Vec<Box3D> = preds.iter().map(|p| Box3D { score: p.score * k, ..p.clone() }).collect();
        let sc = froc(&scaled, &gts, np, &cfg).unwrap();
        let same_points = sc
            .points
            .iter()
            .zip(&curve.points)
            .all(|(a, b)| a.fp_per_patient == b.fp_per_patient && a.sensitivity == b.sensitivity);
        if sc.sens_at != curve.sens_at || sc.points.len() != curve.points.len() || !same_points {
            bad.push(format!("scene {scene}: scale invariance"));
        }
    }
    outcome(
        bad.is_empty(),
        format!("200 scenes, {} violations{}", bad.len(), bad.first().map(|b| format!(" [{b}]")).unwrap_or_default()),
    )
}

// 7, 8 and 9. synthetic study

fn mean_avg_sensitivity(noise: f64, modes: &[GateMode]) -> Vec<f64> {
    let mut sums = vec![0.0; modes.len()];
    for seed in 0..10 {
        let cfg = SynthConfig {
            seed,
            station_noise: noise,
            num_stations: 6,
            patients: 40,
            ..SynthConfig::default()
        };
        let r = run_study(&cfg, modes).unwrap();
        for (s, m) in sums.iter_mut().zip(modes) {
            *s += r.get(*m).unwrap().avg_sensitivity;
        }
    }
    sums.iter().map(|s| s / 10.0).collect()
}

fn stratification_gain() -> Outcome {
    let start = Instant::now();
    let m = mean_avg_sensitivity(0.1, &[GateMode::Pooled, GateMode::Soft]);
    let t = start.elapsed();
    let gain = m[1] - m[0];
    outcome(
        gain >= 0.05 && m[0] > 0.4 && m[0] < 0.8 && within(Duration::from_secs(120), t),
        format!(
            "pooled {:.3} (in (0.4, 0.8)), soft {:.3}, gain {gain:.3} (>= 0.05), {t:.2?} (< 2 min)",
            m[0], m[1]
        ),
    )
}

fn soft_vs_hard() -> Outcome {
    let m = mean_avg_sensitivity(0.2, &[GateMode::Hard, GateMode::Soft]);
    outcome(m[1] >= m[0], format!("hard {:.3}, soft {:.3} at noise 0.2", m[0], m[1]))
}

fn degenerate_equivalence() -> Outcome {
    let modes = [GateMode::Soft, GateMode::Hard, GateMode::Pooled, GateMode::UniformEnsemble];
    let cfg = SynthConfig {
        num_stations: 1,
        ..SynthConfig::default()
    };
    let r = run_study(&cfg, &modes).unwrap();
    let base = r.get(GateMode::Pooled).unwrap();
    let mut worst: f64 = 0.0;
    let mut curves_equal = true;
    for m in &r.modes {
        for (a, b) in m.scores.iter().zip(&base.scores) {
            worst = worst.max((a - b).abs());
        }
        curves_equal &= m.curve == base.curve;
    }
    outcome(
        worst < 1e-9 && curves_equal,
        format!("max score difference {worst:.2e} (< 1e-9), identical curves: {curves_equal}"),
    )
}

// 10. merge throughput

fn merge_throughput() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("boxes.jsonl");
    let output = dir.path().join("merged.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut text = String::new();
    for p in 0..50 {
        for _ in 0..200 {
            let cx = rng.random_range(0..8) as f64 * 40.0;
            let x = cx + rng.random_range(-1.0..1.0);
            let y = rng.random_range(-1.0..1.0);
            text += &format!(
                "{{\"patient\":\"case{p:03}\",\"slice\":{},\"x1\":{x:.3},\"y1\":{y:.3},\"x2\":{:.3},\"y2\":{:.3},\"score\":{:.4}}}\n",
                rng.random_range(0..60),
                x + 12.0,
                y + 12.0,
                rng.random_range(0.0..1.0)
            );
        }
    }
    fs::write(&input, text).unwrap();
    let args = MergeArgs {
        input,
        output: output.clone(),
        iou: 0.7,
        mode: MergeMode::LesionCentric,
    };
    let start = Instant::now();
    let n = cmd_merge(&args);
    let t = start.elapsed();
    let written = fs::read_to_string(&output).map(|s| s.lines().count()).unwrap_or(0);
    outcome(
        n.is_ok() && written > 0 && within(Duration::from_secs(1), t),
        format!("10000 boxes / 50 patients -> {written} 3D boxes in {t:.2?} (< 1s)"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradient_check),
        ("BCE reduction", bce_reduction),
        ("merging oracle", merging_oracle),
        ("hand-trace merging", merging_hand_trace),
        ("FROC hand-trace", froc_hand_trace),
        ("evaluation invariants", evaluation_invariants),
        ("stratification gain", stratification_gain),
        ("soft vs hard gating", soft_vs_hard),
        ("degenerate equivalence", degenerate_equivalence),
        ("merge throughput", merge_throughput),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} AC{:<2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
