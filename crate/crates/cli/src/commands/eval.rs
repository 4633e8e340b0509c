use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use stratdet_core::evaluation::froc_from_verdicts;
use stratdet_core::{
    match_detections, Box3D, EvalConfig, FrocCurve, GroundTruthLesion, ScoredVerdict,
};

use crate::args::EvalArgs;
use crate::commands::{create, finish};
use crate::error::{CliError, Result};
use crate::plot::froc_svg;
use crate::records::{fmt_num, read_all, GtRecord, JsonLines, PatientRuns};

pub struct EvalSummary {
    pub curve: FrocCurve,
    /// Per requested size band; `None` where no lesion is large enough.
    pub bands: Vec<(f64, Option<FrocCurve>)>,
}

/// Streams predictions patient by patient, matching each run against that
/// patient's lesions under the main configuration and every size band.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalSummary> {
    let cfg = EvalConfig::new(args.iobb, args.min_short_axis, args.fp_points.0.clone())?;
    let band_values: Vec<f64> = args.size_bands.as_ref().map(|b| b.0.clone()).unwrap_or_default();
    let mut configs = vec![cfg.clone()];
    for &b in &band_values {
        configs.push(cfg.with_min_short_axis(b)?);
    }

    let gts = read_all(&args.gt, GtRecord::into_lesion)?;
    let mut by_patient: HashMap<&str, Vec<GroundTruthLesion>> = HashMap::new();
    for g in &gts {
        by_patient.entry(g.patient_id()).or_default().push(g.clone());
    }
    let mut patients: BTreeSet<String> = by_patient.keys().map(|p| p.to_string()).collect();

    let mut scored: Vec<Vec<ScoredVerdict>> = vec![Vec::new(); configs.len()];
    let reader = JsonLines::<Box3D>::open(&args.pred)?;
    let path = reader.path().to_path_buf();
    for run in PatientRuns::new(reader, &path, |b: &Box3D| &b.patient_id) {
        let (patient, records) = run?;
        let mut preds = Vec::with_capacity(records.len());
        for r in records {
            r.value
                .validate()
                .map_err(|e| CliError::record(&path, r.line, e))?;
            preds.push(r.value);
        }
        let lesions = by_patient.get(patient.as_str()).map_or(&[][..], Vec::as_slice);
        for (c, out) in configs.iter().zip(&mut scored) {
            let m = match_detections(&preds, lesions, c)?;
            out.extend(preds.iter().zip(&m.verdicts).map(|(p, &verdict)| ScoredVerdict {
                score: p.score,
                verdict,
            }));
        }
        patients.insert(patient);
    }

    let num_patients = match args.num_patients {
        Some(0) => return Err(CliError::Usage("--num-patients must be at least 1".into())),
        Some(n) if n < patients.len() => {
            return Err(stratdet_core::Error::TooManyPatients {
                declared: n,
                found: patients.len(),
            }
            .into())
        }
        Some(n) => n,
        None => patients.len().max(1),
    };

    let curve_for = |c: &EvalConfig, s: &[ScoredVerdict]| {
        let eligible = gts.iter().filter(|g| c.is_eligible(g)).count();
        froc_from_verdicts(s, eligible, num_patients, c.fp_points())
    };
    let curve = curve_for(&configs[0], &scored[0]).map_err(|e| match e {
        stratdet_core::Error::NoEligibleLesions => CliError::Domain(format!(
            "no lesion has a short axis of at least {} mm; sensitivity is undefined",
            cfg.min_short_axis_mm()
        )),
        other => other.into(),
    })?;
    let mut bands = Vec::new();
    for ((&b, c), s) in band_values.iter().zip(&configs[1..]).zip(&scored[1..]) {
        let band = match curve_for(c, s) {
            Ok(curve) => Some(curve),
            Err(stratdet_core::Error::NoEligibleLesions) => None,
            Err(e) => return Err(e.into()),
        };
        bands.push((b, band));
    }

    write_froc_csv(&args.out, &curve)?;
    if let Some(plot) = &args.plot {
        let mut w = create(plot)?;
        w.write_all(froc_svg(&curve).as_bytes()).map_err(CliError::io(plot))?;
        finish(w, plot)?;
    }
    if !bands.is_empty() {
        write_bands_csv(&bands_path(&args.out), cfg.fp_points(), &bands)?;
    }
    print!("{}", summary_table(&curve, &bands, cfg.fp_points()));
    Ok(EvalSummary { curve, bands })
}

/// `froc.csv` -> `froc_bands.csv`, next to the main output.
pub fn bands_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("froc");
    out.with_file_name(format!("{stem}_bands.csv"))
}

pub fn froc_csv(curve: &FrocCurve) -> String {
    let mut s = String::from("threshold,fp_per_patient,sensitivity\n");
    for p in &curve.points {
        s += &format!(
            "{},{},{}\n",
            fmt_num(p.threshold),
            fmt_num(p.fp_per_patient),
            fmt_num(p.sensitivity)
        );
    }
    for &(f, v) in &curve.sens_at {
        s += &format!("sens_at,{},{}\n", fmt_num(f), fmt_num(v));
    }
    s += &format!("avg_sensitivity,,{}\n", fmt_num(curve.avg_sensitivity));
    s
}

pub(crate) fn write_froc_csv(path: &Path, curve: &FrocCurve) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(froc_csv(curve).as_bytes()).map_err(CliError::io(path))?;
    finish(w, path)
}

fn write_bands_csv(path: &Path, fp_points: &[f64], bands: &[(f64, Option<FrocCurve>)]) -> Result<()> {
    let mut s = String::from("min_short_axis_mm,num_eligible");
    for f in fp_points {
        s += &format!(",sens_at_{}", fmt_num(*f));
    }
    s += ",avg_sensitivity\n";
    for (b, curve) in bands {
        s += &fmt_num(*b);
        match curve {
            Some(c) => {
                s += &format!(",{}", c.num_eligible);
                for (_, v) in &c.sens_at {
                    s += &format!(",{}", fmt_num(*v));
                }
                s += &format!(",{}\n", fmt_num(c.avg_sensitivity));
            }
            None => {
                s += ",0";
                s += &",".repeat(fp_points.len() + 1);
                s += "\n";
            }
        }
    }
    let mut w = create(path)?;
    w.write_all(s.as_bytes()).map_err(CliError::io(path))?;
    finish(w, path)
}

fn summary_table(curve: &FrocCurve, bands: &[(f64, Option<FrocCurve>)], fp_points: &[f64]) -> String {
    let mut s = format!(
        "{} eligible lesions, {} patients\n{:<14}{:>12}\n",
        curve.num_eligible, curve.num_patients, "FPs/patient", "sensitivity"
    );
    for &(f, v) in &curve.sens_at {
        s += &format!("{:<14}{:>12.4}\n", fmt_num(f), v);
    }
    s += &format!("{:<14}{:>12.4}\n", "average", curve.avg_sensitivity);
    if !bands.is_empty() {
        s += &format!("\n{:<10}{:>6}", "short>=mm", "n");
        for f in fp_points {
            s += &format!("{:>9}", fmt_num(*f));
        }
        s += &format!("{:>9}\n", "avg");
        for (b, c) in bands {
            s += &format!("{:<10}", fmt_num(*b));
            match c {
                Some(c) => {
                    s += &format!("{:>6}", c.num_eligible);
                    for (_, v) in &c.sens_at {
                        s += &format!("{v:>9.4}");
                    }
                    s += &format!("{:>9.4}\n", c.avg_sensitivity);
                }
                None => s += &format!("{:>6}  (no lesions)\n", 0),
            }
        }
    }
    s
}
