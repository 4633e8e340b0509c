use std::io::Write;

use stratdet_core::synthstudy::TrainConfig;
use stratdet_core::{run_study, StudyReport, SynthConfig};

use crate::args::SynthArgs;
use crate::commands::eval::write_froc_csv;
use crate::commands::{create, finish};
use crate::error::{CliError, Result};
use crate::records::fmt_num;

pub fn synth_config(args: &SynthArgs) -> SynthConfig {
    SynthConfig {
        num_stations: args.stations,
        feature_dim: args.dim,
        patients: args.patients,
        seed: args.seed,
        station_noise: args.noise,
        margin: args.margin,
        proposals_per_station: args.per_station,
        train: TrainConfig {
            epochs: args.epochs,
            step_size: args.step,
        },
        ..SynthConfig::default()
    }
}

/// Writes `summary.csv`, `summary.txt` and one `froc_<mode>.csv` per mode
/// into the output directory.
pub fn cmd_synth(args: &SynthArgs) -> Result<StudyReport> {
    if args.modes.0.is_empty() {
        return Err(CliError::Usage("--modes is empty".into()));
    }
    let cfg = synth_config(args);
    let report = run_study(&cfg, &args.modes.0)?;

    std::fs::create_dir_all(&args.out).map_err(CliError::io(&args.out))?;
    let csv_path = args.out.join("summary.csv");
    let mut w = create(&csv_path)?;
    w.write_all(summary_csv(&report).as_bytes())
        .map_err(CliError::io(&csv_path))?;
    finish(w, &csv_path)?;

    let table = summary_table(&report);
    let txt_path = args.out.join("summary.txt");
    let mut w = create(&txt_path)?;
    w.write_all(table.as_bytes()).map_err(CliError::io(&txt_path))?;
    finish(w, &txt_path)?;

    for m in &report.modes {
        write_froc_csv(&args.out.join(format!("froc_{}.csv", m.mode)), &m.curve)?;
    }
    print!("{table}");
    Ok(report)
}

pub fn summary_csv(report: &StudyReport) -> String {
    let fps: Vec<f64> = report.modes[0].curve.sens_at.iter().map(|(f, _)| *f).collect();
    let mut s = String::from("mode");
    for f in &fps {
        s += &format!(",sens_at_{}", fmt_num(*f));
    }
    s += ",avg_sensitivity,accuracy,initial_loss,final_loss,epochs\n";
    for m in &report.modes {
        s += m.mode.name();
        for (_, v) in &m.curve.sens_at {
            s += &format!(",{}", fmt_num(*v));
        }
        s += &format!(
            ",{},{},{},{},{}\n",
            fmt_num(m.avg_sensitivity),
            fmt_num(m.accuracy),
            fmt_num(m.initial_loss),
            fmt_num(m.final_loss),
            m.epochs
        );
    }
    s
}

/// Sensitivity (%) at each FP rate and their average, one row per strategy.
pub fn summary_table(report: &StudyReport) -> String {
    let c = &report.config;
    let fps: Vec<f64> = report.modes[0].curve.sens_at.iter().map(|(f, _)| *f).collect();
    let mut s = format!(
        "stations={} dim={} patients={} (train {}, test {}) noise={} margin={} seed={}\n",
        c.num_stations,
        c.feature_dim,
        c.patients,
        report.train_patients,
        report.test_patients,
        fmt_num(c.station_noise),
        fmt_num(c.margin),
        c.seed
    );
    s += &format!("{:<18}", "strategy");
    for f in &fps {
        s += &format!("{:>8}", format!("@{}", fmt_num(*f)));
    }
    s += &format!("{:>8}{:>10}{:>12}\n", "avg", "accuracy", "final_loss");
    for (i, m) in report.modes.iter().enumerate() {
        let label = format!("({}) {}", (b'a' + i as u8) as char, m.mode);
        s += &format!("{label:<18}");
        for (_, v) in &m.curve.sens_at {
            s += &format!("{:>8.1}", 100.0 * v);
        }
        s += &format!(
            "{:>8.1}{:>10.3}{:>12.4}\n",
            100.0 * m.avg_sensitivity,
            m.accuracy,
            m.final_loss
        );
    }
    s
}
