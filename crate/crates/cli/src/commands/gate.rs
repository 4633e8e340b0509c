use std::path::Path;

use serde_json::{Map, Value};
use stratdet_core::gating::{
    gated_loss, multiclass_loss, probability_weighted_score, score, sigmoid, station_ce_loss, StationLoss,
};
use stratdet_core::{GateInput, GateMode, Proposal, StationGrouping};

use crate::args::GateArgs;
use crate::commands::{create, finish};
use crate::error::{CliError, Result};
use crate::records::{round_sig, write_jsonl, JsonLines, ProposalRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct GateSummary {
    /// `(id, score)` in output order.
    pub scores: Vec<(String, f64)>,
    pub detection_loss: Option<f64>,
    pub station_loss: Option<StationLoss>,
}

/// Resolves `--grouping`: an existing file, else a preset head count.
pub fn resolve_grouping(spec: Option<&str>, heads: Option<usize>) -> Result<Option<StationGrouping>> {
    match spec {
        Some(s) if Path::new(s).is_file() => {
            let path = Path::new(s);
            let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
            StationGrouping::parse(&text)
                .map(Some)
                .map_err(|e| CliError::Usage(format!("{s}: {e}")))
        }
        Some(s) => s
            .parse::<usize>()
            .ok()
            .and_then(StationGrouping::preset)
            .map(Some)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "--grouping `{s}` is neither a file nor a preset head count (1, 6, 14)"
                ))
            }),
        None => match heads {
            None => Ok(None),
            Some(c) => StationGrouping::preset(c).map(Some).ok_or_else(|| {
                CliError::Usage(format!(
                    "no preset grouping has {c} heads; pass --grouping with a station map file"
                ))
            }),
        },
    }
}

fn with_gate(p: &Proposal, gate: Vec<f64>, logits: Vec<f64>) -> stratdet_core::Result<Proposal> {
    Ok(
        Proposal::new(&p.id, &p.patient_id, p.label, logits, GateInput::Probabilities(gate))?
            .with_station(p.true_station, p.is_true_positive),
    )
}

/// Detection loss of the batch under `mode`'s training objective.
fn detection_loss(batch: &[Proposal], mode: GateMode, grouping: &StationGrouping) -> stratdet_core::Result<f64> {
    match mode {
        GateMode::Soft => gated_loss(batch),
        GateMode::Hard => gated_loss(&batch.iter().map(Proposal::hardened).collect::<Vec<_>>()),
        GateMode::Pooled => gated_loss(
            &batch
                .iter()
                .map(|p| with_gate(p, vec![1.0], p.head_logits.clone()))
                .collect::<stratdet_core::Result<Vec<_>>>()?,
        ),
        GateMode::UniformEnsemble => gated_loss(
            &batch
                .iter()
                .map(|p| {
                    let c = p.head_logits.len();
                    with_gate(p, vec![1.0 / c as f64; c], p.head_logits.clone())
                })
                .collect::<stratdet_core::Result<Vec<_>>>()?,
        ),
        GateMode::Multiclass => multiclass_loss(batch, grouping),
    }
}

pub fn cmd_gate(args: &GateArgs) -> Result<GateSummary> {
    let reader = JsonLines::<Map<String, Value>>::open(&args.proposals)?;
    let path = reader.path().to_path_buf();
    let mut rows = Vec::new();
    for r in reader {
        let r = r?;
        let rec: ProposalRecord = serde_json::from_value(Value::Object(r.value.clone()))
            .map_err(|e| CliError::record(&path, r.line, e))?;
        let p = rec
            .into_proposal()
            .map_err(|e| CliError::record(&path, r.line, e))?;
        rows.push((r.line, r.value, p));
    }

    let grouping = resolve_grouping(
        args.grouping.as_deref(),
        rows.first().map(|(_, _, p)| p.num_heads()),
    )?;
    let mut scored = Vec::with_capacity(rows.len());
    for (line, mut obj, p) in rows {
        let fail = |e: &dyn std::fmt::Display| CliError::record(&path, line, e);
        if let Some(g) = &grouping {
            if p.num_heads() != g.num_heads() {
                return Err(fail(&format!(
                    "gate has {} entries but the grouping has {} heads",
                    p.num_heads(),
                    g.num_heads()
                )));
            }
        }
        let s = if args.prob_weighted && args.mode == GateMode::Soft {
            probability_weighted_score(&p)
        } else {
            score(&p, args.mode)
        }
        .map_err(|e| fail(&e))?;
        let logit_scale = !matches!(args.mode, GateMode::Multiclass)
            && !(args.prob_weighted && args.mode == GateMode::Soft);
        let prob = if logit_scale { sigmoid(s) } else { s };
        obj.insert("score".into(), Value::from(round_sig(s)));
        obj.insert("probability".into(), Value::from(round_sig(prob)));
        scored.push((p, obj, s));
    }
    scored.sort_by(|a, b| {
        a.0.patient_id
            .cmp(&b.0.patient_id)
            .then(b.2.total_cmp(&a.2))
    });

    let mut summary = GateSummary {
        scores: scored.iter().map(|(p, _, s)| (p.id.clone(), *s)).collect(),
        detection_loss: None,
        station_loss: None,
    };
    if args.report_loss && !scored.is_empty() {
        let batch: Vec<Proposal> = scored.iter().map(|(p, _, _)| p.clone()).collect();
        let g = grouping.as_ref().expect("a non-empty batch always resolves a grouping");
        let loss = detection_loss(&batch, args.mode, g)?;
        let name = if args.mode == GateMode::Multiclass { "multiclass_loss" } else { "gated_loss" };
        println!("{name} {}", round_sig(loss));
        let st = station_ce_loss(&batch, g)?;
        if st.no_true_positives() {
            println!("station_ce_loss 0 (no true-positive proposals)");
        } else {
            println!("station_ce_loss {} (over {} true-positive proposals)", round_sig(st.value), st.true_positives);
        }
        summary.detection_loss = Some(loss);
        summary.station_loss = Some(st);
    }

    let mut w = create(&args.out)?;
    write_jsonl(&mut w, scored.iter().map(|(_, obj, _)| obj)).map_err(CliError::io(&args.out))?;
    finish(w, &args.out)?;
    Ok(summary)
}
