use std::collections::BTreeMap;

use stratdet_core::{merge, Box2D, Box3D, MergeConfig};

use crate::args::MergeArgs;
use crate::commands::{create, finish};
use crate::error::{CliError, Result};
use crate::records::{box3d_out, write_jsonl, JsonLines, PatientRuns};

/// Merges each patient's run of boxes as soon as it has been read. Only the
/// (much smaller) 3D output is kept until the end, so it can be written
/// sorted by patient.
pub fn cmd_merge(args: &MergeArgs) -> Result<usize> {
    let cfg = MergeConfig::new(args.iou, args.mode)?;
    let reader = JsonLines::<Box2D>::open(&args.input)?;
    let path = reader.path().to_path_buf();
    let mut merged: BTreeMap<String, Vec<Box3D>> = BTreeMap::new();
    for run in PatientRuns::new(reader, &path, |b: &Box2D| &b.patient_id) {
        let (patient, records) = run?;
        let mut boxes = Vec::with_capacity(records.len());
        for r in records {
            r.value
                .validate()
                .map_err(|e| CliError::record(&path, r.line, e))?;
            boxes.push(r.value);
        }
        let mut out = merge(&boxes, &cfg)?;
        out.sort_by(|a, b| b.score.total_cmp(&a.score));
        merged.insert(patient, out);
    }

    let mut w = create(&args.output)?;
    let count = merged.values().map(Vec::len).sum();
    write_jsonl(&mut w, merged.values().flatten().map(box3d_out))
        .map_err(CliError::io(&args.output))?;
    finish(w, &args.output)?;
    Ok(count)
}
