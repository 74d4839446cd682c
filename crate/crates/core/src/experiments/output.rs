use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{run_experiment_on, CellReport, ExperimentKind, ExperimentReport, ExperimentSpec};
use crate::dataset::FeatureDataset;
use crate::error::Result;
use crate::stability::series_csv;

#[derive(Serialize)]
struct ReportFile<'a> {
    name: ExperimentKind,
    master_seed: u64,
    ensemble_size: usize,
    complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    cells: &'a [CellReport],
}

/// Writes one cell's artifacts under `dir`:
/// `deviation_<s>.csv`, `series_<s>_<m>.csv` per member and
/// `models/cell<s>_member<m>.pvc`.
pub fn write_cell(dir: &Path, cell: &CellReport) -> Result<()> {
    let s = cell.sweep_index;
    fs::create_dir_all(dir.join("models"))?;
    fs::write(dir.join(format!("deviation_{s}.csv")), series_csv(&cell.series))?;
    for (m, member) in cell.members.iter().enumerate() {
        fs::write(dir.join(format!("series_{s}_{m}.csv")), member.trace.to_csv())?;
    }
    for (m, model) in cell.final_models.iter().enumerate() {
        model.save(&dir.join("models").join(format!("cell{s}_member{m}.pvc")))?;
    }
    Ok(())
}

fn write_report(dir: &Path, spec: &ExperimentSpec, cells: &[CellReport], error: Option<String>) -> Result<()> {
    let file = ReportFile {
        name: spec.name,
        master_seed: spec.master_seed,
        ensemble_size: spec.ensemble_size,
        complete: error.is_none(),
        error,
        cells,
    };
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Runs `spec` and writes every artifact under `dir`. Cells are flushed as
/// they finish; if a later cell fails, `report.json` still lists the
/// completed cells together with the error before it is returned.
pub fn run_experiment_to_dir(
    spec: &ExperimentSpec,
    train: &FeatureDataset,
    test: Option<&FeatureDataset>,
    workers: usize,
    dir: &Path,
) -> Result<ExperimentReport> {
    fs::create_dir_all(dir)?;
    let mut done: Vec<CellReport> = Vec::new();
    let outcome = run_experiment_on(spec, train, test, workers, |cell| {
        write_cell(dir, cell)?;
        let mut light = cell.clone();
        light.members.clear();
        light.final_models.clear();
        done.push(light);
        write_report(dir, spec, &done, Some("in progress".into()))
    });
    match outcome {
        Ok(report) => {
            write_report(dir, spec, &report.cells, None)?;
            Ok(report)
        }
        Err(e) => {
            write_report(dir, spec, &done, Some(e.to_string()))?;
            Err(e)
        }
    }
}
