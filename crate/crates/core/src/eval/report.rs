use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::ResultsTable;
use crate::error::{Error, Result};

/// One line of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub scenario: String,
    pub shots: usize,
    pub predictions: usize,
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
}

/// Collects every run summary (`*.json` other than timing and training files) found directly
/// in `dirs`, sorted by scenario, shots and model.
pub fn collect_summaries(dirs: &[&Path]) -> Result<Vec<ResultsTable>> {
    let mut tables = Vec::new();
    for dir in dirs {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name.ends_with(".json") && !name.ends_with(".timing.json") && !name.ends_with(".train.json")
            })
            .collect();
        paths.sort();
        for p in paths {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            // Other JSON files may live alongside; only run summaries parse.
            if let Ok(t) = serde_json::from_str::<ResultsTable>(&text) {
                tables.push(t);
            }
        }
    }
    tables.sort_by(|a, b| (&a.scenario, a.shots, a.model).cmp(&(&b.scenario, b.shots, b.model)));
    Ok(tables)
}

pub fn report_rows(tables: &[ResultsTable]) -> Vec<ReportRow> {
    tables
        .iter()
        .map(|t| ReportRow {
            model: t.model.to_string(),
            scenario: t.scenario.clone(),
            shots: t.shots,
            predictions: t.predictions,
            acc: t.mean.acc,
            pre: t.mean.pre,
            rec: t.mean.rec,
            f1: t.mean.f1,
        })
        .collect()
}

/// Fixed-width text rendering of the comparison table.
pub fn render_report(rows: &[ReportRow]) -> String {
    let mut s = format!(
        "{:<12} {:<9} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
        "model", "scenario", "shots", "n", "acc", "pre", "rec", "f1"
    );
    for r in rows {
        s += &format!(
            "{:<12} {:<9} {:>5} {:>7} {:>7.4} {:>7.4} {:>7.4} {:>7.4}\n",
            r.model, r.scenario, r.shots, r.predictions, r.acc, r.pre, r.rec, r.f1
        );
    }
    s
}

pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
