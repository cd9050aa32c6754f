//! Report files written after an experiment.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::ExperimentReport;
use crate::data::TimeSeriesFrame;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Writes `scores.csv`, `importance.csv` (when variables were selected) and
/// `powercurve.csv` (power targets) for [`ReportFormat::Csv`], and
/// `aggregates.json` plus the full `report.json` for [`ReportFormat::Json`].
/// Returns the written paths. Fails before touching the directory if the
/// report scores no predictor.
pub fn emit_report(report: &ExperimentReport, out_dir: impl AsRef<Path>, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    if report.scores.predictors().is_empty() {
        return Err(Error::Empty("report has no predictors".into()));
    }
    if formats.is_empty() {
        return Err(Error::invalid("no output format requested"));
    }
    let aggregates = if formats.contains(&ReportFormat::Json) {
        Some(report.scores.aggregates()?)
    } else {
        None
    };
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    if formats.contains(&ReportFormat::Csv) {
        let path = dir.join("scores.csv");
        let mut w = create(&path)?;
        report.scores.write_csv(&mut w)?;
        finish(&path, w)?;
        written.push(path);

        if !report.lasso_importance.is_empty() || !report.hsic_selection.is_empty() {
            let path = dir.join("importance.csv");
            let mut w = create(&path)?;
            write_importance_csv(report, &mut w)?;
            finish(&path, w)?;
            written.push(path);
        }

        if !report.power_curves.is_empty() {
            let path = dir.join("powercurve.csv");
            let mut w = create(&path)?;
            let mut csv = csv::Writer::from_writer(&mut w);
            csv.write_record(["split", "speed", "power"])?;
            for (s, curve) in &report.power_curves {
                for (speed, power) in curve.grid(0.1)? {
                    csv.write_record([s.to_string(), format!("{speed:.1}"), power.to_string()])?;
                }
            }
            csv.flush().map_err(|e| Error::io(&path, e))?;
            drop(csv);
            finish(&path, w)?;
            written.push(path);
        }
    }

    if let Some(agg) = aggregates {
        let path = dir.join("aggregates.json");
        write_json(&path, &agg)?;
        written.push(path);
        let path = dir.join("report.json");
        write_json(&path, report)?;
        written.push(path);
    }
    Ok(written)
}

/// `method,target,split,variable,horizon_minutes,round,hsic,score`; LASSO rows
/// are averaged over splits and leave `split` empty, elimination rows leave
/// `horizon_minutes` empty and survivors leave `round` empty.
pub fn write_importance_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "target", "split", "variable", "horizon_minutes", "round", "hsic", "score"])?;
    for (target, table) in &report.lasso_importance {
        for row in &table.rows {
            w.write_record([
                "lasso".to_string(),
                target.clone(),
                String::new(),
                row.variable.clone(),
                (row.horizon * table.step_minutes).to_string(),
                String::new(),
                String::new(),
                row.score.to_string(),
            ])?;
        }
    }
    for sel in &report.hsic_selection {
        for (r, round) in sel.trace.rounds.iter().enumerate() {
            for v in &round.eliminated {
                w.write_record([
                    "bahsic".to_string(),
                    sel.target.clone(),
                    sel.split.to_string(),
                    v.clone(),
                    String::new(),
                    (r + 1).to_string(),
                    round.hsic_after.to_string(),
                    String::new(),
                ])?;
            }
        }
        for v in &sel.trace.survivors {
            let score = sel.scores.iter().find(|s| &s.variable == v);
            w.write_record([
                "bahsic".to_string(),
                sel.target.clone(),
                sel.split.to_string(),
                v.clone(),
                String::new(),
                String::new(),
                score.map(|s| s.hsic_without.to_string()).unwrap_or_default(),
                score.map(|s| s.score.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Writes a frame in the layout read by [`crate::data::ingest_csv`]; missing
/// values are empty fields.
pub fn write_frame_csv<W: Write>(frame: &TimeSeriesFrame, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend(frame.channel_names().into_iter().map(String::from));
    w.write_record(&header)?;
    for i in 0..frame.len() {
        let mut rec = vec![frame.timestamp(i).format("%Y-%m-%dT%H:%M:%S").to_string()];
        rec.extend(
            frame
                .channels()
                .iter()
                .map(|c| c.values[i].map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ingest_csv, ChannelDecl};
    use crate::evaluation::ScoreReport;
    use crate::pipeline::{synth_generate, SyntheticFarmSpec};

    fn report(predictors: usize, horizons: usize) -> ExperimentReport {
        let mut scores = ScoreReport::new("ws", 5.0, 10, vec![]);
        for p in 0..predictors {
            for h in 1..=horizons {
                scores.push(format!("p{p}"), 0, h, 0.1 * (p + h) as f64);
            }
        }
        ExperimentReport {
            scores,
            splits: vec![],
            fits: vec![],
            lasso_importance: vec![],
            hsic_selection: vec![],
            power_curves: vec![],
        }
    }

    #[test]
    fn empty_report_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert!(emit_report(&report(0, 0), &out, &[ReportFormat::Csv]).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn row_count_and_byte_stability() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(2, 24);
        let files = emit_report(&r, dir.path(), &[ReportFormat::Csv, ReportFormat::Json]).unwrap();
        let scores = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
        assert_eq!(scores.lines().count(), 49);
        let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        emit_report(&r, dir.path(), &[ReportFormat::Csv, ReportFormat::Json]).unwrap();
        let second: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        assert_eq!(first, second);
        let back: ExperimentReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn frame_csv_round_trip() {
        let spec = SyntheticFarmSpec { n: 50, ..SyntheticFarmSpec::default() };
        let frame = synth_generate(&spec, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("farm.csv");
        write_frame_csv(&frame, File::create(&path).unwrap()).unwrap();
        let schema: Vec<ChannelDecl> = frame
            .channels()
            .iter()
            .map(|c| ChannelDecl { name: c.name.clone(), role: c.role, unit: c.unit.clone() })
            .collect();
        assert_eq!(ingest_csv(&path, &schema).unwrap(), frame);
    }
}
