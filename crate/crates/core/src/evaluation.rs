//! Baselines, normalized errors, skill scores and cross-horizon rankings.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesFrame;
use crate::error::{Error, Result};
use crate::power_curve::{apply_power_curve, PowerCurve};

/// Predicts the value observed at the anchor for every horizon.
pub fn persistence_forecast(series: &[Option<f64>], anchors: &[usize], horizon: usize) -> Result<Vec<f64>> {
    anchors
        .iter()
        .map(|&t| {
            if t + horizon >= series.len() {
                return Err(Error::invalid(format!(
                    "anchor {t} plus horizon {horizon} is beyond a series of length {}",
                    series.len()
                )));
            }
            series[t].ok_or_else(|| Error::invalid(format!("no observation at anchor {t}")))
        })
        .collect()
}

/// Reads the forecast channel at the target time, optionally mapped through a
/// power curve.
pub fn nwp_forecast(
    frame: &TimeSeriesFrame,
    channel: &str,
    anchors: &[usize],
    horizon: usize,
    curve: Option<&PowerCurve>,
) -> Result<Vec<f64>> {
    let values = &frame.channel(channel)?.values;
    let speeds = anchors
        .iter()
        .map(|&t| {
            values
                .get(t + horizon)
                .copied()
                .flatten()
                .ok_or_else(|| Error::invalid(format!("no {channel} value at index {}", t + horizon)))
        })
        .collect::<Result<Vec<f64>>>()?;
    match curve {
        Some(c) => apply_power_curve(c, &speeds),
        None => Ok(speeds),
    }
}

pub fn nrmse(y_hat: &[f64], y: &[f64], z_bar: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("nrmse inputs".into()));
    }
    if y_hat.len() != y.len() {
        return Err(Error::dims(format!("{} predictions vs {} targets", y_hat.len(), y.len())));
    }
    if z_bar == 0.0 || !z_bar.is_finite() {
        return Err(Error::invalid(format!("normalizer must be finite and nonzero, got {z_bar}")));
    }
    let mse = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    let out = mse.sqrt() / z_bar;
    if !out.is_finite() {
        return Err(Error::NonFinite("nrmse"));
    }
    Ok(out)
}

/// Relative improvement over the best baseline; positive means skill.
pub fn delta_nrmse(score: f64, baseline_scores: &[f64]) -> Result<f64> {
    if baseline_scores.is_empty() {
        return Err(Error::Empty("baseline scores".into()));
    }
    if let Some(b) = baseline_scores.iter().find(|&&b| !(b > 0.0)) {
        return Err(Error::invalid(format!("baseline score must be positive, got {b}")));
    }
    let best = baseline_scores.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((best - score) / best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub predictor: String,
    pub split: usize,
    /// Steps ahead, counted in `step_minutes`.
    pub horizon: usize,
    pub nrmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub target: String,
    pub z_bar: f64,
    pub step_minutes: u32,
    /// Predictors that define skill; the minimum over them is the reference.
    pub baselines: Vec<String>,
    pub entries: Vec<ScoreEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonDelta {
    pub horizon_minutes: u64,
    pub delta_nrmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorAggregate {
    pub predictor: String,
    pub mean_nrmse: Vec<f64>,
    pub delta_nrmse: Vec<HorizonDelta>,
    pub degradation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateDocument {
    pub target: String,
    pub z_bar: f64,
    pub step_minutes: u32,
    pub baselines: Vec<String>,
    pub horizons: Vec<usize>,
    pub splits: Vec<usize>,
    pub predictors: Vec<PredictorAggregate>,
    /// Rank by degradation (1 = best, ties share the mean rank).
    pub ranks: Vec<(String, f64)>,
}

impl ScoreReport {
    pub fn new(target: impl Into<String>, z_bar: f64, step_minutes: u32, baselines: Vec<String>) -> Self {
        Self {
            target: target.into(),
            z_bar,
            step_minutes,
            baselines,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, predictor: impl Into<String>, split: usize, horizon: usize, nrmse: f64) {
        self.entries.push(ScoreEntry {
            predictor: predictor.into(),
            split,
            horizon,
            nrmse,
        });
    }

    /// Predictors in first-appearance order.
    pub fn predictors(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.predictor) {
                out.push(e.predictor.clone());
            }
        }
        out
    }

    pub fn splits(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.split).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn horizons(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.horizon).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn get(&self, predictor: &str, split: usize, horizon: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.predictor == predictor && e.split == split && e.horizon == horizon)
            .map(|e| e.nrmse)
    }

    fn cell(&self, predictor: &str, split: usize, horizon: usize) -> Result<f64> {
        self.get(predictor, split, horizon).ok_or_else(|| {
            Error::invalid(format!("no score for {predictor} at split {split}, horizon {horizon}"))
        })
    }

    /// Mean NRMSE over splits at one horizon.
    pub fn mean_nrmse(&self, predictor: &str, horizon: usize) -> Result<f64> {
        let splits = self.splits();
        if splits.is_empty() {
            return Err(Error::Empty("score report".into()));
        }
        let total = splits
            .iter()
            .map(|&s| self.cell(predictor, s, horizon))
            .sum::<Result<f64>>()?;
        Ok(total / splits.len() as f64)
    }

    /// Skill per horizon, computed on split-averaged NRMSE.
    pub fn delta_curve(&self, predictor: &str) -> Result<Vec<HorizonDelta>> {
        if self.baselines.is_empty() {
            return Err(Error::Empty("report declares no baselines".into()));
        }
        self.horizons()
            .into_iter()
            .map(|h| {
                let base = self
                    .baselines
                    .iter()
                    .map(|b| self.mean_nrmse(b, h))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(HorizonDelta {
                    horizon_minutes: h as u64 * self.step_minutes as u64,
                    delta_nrmse: delta_nrmse(self.mean_nrmse(predictor, h)?, &base)?,
                })
            })
            .collect()
    }

    pub fn aggregates(&self) -> Result<AggregateDocument> {
        let horizons = self.horizons();
        let predictors = self
            .predictors()
            .into_iter()
            .map(|p| {
                Ok(PredictorAggregate {
                    mean_nrmse: horizons.iter().map(|&h| self.mean_nrmse(&p, h)).collect::<Result<_>>()?,
                    delta_nrmse: if self.baselines.is_empty() { Vec::new() } else { self.delta_curve(&p)? },
                    degradation: nrmse_degradation(self, &p)?,
                    predictor: p,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AggregateDocument {
            target: self.target.clone(),
            z_bar: self.z_bar,
            step_minutes: self.step_minutes,
            baselines: self.baselines.clone(),
            horizons,
            splits: self.splits(),
            predictors,
            ranks: average_rank(std::slice::from_ref(self))?,
        })
    }

    /// Long format `predictor,split,horizon_minutes,nrmse`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["predictor", "split", "horizon_minutes", "nrmse"])?;
        for e in &self.entries {
            w.write_record([
                e.predictor.clone(),
                e.split.to_string(),
                (e.horizon as u64 * self.step_minutes as u64).to_string(),
                e.nrmse.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Mean excess NRMSE of `predictor` over the cell-wise best predictor in the
/// report, across every split and horizon.
pub fn nrmse_degradation(report: &ScoreReport, predictor: &str) -> Result<f64> {
    let predictors = report.predictors();
    if !predictors.iter().any(|p| p == predictor) {
        return Err(Error::invalid(format!("predictor {predictor:?} is not in the report")));
    }
    let (splits, horizons) = (report.splits(), report.horizons());
    let mut total = 0.0;
    for &s in &splits {
        for &h in &horizons {
            let mut best = f64::INFINITY;
            for p in &predictors {
                best = best.min(report.cell(p, s, h)?);
            }
            total += report.cell(predictor, s, h)? - best;
        }
    }
    Ok(total / (splits.len() * horizons.len()) as f64)
}

/// Mean over reports of each predictor's degradation rank. Every report must
/// contain the same predictors.
pub fn average_rank(reports: &[ScoreReport]) -> Result<Vec<(String, f64)>> {
    let first = reports.first().ok_or_else(|| Error::Empty("no reports to rank".into()))?;
    let names = first.predictors();
    let mut sums = vec![0.0; names.len()];
    for r in reports {
        let mut theirs = r.predictors();
        theirs.sort();
        let mut ours = names.clone();
        ours.sort();
        if theirs != ours {
            return Err(Error::invalid("reports rank different predictor sets"));
        }
        let deg = names
            .iter()
            .map(|p| nrmse_degradation(r, p))
            .collect::<Result<Vec<f64>>>()?;
        for (i, d) in deg.iter().enumerate() {
            let below = deg.iter().filter(|&&o| o < *d).count();
            let equal = deg.iter().filter(|&&o| o == *d).count();
            sums[i] += below as f64 + (equal as f64 + 1.0) / 2.0;
        }
    }
    Ok(names
        .into_iter()
        .zip(sums)
        .map(|(n, s)| (n, s / reports.len() as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Channel, ChannelRole};
    use chrono::{NaiveDate, TimeDelta};
    use proptest::prelude::*;

    fn two_by_two() -> ScoreReport {
        let mut r = ScoreReport::new("ws", 1.0, 10, vec![]);
        r.push("A", 0, 1, 0.1);
        r.push("A", 0, 2, 0.2);
        r.push("B", 0, 1, 0.2);
        r.push("B", 0, 2, 0.1);
        r
    }

    #[test]
    fn persistence() {
        let s = [Some(1.0), Some(2.0), Some(3.0), Some(4.0)];
        assert_eq!(persistence_forecast(&s, &[2], 1).unwrap(), vec![3.0]);
        assert!(persistence_forecast(&s, &[2], 2).is_err());
        assert!(persistence_forecast(&[None, Some(1.0)], &[0], 1).is_err());
    }

    fn frame(nwp: Vec<f64>) -> TimeSeriesFrame {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        TimeSeriesFrame::new(
            start,
            TimeDelta::minutes(10),
            vec![Channel::from_dense("nwp", ChannelRole::Nwp, "m/s", &nwp)],
        )
        .unwrap()
    }

    #[test]
    fn nwp_indexed_by_target_time() {
        let f = frame(vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(nwp_forecast(&f, "nwp", &[1], 2, None).unwrap(), vec![3.0]);
        assert_eq!(nwp_forecast(&f, "nwp", &[2], 1, None).unwrap(), vec![3.0]);
        assert!(nwp_forecast(&f, "other", &[1], 1, None).is_err());
        assert!(nwp_forecast(&f, "nwp", &[4], 1, None).is_err());
        let curve = crate::power_curve::fit_power_curve(&[3.0], &[7.0], 1).unwrap();
        assert_eq!(nwp_forecast(&f, "nwp", &[0], 1, Some(&curve)).unwrap(), vec![7.0]);
    }

    #[test]
    fn biased_nwp_rmse_is_bias() {
        let truth: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin() + 5.0).collect();
        let f = frame(truth.iter().map(|v| v + 0.75).collect());
        let anchors: Vec<usize> = (0..40).collect();
        let pred = nwp_forecast(&f, "nwp", &anchors, 3, None).unwrap();
        let y: Vec<f64> = anchors.iter().map(|&t| truth[t + 3]).collect();
        assert!((nrmse(&pred, &y, 1.0).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn nrmse_examples() {
        assert_eq!(nrmse(&[3.0, 1.0], &[2.0, 2.0], 2.0).unwrap(), 0.5);
        assert_eq!(nrmse(&[2.0], &[2.0], 2.0).unwrap(), 0.0);
        assert!(nrmse(&[1.0], &[1.0], 0.0).is_err());
        assert!(nrmse(&[], &[], 1.0).is_err());
        assert!(nrmse(&[1.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn delta_examples() {
        assert!((delta_nrmse(0.08, &[0.10, 0.12]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(delta_nrmse(0.10, &[0.10, 0.12]).unwrap(), 0.0);
        assert_eq!(delta_nrmse(0.25, &[0.3, 0.25, 0.28]).unwrap(), 0.0);
        assert!(delta_nrmse(0.1, &[0.0]).is_err());
        assert!(delta_nrmse(0.1, &[]).is_err());
    }

    #[test]
    fn degradation_hand_example() {
        let r = two_by_two();
        assert!((nrmse_degradation(&r, "A").unwrap() - 0.05).abs() <= 1e-15);
        assert!((nrmse_degradation(&r, "B").unwrap() - 0.05).abs() <= 1e-15);
        let mut r2 = r.clone();
        r2.push("C", 0, 1, 0.9);
        r2.push("C", 0, 2, 0.9);
        assert_eq!(nrmse_degradation(&r2, "A").unwrap(), nrmse_degradation(&r, "A").unwrap());
        let mut best = ScoreReport::new("ws", 1.0, 10, vec![]);
        best.push("A", 0, 1, 0.1);
        best.push("B", 0, 1, 0.3);
        assert_eq!(nrmse_degradation(&best, "A").unwrap(), 0.0);
    }

    #[test]
    fn degradation_requires_full_cells() {
        let mut r = two_by_two();
        r.entries.pop();
        assert!(nrmse_degradation(&r, "A").is_err());
        assert!(nrmse_degradation(&two_by_two(), "Z").is_err());
    }

    #[test]
    fn ranks_share_ties() {
        let r = two_by_two();
        assert_eq!(average_rank(&[r.clone()]).unwrap(), vec![("A".into(), 1.5), ("B".into(), 1.5)]);
        let mut r2 = ScoreReport::new("ws", 1.0, 10, vec![]);
        r2.push("A", 0, 1, 0.1);
        r2.push("B", 0, 1, 0.2);
        r2.push("A", 0, 2, 0.1);
        r2.push("B", 0, 2, 0.2);
        assert_eq!(average_rank(&[r, r2]).unwrap(), vec![("A".into(), 1.25), ("B".into(), 1.75)]);
    }

    #[test]
    fn csv_and_aggregates() {
        let mut r = two_by_two();
        r.baselines = vec!["B".into()];
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("predictor,split,horizon_minutes,nrmse\nA,0,10,0.1\n"));
        let doc = r.aggregates().unwrap();
        assert_eq!(doc.predictors[0].delta_nrmse[0].delta_nrmse, 0.5);
        assert_eq!(doc.predictors[0].delta_nrmse[1].horizon_minutes, 20);
        let json = serde_json::to_string(&doc).unwrap();
        assert_eq!(serde_json::from_str::<AggregateDocument>(&json).unwrap(), doc);
    }

    proptest! {
        #[test]
        fn nrmse_is_scale_free(
            pairs in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0), 1..30),
            c in 0.01f64..100.0,
        ) {
            let (y, yh): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let base = nrmse(&yh, &y, 3.0).unwrap();
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let yhs: Vec<f64> = yh.iter().map(|v| v * c).collect();
            prop_assert!((nrmse(&yhs, &ys, 3.0 * c).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
        }

        #[test]
        fn delta_sign(score in 0.0f64..1.0, base in prop::collection::vec(0.01f64..1.0, 1..4)) {
            let min = base.iter().copied().fold(f64::INFINITY, f64::min);
            let d = delta_nrmse(score, &base).unwrap();
            prop_assert_eq!(d > 0.0, score < min);
        }

        #[test]
        fn degradation_nonnegative(cells in prop::collection::vec(0.0f64..1.0, 12)) {
            let mut r = ScoreReport::new("ws", 1.0, 10, vec![]);
            for (i, v) in cells.iter().enumerate() {
                r.push(format!("p{}", i % 3), (i / 3) % 2, i / 6, *v);
            }
            for p in r.predictors() {
                prop_assert!(nrmse_degradation(&r, &p).unwrap() >= 0.0);
            }
        }
    }
}
