use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::FeatureLabel;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// One fitted LASSO model to be scored.
#[derive(Clone, Copy, Debug)]
pub struct LassoScoreInput<'a, T: Real> {
    pub split: usize,
    pub horizon: usize,
    pub weights: &'a DVector<T>,
    pub labels: &'a [FeatureLabel],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableScore {
    pub variable: String,
    pub horizon: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableScoreTable {
    /// Rows grouped by horizon, variables in first-seen column order.
    pub rows: Vec<VariableScore>,
    pub splits_averaged: usize,
    pub farms_averaged: usize,
    pub step_minutes: usize,
}

fn variable_names(labels: &[FeatureLabel]) -> Vec<&str> {
    let mut names: Vec<&str> = Vec::new();
    for l in labels {
        if !names.contains(&l.channel.as_str()) {
            names.push(&l.channel);
        }
    }
    names
}

/// Per model: `|w_j| / max |w|`, summed over the time offsets of each
/// variable. Then averaged over the splits of each horizon. An all-zero model
/// contributes zeros.
pub fn lasso_variable_scores<T: Real>(inputs: &[LassoScoreInput<'_, T>]) -> Result<VariableScoreTable> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Empty("no models to score".into()))?;
    let names = variable_names(first.labels);
    // horizon -> (per-variable sums, splits seen)
    let mut acc: BTreeMap<usize, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    for input in inputs {
        if input.weights.len() != input.labels.len() {
            return Err(Error::dims(format!(
                "{} weights for {} labels",
                input.weights.len(),
                input.labels.len()
            )));
        }
        if variable_names(input.labels) != names {
            return Err(Error::dims(format!(
                "split {} horizon {} was fitted on a different variable set",
                input.split, input.horizon
            )));
        }
        let max = input.weights.iter().fold(0.0f64, |m, w| m.max(w.as_f64().abs()));
        let entry = acc
            .entry(input.horizon)
            .or_insert_with(|| (vec![0.0; names.len()], Vec::new()));
        if entry.1.contains(&input.split) {
            return Err(Error::invalid(format!(
                "split {} scored twice for horizon {}",
                input.split, input.horizon
            )));
        }
        entry.1.push(input.split);
        if max > 0.0 {
            for (w, label) in input.weights.iter().zip(input.labels) {
                let k = names.iter().position(|n| *n == label.channel).expect("known name");
                entry.0[k] += w.as_f64().abs() / max;
            }
        }
    }
    let splits = acc.values().map(|(_, s)| s.len()).max().unwrap_or(0);
    let rows = acc
        .into_iter()
        .flat_map(|(h, (sums, seen))| {
            let count = seen.len() as f64;
            names
                .iter()
                .zip(sums)
                .map(move |(n, s)| VariableScore {
                    variable: n.to_string(),
                    horizon: h,
                    score: s / count,
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(VariableScoreTable {
        rows,
        splits_averaged: splits,
        farms_averaged: 1,
        step_minutes: 10,
    })
}

impl VariableScoreTable {
    /// Averages tables from several farms cell by cell.
    pub fn average_over_farms(tables: &[VariableScoreTable]) -> Result<VariableScoreTable> {
        let first = tables
            .first()
            .ok_or_else(|| Error::Empty("no farm tables".into()))?;
        let key = |t: &VariableScoreTable| -> Vec<(String, usize)> {
            t.rows.iter().map(|r| (r.variable.clone(), r.horizon)).collect()
        };
        let k0 = key(first);
        if tables.iter().any(|t| key(t) != k0) {
            return Err(Error::dims("farm tables cover different variables or horizons"));
        }
        let count = tables.len() as f64;
        let rows = first
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| VariableScore {
                variable: r.variable.clone(),
                horizon: r.horizon,
                score: tables.iter().map(|t| t.rows[i].score).sum::<f64>() / count,
            })
            .collect();
        Ok(VariableScoreTable {
            rows,
            splits_averaged: first.splits_averaged,
            farms_averaged: tables.iter().map(|t| t.farms_averaged).sum(),
            step_minutes: first.step_minutes,
        })
    }

    /// Variables ordered by decreasing mean score over horizons (ties keep
    /// column order).
    pub fn ranking(&self) -> Vec<(String, f64)> {
        let mut order: Vec<(String, f64, usize)> = Vec::new();
        for r in &self.rows {
            match order.iter_mut().find(|(n, _, _)| *n == r.variable) {
                Some(e) => {
                    e.1 += r.score;
                    e.2 += 1;
                }
                None => order.push((r.variable.clone(), r.score, 1)),
            }
        }
        let mut ranked: Vec<(String, f64)> = order.into_iter().map(|(n, s, c)| (n, s / c as f64)).collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        ranked
    }

    pub fn top_k(&self, k: usize) -> VariableScoreTable {
        let keep: Vec<String> = self.ranking().into_iter().take(k).map(|(n, _)| n).collect();
        VariableScoreTable {
            rows: self.rows.iter().filter(|r| keep.contains(&r.variable)).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["variable", "horizon_minutes", "score"])?;
        for r in &self.rows {
            w.write_record([
                r.variable.clone(),
                (r.horizon * self.step_minutes).to_string(),
                format!("{}", r.score),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ChannelRole, OffsetBase};

    fn labels(spec: &[(&str, i64)]) -> Vec<FeatureLabel> {
        spec.iter()
            .map(|&(c, o)| FeatureLabel {
                channel: c.into(),
                role: ChannelRole::InSitu,
                offset: o,
                base: OffsetBase::Anchor,
            })
            .collect()
    }

    fn score(table: &VariableScoreTable, var: &str, h: usize) -> f64 {
        table.rows.iter().find(|r| r.variable == var && r.horizon == h).unwrap().score
    }

    #[test]
    fn normalises_and_sums_offsets() {
        let l = labels(&[("WS", -1), ("WS", 0)]);
        let w = DVector::from_column_slice(&[0.5, -0.25]);
        let t = lasso_variable_scores(&[LassoScoreInput { split: 0, horizon: 1, weights: &w, labels: &l }]).unwrap();
        // 0.5/0.5 + 0.25/0.5
        assert_eq!(score(&t, "WS", 1), 1.5);
    }

    #[test]
    fn all_zero_model_scores_zero() {
        let l = labels(&[("WS", 0), ("F", 0)]);
        let w = DVector::<f64>::zeros(2);
        let t = lasso_variable_scores(&[LassoScoreInput { split: 0, horizon: 1, weights: &w, labels: &l }]).unwrap();
        assert!(t.rows.iter().all(|r| r.score == 0.0));
    }

    #[test]
    fn averages_splits() {
        let l = labels(&[("WS", 0), ("F", 0)]);
        let a = DVector::from_column_slice(&[1.0, 0.5]);
        let b = DVector::from_column_slice(&[0.5, 1.0]);
        let t = lasso_variable_scores(&[
            LassoScoreInput { split: 0, horizon: 2, weights: &a, labels: &l },
            LassoScoreInput { split: 1, horizon: 2, weights: &b, labels: &l },
        ])
        .unwrap();
        assert_eq!(score(&t, "WS", 2), 0.75);
        assert_eq!(t.splits_averaged, 2);
    }

    #[test]
    fn split_scores_one_and_two_average_to_one_and_a_half() {
        let l = labels(&[("WS", -1), ("WS", 0), ("F", 0)]);
        let a = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let b = DVector::from_column_slice(&[1.0, 1.0, 0.0]);
        let t = lasso_variable_scores(&[
            LassoScoreInput { split: 0, horizon: 1, weights: &a, labels: &l },
            LassoScoreInput { split: 1, horizon: 1, weights: &b, labels: &l },
        ])
        .unwrap();
        assert_eq!(score(&t, "WS", 1), 1.5);
    }

    #[test]
    fn scale_invariant() {
        let l = labels(&[("WS", -1), ("WS", 0), ("F", 0)]);
        let w = DVector::from_column_slice(&[0.3, -0.2, 0.7]);
        let w3 = &w * 3.0;
        let a = lasso_variable_scores(&[LassoScoreInput { split: 0, horizon: 1, weights: &w, labels: &l }]).unwrap();
        let b = lasso_variable_scores(&[LassoScoreInput { split: 0, horizon: 1, weights: &w3, labels: &l }]).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x.score - y.score).abs() < 1e-15);
        }
    }

    #[test]
    fn label_mismatch_rejected() {
        let l1 = labels(&[("WS", 0)]);
        let l2 = labels(&[("F", 0)]);
        let w = DVector::from_column_slice(&[1.0]);
        assert!(lasso_variable_scores(&[
            LassoScoreInput { split: 0, horizon: 1, weights: &w, labels: &l1 },
            LassoScoreInput { split: 1, horizon: 1, weights: &w, labels: &l2 },
        ])
        .is_err());
        let w2 = DVector::from_column_slice(&[1.0, 2.0]);
        assert!(lasso_variable_scores(&[LassoScoreInput { split: 0, horizon: 1, weights: &w2, labels: &l1 }]).is_err());
    }

    #[test]
    fn ranking_top_k_and_csv() {
        let l = labels(&[("A", 0), ("B", 0), ("C", 0)]);
        let w = DVector::from_column_slice(&[0.1, 1.0, 0.5]);
        let t = lasso_variable_scores(&[LassoScoreInput { split: 0, horizon: 3, weights: &w, labels: &l }]).unwrap();
        let top = t.top_k(2);
        let names: Vec<_> = top.ranking().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["B", "C"]);
        let mut buf = Vec::new();
        top.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("variable,horizon_minutes,score\n"));
        assert!(text.contains("B,30,1\n"));
        let avg = VariableScoreTable::average_over_farms(&[t.clone(), t]).unwrap();
        assert_eq!(avg.farms_averaged, 2);
    }
}
