//! Windowed supervised datasets built from a frame.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::frame::{ChannelRole, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::linalg::{select_columns, select_rows};
use crate::scalar::Real;

/// Window lengths, all in steps of the frame cadence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    /// Past in-situ observations per channel (l).
    pub past_len: usize,
    /// NWP steps before the target time (r0).
    pub nwp_before: usize,
    /// NWP steps after the target time (r1).
    pub nwp_after: usize,
    /// Number of forecast horizons (m).
    pub horizons: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        // 3 h of past observations, +/- 1.5 h of NWP, 4 h ahead at 10 min.
        Self {
            past_len: 18,
            nwp_before: 9,
            nwp_after: 9,
            horizons: 24,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.past_len == 0 || self.horizons == 0 {
            return Err(Error::invalid("past_len and horizons must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Single(usize),
    /// Every horizon `1..=m` jointly.
    All,
}

/// What a feature offset is measured from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetBase {
    Anchor,
    Target,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureLabel {
    pub channel: String,
    pub role: ChannelRole,
    pub offset: i64,
    pub base: OffsetBase,
}

impl FeatureLabel {
    /// Offset in steps relative to the anchor `t`.
    pub fn offset_from_anchor(&self, horizon: Horizon) -> i64 {
        match (self.base, horizon) {
            (OffsetBase::Target, Horizon::Single(h)) => h as i64 + self.offset,
            _ => self.offset,
        }
    }
}

/// Feature matrix, targets and bookkeeping for one windowing of a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedDataset<T: Real> {
    pub x: DMatrix<T>,
    pub y: DMatrix<T>,
    pub feature_labels: Vec<FeatureLabel>,
    pub sample_anchors: Vec<usize>,
    pub horizon: Horizon,
    /// Smallest and largest source offsets, relative to the anchor, touched by
    /// any feature or target of a sample.
    pub footprint: (i64, i64),
}

impl<T: Real> SupervisedDataset<T> {
    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn target(&self, column: usize) -> DVector<T> {
        self.y.column(column).into_owned()
    }

    /// Source index range `[lo, hi]` touched by the sample in `row`.
    pub fn sample_span(&self, row: usize) -> (i64, i64) {
        let t = self.sample_anchors[row] as i64;
        (t + self.footprint.0, t + self.footprint.1)
    }

    /// Rows whose whole footprint lies inside `range` (source indices).
    pub fn rows_within(&self, range: &Range<usize>) -> Vec<usize> {
        (0..self.n_samples())
            .filter(|&r| {
                let (lo, hi) = self.sample_span(r);
                lo >= range.start as i64 && hi < range.end as i64
            })
            .collect()
    }

    /// Union of the source spans of `rows`, or `None` when `rows` is empty.
    pub fn span_of(&self, rows: &[usize]) -> Option<(usize, usize)> {
        let lo = rows.iter().map(|&r| self.sample_span(r).0).min()?;
        let hi = rows.iter().map(|&r| self.sample_span(r).1).max()?;
        Some((lo.max(0) as usize, hi.max(0) as usize))
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        Self {
            x: select_rows(&self.x, rows),
            y: select_rows(&self.y, rows),
            feature_labels: self.feature_labels.clone(),
            sample_anchors: rows.iter().map(|&r| self.sample_anchors[r]).collect(),
            horizon: self.horizon,
            footprint: self.footprint,
        }
    }

    /// Channel names in column order with the columns belonging to each.
    pub fn variables(&self) -> Vec<(String, Vec<usize>)> {
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (j, label) in self.feature_labels.iter().enumerate() {
            match groups.iter_mut().find(|(name, _)| *name == label.channel) {
                Some((_, cols)) => cols.push(j),
                None => groups.push((label.channel.clone(), vec![j])),
            }
        }
        groups
    }

    /// Keeps only the columns of the named channels (in dataset column order).
    pub fn select_variables(&self, names: &[String]) -> Result<Self> {
        for n in names {
            if !self.feature_labels.iter().any(|l| &l.channel == n) {
                return Err(Error::MissingChannel(n.clone()));
            }
        }
        let cols: Vec<usize> = self
            .feature_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| names.contains(&l.channel))
            .map(|(j, _)| j)
            .collect();
        Ok(Self {
            x: select_columns(&self.x, &cols),
            y: self.y.clone(),
            feature_labels: cols.iter().map(|&j| self.feature_labels[j].clone()).collect(),
            sample_anchors: self.sample_anchors.clone(),
            horizon: self.horizon,
            footprint: self.footprint,
        })
    }
}

/// Builds the supervised dataset for `target` at one horizon (or all jointly).
///
/// Observed channels contribute the `past_len` values ending at the anchor.
/// NWP channels contribute `nwp_before + nwp_after + 1` values centred on the
/// target time; for [`Horizon::All`] the NWP window covers every target time.
/// Anchors whose window leaves the series or touches a missing value are dropped.
pub fn build_supervised<T: Real>(
    frame: &TimeSeriesFrame,
    spec: &WindowSpec,
    target: &str,
    horizon: Horizon,
) -> Result<SupervisedDataset<T>> {
    spec.validate()?;
    let target_values = &frame.channel(target)?.values;
    let l = spec.past_len as i64;
    let (r0, r1) = (spec.nwp_before as i64, spec.nwp_after as i64);
    let m = spec.horizons as i64;

    let (target_offsets, nwp_offsets, nwp_base): (Vec<i64>, Vec<i64>, OffsetBase) = match horizon {
        Horizon::Single(h) => {
            if h == 0 || h > spec.horizons {
                return Err(Error::invalid(format!(
                    "horizon {h} outside 1..={}",
                    spec.horizons
                )));
            }
            (vec![h as i64], (-r0..=r1).collect(), OffsetBase::Target)
        }
        Horizon::All => ((1..=m).collect(), (1 - r0..=m + r1).collect(), OffsetBase::Anchor),
    };
    let nwp_shift = match horizon {
        Horizon::Single(h) => h as i64,
        Horizon::All => 0,
    };

    let mut labels = Vec::new();
    let mut sources: Vec<(&[Option<f64>], i64)> = Vec::new();
    for c in frame.channels() {
        if c.role.is_observed() {
            for off in (1 - l)..=0 {
                labels.push(FeatureLabel {
                    channel: c.name.clone(),
                    role: c.role,
                    offset: off,
                    base: OffsetBase::Anchor,
                });
                sources.push((&c.values, off));
            }
        } else {
            for &off in &nwp_offsets {
                labels.push(FeatureLabel {
                    channel: c.name.clone(),
                    role: c.role,
                    offset: off,
                    base: nwp_base,
                });
                sources.push((&c.values, nwp_shift + off));
            }
        }
    }

    let all_offsets = sources
        .iter()
        .map(|&(_, o)| o)
        .chain(target_offsets.iter().copied());
    let lo = all_offsets.clone().min().unwrap_or(0);
    let hi = all_offsets.max().unwrap_or(0);
    let n = frame.len() as i64;

    let q = sources.len();
    let m_out = target_offsets.len();
    let mut xs: Vec<T> = Vec::new();
    let mut ys: Vec<T> = Vec::new();
    let mut anchors = Vec::new();
    let mut row_x = vec![T::zero(); q];
    let mut row_y = vec![T::zero(); m_out];
    'anchor: for t in (-lo).max(0)..(n - hi).max(0) {
        for (j, &(values, off)) in sources.iter().enumerate() {
            match values[(t + off) as usize] {
                Some(v) => row_x[j] = T::lit(v),
                None => continue 'anchor,
            }
        }
        for (k, &off) in target_offsets.iter().enumerate() {
            match target_values[(t + off) as usize] {
                Some(v) => row_y[k] = T::lit(v),
                None => continue 'anchor,
            }
        }
        xs.extend_from_slice(&row_x);
        ys.extend_from_slice(&row_y);
        anchors.push(t as usize);
    }
    if anchors.is_empty() {
        return Err(Error::Empty("no complete window in the frame".into()));
    }
    let rows = anchors.len();
    Ok(SupervisedDataset {
        x: DMatrix::from_row_slice(rows, q, &xs),
        y: DMatrix::from_row_slice(rows, m_out, &ys),
        feature_labels: labels,
        sample_anchors: anchors,
        horizon,
        footprint: (lo, hi),
    })
}
