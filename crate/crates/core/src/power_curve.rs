//! Wind speed to power transfer curve by median of nearest neighbours.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 250;

/// Training pairs sorted by speed, queried lazily.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    speeds: Vec<f64>,
    powers: Vec<f64>,
    /// Position of each sorted pair in the original training order.
    order: Vec<usize>,
    k: usize,
}

pub fn fit_power_curve(ws: &[f64], pw: &[f64], k: usize) -> Result<PowerCurve> {
    if ws.is_empty() {
        return Err(Error::Empty("power curve training pairs".into()));
    }
    if ws.len() != pw.len() {
        return Err(Error::dims(format!("{} speeds vs {} powers", ws.len(), pw.len())));
    }
    if k == 0 {
        return Err(Error::invalid("neighbour count must be at least 1"));
    }
    if !ws.iter().chain(pw).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("power curve training pairs"));
    }
    let mut order: Vec<usize> = (0..ws.len()).collect();
    order.sort_by(|&a, &b| ws[a].total_cmp(&ws[b]).then(a.cmp(&b)));
    Ok(PowerCurve {
        speeds: order.iter().map(|&i| ws[i]).collect(),
        powers: order.iter().map(|&i| pw[i]).collect(),
        order,
        k,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl PowerCurve {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    /// Sorted positions of the `min(k, n)` nearest training pairs; equal
    /// distances are resolved in favour of the lower training index.
    fn neighbours(&self, q: f64) -> Vec<usize> {
        let n = self.speeds.len();
        let k = self.k.min(n);
        let dist = |i: usize| (self.speeds[i] - q).abs();
        let split = self.speeds.partition_point(|&s| s < q);
        let (mut lo, mut hi) = (split, split);
        // grow [lo, hi) to k elements by the closer side
        while hi - lo < k {
            let take_left = lo > 0 && (hi == n || dist(lo - 1) <= dist(hi));
            if take_left {
                lo -= 1;
            } else {
                hi += 1;
            }
        }
        let radius = (lo..hi).map(dist).fold(0.0f64, f64::max);
        while lo > 0 && dist(lo - 1) == radius {
            lo -= 1;
        }
        while hi < n && dist(hi) == radius {
            hi += 1;
        }
        let mut inside: Vec<usize> = (lo..hi).filter(|&i| dist(i) < radius).collect();
        let mut boundary: Vec<usize> = (lo..hi).filter(|&i| dist(i) == radius).collect();
        boundary.sort_by_key(|&i| self.order[i]);
        boundary.truncate(k - inside.len());
        inside.extend(boundary);
        inside
    }

    pub fn predict_one(&self, q: f64) -> Result<f64> {
        if !q.is_finite() {
            return Err(Error::NonFinite("power curve query"));
        }
        let mut values: Vec<f64> = self.neighbours(q).into_iter().map(|i| self.powers[i]).collect();
        Ok(median(&mut values))
    }

    /// Speed grid from the smallest to the largest training speed in
    /// `step` increments, paired with the predicted power.
    pub fn grid(&self, step: f64) -> Result<Vec<(f64, f64)>> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid("grid step must be positive"));
        }
        let lo = (self.speeds[0] / step).floor() as i64;
        let hi = (self.speeds[self.speeds.len() - 1] / step).ceil() as i64;
        (lo..=hi)
            .map(|i| {
                let s = i as f64 * step;
                Ok((s, self.predict_one(s)?))
            })
            .collect()
    }

    /// CSV `speed,power` on a 0.1 m/s grid.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["speed", "power"])?;
        for (s, p) in self.grid(0.1)? {
            w.write_record([format!("{s:.1}"), p.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn apply_power_curve(curve: &PowerCurve, ws_query: &[f64]) -> Result<Vec<f64>> {
    ws_query.iter().map(|&q| curve.predict_one(q)).collect()
}
