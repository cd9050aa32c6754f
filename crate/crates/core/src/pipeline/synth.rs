//! Synthetic wind farm with a persistent speed signal, a noisy forecast of it,
//! decoy channels and a saturating power output.

use chrono::{NaiveDate, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mix_seed;
use crate::data::{Channel, ChannelRole, TimeSeriesFrame};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSpec {
    pub rated_kw: f64,
    /// Speed at half of rated power.
    pub midpoint: f64,
    /// Logistic width in m/s; smaller saturates more sharply.
    pub width: f64,
    /// Noise standard deviation as a fraction of rated power.
    pub noise: f64,
    /// Fraction of samples replaced by `clamp_level * rated_kw`.
    pub clamp_fraction: f64,
    pub clamp_level: f64,
}

impl Default for PowerSpec {
    fn default() -> Self {
        Self {
            rated_kw: 2000.0,
            midpoint: 8.0,
            width: 1.2,
            noise: 0.02,
            clamp_fraction: 0.0,
            clamp_level: 0.5,
        }
    }
}

impl PowerSpec {
    pub fn curve(&self, speed: f64) -> f64 {
        self.rated_kw / (1.0 + (-(speed - self.midpoint) / self.width).exp())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticFarmSpec {
    pub n: usize,
    /// AR(1) coefficient of the latent speed process.
    pub autocorrelation: f64,
    /// Location and spread of the latent process before the softplus.
    pub speed_location: f64,
    pub speed_spread: f64,
    /// Standard deviation of the forecast error in m/s.
    pub nwp_error: f64,
    /// AR(1) coefficient of the forecast error; close to one is smooth.
    pub nwp_error_smoothness: f64,
    /// Further forecast channels of the speed with their own errors.
    pub relevant_nwp: usize,
    /// Forecast channels independent of the speed.
    pub irrelevant_nwp: usize,
    /// Measured channels independent of the speed.
    pub in_situ_decoys: usize,
    pub power: PowerSpec,
    /// Falls back to the experiment seed when absent.
    pub seed: Option<u64>,
}

impl Default for SyntheticFarmSpec {
    fn default() -> Self {
        Self {
            n: 40_000,
            autocorrelation: 0.99,
            speed_location: 7.0,
            speed_spread: 3.0,
            nwp_error: 1.0,
            nwp_error_smoothness: 0.995,
            relevant_nwp: 1,
            irrelevant_nwp: 2,
            in_situ_decoys: 1,
            power: PowerSpec::default(),
            seed: None,
        }
    }
}

impl SyntheticFarmSpec {
    pub fn validate(&self) -> Result<()> {
        let p = &self.power;
        let checks = [
            (self.n >= 2, "n must be at least 2"),
            (self.autocorrelation.abs() < 1.0, "autocorrelation must lie in (-1, 1)"),
            (self.speed_spread >= 0.0, "speed_spread must be non-negative"),
            (self.nwp_error >= 0.0, "nwp_error must be non-negative"),
            (
                (0.0..1.0).contains(&self.nwp_error_smoothness),
                "nwp_error_smoothness must lie in [0, 1)",
            ),
            (p.rated_kw > 0.0 && p.width > 0.0, "rated power and width must be positive"),
            (p.noise >= 0.0, "power noise must be non-negative"),
            ((0.0..1.0).contains(&p.clamp_fraction), "clamp_fraction must lie in [0, 1)"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::invalid(*msg)),
            None => Ok(()),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Stationary AR(1) path with unit marginal variance.
fn ar_path(n: usize, phi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut a: f64 = rng.sample(StandardNormal);
    for _ in 0..n {
        out.push(a);
        let e: f64 = rng.sample(StandardNormal);
        a = phi * a + scale * e;
    }
    out
}

/// Generates the farm: `ws` (target), `pw`, in-situ decoys, `nwp_ws`,
/// further relevant forecasts and forecast decoys, at a 10 minute cadence.
pub fn synth_generate(spec: &SyntheticFarmSpec, fallback_seed: u64) -> Result<TimeSeriesFrame> {
    spec.validate()?;
    let seed = spec.seed.unwrap_or(fallback_seed);
    let stream = |tag: u64| ChaCha8Rng::seed_from_u64(mix_seed(seed, &[tag]));
    let n = spec.n;

    let latent = ar_path(n, spec.autocorrelation, &mut stream(1));
    let ws: Vec<f64> = latent
        .iter()
        .map(|a| softplus(spec.speed_location + spec.speed_spread * a))
        .collect();

    let mut rng = stream(2);
    let pw: Vec<f64> = ws
        .iter()
        .map(|&s| {
            let e: f64 = rng.sample(StandardNormal);
            let clean = spec.power.curve(s) + spec.power.noise * spec.power.rated_kw * e;
            if rng.random::<f64>() < spec.power.clamp_fraction {
                spec.power.clamp_level * spec.power.rated_kw
            } else {
                clean
            }
        })
        .collect();

    let forecast = |tag: u64| -> Vec<f64> {
        let err = ar_path(n, spec.nwp_error_smoothness, &mut stream(tag));
        ws.iter().zip(err).map(|(s, e)| s + spec.nwp_error * e).collect()
    };

    let mut channels = vec![
        Channel::from_dense("ws", ChannelRole::Target, "m/s", &ws),
        Channel::from_dense("pw", ChannelRole::InSitu, "kW", &pw),
    ];
    for i in 0..spec.in_situ_decoys {
        let v: Vec<f64> = ar_path(n, 0.99, &mut stream(100 + i as u64))
            .into_iter()
            .map(|a| 285.0 + 5.0 * a)
            .collect();
        channels.push(Channel::from_dense(format!("insitu_decoy_{}", i + 1), ChannelRole::InSitu, "K", &v));
    }
    channels.push(Channel::from_dense("nwp_ws", ChannelRole::Nwp, "m/s", &forecast(3)));
    for i in 0..spec.relevant_nwp {
        channels.push(Channel::from_dense(
            format!("nwp_ws_{}", i + 2),
            ChannelRole::Nwp,
            "m/s",
            &forecast(200 + i as u64),
        ));
    }
    for i in 0..spec.irrelevant_nwp {
        let v: Vec<f64> = ar_path(n, 0.995, &mut stream(300 + i as u64))
            .into_iter()
            .map(|a| 5.0 + 2.0 * a)
            .collect();
        channels.push(Channel::from_dense(format!("nwp_decoy_{}", i + 1), ChannelRole::Nwp, "", &v));
    }
    let start = NaiveDate::from_ymd_opt(2020, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid fixed date");
    TimeSeriesFrame::new(start, TimeDelta::minutes(10), channels)
}
