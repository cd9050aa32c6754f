//! Experiment configuration, read from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SyntheticFarmSpec;
use crate::data::{ChannelDecl, SplitSizes, WindowSpec};
use crate::error::{Error, Result};

/// Environment variable that replaces [`ExperimentConfig::seed`].
pub const SEED_ENV: &str = "WINDCAST_SEED";

/// `count` log-uniformly spaced values from `lo` to `hi`, both included.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::invalid(format!("geometric grid needs 0 < lo < hi, got {lo}, {hi}")));
    }
    if count < 2 {
        return Err(Error::invalid("geometric grid needs at least two points"));
    }
    let step = (hi.ln() - lo.ln()) / (count - 1) as f64;
    let mut out: Vec<f64> = (0..count).map(|i| (lo.ln() + step * i as f64).exp()).collect();
    out[0] = lo;
    out[count - 1] = hi;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Geometric { lo: f64, hi: f64, count: usize },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Grid::Values(v) => v.clone(),
            Grid::Geometric { lo, hi, count } => geometric_grid(*lo, *hi, *count)?,
        };
        if v.is_empty() {
            return Err(Error::invalid("hyperparameter grid is empty"));
        }
        if let Some(bad) = v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(Error::invalid(format!("grid values must be positive, got {bad}")));
        }
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    WindSpeed,
    WindPower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    /// Models predict power from the features.
    Direct,
    /// Models predict wind speed, mapped to power through the split's curve.
    Indirect,
}

/// Which frame channels play the fixed roles of the experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelNames {
    pub wind_speed: String,
    pub wind_power: String,
    pub nwp_speed: String,
}

impl Default for ChannelNames {
    fn default() -> Self {
        Self {
            wind_speed: "ws".into(),
            wind_power: "pw".into(),
            nwp_speed: "nwp_ws".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRange {
    pub from: String,
    pub to: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NwpFile {
    pub path: PathBuf,
    pub channels: Vec<ChannelDecl>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    /// One file per turbine, all with the same columns; averaged into a farm.
    pub turbines: Vec<PathBuf>,
    pub channels: Vec<ChannelDecl>,
    /// Forecast file at its own cadence, interpolated onto the farm grid.
    #[serde(default)]
    pub nwp: Option<NwpFile>,
    /// Angle channels (degrees) replaced by sine and cosine.
    #[serde(default)]
    pub direction_channels: Vec<String>,
    #[serde(default)]
    pub exclude: Vec<TimeRange>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticFarmSpec),
    Csv(CsvSource),
}

fn default_true() -> bool {
    true
}

fn default_lasso_lambdas() -> Grid {
    Grid::Geometric { lo: 1e-5, hi: 1.0, count: 30 }
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LassoSettings {
    #[serde(default = "default_lasso_lambdas")]
    pub lambdas: Grid,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for LassoSettings {
    fn default() -> Self {
        Self {
            lambdas: default_lasso_lambdas(),
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

fn default_counts() -> Vec<usize> {
    vec![5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 20]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepwiseSettings {
    #[serde(default = "default_counts")]
    pub counts: Vec<usize>,
}

impl Default for StepwiseSettings {
    fn default() -> Self {
        Self { counts: default_counts() }
    }
}

fn default_gammas() -> Grid {
    Grid::Geometric { lo: 1e-6, hi: 1e-3, count: 30 }
}

fn default_krr_lambdas() -> Grid {
    Grid::Geometric { lo: 1e-4, hi: 5.0, count: 30 }
}

fn default_anchors() -> usize {
    300
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrrSettings {
    #[serde(default = "default_gammas")]
    pub gammas: Grid,
    #[serde(default = "default_krr_lambdas")]
    pub lambdas: Grid,
    #[serde(default = "default_anchors")]
    pub anchors: usize,
}

impl Default for KrrSettings {
    fn default() -> Self {
        Self {
            gammas: default_gammas(),
            lambdas: default_krr_lambdas(),
            anchors: default_anchors(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSet {
    /// Persistence and NWP forecasts (and their power variants).
    #[serde(default = "default_true")]
    pub baselines: bool,
    #[serde(default)]
    pub lasso: Option<LassoSettings>,
    #[serde(default)]
    pub stepwise: Option<StepwiseSettings>,
    #[serde(default)]
    pub krr: Option<KrrSettings>,
}

impl Default for PredictorSet {
    fn default() -> Self {
        Self {
            baselines: true,
            lasso: Some(LassoSettings::default()),
            stepwise: Some(StepwiseSettings::default()),
            krr: Some(KrrSettings::default()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    None,
    Lasso,
    Bahsic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BahsicSettings {
    pub anchors: usize,
    pub output_anchors: usize,
    pub elimination_fraction: f64,
    /// Elimination stops once this many variables remain.
    pub stop_at: usize,
}

impl Default for BahsicSettings {
    fn default() -> Self {
        Self {
            anchors: 100,
            output_anchors: 100,
            elimination_fraction: 0.1,
            stop_at: 5,
        }
    }
}

/// Variable selection feeding the kernel model; linear models always see
/// every variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    pub method: SelectionMethod,
    pub top_k: usize,
    pub bahsic: BahsicSettings,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        Self {
            method: SelectionMethod::Bahsic,
            top_k: 4,
            bahsic: BahsicSettings::default(),
        }
    }
}

fn default_modes() -> Vec<PowerMode> {
    vec![PowerMode::Direct, PowerMode::Indirect]
}

fn default_neighbors() -> usize {
    crate::power_curve::DEFAULT_NEIGHBORS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub channels: ChannelNames,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default)]
    pub splits: SplitSizes,
    /// Use at most this many splits, from the start of the series.
    #[serde(default)]
    pub max_splits: Option<usize>,
    /// Horizons to run, in steps; all of `1..=window.horizons` when absent.
    #[serde(default)]
    pub horizons: Option<Vec<usize>>,
    pub target: TargetKind,
    #[serde(default = "default_modes")]
    pub power_modes: Vec<PowerMode>,
    #[serde(default)]
    pub predictors: PredictorSet,
    #[serde(default)]
    pub selection: SelectionSettings,
    #[serde(default = "default_neighbors")]
    pub power_curve_neighbors: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Desk-scale synthetic experiment: the default farm with reduced kernel
    /// grids so a full run stays within minutes on one core.
    pub fn synthetic(target: TargetKind) -> Self {
        Self {
            data: DataSource::Synthetic(SyntheticFarmSpec::default()),
            channels: ChannelNames::default(),
            window: WindowSpec::default(),
            splits: SplitSizes::default(),
            max_splits: None,
            horizons: None,
            target,
            power_modes: default_modes(),
            predictors: PredictorSet {
                baselines: true,
                lasso: Some(LassoSettings {
                    lambdas: Grid::Geometric { lo: 1e-5, hi: 1.0, count: 11 },
                    ..LassoSettings::default()
                }),
                stepwise: None,
                krr: Some(KrrSettings {
                    gammas: Grid::Geometric { lo: 1e-4, hi: 1e-2, count: 3 },
                    lambdas: Grid::Geometric { lo: 1e-6, hi: 1e-2, count: 3 },
                    anchors: 300,
                }),
            },
            selection: SelectionSettings::default(),
            power_curve_neighbors: default_neighbors(),
            seed: 0,
        }
    }

    /// Parses a config file, resolves relative data paths against its
    /// directory and applies the seed override from the environment.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = serde_json::from_str(&text)?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        config.apply_env()?;
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        if let DataSource::Csv(src) = &mut self.data {
            for p in &mut src.turbines {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
            if let Some(nwp) = &mut src.nwp {
                if nwp.path.is_relative() {
                    nwp.path = dir.join(&nwp.path);
                }
            }
        }
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn horizon_list(&self) -> Vec<usize> {
        self.horizons
            .clone()
            .unwrap_or_else(|| (1..=self.window.horizons).collect())
    }

    pub fn target_channel(&self) -> &str {
        match self.target {
            TargetKind::WindSpeed => &self.channels.wind_speed,
            TargetKind::WindPower => &self.channels.wind_power,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        let hs = self.horizon_list();
        if hs.is_empty() {
            return Err(Error::invalid("no horizons selected"));
        }
        if let Some(h) = hs.iter().find(|&&h| h == 0 || h > self.window.horizons) {
            return Err(Error::invalid(format!("horizon {h} outside 1..={}", self.window.horizons)));
        }
        let mut sorted = hs.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != hs.len() {
            return Err(Error::invalid("horizons listed twice"));
        }
        if self.max_splits == Some(0) {
            return Err(Error::invalid("max_splits must be at least 1"));
        }
        if self.target == TargetKind::WindPower && self.power_modes.is_empty() {
            return Err(Error::invalid("power target needs at least one power mode"));
        }
        if self.power_curve_neighbors == 0 {
            return Err(Error::invalid("power_curve_neighbors must be at least 1"));
        }
        let p = &self.predictors;
        if let Some(l) = &p.lasso {
            l.lambdas.values()?;
            if !(l.tol > 0.0) || l.max_iter == 0 {
                return Err(Error::invalid("lasso tol and max_iter must be positive"));
            }
        }
        if let Some(s) = &p.stepwise {
            if s.counts.is_empty() || s.counts.contains(&0) {
                return Err(Error::invalid("stepwise counts must be non-empty and positive"));
            }
        }
        if let Some(k) = &p.krr {
            k.gammas.values()?;
            k.lambdas.values()?;
            if k.anchors == 0 {
                return Err(Error::invalid("krr anchors must be at least 1"));
            }
        }
        let sel = &self.selection;
        if sel.method != SelectionMethod::None {
            if sel.top_k == 0 {
                return Err(Error::invalid("selection top_k must be at least 1"));
            }
            if sel.method == SelectionMethod::Lasso && p.lasso.is_none() {
                return Err(Error::invalid("lasso selection needs lasso settings"));
            }
            let b = &sel.bahsic;
            if sel.method == SelectionMethod::Bahsic
                && (b.stop_at < sel.top_k
                    || !(b.elimination_fraction > 0.0 && b.elimination_fraction < 1.0)
                    || b.anchors == 0
                    || b.output_anchors == 0)
            {
                return Err(Error::invalid(
                    "bahsic needs stop_at >= top_k, a fraction in (0, 1) and positive anchor counts",
                ));
            }
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_examples() {
        let g = geometric_grid(1.0, 100.0, 3).unwrap();
        assert!((g[1] - 10.0).abs() < 1e-12);
        assert_eq!((g[0], g[2]), (1.0, 100.0));
        assert_eq!(geometric_grid(0.3, 0.6, 2).unwrap(), vec![0.3, 0.6]);
        let g = geometric_grid(1e-5, 1.0, 30).unwrap();
        assert_eq!((g[0], g[29]), (1e-5, 1.0));
        let r = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
        }
        assert!(geometric_grid(0.0, 1.0, 3).is_err());
        assert!(geometric_grid(2.0, 1.0, 3).is_err());
        assert!(geometric_grid(1.0, 2.0, 1).is_err());
    }

    #[test]
    fn grid_forms_parse() {
        let g: Grid = serde_json::from_str("[0.1, 1.0]").unwrap();
        assert_eq!(g.values().unwrap(), vec![0.1, 1.0]);
        let g: Grid = serde_json::from_str(r#"{"lo": 1, "hi": 100, "count": 3}"#).unwrap();
        assert_eq!(g.values().unwrap().len(), 3);
        assert!(Grid::Values(vec![]).values().is_err());
        assert!(Grid::Values(vec![-1.0]).values().is_err());
    }

    #[test]
    fn minimal_json_gets_default_grids() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"data": {"kind": "synthetic"}, "target": "wind_speed"}"#).unwrap();
        c.validate().unwrap();
        assert_eq!(c.predictors.lasso.as_ref().unwrap().lambdas.values().unwrap().len(), 30);
        let krr = c.predictors.krr.as_ref().unwrap();
        assert_eq!(krr.gammas.values().unwrap()[29], 1e-3);
        assert_eq!(krr.lambdas.values().unwrap()[29], 5.0);
        assert_eq!(c.horizon_list(), (1..=24).collect::<Vec<_>>());
        assert_eq!(c.window, WindowSpec::default());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ExperimentConfig::synthetic(TargetKind::WindSpeed);
        c.validate().unwrap();
        c.horizons = Some(vec![0]);
        assert!(c.validate().is_err());
        c.horizons = Some(vec![3, 3]);
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::synthetic(TargetKind::WindPower);
        c.power_modes.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::synthetic(TargetKind::WindSpeed);
        c.predictors.lasso = None;
        c.selection.method = SelectionMethod::Lasso;
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(
            r#"{"data": {"kind": "synthetic"}, "target": "wind_speed", "bogus": 1}"#
        )
        .is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut c: ExperimentConfig = serde_json::from_str(
            r#"{"data": {"kind": "csv", "turbines": ["a.csv", "/abs/b.csv"], "channels": []},
                "target": "wind_speed"}"#,
        )
        .unwrap();
        c.resolve_paths(Path::new("/cfg"));
        let DataSource::Csv(src) = &c.data else { panic!() };
        assert_eq!(src.turbines, vec![PathBuf::from("/cfg/a.csv"), PathBuf::from("/abs/b.csv")]);
    }

    #[test]
    fn round_trips_through_json() {
        let c = ExperimentConfig::synthetic(TargetKind::WindPower);
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
    }
}
