//! Rolling-origin experiment: per split and horizon, standardize on the
//! training block, select variables, tune on the validation block, refit on
//! both and score on the test block.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{
    DataSource, ExperimentConfig, KrrSettings, LassoSettings, PowerMode, SelectionMethod, StepwiseSettings,
    TargetKind,
};
use super::mix_seed;
use super::synth::synth_generate;
use crate::data::{
    average_turbines, build_supervised, encode_direction, fit_standardizer, ingest_csv, join_on_grid,
    make_rolling_splits, parse_timestamp, resample_linear, Horizon, Split, Standardizer, SupervisedDataset,
    TimeSeriesFrame,
};
use crate::error::{Error, Result};
use crate::evaluation::{nrmse, nwp_forecast, persistence_forecast, ScoreReport};
use crate::hsic_select::{bahsic_rank, hsic_importance, EliminationTrace, HsicConfig, HsicScore, VariableGroup};
use crate::kernel_models::{krr_predict, KernelSpec, NystromDesign};
use crate::linalg::{select_columns, select_rows};
use crate::linear_models::{
    forward_stepwise_path, lasso_variable_scores, linear_predict, ols_fit, LassoOptions, LassoProblem,
    LassoScoreInput, LinearModel, VariableScoreTable,
};
use crate::power_curve::{apply_power_curve, fit_power_curve, PowerCurve};
use crate::scalar::Real;

const TAG_KRR: u64 = 1;
const TAG_BAHSIC: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStage {
    Standardize,
    Select,
    PowerCurve,
    /// Grid search: fitted on `fit_span`, scored on `validation_span`.
    Tune,
    Refit,
}

/// Which source rows one fitted object saw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub split: usize,
    /// `None` for objects shared by every horizon of a split.
    pub horizon: Option<usize>,
    pub predictor: String,
    pub stage: FitStage,
    pub rows: usize,
    /// Inclusive source index range of every value the fit read.
    pub fit_span: (usize, usize),
    pub validation_span: Option<(usize, usize)>,
    pub parameters: BTreeMap<String, f64>,
    pub validation_nrmse: Option<f64>,
    pub selected: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsicSelection {
    pub split: usize,
    pub target: String,
    pub trace: EliminationTrace,
    pub scores: Vec<HsicScore>,
    pub selected: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scores: ScoreReport,
    pub splits: Vec<Split>,
    pub fits: Vec<FitRecord>,
    /// LASSO variable scores per model target, when LASSO drives selection.
    pub lasso_importance: Vec<(String, VariableScoreTable)>,
    pub hsic_selection: Vec<HsicSelection>,
    /// Power curve of each split, fitted on its training block.
    pub power_curves: Vec<(usize, PowerCurve)>,
}

impl ExperimentReport {
    /// Fitted objects that read a value outside their split's training and
    /// validation blocks.
    pub fn hygiene_violations(&self) -> Vec<&FitRecord> {
        self.fits
            .iter()
            .filter(|f| {
                let Some(split) = self.splits.get(f.split) else { return true };
                let inside = |(lo, hi): (usize, usize)| lo >= split.train.start && hi < split.test.start;
                !inside(f.fit_span) || f.validation_span.is_some_and(|s| !inside(s))
            })
            .collect()
    }

    pub fn check_hygiene(&self) -> Result<()> {
        match self.hygiene_violations().first() {
            None => Ok(()),
            Some(f) => Err(Error::invalid(format!(
                "{} ({:?}) of split {} read rows {:?} outside train+val",
                f.predictor, f.stage, f.split, f.fit_span
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    /// Full protocol including test scores and baselines.
    Evaluate,
    /// Tuning and refits only; the report carries no scores.
    TrainOnly,
    /// Variable selection only: elimination traces or LASSO scores.
    SelectOnly,
}

/// Builds the farm frame described by the config.
pub fn load_frame(config: &ExperimentConfig) -> Result<TimeSeriesFrame> {
    match &config.data {
        DataSource::Synthetic(spec) => synth_generate(spec, config.seed),
        DataSource::Csv(src) => {
            if src.turbines.is_empty() {
                return Err(Error::Empty("no turbine files".into()));
            }
            let turbines = src
                .turbines
                .iter()
                .map(|p| ingest_csv(p, &src.channels))
                .collect::<Result<Vec<_>>>()?;
            let mut frame = average_turbines(&turbines)?;
            if let Some(nwp) = &src.nwp {
                let raw = ingest_csv(&nwp.path, &nwp.channels)?;
                frame = join_on_grid(&frame, &resample_linear(&raw, frame.cadence())?)?;
            }
            for ch in &src.direction_channels {
                frame = encode_direction(&frame, ch)?;
            }
            for r in &src.exclude {
                let parse = |s: &str| {
                    parse_timestamp(s).ok_or_else(|| Error::Timestamp { value: s.to_string(), line: 0 })
                };
                frame = frame.exclude_range(parse(&r.from)?, parse(&r.to)?);
            }
            Ok(frame)
        }
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let frame = load_frame(config)?;
    run_on_frame::<f64>(config, &frame, RunMode::Evaluate)
}

fn channel_mean(frame: &TimeSeriesFrame, name: &str) -> Result<f64> {
    let values: Vec<f64> = frame.channel(name)?.values.iter().flatten().copied().collect();
    if values.is_empty() {
        return Err(Error::Empty(format!("channel {name} has no observations")));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// One family of models fitted in a cell: which channel they predict, how the
/// predictor names are suffixed and whether outputs go through the power curve.
#[derive(Clone, Debug)]
struct Task {
    channel: String,
    suffix: &'static str,
    via_curve: bool,
    z_bar: f64,
    tag: u64,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    frame: &'a TimeSeriesFrame,
    splits: &'a [Split],
    tasks: Vec<Task>,
    target: String,
    z_bar: f64,
    mode: RunMode,
}

#[derive(Default)]
struct SplitState {
    curve: Option<PowerCurve>,
    /// Selected variables per task channel.
    selected: BTreeMap<String, Vec<String>>,
    hsic: Vec<HsicSelection>,
    fits: Vec<FitRecord>,
}

#[derive(Default)]
struct CellOutput {
    scores: Vec<(String, f64)>,
    fits: Vec<FitRecord>,
    /// (channel, train-fit LASSO weights, feature labels) for importance.
    lasso: Vec<(String, Vec<f64>, Vec<crate::data::FeatureLabel>)>,
}

/// Runs the protocol on an already loaded frame.
pub fn run_on_frame<T: Real>(config: &ExperimentConfig, frame: &TimeSeriesFrame, mode: RunMode) -> Result<ExperimentReport> {
    config.validate()?;
    let names = &config.channels;
    let target = config.target_channel().to_string();
    let z_bar = channel_mean(frame, &target)?;
    let tasks: Vec<Task> = match config.target {
        TargetKind::WindSpeed => vec![Task {
            channel: target.clone(),
            suffix: "",
            via_curve: false,
            z_bar,
            tag: 0,
        }],
        TargetKind::WindPower => {
            let z_ws = channel_mean(frame, &names.wind_speed)?;
            config
                .power_modes
                .iter()
                .map(|m| match m {
                    PowerMode::Direct => Task {
                        channel: target.clone(),
                        suffix: "_direct",
                        via_curve: false,
                        z_bar,
                        tag: 0,
                    },
                    PowerMode::Indirect => Task {
                        channel: names.wind_speed.clone(),
                        suffix: "_indirect",
                        via_curve: true,
                        z_bar: z_ws,
                        tag: 1,
                    },
                })
                .collect()
        }
    };
    if config.predictors.baselines {
        frame.channel(&names.nwp_speed)?;
        frame.channel(&names.wind_speed)?;
    }

    let mut plan = make_rolling_splits(frame.len(), config.splits)?;
    if let Some(k) = config.max_splits {
        plan.splits.truncate(k);
    }
    let ctx = Context {
        config,
        frame,
        splits: &plan.splits,
        tasks,
        target,
        z_bar,
        mode,
    };

    let states = (0..plan.splits.len())
        .into_par_iter()
        .map(|s| split_stage::<T>(&ctx, s))
        .collect::<Result<Vec<SplitState>>>()?;

    let horizons = config.horizon_list();
    let cells: Vec<(usize, usize)> = (0..plan.splits.len())
        .flat_map(|s| horizons.iter().map(move |&h| (s, h)))
        .collect();
    let outputs = cells
        .par_iter()
        .map(|&(s, h)| run_cell::<T>(&ctx, &states[s], s, h))
        .collect::<Result<Vec<CellOutput>>>()?;

    let baselines: Vec<String> = if config.predictors.baselines && mode == RunMode::Evaluate {
        match config.target {
            TargetKind::WindSpeed => vec!["persistence".into(), "nwp".into()],
            TargetKind::WindPower => vec![
                "persistence_indirect".into(),
                "nwp_indirect".into(),
                "persistence_direct".into(),
            ],
        }
    } else {
        Vec::new()
    };
    let step_minutes = frame.cadence().num_minutes().max(0) as u32;
    let mut scores = ScoreReport::new(ctx.target.clone(), z_bar, step_minutes, baselines);
    let mut fits = Vec::new();
    let mut hsic_selection = Vec::new();
    let mut power_curves = Vec::new();
    for (s, state) in states.into_iter().enumerate() {
        fits.extend(state.fits);
        hsic_selection.extend(state.hsic);
        if let Some(c) = state.curve {
            power_curves.push((s, c));
        }
    }
    let mut lasso_inputs: BTreeMap<String, Vec<(usize, usize, DVector<f64>, Vec<crate::data::FeatureLabel>)>> =
        BTreeMap::new();
    for (&(s, h), out) in cells.iter().zip(outputs) {
        for (p, v) in out.scores {
            scores.push(p, s, h, v);
        }
        fits.extend(out.fits);
        for (channel, w, labels) in out.lasso {
            lasso_inputs
                .entry(channel)
                .or_default()
                .push((s, h, DVector::from_vec(w), labels));
        }
    }
    let mut lasso_importance = Vec::new();
    for (channel, items) in lasso_inputs {
        let inputs: Vec<LassoScoreInput<'_, f64>> = items
            .iter()
            .map(|(s, h, w, l)| LassoScoreInput {
                split: *s,
                horizon: *h,
                weights: w,
                labels: l,
            })
            .collect();
        let mut table = lasso_variable_scores(&inputs)?;
        table.step_minutes = step_minutes as usize;
        lasso_importance.push((channel, table));
    }
    let report = ExperimentReport {
        scores,
        splits: plan.splits.clone(),
        fits,
        lasso_importance,
        hsic_selection,
        power_curves,
    };
    report.check_hygiene()?;
    Ok(report)
}

fn distinct_channels(tasks: &[Task]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in tasks {
        if !out.contains(&t.channel) {
            out.push(t.channel.clone());
        }
    }
    out
}

fn span_of<T: Real>(ds: &SupervisedDataset<T>, rows: &[usize]) -> Result<(usize, usize)> {
    ds.span_of(rows)
        .ok_or_else(|| Error::Empty("no complete samples in block".into()))
}

fn record(split: usize, horizon: Option<usize>, predictor: &str, stage: FitStage, rows: usize, span: (usize, usize)) -> FitRecord {
    FitRecord {
        split,
        horizon,
        predictor: predictor.to_string(),
        stage,
        rows,
        fit_span: span,
        validation_span: None,
        parameters: BTreeMap::new(),
        validation_nrmse: None,
        selected: Vec::new(),
    }
}

fn split_stage<T: Real>(ctx: &Context<'_>, s: usize) -> Result<SplitState> {
    let config = ctx.config;
    let split = &ctx.splits[s];
    let mut state = SplitState::default();
    if config.target == TargetKind::WindPower {
        let ws = &ctx.frame.channel(&config.channels.wind_speed)?.values;
        let pw = &ctx.frame.channel(&config.channels.wind_power)?.values;
        let idx: Vec<usize> = split
            .train
            .clone()
            .filter(|&i| ws[i].is_some() && pw[i].is_some())
            .collect();
        let speeds: Vec<f64> = idx.iter().filter_map(|&i| ws[i]).collect();
        let powers: Vec<f64> = idx.iter().filter_map(|&i| pw[i]).collect();
        let curve = fit_power_curve(&speeds, &powers, config.power_curve_neighbors)
            .map_err(|e| e.in_cell(s, 0, "power_curve"))?;
        if let (Some(&lo), Some(&hi)) = (idx.first(), idx.last()) {
            let mut r = record(s, None, "power_curve", FitStage::PowerCurve, idx.len(), (lo, hi));
            r.parameters.insert("k".into(), config.power_curve_neighbors as f64);
            state.fits.push(r);
        }
        state.curve = Some(curve);
    }
    let wants_krr = config.predictors.krr.is_some() || ctx.mode == RunMode::SelectOnly;
    if config.selection.method == SelectionMethod::Bahsic && wants_krr {
        for (i, channel) in distinct_channels(&ctx.tasks).iter().enumerate() {
            let sel = bahsic_for_split::<T>(ctx, s, channel, mix_seed(config.seed, &[TAG_BAHSIC, s as u64, i as u64]))
                .map_err(|e| e.in_cell(s, 0, "bahsic"))?;
            state.fits.extend(sel.1);
            state.selected.insert(channel.clone(), sel.0.selected.clone());
            state.hsic.push(sel.0);
        }
    }
    Ok(state)
}

/// Joint elimination over every horizon at once, on the training block.
fn bahsic_for_split<T: Real>(ctx: &Context<'_>, s: usize, channel: &str, seed: u64) -> Result<(HsicSelection, Vec<FitRecord>)> {
    let config = ctx.config;
    let sel = &config.selection;
    let ds = build_supervised::<T>(ctx.frame, &config.window, channel, Horizon::All)?;
    let rows = ds.rows_within(&ctx.splits[s].train);
    let span = span_of(&ds, &rows)?;
    let sx = fit_standardizer(&ds.x, &rows, "train")?;
    let sy = fit_standardizer(&ds.y, &rows, "train")?;
    let x = sx.transform(&select_rows(&ds.x, &rows))?;
    let y = sy.transform(&select_rows(&ds.y, &rows))?;
    let groups: Vec<VariableGroup> = ds
        .variables()
        .into_iter()
        .map(|(name, cols)| VariableGroup::new(name, cols))
        .collect();
    let n = rows.len();
    let hsic = HsicConfig {
        gamma_x: None,
        gamma_y: None,
        p: sel.bahsic.anchors.min(n),
        p_prime: sel.bahsic.output_anchors.min(n),
        seed,
    };
    let stop_at = sel.bahsic.stop_at.min(groups.len().saturating_sub(1));
    let trace = if stop_at >= 1 && groups.len() > sel.top_k {
        bahsic_rank(&x, &groups, &y, &hsic, sel.bahsic.elimination_fraction, stop_at)?
    } else {
        let names: Vec<String> = groups.iter().map(|g| g.name.clone()).collect();
        EliminationTrace {
            rounds: Vec::new(),
            survivors: names.clone(),
            final_ranking: names,
        }
    };
    let survivors: Vec<VariableGroup> = groups
        .iter()
        .filter(|g| trace.survivors.contains(&g.name))
        .cloned()
        .collect();
    let scores = hsic_importance(&x, &survivors, &y, &hsic)?;
    let keep = sel.top_k.min(trace.final_ranking.len());
    let selected = trace.final_ranking[trace.final_ranking.len() - keep..].to_vec();
    let mut fits = vec![
        record(s, None, &format!("bahsic[{channel}]"), FitStage::Standardize, n, span),
        record(s, None, &format!("bahsic[{channel}]"), FitStage::Select, n, span),
    ];
    fits[1].selected = selected.clone();
    Ok((
        HsicSelection {
            split: s,
            target: channel.to_string(),
            trace,
            scores,
            selected,
        },
        fits,
    ))
}

/// Standardizers for features and target fitted on one row set.
struct Scaled<T: Real> {
    sx: Standardizer<T>,
    sy: Standardizer<T>,
}

impl<T: Real> Scaled<T> {
    fn fit(ds: &SupervisedDataset<T>, rows: &[usize], tag: &str) -> Result<Self> {
        Ok(Self {
            sx: fit_standardizer(&ds.x, rows, tag)?,
            sy: fit_standardizer(&ds.y, rows, tag)?,
        })
    }

    fn x(&self, ds: &SupervisedDataset<T>, rows: &[usize]) -> Result<DMatrix<T>> {
        self.sx.transform(&select_rows(&ds.x, rows))
    }

    fn y(&self, ds: &SupervisedDataset<T>, rows: &[usize]) -> DVector<T> {
        let raw = DVector::from_iterator(rows.len(), rows.iter().map(|&r| ds.y[(r, 0)]));
        self.sy.transform_column(0, &raw)
    }

    fn unscale(&self, v: &DVector<T>) -> Vec<f64> {
        self.sy.inverse_column(0, v).iter().map(|x| x.as_f64()).collect()
    }
}

fn raw_targets<T: Real>(ds: &SupervisedDataset<T>, rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&r| ds.y[(r, 0)].as_f64()).collect()
}

struct Rows {
    train: Vec<usize>,
    val: Vec<usize>,
    train_val: Vec<usize>,
    test: Vec<usize>,
}

/// Bookkeeping shared by the model fitters of one cell and task.
struct Fitting<'a, T: Real> {
    ds: &'a SupervisedDataset<T>,
    rows: &'a Rows,
    split: usize,
    horizon: usize,
    name: String,
    z_bar: f64,
    fits: Vec<FitRecord>,
}

impl<T: Real> Fitting<'_, T> {
    fn record(&mut self, stage: FitStage, rows: &[usize]) -> Result<&mut FitRecord> {
        let span = span_of(self.ds, rows)?;
        self.fits
            .push(record(self.split, Some(self.horizon), &self.name, stage, rows.len(), span));
        Ok(self.fits.last_mut().expect("just pushed"))
    }

    fn tuned(&mut self, params: &[(&str, f64)], score: f64) -> Result<()> {
        let val_span = span_of(self.ds, &self.rows.val)?;
        let train = self.rows.train.clone();
        let r = self.record(FitStage::Tune, &train)?;
        r.validation_span = Some(val_span);
        r.validation_nrmse = Some(score);
        for (k, v) in params {
            r.parameters.insert(k.to_string(), *v);
        }
        Ok(())
    }

    fn refitted(&mut self, params: &[(&str, f64)]) -> Result<()> {
        let rows = self.rows.train_val.clone();
        self.record(FitStage::Standardize, &rows)?;
        let r = self.record(FitStage::Refit, &rows)?;
        for (k, v) in params {
            r.parameters.insert(k.to_string(), *v);
        }
        Ok(())
    }

    fn train_scalers(&mut self) -> Result<Scaled<T>> {
        let rows = self.rows.train.clone();
        self.record(FitStage::Standardize, &rows)?;
        Scaled::fit(self.ds, &rows, "train")
    }

    /// Returns test predictions and the training-block weights at the chosen
    /// regularisation.
    fn lasso(&mut self, settings: &LassoSettings) -> Result<(Vec<f64>, LinearModel<T>)> {
        let opts = LassoOptions {
            tol: settings.tol,
            max_iter: settings.max_iter,
        };
        let sc = self.train_scalers()?;
        let (rows, ds) = (self.rows, self.ds);
        let problem = LassoProblem::new(&sc.x(ds, &rows.train)?, &sc.y(ds, &rows.train))?;
        let x_val = sc.x(ds, &rows.val)?;
        let y_val = raw_targets(ds, &rows.val);
        let mut best: Option<(f64, f64, LinearModel<T>)> = None;
        for lambda in settings.lambdas.values()? {
            let model = problem.solve(T::lit(lambda), opts)?;
            let score = nrmse(&sc.unscale(&linear_predict(&model, &x_val)?), &y_val, self.z_bar)?;
            if best.as_ref().is_none_or(|b| score < b.1) {
                best = Some((lambda, score, model));
            }
        }
        let (lambda, score, train_model) = best.expect("grid is non-empty");
        self.tuned(&[("lambda", lambda)], score)?;

        let sc = Scaled::fit(ds, &rows.train_val, "train+val")?;
        let model = LassoProblem::new(&sc.x(ds, &rows.train_val)?, &sc.y(ds, &rows.train_val))?
            .solve(T::lit(lambda), opts)?;
        self.refitted(&[("lambda", lambda)])?;
        let pred = sc.unscale(&linear_predict(&model, &sc.x(ds, &rows.test)?)?);
        Ok((pred, train_model))
    }

    /// The selection order is scored on the first half of the validation
    /// block and the variable count on the second half.
    fn stepwise(&mut self, settings: &StepwiseSettings) -> Result<Vec<f64>> {
        let sc = self.train_scalers()?;
        let (rows, ds) = (self.rows, self.ds);
        if rows.val.len() < 2 {
            return Err(Error::invalid("stepwise needs at least two validation samples"));
        }
        let (val_a, val_b) = rows.val.split_at(rows.val.len() / 2);
        let mut counts: Vec<usize> = settings.counts.iter().copied().filter(|&c| c <= ds.n_features()).collect();
        counts.sort_unstable();
        counts.dedup();
        let max = *counts
            .last()
            .ok_or_else(|| Error::invalid(format!("every stepwise count exceeds {} features", ds.n_features())))?;
        let path = forward_stepwise_path(
            &sc.x(ds, &rows.train)?,
            &sc.y(ds, &rows.train),
            &sc.x(ds, val_a)?,
            &sc.y(ds, val_a),
            max,
        )?;
        let x_b = sc.x(ds, val_b)?;
        let y_b = raw_targets(ds, val_b);
        let mut best: Option<(usize, f64)> = None;
        for &k in &counts {
            let score = nrmse(&sc.unscale(&linear_predict(&path.models[k], &x_b)?), &y_b, self.z_bar)?;
            if best.is_none_or(|b| score < b.1) {
                best = Some((k, score));
            }
        }
        let (count, score) = best.expect("counts are non-empty");
        self.tuned(&[("count", count as f64)], score)?;

        let chosen = &path.order[..count];
        let sc = Scaled::fit(ds, &rows.train_val, "train+val")?;
        let x = sc.x(ds, &rows.train_val)?;
        let sub = ols_fit(&select_columns(&x, chosen), &sc.y(ds, &rows.train_val))?;
        let mut weights = DVector::zeros(ds.n_features());
        for (i, &j) in chosen.iter().enumerate() {
            weights[j] = sub.weights[i];
        }
        let mut model = LinearModel::new(weights, sub.intercept);
        model.selected = Some(chosen.to_vec());
        self.refitted(&[("count", count as f64)])?;
        let r = self.fits.last_mut().expect("refit recorded");
        r.selected = chosen.iter().map(|&j| format!("{}@{}", ds.feature_labels[j].channel, ds.feature_labels[j].offset)).collect();
        Ok(sc.unscale(&linear_predict(&model, &sc.x(ds, &rows.test)?)?))
    }

    fn krr(&mut self, settings: &KrrSettings, seed: u64) -> Result<Vec<f64>> {
        let sc = self.train_scalers()?;
        let (rows, ds) = (self.rows, self.ds);
        let x_train = sc.x(ds, &rows.train)?;
        let y_train = DMatrix::from_column_slice(rows.train.len(), 1, sc.y(ds, &rows.train).as_slice());
        let design = NystromDesign::new(&x_train, settings.anchors.min(rows.train.len()), seed)?;
        let d_val = design.query_distances(&sc.x(ds, &rows.val)?)?;
        let y_val = raw_targets(ds, &rows.val);
        let lambdas = settings.lambdas.values()?;
        let mut best: Option<(f64, f64, f64)> = None;
        for gamma in settings.gammas.values()? {
            let spec = KernelSpec::new(T::lit(gamma))?;
            let system = design.system(spec, &y_train)?;
            let k_val = spec.from_squared_distances(&d_val);
            for &lambda in &lambdas {
                let alpha = system.solve(T::lit(lambda))?;
                let pred: DVector<T> = (&k_val * alpha).column(0).into_owned();
                let score = nrmse(&sc.unscale(&pred), &y_val, self.z_bar)?;
                if best.is_none_or(|b| score < b.2) {
                    best = Some((gamma, lambda, score));
                }
            }
        }
        let (gamma, lambda, score) = best.expect("grids are non-empty");
        self.tuned(&[("gamma", gamma), ("lambda", lambda)], score)?;

        let sc = Scaled::fit(ds, &rows.train_val, "train+val")?;
        let x = sc.x(ds, &rows.train_val)?;
        let y = DMatrix::from_column_slice(rows.train_val.len(), 1, sc.y(ds, &rows.train_val).as_slice());
        let design = NystromDesign::new(&x, settings.anchors.min(rows.train_val.len()), seed)?;
        let system = design.system(KernelSpec::new(T::lit(gamma))?, &y)?;
        let alpha = system.solve(T::lit(lambda))?.column(0).into_owned();
        let model = design.model(&system, T::lit(lambda), alpha);
        self.refitted(&[("gamma", gamma), ("lambda", lambda), ("anchors", design.anchor_indices().len() as f64)])?;
        Ok(sc.unscale(&krr_predict(&model, &sc.x(ds, &rows.test)?)?))
    }
}

/// Variables with the largest summed normalised LASSO weights.
fn top_lasso_variables<T: Real>(weights: &DVector<T>, ds: &SupervisedDataset<T>, k: usize) -> Vec<String> {
    let max = weights.iter().fold(0.0f64, |m, w| m.max(w.as_f64().abs()));
    let mut scored: Vec<(String, f64)> = ds
        .variables()
        .into_iter()
        .map(|(name, cols)| {
            let s = if max > 0.0 {
                cols.iter().map(|&j| weights[j].as_f64().abs() / max).sum()
            } else {
                0.0
            };
            (name, s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    scored.into_iter().take(k).map(|(n, _)| n).collect()
}

fn rows_for_anchors<T: Real>(ds: &SupervisedDataset<T>, anchors: &[usize]) -> Vec<usize> {
    anchors
        .iter()
        .filter_map(|a| ds.sample_anchors.binary_search(a).ok())
        .collect()
}

fn run_cell<T: Real>(ctx: &Context<'_>, state: &SplitState, s: usize, h: usize) -> Result<CellOutput> {
    let config = ctx.config;
    if ctx.mode == RunMode::SelectOnly && config.selection.method != SelectionMethod::Lasso {
        return Ok(CellOutput::default());
    }
    let split = &ctx.splits[s];
    let in_cell = |e: Error, who: &str| e.in_cell(s, h, who);
    let channels = distinct_channels(&ctx.tasks);
    let datasets = channels
        .iter()
        .map(|c| build_supervised::<T>(ctx.frame, &config.window, c, Horizon::Single(h)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| in_cell(e, "dataset"))?;

    // test anchors usable by every dataset and carrying an observed target
    let target_values = &ctx.frame.channel(&ctx.target)?.values;
    let mut test_anchors: Vec<usize> = datasets[0]
        .rows_within(&split.test)
        .into_iter()
        .map(|r| datasets[0].sample_anchors[r])
        .filter(|&a| target_values.get(a + h).copied().flatten().is_some())
        .collect();
    for ds in &datasets[1..] {
        test_anchors.retain(|a| ds.sample_anchors.binary_search(a).is_ok());
    }
    if test_anchors.is_empty() {
        return Err(in_cell(Error::Empty("no complete test samples".into()), "dataset"));
    }
    let y_test: Vec<f64> = test_anchors.iter().filter_map(|&a| target_values[a + h]).collect();

    let mut out = CellOutput::default();
    let evaluate = ctx.mode == RunMode::Evaluate;
    let push = |out: &mut CellOutput, name: String, pred: Vec<f64>| -> Result<()> {
        if evaluate {
            let v = nrmse(&pred, &y_test, ctx.z_bar).map_err(|e| in_cell(e, &name))?;
            out.scores.push((name, v));
        }
        Ok(())
    };

    if config.predictors.baselines && evaluate {
        let names = &config.channels;
        let ws = &ctx.frame.channel(&names.wind_speed)?.values;
        let persistence = persistence_forecast(ws, &test_anchors, h).map_err(|e| in_cell(e, "persistence"))?;
        match config.target {
            TargetKind::WindSpeed => {
                push(&mut out, "persistence".into(), persistence)?;
                let nwp = nwp_forecast(ctx.frame, &names.nwp_speed, &test_anchors, h, None)
                    .map_err(|e| in_cell(e, "nwp"))?;
                push(&mut out, "nwp".into(), nwp)?;
            }
            TargetKind::WindPower => {
                let curve = state.curve.as_ref().expect("power curve fitted for power targets");
                push(&mut out, "persistence_indirect".into(), apply_power_curve(curve, &persistence)?)?;
                let nwp = nwp_forecast(ctx.frame, &names.nwp_speed, &test_anchors, h, Some(curve))
                    .map_err(|e| in_cell(e, "nwp_indirect"))?;
                push(&mut out, "nwp_indirect".into(), nwp)?;
                let pw = &ctx.frame.channel(&names.wind_power)?.values;
                let direct = persistence_forecast(pw, &test_anchors, h).map_err(|e| in_cell(e, "persistence_direct"))?;
                push(&mut out, "persistence_direct".into(), direct)?;
            }
        }
    }

    let selecting = ctx.mode == RunMode::SelectOnly;
    let p = &config.predictors;
    for task in &ctx.tasks {
        let ds = &datasets[channels.iter().position(|c| *c == task.channel).expect("channel listed")];
        let rows = Rows {
            train: ds.rows_within(&split.train),
            val: ds.rows_within(&split.val),
            train_val: ds.rows_within(&split.train_val()),
            test: rows_for_anchors(ds, &test_anchors),
        };
        let finish = |pred: Vec<f64>| -> Result<Vec<f64>> {
            match (task.via_curve, &state.curve) {
                (true, Some(c)) => apply_power_curve(c, &pred),
                _ => Ok(pred),
            }
        };
        let fitting = |name: &str| Fitting {
            ds,
            rows: &rows,
            split: s,
            horizon: h,
            name: name.to_string(),
            z_bar: task.z_bar,
            fits: Vec::new(),
        };

        let mut lasso_train: Option<LinearModel<T>> = None;
        if let Some(settings) = &p.lasso {
            let name = format!("lasso{}", task.suffix);
            let mut f = fitting(&name);
            let (pred, train_model) = f.lasso(settings).map_err(|e| in_cell(e, &name))?;
            out.fits.extend(f.fits);
            push(&mut out, name.clone(), finish(pred).map_err(|e| in_cell(e, &name))?)?;
            if config.selection.method == SelectionMethod::Lasso {
                out.lasso.push((
                    task.channel.clone(),
                    train_model.weights.iter().map(|w| w.as_f64()).collect(),
                    ds.feature_labels.clone(),
                ));
            }
            lasso_train = Some(train_model);
        }
        if selecting {
            continue;
        }
        if let Some(settings) = &p.stepwise {
            let name = format!("stepwise{}", task.suffix);
            let mut f = fitting(&name);
            let pred = f.stepwise(settings).map_err(|e| in_cell(e, &name))?;
            out.fits.extend(f.fits);
            push(&mut out, name.clone(), finish(pred).map_err(|e| in_cell(e, &name))?)?;
        }
        if let Some(settings) = &p.krr {
            let name = format!("krr{}", task.suffix);
            let selected = match config.selection.method {
                SelectionMethod::None => None,
                SelectionMethod::Bahsic => state.selected.get(&task.channel).cloned(),
                SelectionMethod::Lasso => lasso_train
                    .as_ref()
                    .map(|m| top_lasso_variables(&m.weights, ds, config.selection.top_k)),
            };
            let narrowed;
            let ds_k = match &selected {
                Some(vars) => {
                    narrowed = ds.select_variables(vars).map_err(|e| in_cell(e, &name))?;
                    &narrowed
                }
                None => ds,
            };
            let seed = mix_seed(config.seed, &[TAG_KRR, s as u64, h as u64, task.tag]);
            let mut f = Fitting { ds: ds_k, ..fitting(&name) };
            let pred = f.krr(settings, seed).map_err(|e| in_cell(e, &name))?;
            out.fits.extend(f.fits);
            if let (Some(vars), Some(r)) = (&selected, out.fits.iter_mut().rev().find(|r| r.stage == FitStage::Refit)) {
                r.selected = vars.clone();
            }
            push(&mut out, name.clone(), finish(pred).map_err(|e| in_cell(e, &name))?)?;
        }
    }
    Ok(out)
}
