//! Kernel dependence estimation (HSIC) and backward elimination of grouped
//! variables by HSIC (BAHSIC).

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel_models::{sample_anchor_indices, KernelSpec};
use crate::linalg::{select_columns, select_rows, squared_distances, sym_inv_sqrt, PINV_RTOL};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsicConfig {
    /// Input kernel width; `None` uses `1 / (2 d)` for `d` input columns.
    pub gamma_x: Option<f64>,
    /// Output kernel width; `None` uses `1 / (2 m)` for `m` output columns.
    pub gamma_y: Option<f64>,
    /// Nyström anchors for the inputs.
    pub p: usize,
    /// Nyström anchors for the outputs.
    pub p_prime: usize,
    pub seed: u64,
}

impl Default for HsicConfig {
    fn default() -> Self {
        Self {
            gamma_x: None,
            gamma_y: None,
            p: 100,
            p_prime: 100,
            seed: 0,
        }
    }
}

/// `1 / (2 d)`, the width heuristic for standardized data.
pub fn default_gamma(dim: usize) -> f64 {
    if dim == 0 {
        1.0
    } else {
        1.0 / (2.0 * dim as f64)
    }
}

impl HsicConfig {
    pub fn validate(&self) -> Result<()> {
        for g in [self.gamma_x, self.gamma_y].into_iter().flatten() {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::invalid(format!("HSIC gamma must be positive, got {g}")));
            }
        }
        if self.p == 0 || self.p_prime == 0 {
            return Err(Error::invalid("HSIC anchor counts must be at least 1"));
        }
        Ok(())
    }

    fn spec_x<T: Real>(&self, dim: usize) -> Result<KernelSpec<T>> {
        KernelSpec::new(T::lit(self.gamma_x.unwrap_or_else(|| default_gamma(dim))))
    }

    fn spec_y<T: Real>(&self, dim: usize) -> Result<KernelSpec<T>> {
        KernelSpec::new(T::lit(self.gamma_y.unwrap_or_else(|| default_gamma(dim))))
    }

    fn output_seed(&self) -> u64 {
        self.seed ^ 0x9E37_79B9_7F4A_7C15
    }
}

fn check_pair<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>) -> Result<usize> {
    if x.nrows() != y.nrows() {
        return Err(Error::dims(format!("{} input rows vs {} output rows", x.nrows(), y.nrows())));
    }
    if x.nrows() < 2 {
        return Err(Error::invalid("HSIC needs at least two samples"));
    }
    if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("HSIC input"));
    }
    Ok(x.nrows())
}

/// Double-centres a symmetric matrix: `H K H` with `H = I - 11^T / n`.
fn double_center<T: Real>(k: &DMatrix<T>) -> DMatrix<T> {
    let n = T::from_usize_lossy(k.nrows());
    let row_means: Vec<T> = k.row_iter().map(|r| r.sum() / n).collect();
    let col_means: Vec<T> = k.column_iter().map(|c| c.sum() / n).collect();
    let grand = row_means.iter().fold(T::zero(), |a, &b| a + b) / n;
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Subtracts each column's mean (left multiplication by `H`).
fn center_columns<T: Real>(m: &mut DMatrix<T>) {
    let n = T::from_usize_lossy(m.nrows());
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
}

/// Biased empirical HSIC, `Trace(K H G H) / n^2`.
pub fn hsic_exact<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>, config: &HsicConfig) -> Result<T> {
    config.validate()?;
    let n = check_pair(x, y)?;
    let k = squared_distances(x, x)?;
    let k = config.spec_x::<T>(x.ncols())?.from_squared_distances(&k);
    let g = squared_distances(y, y)?;
    let g = config.spec_y::<T>(y.ncols())?.from_squared_distances(&g);
    let kc = double_center(&k);
    let nn = T::from_usize_lossy(n * n);
    Ok(kc.component_mul(&g).sum() / nn)
}

/// Centred Nyström feature map `H K_np K_pp^{-1/2}` from squared distances.
fn feature_map<T: Real>(sq_np: &DMatrix<T>, anchors: &[usize], spec: KernelSpec<T>) -> Result<DMatrix<T>> {
    let mut k_np = spec.from_squared_distances(sq_np);
    let k_pp = DMatrix::from_fn(anchors.len(), anchors.len(), |a, b| k_np[(anchors[a], b)]);
    let root = sym_inv_sqrt(&k_pp, T::lit(PINV_RTOL))?;
    center_columns(&mut k_np);
    Ok(k_np * root)
}

fn frobenius_cross<T: Real>(phi: &DMatrix<T>, psi: &DMatrix<T>) -> T {
    let n = T::from_usize_lossy(phi.nrows());
    (phi.tr_mul(psi) / n).norm_squared()
}

fn output_features<T: Real>(y: &DMatrix<T>, config: &HsicConfig) -> Result<DMatrix<T>> {
    let anchors = sample_anchor_indices(y.nrows(), config.p_prime, config.output_seed())?;
    let sq = squared_distances(y, &select_rows(y, &anchors))?;
    feature_map(&sq, &anchors, config.spec_y(y.ncols())?)
}

/// Nyström HSIC, `|| Phi^T Psi / n ||_F^2` with independently sampled input
/// and output anchors.
pub fn nystrom_hsic<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>, config: &HsicConfig) -> Result<T> {
    config.validate()?;
    let n = check_pair(x, y)?;
    if config.p > n || config.p_prime > n {
        return Err(Error::invalid(format!(
            "anchor counts ({}, {}) exceed {n} samples",
            config.p, config.p_prime
        )));
    }
    let anchors = sample_anchor_indices(n, config.p, config.seed)?;
    let sq = squared_distances(x, &select_rows(x, &anchors))?;
    let phi = feature_map(&sq, &anchors, config.spec_x(x.ncols())?)?;
    let psi = output_features(y, config)?;
    Ok(frobenius_cross(&phi, &psi))
}

/// A named block of input columns eliminated as a unit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableGroup {
    pub name: String,
    pub columns: Vec<usize>,
}

impl VariableGroup {
    pub fn new(name: impl Into<String>, columns: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            columns,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EliminationRound {
    pub eliminated: Vec<String>,
    /// HSIC of the variables still in play after this round.
    pub hsic_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EliminationTrace {
    pub rounds: Vec<EliminationRound>,
    pub survivors: Vec<String>,
    /// Least important first; survivors occupy the tail.
    pub final_ranking: Vec<String>,
}

/// Per-group squared distances to a fixed input anchor set, so the distance
/// matrix of any union of groups is a sum.
struct GroupedNystrom<T: Real> {
    anchors: Vec<usize>,
    per_group: Vec<DMatrix<T>>,
    widths: Vec<usize>,
    psi: DMatrix<T>,
}

impl<T: Real> GroupedNystrom<T> {
    fn new(x: &DMatrix<T>, groups: &[VariableGroup], y: &DMatrix<T>, config: &HsicConfig) -> Result<Self> {
        config.validate()?;
        let n = check_pair(x, y)?;
        if config.p > n || config.p_prime > n {
            return Err(Error::invalid(format!(
                "anchor counts ({}, {}) exceed {n} samples",
                config.p, config.p_prime
            )));
        }
        for g in groups {
            if g.columns.is_empty() || g.columns.iter().any(|&c| c >= x.ncols()) {
                return Err(Error::invalid(format!("variable {:?} has invalid columns", g.name)));
            }
        }
        let anchors = sample_anchor_indices(n, config.p, config.seed)?;
        let per_group = groups
            .iter()
            .map(|g| {
                let xg = select_columns(x, &g.columns);
                squared_distances(&xg, &select_rows(&xg, &anchors))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            anchors,
            per_group,
            widths: groups.iter().map(|g| g.columns.len()).collect(),
            psi: output_features(y, config)?,
        })
    }

    fn hsic(&self, active: &[usize], config: &HsicConfig) -> Result<T> {
        let dim: usize = active.iter().map(|&g| self.widths[g]).sum();
        let mut sq = DMatrix::<T>::zeros(self.psi.nrows(), self.anchors.len());
        for &g in active {
            sq += &self.per_group[g];
        }
        let phi = feature_map(&sq, &self.anchors, config.spec_x(dim)?)?;
        Ok(frobenius_cross(&phi, &self.psi))
    }

    /// HSIC with each active group left out in turn.
    fn leave_one_out(&self, active: &[usize], config: &HsicConfig) -> Result<Vec<T>> {
        active
            .iter()
            .map(|&g| {
                let rest: Vec<usize> = active.iter().copied().filter(|&h| h != g).collect();
                self.hsic(&rest, config)
            })
            .collect()
    }
}

/// Indices of `values` by decreasing value; ties keep their order.
fn descending<T: Real>(values: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx
}

/// Backward elimination: each round drops the `ceil(fraction * remaining)`
/// variables whose removal leaves the highest HSIC, until `stop_at` remain.
/// Input kernel widths follow the `1 / (2 d)` heuristic for the current
/// dimension unless `config.gamma_x` fixes them.
pub fn bahsic_rank<T: Real>(
    x: &DMatrix<T>,
    groups: &[VariableGroup],
    y: &DMatrix<T>,
    config: &HsicConfig,
    elimination_fraction: f64,
    stop_at: usize,
) -> Result<EliminationTrace> {
    if !(elimination_fraction > 0.0 && elimination_fraction < 1.0) {
        return Err(Error::invalid("elimination fraction must lie in (0, 1)"));
    }
    if stop_at == 0 || stop_at >= groups.len() {
        return Err(Error::invalid(format!(
            "stop_at must lie in 1..{}, got {stop_at}",
            groups.len()
        )));
    }
    let model = GroupedNystrom::new(x, groups, y, config)?;
    let mut active: Vec<usize> = (0..groups.len()).collect();
    let mut rounds = Vec::new();
    let mut ranking = Vec::new();
    while active.len() > stop_at {
        let scores = model.leave_one_out(&active, config)?;
        let wanted = (elimination_fraction * active.len() as f64).ceil() as usize;
        let count = wanted.clamp(1, active.len() - stop_at);
        let order = descending(&scores);
        let drop: Vec<usize> = order[..count].iter().map(|&i| active[i]).collect();
        active.retain(|g| !drop.contains(g));
        let hsic_after = model.hsic(&active, config)?.as_f64();
        let names: Vec<String> = drop.iter().map(|&g| groups[g].name.clone()).collect();
        ranking.extend(names.iter().cloned());
        rounds.push(EliminationRound {
            eliminated: names,
            hsic_after,
        });
    }
    let survivors_ranked: Vec<String> = if active.len() > 1 {
        let scores = model.leave_one_out(&active, config)?;
        descending(&scores).into_iter().map(|i| groups[active[i]].name.clone()).collect()
    } else {
        active.iter().map(|&g| groups[g].name.clone()).collect()
    };
    ranking.extend(survivors_ranked);
    Ok(EliminationTrace {
        rounds,
        survivors: active.iter().map(|&g| groups[g].name.clone()).collect(),
        final_ranking: ranking,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsicScore {
    pub variable: String,
    /// HSIC of the retained set without this variable.
    pub hsic_without: f64,
    pub score: f64,
}

/// For each retained variable: HSIC with it left out, divided by the largest
/// such value, subtracted from one. If every leave-one-out HSIC is zero all
/// variables score one.
pub fn hsic_importance<T: Real>(
    x: &DMatrix<T>,
    variables: &[VariableGroup],
    y: &DMatrix<T>,
    config: &HsicConfig,
) -> Result<Vec<HsicScore>> {
    if variables.is_empty() {
        return Err(Error::Empty("no variables to score".into()));
    }
    let model = GroupedNystrom::new(x, variables, y, config)?;
    let active: Vec<usize> = (0..variables.len()).collect();
    let values: Vec<f64> = model.leave_one_out(&active, config)?.into_iter().map(|v| v.as_f64()).collect();
    let max = values.iter().copied().fold(0.0f64, f64::max);
    Ok(variables
        .iter()
        .zip(values)
        .map(|(v, h)| HsicScore {
            variable: v.name.clone(),
            hsic_without: h,
            score: if max > 0.0 { 1.0 - h / max } else { 1.0 },
        })
        .collect())
}

/// Mean score per variable over several training sets.
pub fn average_hsic_scores(tables: &[Vec<HsicScore>]) -> Result<Vec<HsicScore>> {
    let mut out: Vec<(HsicScore, usize)> = Vec::new();
    for table in tables {
        for s in table {
            match out.iter_mut().find(|(o, _)| o.variable == s.variable) {
                Some((o, c)) => {
                    o.score += s.score;
                    o.hsic_without += s.hsic_without;
                    *c += 1;
                }
                None => out.push((s.clone(), 1)),
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("no HSIC scores to average".into()));
    }
    Ok(out
        .into_iter()
        .map(|(mut s, c)| {
            s.score /= c as f64;
            s.hsic_without /= c as f64;
            s
        })
        .collect())
}

/// Writes `variable,round,hsic,score`: eliminated variables carry their round
/// number and the HSIC after that round; survivors have an empty round and,
/// when given, their importance score.
pub fn write_elimination_csv<W: Write>(trace: &EliminationTrace, scores: Option<&[HsicScore]>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variable", "round", "hsic", "score"])?;
    for (r, round) in trace.rounds.iter().enumerate() {
        for v in &round.eliminated {
            w.write_record([v.clone(), (r + 1).to_string(), round.hsic_after.to_string(), String::new()])?;
        }
    }
    for v in &trace.survivors {
        let s = scores.and_then(|s| s.iter().find(|s| &s.variable == v));
        w.write_record([
            v.clone(),
            String::new(),
            s.map(|s| s.hsic_without.to_string()).unwrap_or_default(),
            s.map(|s| s.score.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
