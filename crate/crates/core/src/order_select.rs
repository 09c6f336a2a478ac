//! Model-order selection for point distribution models under colored noise.
//!
//! The training set is split in two. Modes and eigenvalues come from the first
//! half; the mean-removed second half `Y` is regressed on the leading `t`
//! modes, `Y = P_t B + E`, with box-constrained coefficients and a diagonal
//! noise covariance estimated jointly by alternating maximization. Each order
//! is scored with
//!
//! ```text
//! M2 * (Σ_i log σ̂²_i + 2t) + Σ_i Σ_m ε̂²_im / σ̂²_i
//! ```
//!
//! and the smallest minimizer wins.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pdm::{
    gls_unconstrained, clamp_to_box_with, ClampMode, PdmModel, TruncatedPdm,
};
use crate::shapes::ShapeSet;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_VARIANCE_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitPolicy {
    #[default]
    FirstHalf,
    Shuffled(u64),
}

/// Whose mean is subtracted from the second half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanSource {
    #[default]
    FirstHalf,
    SecondHalf,
}

#[derive(Debug, Clone)]
pub struct SplitData {
    pub x1: ShapeSet,
    pub x2: ShapeSet,
    /// `N x M2`, second-half shapes with the chosen mean removed.
    pub y: DMatrix<f64>,
    /// Positions in the input set of the members of `x1` and `x2`.
    pub x1_indices: Vec<usize>,
    pub x2_indices: Vec<usize>,
}

impl SplitData {
    pub fn m1(&self) -> usize {
        self.x1.len()
    }

    pub fn m2(&self) -> usize {
        self.x2.len()
    }
}

pub fn split_data(set: &ShapeSet, policy: SplitPolicy) -> Result<SplitData> {
    split_data_with(set, policy, MeanSource::FirstHalf)
}

/// Splits into `M1 = ceil(M/2)` and `M2 = floor(M/2)` samples.
pub fn split_data_with(
    set: &ShapeSet,
    policy: SplitPolicy,
    mean_source: MeanSource,
) -> Result<SplitData> {
    if !set.is_aligned() {
        return Err(Error::NotAligned);
    }
    let m = set.len();
    if m < 4 {
        return Err(Error::TooFewSamples {
            required: 4,
            got: m,
        });
    }
    let mut order: Vec<usize> = (0..m).collect();
    if let SplitPolicy::Shuffled(seed) = policy {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let m1 = m - m / 2;
    let (i1, i2) = order.split_at(m1);
    let x1 = set.subset(i1)?;
    let x2 = set.subset(i2)?;
    let mean = match mean_source {
        MeanSource::FirstHalf => x1.mean_shape(),
        MeanSource::SecondHalf => x2.mean_shape(),
    };
    let mut y = x2.to_matrix();
    for mut col in y.column_iter_mut() {
        col -= mean.coords();
    }
    Ok(SplitData {
        x1,
        x2,
        y,
        x1_indices: i1.to_vec(),
        x2_indices: i2.to_vec(),
    })
}

#[derive(Debug, Clone)]
pub struct AlternatingOptions {
    /// Stop when the relative objective change drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub clamp: ClampMode,
    /// Keep a column's previous coefficients when the new scaled solution
    /// fits worse under the current weights; makes the objective monotone.
    pub monotone_guard: bool,
    /// Starting noise variances; identity when `None`.
    pub initial_sigma: Option<DVector<f64>>,
}

impl Default for AlternatingOptions {
    fn default() -> Self {
        AlternatingOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            clamp: ClampMode::PerCoordinate,
            monotone_guard: true,
            initial_sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    /// `t x M2` coefficients, every column inside the box.
    pub b: DMatrix<f64>,
    /// Diagonal of the noise covariance estimate.
    pub sigma_diag: DVector<f64>,
    /// `Y − P_t B`.
    pub residuals: DMatrix<f64>,
    pub iterations: usize,
    /// Negative log-likelihood (constants dropped) after each iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// `M2 Σ_i log σ²_i + Σ_{i,m} e²_im / σ²_i`.
pub fn neg_log_likelihood(residuals: &DMatrix<f64>, sigma_diag: &DVector<f64>) -> f64 {
    let m2 = residuals.ncols() as f64;
    residuals
        .row_iter()
        .zip(sigma_diag.iter())
        .map(|(row, &s)| m2 * s.ln() + row.norm_squared() / s)
        .sum()
}

fn column_cost(e: &DVector<f64>, sigma: &DVector<f64>) -> f64 {
    e.iter().zip(sigma.iter()).map(|(v, s)| v * v / s).sum()
}

/// Alternates the box-constrained coefficient solve with the diagonal
/// noise-variance update, starting from unit variances.
pub fn alternating_ml(
    y: &DMatrix<f64>,
    pdm: &TruncatedPdm,
    opts: &AlternatingOptions,
) -> Result<RegressionFit> {
    let (n, m2) = y.shape();
    if n != pdm.dim() {
        return Err(Error::DimensionMismatch(format!(
            "Y has {n} rows, model has N = {}",
            pdm.dim()
        )));
    }
    if m2 < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: m2,
        });
    }
    let floor = pdm.noise_floor();
    let mut sigma = match &opts.initial_sigma {
        Some(s) if s.len() == n => s.map(|v| v.max(floor)),
        Some(s) => {
            return Err(Error::DimensionMismatch(format!(
                "initial sigma has {} entries, expected {n}",
                s.len()
            )))
        }
        None => DVector::from_element(n, 1.0_f64.max(floor)),
    };

    let mut b: Option<DMatrix<f64>> = None;
    let mut residuals = DMatrix::zeros(n, m2);
    let mut trace = Vec::new();
    let mut converged = false;

    for _ in 0..opts.max_iter.max(1) {
        let mut next = gls_unconstrained(pdm, y, &sigma)?;
        for j in 0..m2 {
            let clamped = clamp_to_box_with(&next.column(j).into_owned(), &pdm.lambdas, opts.clamp);
            next.set_column(j, &clamped);
        }
        if let (true, Some(prev)) = (opts.monotone_guard, &b) {
            for j in 0..m2 {
                let y_j = y.column(j);
                let e_new = y_j - &pdm.basis * next.column(j);
                let e_old = y_j - &pdm.basis * prev.column(j);
                if column_cost(&e_old, &sigma) < column_cost(&e_new, &sigma) {
                    next.set_column(j, &prev.column(j));
                }
            }
        }
        residuals = y - &pdm.basis * &next;
        sigma = DVector::from_iterator(
            n,
            residuals
                .row_iter()
                .map(|row| (row.norm_squared() / m2 as f64).max(floor)),
        );
        b = Some(next);

        let objective = neg_log_likelihood(&residuals, &sigma);
        let prev = trace.last().copied();
        trace.push(objective);
        if let Some(prev) = prev {
            if (prev - objective).abs() <= opts.tol * prev.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }

    Ok(RegressionFit {
        b: b.expect("at least one iteration runs"),
        sigma_diag: sigma,
        residuals,
        iterations: trace.len(),
        objective_trace: trace,
        converged,
    })
}

/// The order-selection criterion for one fitted order. The `N` in the AIC
/// penalty is omitted because it does not depend on `t`.
pub fn aic_score(fit: &RegressionFit, t: usize, m2: usize, n: usize) -> f64 {
    debug_assert_eq!(fit.sigma_diag.len(), n);
    let m2f = m2 as f64;
    let log_det: f64 = fit.sigma_diag.iter().map(|s| s.ln()).sum();
    let weighted: f64 = fit
        .residuals
        .row_iter()
        .zip(fit.sigma_diag.iter())
        .map(|(row, s)| row.norm_squared() / s)
        .sum();
    m2f * (log_det + 2.0 * t as f64) + weighted
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SelectionMethod {
    ProposedAic,
    VarianceThreshold,
}

impl SelectionMethod {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::ProposedAic => "proposed",
            SelectionMethod::VarianceThreshold => "variance",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectOptions {
    /// Largest order searched; `None` uses `min(rank, M1 − 1, N)`.
    pub t_max: Option<usize>,
    pub split: SplitPolicy,
    pub mean_source: MeanSource,
    pub fit: AlternatingOptions,
    /// Start each order from the previous order's noise estimate (sequential).
    pub warm_start: bool,
    pub keep_fits: bool,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            t_max: None,
            split: SplitPolicy::FirstHalf,
            mean_source: MeanSource::FirstHalf,
            fit: AlternatingOptions::default(),
            warm_start: false,
            keep_fits: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// `M2 <= t`: more coefficients per column than the split can support.
    pub underdetermined: bool,
}

#[derive(Debug, Clone)]
pub struct OrderSelectionResult {
    pub method: SelectionMethod,
    pub t_star: usize,
    pub scores: BTreeMap<usize, f64>,
    pub diagnostics: BTreeMap<usize, OrderDiagnostics>,
    pub per_order_fits: Option<BTreeMap<usize, RegressionFit>>,
    /// Orders whose fit failed, with the error message; excluded from the argmin.
    pub failed_orders: Vec<(usize, String)>,
}

/// Smallest key attaining the minimum value.
pub fn argmin_smallest(scores: &BTreeMap<usize, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&t, &s) in scores {
        match best {
            Some((_, b)) if !(s < b) => {}
            _ => best = Some((t, s)),
        }
    }
    best.map(|(t, _)| t)
}

/// Default search limit for a model fitted on `m1` samples.
pub fn auto_t_max(model: &PdmModel, m1: usize) -> usize {
    model
        .positive_rank()
        .min(m1.saturating_sub(1))
        .min(model.dim())
}

/// Full two-step procedure: split, fit the PDM on the first half, score every
/// order on the second half.
pub fn select_order_proposed(set: &ShapeSet, opts: &SelectOptions) -> Result<OrderSelectionResult> {
    let split = split_data_with(set, opts.split, opts.mean_source)?;
    let model = PdmModel::from_columns(&split.x1.to_matrix())?;
    select_order_on_split(&split, &model, opts)
}

/// Scores orders `1..=t_max` for an existing split and first-half model.
pub fn select_order_on_split(
    split: &SplitData,
    model: &PdmModel,
    opts: &SelectOptions,
) -> Result<OrderSelectionResult> {
    let rank_limit = auto_t_max(model, split.m1());
    let t_max = opts.t_max.map_or(rank_limit, |t| t.min(rank_limit));
    if t_max == 0 {
        return Err(Error::ZeroVariance);
    }
    let m2 = split.m2();
    let n = model.dim();

    let fit_one = |t: usize, initial: Option<DVector<f64>>| -> Result<RegressionFit> {
        let pdm = model.truncate(t)?;
        let mut fit_opts = opts.fit.clone();
        if initial.is_some() {
            fit_opts.initial_sigma = initial;
        }
        alternating_ml(&split.y, &pdm, &fit_opts)
    };

    let outcomes: Vec<(usize, Result<RegressionFit>)> = if opts.warm_start {
        let mut out = Vec::with_capacity(t_max);
        let mut carry: Option<DVector<f64>> = None;
        for t in 1..=t_max {
            let r = fit_one(t, carry.clone());
            if let Ok(f) = &r {
                carry = Some(f.sigma_diag.clone());
            }
            out.push((t, r));
        }
        out
    } else {
        (1..=t_max)
            .into_par_iter()
            .map(|t| (t, fit_one(t, None)))
            .collect()
    };

    let mut scores = BTreeMap::new();
    let mut diagnostics = BTreeMap::new();
    let mut fits = BTreeMap::new();
    let mut failed_orders = Vec::new();
    for (t, outcome) in outcomes {
        match outcome {
            Ok(fit) => {
                scores.insert(t, aic_score(&fit, t, m2, n));
                diagnostics.insert(
                    t,
                    OrderDiagnostics {
                        iterations: fit.iterations,
                        converged: fit.converged,
                        underdetermined: m2 <= t,
                    },
                );
                if opts.keep_fits {
                    fits.insert(t, fit);
                }
            }
            Err(e) => failed_orders.push((t, e.to_string())),
        }
    }
    let t_star = argmin_smallest(&scores).ok_or_else(|| {
        Error::SingularSystem {
            order: failed_orders.first().map_or(0, |f| f.0),
        }
    })?;
    Ok(OrderSelectionResult {
        method: SelectionMethod::ProposedAic,
        t_star,
        scores,
        diagnostics,
        per_order_fits: opts.keep_fits.then_some(fits),
        failed_orders,
    })
}

/// Cumulative explained-variance fraction after each order.
pub fn cumulative_variance(model: &PdmModel) -> Result<Vec<f64>> {
    let total = model.total_variance();
    if !(total > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let mut acc = 0.0;
    Ok(model
        .eigvals
        .iter()
        .map(|l| {
            acc += l;
            acc / total
        })
        .collect())
}

/// Smallest `t` whose leading eigenvalues explain at least `fraction` of the
/// total variance.
pub fn select_order_variance(model: &PdmModel, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "variance fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let cumulative = cumulative_variance(model)?;
    let t = cumulative
        .iter()
        .position(|&c| c >= fraction)
        .map_or(cumulative.len(), |i| i + 1);
    Ok(t)
}
