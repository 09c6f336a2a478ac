//! Experiment harnesses: Monte Carlo order recovery on synthetic data,
//! order-vs-sample-count sweeps on ingested data, and the leave-one-out
//! missing-landmark (LMMSE) error curve.
//!
//! Every trial draws its randomness from a seed derived from the master seed
//! and the trial coordinates, so results do not depend on scheduling or on
//! the number of worker threads.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;
use crate::order_select::{
    select_order_proposed, select_order_variance, SelectOptions, SelectionMethod,
    DEFAULT_VARIANCE_FRACTION,
};
use crate::pdm::{PdmModel, TruncatedPdm};
use crate::shapes::{generalized_procrustes_with, GpaOptions, ShapeSet};
use crate::simgen::{sample_shapes, CoefficientDist, SeedPdm, SimConfig, TransformRanges};

/// SplitMix64 finalizer; mixes trial coordinates into independent seeds.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut z = master
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SelectorSuite {
    pub methods: Vec<SelectionMethod>,
    pub select: SelectOptions,
    pub variance_fraction: f64,
}

impl Default for SelectorSuite {
    fn default() -> Self {
        SelectorSuite {
            methods: vec![SelectionMethod::ProposedAic, SelectionMethod::VarianceThreshold],
            select: SelectOptions::default(),
            variance_fraction: DEFAULT_VARIANCE_FRACTION,
        }
    }
}

impl SelectorSuite {
    /// Runs every configured selector on one aligned set.
    pub fn run(&self, set: &ShapeSet) -> Result<Vec<(SelectionMethod, usize)>> {
        self.methods
            .iter()
            .map(|&method| {
                let t = match method {
                    SelectionMethod::ProposedAic => select_order_proposed(set, &self.select)?.t_star,
                    SelectionMethod::VarianceThreshold => {
                        let model = PdmModel::from_columns(&set.to_matrix())?;
                        select_order_variance(&model, self.variance_fraction)?
                    }
                };
                Ok((method, t))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub seed_pdm: SeedPdm,
    pub beta_db: f64,
    pub sample_counts: Vec<usize>,
    pub trials: usize,
    pub rng_seed: u64,
    pub selectors: SelectorSuite,
    pub transforms: TransformRanges,
    pub coefficients: CoefficientDist,
    pub realign: bool,
}

impl McConfig {
    pub fn new(seed_pdm: SeedPdm, beta_db: f64, sample_counts: Vec<usize>, trials: usize, rng_seed: u64) -> Self {
        McConfig {
            seed_pdm,
            beta_db,
            sample_counts,
            trials,
            rng_seed,
            selectors: SelectorSuite::default(),
            transforms: TransformRanges::default(),
            coefficients: CoefficientDist::UniformBox,
            realign: true,
        }
    }

    pub fn true_t(&self) -> usize {
        self.seed_pdm.order()
    }

    /// Simulation settings for trial `trial` at sample count `m`.
    pub fn sim_config(&self, m: usize, trial: usize) -> SimConfig {
        SimConfig {
            m,
            beta_db: self.beta_db,
            transforms: self.transforms,
            rng_seed: derive_seed(self.rng_seed, m as u64, trial as u64),
            realign: self.realign,
            coefficients: self.coefficients,
            gpa: GpaOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub mean_t: f64,
    /// Population variance of the selected orders.
    pub var_t: f64,
    pub hist: BTreeMap<usize, usize>,
}

impl CellSummary {
    pub fn from_orders(orders: &[usize]) -> Self {
        let mut hist = BTreeMap::new();
        for &t in orders {
            *hist.entry(t).or_insert(0) += 1;
        }
        let n = orders.len() as f64;
        let mean_t = orders.iter().sum::<usize>() as f64 / n;
        let var_t = orders.iter().map(|&t| (t as f64 - mean_t).powi(2)).sum::<f64>() / n;
        CellSummary { mean_t, var_t, hist }
    }

    pub fn count(&self) -> usize {
        self.hist.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialSummary {
    pub cells: BTreeMap<(SelectionMethod, usize), CellSummary>,
    /// Selected orders per cell, in trial order.
    pub orders: BTreeMap<(SelectionMethod, usize), Vec<usize>>,
    pub failures: usize,
    /// `(M, trial, message)` for every aborted trial.
    pub failure_log: Vec<(usize, usize, String)>,
}

impl TrialSummary {
    fn from_outcomes(outcomes: Vec<(usize, usize, Result<Vec<(SelectionMethod, usize)>>)>) -> Self {
        let mut summary = TrialSummary::default();
        for (m, trial, outcome) in outcomes {
            match outcome {
                Ok(selected) => {
                    for (method, t) in selected {
                        summary.orders.entry((method, m)).or_default().push(t);
                    }
                }
                Err(e) => {
                    summary.failures += 1;
                    summary.failure_log.push((m, trial, e.to_string()));
                }
            }
        }
        summary.cells = summary
            .orders
            .iter()
            .map(|(k, v)| (*k, CellSummary::from_orders(v)))
            .collect();
        summary
    }

    pub fn cell(&self, method: SelectionMethod, m: usize) -> Option<&CellSummary> {
        self.cells.get(&(method, m))
    }

    /// `method,M,mean_t,var_t`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,M,mean_t,var_t\n");
        for ((method, m), c) in &self.cells {
            let _ = writeln!(out, "{},{},{},{}", method.name(), m, fmt_f64(c.mean_t), fmt_f64(c.var_t));
        }
        out
    }

    /// `method,M,t,count`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("method,M,t,count\n");
        for ((method, m), c) in &self.cells {
            for (t, n) in &c.hist {
                let _ = writeln!(out, "{},{},{},{}", method.name(), m, t, n);
            }
        }
        out
    }
}

fn grid(sample_counts: &[usize], trials: usize) -> Vec<(usize, usize)> {
    sample_counts
        .iter()
        .flat_map(|&m| (0..trials).map(move |k| (m, k)))
        .collect()
}

/// Order recovery on synthetic sets drawn from `cfg.seed_pdm`.
pub fn monte_carlo_order(cfg: &McConfig) -> Result<TrialSummary> {
    if cfg.trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    if let Some(&m) = cfg.sample_counts.iter().find(|&&m| m < 4) {
        return Err(Error::TooFewSamples { required: 4, got: m });
    }
    let outcomes = grid(&cfg.sample_counts, cfg.trials)
        .into_par_iter()
        .map(|(m, k)| {
            let outcome = sample_shapes(&cfg.seed_pdm, &cfg.sim_config(m, k))
                .and_then(|set| cfg.selectors.run(&set));
            (m, k, outcome)
        })
        .collect();
    Ok(TrialSummary::from_outcomes(outcomes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubsampleMode {
    /// `trials` random subsets per sample count.
    #[default]
    Random,
    /// The first `M` samples (every trial identical).
    Prefix,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub selectors: SelectorSuite,
    pub subsample: SubsampleMode,
}

/// Sample indices used by [`order_sweep`] for sample count `m`.
pub fn sweep_subsets(total: usize, m: usize, trials: usize, rng_seed: u64, mode: SubsampleMode) -> Vec<Vec<usize>> {
    (0..trials)
        .map(|k| match mode {
            SubsampleMode::Prefix => (0..m).collect(),
            SubsampleMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, m as u64, k as u64));
                sample(&mut rng, total, m).into_vec()
            }
        })
        .collect()
}

/// Selected order as a function of training-set size on real data.
pub fn order_sweep(
    set: &ShapeSet,
    sample_counts: &[usize],
    trials: usize,
    rng_seed: u64,
    opts: &SweepOptions,
) -> Result<TrialSummary> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    for &m in sample_counts {
        if m < 4 || m > set.len() {
            return Err(Error::TooFewSamples {
                required: m.max(4),
                got: set.len().min(m),
            });
        }
    }
    let mut work = Vec::new();
    for &m in sample_counts {
        for (k, idx) in sweep_subsets(set.len(), m, trials, rng_seed, opts.subsample)
            .into_iter()
            .enumerate()
        {
            work.push((m, k, idx));
        }
    }
    let outcomes = work
        .into_par_iter()
        .map(|(m, k, idx)| {
            let outcome = set.subset(&idx).and_then(|sub| {
                let sub = if sub.is_aligned() {
                    sub
                } else {
                    generalized_procrustes_with(&sub, &GpaOptions::default())?
                };
                opts.selectors.run(&sub)
            });
            (m, k, outcome)
        })
        .collect();
    Ok(TrialSummary::from_outcomes(outcomes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LmmseSolver {
    /// `(R_aa + ρI)⁻¹` with `ρ = 1e-10 · tr(R_aa) / (N − 2)`.
    #[default]
    Ridge,
    /// Moore-Penrose pseudo-inverse of `R_aa`.
    PseudoInverse,
}

pub const LMMSE_RIDGE: f64 = 1e-10;

fn without_landmark(n: usize, missing: usize) -> impl Iterator<Item = usize> {
    (0..n).filter(move |&r| r / 2 != missing)
}

/// Estimates landmark `missing` (both coordinates) of a mean-removed shape
/// from the other landmarks, using the covariance implied by `pdm`.
pub fn lmmse_estimate_landmark(pdm: &TruncatedPdm, y_available: &DVector<f64>, missing: usize) -> Result<Vector2<f64>> {
    lmmse_estimate_landmark_with(pdm, y_available, missing, LmmseSolver::Ridge)
}

pub fn lmmse_estimate_landmark_with(
    pdm: &TruncatedPdm,
    y_available: &DVector<f64>,
    missing: usize,
    solver: LmmseSolver,
) -> Result<Vector2<f64>> {
    let n = pdm.dim();
    if missing >= n / 2 {
        return Err(Error::DimensionMismatch(format!(
            "landmark {missing} out of range for {} landmarks",
            n / 2
        )));
    }
    if y_available.len() != n - 2 {
        return Err(Error::DimensionMismatch(format!(
            "expected {} available coordinates, got {}",
            n - 2,
            y_available.len()
        )));
    }
    direct_estimate(&pdm.covariance(), y_available, missing, solver, pdm.order())
}

fn direct_estimate(
    r: &DMatrix<f64>,
    y_available: &DVector<f64>,
    missing: usize,
    solver: LmmseSolver,
    order: usize,
) -> Result<Vector2<f64>> {
    let n = r.nrows();
    let avail: Vec<usize> = without_landmark(n, missing).collect();
    let r_aa = DMatrix::from_fn(n - 2, n - 2, |i, j| r[(avail[i], avail[j])]);
    let r_ia = DMatrix::from_fn(2, n - 2, |i, j| r[(2 * missing + i, avail[j])]);
    let trace = r_aa.trace();
    if !(trace > 0.0) {
        return Ok(Vector2::zeros());
    }
    // R_ia A⁻¹ y_a = (A⁻¹ R_ai)ᵀ y_a for symmetric A
    let r_ai = r_ia.transpose();
    let z = match solver {
        LmmseSolver::Ridge => {
            let rho = LMMSE_RIDGE * trace / (n - 2) as f64;
            let reg = r_aa + DMatrix::identity(n - 2, n - 2) * rho;
            match reg.clone().cholesky() {
                Some(c) => c.solve(&r_ai),
                None => reg
                    .lu()
                    .solve(&r_ai)
                    .ok_or(Error::SingularSystem { order })?,
            }
        }
        LmmseSolver::PseudoInverse => {
            let eps = 1e-12 * r_aa.amax();
            r_aa.pseudo_inverse(eps)
                .map_err(|_| Error::SingularSystem { order })?
                * r_ai
        }
    };
    let est = z.transpose() * y_available;
    Ok(Vector2::new(est[0], est[1]))
}

/// Same estimate as the ridge path of [`lmmse_estimate_landmark`] for every
/// landmark of `y` at once, using the low-rank structure of the model
/// covariance: with `P_a` the basis rows of the available coordinates,
/// `R_ia (R_aa + ρI)⁻¹ y_a = P_i Λ (P_aᵀ P_a Λ + ρI)⁻¹ P_aᵀ y_a`, and
/// `P_aᵀ P_a Λ + ρI = (Λ + ρI) − P_iᵀ P_i Λ` is a rank-2 update of a diagonal.
///
/// The capacitance matrix degenerates once the basis covers the available
/// coordinates, so orders above `N − 2` use the direct solve instead.
pub fn lmmse_all_landmarks(basis: &DMatrix<f64>, lambdas: &DVector<f64>, y: &DVector<f64>) -> Vec<Vector2<f64>> {
    let (n, t) = basis.shape();
    if t + 2 > n {
        let r = basis * DMatrix::from_diagonal(lambdas) * basis.transpose();
        return (0..n / 2)
            .map(|i| {
                let y_a = DVector::from_iterator(n - 2, without_landmark(n, i).map(|k| y[k]));
                direct_estimate(&r, &y_a, i, LmmseSolver::Ridge, t).unwrap_or_else(|_| Vector2::zeros())
            })
            .collect();
    }
    let proj = basis.transpose() * y;
    let total: f64 = lambdas.sum();
    (0..n / 2)
        .map(|i| {
            let (r0, r1) = (2 * i, 2 * i + 1);
            let yi = Vector2::new(y[r0], y[r1]);
            let u = |j: usize| Vector2::new(basis[(r0, j)], basis[(r1, j)]);
            let trace_aa = total
                - (0..t)
                    .map(|j| lambdas[j] * u(j).norm_squared())
                    .sum::<f64>();
            if !(trace_aa > 0.0) {
                return Vector2::zeros();
            }
            let rho = LMMSE_RIDGE * trace_aa / (n - 2) as f64;
            // A = D − U V with D = Λ + ρI, U = P_iᵀ, V = P_i Λ
            let d_inv: Vec<f64> = (0..t).map(|j| 1.0 / (lambdas[j] + rho)).collect();
            let g: Vec<f64> = (0..t).map(|j| proj[j] - u(j).dot(&yi)).collect();
            let mut cap = Matrix2::identity();
            let mut v_dinv_g = Vector2::zeros();
            for j in 0..t {
                let uj = u(j);
                let vj = uj * lambdas[j];
                cap -= vj * uj.transpose() * d_inv[j];
                v_dinv_g += vj * (d_inv[j] * g[j]);
            }
            let Some(cap_inv) = cap.try_inverse() else {
                return Vector2::zeros();
            };
            let corr = cap_inv * v_dinv_g;
            // z = D⁻¹ g + D⁻¹ U corr ; estimate = V z
            let mut est = Vector2::zeros();
            for j in 0..t {
                let uj = u(j);
                let zj = d_inv[j] * (g[j] + uj.dot(&corr));
                est += uj * (lambdas[j] * zj);
            }
            est
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct LmmseOptions {
    pub solver: LmmseSolver,
    /// Selectors run on the full set to mark their choice on the curve.
    pub selectors: Option<SelectorSuite>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmseResult {
    pub errors: BTreeMap<usize, f64>,
    pub argmin_t: usize,
    pub selected_orders: BTreeMap<SelectionMethod, usize>,
}

impl LmmseResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,e_lmmse\n");
        for (t, e) in &self.errors {
            let _ = writeln!(out, "{},{}", t, fmt_f64(*e));
        }
        out
    }

    pub fn selected_json(&self) -> serde_json::Value {
        let orders: serde_json::Map<String, serde_json::Value> = self
            .selected_orders
            .iter()
            .map(|(m, t)| (m.name().to_string(), (*t).into()))
            .collect();
        serde_json::json!({
            "argmin_t": self.argmin_t,
            "selected_orders": orders,
        })
    }
}

/// Leave-one-out missing-landmark error for every model order:
/// `e(t) = (1/M)(2/N) Σ_m Σ_i ‖ŷ_i − y_i‖²`.
pub fn lmmse_curve(set: &ShapeSet, opts: &LmmseOptions) -> Result<LmmseResult> {
    let m = set.len();
    if m < 3 {
        return Err(Error::TooFewSamples { required: 3, got: m });
    }
    let aligned;
    let set = if set.is_aligned() {
        set
    } else {
        aligned = generalized_procrustes_with(set, &GpaOptions::default())?;
        &aligned
    };
    let n = set.dim();
    let data = set.to_matrix();

    let folds: Vec<(PdmModel, DVector<f64>)> = (0..m)
        .into_par_iter()
        .map(|left_out| {
            let keep: Vec<usize> = (0..m).filter(|&k| k != left_out).collect();
            let train = data.select_columns(&keep);
            let model = PdmModel::from_columns(&train)?;
            let y = data.column(left_out) - &model.mean;
            Ok((model, y))
        })
        .collect::<Result<_>>()?;

    // capped at the similarity shape-space dimension N - 4
    let mut t_max = n.min(m - 2).min(n.saturating_sub(4).max(1));
    let rank = folds.iter().map(|(f, _)| f.positive_rank()).min().unwrap_or(0);
    if rank > 0 {
        t_max = t_max.min(rank);
    }
    if t_max == 0 {
        return Err(Error::TooFewSamples { required: 3, got: m });
    }

    let per_fold: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|(model, y)| -> Result<Vec<f64>> {
            (1..=t_max)
                .map(|t| {
                    let basis = model.eigvecs.columns(0, t).into_owned();
                    let lambdas = model.eigvals.rows(0, t).into_owned();
                    let sq: f64 = match opts.solver {
                        LmmseSolver::Ridge => lmmse_all_landmarks(&basis, &lambdas, y)
                            .iter()
                            .enumerate()
                            .map(|(i, est)| (est - Vector2::new(y[2 * i], y[2 * i + 1])).norm_squared())
                            .sum(),
                        LmmseSolver::PseudoInverse => {
                            let pdm = TruncatedPdm {
                                mean: model.mean.clone(),
                                basis,
                                lambdas,
                                n_train: model.n_train,
                                total_variance: model.total_variance(),
                            };
                            let mut acc = 0.0;
                            for i in 0..n / 2 {
                                let ya = DVector::from_iterator(n - 2, without_landmark(n, i).map(|r| y[r]));
                                let est = lmmse_estimate_landmark_with(&pdm, &ya, i, opts.solver)?;
                                acc += (est - Vector2::new(y[2 * i], y[2 * i + 1])).norm_squared();
                            }
                            acc
                        }
                    };
                    Ok(sq)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / (m as f64 * (n / 2) as f64);
    let errors: BTreeMap<usize, f64> = (1..=t_max)
        .map(|t| (t, scale * per_fold.iter().map(|f| f[t - 1]).sum::<f64>()))
        .collect();
    let argmin_t = crate::order_select::argmin_smallest(&errors).expect("non-empty curve");

    let mut selected_orders = BTreeMap::new();
    if let Some(suite) = &opts.selectors {
        for (method, t) in suite.run(set)? {
            selected_orders.insert(method, t);
        }
    }
    Ok(LmmseResult {
        errors,
        argmin_t,
        selected_orders,
    })
}
