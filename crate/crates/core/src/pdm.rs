//! Point distribution model: mean shape plus principal modes of variation.
//!
//! Fitting is a symmetric eigendecomposition of the sample covariance of an
//! aligned training set. A [`TruncatedPdm`] keeps the `t` leading modes and
//! defines the plausibility box `|b_i| <= sqrt(lambda_i)` on mode coefficients.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numfmt::join_row;
use crate::shapes::ShapeSet;

/// Eigenvalues at or below this fraction of the largest are rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Noise variances are floored at this fraction of the mean covariance diagonal.
pub const NOISE_FLOOR_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PdmModel {
    pub mean: DVector<f64>,
    /// Orthonormal eigenvectors as columns, ordered by descending eigenvalue.
    pub eigvecs: DMatrix<f64>,
    pub eigvals: DVector<f64>,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPdm {
    pub mean: DVector<f64>,
    /// `N x t`, orthonormal columns.
    pub basis: DMatrix<f64>,
    pub lambdas: DVector<f64>,
    pub n_train: usize,
    /// Trace of the training covariance the modes came from.
    pub total_variance: f64,
}

/// How an out-of-box coefficient vector is brought back into the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClampMode {
    /// Shrink the whole vector by one factor until every coordinate fits.
    UniformScale,
    /// Truncate each offending coordinate to its bound.
    #[default]
    PerCoordinate,
}

/// Fits a PDM to an aligned training set.
pub fn fit_pdm(set: &ShapeSet) -> Result<PdmModel> {
    if !set.is_aligned() {
        return Err(Error::NotAligned);
    }
    PdmModel::from_columns(&set.to_matrix())
}

/// Flips `v` so its largest-magnitude entry (first one on ties) is positive.
fn fix_sign(mut v: DVector<f64>) -> DVector<f64> {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
    v
}

impl PdmModel {
    /// Fits to the columns of an `N x M` data matrix (no alignment check).
    pub fn from_columns(data: &DMatrix<f64>) -> Result<Self> {
        let (n, m) = data.shape();
        if m < 2 {
            return Err(Error::TooFewSamples {
                required: 2,
                got: m,
            });
        }
        let mean = data.column_mean();
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        let mut cov = &centered * centered.transpose() / m as f64;
        // exact symmetry before the solver sees it
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let eigvals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i].max(0.0)));
        let cols: Vec<DVector<f64>> = order
            .iter()
            .map(|&i| fix_sign(eig.eigenvectors.column(i).into_owned()))
            .collect();
        Ok(PdmModel {
            mean,
            eigvecs: DMatrix::from_columns(&cols),
            eigvals,
            n_train: m,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of eigenvalues above the rank tolerance; the largest admissible order.
    pub fn positive_rank(&self) -> usize {
        let top = self.eigvals[0];
        if top <= 0.0 {
            return 0;
        }
        self.eigvals.iter().filter(|&&l| l > RANK_TOL * top).count()
    }

    pub fn total_variance(&self) -> f64 {
        self.eigvals.sum()
    }

    /// `P Λ Pᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.eigvecs[(i, j)] * self.eigvals[j]
        });
        &scaled * self.eigvecs.transpose()
    }

    pub fn truncate(&self, t: usize) -> Result<TruncatedPdm> {
        let max = self.positive_rank();
        if t == 0 || t > max {
            return Err(Error::OrderOutOfRange { order: t, max });
        }
        Ok(TruncatedPdm {
            mean: self.mean.clone(),
            basis: self.eigvecs.columns(0, t).into_owned(),
            lambdas: self.eigvals.rows(0, t).into_owned(),
            n_train: self.n_train,
            total_variance: self.total_variance(),
        })
    }

    pub fn to_text(&self) -> String {
        write_container(
            &self.mean,
            &self.eigvals,
            &self.eigvecs,
            self.n_train,
            self.total_variance(),
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let c = read_container(text)?;
        if c.eigvecs.ncols() != c.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "full model needs t = N, got t = {} and N = {}",
                c.eigvecs.ncols(),
                c.mean.len()
            )));
        }
        Ok(PdmModel {
            mean: c.mean,
            eigvecs: c.eigvecs,
            eigvals: c.eigvals,
            n_train: c.n_train,
        })
    }
}

pub fn truncate(model: &PdmModel, t: usize) -> Result<TruncatedPdm> {
    model.truncate(t)
}

impl TruncatedPdm {
    pub fn new(mean: DVector<f64>, basis: DMatrix<f64>, lambdas: DVector<f64>) -> Result<Self> {
        let (n, t) = basis.shape();
        if mean.len() != n || lambdas.len() != t || t == 0 || t > n {
            return Err(Error::DimensionMismatch(format!(
                "mean {}, basis {n}x{t}, lambdas {}",
                mean.len(),
                lambdas.len()
            )));
        }
        if lambdas.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidConfig("retained eigenvalues must be > 0".into()));
        }
        let gram = basis.transpose() * &basis - DMatrix::identity(t, t);
        if gram.amax() > 1e-10 {
            return Err(Error::InvalidConfig("basis columns are not orthonormal".into()));
        }
        let total_variance = lambdas.sum();
        Ok(TruncatedPdm {
            mean,
            basis,
            lambdas,
            n_train: 0,
            total_variance,
        })
    }

    pub fn order(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn noise_floor(&self) -> f64 {
        let scale = self.total_variance / self.dim() as f64;
        if scale > 0.0 {
            NOISE_FLOOR_FRACTION * scale
        } else {
            f64::MIN_POSITIVE
        }
    }

    /// `P_t diag(λ_t) P_tᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut scaled = self.basis.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.lambdas[j];
        }
        &scaled * self.basis.transpose()
    }

    pub fn to_text(&self) -> String {
        write_container(
            &self.mean,
            &self.lambdas,
            &self.basis,
            self.n_train,
            self.total_variance,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let c = read_container(text)?;
        if c.eigvals.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidConfig("retained eigenvalues must be > 0".into()));
        }
        Ok(TruncatedPdm {
            mean: c.mean,
            basis: c.eigvecs,
            lambdas: c.eigvals,
            n_train: c.n_train,
            total_variance: c.total_variance,
        })
    }
}

struct Container {
    mean: DVector<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
    n_train: usize,
    total_variance: f64,
}

fn write_container(
    mean: &DVector<f64>,
    eigvals: &DVector<f64>,
    eigvecs: &DMatrix<f64>,
    n_train: usize,
    total_variance: f64,
) -> String {
    let mut out = String::from("# pdm-order model v1\nN,t,M1,total_variance\n");
    let _ = writeln!(
        out,
        "{},{},{},{}",
        mean.len(),
        eigvals.len(),
        n_train,
        crate::numfmt::fmt_f64(total_variance)
    );
    let _ = writeln!(out, "{}", join_row(mean.iter().copied()));
    let _ = writeln!(out, "{}", join_row(eigvals.iter().copied()));
    for col in eigvecs.column_iter() {
        let _ = writeln!(out, "{}", join_row(col.iter().copied()));
    }
    out
}

fn read_container(text: &str) -> Result<Container> {
    let parse_err = |row: usize, message: String| Error::Parse {
        source_name: "model".into(),
        row,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (hrow, header) = lines.next().ok_or_else(|| parse_err(1, "empty model file".into()))?;
    if header.trim() != "N,t,M1,total_variance" {
        return Err(parse_err(hrow + 1, format!("unexpected header {header:?}")));
    }
    let rest: Vec<(usize, &str)> = lines.collect();
    let rows = crate::shapes::parse_rows(
        &rest.iter().map(|(_, l)| *l).collect::<Vec<_>>().join("\n"),
        "model",
    )?;
    let line_of = |k: usize| rest.get(k).map_or(0, |(i, _)| i + 1);
    let meta = rows.first().ok_or_else(|| parse_err(hrow + 2, "missing sizes".into()))?;
    if meta.1.len() != 4 {
        return Err(parse_err(line_of(0), "sizes row needs 4 fields".into()));
    }
    let as_count = |v: f64, k: usize| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(parse_err(line_of(0), format!("field {k} is not a count")))
        }
    };
    let n = as_count(meta.1[0], 0)?;
    let t = as_count(meta.1[1], 1)?;
    let n_train = as_count(meta.1[2], 2)?;
    let total_variance = meta.1[3];
    if rows.len() != 3 + t {
        return Err(parse_err(
            line_of(rows.len().saturating_sub(1)),
            format!("expected {} data rows, found {}", 3 + t, rows.len()),
        ));
    }
    let expect_len = |k: usize, len: usize| -> Result<&Vec<f64>> {
        let r = &rows[k].1;
        if r.len() != len {
            return Err(parse_err(line_of(k), format!("expected {len} values, got {}", r.len())));
        }
        Ok(r)
    };
    let mean = DVector::from_vec(expect_len(1, n)?.clone());
    let eigvals = DVector::from_vec(expect_len(2, t)?.clone());
    let mut cols = Vec::with_capacity(t);
    for k in 0..t {
        cols.push(DVector::from_vec(expect_len(3 + k, n)?.clone()));
    }
    let eigvecs = if t == 0 {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    Ok(Container {
        mean,
        eigvals,
        eigvecs,
        n_train,
        total_variance,
    })
}

/// Pulls `b` into the box `|b_i| <= sqrt(lambda_i)` by uniform scaling,
/// preserving its direction.
pub fn clamp_to_box(b: &DVector<f64>, lambdas: &DVector<f64>) -> DVector<f64> {
    clamp_to_box_with(b, lambdas, ClampMode::UniformScale)
}

pub fn clamp_to_box_with(b: &DVector<f64>, lambdas: &DVector<f64>, mode: ClampMode) -> DVector<f64> {
    debug_assert_eq!(b.len(), lambdas.len());
    match mode {
        ClampMode::UniformScale => {
            let s = b
                .iter()
                .zip(lambdas.iter())
                .filter(|(bi, _)| **bi != 0.0)
                .map(|(bi, l)| l.sqrt() / bi.abs())
                .fold(1.0_f64, f64::min);
            if s < 1.0 {
                let mut out = b * s;
                // rounding can leave the binding coordinate a hair outside
                for (o, l) in out.iter_mut().zip(lambdas.iter()) {
                    let bound = l.sqrt();
                    *o = o.clamp(-bound, bound);
                }
                out
            } else {
                b.clone()
            }
        }
        ClampMode::PerCoordinate => DVector::from_iterator(
            b.len(),
            b.iter().zip(lambdas.iter()).map(|(bi, l)| {
                let bound = l.sqrt();
                bi.clamp(-bound, bound)
            }),
        ),
    }
}

/// Unconstrained weighted least-squares coefficients
/// `(Pᵀ Σ⁻¹ P)⁻¹ Pᵀ Σ⁻¹ Y` for diagonal `Σ`.
pub fn gls_unconstrained(
    pdm: &TruncatedPdm,
    y: &DMatrix<f64>,
    sigma_diag: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let (n, t) = pdm.basis.shape();
    if y.nrows() != n || sigma_diag.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "basis has {n} rows, Y has {}, sigma has {}",
            y.nrows(),
            sigma_diag.len()
        )));
    }
    // Pᵀ W with W = Σ⁻¹
    let mut ptw = pdm.basis.transpose();
    for (i, mut col) in ptw.column_iter_mut().enumerate() {
        col /= sigma_diag[i];
    }
    let normal = &ptw * &pdm.basis;
    let rhs = &ptw * y;
    let chol = normal
        .cholesky()
        .ok_or(Error::SingularSystem { order: t })?;
    let b = chol.solve(&rhs);
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem { order: t });
    }
    Ok(b)
}

/// Box-constrained generalized least-squares coefficients of each column of
/// `y`: the unconstrained solution, then brought into the box with the
/// default [`ClampMode`].
pub fn project_constrained(
    pdm: &TruncatedPdm,
    y: &DMatrix<f64>,
    sigma_diag: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    project_constrained_with(pdm, y, sigma_diag, ClampMode::default())
}

pub fn project_constrained_with(
    pdm: &TruncatedPdm,
    y: &DMatrix<f64>,
    sigma_diag: &DVector<f64>,
    mode: ClampMode,
) -> Result<DMatrix<f64>> {
    let mut b = gls_unconstrained(pdm, y, sigma_diag)?;
    for mut col in b.column_iter_mut() {
        let clamped = clamp_to_box_with(&col.clone_owned(), &pdm.lambdas, mode);
        col.copy_from(&clamped);
    }
    Ok(b)
}

/// `P_t B` (the mean is not added).
pub fn reconstruct(pdm: &TruncatedPdm, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != pdm.order() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients have {} rows, model order is {}",
            b.nrows(),
            pdm.order()
        )));
    }
    Ok(&pdm.basis * b)
}

/// `Tr{(Y − P B)ᵀ Σ⁻¹ (Y − P B)}` for diagonal `Σ`.
pub fn weighted_residual(
    pdm: &TruncatedPdm,
    y: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma_diag: &DVector<f64>,
) -> f64 {
    let e = y - &pdm.basis * b;
    e.row_iter()
        .zip(sigma_diag.iter())
        .map(|(row, s)| row.norm_squared() / s)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_model() -> PdmModel {
        // three 1-landmark "shapes" (N=2): (1,0), (-1,0), (0,0)
        let data = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        PdmModel::from_columns(&data).unwrap()
    }

    #[test]
    fn toy_covariance_by_hand() {
        let m = toy_model();
        assert_abs_diff_eq!(m.eigvals[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.eigvals[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.eigvecs[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.eigvecs[(1, 0)], 0.0, epsilon = 1e-15);
        assert_eq!(m.positive_rank(), 1);
    }

    #[test]
    fn identical_shapes_have_zero_spectrum() {
        let data = DMatrix::from_fn(6, 4, |i, _| i as f64);
        let m = PdmModel::from_columns(&data).unwrap();
        assert!(m.eigvals.iter().all(|&l| l == 0.0));
        assert_eq!(m.positive_rank(), 0);
        assert!(matches!(m.truncate(1), Err(Error::OrderOutOfRange { .. })));
    }

    #[test]
    fn truncate_bounds() {
        let m = toy_model();
        assert_eq!(m.truncate(1).unwrap().order(), 1);
        assert!(matches!(
            m.truncate(3),
            Err(Error::OrderOutOfRange { order: 3, max: 1 })
        ));
        assert!(m.truncate(0).is_err());
    }

    #[test]
    fn clamp_examples() {
        let lambdas = DVector::from_vec(vec![4.0, 1.0]);
        let inside = DVector::from_vec(vec![1.0, -0.5]);
        assert_eq!(clamp_to_box(&inside, &lambdas), inside);

        let twice = DVector::from_vec(vec![4.0, 0.0]);
        assert_eq!(clamp_to_box(&twice, &lambdas).as_slice(), &[2.0, 0.0]);

        // s = min(1, 2/6, 1/1) = 1/3
        let b = DVector::from_vec(vec![6.0, 1.0]);
        let c = clamp_to_box(&b, &lambdas);
        assert_abs_diff_eq!(c[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn per_coordinate_clamp() {
        let lambdas = DVector::from_vec(vec![4.0, 1.0]);
        let b = DVector::from_vec(vec![6.0, -0.5]);
        let c = clamp_to_box_with(&b, &lambdas, ClampMode::PerCoordinate);
        assert_eq!(c.as_slice(), &[2.0, -0.5]);
    }

    #[test]
    fn reconstruct_checks_dims() {
        let t = toy_model().truncate(1).unwrap();
        assert!(reconstruct(&t, &DMatrix::zeros(2, 3)).is_err());
        assert_eq!(reconstruct(&t, &DMatrix::zeros(1, 3)).unwrap(), DMatrix::zeros(2, 3));
    }

    #[test]
    fn text_container_round_trip() {
        let m = toy_model();
        let back = PdmModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let t = m.truncate(1).unwrap();
        assert_eq!(TruncatedPdm::from_text(&t.to_text()).unwrap(), t);
        // a truncated file is not a full model
        assert!(PdmModel::from_text(&t.to_text()).is_err());
    }

    #[test]
    fn singular_weights_are_reported() {
        let t = toy_model().truncate(1).unwrap();
        let y = DMatrix::from_element(2, 2, 1.0);
        let sigma = DVector::from_vec(vec![f64::INFINITY, 1.0]);
        assert!(matches!(
            project_constrained(&t, &y, &sigma),
            Err(Error::SingularSystem { order: 1 })
        ));
    }
}
