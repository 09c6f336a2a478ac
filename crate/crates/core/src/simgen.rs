//! Synthetic landmark data with a known model order.
//!
//! Samples are drawn as `mean + P_t b + ε` in the model frame, with `b`
//! inside the plausibility box and white Gaussian `ε` whose variance is set
//! by the SNR `β` (in dB): the ratio of the smallest signal eigenvalue of the
//! generated data, `Var(b_t)`, to `σ²`. Each sample is then moved by a random
//! similarity transform and the set is re-aligned with generalized
//! Procrustes, which colors the noise.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdm::{PdmModel, TruncatedPdm};
use crate::shapes::{generalized_procrustes_with, GpaOptions, Shape, ShapeSet, Similarity};

/// Leading eigenvalue of procedural spectra, relative to a unit-centroid-size mean.
pub const DEFAULT_LEADING_EIGENVALUE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Spectrum {
    Geometric { first: f64, ratio: f64 },
    FromList(Vec<f64>),
}

impl Spectrum {
    pub fn geometric(ratio: f64) -> Self {
        Spectrum::Geometric {
            first: DEFAULT_LEADING_EIGENVALUE,
            ratio,
        }
    }

    pub fn values(&self, t: usize) -> Result<Vec<f64>> {
        let vals = match self {
            Spectrum::Geometric { first, ratio } => {
                if !(*first > 0.0 && *ratio > 0.0 && *ratio <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "geometric spectrum needs first > 0 and ratio in (0, 1], got {first}, {ratio}"
                    )));
                }
                (0..t).map(|i| first * ratio.powi(i as i32)).collect()
            }
            Spectrum::FromList(v) => {
                if v.len() != t {
                    return Err(Error::InvalidConfig(format!(
                        "spectrum lists {} values for order {t}",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if vals.iter().any(|&l| !(l > 0.0)) || vals.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig(
                "spectrum must be positive and non-increasing".into(),
            ));
        }
        Ok(vals)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeedSource {
    FromData(String),
    Procedural {
        n_landmarks: usize,
        spectrum: Spectrum,
        rng_seed: u64,
    },
}

/// Generating model with known order.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedPdm {
    pub underlying: TruncatedPdm,
    pub source: SeedSource,
}

impl SeedPdm {
    pub fn order(&self) -> usize {
        self.underlying.order()
    }

    /// Smallest retained eigenvalue.
    pub fn smallest_lambda(&self) -> f64 {
        self.underlying.lambdas.min()
    }
}

/// Per-sample coefficient distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CoefficientDist {
    /// `b_i ~ Uniform(−sqrt(λ_i), sqrt(λ_i))`.
    #[default]
    UniformBox,
    /// `b_i ~ N(0, λ_i)` restricted to the box by rejection.
    TruncatedGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRanges {
    /// Half-width of the rotation range, radians.
    pub rotation: f64,
    /// Half-width of the log-scale range.
    pub log_scale: f64,
    /// Half-width of the translation range, in units of the mean centroid size.
    pub translation: f64,
}

impl Default for TransformRanges {
    fn default() -> Self {
        TransformRanges {
            rotation: PI,
            log_scale: 0.2,
            translation: 0.5,
        }
    }
}

impl TransformRanges {
    pub fn none() -> Self {
        TransformRanges {
            rotation: 0.0,
            log_scale: 0.0,
            translation: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub m: usize,
    /// `+inf` disables noise.
    pub beta_db: f64,
    pub transforms: TransformRanges,
    pub rng_seed: u64,
    pub realign: bool,
    pub coefficients: CoefficientDist,
    pub gpa: GpaOptions,
}

impl SimConfig {
    pub fn new(m: usize, beta_db: f64, rng_seed: u64) -> Self {
        SimConfig {
            m,
            beta_db,
            transforms: TransformRanges::default(),
            rng_seed,
            realign: true,
            coefficients: CoefficientDist::UniformBox,
            gpa: GpaOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 samples, got {}", self.m)));
        }
        if self.beta_db.is_nan() || self.beta_db == f64::NEG_INFINITY {
            return Err(Error::InvalidConfig(format!("beta must be finite, got {}", self.beta_db)));
        }
        let r = &self.transforms;
        if [r.rotation, r.log_scale, r.translation]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidConfig("transform ranges must be finite and >= 0".into()));
        }
        Ok(())
    }
}

impl CoefficientDist {
    /// Variance of a coefficient drawn with box half-width `sqrt(lambda)`.
    pub fn variance(self, lambda: f64) -> f64 {
        match self {
            CoefficientDist::UniformBox => lambda / 3.0,
            CoefficientDist::TruncatedGaussian => {
                // N(0,1) truncated to [-1, 1]: 1 - 2 phi(1) / (2 Phi(1) - 1)
                let phi1 = (-0.5f64).exp() / (2.0 * PI).sqrt();
                let mass = 0.682_689_492_137_085_9;
                lambda * (1.0 - 2.0 * phi1 / mass)
            }
        }
    }
}

/// Noise variance for SNR `beta_db`: the smallest signal eigenvalue of the
/// generated data (the variance of the last retained coefficient) divided by
/// `10^(β/10)`.
pub fn noise_variance(seed: &SeedPdm, beta_db: f64, dist: CoefficientDist) -> f64 {
    if beta_db == f64::INFINITY {
        0.0
    } else {
        dist.variance(seed.smallest_lambda()) / 10f64.powf(beta_db / 10.0)
    }
}

fn gram_schmidt_push(basis: &mut Vec<DVector<f64>>, mut v: DVector<f64>) -> bool {
    let start = v.norm();
    // two passes for numerical orthogonality
    for _ in 0..2 {
        for q in basis.iter() {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
    }
    let left = v.norm();
    if left <= 1e-8 * start {
        return false;
    }
    basis.push(v / left);
    true
}

/// Procedural stand-in for an anatomy-derived seed model: an ellipse with
/// low-frequency radial bumps as the mean, and smooth sinusoidal landmark
/// displacement fields as modes, orthogonal to the similarity directions of
/// the mean.
pub fn make_seed_pdm_procedural(
    n_landmarks: usize,
    t: usize,
    spectrum: &Spectrum,
    rng_seed: u64,
) -> Result<SeedPdm> {
    if n_landmarks < 3 {
        return Err(Error::InvalidConfig(format!(
            "need at least 3 landmarks, got {n_landmarks}"
        )));
    }
    let n = 2 * n_landmarks;
    // 4 dimensions are taken by translation, rotation and scale
    let max_t = n - 4;
    if t == 0 || t > max_t {
        return Err(Error::OrderOutOfRange { order: t, max: max_t });
    }
    let lambdas = spectrum.values(t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let angles: Vec<f64> = (0..n_landmarks)
        .map(|k| 2.0 * PI * k as f64 / n_landmarks as f64)
        .collect();
    let bumps: Vec<(f64, f64, f64)> = (2..=4)
        .map(|f| (f as f64, rng.gen_range(0.0..0.08), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let mut mean = DVector::zeros(n);
    for (k, &th) in angles.iter().enumerate() {
        let r = 1.0 + bumps.iter().map(|(f, a, p)| a * (f * th + p).cos()).sum::<f64>();
        mean[2 * k] = r * th.cos();
        mean[2 * k + 1] = 0.6 * r * th.sin();
    }
    let (cx, cy) = Shape::from_vector(mean.clone())?.centroid();
    for k in 0..n_landmarks {
        mean[2 * k] -= cx;
        mean[2 * k + 1] -= cy;
    }
    mean /= mean.norm();

    let mut span: Vec<DVector<f64>> = Vec::with_capacity(n);
    let tangents = [
        DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { 0.0 }),
        DVector::from_fn(n, |i, _| if i % 2 == 1 { 1.0 } else { 0.0 }),
        mean.clone(),
        DVector::from_fn(n, |i, _| if i % 2 == 0 { -mean[i + 1] } else { mean[i - 1] }),
    ];
    for v in tangents {
        gram_schmidt_push(&mut span, v);
    }
    let excluded = span.len();

    let mut freq = 1;
    while span.len() - excluded < t && freq <= n_landmarks {
        let f = freq as f64;
        let patterns = [
            DVector::from_fn(n, |i, _| if i % 2 == 0 { (f * angles[i / 2]).cos() } else { 0.0 }),
            DVector::from_fn(n, |i, _| if i % 2 == 0 { (f * angles[i / 2]).sin() } else { 0.0 }),
            DVector::from_fn(n, |i, _| if i % 2 == 1 { (f * angles[i / 2]).cos() } else { 0.0 }),
            DVector::from_fn(n, |i, _| if i % 2 == 1 { (f * angles[i / 2]).sin() } else { 0.0 }),
        ];
        // random mixing inside one frequency band keeps modes smooth but seed-specific
        for _ in 0..patterns.len() {
            let mut v = DVector::zeros(n);
            for p in &patterns {
                let w: f64 = StandardNormal.sample(&mut rng);
                v.axpy(w, p, 1.0);
            }
            if span.len() - excluded < t {
                gram_schmidt_push(&mut span, v);
            }
        }
        freq += 1;
    }
    if span.len() - excluded < t {
        return Err(Error::OrderOutOfRange {
            order: t,
            max: span.len() - excluded,
        });
    }
    let cols: Vec<DVector<f64>> = span[excluded..excluded + t].to_vec();
    let basis = DMatrix::from_columns(&cols);
    let underlying = TruncatedPdm::new(mean, basis, DVector::from_vec(lambdas))?;
    Ok(SeedPdm {
        underlying,
        source: SeedSource::Procedural {
            n_landmarks,
            spectrum: spectrum.clone(),
            rng_seed,
        },
    })
}

/// Seed model taken from the leading `t` modes of a real aligned data set.
pub fn seed_pdm_from_data(set: &ShapeSet, t: usize, label: &str) -> Result<SeedPdm> {
    let model = crate::pdm::fit_pdm(set)?;
    Ok(SeedPdm {
        underlying: model.truncate(t)?,
        source: SeedSource::FromData(label.to_string()),
    })
}

/// RNG stream for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_coefficient<R: Rng>(rng: &mut R, lambda: f64, dist: CoefficientDist) -> f64 {
    let bound = lambda.sqrt();
    match dist {
        CoefficientDist::UniformBox => rng.gen_range(-bound..=bound),
        CoefficientDist::TruncatedGaussian => loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 1.0 {
                break z * bound;
            }
        },
    }
}

fn draw_sample(seed: &SeedPdm, cfg: &SimConfig, sigma: f64, index: usize) -> Result<Shape> {
    let pdm = &seed.underlying;
    let mut rng = sample_rng(cfg.rng_seed, index as u64);
    let b = DVector::from_iterator(
        pdm.order(),
        pdm.lambdas
            .iter()
            .map(|&l| draw_coefficient(&mut rng, l, cfg.coefficients)),
    );
    let mut x = &pdm.mean + &pdm.basis * b;
    if sigma > 0.0 {
        for v in x.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    }
    let shape = Shape::from_vector(x)?;
    let r = &cfg.transforms;
    let size = Shape::from_vector(pdm.mean.clone())?.centroid_size();
    let uniform = |rng: &mut ChaCha8Rng, half: f64| {
        if half > 0.0 {
            rng.gen_range(-half..=half)
        } else {
            0.0
        }
    };
    let transform = Similarity {
        rotation: uniform(&mut rng, r.rotation),
        scale: uniform(&mut rng, r.log_scale).exp(),
        translation: (
            uniform(&mut rng, r.translation) * size,
            uniform(&mut rng, r.translation) * size,
        ),
    };
    Ok(shape.transformed(&transform))
}

/// Draws `cfg.m` shapes from `seed`. The result is aligned iff `cfg.realign`.
pub fn sample_shapes(seed: &SeedPdm, cfg: &SimConfig) -> Result<ShapeSet> {
    cfg.validate()?;
    let sigma = noise_variance(seed, cfg.beta_db, cfg.coefficients).sqrt();
    let shapes = (0..cfg.m)
        .into_par_iter()
        .map(|i| draw_sample(seed, cfg, sigma, i))
        .collect::<Result<Vec<_>>>()?;
    let set = ShapeSet::new(shapes)?;
    if cfg.realign {
        generalized_procrustes_with(&set, &cfg.gpa)
    } else {
        Ok(set)
    }
}

/// Ground truth record for a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub true_order: usize,
    pub noise_variance: f64,
    pub beta_db: f64,
    pub samples: usize,
    pub rng_seed: u64,
    pub spectrum: Vec<f64>,
    pub realign: bool,
}

impl SimulationTruth {
    pub fn new(seed: &SeedPdm, cfg: &SimConfig) -> Self {
        SimulationTruth {
            true_order: seed.order(),
            noise_variance: noise_variance(seed, cfg.beta_db, cfg.coefficients),
            beta_db: cfg.beta_db,
            samples: cfg.m,
            rng_seed: cfg.rng_seed,
            spectrum: seed.underlying.lambdas.iter().copied().collect(),
            realign: cfg.realign,
        }
    }
}

/// Full-spectrum model of the seed (for reference comparisons).
pub fn seed_as_model(seed: &SeedPdm) -> PdmModel {
    let pdm = &seed.underlying;
    let n = pdm.dim();
    let mut vecs: Vec<DVector<f64>> = pdm.basis.column_iter().map(|c| c.into_owned()).collect();
    let mut k = 0;
    while vecs.len() < n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        gram_schmidt_push(&mut vecs, e);
        k += 1;
    }
    let mut vals = DVector::zeros(n);
    vals.rows_mut(0, pdm.order()).copy_from(&pdm.lambdas);
    PdmModel {
        mean: pdm.mean.clone(),
        eigvecs: DMatrix::from_columns(&vecs),
        eigvals: vals,
        n_train: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_spectrum_ratio() {
        let seed = make_seed_pdm_procedural(40, 10, &Spectrum::geometric(0.7), 3).unwrap();
        let l = &seed.underlying.lambdas;
        let expected = 0.7f64.powi(-9);
        assert!((l[0] / l[9] - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn basis_is_orthonormal_and_avoids_similarity_directions() {
        let seed = make_seed_pdm_procedural(40, 30, &Spectrum::geometric(0.9), 11).unwrap();
        let p = &seed.underlying.basis;
        let gram = p.transpose() * p - DMatrix::identity(30, 30);
        assert!(gram.amax() < 1e-10);
        let mean = &seed.underlying.mean;
        assert!((p.transpose() * mean).amax() < 1e-10);
        let n = mean.len();
        let tx = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { 0.0 });
        assert!((p.transpose() * tx).amax() < 1e-10);
    }

    #[test]
    fn same_seed_same_model() {
        let a = make_seed_pdm_procedural(20, 5, &Spectrum::geometric(0.7), 9).unwrap();
        let b = make_seed_pdm_procedural(20, 5, &Spectrum::geometric(0.7), 9).unwrap();
        assert_eq!(a, b);
        let c = make_seed_pdm_procedural(20, 5, &Spectrum::geometric(0.7), 10).unwrap();
        assert_ne!(a.underlying.basis, c.underlying.basis);
    }

    #[test]
    fn order_limits() {
        assert!(matches!(
            make_seed_pdm_procedural(5, 7, &Spectrum::geometric(0.7), 0),
            Err(Error::OrderOutOfRange { order: 7, max: 6 })
        ));
        assert!(make_seed_pdm_procedural(5, 6, &Spectrum::geometric(0.7), 0).is_ok());
    }

    #[test]
    fn bad_spectra() {
        assert!(Spectrum::FromList(vec![1.0, 2.0]).values(2).is_err());
        assert!(Spectrum::FromList(vec![1.0, 0.0]).values(2).is_err());
        assert!(Spectrum::FromList(vec![1.0]).values(2).is_err());
        assert!(Spectrum::geometric(1.5).values(3).is_err());
    }

    #[test]
    fn noiseless_samples_stay_in_model_span() {
        let seed = make_seed_pdm_procedural(12, 4, &Spectrum::geometric(0.7), 1).unwrap();
        let mut cfg = SimConfig::new(20, f64::INFINITY, 5);
        cfg.transforms = TransformRanges::none();
        cfg.realign = false;
        let set = sample_shapes(&seed, &cfg).unwrap();
        let p = &seed.underlying.basis;
        for s in set.shapes() {
            let y = s.coords() - &seed.underlying.mean;
            let resid = &y - p * (p.transpose() * &y);
            assert!(resid.amax() < 1e-12);
        }
    }

    #[test]
    fn coefficients_respect_box() {
        let mut rng = sample_rng(1, 0);
        for dist in [CoefficientDist::UniformBox, CoefficientDist::TruncatedGaussian] {
            for _ in 0..1000 {
                assert!(draw_coefficient(&mut rng, 4.0, dist).abs() <= 2.0);
            }
        }
    }

    #[test]
    fn config_validation() {
        let seed = make_seed_pdm_procedural(12, 4, &Spectrum::geometric(0.7), 1).unwrap();
        assert!(sample_shapes(&seed, &SimConfig::new(1, 10.0, 0)).is_err());
        assert!(sample_shapes(&seed, &SimConfig::new(10, f64::NAN, 0)).is_err());
    }
}
