//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use pdm_order::eval::{lmmse_curve, monte_carlo_order, LmmseOptions, McConfig, SelectorSuite};
use pdm_order::numfmt::fmt_f64;
use pdm_order::order_select::{
    alternating_ml, select_order_proposed, AlternatingOptions, SelectOptions, SelectionMethod,
};
use pdm_order::pdm::{clamp_to_box_with, fit_pdm, ClampMode};
use pdm_order::shapes::{generalized_procrustes, ShapeSet};
use pdm_order::simgen::{make_seed_pdm_procedural, sample_shapes, SeedPdm, SimConfig, Spectrum};
use rand::Rng;

const TRIALS: usize = 100;
const TRUE_T: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
    /// Text artifacts produced by the criterion, compared across reruns.
    csv: String,
}

fn seed_pdm() -> SeedPdm {
    make_seed_pdm_procedural(40, TRUE_T, &Spectrum::geometric(0.7), 1).expect("seed model")
}

fn proposed_only() -> SelectorSuite {
    SelectorSuite {
        methods: vec![SelectionMethod::ProposedAic],
        ..SelectorSuite::default()
    }
}

/// Criteria 1 and 4 share one Monte Carlo run at 20 dB.
fn high_snr() -> (Outcome, Outcome) {
    let start = Instant::now();
    let cfg = McConfig::new(seed_pdm(), 20.0, vec![200], TRIALS, 20_200);
    let summary = monte_carlo_order(&cfg).expect("monte carlo");
    let secs = start.elapsed().as_secs_f64();
    let csv = summary.to_csv() + &summary.histogram_csv();

    let proposed = summary.cell(SelectionMethod::ProposedAic, 200).expect("proposed cell");
    let variance = summary.cell(SelectionMethod::VarianceThreshold, 200).expect("variance cell");
    let proposed_ok = (9.8..=10.2).contains(&proposed.mean_t) && proposed.var_t <= 0.2;
    let ac1 = Outcome {
        pass: proposed_ok && summary.failures == 0 && secs < 300.0,
        detail: format!(
            "beta=20dB M=200 trials={TRIALS}: mean t*={:.3} (want [9.8,10.2]) var={:.3} (want <=0.2) failures={} runtime={secs:.1}s (want <300s)",
            proposed.mean_t, proposed.var_t, summary.failures
        ),
        csv: csv.clone(),
    };
    let ac4 = Outcome {
        pass: variance.mean_t <= 9.5 && proposed_ok,
        detail: format!(
            "beta=20dB M=200: 95% rule mean t={:.3} (want <=9.5), proposed mean t*={:.3} on the same trials",
            variance.mean_t, proposed.mean_t
        ),
        csv,
    };
    (ac1, ac4)
}

/// Criteria 2 and 3 share one Monte Carlo run at 5 dB.
fn moderate_snr() -> (Outcome, Outcome) {
    let counts = vec![10, 20, 40, 100, 200];
    let mut cfg = McConfig::new(seed_pdm(), 5.0, counts.clone(), TRIALS, 5_005);
    cfg.selectors = proposed_only();
    let summary = monte_carlo_order(&cfg).expect("monte carlo");
    let csv = summary.to_csv() + &summary.histogram_csv();
    let means: Vec<f64> = counts
        .iter()
        .map(|&m| summary.cell(SelectionMethod::ProposedAic, m).expect("cell").mean_t)
        .collect();

    let at_200 = means[4];
    let ac2 = Outcome {
        pass: (9.0..=10.5).contains(&at_200) && summary.failures == 0,
        detail: format!("beta=5dB M=200 trials={TRIALS}: mean t*={at_200:.3} (want [9,10.5]) failures={}", summary.failures),
        csv: csv.clone(),
    };
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let capped = means.iter().all(|&m| m <= TRUE_T as f64 + 0.5);
    let listed: Vec<String> = counts
        .iter()
        .zip(&means)
        .map(|(m, t)| format!("M={m}:{t:.2}"))
        .collect();
    let ac3 = Outcome {
        pass: monotone && capped,
        detail: format!("beta=5dB mean t* {} (want non-decreasing, <=10.5)", listed.join(" ")),
        csv,
    };
    (ac2, ac3)
}

/// Criterion 5: every objective trace is non-increasing.
fn monotonicity() -> Outcome {
    let mut r = rng(5);
    let mut worst = f64::NEG_INFINITY;
    let mut bad = 0;
    let mut csv = String::from("instance,N,t,M2,iterations,max_increase\n");
    for k in 0..200 {
        let n = 2 * r.gen_range(2..=20);
        let t = r.gen_range(1..=8.min(n - 1));
        let m2 = r.gen_range(2..=60);
        let pdm = random_model(&mut r, n, t);
        let spread = r.gen_range(0.3..3.0);
        let b = DMatrix::from_fn(t, m2, |i, _| pdm.lambdas[i].sqrt() * spread * r.gen_range(-1.0..1.0));
        let noise_scale: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..1.0)).collect();
        let y = &pdm.basis * b + DMatrix::from_fn(n, m2, |i, _| noise_scale[i] * r.gen_range(-1.0..1.0));

        let fit = alternating_ml(&y, &pdm, &AlternatingOptions::default()).expect("fit");
        let increase = fit
            .objective_trace
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        if increase > 1e-9 {
            bad += 1;
        }
        worst = worst.max(increase);
        csv.push_str(&format!("{k},{n},{t},{m2},{},{}\n", fit.iterations, fmt_f64(increase.max(0.0))));
    }
    Outcome {
        pass: bad == 0,
        detail: format!("200 instances: {bad} traces increase by more than 1e-9 (largest step {worst:.3e})"),
        csv,
    }
}

/// The order criterion computed from scratch for a stored fit.
fn brute_force_score(residuals: &DMatrix<f64>, sigma: &DVector<f64>, t: usize) -> f64 {
    let (n, m2) = residuals.shape();
    let mut log_sum = 0.0;
    let mut weighted = 0.0;
    for i in 0..n {
        log_sum += sigma[i].ln();
        for m in 0..m2 {
            weighted += residuals[(i, m)] * residuals[(i, m)] / sigma[i];
        }
    }
    m2 as f64 * (log_sum + 2.0 * t as f64) + weighted
}

/// Criterion 6: the selected order equals a brute-force argmin.
fn score_oracle() -> Outcome {
    let mut r = rng(6);
    let mut mismatches = 0;
    let mut csv = String::from("instance,N,M,t_star,oracle\n");
    for k in 0..50 {
        let landmarks = r.gen_range(2..=4);
        let n = 2 * landmarks;
        let m = r.gen_range(8..=16);
        let t_true = r.gen_range(1..n);
        let model = random_model(&mut r, n, t_true);
        let coeffs = DMatrix::from_fn(t_true, m, |i, _| model.lambdas[i].sqrt() * r.gen_range(-1.0..1.0));
        let data = &model.basis * coeffs + DMatrix::from_fn(n, m, |_, _| 0.05 * r.gen_range(-1.0..1.0));
        let set = ShapeSet::from_columns(&data).expect("set").assume_aligned();

        let opts = SelectOptions {
            t_max: Some(4),
            keep_fits: true,
            ..SelectOptions::default()
        };
        let result = select_order_proposed(&set, &opts).expect("selection");
        let fits = result.per_order_fits.as_ref().expect("fits kept");
        let m2 = m / 2;
        let mut best: Option<(usize, f64)> = None;
        for (&t, fit) in fits {
            assert_eq!(fit.residuals.ncols(), m2);
            let s = brute_force_score(&fit.residuals, &fit.sigma_diag, t);
            if best.map_or(true, |(_, b)| s < b) {
                best = Some((t, s));
            }
        }
        let oracle = best.expect("at least one order").0;
        if oracle != result.t_star {
            mismatches += 1;
        }
        csv.push_str(&format!("{k},{n},{m},{},{oracle}\n", result.t_star));
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("50 tiny instances: {mismatches} mismatches between t_star and brute-force argmin"),
        csv,
    }
}

/// Criterion 7: LMMSE curve is U-shaped and the selected order sits near its bottom.
fn lmmse_shape() -> Outcome {
    let set = sample_shapes(&seed_pdm(), &SimConfig::new(100, 10.0, 7_007)).expect("shapes");
    let opts = LmmseOptions {
        selectors: Some(proposed_only()),
        ..LmmseOptions::default()
    };
    let result = lmmse_curve(&set, &opts).expect("lmmse curve");
    let e = &result.errors;
    let t_star = result.selected_orders[&SelectionMethod::ProposedAic];
    let t_max = *e.keys().last().expect("non-empty curve");
    let min = e.values().copied().fold(f64::INFINITY, f64::min);
    let pass = e[&1] > e[&t_star] && e[&t_max] > e[&t_star] && e[&t_star] <= 1.1 * min;
    Outcome {
        pass,
        detail: format!(
            "beta=10dB M=100: t*={t_star} argmin={} e(1)={:.4e} e(t*)={:.4e} e(t_max={t_max})={:.4e} e(t*)/min={:.4} (want e(1),e(t_max) > e(t*), ratio <=1.1)",
            result.argmin_t, e[&1], e[&t_star], e[&t_max], e[&t_star] / min
        ),
        csv: result.to_csv(),
    }
}

/// Criterion 8: Procrustes and PCA invariants over seeded random cases.
fn invariants() -> Outcome {
    let mut r = rng(8);
    let (mut gpa, mut ortho, mut recon, mut clamp) = (0.0f64, 0.0f64, 0.0f64, 0);
    for _ in 0..100 {
        let landmarks = r.gen_range(3..15);
        let base = random_shape(&mut r, landmarks);
        let copies = (0..r.gen_range(2..10)).map(|_| base.transformed(&random_similarity(&mut r))).collect();
        let aligned = generalized_procrustes(&ShapeSet::new(copies).unwrap(), 1e-12, 200).unwrap();
        let first = &aligned.shapes()[0];
        for s in aligned.shapes() {
            gpa = gpa.max(s.rmsd(first));
        }

        let n = 2 * landmarks;
        let m = r.gen_range(2..40);
        let data = random_matrix(&mut r, n, m);
        let model = fit_pdm(&ShapeSet::from_columns(&data).unwrap().assume_aligned()).unwrap();
        let v = &model.eigvecs;
        ortho = ortho.max((v.transpose() * v - DMatrix::identity(n, n)).amax());
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &model.mean;
        }
        let cov = &centered * centered.transpose() / m as f64;
        let rebuilt = v * DMatrix::from_diagonal(&model.eigvals) * v.transpose();
        recon = recon.max((rebuilt - cov).amax());

        let t = r.gen_range(1..10);
        let lambdas = DVector::from_fn(t, |_, _| r.gen_range(0.01..5.0));
        let b = DVector::from_fn(t, |_, _| r.gen_range(-8.0..8.0));
        for mode in [ClampMode::UniformScale, ClampMode::PerCoordinate] {
            let once = clamp_to_box_with(&b, &lambdas, mode);
            let inside = once.iter().zip(lambdas.iter()).all(|(v, l)| v.abs() <= l.sqrt() * (1.0 + 1e-15));
            if !inside || clamp_to_box_with(&once, &lambdas, mode) != once {
                clamp += 1;
            }
        }
    }
    Outcome {
        pass: gpa < 1e-8 && ortho < 1e-10 && recon < 1e-8 && clamp == 0,
        detail: format!(
            "100 cases: GPA rmsd {gpa:.1e} (<1e-8), orthonormality {ortho:.1e} (<1e-10), covariance {recon:.1e} (<1e-8), clamp violations {clamp}"
        ),
        csv: String::new(),
    }
}

fn run_criteria_1_to_7() -> Vec<(&'static str, Outcome)> {
    let (ac1, ac4) = high_snr();
    let (ac2, ac3) = moderate_snr();
    vec![
        ("1 order recovery, high SNR", ac1),
        ("2 order recovery, moderate SNR", ac2),
        ("3 small-sample trend", ac3),
        ("4 variance-threshold bias", ac4),
        ("5 alternating monotonicity", monotonicity()),
        ("6 score-oracle equivalence", score_oracle()),
        ("7 LMMSE U-shape", lmmse_shape()),
    ]
}

fn main() {
    // keeps `cargo test -- <filter>` from re-running the whole suite
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }

    let mut lines = run_criteria_1_to_7();
    lines.push(("8 invariant suite", invariants()));

    let first: Vec<String> = lines.iter().take(7).map(|(_, o)| o.csv.clone()).collect();
    let again: Vec<String> = run_criteria_1_to_7().into_iter().map(|(_, o)| o.csv).collect();
    let differing: Vec<usize> = (0..7).filter(|&k| first[k] != again[k]).map(|k| k + 1).collect();
    let bytes: usize = first.iter().map(String::len).sum();
    lines.push((
        "9 determinism",
        Outcome {
            pass: differing.is_empty(),
            detail: format!("rerun of criteria 1-7: {bytes} bytes of CSV, differing criteria {differing:?}"),
            csv: String::new(),
        },
    ));

    let mut failed = 0;
    println!();
    for (name, o) in &lines {
        println!("[{}] AC{name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
