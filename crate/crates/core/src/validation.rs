//! Fast self-check suite: closed forms against independent numerical
//! references. Each check can be sabotaged on purpose to confirm that it is
//! able to fail.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::array_model::{inner_product_sq, omega_distance, steering, steering_derivative, steering_matrix};
use crate::bounds::{crb_omega, crb_omega_matrix, fit_loglog};
use crate::cme::{check_prior_flatness, smeared_projector, GaussianDensity, Region, SmearingMethod, UniformDensity};
use crate::error::{Error, Result};
use crate::estimators::estimate_gains;
use crate::linalg::{CMatrix, C64};
use crate::rng::trial_rng;

const SUITE_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    SmearedFilter,
    Crb,
    GainEstimator,
    PriorFlatness,
    SteeringDerivative,
}

impl Check {
    pub const ALL: [Check; 5] =
        [Check::SmearedFilter, Check::Crb, Check::GainEstimator, Check::PriorFlatness, Check::SteeringDerivative];

    pub fn name(self) -> &'static str {
        match self {
            Check::SmearedFilter => "smeared_filter",
            Check::Crb => "crb",
            Check::GainEstimator => "gain_estimator",
            Check::PriorFlatness => "prior_flatness",
            Check::SteeringDerivative => "steering_derivative",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Check::ALL.iter().map(|c| c.name()).collect();
            Error::InvalidArgument(format!("unknown check '{s}'; valid checks: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub check: Check,
    pub passed: bool,
    /// Worst deviation found (or the offending ratio for the flatness cases).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

/// Runs every check; `perturb` injects a fault into the named one.
pub fn run_suite(perturb: Option<Check>) -> Vec<CheckOutcome> {
    Check::ALL.iter().map(|&c| run_check(c, perturb == Some(c))).collect()
}

pub fn run_check(check: Check, perturb: bool) -> CheckOutcome {
    let fault = if perturb { 1e-3 } else { 0.0 };
    let result = match check {
        Check::SmearedFilter => smeared_filter(fault),
        Check::Crb => crb(fault),
        Check::GainEstimator => gain_estimator(fault),
        Check::PriorFlatness => prior_flatness(perturb),
        Check::SteeringDerivative => steering_derivative_check(fault),
    };
    match result {
        Ok((worst, tolerance, detail)) => CheckOutcome { check, passed: worst < tolerance, worst, tolerance, detail },
        Err(e) => CheckOutcome { check, passed: false, worst: f64::NAN, tolerance: f64::NAN, detail: e.to_string() },
    }
}

type Measured = Result<(f64, f64, String)>;

/// Closed-form Gaussian-smeared projector against quadrature,
/// 50 random `(omega, C)` pairs with `C` log-uniform in `[1e-6, 1e-1]`, `N = 64`.
fn smeared_filter(fault: f64) -> Measured {
    let mut rng = trial_rng(SUITE_SEED, 1, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let omega = rng.random_range(-PI..PI);
        let c = 10f64.powf(rng.random_range(-6.0..-1.0));
        let closed = smeared_projector(omega, c, 64, SmearingMethod::ClosedForm)?;
        let quad = smeared_projector(omega, c, 64, SmearingMethod::Quadrature)?;
        let d = (closed - quad).iter().map(|z| z.norm()).fold(0.0, f64::max);
        worst = worst.max(d + fault);
    }
    Ok((worst, 1e-8, "max entrywise deviation over 50 pairs, N = 64".into()))
}

/// Projector-form CRB against `6 s2 / (T (N^2 - 1))`.
fn crb(fault: f64) -> Measured {
    let mut worst: f64 = 0.0;
    for n in [2, 4, 8, 16, 64, 128] {
        for (t, s2, omega) in [(1, 1.0, 0.3), (4, 1e-2, -1.2)] {
            let reduced = crb_omega(n, t, s2)?;
            let matrix = crb_omega_matrix(n, t, s2, omega)? * (1.0 + fault);
            worst = worst.max((matrix - reduced).abs() / reduced);
        }
    }
    Ok((worst, 1e-10, "max relative deviation, N in {2, 4, 8, 16, 64, 128}".into()))
}

/// Gain estimator on noiseless model covariances `A C_rho A^H + s2 I`,
/// 100 random instances with `N <= 8`, `L <= 3`.
fn gain_estimator(fault: f64) -> Measured {
    let mut rng = trial_rng(SUITE_SEED, 2, 0);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let n = rng.random_range(2..=8usize);
        let l = rng.random_range(1..=3usize.min(n - 1));
        let omegas: Vec<f64> = (0..l).map(|_| rng.random_range(-PI..PI)).collect();
        // keep the steering matrix well conditioned
        let separated = (0..l).all(|i| ((i + 1)..l).all(|j| omega_distance(omegas[i], omegas[j]) > 0.5));
        if !separated {
            continue;
        }
        let rhos: Vec<f64> = (0..l).map(|_| rng.random_range(0.1..10.0)).collect();
        let s2 = 10f64.powf(rng.random_range(-3.0..0.0));
        let a = steering_matrix(&omegas, n);
        let c_rho = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(l, rhos.iter().map(|&r| C64::new(r, 0.0))));
        let cov = &a * c_rho * a.adjoint() + CMatrix::identity(n, n).scale(s2);
        let est = estimate_gains(&cov, &omegas, s2)?;
        for (e, r) in est.iter().zip(&rhos) {
            worst = worst.max((e * (1.0 + fault) - r).abs() / r);
        }
        done += 1;
    }
    Ok((worst, 1e-9, "max relative error over 100 instances, N <= 8, L <= 3".into()))
}

/// Prior-flatness checker on its three analytic cases. `worst` counts the
/// cases that came out wrong.
fn prior_flatness(perturb: bool) -> Measured {
    let uniform = UniformDensity { lower: vec![-1.0], upper: vec![1.0] };
    let gauss = GaussianDensity { mean: 0.2, std: 0.05 };
    let threshold = if perturb { 1e-12 } else { crate::cme::DEFAULT_FLATNESS_THRESHOLD };
    let flat = check_prior_flatness(&uniform, &Region::interval(-0.5, 0.5), threshold)?;
    let narrow = check_prior_flatness(&gauss, &Region::centered(0.2, 0.05 / 100.0), threshold)?;
    let wide = check_prior_flatness(&gauss, &Region::centered(0.2, 6.0 * 0.05), threshold)?;
    let wrong = [
        !(flat.satisfied && flat.max_log_gradient == 0.0),
        !(narrow.satisfied && narrow.ratio <= 1e-4),
        !(!wide.satisfied && wide.ratio >= 9.0),
    ];
    let count = wrong.iter().filter(|&&w| w).count();
    Ok((
        count as f64,
        0.5,
        format!(
            "uniform ratio {:.1e}, narrow Gaussian ratio {:.1e}, wide Gaussian ratio {:.2}",
            flat.ratio, narrow.ratio, wide.ratio
        ),
    ))
}

/// Analytic steering derivative against a central finite difference.
fn steering_derivative_check(fault: f64) -> Measured {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for n in [2, 8, 64] {
        for omega in [-2.5, 0.0, 0.7] {
            let fd = (steering(omega + h, n) - steering(omega - h, n)).unscale(2.0 * h);
            let d = (steering_derivative(omega, n) - fd).iter().map(|z| z.norm()).fold(0.0, f64::max);
            worst = worst.max(d + fault);
        }
    }
    Ok((worst, 1e-6, "max entrywise deviation, N in {2, 8, 64}".into()))
}

/// Log-log slope of the residual between the steering inner-product kernel
/// and its second-order expansion, over the offsets `deltas`.
pub fn kernel_residual_slope(n: usize, deltas: &[f64]) -> Result<(f64, f64)> {
    let residuals: Vec<f64> = deltas
        .iter()
        .map(|&d| {
            let v = inner_product_sq(0.0, d, n);
            (v.exact - v.approx).abs()
        })
        .collect();
    let (slope, _, r2) = fit_loglog(deltas, &residuals)?;
    Ok((slope, r2))
}
