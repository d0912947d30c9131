//! Closed-form performance bounds: the spatial-frequency CRB, the asymptotic
//! MSE of the CME and of the parametric estimator, their convergence slope,
//! and the effect of a mismatched noise variance.

use serde::{Deserialize, Serialize};

use crate::array_model::{steering, steering_derivative};
use crate::error::{Error, Result};

/// How `C_bar_l = E[C_l]` is obtained, `C_l = 6 s2 (rho + s2) / (T N^2 rho alpha_bar_l)`.
#[derive(Debug, Clone, PartialEq)]
pub enum CbarSource {
    /// `alpha_bar_l = rho_l`.
    MeanSubstitution,
    /// `E[1 / alpha_bar_l] = T / ((T - 1) rho_l)` for exponential gain powers; needs `T >= 2`.
    InverseMoment,
    /// The realized `alpha_bar_l` of one draw.
    Realized(Vec<f64>),
    /// `C_bar = 0`, which turns the CME expression into the parametric one.
    Zero,
}

/// Inputs of the asymptotic MSE expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    n_rx: usize,
    coherence_len: usize,
    pub rhos: Vec<f64>,
    pub noise_var: f64,
    pub c_bars: Vec<f64>,
    /// Single-source spatial-frequency CRB, shared by all paths.
    pub crb_omega: f64,
}

impl BoundInputs {
    pub fn new(n_rx: usize, rhos: &[f64], noise_var: f64, coherence_len: usize, cbar: CbarSource) -> Result<Self> {
        if n_rx < 2 {
            return Err(Error::InvalidArgument(format!("bounds need n_rx >= 2, got {n_rx}")));
        }
        if coherence_len == 0 {
            return Err(Error::InvalidArgument("coherence length must be at least 1".into()));
        }
        if !(noise_var >= 0.0) || !noise_var.is_finite() {
            return Err(Error::InvalidArgument(format!("noise variance must be non-negative, got {noise_var}")));
        }
        if rhos.is_empty() || rhos.iter().any(|&r| !(r >= 0.0)) {
            return Err(Error::InvalidArgument("gain variances must be non-empty and non-negative".into()));
        }
        let n = n_rx as f64;
        let t = coherence_len as f64;
        let c_of = |rho: f64, inv_abar: f64| {
            if rho == 0.0 {
                0.0
            } else {
                6.0 * noise_var * (rho + noise_var) / (t * n * n * rho) * inv_abar
            }
        };
        let c_bars = match &cbar {
            CbarSource::Zero => vec![0.0; rhos.len()],
            CbarSource::MeanSubstitution => rhos.iter().map(|&r| c_of(r, 1.0 / r)).collect(),
            CbarSource::InverseMoment => {
                if coherence_len < 2 {
                    return Err(Error::InvalidArgument("E[1/alpha_bar] diverges for T = 1".into()));
                }
                rhos.iter().map(|&r| c_of(r, t / ((t - 1.0) * r))).collect()
            }
            CbarSource::Realized(abar) => {
                if abar.len() != rhos.len() {
                    return Err(Error::InvalidArgument("realized gain powers have the wrong length".into()));
                }
                rhos.iter().zip(abar).map(|(&r, &a)| c_of(r, 1.0 / a)).collect()
            }
        };
        Ok(BoundInputs {
            n_rx,
            coherence_len,
            rhos: rhos.to_vec(),
            noise_var,
            c_bars,
            crb_omega: crb_omega(n_rx, coherence_len, noise_var)?,
        })
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn coherence_len(&self) -> usize {
        self.coherence_len
    }

    /// `B = N_R^2 / 24`.
    pub fn b(&self) -> f64 {
        let n = self.n_rx as f64;
        n * n / 24.0
    }

    /// Same inputs at another noise variance, keeping the `C_bar` convention.
    pub fn with_noise_var(&self, noise_var: f64, cbar: CbarSource) -> Result<Self> {
        BoundInputs::new(self.n_rx, &self.rhos, noise_var, self.coherence_len, cbar)
    }

    fn shrinkage(&self, rho: f64, believed_noise_var: f64) -> f64 {
        if rho == 0.0 {
            0.0
        } else {
            rho / (rho + believed_noise_var)
        }
    }
}

/// Reduced form `6 s2 / (T (N^2 - 1))` of the spatial-frequency CRB.
pub fn crb_omega(n_rx: usize, coherence_len: usize, noise_var: f64) -> Result<f64> {
    if n_rx < 2 || coherence_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "CRB needs n_rx >= 2 and T >= 1, got n_rx = {n_rx}, T = {coherence_len}"
        )));
    }
    let n = n_rx as f64;
    Ok(6.0 * noise_var / (coherence_len as f64 * (n * n - 1.0)))
}

/// Matrix form `s2 / (2T) [Re(da^H P da)]^-1` with the projector `P = I - a a^H`.
pub fn crb_omega_matrix(n_rx: usize, coherence_len: usize, noise_var: f64, omega: f64) -> Result<f64> {
    if n_rx < 2 || coherence_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "CRB needs n_rx >= 2 and T >= 1, got n_rx = {n_rx}, T = {coherence_len}"
        )));
    }
    let a = steering(omega, n_rx);
    let da = steering_derivative(omega, n_rx);
    // da^H (I - a a^H) da = |da|^2 - |a^H da|^2
    let quad = da.norm_squared() - a.dotc(&da).norm_sqr();
    Ok(noise_var / (2.0 * coherence_len as f64) / quad)
}

/// Asymptotic MSE of the CME,
/// `N - 2 sum s (rho (1 - 2 B Cbar) - 2 B crb) + sum s^2 (rho (1 - 4 B Cbar) - 2 B crb + s2)`.
pub fn cme_asymptotic_mse(inputs: &BoundInputs) -> f64 {
    asymptotic_mse(inputs, true, inputs.noise_var)
}

/// Asymptotic MSE of the parametric estimator: the CME expression without the `Cbar` terms.
pub fn pbce_asymptotic_mse(inputs: &BoundInputs) -> f64 {
    asymptotic_mse(inputs, false, inputs.noise_var)
}

fn asymptotic_mse(inputs: &BoundInputs, with_cbar: bool, believed_noise_var: f64) -> f64 {
    let b = inputs.b();
    let crb_term = 2.0 * b * inputs.crb_omega;
    let mut mse = inputs.n_rx as f64;
    for (&rho, &cbar) in inputs.rhos.iter().zip(&inputs.c_bars) {
        let s = inputs.shrinkage(rho, believed_noise_var);
        if s == 0.0 {
            continue;
        }
        let cbar = if with_cbar { cbar } else { 0.0 };
        mse -= 2.0 * s * (rho * (1.0 - 2.0 * b * cbar) - crb_term);
        mse += s * s * (rho * (1.0 - 4.0 * b * cbar) - crb_term + inputs.noise_var);
    }
    mse
}

/// CME minus parametric asymptotic MSE in closed form,
/// `4 B sum Cbar rho^2 s2 / (rho + s2)^2`.
pub fn asymptotic_mse_difference(inputs: &BoundInputs) -> f64 {
    let b = inputs.b();
    let s2 = inputs.noise_var;
    inputs
        .rhos
        .iter()
        .zip(&inputs.c_bars)
        .filter(|(&rho, _)| rho > 0.0)
        .map(|(&rho, &cbar)| 4.0 * b * cbar * rho * rho * s2 / ((rho + s2) * (rho + s2)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchGap {
    /// Parametric asymptotic MSE with `(1 + eps) s2` in the shrinkage minus the matched value.
    pub exact: f64,
    /// `sum rho^2 (eps s2)^2 / (rho + s2)^3`.
    pub leading: f64,
}

/// Effect of a believed noise variance `(1 + eps) s2` on the parametric
/// asymptotic MSE. Only the shrinkage sees the mismatch; the physical noise
/// and the CRB stay at `s2`.
pub fn mismatch_gap(inputs: &BoundInputs, epsilon: f64) -> Result<MismatchGap> {
    if !(epsilon > -1.0) {
        return Err(Error::InvalidArgument(format!("mismatch factor must exceed -1, got {epsilon}")));
    }
    let s2 = inputs.noise_var;
    let crb_term = 2.0 * inputs.b() * inputs.crb_omega;
    let (mut exact, mut leading) = (0.0, 0.0);
    for &rho in inputs.rhos.iter().filter(|&&rho| rho > 0.0) {
        // difference of the two evaluations, factored to avoid cancellation against N
        let s = rho / (rho + s2);
        let s_hat = rho / (rho + (1.0 + epsilon) * s2);
        let ds = -epsilon * rho * s2 / ((rho + s2) * (rho + (1.0 + epsilon) * s2));
        let a = rho - crb_term;
        exact += ds * ((a + s2) * (s_hat + s) - 2.0 * a);
        leading += rho * rho * (epsilon * s2).powi(2) / (rho + s2).powi(3);
    }
    Ok(MismatchGap { exact, leading })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Noise variances that entered the fit.
    pub used: Vec<f64>,
    /// Noise variances dropped because the gap underflowed.
    pub dropped: Vec<f64>,
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("log-log fit needs at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("log-log fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, intercept, r_squared))
}

const UNDERFLOW: f64 = 1e-300;
const MIN_POINTS: usize = 4;

/// Log-log slope of `|f(s2) - g(s2)|` over the noise-variance grid.
///
/// The grid needs at least four points spanning two decades. Points where
/// the gap underflows are dropped with a warning; if fewer than four
/// remain the fit is refused.
pub fn convergence_slope<F, G>(f: F, g: G, grid: &[f64]) -> Result<SlopeFit>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if grid.len() < MIN_POINTS {
        return Err(Error::InvalidArgument(format!("slope grid needs at least {MIN_POINTS} points")));
    }
    if grid.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("noise variances must be positive".into()));
    }
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(0.0, f64::max);
    if hi / lo < 100.0 * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument("slope grid must span at least two decades".into()));
    }
    let (mut used, mut dropped, mut gaps) = (vec![], vec![], vec![]);
    for &s2 in grid {
        let gap = (f(s2) - g(s2)).abs();
        if gap.is_finite() && gap >= UNDERFLOW {
            used.push(s2);
            gaps.push(gap);
        } else {
            log::warn!("gap {gap:e} at noise variance {s2:e} underflows; dropping the point");
            dropped.push(s2);
        }
    }
    if used.len() < MIN_POINTS {
        return Err(Error::SlopeUnderflow { remaining: used.len() });
    }
    let (slope, intercept, r_squared) = fit_loglog(&used, &gaps)?;
    Ok(SlopeFit { slope, intercept, r_squared, used, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(noise_var: f64, cbar: CbarSource) -> BoundInputs {
        BoundInputs::new(64, &[64.0], noise_var, 1, cbar).unwrap()
    }

    #[test]
    fn crb_reference_values() {
        assert!((crb_omega(64, 1, 1.0).unwrap() - 6.0 / 4095.0).abs() < 1e-18);
        assert!((crb_omega(64, 1, 1.0).unwrap() - 1.46520e-3).abs() < 1e-8);
        assert!((crb_omega_matrix(2, 1, 1.0, 0.3).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(crb_omega(16, 2, 0.5).unwrap() * 2.0, crb_omega(16, 1, 0.5).unwrap());
        assert!(crb_omega(1, 1, 1.0).is_err());
    }

    #[test]
    fn crb_matrix_and_reduced_agree() {
        for n in [2, 3, 4, 8, 16, 64, 128] {
            for w in [-2.0, 0.0, 0.7] {
                let m = crb_omega_matrix(n, 3, 0.2, w).unwrap();
                let r = crb_omega(n, 3, 0.2).unwrap();
                assert!(((m - r) / r).abs() < 1e-10, "n = {n}");
            }
        }
    }

    #[test]
    fn perfect_estimation_limit_is_zero() {
        let i = BoundInputs::new(64, &[64.0], 0.0, 1, CbarSource::Zero).unwrap();
        assert_eq!(cme_asymptotic_mse(&i), 0.0);
        assert_eq!(pbce_asymptotic_mse(&i), 0.0);
    }

    #[test]
    fn pure_noise_limit_is_array_size() {
        let mut i = single(1.0, CbarSource::MeanSubstitution);
        i.rhos = vec![0.0];
        assert_eq!(cme_asymptotic_mse(&i), 64.0);
        assert_eq!(pbce_asymptotic_mse(&i), 64.0);
        // outside the asymptotic region the CRB grows as fast as s shrinks:
        // s * 4 B crb tends to rho N^2 / (N^2 - 1), not to zero
        let i = single(1e12, CbarSource::MeanSubstitution);
        let limit = 64.0 + 64.0 * 4096.0 / 4095.0;
        assert!((pbce_asymptotic_mse(&i) - limit).abs() < 1e-6);
    }

    #[test]
    fn zero_cbar_collapses_cme_to_pbce() {
        let i = BoundInputs::new(32, &[20.0, 8.0, 4.0], 0.3, 4, CbarSource::Zero).unwrap();
        assert_eq!(cme_asymptotic_mse(&i), pbce_asymptotic_mse(&i));
    }

    #[test]
    fn difference_matches_closed_form() {
        for (rhos, s2, t) in [(vec![64.0], 1e-2, 1), (vec![30.0, 20.0, 14.0], 0.5, 16), (vec![1.0, 63.0], 3.0, 2)] {
            let i = BoundInputs::new(64, &rhos, s2, t, CbarSource::MeanSubstitution).unwrap();
            let numeric = cme_asymptotic_mse(&i) - pbce_asymptotic_mse(&i);
            let closed = asymptotic_mse_difference(&i);
            assert!((numeric - closed).abs() < 1e-12 * 64.0, "{numeric} vs {closed}");
        }
    }

    #[test]
    fn high_snr_single_path_levels() {
        // PBCE bound ~ 1.5 s2, difference ~ s2^2 / (T (rho + s2)) under mean substitution
        let s2 = 1e-4;
        let i = single(s2, CbarSource::MeanSubstitution);
        let p = pbce_asymptotic_mse(&i);
        assert!((p / (1.5 * s2) - 1.0).abs() < 1e-3, "{}", p / s2);
        let d = asymptotic_mse_difference(&i);
        assert!((d / (s2 * s2 / (64.0 + s2)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_moment_needs_two_snapshots() {
        assert!(BoundInputs::new(8, &[8.0], 0.1, 1, CbarSource::InverseMoment).is_err());
        let a = BoundInputs::new(8, &[8.0], 0.1, 4, CbarSource::InverseMoment).unwrap();
        let b = BoundInputs::new(8, &[8.0], 0.1, 4, CbarSource::MeanSubstitution).unwrap();
        assert!((a.c_bars[0] / b.c_bars[0] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn slope_two_single_path() {
        let grid = [1e-1, 1e-2, 1e-3, 1e-4];
        let fit = convergence_slope(
            |s| cme_asymptotic_mse(&single(s, CbarSource::MeanSubstitution)),
            |s| pbce_asymptotic_mse(&single(s, CbarSource::MeanSubstitution)),
            &grid,
        )
        .unwrap();
        assert!((fit.slope - 2.0).abs() < 0.05, "{}", fit.slope);
        assert!(fit.r_squared > 0.999);
    }

    #[test]
    fn identical_functions_underflow() {
        let f = |s: f64| s;
        let r = convergence_slope(f, f, &[1e-1, 1e-2, 1e-3, 1e-4]);
        assert!(matches!(r, Err(Error::SlopeUnderflow { remaining: 0 })));
    }

    #[test]
    fn linear_gap_control_has_slope_one() {
        let base = |s| cme_asymptotic_mse(&single(s, CbarSource::MeanSubstitution));
        let fit = convergence_slope(base, |s| base(s) + 0.7 * s, &[1e-1, 1e-2, 1e-3, 1e-4]).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.05, "{}", fit.slope);
    }

    #[test]
    fn slope_grid_preconditions() {
        let f = |s: f64| s * s;
        let g = |_| 0.0;
        assert!(convergence_slope(f, g, &[1e-1, 1e-2, 1e-3]).is_err());
        assert!(convergence_slope(f, g, &[1e-1, 8e-2, 6e-2, 4e-2]).is_err());
        let fit = convergence_slope(f, g, &[1e-1, 1e-2, 1e-3, 1e-4]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatch_gap_behaviour() {
        let i = single(1e-2, CbarSource::MeanSubstitution);
        assert_eq!(mismatch_gap(&i, 0.0).unwrap().exact, 0.0);
        assert!(mismatch_gap(&i, -1.0).is_err());
        for s2 in [1e-1, 1e-2] {
            let i = single(s2, CbarSource::MeanSubstitution);
            let twice = asymptotic_mse(&i, false, 1.5 * s2) - asymptotic_mse(&i, false, s2);
            let g = mismatch_gap(&i, 0.5).unwrap();
            assert!((g.exact - twice).abs() < 1e-13, "{} vs {twice}", g.exact);
        }
        let mut last = f64::INFINITY;
        for s2 in [1e-1, 1e-2, 1e-3, 1e-4] {
            let g = mismatch_gap(&single(s2, CbarSource::MeanSubstitution), 0.1).unwrap();
            let dev = (g.exact / g.leading - 1.0).abs();
            assert!(dev < last);
            last = dev;
        }
    }
}
