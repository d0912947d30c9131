//! Parameter estimators (Bartlett beamformer, root-MUSIC, least-squares path
//! gains) and the channel estimators built on the conditional LMMSE filter:
//! the parametric Bayesian estimator and the genie-aided reference.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::array_model::{steering_matrix, wrap_omega, ChannelRealization, ObservationBlock};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, poly_eval, poly_roots, CMatrix, CVector, C64, ZERO};

/// Default number of Bartlett grid points over `(-pi, pi]`.
pub const DEFAULT_BARTLETT_GRID: usize = 4096;

/// An `N_R x N_R` linear channel estimator, applied as `h_hat = W y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub matrix: CMatrix,
}

impl Filter {
    pub fn apply(&self, y: &CVector) -> CVector {
        &self.matrix * y
    }

    pub fn n_rx(&self) -> usize {
        self.matrix.nrows()
    }
}

/// How the conditional LMMSE filter treats the steering vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// `A C_rho A^H (A C_rho A^H + sigma^2 I)^-1`.
    Exact,
    /// `sum_l rho_l / (rho_l + sigma^2) a_l a_l^H`, exact for orthogonal steering vectors.
    Favorable,
}

/// Parameters handed to the parametric channel estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate {
    pub omegas_hat: Vec<f64>,
    pub rhos_hat: Vec<f64>,
    /// Noise variance the filter believes in.
    pub noise_var_used: f64,
    /// Set when `rhos_hat` holds the true gain variances.
    pub gains_from_truth: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BartlettEstimate {
    pub omega: f64,
    /// Spectrum value `a^H C a` at the selected grid point.
    pub peak_power: f64,
    /// Set when the spectrum is flat (zero or isotropic covariance); `omega` is then 0.
    pub degenerate: bool,
}

/// Grid-search Bartlett beamformer with optional parabolic refinement.
///
/// The spectrum `a(w)^H C a(w) = (1/n) sum_d r_d e^{j d w}` is evaluated on the
/// whole grid with one FFT of the diagonal sums `r_d` of the covariance.
#[derive(Clone)]
pub struct Bartlett {
    grid_size: usize,
    refine: bool,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Bartlett {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bartlett").field("grid_size", &self.grid_size).field("refine", &self.refine).finish()
    }
}

impl Bartlett {
    pub fn new(grid_size: usize, refine: bool) -> Self {
        let fft = FftPlanner::new().plan_fft_inverse(grid_size);
        Bartlett { grid_size, refine, fft }
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Grid frequency of bin `g`, wrapped into `(-pi, pi]`.
    pub fn grid_omega(&self, g: usize) -> f64 {
        wrap_omega(2.0 * PI * g as f64 / self.grid_size as f64)
    }

    /// Bartlett spectrum on the grid `w_g = 2 pi g / G` (bin order, not sorted by frequency).
    pub fn spectrum(&self, cov: &CMatrix) -> Result<Vec<f64>> {
        let n = cov.nrows();
        if cov.ncols() != n {
            return Err(Error::InvalidArgument("covariance must be square".into()));
        }
        if self.grid_size < 4 * n {
            return Err(Error::InvalidArgument(format!(
                "Bartlett grid of {} points is below 4 * n_rx = {}",
                self.grid_size,
                4 * n
            )));
        }
        let g = self.grid_size;
        let mut buf = vec![ZERO; g];
        for m in 0..n {
            for k in 0..n {
                let d = m as isize - k as isize;
                buf[d.rem_euclid(g as isize) as usize] += cov[(m, k)];
            }
        }
        self.fft.process(&mut buf);
        let inv_n = 1.0 / n as f64;
        Ok(buf.iter().map(|z| z.re * inv_n).collect())
    }

    pub fn estimate(&self, cov: &CMatrix) -> Result<BartlettEstimate> {
        let p = self.spectrum(cov)?;
        let g = self.grid_size;
        let (mut best, mut pmax, mut pmin) = (0usize, f64::NEG_INFINITY, f64::INFINITY);
        for (i, &v) in p.iter().enumerate() {
            if v > pmax {
                pmax = v;
                best = i;
            }
            pmin = pmin.min(v);
        }
        if !(pmax - pmin > 1e-12 * pmax.abs()) {
            log::warn!("Bartlett spectrum is flat (max {pmax:e}); returning omega = 0");
            return Ok(BartlettEstimate { omega: 0.0, peak_power: pmax, degenerate: true });
        }
        let mut omega = 2.0 * PI * best as f64 / g as f64;
        if self.refine {
            let left = p[(best + g - 1) % g];
            let right = p[(best + 1) % g];
            let curvature = left - 2.0 * pmax + right;
            if curvature < 0.0 {
                let offset = (0.5 * (left - right) / curvature).clamp(-0.5, 0.5);
                omega += offset * 2.0 * PI / g as f64;
            }
        }
        Ok(BartlettEstimate { omega: wrap_omega(omega), peak_power: pmax, degenerate: false })
    }
}

impl Default for Bartlett {
    fn default() -> Self {
        Bartlett::new(DEFAULT_BARTLETT_GRID, true)
    }
}

/// Single-path Bartlett estimate of the spatial frequency.
pub fn bartlett_estimate(sample_cov: &CMatrix, n_rx: usize, grid_size: usize, refine: bool) -> Result<BartlettEstimate> {
    if sample_cov.nrows() != n_rx {
        return Err(Error::InvalidArgument(format!(
            "covariance is {}x{}, expected n_rx = {n_rx}",
            sample_cov.nrows(),
            sample_cov.ncols()
        )));
    }
    Bartlett::new(grid_size, refine).estimate(sample_cov)
}

/// Root-MUSIC estimate of `num_paths` spatial frequencies, sorted ascending.
///
/// The null-spectrum polynomial `sum_d q_d z^(d + n - 1)` is built from the
/// diagonal sums `q_d` of the noise-subspace projector and rooted through its
/// companion matrix. Its roots come in pairs `(z, 1/conj(z))`; each pair is
/// collapsed to one candidate whose angle is `arg(z1 + z2)` (this equals
/// `arg(z)` for an exact reflected pair and stays accurate when the pair
/// degenerates into a double root on the unit circle). The `num_paths`
/// candidates closest to the unit circle are returned.
pub fn root_music(sample_cov: &CMatrix, num_paths: usize) -> Result<Vec<f64>> {
    let n = sample_cov.nrows();
    if sample_cov.ncols() != n {
        return Err(Error::InvalidArgument("covariance must be square".into()));
    }
    if num_paths == 0 || num_paths >= n {
        return Err(Error::InvalidArgument(format!("root-MUSIC needs 0 < L < n_rx, got L = {num_paths}, n_rx = {n}")));
    }
    let eig = hermitian_eigen(sample_cov);
    let noise_dim = n - num_paths;
    let en = eig.vectors.columns(0, noise_dim);
    let proj = &en * en.adjoint();

    let mut coeffs = vec![ZERO; 2 * n - 1];
    for m in 0..n {
        for k in 0..n {
            coeffs[m + n - 1 - k] += proj[(m, k)];
        }
    }
    let roots = poly_roots(&coeffs)?;
    let reps: Vec<C64> = roots
        .iter()
        .filter(|z| z.re.is_finite() && z.im.is_finite())
        .map(|&z| if z.norm() <= 1.0 { z } else { C64::new(1.0, 0.0) / z.conj() })
        .collect();

    let mut order: Vec<usize> = (0..reps.len()).collect();
    order.sort_by(|&a, &b| reps[b].norm().total_cmp(&reps[a].norm()));
    let mut paired = vec![false; reps.len()];
    let mut candidates: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &i in &order {
        if paired[i] {
            continue;
        }
        paired[i] = true;
        let partner = order
            .iter()
            .copied()
            .filter(|&j| !paired[j])
            .min_by(|&a, &b| (reps[a] - reps[i]).norm().total_cmp(&(reps[b] - reps[i]).norm()));
        let (omega, closeness) = match partner {
            Some(j) => {
                paired[j] = true;
                ((reps[i] + reps[j]).arg(), 0.5 * (reps[i].norm() + reps[j].norm()))
            }
            None => (reps[i].arg(), reps[i].norm()),
        };
        candidates.push((omega, closeness));
    }
    if candidates.len() < num_paths {
        return Err(Error::RootShortfall { found: candidates.len(), needed: num_paths });
    }
    let on_circle = |w: f64| poly_eval(&coeffs, C64::from_polar(1.0, w)).norm();
    candidates.sort_by(|a, b| {
        if (a.1 - b.1).abs() <= 1e-12 {
            on_circle(a.0).total_cmp(&on_circle(b.0))
        } else {
            b.1.total_cmp(&a.1)
        }
    });
    let mut omegas: Vec<f64> = candidates[..num_paths].iter().map(|c| wrap_omega(c.0)).collect();
    omegas.sort_by(f64::total_cmp);
    Ok(omegas)
}

/// Least-squares gain variances
/// `diag((A^H A)^-1 A^H (C - sigma^2 I) A (A^H A)^-1)`, clamped at zero.
pub fn estimate_gains(sample_cov: &CMatrix, omegas_hat: &[f64], noise_var: f64) -> Result<Vec<f64>> {
    let n = sample_cov.nrows();
    let a = steering_matrix(omegas_hat, n);
    let gram = a.adjoint() * &a;
    let ge = hermitian_eigen(&gram);
    let (lmin, lmax) = (ge.values[0], *ge.values.last().unwrap());
    if !(lmin > 1e-10 * lmax) {
        return Err(Error::UnresolvablePaths { min_eigenvalue: lmin });
    }
    let gram_inv = gram.try_inverse().ok_or(Error::UnresolvablePaths { min_eigenvalue: lmin })?;
    let mut centered = sample_cov.clone();
    for i in 0..n {
        centered[(i, i)] -= noise_var;
    }
    let pinv = &gram_inv * a.adjoint();
    let m = &pinv * centered * pinv.adjoint();
    Ok((0..omegas_hat.len()).map(|l| m[(l, l)].re.max(0.0)).collect())
}

/// Conditional LMMSE filter `W_delta` for path frequencies `omegas` and gain variances `rhos`.
pub fn conditional_lmmse_filter(
    omegas: &[f64],
    rhos: &[f64],
    noise_var: f64,
    n_rx: usize,
    mode: FilterMode,
) -> Result<Filter> {
    if !(noise_var > 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be positive, got {noise_var}")));
    }
    if omegas.len() != rhos.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frequencies but {} gain variances",
            omegas.len(),
            rhos.len()
        )));
    }
    if rhos.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::InvalidArgument("gain variances must be non-negative".into()));
    }
    let a = steering_matrix(omegas, n_rx);
    let l = omegas.len();
    let matrix = match mode {
        FilterMode::Favorable => {
            let scaled = CMatrix::from_fn(n_rx, l, |r, c| a[(r, c)] * (rhos[c] / (rhos[c] + noise_var)));
            scaled * a.adjoint()
        }
        FilterMode::Exact => {
            // push-through form: A C (A^H A C + s I)^-1 A^H, an L x L inverse
            let a_rho = CMatrix::from_fn(n_rx, l, |r, c| a[(r, c)] * rhos[c]);
            let mut inner = a.adjoint() * &a_rho;
            for i in 0..l {
                inner[(i, i)] += noise_var;
            }
            let inv = inner
                .try_inverse()
                .ok_or_else(|| Error::InvalidArgument("singular conditional covariance system".into()))?;
            a_rho * inv * a.adjoint()
        }
    };
    Ok(Filter { matrix })
}

/// Parametric Bayesian channel estimate: the conditional LMMSE filter at the
/// estimated parameters, applied to the final snapshot `y(T)`.
pub fn pbce_estimate(observation: &ObservationBlock, params: &ParamEstimate) -> Result<CVector> {
    let w = conditional_lmmse_filter(
        &params.omegas_hat,
        &params.rhos_hat,
        params.noise_var_used,
        observation.n_rx(),
        FilterMode::Exact,
    )?;
    Ok(w.apply(&observation.last_snapshot()))
}

/// LMMSE estimate with the true channel parameters.
pub fn genie_lmmse(observation: &ObservationBlock, realization: &ChannelRealization) -> Result<CVector> {
    let w = conditional_lmmse_filter(
        &realization.omegas,
        &realization.rhos,
        observation.noise_var,
        observation.n_rx(),
        FilterMode::Exact,
    )?;
    Ok(w.apply(&observation.last_snapshot()))
}

/// Where the gain variances of a [`ParamEstimate`] come from.
#[derive(Debug, Clone, Copy)]
pub enum GainSource<'a> {
    /// Least-squares estimate from the sample covariance.
    Estimated,
    /// Perfect gain knowledge.
    Truth(&'a [f64]),
}

/// Direction estimator used ahead of the parametric channel estimator.
#[derive(Debug, Clone)]
pub enum DoaMethod {
    RootMusic,
    /// Single-path only.
    Bartlett(Bartlett),
}

/// Runs the parameter-estimation stage: directions, then gains.
pub fn estimate_params(
    sample_cov: &CMatrix,
    num_paths: usize,
    method: &DoaMethod,
    gains: GainSource<'_>,
    noise_var_used: f64,
) -> Result<ParamEstimate> {
    let omegas_hat = match method {
        DoaMethod::RootMusic => root_music(sample_cov, num_paths)?,
        DoaMethod::Bartlett(b) => {
            if num_paths != 1 {
                return Err(Error::InvalidArgument("the Bartlett estimator is single-path only".into()));
            }
            vec![b.estimate(sample_cov)?.omega]
        }
    };
    let (rhos_hat, gains_from_truth) = match gains {
        GainSource::Estimated => (estimate_gains(sample_cov, &omegas_hat, noise_var_used)?, false),
        GainSource::Truth(r) => {
            if r.len() != omegas_hat.len() {
                return Err(Error::InvalidArgument("true gain vector has the wrong length".into()));
            }
            (r.to_vec(), true)
        }
    };
    Ok(ParamEstimate { omegas_hat, rhos_hat, noise_var_used, gains_from_truth })
}
