//! Conditional-mean machinery: the sampled CME integral (grid estimator), the
//! Gaussian-smeared asymptotic CME filter, prior densities with the
//! flatness check that licenses the asymptotic filter, and the Gaussian tail
//! bound used to size integration windows.

use std::f64::consts::PI;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::array_model::{sample_prior, steering_matrix, wrap_omega, PriorSpec, Scenario};
use crate::error::{Error, Result};
use crate::estimators::Filter;
use crate::linalg::{gauss_legendre, hermitian_eigen, CMatrix, C64, ZERO};

/// One candidate parameter vector `delta = (omega, rho)` of the sampled CME.
#[derive(Debug, Clone, PartialEq)]
pub struct CmeSample {
    pub omegas: Vec<f64>,
    pub rhos: Vec<f64>,
    /// Log of the prior weight attached to the sample (0 for plain prior draws).
    pub log_prior: f64,
}

#[derive(Debug, Clone)]
pub struct SampledCme {
    pub filter: Filter,
    /// Shannon entropy (nats) of the normalized posterior weights.
    pub weight_entropy: f64,
    /// `1 / sum w_i^2`.
    pub effective_samples: f64,
}

/// Posterior weights below this fraction of the largest one are not accumulated.
const NEGLIGIBLE_WEIGHT: f64 = 1e-17;

/// Sampled evaluation of the CME integral,
/// `W = sum_i w_i W_i` with `log w_i = log p_i + (T / s2) tr(W_i C) + T log|I - W_i|`.
pub fn sampled_cme_filter(
    sample_cov: &CMatrix,
    coherence_len: usize,
    noise_var: f64,
    samples: &[CmeSample],
) -> Result<SampledCme> {
    let bank = SampleBank::new(samples.to_vec(), sample_cov.nrows())?;
    bank.filter(&CovFactor::from_cov(sample_cov, coherence_len)?, noise_var)
}

/// A factor `F` with `F F^H = C_y`, plus the coherence length.
#[derive(Debug, Clone)]
pub struct CovFactor {
    factor: CMatrix,
    coherence_len: usize,
}

impl CovFactor {
    /// From the snapshots, `F = Y / sqrt(T)`; cheapest when `T < N_R`.
    pub fn from_snapshots(snapshots: &CMatrix) -> Result<Self> {
        let t = snapshots.ncols();
        if t == 0 {
            return Err(Error::InvalidArgument("no snapshots".into()));
        }
        if t > snapshots.nrows() {
            return Self::from_cov(&crate::array_model::sample_covariance(snapshots), t);
        }
        Ok(CovFactor { factor: snapshots.unscale((t as f64).sqrt()), coherence_len: t })
    }

    /// From a Hermitian PSD covariance through its eigendecomposition
    /// (round-off negative eigenvalues are set to zero).
    pub fn from_cov(sample_cov: &CMatrix, coherence_len: usize) -> Result<Self> {
        if coherence_len == 0 {
            return Err(Error::InvalidArgument("coherence length must be at least 1".into()));
        }
        let eig = hermitian_eigen(sample_cov);
        let mut factor = eig.vectors;
        for (j, &v) in eig.values.iter().enumerate() {
            let scale = v.max(0.0).sqrt();
            factor.column_mut(j).scale_mut(scale);
        }
        Ok(CovFactor { factor, coherence_len })
    }
}

/// A fixed set of CME samples with their steering matrices, reusable across draws.
#[derive(Debug, Clone)]
pub struct SampleBank {
    n_rx: usize,
    samples: Vec<CmeSample>,
    steering: Vec<CMatrix>,
    grams: Vec<CMatrix>,
}

impl SampleBank {
    pub fn new(samples: Vec<CmeSample>, n_rx: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("sampled CME needs at least one sample".into()));
        }
        if let Some(s) = samples.iter().find(|s| s.omegas.len() != s.rhos.len() || s.omegas.is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "sample has {} frequencies and {} gain variances",
                s.omegas.len(),
                s.rhos.len()
            )));
        }
        if samples.iter().any(|s| s.rhos.iter().any(|&r| !(r >= 0.0))) {
            return Err(Error::InvalidArgument("sample gain variances must be non-negative".into()));
        }
        let steering: Vec<CMatrix> = samples.iter().map(|s| steering_matrix(&s.omegas, n_rx)).collect();
        let grams = steering.iter().map(|a| a.adjoint() * a).collect();
        Ok(SampleBank { n_rx, samples, steering, grams })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn filter(&self, data: &CovFactor, noise_var: f64) -> Result<SampledCme> {
        if !(noise_var > 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance must be positive, got {noise_var}")));
        }
        if data.factor.nrows() != self.n_rx {
            return Err(Error::InvalidArgument("covariance size does not match the sample bank".into()));
        }
        let n = self.n_rx;
        let t = data.coherence_len as f64;
        // per sample: log-weight and C_rho M^-1 with M = A^H A C_rho + s2 I,
        // so that W = A C_rho M^-1 A^H, tr(W C) = tr(C_rho M^-1 P P^H), P = A^H F,
        // and |I - W| = s2^L / det M
        let mut log_w = Vec::with_capacity(self.samples.len());
        let mut kernels = Vec::with_capacity(self.samples.len());
        for ((s, a), g) in self.samples.iter().zip(&self.steering).zip(&self.grams) {
            let l = s.omegas.len();
            let mut m = CMatrix::from_fn(l, l, |r, c| g[(r, c)] * s.rhos[c]);
            for i in 0..l {
                m[(i, i)] += noise_var;
            }
            let det_m = m.determinant().re;
            let m_inv = m.try_inverse().ok_or_else(|| Error::InvalidArgument("singular sample filter system".into()))?;
            let kernel = CMatrix::from_fn(l, l, |r, c| m_inv[(r, c)] * s.rhos[r]);
            let p = a.adjoint() * &data.factor;
            let trace = (&kernel * &p * p.adjoint()).trace().re;
            let log_det = l as f64 * noise_var.ln() - det_m.ln();
            log_w.push(s.log_prior + t * (trace / noise_var + log_det));
            kernels.push(kernel);
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::InvalidArgument("no sample carries finite posterior weight".into()));
        }
        let raw: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = raw.iter().sum();
        let (mut entropy, mut sum_sq) = (0.0, 0.0);
        let mut kept = Vec::new();
        for (i, r) in raw.iter().enumerate() {
            let w = r / total;
            if w > 0.0 {
                entropy -= w * w.ln();
                sum_sq += w * w;
            }
            if *r >= NEGLIGIBLE_WEIGHT {
                kept.push((i, w));
            }
        }
        // W = [A_1 .. A_K] blockdiag(w_i K_i) [A_1 .. A_K]^H as two products
        let width: usize = kept.iter().map(|&(i, _)| self.samples[i].omegas.len()).sum();
        let mut left = CMatrix::zeros(n, width);
        let mut right = CMatrix::zeros(n, width);
        let mut col = 0;
        for &(i, w) in &kept {
            let a = &self.steering[i];
            let l = a.ncols();
            left.columns_mut(col, l).copy_from(&(a * kernels[i].scale(w)));
            right.columns_mut(col, l).copy_from(a);
            col += l;
        }
        let matrix = left * right.adjoint();
        Ok(SampledCme { filter: Filter { matrix }, weight_entropy: entropy, effective_samples: 1.0 / sum_sq })
    }
}

/// Uniform grid of `count` single-path samples over `(-pi, pi]`, each weighted
/// by the prior density in `omega` and carrying the gain variance `rho`.
/// Grid points where the prior density vanishes are dropped.
pub fn grid_samples(prior: &dyn PriorDensity, count: usize, rho: f64) -> Vec<CmeSample> {
    window_samples(prior, -PI, PI, count, rho)
}

/// Uniform grid of `count` single-path samples over `(lo, hi]`, weighted by the prior density.
pub fn window_samples(prior: &dyn PriorDensity, lo: f64, hi: f64, count: usize, rho: f64) -> Vec<CmeSample> {
    let step = (hi - lo) / count as f64;
    (1..=count)
        .filter_map(|i| {
            let omega = wrap_omega(lo + step * i as f64);
            let p = prior.pdf(&[omega]);
            (p > 0.0).then(|| CmeSample { omegas: vec![omega], rhos: vec![rho], log_prior: p.ln() })
        })
        .collect()
}

/// `count` equally weighted draws of the full parameter vector from the channel prior.
pub fn prior_draw_samples<R: Rng + ?Sized>(
    prior: &PriorSpec,
    scenario: &Scenario,
    count: usize,
    rng: &mut R,
) -> Result<Vec<CmeSample>> {
    let mut s = scenario.clone();
    s.coherence_len = 1;
    (0..count)
        .map(|_| {
            let r = sample_prior(prior, &s, rng)?;
            Ok(CmeSample { omegas: r.omegas, rhos: r.rhos, log_prior: 0.0 })
        })
        .collect()
}

/// Parameters of the Gaussian-smeared asymptotic CME filter
/// `W = sum_l shrinkage_l G(omega_hat_l, C_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticCmeSpec {
    pub omega_hats: Vec<f64>,
    pub variances: Vec<f64>,
    pub shrinkages: Vec<f64>,
    /// Set when the gain variances were estimated instead of known, which is
    /// outside the premise of the multipath result.
    pub outside_premise: bool,
}

impl AsymptoticCmeSpec {
    /// Single path with `rho = N_R`: `C = 6 s2 (N + s2) / (T N^3 alpha_bar)`.
    pub fn single_path(omega_hat: f64, n_rx: usize, coherence_len: usize, noise_var: f64, alpha_bar: f64) -> Result<Self> {
        Self::from_estimates(&[omega_hat], &[n_rx as f64], &[alpha_bar], n_rx, coherence_len, noise_var, true)
    }

    /// Per path `C_l = 6 s2 (rho_l + s2) / (T N^2 rho_l alpha_bar_l)` and
    /// shrinkage `rho_l / (rho_l + s2)`. Paths with `rho_l = 0` contribute
    /// nothing and are left out.
    pub fn from_estimates(
        omega_hats: &[f64],
        rhos: &[f64],
        alpha_bars: &[f64],
        n_rx: usize,
        coherence_len: usize,
        noise_var: f64,
        gains_known: bool,
    ) -> Result<Self> {
        if omega_hats.len() != rhos.len() || rhos.len() != alpha_bars.len() {
            return Err(Error::InvalidArgument("per-path inputs differ in length".into()));
        }
        if !(noise_var > 0.0) || coherence_len == 0 {
            return Err(Error::InvalidArgument("noise variance and coherence length must be positive".into()));
        }
        let n = n_rx as f64;
        let t = coherence_len as f64;
        let mut spec = AsymptoticCmeSpec {
            omega_hats: vec![],
            variances: vec![],
            shrinkages: vec![],
            outside_premise: !gains_known,
        };
        for ((&w, &rho), &abar) in omega_hats.iter().zip(rhos).zip(alpha_bars) {
            if rho <= 0.0 {
                continue;
            }
            spec.omega_hats.push(w);
            spec.variances.push(6.0 * noise_var * (rho + noise_var) / (t * n * n * rho * abar));
            spec.shrinkages.push(rho / (rho + noise_var));
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.omega_hats.len() != self.variances.len() || self.variances.len() != self.shrinkages.len() {
            return Err(Error::InvalidArgument("asymptotic CME spec has inconsistent lengths".into()));
        }
        if let Some(c) = self.variances.iter().find(|&&c| !(c > 0.0) || !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("smearing variance must be positive and finite, got {c}")));
        }
        if let Some(s) = self.shrinkages.iter().find(|&&s| !(0.0..1.0).contains(&s)) {
            return Err(Error::InvalidArgument(format!("shrinkage must lie in [0, 1), got {s}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmearingMethod {
    /// Entry `(m, k)` is `exp(-j (m - k) w) exp(-(m - k)^2 C / 2) / N`.
    ClosedForm,
    /// 801-node Gauss-Legendre rule over `w +- 8 sqrt(C)`.
    Quadrature,
}

const QUADRATURE_NODES: usize = 801;
const QUADRATURE_HALF_WIDTH: f64 = 8.0;

/// `G(w, C) = E[a(d) a(d)^H]` for `d ~ N(w, C)`.
pub fn smeared_projector(omega_hat: f64, variance: f64, n_rx: usize, method: SmearingMethod) -> Result<CMatrix> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InvalidArgument(format!("smearing variance must be positive, got {variance}")));
    }
    let n = n_rx;
    let inv_n = 1.0 / n as f64;
    // G depends on m - k only; tabulate lags 0..n and conjugate for negative lags
    let lag: Vec<C64> = match method {
        SmearingMethod::ClosedForm => (0..n)
            .map(|d| {
                let d = d as f64;
                C64::from_polar(inv_n * (-0.5 * d * d * variance).exp(), -d * omega_hat)
            })
            .collect(),
        SmearingMethod::Quadrature => {
            let (x, w) = gauss_legendre(QUADRATURE_NODES);
            let sd = variance.sqrt();
            let half = QUADRATURE_HALF_WIDTH * sd;
            let norm = 1.0 / (2.0 * PI * variance).sqrt();
            let mut acc = vec![ZERO; n];
            for (xi, wi) in x.iter().zip(&w) {
                let off = half * xi;
                let weight = wi * half * norm * (-0.5 * off * off / variance).exp();
                let delta = omega_hat + off;
                for (d, slot) in acc.iter_mut().enumerate() {
                    *slot += C64::from_polar(weight, -(d as f64) * delta);
                }
            }
            acc.into_iter().map(|z| z * inv_n).collect()
        }
    };
    Ok(CMatrix::from_fn(n, n, |m, k| if m >= k { lag[m - k] } else { lag[k - m].conj() }))
}

/// Asymptotic CME filter `sum_l shrinkage_l G(omega_hat_l, C_l)`.
pub fn asymptotic_cme_filter(spec: &AsymptoticCmeSpec, n_rx: usize, method: SmearingMethod) -> Result<Filter> {
    spec.validate()?;
    let mut matrix = CMatrix::zeros(n_rx, n_rx);
    for ((&w, &c), &s) in spec.omega_hats.iter().zip(&spec.variances).zip(&spec.shrinkages) {
        matrix += smeared_projector(w, c, n_rx, method)?.scale(s);
    }
    Ok(Filter { matrix })
}

/// Chernoff bound on the two Gaussian tails beyond `k`, next to the exact mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailMass {
    /// `sqrt(2 pi C) exp(-k^2 / 2C)`.
    pub bound: f64,
    /// `int_{|x| > k} exp(-x^2 / 2C) dx = sqrt(2 pi C) erfc(k / sqrt(2C))`.
    pub exact: f64,
}

pub fn chernoff_tail_mass(variance: f64, k: f64) -> Result<TailMass> {
    if !(variance > 0.0) || !(k > 0.0) {
        return Err(Error::InvalidArgument("tail mass needs C > 0 and k > 0".into()));
    }
    let scale = (2.0 * PI * variance).sqrt();
    Ok(TailMass {
        bound: scale * (-k * k / (2.0 * variance)).exp(),
        exact: scale * erfc(k / (2.0 * variance).sqrt()),
    })
}

/// Smallest `k` with `2 exp(-k^2 / 2C) <= defect`, the half-width of a window
/// that holds all but `defect` of the smearing Gaussian.
pub fn window_half_width(variance: f64, defect: f64) -> f64 {
    (2.0 * variance * (2.0 / defect).ln()).sqrt()
}

/// Default mass defect for [`window_half_width`].
pub const DEFAULT_MASS_DEFECT: f64 = 1e-9;

/// A probability density over the parameter vector with an analytic gradient.
pub trait PriorDensity {
    fn dim(&self) -> usize;
    fn pdf(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Uniform density on an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformDensity {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PriorDensity for UniformDensity {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        let inside = x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| v >= lo && v <= hi);
        if inside {
            1.0 / self.lower.iter().zip(&self.upper).map(|(lo, hi)| hi - lo).product::<f64>()
        } else {
            0.0
        }
    }

    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

/// One-dimensional Gaussian density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianDensity {
    pub mean: f64,
    pub std: f64,
}

impl PriorDensity for GaussianDensity {
    fn dim(&self) -> usize {
        1
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        let z = (x[0] - self.mean) / self.std;
        (-0.5 * z * z).exp() / (self.std * (2.0 * PI).sqrt())
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![-self.pdf(x) * (x[0] - self.mean) / (self.std * self.std)]
    }
}

/// Density in `omega = pi sin(theta)` induced by the angular mixture prior,
/// each component being a Gaussian in degrees truncated to `(-90, 90)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleMixtureDensity {
    /// `(weight / Z, mean_deg, std_deg)` with `Z` the truncated mass.
    components: Vec<(f64, f64, f64)>,
}

const DEG_PER_RAD: f64 = 180.0 / PI;

impl AngleMixtureDensity {
    pub fn new(prior: &PriorSpec) -> Result<Self> {
        prior.validate()?;
        let components = prior
            .components
            .iter()
            .map(|c| {
                let normal = Normal::new(c.mean_deg, c.std_deg).map_err(|e| Error::InvalidPrior(e.to_string()))?;
                let mass = normal.cdf(90.0) - normal.cdf(-90.0);
                if !(mass > 0.0) {
                    return Err(Error::InvalidPrior(format!("component at {} deg has no mass on (-90, 90)", c.mean_deg)));
                }
                Ok((c.weight / mass, c.mean_deg, c.std_deg))
            })
            .collect::<Result<_>>()?;
        Ok(AngleMixtureDensity { components })
    }

    /// Mixture density in degrees and its derivative with respect to degrees.
    fn theta_density(&self, theta_deg: f64) -> (f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &(w, mu, sd) in &self.components {
            let z = (theta_deg - mu) / sd;
            let v = w * (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt());
            p += v;
            dp -= v * z / sd;
        }
        (p, dp)
    }
}

impl PriorDensity for AngleMixtureDensity {
    fn dim(&self) -> usize {
        1
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        let w = x[0];
        if !(w.abs() < PI) {
            return 0.0;
        }
        let root = (PI * PI - w * w).sqrt();
        let theta = (w / PI).asin() * DEG_PER_RAD;
        self.theta_density(theta).0 * DEG_PER_RAD / root
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let w = x[0];
        if !(w.abs() < PI) {
            return vec![0.0];
        }
        let r2 = PI * PI - w * w;
        let jac = DEG_PER_RAD / r2.sqrt();
        let djac = DEG_PER_RAD * w / (r2 * r2.sqrt());
        let theta = (w / PI).asin() * DEG_PER_RAD;
        let (p, dp) = self.theta_density(theta);
        vec![dp * jac * jac + p * djac]
    }
}

/// Axis-aligned region of parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Region { lower: vec![lo], upper: vec![hi] }
    }

    pub fn centered(center: f64, diameter: f64) -> Self {
        Region::interval(center - 0.5 * diameter, center + 0.5 * diameter)
    }

    pub fn diameter(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| (hi - lo).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatnessReport {
    /// `sup |grad p| / p` over the grid.
    pub max_log_gradient: f64,
    pub diameter: f64,
    pub ratio: f64,
    pub threshold: f64,
    pub satisfied: bool,
}

pub const DEFAULT_FLATNESS_THRESHOLD: f64 = 0.1;

/// Checks that the prior is approximately constant over `region`:
/// `sup_S |grad p / p| * diam(S) < threshold`, the supremum taken over a dense grid.
pub fn check_prior_flatness(prior: &dyn PriorDensity, region: &Region, threshold: f64) -> Result<FlatnessReport> {
    let dim = prior.dim();
    if region.lower.len() != dim || region.upper.len() != dim {
        return Err(Error::InvalidArgument(format!("region has the wrong dimension for a {dim}-d prior")));
    }
    if region.lower.iter().zip(&region.upper).any(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::InvalidArgument("region bounds are inverted".into()));
    }
    // about 2^16 grid points in total, at least 3 per axis
    let per_axis = ((65_536f64).powf(1.0 / dim as f64).floor() as usize).max(3);
    let total = per_axis.pow(dim as u32);
    let mut point = vec![0.0; dim];
    let mut sup: f64 = 0.0;
    for idx in 0..total {
        let mut rem = idx;
        for (d, p) in point.iter_mut().enumerate() {
            let i = rem % per_axis;
            rem /= per_axis;
            let frac = i as f64 / (per_axis - 1) as f64;
            *p = region.lower[d] + frac * (region.upper[d] - region.lower[d]);
        }
        let p = prior.pdf(&point);
        if !(p > 0.0) {
            return Err(Error::OutsideSupport { point: point.clone() });
        }
        let g = prior.gradient(&point).iter().map(|v| v * v).sum::<f64>().sqrt();
        sup = sup.max(g / p);
    }
    let diameter = region.diameter();
    let ratio = sup * diameter;
    Ok(FlatnessReport { max_log_gradient: sup, diameter, ratio, threshold, satisfied: ratio < threshold })
}
