//! Ground-truth synthesis for a half-wavelength uniform linear receive array:
//! steering vectors, geometric channels drawn from the angular mixture prior,
//! noisy snapshot blocks and their sample covariance.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, C64};
use crate::rng::complex_normal;

/// One Gaussian region of the angular prior, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean_deg: f64,
    pub std_deg: f64,
}

/// How the gain variances `rho` of a realization are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainLaw {
    /// `rho_l ~ U[0, N_R]`, then rescaled so that `sum rho_l = N_R`.
    UniformNormalized,
    /// Equal split `rho_l = N_R / L`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub components: Vec<MixtureComponent>,
    pub gain_law: GainLaw,
}

impl PriorSpec {
    /// The four-region mixture used by the reference experiments:
    /// weights {0.1, 0.5, 0.2, 0.2}, means {-70, -30, 20, 60} deg and
    /// standard deviations {5, 10, 5, 10} deg, uniform-normalized gains.
    pub fn four_region() -> Self {
        let c = |weight, mean_deg, std_deg| MixtureComponent { weight, mean_deg, std_deg };
        PriorSpec {
            components: vec![c(0.1, -70.0, 5.0), c(0.5, -30.0, 10.0), c(0.2, 20.0, 5.0), c(0.2, 60.0, 10.0)],
            gain_law: GainLaw::UniformNormalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidPrior("mixture has no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPrior(format!("mixture weights sum to {total}, expected 1")));
        }
        for (i, c) in self.components.iter().enumerate() {
            if !(c.weight >= 0.0) {
                return Err(Error::InvalidPrior(format!("component {i} has negative weight {}", c.weight)));
            }
            if !(c.std_deg > 0.0) || !c.std_deg.is_finite() {
                return Err(Error::InvalidPrior(format!("component {i} has non-positive std {}", c.std_deg)));
            }
            if !c.mean_deg.is_finite() {
                return Err(Error::InvalidPrior(format!("component {i} has non-finite mean")));
            }
        }
        Ok(())
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::four_region()
    }
}

/// Static description of one experiment point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_rx: usize,
    pub num_paths: usize,
    pub coherence_len: usize,
    /// Noise variance; the SNR is its inverse.
    pub noise_var: f64,
    pub prior: PriorSpec,
    pub seed: u64,
    /// Minimum circular separation between path frequencies, in beamwidths
    /// of `2 pi / N_R`. Zero disables the rejection step.
    pub min_separation_beamwidths: f64,
}

impl Scenario {
    pub fn new(n_rx: usize, num_paths: usize, coherence_len: usize, noise_var: f64) -> Self {
        Scenario {
            n_rx,
            num_paths,
            coherence_len,
            noise_var,
            prior: PriorSpec::four_region(),
            seed: 0,
            min_separation_beamwidths: 1.0,
        }
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.noise_var = noise_var_from_snr_db(snr_db);
        self
    }

    pub fn snr_db(&self) -> f64 {
        -10.0 * self.noise_var.log10()
    }

    pub fn min_separation(&self) -> f64 {
        self.min_separation_beamwidths * 2.0 * PI / self.n_rx as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rx < 2 {
            return Err(Error::InvalidScenario(format!("n_rx must be at least 2, got {}", self.n_rx)));
        }
        if self.num_paths < 1 {
            return Err(Error::InvalidScenario("num_paths must be at least 1".into()));
        }
        if self.coherence_len < 1 {
            return Err(Error::InvalidScenario("coherence_len must be at least 1".into()));
        }
        if !(self.noise_var > 0.0) || !self.noise_var.is_finite() {
            return Err(Error::InvalidScenario(format!("noise_var must be positive, got {}", self.noise_var)));
        }
        if !(self.min_separation_beamwidths >= 0.0) {
            return Err(Error::InvalidScenario("min_separation_beamwidths must be non-negative".into()));
        }
        self.prior.validate()
    }
}

/// `sigma^2 = 10^(-SNR_dB / 10)`.
pub fn noise_var_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Spatial frequency of a direction of arrival given in degrees.
pub fn omega_from_theta_deg(theta_deg: f64) -> f64 {
    PI * theta_deg.to_radians().sin()
}

/// Circular distance between two spatial frequencies.
pub fn omega_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Wraps a spatial frequency into `(-pi, pi]`.
pub fn wrap_omega(omega: f64) -> f64 {
    let w = (omega + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Unit-norm ULA steering vector with entries `exp(-j k omega) / sqrt(n)`.
pub fn steering(omega: f64, n: usize) -> CVector {
    let s = 1.0 / (n as f64).sqrt();
    CVector::from_fn(n, |k, _| C64::from_polar(s, -(k as f64) * omega))
}

/// Derivative of [`steering`] with respect to `omega`.
pub fn steering_derivative(omega: f64, n: usize) -> CVector {
    let s = 1.0 / (n as f64).sqrt();
    CVector::from_fn(n, |k, _| C64::new(0.0, -(k as f64)) * C64::from_polar(s, -(k as f64) * omega))
}

/// Steering matrix `[a(omega_1), ..., a(omega_L)]`.
pub fn steering_matrix(omegas: &[f64], n: usize) -> CMatrix {
    let s = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, omegas.len(), |k, l| C64::from_polar(s, -(k as f64) * omegas[l]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerProductSq {
    /// `|a(omega)^H a(omega + d)|^2` from the Dirichlet kernel.
    pub exact: f64,
    /// Second-order expansion `1 - n^2 d^2 / 12`.
    pub approx: f64,
}

/// Squared inner product between steering vectors offset by `delta_omega`.
/// The value does not depend on `omega` itself.
pub fn inner_product_sq(_omega: f64, delta_omega: f64, n: usize) -> InnerProductSq {
    let nf = n as f64;
    let half = 0.5 * delta_omega;
    let den = nf * half.sin();
    let exact = if den.abs() < 1e-300 || half.sin().abs() < 1e-12 {
        // limit of the kernel near multiples of 2 pi; sin(n x)/(n sin x) -> cos(n x)/cos(x)
        let r = (nf * half).cos() / half.cos();
        r * r
    } else {
        let r = (nf * half).sin() / den;
        r * r
    };
    InnerProductSq { exact, approx: 1.0 - nf * nf * delta_omega * delta_omega / 12.0 }
}

/// Sampled ground truth for one coherence interval.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// Index of the mixture region all paths were drawn from.
    pub region: usize,
    pub thetas_deg: Vec<f64>,
    pub omegas: Vec<f64>,
    pub rhos: Vec<f64>,
    /// `L x T` path gains.
    pub alphas: CMatrix,
    /// `N_R x T`, column `t` is `h(t)`.
    pub channels: CMatrix,
}

impl ChannelRealization {
    /// Builds a realization from explicit parameters, `h(t) = sum_l alpha_l(t) a(omega_l)`.
    pub fn from_parts(omegas: Vec<f64>, rhos: Vec<f64>, alphas: CMatrix, n_rx: usize) -> Self {
        assert_eq!(omegas.len(), rhos.len());
        assert_eq!(alphas.nrows(), omegas.len());
        let channels = steering_matrix(&omegas, n_rx) * &alphas;
        let thetas_deg = omegas.iter().map(|w| (w / PI).clamp(-1.0, 1.0).asin().to_degrees()).collect();
        ChannelRealization { region: 0, thetas_deg, omegas, rhos, alphas, channels }
    }

    pub fn num_paths(&self) -> usize {
        self.omegas.len()
    }

    pub fn coherence_len(&self) -> usize {
        self.alphas.ncols()
    }

    /// The channel to be estimated, `h(T)`.
    pub fn target_channel(&self) -> CVector {
        self.channels.column(self.channels.ncols() - 1).into_owned()
    }

    /// Empirical per-path gain power `(1/T) sum_t |alpha_l(t)|^2`.
    pub fn emp_gain_power(&self) -> Vec<f64> {
        let t = self.alphas.ncols() as f64;
        self.alphas.row_iter().map(|row| row.iter().map(|a| a.norm_sqr()).sum::<f64>() / t).collect()
    }
}

/// Noisy snapshots of one coherence interval.
#[derive(Debug, Clone)]
pub struct ObservationBlock {
    /// `N_R x T` matrix `Y = [y(1), ..., y(T)]`.
    pub snapshots: CMatrix,
    pub noise_var: f64,
    /// `(1/T) Y Y^H`.
    pub sample_cov: CMatrix,
    /// Ground-truth side channel; only bound and filter-constant evaluation may read it.
    pub emp_gain_power: Vec<f64>,
}

impl ObservationBlock {
    pub fn from_snapshots(snapshots: CMatrix, noise_var: f64, emp_gain_power: Vec<f64>) -> Self {
        let sample_cov = sample_covariance(&snapshots);
        ObservationBlock { snapshots, noise_var, sample_cov, emp_gain_power }
    }

    pub fn n_rx(&self) -> usize {
        self.snapshots.nrows()
    }

    pub fn coherence_len(&self) -> usize {
        self.snapshots.ncols()
    }

    /// The final snapshot `y(T)`, which every channel estimator filters.
    pub fn last_snapshot(&self) -> CVector {
        self.snapshots.column(self.snapshots.ncols() - 1).into_owned()
    }
}

pub fn sample_covariance(snapshots: &CMatrix) -> CMatrix {
    let t = snapshots.ncols() as f64;
    let mut c = snapshots * snapshots.adjoint();
    c.unscale_mut(t);
    // exact Hermitian symmetry
    let n = c.nrows();
    for r in 0..n {
        c[(r, r)] = C64::new(c[(r, r)].re, 0.0);
        for col in (r + 1)..n {
            c[(col, r)] = c[(r, col)].conj();
        }
    }
    c
}

const MAX_REJECTIONS: usize = 10_000;

fn draw_component<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, c) in prior.components.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            return i;
        }
    }
    prior.components.len() - 1
}

fn draw_theta_deg<R: Rng + ?Sized>(c: &MixtureComponent, rng: &mut R) -> Result<f64> {
    let normal = Normal::new(c.mean_deg, c.std_deg).map_err(|e| Error::InvalidPrior(e.to_string()))?;
    for _ in 0..MAX_REJECTIONS {
        let theta = normal.sample(rng);
        if theta > -90.0 && theta < 90.0 {
            return Ok(theta);
        }
    }
    Err(Error::InvalidPrior(format!(
        "component (mean {}, std {}) puts no mass on (-90, 90) degrees",
        c.mean_deg, c.std_deg
    )))
}

/// Draws gain variances according to the gain law.
pub fn draw_rhos<R: Rng + ?Sized>(law: GainLaw, n_rx: usize, num_paths: usize, rng: &mut R) -> Vec<f64> {
    let n = n_rx as f64;
    match law {
        GainLaw::Fixed => vec![n / num_paths as f64; num_paths],
        GainLaw::UniformNormalized => loop {
            let raw: Vec<f64> = (0..num_paths).map(|_| rng.random::<f64>() * n).collect();
            let total: f64 = raw.iter().sum();
            if total > 0.0 {
                break raw.iter().map(|r| r * n / total).collect();
            }
        },
    }
}

/// Draws one channel realization: a single mixture region for all paths,
/// truncated-Gaussian angles in that region, normalized gain variances and
/// i.i.d. `CN(0, rho_l)` gains over the coherence interval.
pub fn sample_prior<R: Rng + ?Sized>(prior: &PriorSpec, scenario: &Scenario, rng: &mut R) -> Result<ChannelRealization> {
    prior.validate()?;
    let n = scenario.n_rx;
    let l = scenario.num_paths;
    let t = scenario.coherence_len;
    let region = draw_component(prior, rng);
    let component = prior.components[region];
    let min_sep = scenario.min_separation();

    let mut accepted = None;
    for _ in 0..MAX_REJECTIONS {
        let thetas = (0..l).map(|_| draw_theta_deg(&component, rng)).collect::<Result<Vec<_>>>()?;
        let omegas: Vec<f64> = thetas.iter().map(|&th| omega_from_theta_deg(th)).collect();
        let separated = min_sep <= 0.0
            || (0..l).all(|i| ((i + 1)..l).all(|j| omega_distance(omegas[i], omegas[j]) >= min_sep));
        if separated {
            accepted = Some((thetas, omegas));
            break;
        }
    }
    let (thetas_deg, omegas) = accepted.ok_or(Error::SeparationRejected { attempts: MAX_REJECTIONS })?;

    let rhos = draw_rhos(prior.gain_law, n, l, rng);
    // newest snapshot first, so the target snapshot does not depend on T
    let mut alphas = CMatrix::zeros(l, t);
    for c in (0..t).rev() {
        for p in 0..l {
            alphas[(p, c)] = complex_normal(rng, rhos[p]);
        }
    }
    let channels = steering_matrix(&omegas, n) * &alphas;
    Ok(ChannelRealization { region, thetas_deg, omegas, rhos, alphas, channels })
}

/// Adds fresh `CN(0, sigma^2 I)` noise to every channel snapshot, drawn at unit
/// variance and scaled, newest snapshot first.
pub fn observe<R: Rng + ?Sized>(realization: &ChannelRealization, scenario: &Scenario, rng: &mut R) -> ObservationBlock {
    let h = &realization.channels;
    let sigma2 = scenario.noise_var;
    let mut noise = CMatrix::zeros(h.nrows(), h.ncols());
    for c in (0..h.ncols()).rev() {
        for r in 0..h.nrows() {
            noise[(r, c)] = complex_normal(rng, 1.0);
        }
    }
    let snapshots = noise.scale(sigma2.sqrt()) + h;
    ObservationBlock::from_snapshots(snapshots, sigma2, realization.emp_gain_power())
}
