//! Deterministic Monte-Carlo sweeps over SNR, coherence length and array
//! size, CSV output of the aggregated NMSE records, and convergence studies.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_model::{observe, omega_distance, sample_prior, ChannelRealization, ObservationBlock, Scenario};
use crate::bounds::{
    convergence_slope, crb_omega, fit_loglog, mismatch_gap, pbce_asymptotic_mse, cme_asymptotic_mse, BoundInputs,
    CbarSource, SlopeFit,
};
use crate::cme::{
    asymptotic_cme_filter, grid_samples, prior_draw_samples, AngleMixtureDensity, AsymptoticCmeSpec, CovFactor,
    SampleBank, SmearingMethod,
};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_gains, genie_lmmse, pbce_estimate, root_music, Bartlett, ParamEstimate,
};
use crate::linalg::{forward_backward, CMatrix, CVector};
use crate::rng::{estimator_rng, noise_rng, trial_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb,
    CoherenceLen,
    NRx,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 3] = [SweepAxis::SnrDb, SweepAxis::CoherenceLen, SweepAxis::NRx];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::CoherenceLen => "coherence_len",
            SweepAxis::NRx => "n_rx",
        }
    }

    /// `base` with the axis coordinate set to `value`.
    pub fn apply(self, base: &Scenario, value: f64) -> Result<Scenario> {
        let mut s = base.clone();
        let as_count = |min: usize| -> Result<usize> {
            if value.fract() != 0.0 || !(value >= min as f64) || value > u32::MAX as f64 {
                return Err(Error::InvalidScenario(format!(
                    "{} must be an integer >= {min}, got {value}",
                    self.name()
                )));
            }
            Ok(value as usize)
        };
        match self {
            SweepAxis::SnrDb => {
                if !value.is_finite() {
                    return Err(Error::InvalidScenario(format!("snr_db must be finite, got {value}")));
                }
                s = s.with_snr_db(value);
            }
            SweepAxis::CoherenceLen => s.coherence_len = as_count(1)?,
            SweepAxis::NRx => s.n_rx = as_count(2)?,
        }
        s.validate()?;
        Ok(s)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = SweepAxis::ALL.iter().map(|a| a.name()).collect();
            Error::InvalidArgument(format!("unknown sweep axis '{s}'; valid axes: {}", valid.join(", ")))
        })
    }
}

/// Estimators and analytic curves a sweep can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    /// Parametric estimator with root-MUSIC directions.
    PbceRmusic,
    /// Parametric estimator with the Bartlett direction (single path).
    PbceBartlett,
    GenieLmmse,
    /// Sampled CME: prior-weighted uniform grid for one path, prior draws otherwise.
    SampledCme,
    /// Gaussian-smeared asymptotic CME filter.
    AsymptoticCme,
    BoundCmeAb,
    BoundPbceAb,
    /// Records the spatial-frequency CRB itself in the value columns.
    CrbOmegaCurve,
    /// `h_hat = 0`; its NMSE is 1 up to Monte-Carlo error.
    Zero,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 9] = [
        EstimatorTag::PbceRmusic,
        EstimatorTag::PbceBartlett,
        EstimatorTag::GenieLmmse,
        EstimatorTag::SampledCme,
        EstimatorTag::AsymptoticCme,
        EstimatorTag::BoundCmeAb,
        EstimatorTag::BoundPbceAb,
        EstimatorTag::CrbOmegaCurve,
        EstimatorTag::Zero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorTag::PbceRmusic => "pbce_rmusic",
            EstimatorTag::PbceBartlett => "pbce_bartlett",
            EstimatorTag::GenieLmmse => "genie_lmmse",
            EstimatorTag::SampledCme => "sampled_cme",
            EstimatorTag::AsymptoticCme => "asymptotic_cme",
            EstimatorTag::BoundCmeAb => "bound_cme_ab",
            EstimatorTag::BoundPbceAb => "bound_pbce_ab",
            EstimatorTag::CrbOmegaCurve => "crb_omega_curve",
            EstimatorTag::Zero => "zero",
        }
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorTag::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = EstimatorTag::ALL.iter().map(|t| t.name()).collect();
            Error::InvalidArgument(format!("unknown estimator '{s}'; valid estimators: {}", valid.join(", ")))
        })
    }
}

/// Convention for `C_bar` in the bound curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CbarConvention {
    #[default]
    MeanSubstitution,
    InverseMoment,
    Realized,
}

/// Knobs that do not change what is being estimated, only how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessOptions {
    pub bartlett_grid: usize,
    pub bartlett_refine: bool,
    pub forward_backward: bool,
    /// Number of samples of the sampled CME.
    pub cme_samples: usize,
    pub cbar: CbarConvention,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        HarnessOptions {
            bartlett_grid: crate::estimators::DEFAULT_BARTLETT_GRID,
            bartlett_refine: true,
            forward_backward: false,
            cme_samples: 2048,
            cbar: CbarConvention::MeanSubstitution,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub axis_values: Vec<f64>,
    pub base: Scenario,
    pub estimators: Vec<EstimatorTag>,
    pub trials: usize,
    /// Hand the true gain variances to the parametric estimators.
    pub perfect_gains: bool,
    /// Believed noise variance is `(1 + eps) s2`.
    pub mismatch_eps: Option<f64>,
    /// RNG stream shared by every axis point: trial `t` sees the same channel
    /// and the same unit-variance noise at each point (common random numbers).
    pub stream: u64,
    pub options: HarnessOptions,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, axis_values: Vec<f64>, base: Scenario, estimators: Vec<EstimatorTag>, trials: usize) -> Self {
        SweepSpec {
            axis,
            axis_values,
            base,
            estimators,
            trials,
            perfect_gains: false,
            mismatch_eps: None,
            stream: 0,
            options: HarnessOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis_values.is_empty() {
            return Err(Error::InvalidArgument("axis_values is empty".into()));
        }
        let up = self.axis_values.windows(2).all(|w| w[0] < w[1]);
        let down = self.axis_values.windows(2).all(|w| w[0] > w[1]);
        if !(up || down) {
            return Err(Error::InvalidArgument("axis_values must be strictly monotone".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.trials as u64 >= 1 << 32 || self.stream >= 1 << 30 {
            return Err(Error::InvalidArgument("too many trials or stream index too large for the RNG layout".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators requested".into()));
        }
        if let Some(eps) = self.mismatch_eps {
            if !(eps > -1.0) {
                return Err(Error::InvalidArgument(format!("mismatch_eps must exceed -1, got {eps}")));
            }
        }
        if self.options.cme_samples == 0 {
            return Err(Error::InvalidArgument("cme_samples must be at least 1".into()));
        }
        for &v in &self.axis_values {
            let s = self.axis.apply(&self.base, v)?;
            if self.options.bartlett_grid < 4 * s.n_rx {
                return Err(Error::InvalidArgument(format!(
                    "bartlett_grid {} is below 4 * n_rx = {}",
                    self.options.bartlett_grid,
                    4 * s.n_rx
                )));
            }
            if s.num_paths >= s.n_rx {
                return Err(Error::InvalidScenario(format!(
                    "num_paths {} must be below n_rx {}",
                    s.num_paths, s.n_rx
                )));
            }
            if self.options.cbar == CbarConvention::InverseMoment && s.coherence_len < 2 {
                return Err(Error::InvalidArgument("the inverse-moment C_bar convention needs T >= 2".into()));
            }
        }
        if self.base.num_paths != 1 && self.estimators.contains(&EstimatorTag::PbceBartlett) {
            return Err(Error::InvalidArgument("pbce_bartlett is single-path only".into()));
        }
        Ok(())
    }

    fn believed_noise_var(&self, noise_var: f64) -> f64 {
        noise_var * (1.0 + self.mismatch_eps.unwrap_or(0.0))
    }
}

/// Aggregated NMSE of one estimator at one axis point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub axis: SweepAxis,
    pub axis_value: f64,
    pub estimator: EstimatorTag,
    pub nmse_linear: f64,
    pub nmse_db: f64,
    pub trials_used: usize,
    pub failures: usize,
    pub std_err: f64,
}

/// Per-trial outcome: a fingerprint of the shared draw and each estimator's
/// squared error (`None` when the estimator failed on this draw).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub draw_hash: u64,
    pub errors: Vec<Option<f64>>,
}

/// Fingerprint of a trial draw: every bit of `h` and `Y`.
pub fn draw_hash(realization: &ChannelRealization, observation: &ObservationBlock) -> u64 {
    let mut h = DefaultHasher::new();
    for z in realization.channels.iter().chain(observation.snapshots.iter()) {
        z.re.to_bits().hash(&mut h);
        z.im.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Channel realization and observation of one trial. Scenarios that differ
/// only in SNR share the whole draw; scenarios that differ only in T share the
/// newest snapshots, including the target snapshot and its noise.
pub fn trial_draw(scenario: &Scenario, stream: u64, trial: usize) -> Result<(ChannelRealization, ObservationBlock)> {
    let mut rng = trial_rng(scenario.seed, stream, trial as u64);
    let realization = sample_prior(&scenario.prior, scenario, &mut rng)?;
    let observation = observe(&realization, scenario, &mut noise_rng(scenario.seed, stream, trial as u64));
    Ok((realization, observation))
}

/// For each estimated frequency, the index of the true path it is assigned to,
/// minimizing the total squared circular distance.
pub fn match_paths(estimated: &[f64], truth: &[f64]) -> Vec<usize> {
    let l = estimated.len().min(truth.len());
    let cost = |perm: &[usize]| -> f64 {
        perm.iter().enumerate().map(|(i, &j)| omega_distance(estimated[i], truth[j]).powi(2)).sum()
    };
    let mut perm: Vec<usize> = (0..truth.len()).collect();
    if truth.len() > 8 {
        // greedy fallback for large path counts
        let mut free: Vec<usize> = (0..truth.len()).collect();
        return (0..l)
            .map(|i| {
                let (k, _) = free
                    .iter()
                    .enumerate()
                    .min_by(|a, b| {
                        omega_distance(estimated[i], truth[*a.1]).total_cmp(&omega_distance(estimated[i], truth[*b.1]))
                    })
                    .unwrap();
                free.remove(k)
            })
            .collect();
    }
    let mut best = perm[..l].to_vec();
    let mut best_cost = cost(&best);
    permutations(&mut perm, 0, &mut |p| {
        let c = cost(&p[..l]);
        if c < best_cost {
            best_cost = c;
            best = p[..l].to_vec();
        }
    });
    best
}

fn permutations(items: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Shared per-point state that does not depend on the draw.
struct PointContext {
    scenario: Scenario,
    point_index: usize,
    bartlett: Bartlett,
    grid: Option<SampleBank>,
}

impl PointContext {
    fn new(spec: &SweepSpec, point_index: usize) -> Result<Self> {
        let scenario = spec.axis.apply(&spec.base, spec.axis_values[point_index])?;
        let bartlett = Bartlett::new(spec.options.bartlett_grid, spec.options.bartlett_refine);
        let grid = if spec.estimators.contains(&EstimatorTag::SampledCme) && scenario.num_paths == 1 {
            let density = AngleMixtureDensity::new(&scenario.prior)?;
            // a single path carries the whole gain variance under either gain law
            let samples = grid_samples(&density, spec.options.cme_samples, scenario.n_rx as f64);
            Some(SampleBank::new(samples, scenario.n_rx)?)
        } else {
            None
        };
        Ok(PointContext { scenario, point_index, bartlett, grid })
    }
}

fn squared_error(h: &CVector, h_hat: &CVector) -> f64 {
    (h - h_hat).norm_squared() / h.len() as f64
}

/// Runs every requested estimator on one trial's draw.
fn run_trial(spec: &SweepSpec, ctx: &PointContext, trial: usize) -> Result<TrialResult> {
    let s = &ctx.scenario;
    let (realization, observation) = trial_draw(s, spec.stream, trial)?;
    let h = realization.target_channel();
    let n = s.n_rx;
    let noise_var = s.noise_var;
    let believed = spec.believed_noise_var(noise_var);
    let cov = if spec.options.forward_backward {
        forward_backward(&observation.sample_cov)
    } else {
        observation.sample_cov.clone()
    };

    // root-MUSIC directions are shared by every estimator that needs them
    let mut music: Option<std::result::Result<Vec<f64>, String>> = None;
    let mut music_dirs = |cov: &CMatrix| -> Result<Vec<f64>> {
        music
            .get_or_insert_with(|| root_music(cov, s.num_paths).map_err(|e| e.to_string()))
            .clone()
            .map_err(Error::InvalidArgument)
    };

    let errors = spec
        .estimators
        .iter()
        .map(|&tag| {
            let out = match tag {
                EstimatorTag::PbceRmusic => {
                    music_dirs(&cov).and_then(|w| parametric(spec, &cov, &realization, &observation, w, believed))
                }
                EstimatorTag::PbceBartlett => ctx
                    .bartlett
                    .estimate(&cov)
                    .and_then(|b| parametric(spec, &cov, &realization, &observation, vec![b.omega], believed)),
                EstimatorTag::GenieLmmse => genie_lmmse(&observation, &realization).map(|e| squared_error(&h, &e)),
                EstimatorTag::SampledCme => {
                    let data = if spec.options.forward_backward {
                        CovFactor::from_cov(&cov, s.coherence_len)
                    } else {
                        CovFactor::from_snapshots(&observation.snapshots)
                    };
                    let filter = |bank: &SampleBank| data.and_then(|d| bank.filter(&d, believed));
                    let out = match &ctx.grid {
                        Some(bank) => filter(bank),
                        None => {
                            let mut rng = estimator_rng(s.seed, spec.stream, trial as u64);
                            prior_draw_samples(&s.prior, s, spec.options.cme_samples, &mut rng)
                                .and_then(|smp| SampleBank::new(smp, n))
                                .and_then(|bank| filter(&bank))
                        }
                    };
                    out.map(|c| squared_error(&h, &c.filter.apply(&observation.last_snapshot())))
                }
                EstimatorTag::AsymptoticCme => {
                    let dirs = if s.num_paths == 1 {
                        ctx.bartlett.estimate(&cov).map(|b| vec![b.omega])
                    } else {
                        music_dirs(&cov)
                    };
                    dirs.and_then(|w| asymptotic(spec, &cov, &realization, &observation, w, believed))
                        .map(|e| squared_error(&h, &e))
                }
                EstimatorTag::BoundCmeAb | EstimatorTag::BoundPbceAb => {
                    bound_inputs(spec, s, &realization).and_then(|inputs| {
                        let v = if tag == EstimatorTag::BoundCmeAb {
                            cme_asymptotic_mse(&inputs)
                        } else {
                            let mut v = pbce_asymptotic_mse(&inputs);
                            if let Some(eps) = spec.mismatch_eps {
                                v += mismatch_gap(&inputs, eps)?.exact;
                            }
                            v
                        };
                        Ok(v / n as f64)
                    })
                }
                EstimatorTag::CrbOmegaCurve => crb_omega(n, s.coherence_len, noise_var),
                EstimatorTag::Zero => Ok(h.norm_squared() / n as f64),
            };
            match out {
                Ok(v) => Some(v),
                Err(e) => {
                    log::debug!("{tag} failed on trial {trial} at point {}: {e}", ctx.point_index);
                    None
                }
            }
        })
        .collect();
    Ok(TrialResult { draw_hash: draw_hash(&realization, &observation), errors })
}

/// True gain variances (and gain powers) reordered to follow the estimated directions.
fn matched_truth(realization: &ChannelRealization, observation: &ObservationBlock, omegas_hat: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let idx = match_paths(omegas_hat, &realization.omegas);
    (
        idx.iter().map(|&j| realization.rhos[j]).collect(),
        idx.iter().map(|&j| observation.emp_gain_power[j]).collect(),
    )
}

fn parametric(
    spec: &SweepSpec,
    cov: &CMatrix,
    realization: &ChannelRealization,
    observation: &ObservationBlock,
    omegas_hat: Vec<f64>,
    believed: f64,
) -> Result<f64> {
    let (rhos_hat, gains_from_truth) = if spec.perfect_gains {
        (matched_truth(realization, observation, &omegas_hat).0, true)
    } else {
        (estimate_gains(cov, &omegas_hat, believed)?, false)
    };
    let params = ParamEstimate { omegas_hat, rhos_hat, noise_var_used: believed, gains_from_truth };
    let h_hat = pbce_estimate(observation, &params)?;
    Ok(squared_error(&realization.target_channel(), &h_hat))
}

fn asymptotic(
    spec: &SweepSpec,
    cov: &CMatrix,
    realization: &ChannelRealization,
    observation: &ObservationBlock,
    omegas_hat: Vec<f64>,
    believed: f64,
) -> Result<CVector> {
    let (true_rhos, alpha_bars) = matched_truth(realization, observation, &omegas_hat);
    let (rhos, known) = if spec.perfect_gains {
        (true_rhos, true)
    } else {
        (estimate_gains(cov, &omegas_hat, believed)?, false)
    };
    let c = AsymptoticCmeSpec::from_estimates(
        &omegas_hat,
        &rhos,
        &alpha_bars,
        observation.n_rx(),
        observation.coherence_len(),
        believed,
        known,
    )?;
    Ok(asymptotic_cme_filter(&c, observation.n_rx(), SmearingMethod::ClosedForm)?.apply(&observation.last_snapshot()))
}

fn bound_inputs(spec: &SweepSpec, s: &Scenario, realization: &ChannelRealization) -> Result<BoundInputs> {
    let cbar = match spec.options.cbar {
        CbarConvention::MeanSubstitution => CbarSource::MeanSubstitution,
        CbarConvention::InverseMoment => CbarSource::InverseMoment,
        CbarConvention::Realized => CbarSource::Realized(realization.emp_gain_power()),
    };
    BoundInputs::new(s.n_rx, &realization.rhos, s.noise_var, s.coherence_len, cbar)
}

/// All trials of one axis point, in trial order.
pub fn run_point_trials(spec: &SweepSpec, point_index: usize) -> Result<Vec<TrialResult>> {
    spec.validate()?;
    let ctx = PointContext::new(spec, point_index)?;
    (0..spec.trials).into_par_iter().map(|t| run_trial(spec, &ctx, t)).collect()
}

fn aggregate(spec: &SweepSpec, axis_value: f64, trials: &[TrialResult]) -> Vec<SweepRecord> {
    spec.estimators
        .iter()
        .enumerate()
        .map(|(k, &tag)| {
            let values: Vec<f64> = trials.iter().filter_map(|t| t.errors[k]).collect();
            let used = values.len();
            let mean = if used == 0 { f64::NAN } else { values.iter().sum::<f64>() / used as f64 };
            let std_err = if used < 2 {
                0.0
            } else {
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (used - 1) as f64;
                (var / used as f64).sqrt()
            };
            SweepRecord {
                axis: spec.axis,
                axis_value,
                estimator: tag,
                nmse_linear: mean,
                nmse_db: 10.0 * mean.log10(),
                trials_used: used,
                failures: spec.trials - used,
                std_err,
            }
        })
        .collect()
}

fn sort_records(records: &mut [SweepRecord]) {
    records.sort_by(|a, b| a.axis_value.total_cmp(&b.axis_value).then_with(|| a.estimator.name().cmp(b.estimator.name())));
}

/// Runs the sweep on the current rayon pool. Records are sorted by
/// `(axis_value, estimator name)` and do not depend on the number of workers.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRecord>> {
    spec.validate()?;
    let mut records = Vec::new();
    for (i, &v) in spec.axis_values.iter().enumerate() {
        let trials = run_point_trials(spec, i)?;
        let point = aggregate(spec, v, &trials);
        for r in &point {
            log::info!(
                "{} = {v}: {} nmse {:.4e} ({:.2} dB), {} failures",
                spec.axis,
                r.estimator,
                r.nmse_linear,
                r.nmse_db,
                r.failures
            );
        }
        records.extend(point);
    }
    sort_records(&mut records);
    Ok(records)
}

/// [`run_sweep`] on a dedicated pool of `workers` threads.
pub fn run_sweep_with_workers(spec: &SweepSpec, workers: usize) -> Result<Vec<SweepRecord>> {
    if workers == 0 {
        return Err(Error::InvalidArgument("worker count must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| run_sweep(spec))
}

pub const CSV_HEADER: [&str; 8] =
    ["axis", "axis_value", "estimator", "nmse_linear", "nmse_db", "trials_used", "failures", "std_err"];

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes records as CSV, sorted by `(axis_value, estimator)`, floats with 17 significant digits.
pub fn write_results(records: &[SweepRecord], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &sorted {
        w.write_record([
            r.axis.name().to_string(),
            fmt_float(r.axis_value),
            r.estimator.name().to_string(),
            fmt_float(r.nmse_linear),
            fmt_float(r.nmse_db),
            r.trials_used.to_string(),
            r.failures.to_string(),
            fmt_float(r.std_err),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<SweepRecord>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(parse_err(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let float = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| parse_err(format!("row {}: bad number '{}'", line + 2, field(i))))
        };
        let count = |i: usize| -> Result<usize> {
            field(i).parse().map_err(|_| parse_err(format!("row {}: bad count '{}'", line + 2, field(i))))
        };
        out.push(SweepRecord {
            axis: field(0).parse().map_err(|e: Error| parse_err(format!("row {}: {e}", line + 2)))?,
            axis_value: float(1)?,
            estimator: field(2).parse().map_err(|e: Error| parse_err(format!("row {}: {e}", line + 2)))?,
            nmse_linear: float(3)?,
            nmse_db: float(4)?,
            trials_used: count(5)?,
            failures: count(6)?,
            std_err: float(7)?,
        });
    }
    Ok(out)
}

/// Analytic convergence study of the asymptotic bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub n_rx: usize,
    pub coherence_len: usize,
    pub rhos: Vec<f64>,
    pub noise_grid: Vec<f64>,
    pub mismatch_eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Slope of `|CME^AB - PBCE^AB|` against the noise variance.
    pub bound_gap: SlopeFit,
    /// Slope of the mismatch gap, when a mismatch factor is given.
    pub mismatch_gap: Option<SlopeFit>,
    /// Gap-to-leading-term ratio of the mismatch expansion at the smallest noise variance.
    pub mismatch_leading_ratio: Option<f64>,
}

pub fn run_convergence_study(study: &ConvergenceStudy) -> Result<ConvergenceReport> {
    let inputs = |s2: f64| BoundInputs::new(study.n_rx, &study.rhos, s2, study.coherence_len, CbarSource::MeanSubstitution);
    for &s2 in &study.noise_grid {
        inputs(s2)?;
    }
    let bound_gap = convergence_slope(
        |s2| cme_asymptotic_mse(&inputs(s2).unwrap()),
        |s2| pbce_asymptotic_mse(&inputs(s2).unwrap()),
        &study.noise_grid,
    )?;
    let (mismatch, ratio) = match study.mismatch_eps {
        None => (None, None),
        Some(eps) => {
            let gaps: Vec<_> = study
                .noise_grid
                .iter()
                .map(|&s2| mismatch_gap(&inputs(s2)?, eps))
                .collect::<Result<_>>()?;
            let fit = convergence_slope(
                |s2| {
                    let i = study.noise_grid.iter().position(|&g| g == s2).unwrap();
                    gaps[i].exact
                },
                |_| 0.0,
                &study.noise_grid,
            )?;
            let smallest = study
                .noise_grid
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| gaps[i].exact / gaps[i].leading);
            (Some(fit), smallest)
        }
    };
    Ok(ConvergenceReport { bound_gap, mismatch_gap: mismatch, mismatch_leading_ratio: ratio })
}

/// Log-log slope of `|estimator - reference|` NMSE against the noise
/// variance over the SNR points of a sweep.
pub fn empirical_gap_slope(records: &[SweepRecord], estimator: EstimatorTag, reference: EstimatorTag) -> Result<SlopeFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in records.iter().filter(|r| r.axis == SweepAxis::SnrDb && r.estimator == estimator) {
        let Some(b) = records
            .iter()
            .find(|b| b.axis == SweepAxis::SnrDb && b.estimator == reference && b.axis_value == r.axis_value)
        else {
            continue;
        };
        let gap = (r.nmse_linear - b.nmse_linear).abs();
        if gap > 0.0 && gap.is_finite() {
            xs.push(crate::array_model::noise_var_from_snr_db(r.axis_value));
            ys.push(gap);
        }
    }
    let (slope, intercept, r_squared) = fit_loglog(&xs, &ys)?;
    Ok(SlopeFit { slope, intercept, r_squared, used: xs, dropped: vec![] })
}
