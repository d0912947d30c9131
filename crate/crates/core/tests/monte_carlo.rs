//! Monte-Carlo checks of the estimators against closed-form references.

use pbce::array_model::{omega_distance, steering, ChannelRealization, ObservationBlock, Scenario};
use pbce::bounds::{cme_asymptotic_mse, crb_omega, BoundInputs, CbarSource};
use pbce::cme::{asymptotic_cme_filter, AsymptoticCmeSpec, SmearingMethod};
use pbce::estimators::Bartlett;
use pbce::linalg::{CMatrix, C64};
use pbce::rng::{complex_normal, trial_rng};
use pbce::sim::{run_point_trials, trial_draw, EstimatorTag, SweepAxis, SweepSpec};
use rand::Rng;
use rand_distr::StandardNormal;

fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, (var / v.len() as f64).sqrt())
}

/// Single path at `omega` with a deterministic-modulus gain, `|alpha|^2 = N`
/// (the model's single-path normalization), `T = 1`.
fn fixed_gain_observation(omega: f64, n: usize, noise_var: f64, seed: u64, trial: u64) -> ObservationBlock {
    let mut rng = trial_rng(seed, 0, trial);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let alphas = CMatrix::from_element(1, 1, C64::from_polar((n as f64).sqrt(), phase));
    let r = ChannelRealization::from_parts(vec![omega], vec![n as f64], alphas, n);
    let noise = CMatrix::from_fn(n, 1, |_, _| complex_normal(&mut rng, noise_var));
    ObservationBlock::from_snapshots(&r.channels + noise, noise_var, r.emp_gain_power())
}

fn bartlett_mse_over_crb(snr_db: f64, trials: u64) -> f64 {
    let n = 64;
    let s2 = 10f64.powf(-snr_db / 10.0);
    let bartlett = Bartlett::default();
    let omega = 0.4;
    let errs: Vec<f64> = (0..trials)
        .map(|t| {
            let o = fixed_gain_observation(omega, n, s2, 3, t);
            omega_distance(bartlett.estimate(&o.sample_cov).unwrap().omega, omega).powi(2)
        })
        .collect();
    // the CRB is gain-weighted: divide by |alpha|^2 for a direction error
    mean_se(&errs).0 / (crb_omega(n, 1, s2).unwrap() / n as f64)
}

#[test]
fn bartlett_is_efficient_at_high_snr() {
    let ratio = bartlett_mse_over_crb(30.0, 10_000);
    let db = 10.0 * ratio.log10();
    assert!(db.abs() < 1.0, "Bartlett MSE / CRB = {db:.3} dB");
}

#[test]
fn bartlett_efficiency_improves_with_snr() {
    let ratios: Vec<f64> = [0.0, 10.0, 20.0, 30.0].iter().map(|&s| bartlett_mse_over_crb(s, 10_000)).collect();
    assert!(ratios.windows(2).all(|w| w[0] > w[1]), "MSE/CRB ratios {ratios:?}");
}

#[test]
fn root_music_resolves_three_paths() {
    let s = Scenario::new(64, 3, 16, 1.0).with_snr_db(20.0);
    let beamwidth = 2.0 * std::f64::consts::PI / 64.0;
    let trials = 1000;
    let mut good = 0;
    for t in 0..trials {
        let (r, o) = trial_draw(&s, 0, t).unwrap();
        let Ok(est) = pbce::estimators::root_music(&o.sample_cov, 3) else { continue };
        let idx = pbce::sim::match_paths(&est, &r.omegas);
        let rmse =
            (est.iter().zip(&idx).map(|(e, &j)| omega_distance(*e, r.omegas[j]).powi(2)).sum::<f64>() / 3.0).sqrt();
        if rmse < beamwidth {
            good += 1;
        }
    }
    assert!(good * 100 >= 99 * trials, "{good} of {trials} trials within one beamwidth");
}

#[test]
fn genie_matches_the_analytic_single_path_nmse() {
    let mut base = Scenario::new(64, 1, 1, 1.0);
    base.seed = 21;
    let spec = SweepSpec::new(SweepAxis::SnrDb, vec![0.0], base, vec![EstimatorTag::GenieLmmse, EstimatorTag::Zero], 1000);
    let trials = run_point_trials(&spec, 0).unwrap();
    let genie: Vec<f64> = trials.iter().map(|t| t.errors[0].unwrap()).collect();
    let zero: Vec<f64> = trials.iter().map(|t| t.errors[1].unwrap()).collect();
    let (m, se) = mean_se(&genie);
    assert!((m - 1.0 / 65.0).abs() < 3.0 * se, "genie NMSE {m} +- {se}, expected 1/65");
    let (m, se) = mean_se(&zero);
    assert!((m - 1.0).abs() < 3.0 * se, "zero-estimator NMSE {m} +- {se}");
}

/// The asymptotic CME MSE against a semi-analytic Monte-Carlo: exponential
/// gain power, direction error drawn from the (gain-weighted) CRB, the noise
/// averaged analytically given the filter.
#[test]
fn asymptotic_cme_mse_matches_semi_analytic_simulation() {
    let (n, t, s2, rho) = (64, 1, 1e-3, 64.0);
    let crb = crb_omega(n, t, s2).unwrap();
    let inputs = BoundInputs::new(n, &[rho], s2, t, CbarSource::MeanSubstitution).unwrap();
    let bound = cme_asymptotic_mse(&inputs);
    let omega = 0.3;
    let a = steering(omega, n);
    let mut rng = trial_rng(8, 0, 0);
    let trials = 40_000;
    let mse: Vec<f64> = (0..trials)
        .map(|_| {
            let alpha = complex_normal(&mut rng, rho);
            let abar = alpha.norm_sqr();
            let z: f64 = rng.sample(StandardNormal);
            let omega_hat = omega + z * (crb / abar).sqrt();
            let spec = AsymptoticCmeSpec::single_path(omega_hat, n, t, s2, rho).unwrap();
            let w = asymptotic_cme_filter(&spec, n, SmearingMethod::ClosedForm).unwrap().matrix;
            let h = a.scale(1.0) * alpha;
            let bias = (CMatrix::identity(n, n) - &w) * &h;
            bias.norm_squared() + s2 * w.norm_squared()
        })
        .collect();
    let (m, se) = mean_se(&mse);
    let rel = (m - bound).abs() / bound;
    assert!(rel < 0.02, "simulated {m:.5e} +- {se:.1e}, closed form {bound:.5e}, relative gap {rel:.4}");
}
