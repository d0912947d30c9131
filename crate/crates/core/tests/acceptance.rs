//! Acceptance suite. Each test prints one PASS/FAIL line (written straight to
//! stderr so it shows up without `--nocapture`) and then asserts the outcome.

use std::io::Write;
use std::time::{Duration, Instant};

use pbce::array_model::{draw_rhos, GainLaw, Scenario};
use pbce::bounds::{crb_omega, crb_omega_matrix};
use pbce::cme::{
    asymptotic_cme_filter, grid_samples, sampled_cme_filter, smeared_projector, window_half_width, window_samples,
    AngleMixtureDensity, AsymptoticCmeSpec, SmearingMethod, DEFAULT_MASS_DEFECT,
};
use pbce::estimators::Bartlett;
use pbce::linalg::frobenius;
use pbce::rng::trial_rng;
use pbce::sim::{
    run_convergence_study, run_sweep, run_sweep_with_workers, trial_draw, write_results, ConvergenceStudy,
    EstimatorTag, SweepAxis, SweepRecord, SweepSpec,
};
use pbce::validation::{kernel_residual_slope, run_check, Check};
use rand::Rng;

const NOISE_GRID: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

fn report(criterion: &str, passed: bool, elapsed: Duration, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] {criterion}: {verdict} ({:.1} s) {detail}", elapsed.as_secs_f64());
    assert!(passed, "{criterion} failed: {detail}");
}

fn record(records: &[SweepRecord], value: f64, tag: EstimatorTag) -> &SweepRecord {
    records
        .iter()
        .find(|r| r.axis_value == value && r.estimator == tag)
        .unwrap_or_else(|| panic!("no {tag} record at {value}"))
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", items.join(", "))
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] > w[1])
}

/// `a <= b` up to three combined standard errors.
fn below(a: &SweepRecord, b: &SweepRecord) -> bool {
    a.nmse_linear <= b.nmse_linear + 3.0 * a.std_err.hypot(b.std_err)
}

#[test]
fn criterion_01_bound_gap_vanishes_quadratically() {
    let start = Instant::now();
    let single = run_convergence_study(&ConvergenceStudy {
        n_rx: 64,
        coherence_len: 1,
        rhos: vec![64.0],
        noise_grid: NOISE_GRID.to_vec(),
        mismatch_eps: None,
    })
    .unwrap();
    let rhos = draw_rhos(GainLaw::UniformNormalized, 64, 3, &mut trial_rng(2024, 0, 0));
    let multi = run_convergence_study(&ConvergenceStudy {
        n_rx: 64,
        coherence_len: 1,
        rhos: rhos.clone(),
        noise_grid: NOISE_GRID.to_vec(),
        mismatch_eps: None,
    })
    .unwrap();
    let elapsed = start.elapsed();
    let (s1, s3) = (single.bound_gap.slope, multi.bound_gap.slope);
    let passed = (s1 - 2.0).abs() <= 0.05 && (s3 - 2.0).abs() <= 0.05 && elapsed < Duration::from_secs(1);
    report(
        "criterion 1 (bound gap slope)",
        passed,
        elapsed,
        &format!("L=1 slope {s1:.4}, L=3 slope {s3:.4} (rho = {rhos:.3?}), target 2 +- 0.05"),
    );
}

#[test]
fn criterion_02_mismatch_gap_vanishes_quadratically() {
    let start = Instant::now();
    let study = run_convergence_study(&ConvergenceStudy {
        n_rx: 64,
        coherence_len: 1,
        rhos: vec![64.0],
        noise_grid: NOISE_GRID.to_vec(),
        mismatch_eps: Some(0.5),
    })
    .unwrap();
    let elapsed = start.elapsed();
    let slope = study.mismatch_gap.as_ref().unwrap().slope;
    let ratio = study.mismatch_leading_ratio.unwrap();
    let passed = (slope - 2.0).abs() <= 0.05 && (ratio - 1.0).abs() < 0.05 && elapsed < Duration::from_secs(1);
    report(
        "criterion 2 (mismatch gap slope)",
        passed,
        elapsed,
        &format!("slope {slope:.4} (target 2 +- 0.05), gap / leading term at s2 = 1e-4: {ratio:.5} (target 1 +- 0.05)"),
    );
}

#[test]
fn criterion_03_crb_matrix_form_matches_closed_form() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for n in [2, 4, 8, 16, 64, 128] {
        for (t, s2, omega) in [(1, 1.0, 0.0), (1, 1e-3, 0.9), (16, 0.1, -2.0)] {
            let reduced = crb_omega(n, t, s2).unwrap();
            let matrix = crb_omega_matrix(n, t, s2, omega).unwrap();
            worst = worst.max((matrix - reduced).abs() / reduced);
        }
    }
    report(
        "criterion 3 (CRB oracle)",
        worst < 1e-10,
        start.elapsed(),
        &format!("max relative deviation {worst:.2e} (limit 1e-10)"),
    );
}

#[test]
fn criterion_04_smeared_filter_closed_form_matches_quadrature() {
    let start = Instant::now();
    let mut rng = trial_rng(404, 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let omega = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let c = 10f64.powf(rng.random_range(-6.0..-1.0));
        let closed = smeared_projector(omega, c, 64, SmearingMethod::ClosedForm).unwrap();
        let quad = smeared_projector(omega, c, 64, SmearingMethod::Quadrature).unwrap();
        worst = worst.max((closed - quad).iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    let elapsed = start.elapsed();
    report(
        "criterion 4 (closed form vs quadrature)",
        worst < 1e-8 && elapsed < Duration::from_secs(10),
        elapsed,
        &format!("max entrywise deviation {worst:.2e} over 50 pairs (limit 1e-8)"),
    );
}

#[test]
fn criterion_05_single_path_convergence() {
    let start = Instant::now();
    let mut base = Scenario::new(64, 1, 1, 1.0);
    base.seed = 5;
    let snrs = vec![-10.0, 0.0, 10.0, 20.0, 30.0, 40.0];
    let spec = SweepSpec::new(
        SweepAxis::SnrDb,
        snrs.clone(),
        base,
        vec![EstimatorTag::PbceRmusic, EstimatorTag::GenieLmmse, EstimatorTag::BoundPbceAb],
        1000,
    );
    let records = run_sweep(&spec).unwrap();
    let elapsed = start.elapsed();
    let mut passed = elapsed < Duration::from_secs(300);
    let mut detail = String::new();
    for snr in [30.0, 40.0] {
        let p = record(&records, snr, EstimatorTag::PbceRmusic);
        let b = record(&records, snr, EstimatorTag::BoundPbceAb);
        let d = p.nmse_db - b.nmse_db;
        passed &= d.abs() < 0.5;
        detail += &format!("pbce - bound at {snr} dB: {d:+.3} dB; ");
    }
    let mut worst_z: f64 = 0.0;
    for &snr in &snrs {
        let g = record(&records, snr, EstimatorTag::GenieLmmse);
        let s2 = 10f64.powf(-snr / 10.0);
        let z = (g.nmse_linear - s2 / (64.0 + s2)).abs() / g.std_err;
        worst_z = worst_z.max(z);
    }
    passed &= worst_z < 3.0;
    detail += &format!("genie worst deviation from s2/(N+s2): {worst_z:.2} std errors");
    report("criterion 5 (single-path convergence)", passed, elapsed, &detail);
}

#[test]
fn criterion_06_multipath_ordering() {
    let start = Instant::now();
    let mut base = Scenario::new(64, 3, 16, 1.0);
    base.seed = 6;
    let spec = SweepSpec::new(
        SweepAxis::SnrDb,
        vec![0.0, 10.0, 20.0, 30.0],
        base,
        vec![EstimatorTag::PbceRmusic, EstimatorTag::GenieLmmse, EstimatorTag::BoundCmeAb, EstimatorTag::BoundPbceAb],
        1000,
    );
    let records = run_sweep(&spec).unwrap();
    let elapsed = start.elapsed();
    let mut passed = elapsed < Duration::from_secs(600);
    for snr in [20.0, 30.0] {
        let g = record(&records, snr, EstimatorTag::GenieLmmse);
        let p = record(&records, snr, EstimatorTag::PbceRmusic);
        for tag in [EstimatorTag::BoundCmeAb, EstimatorTag::BoundPbceAb] {
            let b = record(&records, snr, tag);
            passed &= below(g, b) && below(b, p);
        }
    }
    let mut detail = String::new();
    for tag in [EstimatorTag::BoundPbceAb, EstimatorTag::BoundCmeAb] {
        let gaps: Vec<f64> = [10.0, 20.0, 30.0]
            .iter()
            .map(|&s| (record(&records, s, EstimatorTag::PbceRmusic).nmse_linear - record(&records, s, tag).nmse_linear).abs())
            .collect();
        passed &= strictly_decreasing(&gaps);
        detail += &format!("|pbce - {tag}| at 10/20/30 dB: {}; ", list(&gaps));
    }
    detail += "ordering genie <= bounds <= pbce (3 std errors) at 20 and 30 dB checked";
    report("criterion 6 (multipath ordering)", passed, elapsed, &detail);
}

#[test]
fn criterion_07_coherence_length_trend() {
    let start = Instant::now();
    let mut base = Scenario::new(64, 3, 16, 1.0);
    base.seed = 7;
    let ts = [16.0, 64.0, 256.0];
    let spec = SweepSpec::new(
        SweepAxis::CoherenceLen,
        ts.to_vec(),
        base,
        vec![EstimatorTag::PbceRmusic, EstimatorTag::GenieLmmse, EstimatorTag::BoundCmeAb],
        1000,
    );
    let records = run_sweep(&spec).unwrap();
    let elapsed = start.elapsed();
    let pbce: Vec<f64> = ts.iter().map(|&t| record(&records, t, EstimatorTag::PbceRmusic).nmse_linear).collect();
    let gaps: Vec<f64> =
        ts.iter().zip(&pbce).map(|(&t, p)| p - record(&records, t, EstimatorTag::BoundCmeAb).nmse_linear).collect();
    let to_genie: Vec<f64> =
        ts.iter().zip(&pbce).map(|(&t, p)| p - record(&records, t, EstimatorTag::GenieLmmse).nmse_linear).collect();
    let passed = strictly_decreasing(&pbce) && strictly_decreasing(&gaps) && elapsed < Duration::from_secs(600);
    report(
        "criterion 7 (coherence-length trend)",
        passed,
        elapsed,
        &format!(
            "pbce NMSE at T = 16/64/256: {}; pbce - bound_cme_ab: {}; pbce - genie: {}",
            list(&pbce),
            list(&gaps),
            list(&to_genie)
        ),
    );
}

#[test]
fn criterion_08_sampled_cme_approaches_smeared_filter() {
    let start = Instant::now();
    let draws = 20;
    let mut dist = [Vec::new(), Vec::new()];
    let mut global = [Vec::new(), Vec::new()];
    for trial in 0..draws {
        for (k, snr) in [30.0, 40.0].into_iter().enumerate() {
            let s = Scenario::new(16, 1, 1, 1.0).with_snr_db(snr);
            let (_, o) = trial_draw(&s, 0, trial).unwrap();
            let omega_hat = Bartlett::default().estimate(&o.sample_cov).unwrap().omega;
            let spec = AsymptoticCmeSpec::single_path(omega_hat, 16, 1, s.noise_var, o.emp_gain_power[0]).unwrap();
            let smeared = asymptotic_cme_filter(&spec, 16, SmearingMethod::ClosedForm).unwrap().matrix;
            // 2048 prior-weighted grid points over the window holding all but 1e-9 of the Gaussian mass
            let prior = AngleMixtureDensity::new(&s.prior).unwrap();
            let half = window_half_width(spec.variances[0], DEFAULT_MASS_DEFECT);
            let local = window_samples(&prior, omega_hat - half, omega_hat + half, 2048, 16.0);
            let sampled = sampled_cme_filter(&o.sample_cov, 1, s.noise_var, &local).unwrap().filter.matrix;
            dist[k].push(frobenius(&(&sampled - &smeared)) / frobenius(&smeared));
            let full = grid_samples(&prior, 2048, 16.0);
            let sampled = sampled_cme_filter(&o.sample_cov, 1, s.noise_var, &full).unwrap().filter.matrix;
            global[k].push(frobenius(&(&sampled - &smeared)) / frobenius(&smeared));
        }
    }
    let elapsed = start.elapsed();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let worst30 = dist[0].iter().copied().fold(0.0, f64::max);
    let (m30, m40) = (mean(&dist[0]), mean(&dist[1]));
    let fewer = dist[0].iter().zip(&dist[1]).filter(|(a, b)| b < a).count();
    let passed = worst30 < 0.05 && m40 < m30 && elapsed < Duration::from_secs(60);
    report(
        "criterion 8 (sampled vs smeared CME)",
        passed,
        elapsed,
        &format!(
            "relative distance at 30 dB: worst {worst30:.2e}, mean {m30:.2e}; at 40 dB mean {m40:.2e} \
             (smaller on {fewer} of {draws} draws); full-circle grid means {:.2e} / {:.2e}",
            mean(&global[0]),
            mean(&global[1])
        ),
    );
}

#[test]
fn criterion_09_oracle_suite() {
    let start = Instant::now();
    let outcomes: Vec<_> =
        [Check::GainEstimator, Check::PriorFlatness, Check::SteeringDerivative].map(|c| run_check(c, false)).into();
    let elapsed = start.elapsed();
    let passed = outcomes.iter().all(|o| o.passed) && elapsed < Duration::from_secs(30);
    let detail: Vec<String> =
        outcomes.iter().map(|o| format!("{} {} ({:.2e})", o.check, if o.passed { "ok" } else { "failed" }, o.worst)).collect();
    report("criterion 9 (oracle suite)", passed, elapsed, &detail.join(", "));
}

/// Kept apart from the rest of criterion 9: the expansion `1 - N^2 d^2 / 12`
/// differs from the exact kernel by `d^2 / 12` at second order, so the
/// residual falls off like `d^2`, not `d^4`. This check is expected to fail.
#[test]
fn criterion_09_kernel_expansion_residual_slope() {
    let start = Instant::now();
    let deltas: Vec<f64> = (0..9).map(|i| 10f64.powf(-4.0 + 0.25 * i as f64)).collect();
    let (slope, r2) = kernel_residual_slope(64, &deltas).unwrap();
    report(
        "criterion 9 (kernel expansion residual slope)",
        (slope - 4.0).abs() <= 0.1,
        start.elapsed(),
        &format!("slope {slope:.3} (R^2 {r2:.4}) over d in [1e-4, 1e-2], N = 64; target 4 +- 0.1"),
    );
}

#[test]
fn criterion_10_worker_count_does_not_change_output() {
    let start = Instant::now();
    let mut base = Scenario::new(16, 2, 4, 1.0);
    base.seed = 10;
    let mut spec = SweepSpec::new(SweepAxis::SnrDb, vec![0.0, 10.0, 20.0], base, EstimatorTag::ALL.to_vec(), 40);
    spec.estimators.retain(|&t| t != EstimatorTag::PbceBartlett);
    spec.options.cme_samples = 256;
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for workers in [1, 4, 8] {
        let path = dir.path().join(format!("workers{workers}.csv"));
        write_results(&run_sweep_with_workers(&spec, workers).unwrap(), &path).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    let passed = files[1] == files[0] && files[2] == files[0];
    report(
        "criterion 10 (determinism)",
        passed,
        start.elapsed(),
        &format!("CSV of {} bytes compared across 1/4/8 workers", files[0].len()),
    );
}
