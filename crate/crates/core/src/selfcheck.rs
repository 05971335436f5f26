//! Built-in verification battery: ten numbered checks covering the matrix
//! special functions, the filter recursion, the geometry layer, the
//! estimator, the statistics layer and end-to-end pipeline determinism.
//! Every check carries its own independent oracle (truncated series,
//! quadrature, closed-form 2x2 exponential, a textbook Kalman filter)
//! so a passing battery certifies agreement between two routes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::geometry;
use crate::matfun;
use crate::npf::{self, ModelParams, ObservationSeries, StateCov, StateEstimate, StateKind, StateVector, SystemMatrices};
use crate::pipeline::{self, PipelineConfig};
use crate::qmle::{self, FitOptions};
use crate::simulate::{observe, simulate_sde, write_price_csv, DriftSpec};
use crate::yearstats;

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub details: String,
    pub measured: Vec<(String, f64)>,
    pub millis: u128,
}

impl CheckResult {
    pub fn summary_line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let vals: Vec<String> = self
            .measured
            .iter()
            .map(|(k, v)| format!("{k}={v:.3e}"))
            .collect();
        format!("{status} {} [{} ms] {}", self.name, self.millis, vals.join(" "))
    }
}

/// Knobs for the battery run.
#[derive(Debug, Clone)]
pub struct BatteryConfig {
    /// Scratch directory for checks that exercise the file pipeline.
    pub scratch_dir: PathBuf,
    /// Geodesic tolerance used by the constant-speed check; `None` means
    /// the built-in default. An invalid value fails that check.
    pub geodesic_tol: Option<f64>,
    /// Iteration budget for the estimator check.
    pub qmle_max_iter: usize,
    /// Iteration budget for the determinism check's two pipeline fits.
    pub pipeline_max_iter: usize,
}

impl BatteryConfig {
    pub fn new(scratch_dir: PathBuf) -> Self {
        BatteryConfig {
            scratch_dir,
            geodesic_tol: None,
            qmle_max_iter: 800,
            pipeline_max_iter: 150,
        }
    }
}

fn finish(
    name: &str,
    start: Instant,
    passed: bool,
    details: String,
    measured: Vec<(String, f64)>,
) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        details,
        measured,
        millis: start.elapsed().as_millis(),
    }
}

fn guard(name: &str, start: Instant, r: Result<CheckResult>) -> CheckResult {
    match r {
        Ok(c) => c,
        Err(e) => finish(name, start, false, format!("error: {e}"), Vec::new()),
    }
}

// ---------------------------------------------------------------------
// independent oracles
// ---------------------------------------------------------------------

/// Closed-form 2x2 matrix exponential through the trace/determinant
/// decomposition; an implementation route disjoint from the Pade path.
fn expm2_closed(a: &Matrix2<f64>) -> Matrix2<f64> {
    let mu = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let b = *a - Matrix2::identity() * mu;
    // b has zero trace; b^2 = delta I with delta = -det(b)
    let delta = b[(0, 0)] * b[(0, 0)] + b[(0, 1)] * b[(1, 0)];
    let (cosh_q, sinhc_q) = if delta.abs() < 1e-8 {
        // series in delta: cosh(sqrt(d)) and sinh(sqrt(d))/sqrt(d)
        (
            1.0 + delta / 2.0 + delta * delta / 24.0,
            1.0 + delta / 6.0 + delta * delta / 120.0,
        )
    } else if delta > 0.0 {
        let q = delta.sqrt();
        (q.cosh(), q.sinh() / q)
    } else {
        let q = (-delta).sqrt();
        (q.cos(), q.sin() / q)
    };
    (Matrix2::identity() * cosh_q + b * sinhc_q) * mu.exp()
}

/// Composite Simpson quadrature of exp(J s) D exp(J^T s) over [0, dt].
fn quad_noise_cov(j: &Matrix2<f64>, s1: f64, s2: f64, dt: f64, panels: usize) -> Matrix2<f64> {
    let d = Matrix2::new(s1 * s1, 0.0, 0.0, s2 * s2);
    let f = |s: f64| {
        let e = expm2_closed(&(*j * s));
        e * d * e.transpose()
    };
    let h = dt / panels as f64;
    let mut acc = Matrix2::zeros();
    for i in 0..panels {
        let a = i as f64 * h;
        acc += (f(a) + f(a + 0.5 * h) * 4.0 + f(a + h)) * (h / 6.0);
    }
    acc
}

/// Textbook Kalman predict on dynamic matrices.
fn textbook_predict(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    f: &DMatrix<f64>,
    c: &DVector<f64>,
    q: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    (f * x + c, f * p * f.transpose() + q)
}

/// Textbook Kalman update in Joseph form for a scalar observation z = h x.
fn textbook_update(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    h: &DVector<f64>,
    z: f64,
    r: f64,
) -> (DVector<f64>, DMatrix<f64>, f64, f64) {
    let s = (h.transpose() * p * h)[(0, 0)] + r;
    let k = p * h / s;
    let innov = z - (h.transpose() * x)[(0, 0)];
    let x_new = x + &k * innov;
    let n = x.len();
    let ikh = DMatrix::<f64>::identity(n, n) - &k * h.transpose();
    let p_new = &ikh * p * ikh.transpose() + &k * r * k.transpose();
    (x_new, p_new, innov, s)
}

fn rand_mat2(rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> Matrix2<f64> {
    Matrix2::new(
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    )
}

// ---------------------------------------------------------------------
// checks
// ---------------------------------------------------------------------

/// Check 1: phi-function identities over 1000 random 2x2 matrices with
/// norm(A) dt <= 1.
pub fn check_phi_identities() -> CheckResult {
    let name = "phi_identities";
    let t0 = Instant::now();
    let run = || -> Result<CheckResult> {
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        let mut max_r1 = 0.0f64;
        let mut max_r2 = 0.0f64;
        for _ in 0..1000 {
            let a2 = rand_mat2(&mut rng, -0.5, 0.5);
            let dt = rng.random_range(0.05..1.0);
            let a = DMatrix::from_fn(2, 2, |r, c| a2[(r, c)]);
            let e = matfun::expm(&(&a * dt))?;
            let p1 = matfun::phi1(&a, dt)?;
            let p2 = matfun::phi2(&a, dt)?;
            let id = DMatrix::<f64>::identity(2, 2);
            let r1 = (&e - (&id + &a * &p1)).norm() / e.norm().max(1.0);
            let r2 = (&p1 - (&id * dt + &a * &p2)).norm();
            max_r1 = max_r1.max(r1);
            max_r2 = max_r2.max(r2);
        }
        let passed = max_r1 <= 1e-10 && max_r2 <= 1e-10;
        Ok(finish(
            name,
            t0,
            passed,
            "1000 random matrices, tolerance 1e-10".to_string(),
            vec![
                ("max_phi1_residual".into(), max_r1),
                ("max_phi2_residual".into(), max_r2),
            ],
        ))
    };
    guard(name, t0, run())
}

/// Check 2: discretized noise covariance against Simpson quadrature of
/// the defining integral over 100 random stable matrices.
pub fn check_noise_covariance_quadrature() -> CheckResult {
    let name = "noise_covariance_quadrature";
    let t0 = Instant::now();
    let run = || -> Result<CheckResult> {
        let mut rng = ChaCha12Rng::seed_from_u64(202);
        let mut max_rel = 0.0f64;
        let mut count = 0;
        while count < 100 {
            let j = Matrix2::new(
                -rng.random_range(0.1..2.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                -rng.random_range(0.1..2.0),
            );
            // keep only genuinely stable draws
            if j.determinant() <= 0.0 {
                continue;
            }
            count += 1;
            let s1 = rng.random_range(0.01..1.0);
            let s2 = rng.random_range(0.01..1.0);
            let dt = rng.random_range(0.1..1.0);
            let q = matfun::noise_covariance(&j, s1, s2, dt)?;
            let oracle = quad_noise_cov(&j, s1, s2, dt, 512);
            let rel = (q - oracle).norm() / oracle.norm().max(1e-12);
            max_rel = max_rel.max(rel);
        }
        Ok(finish(
            name,
            t0,
            max_rel <= 1e-8,
            "100 random stable systems vs 512-panel Simpson, tolerance 1e-8".to_string(),
            vec![("max_relative_error".into(), max_rel)],
        ))
    };
    guard(name, t0, run())
}

/// Check 3: filter predict/update against an independently coded textbook
/// Kalman filter on 100 random 8-dimensional instances.
pub fn check_kalman_oracle() -> CheckResult {
    let name = "kalman_oracle";
    let t0 = Instant::now();
    let run = || -> Result<CheckResult> {
        let mut rng = ChaCha12Rng::seed_from_u64(303);
        let n = npf::STATE_DIM;
        let mut max_err = 0.0f64;
        for _ in 0..100 {
            // random well-conditioned instance
            let f = StateCov::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let c = StateVector::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let b = StateCov::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let q = b * b.transpose() * 0.1;
            let a = StateCov::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let p = a * a.transpose() + StateCov::identity() * 0.5;
            let xi = StateVector::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let state = StateEstimate::new(xi, p, StateKind::Filtered, 0);
            let sys = SystemMatrices {
                f,
                c,
                q,
                g: StateCov::identity(),
                a: StateCov::zeros(),
                b: StateVector::zeros(),
                j: Matrix2::zeros(),
            };
            let pred = npf::predict(&state, &sys)?;

            let xd = DVector::from_iterator(n, xi.iter().cloned());
            let pd = DMatrix::from_fn(n, n, |r, s| p[(r, s)]);
            let fd = DMatrix::from_fn(n, n, |r, s| f[(r, s)]);
            let cd = DVector::from_iterator(n, c.iter().cloned());
            let qd = DMatrix::from_fn(n, n, |r, s| q[(r, s)]);
            let (x_o, p_o) = textbook_predict(&xd, &pd, &fd, &cd, &qd);
            for i in 0..n {
                max_err = max_err.max((pred.xi[i] - x_o[i]).abs());
                for jx in 0..n {
                    max_err = max_err.max((pred.sigma[(i, jx)] - p_o[(i, jx)]).abs());
                }
            }

            // update step
            let z = rng.random_range(-2.0..2.0);
            let r = rng.random_range(0.1..1.0);
            let (upd, innov, ivar) = npf::update(&pred, z, r)?;
            let mut h = DVector::zeros(n);
            h[0] = 1.0;
            let pd2 = DMatrix::from_fn(n, n, |r2, s| pred.sigma[(r2, s)]);
            let xd2 = DVector::from_iterator(n, pred.xi.iter().cloned());
            let (x_u, p_u, innov_o, ivar_o) = textbook_update(&xd2, &pd2, &h, z, r * r);
            max_err = max_err.max((innov - innov_o).abs());
            max_err = max_err.max((ivar - ivar_o).abs());
            for i in 0..n {
                max_err = max_err.max((upd.xi[i] - x_u[i]).abs());
                for jx in 0..n {
                    max_err = max_err.max((upd.sigma[(i, jx)] - p_u[(i, jx)]).abs());
                }
            }
        }
        Ok(finish(
            name,
            t0,
            max_err <= 1e-12,
            "100 random 8-dim instances vs Joseph-form textbook filter".to_string(),
            vec![("max_abs_difference".into(), max_err)],
        ))
    };
    guard(name, t0, run())
}

/// Check 4: with the drift states pinned to a known linear drift, the
/// latent-pair marginal of the 8-state filter reproduces a hand-built
/// 2-state Kalman filter over 100 steps.
pub fn check_frozen_drift_equivalence() -> CheckResult {
    let name = "frozen_drift_filter";
    let t0 = Instant::now();
    let run = || -> Result<CheckResult> {
        let (a, b) = (-1.3, -0.4);
        let (s1, s2, se) = (0.15, 0.1, 0.05);
        let dt = 0.1;
        let n = 101;

        let drift = DriftSpec::linear("pinned", a, b);
        let path = simulate_sde(&drift, s1, s2, (0.5, 0.0), dt, n, 8, 404)?;
        let series = observe(&path, se, 405)?;
        let z = series.values();

        // 8-state filter: drift states pinned, f-state consistent with the
        // latent prior so both filters start from the same information
        let params = ModelParams::new(s1, s2, se, 0.0, 0.0, 0.0, 0.0);
        let p0 = Matrix2::new(se * se, 0.0, 0.0, 1.0);
        let mut xi0 = StateVector::zeros();
        xi0[0] = z[0];
        xi0[1] = 0.0;
        xi0[2] = a * z[0];
        xi0[3] = a;
        xi0[4] = b;
        let mut sig0 = StateCov::zeros();
        sig0[(0, 0)] = p0[(0, 0)];
        sig0[(1, 1)] = p0[(1, 1)];
        // pushforward of the latent prior through f = a x1 + b x2
        sig0[(2, 0)] = a * p0[(0, 0)];
        sig0[(0, 2)] = a * p0[(0, 0)];
        sig0[(2, 1)] = b * p0[(1, 1)];
        sig0[(1, 2)] = b * p0[(1, 1)];
        sig0[(2, 2)] = a * a * p0[(0, 0)] + b * b * p0[(1, 1)];
        let init = StateEstimate::new(xi0, sig0, StateKind::Filtered, 0);
        let run8 = npf::run_filter(&series, &params, &init)?;

        // hand-built 2-state filter: closed-form transition, quadrature noise
        let jm = Matrix2::new(0.0, 1.0, a, b);
        let phi = expm2_closed(&(jm * dt));
        let qt = quad_noise_cov(&jm, s1, s2, dt, 4096);
        let mut x = Vector2::new(z[0], 0.0);
        let mut p = p0;
        let mut max_err = 0.0f64;
        for (k, state) in run8.filtered.iter().enumerate().skip(1) {
            x = phi * x;
            p = phi * p * phi.transpose() + qt;
            let s = p[(0, 0)] + se * se;
            let gain = Vector2::new(p[(0, 0)] / s, p[(1, 0)] / s);
            let innov = z[k] - x[0];
            x += gain * innov;
            let row0 = nalgebra::RowVector2::new(p[(0, 0)], p[(0, 1)]);
            p -= gain * row0;
            p = (p + p.transpose()) * 0.5;

            max_err = max_err.max((state.xi[0] - x[0]).abs());
            max_err = max_err.max((state.xi[1] - x[1]).abs());
            for i in 0..2 {
                for jx in 0..2 {
                    max_err = max_err.max((state.sigma[(i, jx)] - p[(i, jx)]).abs());
                }
            }
            // pinned states must not move
            max_err = max_err.max((state.xi[3] - a).abs());
            max_err = max_err.max((state.xi[4] - b).abs());
        }
        Ok(finish(
            name,
            t0,
            max_err <= 1e-8,
            "100 steps, latent-pair marginal vs 2-state filter".to_string(),
            vec![("max_abs_difference".into(), max_err)],
        ))
    };
    guard(name, t0, run())
}

/// Operating point for the oscillator-hold check, established by
/// calibration against the simulation oracle: the filter runs at the
/// generating scales (sigma1 stands in at 1e-6 for the noiseless channel)
/// with the nuisance third derivatives at 0.5, and the gradient states
/// initialized at the known linearization. The filter must track f from
/// scratch and hold the gradient states inside the stated bands.
pub struct OscillatorCheckPoint {
    pub filter_params: ModelParams,
    pub sim_sigma2: f64,
    pub sim_sigma_eps: f64,
    pub dt: f64,
    pub n: usize,
    pub substeps: usize,
}

impl Default for OscillatorCheckPoint {
    fn default() -> Self {
        OscillatorCheckPoint {
            filter_params: ModelParams::new(1e-6, 0.05, 0.001, 0.5, 0.5, 0.5, 0.5),
            sim_sigma2: 0.05,
            sim_sigma_eps: 0.001,
            dt: 0.01,
            n: 5000,
            substeps: 10,
        }
    }
}

pub fn oscillator_series(point: &OscillatorCheckPoint, seed: u64) -> Result<ObservationSeries> {
    let drift = DriftSpec::damped_oscillator();
    let path = simulate_sde(
        &drift,
        0.0,
        point.sim_sigma2,
        (0.1, 0.0),
        point.dt,
        point.n,
        point.substeps,
        seed,
    )?;
    observe(&path, point.sim_sigma_eps, seed + 1000)
}

pub fn oscillator_init(point: &OscillatorCheckPoint, z0: f64) -> StateEstimate {
    let mut init = StateEstimate::initial(z0, point.filter_params.sigma_eps);
    init.xi[npf::idx::F_X1] = -1.0;
    init.xi[npf::idx::F_X2] = -0.5;
    init
}

/// Check 5: gradient-state stability on the simulated linear oscillator
/// at the calibrated operating point, 5 seeds.
pub fn check_oscillator_gradient_hold() -> CheckResult {
    let name = "oscillator_gradient_hold";
    let t0 = Instant::now();
    let run = || -> Result<CheckResult> {
        let point = OscillatorCheckPoint::default();
        let mut avgs_fx1 = Vec::new();
        let mut avgs_fx2 = Vec::new();
        let mut avgs_second = Vec::new();
        for seed in 0..5u64 {
            let series = oscillator_series(&point, seed)?;
            let init = oscillator_init(&point, series.values()[0]);
            let fr = npf::run_filter(&series, &point.filter_params, &init)?;
            let burn = point.n / 5;
            let kept = &fr.filtered[burn..];
            let avg =
                |i: usize| -> f64 { kept.iter().map(|s| s.xi[i]).sum::<f64>() / kept.len() as f64 };
            avgs_fx1.push(avg(npf::idx::F_X1));
            avgs_fx2.push(avg(npf::idx::F_X2));
            avgs_second.push(avg(npf::idx::F_X1X1));
            avgs_second.push(avg(npf::idx::F_X1X2));
            avgs_second.push(avg(npf::idx::F_X2X2));
        }
        let worst = |vals: &[f64], center: f64| -> f64 {
            vals.iter()
                .cloned()
                .max_by(|a, b| {
                    (a - center)
                        .abs()
                        .partial_cmp(&(b - center).abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(center)
        };
        let worst_fx1 = worst(&avgs_fx1, -1.0);
        let worst_fx2 = worst(&avgs_fx2, -0.5);
        let worst_second = worst(&avgs_second, 0.0);
        let passed = (worst_fx1 + 1.0).abs() <= 0.2
            && (worst_fx2 + 0.5).abs() <= 0.2
            && worst_second.abs() <= 0.1;
        Ok(finish(
            name,
            t0,
            passed,
            "5 seeds; f_x1 in -1+-0.2, f_x2 in -0.5+-0.2, second derivatives within +-0.1"
                .to_string(),
            vec![
                ("worst_avg_f_x1".into(), worst_fx1),
                ("worst_avg_f_x2".into(), worst_fx2),
                ("worst_avg_second".into(), worst_second),
            ],
        ))
    };
    guard(name, t0, run())
}

/// Check 6: projection properties on 10^4 random drift states plus 10^4
/// linear-drift states with a closed-form coefficient oracle.
pub fn check_geometry_projection() -> CheckResult {
    let name = "geometry_projection";
    let t0 = Instant::now();
    let run = || -> Result<CheckResult> {
        let mut rng = ChaCha12Rng::seed_from_u64(606);
        let mut max_resid = 0.0f64;
        let mut max_overshoot = 0.0f64;
        for _ in 0..10_000 {
            let s = geometry::DriftState {
                x1: rng.random_range(-2.0..2.0),
                x2: rng.random_range(-2.0..2.0),
                f: rng.random_range(-2.0..2.0),
                fx1: rng.random_range(-2.0..2.0),
                fx2: rng.random_range(-2.0..2.0),
                fx1x1: rng.random_range(-2.0..2.0),
                fx1x2: rng.random_range(-2.0..2.0),
                fx2x2: rng.random_range(-2.0..2.0),
            };
            let dvdt = geometry::acceleration_field(&s);
            let (_, nabla) = geometry::covariant_derivative(&s);
            let resid = dvdt - nabla;
            let (e1, e2) = geometry::tangent_basis(&s);
            let scale = dvdt.norm().max(1.0);
            max_resid = max_resid.max(resid.dot(&e1).abs() / scale);
            max_resid = max_resid.max(resid.dot(&e2).abs() / scale);
            max_overshoot = max_overshoot.max(nabla.norm() - dvdt.norm());
        }

        let mut max_beta_err = 0.0f64;
        for _ in 0..10_000 {
            let a = rng.random_range(-2.0..2.0);
            let b = rng.random_range(-2.0..2.0);
            let x1 = rng.random_range(-2.0..2.0);
            let x2 = rng.random_range(-2.0..2.0);
            let s = geometry::DriftState {
                x1,
                x2,
                f: a * x1 + b * x2,
                fx1: a,
                fx2: b,
                fx1x1: 0.0,
                fx1x2: 0.0,
                fx2x2: 0.0,
            };
            let dvdt = geometry::acceleration_field(&s);
            let (e1, e2) = geometry::tangent_basis(&s);
            let w = Vector2::new(e1.dot(&dvdt), e2.dot(&dvdt));
            let gsq = a * a + b * b;
            let gw = a * w[0] + b * w[1];
            let closed = Vector2::new(w[0] - a * gw / (1.0 + gsq), w[1] - b * gw / (1.0 + gsq));
            let (beta, _) = geometry::covariant_derivative(&s);
            max_beta_err = max_beta_err.max((beta - closed).norm() / closed.norm().max(1.0));
        }

        let passed = max_resid <= 1e-10 && max_overshoot <= 1e-12 && max_beta_err <= 1e-12;
        Ok(finish(
            name,
            t0,
            passed,
            "10^4 random states + 10^4 linear-drift states".to_string(),
            vec![
                ("max_normal_eq_residual".into(), max_resid),
                ("max_norm_overshoot".into(), max_overshoot),
                ("max_closed_form_beta_error".into(), max_beta_err),
            ],
        ))
    };
    guard(name, t0, run())
}

/// Check 7: on constructed states whose acceleration is orthogonal to the
/// tangent plane, the speed is the designed constant and the geodesic
/// flag holds throughout.
pub fn check_geodesic_constant_speed(geodesic_tol: Option<f64>) -> CheckResult {
    let name = "geodesic_constant_speed";
    let t0 = Instant::now();
    let run = || -> Result<CheckResult> {
        let speed = 1.7;
        let tol = geodesic_tol.unwrap_or(1e-8);
        let mut rng = ChaCha12Rng::seed_from_u64(707);
        let mut max_speed_dev = 0.0f64;
        let mut max_nabla = 0.0f64;
        let mut all_geodesic = true;
        for _ in 0..200 {
            // choose slopes, then solve for f, x2 and f_x1x1 so that
            // dV/dt is normal to the tangent plane and |V| = speed
            let fx1 = {
                let mut v: f64 = rng.random_range(-2.0..2.0);
                while v.abs() < 0.2 || (v - 1.0).abs() < 0.1 {
                    v = rng.random_range(-2.0..2.0);
                }
                v
            };
            let fx2 = {
                let mut v: f64 = rng.random_range(-2.0..2.0);
                while v.abs() < 0.2 {
                    v = rng.random_range(-2.0..2.0);
                }
                v
            };
            let fx1x2 = rng.random_range(-1.0..1.0);
            let fx2x2 = rng.random_range(-1.0..1.0);
            // x2 = f fx2 (1 - fx1) / fx1^2 makes E2 . dV/dt = 0 once the
            // third component equals -f/fx1
            let shape = fx2 * (1.0 - fx1) / (fx1 * fx1);
            let scale = (shape * shape + 1.0 + (fx2 / fx1) * (fx2 / fx1)).sqrt();
            let f = speed / scale * if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
            let x2 = f * shape;
            let third_target = -f / fx1;
            let x3dot = fx1 * x2 + fx2 * f;
            let fx1x1 = (third_target
                - (2.0 * fx1x2 * x2 * f + fx1 * f + fx2x2 * f * f + fx2 * x3dot))
                / (x2 * x2);
            let s = geometry::DriftState {
                x1: rng.random_range(-2.0..2.0),
                x2,
                f,
                fx1,
                fx2,
                fx1x1,
                fx1x2,
                fx2x2,
            };
            let v = geometry::velocity_field(&s);
            let (_, nabla) = geometry::covariant_derivative(&s);
            max_speed_dev = max_speed_dev.max((v.norm() - speed).abs());
            max_nabla = max_nabla.max(nabla.norm());
            if !geometry::geodesic_flag(nabla.norm(), tol)? {
                all_geodesic = false;
            }
        }
        let passed = max_speed_dev <= 1e-10 && all_geodesic;
        Ok(finish(
            name,
            t0,
            passed,
            "200 constructed normal-acceleration states at speed 1.7".to_string(),
            vec![
                ("max_speed_deviation".into(), max_speed_dev),
                ("max_nabla_norm".into(), max_nabla),
            ],
        ))
    };
    guard(name, t0, run())
}

/// Check 8: the estimator started at twice the true scales reaches a log
/// likelihood no worse than the truth minus 1 and recovers the
/// observation noise within a factor of 2.
pub fn check_qmle_sanity(max_iter: usize) -> CheckResult {
    let name = "qmle_sanity";
    let t0 = Instant::now();
    let run = || -> Result<CheckResult> {
        let point = OscillatorCheckPoint::default();
        let series = oscillator_series(&point, 0)?;
        let init_state = oscillator_init(&point, series.values()[0]);

        let truth = point.filter_params;
        let ll_truth = npf::log_likelihood(&series, &truth, &init_state)?;

        let start = ModelParams::new(
            2.0 * truth.sigma1,
            2.0 * truth.sigma2,
            2.0 * truth.sigma_eps,
            truth.theta0,
            truth.theta1,
            truth.theta2,
            truth.theta3,
        );
        let opts = FitOptions {
            max_iter,
            init_state: Some(init_state.clone()),
            ..FitOptions::default()
        };
        let report = qmle::fit(&series, &start, &opts)?;
        let ratio = report.params.sigma_eps / truth.sigma_eps;
        let passed = report.log_likelihood >= ll_truth - 1.0 && (0.5..=2.0).contains(&ratio);
        Ok(finish(
            name,
            t0,
            passed,
            format!(
                "fit ll {:.3} vs truth ll {:.3}; sigma_eps ratio {:.3} (iterations {})",
                report.log_likelihood, ll_truth, ratio, report.iterations
            ),
            vec![
                ("loglik_gap".into(), report.log_likelihood - ll_truth),
                ("sigma_eps_ratio".into(), ratio),
            ],
        ))
    };
    guard(name, t0, run())
}

/// Check 9: statistics layer invariants (Hotelling affine invariance and
/// zero at the mean, threshold constant, PCA normalization and planted
/// rank-1 detection, ANOVA separation of disjoint populations).
pub fn check_statistics_layer() -> CheckResult {
    let name = "statistics_layer";
    let t0 = Instant::now();
    let run = || -> Result<CheckResult> {
        let mut rng = ChaCha12Rng::seed_from_u64(909);
        let mut measured = Vec::new();
        let mut passed = true;

        // Hotelling affine invariance
        let features: Vec<yearstats::FeatureVector> = (0..12)
            .map(|i| yearstats::FeatureVector {
                year: format!("y{i}"),
                features: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            })
            .collect();
        let base = yearstats::hotelling_t2(&features)?;
        let a = nalgebra::Matrix4::<f64>::from_fn(|_, _| rng.random_range(-1.0..1.0))
            + nalgebra::Matrix4::identity() * 2.0;
        let shift = nalgebra::Vector4::new(1.0, -2.0, 0.5, 3.0);
        let mapped: Vec<yearstats::FeatureVector> = features
            .iter()
            .map(|f| {
                let x = a * nalgebra::Vector4::from_row_slice(&f.features) + shift;
                yearstats::FeatureVector {
                    year: f.year.clone(),
                    features: [x[0], x[1], x[2], x[3]],
                }
            })
            .collect();
        let trans = yearstats::hotelling_t2(&mapped)?;
        let mut max_t2_dev = 0.0f64;
        for ((_, t0v, _), (_, t1v, _)) in base.iter().zip(&trans) {
            max_t2_dev = max_t2_dev.max((t0v - t1v).abs() / t0v.max(1.0));
        }
        measured.push(("hotelling_affine_deviation".to_string(), max_t2_dev));
        if max_t2_dev > 1e-8 {
            passed = false;
        }

        // a year exactly at the mean has t2 = 0
        let mut sums = [0.0f64; 4];
        for f in &features {
            for (slot, v) in sums.iter_mut().zip(&f.features) {
                *slot += v;
            }
        }
        let mut with_center = features.clone();
        with_center.push(yearstats::FeatureVector {
            year: "center".to_string(),
            features: std::array::from_fn(|j| sums[j] / features.len() as f64),
        });
        let out = yearstats::hotelling_t2(&with_center)?;
        let center_t2 = out.last().unwrap().1;
        measured.push(("t2_at_mean".to_string(), center_t2));
        if center_t2.abs() > 1e-10 || out.last().unwrap().2 {
            passed = false;
        }

        // threshold is pinned
        if yearstats::HOTELLING_THRESHOLD != 9.49 {
            passed = false;
        }

        // PCA: explained sums to one and detects a planted line
        let line: Vec<yearstats::FeatureVector> = (0..10)
            .map(|i| {
                let t = i as f64 - 4.5;
                yearstats::FeatureVector {
                    year: format!("l{i}"),
                    features: [t, -2.0 * t, 0.5 * t, 3.0 * t],
                }
            })
            .collect();
        let pca = yearstats::pca_features(&line)?;
        let sum: f64 = pca.explained.iter().sum();
        measured.push(("pca_explained_sum_dev".to_string(), (sum - 1.0).abs()));
        measured.push(("pca_rank1_first".to_string(), pca.explained[0]));
        if (sum - 1.0).abs() > 1e-10 || (pca.explained[0] - 1.0).abs() > 1e-10 {
            passed = false;
        }

        // ANOVA separates two synthetic populations with disjoint supports
        let low: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..0.1)).collect();
        let high: Vec<f64> = (0..40).map(|_| rng.random_range(5.0..5.1)).collect();
        let grouping = yearstats::anova_grouping(&[
            ("low".to_string(), low),
            ("high".to_string(), high),
        ])?;
        if grouping.groups.len() != 2 {
            passed = false;
        }
        measured.push(("anova_groups".to_string(), grouping.groups.len() as f64));

        Ok(finish(
            name,
            t0,
            passed,
            "Hotelling, PCA and ANOVA layer invariants".to_string(),
            measured,
        ))
    };
    guard(name, t0, run())
}

/// Check 10: the full pipeline run twice on the simulated oscillator CSV
/// produces byte-identical artifacts.
pub fn check_pipeline_determinism(scratch: &Path, max_iter: usize) -> CheckResult {
    let name = "pipeline_determinism";
    let t0 = Instant::now();
    let run = || -> Result<CheckResult> {
        std::fs::create_dir_all(scratch)?;
        let point = OscillatorCheckPoint::default();
        let series = oscillator_series(&point, 0)?;
        let csv_path = scratch.join("oscillator.csv");
        let mut buf = Vec::new();
        write_price_csv(&mut buf, series.values(), (1990, 1, 1), 100.0)?;
        std::fs::write(&csv_path, &buf)?;

        let mut config = PipelineConfig {
            input: csv_path.to_string_lossy().to_string(),
            dt: point.dt,
            max_iter,
            init_sigma1: 0.01,
            init_sigma2: 0.1,
            init_sigma_eps: 0.002,
            ..PipelineConfig::default()
        };

        let out_a = scratch.join("run_a");
        let out_b = scratch.join("run_b");
        config.out_dir = out_a.to_string_lossy().to_string();
        let result_a = pipeline::run_pipeline(&config)?;
        config.out_dir = out_b.to_string_lossy().to_string();
        let result_b = pipeline::run_pipeline(&config)?;

        let mut identical = true;
        let mut compared = 0usize;
        for path_a in &result_a.written {
            let rel = path_a.strip_prefix(&out_a).unwrap_or(path_a);
            let path_b = out_b.join(rel);
            let bytes_a = std::fs::read(path_a)?;
            let bytes_b = std::fs::read(&path_b)?;
            if bytes_a != bytes_b {
                identical = false;
            }
            compared += 1;
        }
        let same_count = result_a.written.len() == result_b.written.len();
        Ok(finish(
            name,
            t0,
            identical && same_count && compared > 0,
            format!("{compared} artifacts compared byte-wise across two runs"),
            vec![("artifacts".into(), compared as f64)],
        ))
    };
    guard(name, t0, run())
}

/// Run the complete battery in order.
pub fn run_battery(config: &BatteryConfig) -> Vec<CheckResult> {
    vec![
        check_phi_identities(),
        check_noise_covariance_quadrature(),
        check_kalman_oracle(),
        check_frozen_drift_equivalence(),
        check_oscillator_gradient_hold(),
        check_geometry_projection(),
        check_geodesic_constant_speed(config.geodesic_tol),
        check_qmle_sanity(config.qmle_max_iter),
        check_statistics_layer(),
        check_pipeline_determinism(&config.scratch_dir, config.pipeline_max_iter),
    ]
}
