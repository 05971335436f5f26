//! Synthetic trajectories of the partially observed second-order system
//!
//!   dx1 = x2 dt + sigma1 dB1
//!   dx2 = f(x1, x2) dt + sigma2 dB2
//!
//! with noisy scalar observation of x1. Euler-Maruyama with configurable
//! substeps; the ground-truth oracle for all estimation tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::npf::ObservationSeries;

type Field = std::sync::Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

fn field(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Field {
    std::sync::Arc::new(f)
}

/// A drift function together with its analytic partials up to order 2.
#[derive(Clone)]
pub struct DriftSpec {
    pub name: String,
    pub f: Field,
    pub fx1: Field,
    pub fx2: Field,
    pub fx1x1: Field,
    pub fx1x2: Field,
    pub fx2x2: Field,
}

impl DriftSpec {
    /// f = 0 (free motion).
    pub fn zero() -> Self {
        DriftSpec::linear("zero", 0.0, 0.0)
    }

    /// Linear drift f = a x1 + b x2 with all second partials zero.
    pub fn linear(name: &str, a: f64, b: f64) -> Self {
        DriftSpec {
            name: name.to_string(),
            f: field(move |x1, x2| a * x1 + b * x2),
            fx1: field(move |_, _| a),
            fx2: field(move |_, _| b),
            fx1x1: field(|_, _| 0.0),
            fx1x2: field(|_, _| 0.0),
            fx2x2: field(|_, _| 0.0),
        }
    }

    /// Damped harmonic drift f = -x1 - 0.5 x2.
    pub fn damped_oscillator() -> Self {
        DriftSpec::linear("damped_oscillator", -1.0, -0.5)
    }

    /// Undamped harmonic drift f = -x1.
    pub fn harmonic() -> Self {
        DriftSpec::linear("harmonic", -1.0, 0.0)
    }

    /// Van der Pol drift f = mu (1 - x1^2) x2 - x1.
    pub fn van_der_pol(mu: f64) -> Self {
        DriftSpec {
            name: "van_der_pol".to_string(),
            f: field(move |x1, x2| mu * (1.0 - x1 * x1) * x2 - x1),
            fx1: field(move |x1, x2| -2.0 * mu * x1 * x2 - 1.0),
            fx2: field(move |x1, _| mu * (1.0 - x1 * x1)),
            fx1x1: field(move |_, x2| -2.0 * mu * x2),
            fx1x2: field(move |x1, _| -2.0 * mu * x1),
            fx2x2: field(|_, _| 0.0),
        }
    }
}

/// A simulated latent trajectory sampled on a uniform grid.
#[derive(Debug, Clone)]
pub struct LatentPath {
    pub times: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub f_values: Vec<f64>,
    pub dt: f64,
}

/// Euler-Maruyama simulation of the latent pair, `substeps` internal steps
/// of size dt/substeps per output step. Deterministic given `seed`; with
/// both sigmas zero this is plain deterministic Euler integration.
#[allow(clippy::too_many_arguments)]
pub fn simulate_sde(
    drift: &DriftSpec,
    sigma1: f64,
    sigma2: f64,
    x0: (f64, f64),
    dt: f64,
    n: usize,
    substeps: usize,
    seed: u64,
) -> Result<LatentPath> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 output points, got {n}")));
    }
    if substeps < 1 {
        return Err(Error::invalid("substeps must be >= 1"));
    }
    if sigma1 < 0.0 || sigma2 < 0.0 {
        return Err(Error::invalid("diffusion coefficients must be nonnegative"));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let h = dt / substeps as f64;
    let sqrt_h = h.sqrt();
    let (mut x1, mut x2) = x0;

    let mut path = LatentPath {
        times: Vec::with_capacity(n),
        x1: Vec::with_capacity(n),
        x2: Vec::with_capacity(n),
        f_values: Vec::with_capacity(n),
        dt,
    };
    path.times.push(0.0);
    path.x1.push(x1);
    path.x2.push(x2);
    path.f_values.push((drift.f)(x1, x2));

    for k in 1..n {
        for _ in 0..substeps {
            let f = (drift.f)(x1, x2);
            let dw1: f64 = rng.sample(StandardNormal);
            let dw2: f64 = rng.sample(StandardNormal);
            let x1_next = x1 + x2 * h + sigma1 * sqrt_h * dw1;
            let x2_next = x2 + f * h + sigma2 * sqrt_h * dw2;
            x1 = x1_next;
            x2 = x2_next;
        }
        if !(x1.is_finite() && x2.is_finite()) {
            return Err(Error::numeric(Some(k), "simulation diverged"));
        }
        path.times.push(k as f64 * dt);
        path.x1.push(x1);
        path.x2.push(x2);
        path.f_values.push((drift.f)(x1, x2));
    }
    Ok(path)
}

/// Observation model Z_k = x1_k + eps_k with iid Gaussian noise.
/// Deterministic given `seed`.
pub fn observe(path: &LatentPath, sigma_eps: f64, seed: u64) -> Result<ObservationSeries> {
    if path.x1.is_empty() {
        return Err(Error::invalid("path is empty"));
    }
    if !(sigma_eps >= 0.0 && sigma_eps.is_finite()) {
        return Err(Error::invalid(format!(
            "observation noise must be nonnegative, got {sigma_eps}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let values: Vec<f64> = path
        .x1
        .iter()
        .map(|&x| {
            let eps: f64 = rng.sample(StandardNormal);
            x + sigma_eps * eps
        })
        .collect();
    ObservationSeries::new(values, path.dt, None)
}

/// Write a series as the `date,price` CSV the pipeline ingests, with
/// synthetic consecutive calendar dates starting at `start_date` and
/// prices P_k = base_price * exp(z_k) so the ingested log relative price
/// reproduces z_k - z_0.
pub fn write_price_csv<W: std::io::Write>(
    out: &mut W,
    values: &[f64],
    start_date: (i32, u32, u32),
    base_price: f64,
) -> Result<()> {
    if base_price <= 0.0 {
        return Err(Error::invalid("base price must be positive"));
    }
    writeln!(out, "date,price")?;
    let (mut y, mut m, mut d) = start_date;
    for &z in values {
        writeln!(out, "{:04}-{:02}-{:02},{:.12e}", y, m, d, base_price * z.exp())?;
        let (ny, nm, nd) = next_day(y, m, d);
        y = ny;
        m = nm;
        d = nd;
    }
    Ok(())
}

pub(crate) fn days_in_month(year: i32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 {
                29
            } else {
                28
            }
        }
        _ => 0,
    }
}

pub(crate) fn next_day(year: i32, month: u32, day: u32) -> (i32, u32, u32) {
    if day < days_in_month(year, month) {
        (year, month, day + 1)
    } else if month < 12 {
        (year, month + 1, 1)
    } else {
        (year + 1, 1, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn free_motion_is_linear() {
        let path = simulate_sde(&DriftSpec::zero(), 0.0, 0.0, (0.0, 1.0), 0.1, 3, 1, 0).unwrap();
        assert_relative_eq!(path.x1[0], 0.0);
        assert_relative_eq!(path.x1[1], 0.1, epsilon = 1e-15);
        assert_relative_eq!(path.x1[2], 0.2, epsilon = 1e-15);
        assert!(path.x2.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn harmonic_matches_cosine() {
        // x'' = -x, x(0) = 1, x'(0) = 0 -> x(t) = cos(t)
        let n = 629;
        let dt = 0.01;
        let path =
            simulate_sde(&DriftSpec::harmonic(), 0.0, 0.0, (1.0, 0.0), dt, n, 1000, 0).unwrap();
        let t_end = (n - 1) as f64 * dt;
        assert!((path.x1[n - 1] - t_end.cos()).abs() < 1e-3);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = simulate_sde(&DriftSpec::damped_oscillator(), 0.1, 0.2, (0.5, 0.0), 0.05, 50, 4, 99).unwrap();
        let b = simulate_sde(&DriftSpec::damped_oscillator(), 0.1, 0.2, (0.5, 0.0), 0.05, 50, 4, 99).unwrap();
        assert_eq!(a.x1, b.x1);
        assert_eq!(a.x2, b.x2);
    }

    #[test]
    fn rejects_bad_arguments() {
        let d = DriftSpec::zero();
        assert!(simulate_sde(&d, 0.0, 0.0, (0.0, 0.0), 0.0, 10, 1, 0).is_err());
        assert!(simulate_sde(&d, 0.0, 0.0, (0.0, 0.0), 0.1, 1, 1, 0).is_err());
        assert!(simulate_sde(&d, 0.0, 0.0, (0.0, 0.0), 0.1, 10, 0, 0).is_err());
    }

    #[test]
    fn observe_zero_noise_is_identity() {
        let path = simulate_sde(&DriftSpec::zero(), 0.0, 0.0, (0.3, 0.1), 0.1, 20, 1, 1).unwrap();
        let series = observe(&path, 0.0, 5).unwrap();
        assert_eq!(series.values(), path.x1.as_slice());
    }

    #[test]
    fn observe_noise_scale() {
        let n = 100_000;
        let path = simulate_sde(&DriftSpec::zero(), 0.0, 0.0, (0.0, 0.0), 1.0, n, 1, 2).unwrap();
        let series = observe(&path, 1.0, 3).unwrap();
        let resid: Vec<f64> = series
            .values()
            .iter()
            .zip(&path.x1)
            .map(|(z, x)| z - x)
            .collect();
        let mean = resid.iter().sum::<f64>() / n as f64;
        let var = resid.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 1.0).abs() < 0.01, "sample sd {}", var.sqrt());
    }

    #[test]
    fn observe_deterministic() {
        let path = simulate_sde(&DriftSpec::zero(), 0.0, 0.0, (0.0, 0.0), 1.0, 10, 1, 4).unwrap();
        let a = observe(&path, 0.5, 77).unwrap();
        let b = observe(&path, 0.5, 77).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn observe_rejects_negative_noise() {
        let path = simulate_sde(&DriftSpec::zero(), 0.0, 0.0, (0.0, 0.0), 1.0, 10, 1, 4).unwrap();
        assert!(observe(&path, -1.0, 0).is_err());
    }

    #[test]
    fn energy_envelope_conserved_without_damping() {
        // f = -x1, c = 0: E = x2^2 + x1^2 should drift slowly under Euler
        let dt = 0.01;
        let substeps = 100;
        let period = std::f64::consts::TAU;
        let n = (period / dt).round() as usize + 1;
        let path = simulate_sde(&DriftSpec::harmonic(), 0.0, 0.0, (1.0, 0.0), dt, n, substeps, 0).unwrap();
        let e0 = path.x2[0] * path.x2[0] + path.x1[0] * path.x1[0];
        let e1 = path.x2[n - 1] * path.x2[n - 1] + path.x1[n - 1] * path.x1[n - 1];
        let rel_drift = (e1 - e0).abs() / e0;
        assert!(
            rel_drift <= 5.0 * (dt / substeps as f64) * period,
            "energy drift {rel_drift}"
        );
    }

    #[test]
    fn velocity_variance_grows_linearly() {
        // f = 0: Var(x2 at T) ~ sigma2^2 T
        let sigma2 = 0.3;
        let t_final = 0.5;
        let reps = 10_000;
        let mut vals = Vec::with_capacity(reps);
        for seed in 0..reps as u64 {
            let path = simulate_sde(&DriftSpec::zero(), 0.0, sigma2, (0.0, 0.0), t_final, 2, 8, seed).unwrap();
            vals.push(path.x2[1]);
        }
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64;
        let expect = sigma2 * sigma2 * t_final;
        assert!(
            (var - expect).abs() / expect < 0.05,
            "var {var} vs expected {expect}"
        );
    }

    #[test]
    fn price_csv_roundtrip_schema() {
        let mut buf = Vec::new();
        write_price_csv(&mut buf, &[0.0, 0.1, -0.2], (2001, 2, 27), 100.0).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "date,price");
        let first = lines.next().unwrap();
        assert!(first.starts_with("2001-02-27,"));
        // Feb 2001 has 28 days; the third row must roll into March.
        let third = lines.nth(1).unwrap();
        assert!(third.starts_with("2001-03-01,"));
    }

    #[test]
    fn calendar_rollovers() {
        assert_eq!(next_day(2000, 2, 28), (2000, 2, 29)); // leap
        assert_eq!(next_day(1900, 2, 28), (1900, 3, 1)); // not leap
        assert_eq!(next_day(1999, 12, 31), (2000, 1, 1));
    }
}
