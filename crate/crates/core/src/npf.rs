//! Nonparametric filter: a Kalman recursion on an 8-dimensional state
//! holding the latent pair (x1, x2), the unknown drift value f and its
//! partial derivatives up to order 2. The time-varying linear-Gaussian
//! system is reassembled each step from the current filtered estimate;
//! third derivatives are treated as constant nuisance parameters.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matfun;

pub const STATE_DIM: usize = 8;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateCov = SMatrix<f64, STATE_DIM, STATE_DIM>;

/// State component indices: latent pair, drift value, first and second
/// partials of the drift.
pub mod idx {
    pub const X1: usize = 0;
    pub const X2: usize = 1;
    pub const F: usize = 2;
    pub const F_X1: usize = 3;
    pub const F_X2: usize = 4;
    pub const F_X1X1: usize = 5;
    pub const F_X1X2: usize = 6;
    pub const F_X2X2: usize = 7;
}

/// Parameter vector estimated by quasi-maximum likelihood: the three
/// diffusion/observation scales and the four constant third derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma_eps: f64,
    pub theta0: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl ModelParams {
    pub fn new(
        sigma1: f64,
        sigma2: f64,
        sigma_eps: f64,
        theta0: f64,
        theta1: f64,
        theta2: f64,
        theta3: f64,
    ) -> Self {
        ModelParams {
            sigma1,
            sigma2,
            sigma_eps,
            theta0,
            theta1,
            theta2,
            theta3,
        }
    }

    /// Strict validity: positive scales, all entries finite. Required by
    /// the filter run and by the fit.
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.sigma1,
            self.sigma2,
            self.sigma_eps,
            self.theta0,
            self.theta1,
            self.theta2,
            self.theta3,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        if self.sigma1 <= 0.0 || self.sigma2 <= 0.0 || self.sigma_eps <= 0.0 {
            return Err(Error::invalid(
                "sigma1, sigma2 and sigma_eps must be strictly positive",
            ));
        }
        Ok(())
    }

    fn finite(&self) -> bool {
        [
            self.sigma1,
            self.sigma2,
            self.sigma_eps,
            self.theta0,
            self.theta1,
            self.theta2,
            self.theta3,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Whether a state estimate is the output of an update (filtered) or of a
/// prediction step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Filtered,
    Predicted,
}

/// Mean and covariance of the 8-dimensional state at one time index.
#[derive(Debug, Clone)]
pub struct StateEstimate {
    pub xi: StateVector,
    pub sigma: StateCov,
    pub kind: StateKind,
    pub time_index: usize,
}

impl StateEstimate {
    pub fn new(xi: StateVector, sigma: StateCov, kind: StateKind, time_index: usize) -> Self {
        StateEstimate {
            xi,
            sigma: symmetrize(&sigma),
            kind,
            time_index,
        }
    }

    /// Default initialization: first observation in the x1 slot, unit
    /// prior variance on every latent component and observation-noise
    /// variance on x1.
    pub fn initial(z0: f64, sigma_eps: f64) -> Self {
        let mut xi = StateVector::zeros();
        xi[idx::X1] = z0;
        let mut sigma = StateCov::identity();
        sigma[(0, 0)] = sigma_eps * sigma_eps;
        StateEstimate {
            xi,
            sigma,
            kind: StateKind::Filtered,
            time_index: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.xi.iter().all(|v| v.is_finite()) && self.sigma.iter().all(|v| v.is_finite())
    }
}

/// The assembled one-step system: xi' = F xi + c + noise, noise ~ N(0, Q).
/// The building blocks G, A, b and the 2x2 linearization J are kept for
/// inspection.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub f: StateCov,
    pub c: StateVector,
    pub q: StateCov,
    pub g: StateCov,
    pub a: StateCov,
    pub b: StateVector,
    pub j: Matrix2<f64>,
}

/// A uniformly sampled scalar observation series.
#[derive(Debug, Clone)]
pub struct ObservationSeries {
    values: Vec<f64>,
    dt: f64,
    labels: Option<Vec<String>>,
}

impl ObservationSeries {
    pub fn new(values: Vec<f64>, dt: f64, labels: Option<Vec<String>>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "observation series needs at least 2 points, got {}",
                values.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observations must be finite"));
        }
        if let Some(l) = &labels {
            if l.len() != values.len() {
                return Err(Error::invalid("label count must match observation count"));
            }
        }
        Ok(ObservationSeries { values, dt, labels })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One-step prediction error and its variance.
#[derive(Debug, Clone, Copy)]
pub struct Innovation {
    pub value: f64,
    pub variance: f64,
}

/// Complete output of a filter pass.
#[derive(Debug, Clone)]
pub struct FilterRun {
    /// n entries; index 0 is the supplied initial state.
    pub filtered: Vec<StateEstimate>,
    /// n-1 entries, one per transition.
    pub predicted: Vec<StateEstimate>,
    /// n-1 entries, aligned with `predicted`.
    pub innovations: Vec<Innovation>,
    pub log_likelihood: f64,
}

fn symmetrize(m: &StateCov) -> StateCov {
    (m + m.transpose()) * 0.5
}

/// The 2x2 linearization of the latent pair dynamics at a filtered state:
/// rows (0, 1) and (f_x1, f_x2) read off the estimate.
pub fn build_linearization(state: &StateEstimate) -> Result<Matrix2<f64>> {
    if state.kind != StateKind::Filtered {
        return Err(Error::invalid("linearization requires a filtered state"));
    }
    if !state.is_finite() {
        return Err(Error::numeric(
            Some(state.time_index),
            "state estimate has non-finite entries",
        ));
    }
    Ok(Matrix2::new(
        0.0,
        1.0,
        state.xi[idx::F_X1],
        state.xi[idx::F_X2],
    ))
}

/// Assemble the one-step transition from a filtered state.
///
/// F = I + G A and c = G b, where A carries phi1(J, dt) against the
/// (x2, f) components, G carries the chain-rule gradient of each drift
/// state in its first two columns, b carries the second-order drift
/// correction and Q = G pad(Qtilde) G^T propagates the latent-pair noise
/// through the same gradients.
pub fn assemble_transition(
    state: &StateEstimate,
    params: &ModelParams,
    dt: f64,
) -> Result<SystemMatrices> {
    if state.kind != StateKind::Filtered {
        return Err(Error::invalid("transition requires a filtered state"));
    }
    if !state.is_finite() {
        return Err(Error::numeric(
            Some(state.time_index),
            "state estimate has non-finite entries",
        ));
    }
    if !params.finite() {
        return Err(Error::invalid("model parameters must be finite"));
    }
    if params.sigma1 < 0.0 || params.sigma2 < 0.0 {
        return Err(Error::invalid("diffusion coefficients must be nonnegative"));
    }

    let xi = &state.xi;
    let j = Matrix2::new(0.0, 1.0, xi[idx::F_X1], xi[idx::F_X2]);
    let (p1, p2) = matfun::phi_pair_2x2(&j, dt)?;

    let mut a = StateCov::zeros();
    a[(0, 1)] = p1[(0, 0)];
    a[(0, 2)] = p1[(0, 1)];
    a[(1, 1)] = p1[(1, 0)];
    a[(1, 2)] = p1[(1, 1)];

    let mut g = StateCov::identity();
    g[(idx::F, 0)] = xi[idx::F_X1];
    g[(idx::F, 1)] = xi[idx::F_X2];
    g[(idx::F_X1, 0)] = xi[idx::F_X1X1];
    g[(idx::F_X1, 1)] = xi[idx::F_X1X2];
    g[(idx::F_X2, 0)] = xi[idx::F_X1X2];
    g[(idx::F_X2, 1)] = xi[idx::F_X2X2];
    g[(idx::F_X1X1, 0)] = params.theta0;
    g[(idx::F_X1X1, 1)] = params.theta1;
    g[(idx::F_X1X2, 0)] = params.theta1;
    g[(idx::F_X1X2, 1)] = params.theta2;
    g[(idx::F_X2X2, 0)] = params.theta2;
    g[(idx::F_X2X2, 1)] = params.theta3;

    // Second-order drift correction of the latent pair and of f itself.
    let m = 0.5 * params.sigma1 * params.sigma1 * xi[idx::F_X1X1]
        + 0.5 * params.sigma2 * params.sigma2 * xi[idx::F_X2X2];
    let head = p2 * Vector2::new(0.0, m);
    let mut b = StateVector::zeros();
    b[0] = head[0];
    b[1] = head[1];
    b[2] = m * dt;

    let qtilde = matfun::noise_covariance(&j, params.sigma1, params.sigma2, dt)?;
    let mut qpad = StateCov::zeros();
    qpad[(0, 0)] = qtilde[(0, 0)];
    qpad[(0, 1)] = qtilde[(0, 1)];
    qpad[(1, 0)] = qtilde[(1, 0)];
    qpad[(1, 1)] = qtilde[(1, 1)];
    let q = symmetrize(&(g * qpad * g.transpose()));

    let f = StateCov::identity() + g * a;
    let c = g * b;

    Ok(SystemMatrices { f, c, q, g, a, b, j })
}

/// Time update: xi' = F xi + c, Sigma' = F Sigma F^T + Q.
pub fn predict(state: &StateEstimate, sys: &SystemMatrices) -> Result<StateEstimate> {
    if state.kind != StateKind::Filtered {
        return Err(Error::invalid("predict requires a filtered state"));
    }
    let xi = sys.f * state.xi + sys.c;
    let sigma = symmetrize(&(sys.f * state.sigma * sys.f.transpose() + sys.q));
    let out = StateEstimate {
        xi,
        sigma,
        kind: StateKind::Predicted,
        time_index: state.time_index + 1,
    };
    if !out.is_finite() {
        return Err(Error::numeric(
            Some(state.time_index),
            "prediction produced non-finite values",
        ));
    }
    Ok(out)
}

/// Measurement update against a scalar observation of x1.
///
/// Returns the filtered state together with the innovation and its
/// variance. `sigma_eps` may be zero (perfect-observation limit); a
/// nonpositive innovation variance is a numeric error.
pub fn update(
    pred: &StateEstimate,
    z: f64,
    sigma_eps: f64,
) -> Result<(StateEstimate, f64, f64)> {
    if pred.kind != StateKind::Predicted {
        return Err(Error::invalid("update requires a predicted state"));
    }
    if !z.is_finite() || !sigma_eps.is_finite() || sigma_eps < 0.0 {
        return Err(Error::invalid("observation and noise scale must be finite, noise nonnegative"));
    }
    let innovation = z - pred.xi[idx::X1];
    let innovation_var = pred.sigma[(0, 0)] + sigma_eps * sigma_eps;
    if innovation_var <= 0.0 || !innovation_var.is_finite() {
        return Err(Error::numeric(
            Some(pred.time_index),
            format!("nonpositive innovation variance {innovation_var}"),
        ));
    }
    let gain = pred.sigma.column(0) / innovation_var;
    let xi = pred.xi + gain * innovation;
    // Sigma = (I - K H) Sigma with H = e1^T
    let row0 = pred.sigma.row(0).into_owned();
    let sigma = symmetrize(&(pred.sigma - gain * row0));
    let out = StateEstimate {
        xi,
        sigma,
        kind: StateKind::Filtered,
        time_index: pred.time_index,
    };
    if !out.is_finite() {
        return Err(Error::numeric(
            Some(pred.time_index),
            "update produced non-finite values",
        ));
    }
    Ok((out, innovation, innovation_var))
}

const INNOVATION_VAR_FLOOR: f64 = 1e-300;

fn gaussian_loglik_term(innovation: f64, variance: f64) -> f64 {
    let v = variance.max(INNOVATION_VAR_FLOOR);
    -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + innovation * innovation / v)
}

fn filter_core(
    series: &ObservationSeries,
    params: &ModelParams,
    init: &StateEstimate,
    keep_states: bool,
) -> Result<FilterRun> {
    params.validate()?;
    if init.kind != StateKind::Filtered {
        return Err(Error::invalid("initial state must be filtered"));
    }
    if !init.is_finite() {
        return Err(Error::invalid("initial state has non-finite entries"));
    }

    let z = series.values();
    let n = z.len();
    let dt = series.dt();

    let mut filtered = Vec::new();
    let mut predicted = Vec::new();
    if keep_states {
        filtered.reserve(n);
        predicted.reserve(n - 1);
        filtered.push(init.clone());
    }

    let mut innovations = Vec::with_capacity(n - 1);
    let mut current = init.clone();
    let mut log_likelihood = 0.0;

    for k in 0..n - 1 {
        let sys = assemble_transition(&current, params, dt)
            .map_err(|e| at_step(e, current.time_index))?;
        let pred = predict(&current, &sys)?;
        let (upd, innovation, innovation_var) = update(&pred, z[k + 1], params.sigma_eps)?;
        log_likelihood += gaussian_loglik_term(innovation, innovation_var);
        innovations.push(Innovation {
            value: innovation,
            variance: innovation_var,
        });
        if keep_states {
            predicted.push(pred);
            filtered.push(upd.clone());
        }
        current = upd;
        let _ = k;
    }

    Ok(FilterRun {
        filtered,
        predicted,
        innovations,
        log_likelihood,
    })
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numeric { step: None, message } => Error::Numeric {
            step: Some(step),
            message,
        },
        other => other,
    }
}

/// Run the full recursion over a series: assemble, predict, update per
/// step, accumulating the Gaussian one-step-ahead log likelihood.
pub fn run_filter(
    series: &ObservationSeries,
    params: &ModelParams,
    init: &StateEstimate,
) -> Result<FilterRun> {
    filter_core(series, params, init, true)
}

/// The quasi log likelihood alone; identical value to `run_filter` without
/// materializing the state sequences.
pub fn log_likelihood(
    series: &ObservationSeries,
    params: &ModelParams,
    init: &StateEstimate,
) -> Result<f64> {
    Ok(filter_core(series, params, init, false)?.log_likelihood)
}
