//! Trajectory geometry in the differential phase space: the curve
//! (x1, x2, x3) with x3 = f(x1, x2) lives on the surface defined by the
//! drift, its velocity V spans the tangent plane, and the covariant
//! derivative of V is the least-squares projection of dV/dt onto that
//! plane. Vanishing covariant derivative marks geodesic motion.

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::npf::{idx, StateEstimate, StateKind};

/// The eight quantities geometry needs at one point: position, velocity,
/// drift value and its partial derivatives up to order two.
#[derive(Debug, Clone, Copy)]
pub struct DriftState {
    pub x1: f64,
    pub x2: f64,
    pub f: f64,
    pub fx1: f64,
    pub fx2: f64,
    pub fx1x1: f64,
    pub fx1x2: f64,
    pub fx2x2: f64,
}

impl DriftState {
    pub fn is_finite(&self) -> bool {
        [
            self.x1, self.x2, self.f, self.fx1, self.fx2, self.fx1x1, self.fx1x2, self.fx2x2,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Read the drift state off a filtered state estimate.
    pub fn from_state(state: &StateEstimate) -> Result<Self> {
        if state.kind != StateKind::Filtered {
            return Err(Error::invalid("geometry requires a filtered state"));
        }
        let s = DriftState {
            x1: state.xi[idx::X1],
            x2: state.xi[idx::X2],
            f: state.xi[idx::F],
            fx1: state.xi[idx::F_X1],
            fx2: state.xi[idx::F_X2],
            fx1x1: state.xi[idx::F_X1X1],
            fx1x2: state.xi[idx::F_X1X2],
            fx2x2: state.xi[idx::F_X2X2],
        };
        if !s.is_finite() {
            return Err(Error::numeric(
                Some(state.time_index),
                "state estimate has non-finite entries",
            ));
        }
        Ok(s)
    }
}

/// All geometric quantities at one time step.
#[derive(Debug, Clone)]
pub struct GeometrySample {
    pub v: Vector3<f64>,
    pub dvdt: Vector3<f64>,
    pub beta: Vector2<f64>,
    pub nabla_v: Vector3<f64>,
    pub norm_v: f64,
    pub norm_nabla_v: f64,
    pub geodesic: bool,
    pub time_index: usize,
}

/// Velocity of the embedded curve: (x2, f, f_x1 x2 + f_x2 f).
pub fn velocity_field(s: &DriftState) -> Vector3<f64> {
    let x3_dot = s.fx1 * s.x2 + s.fx2 * s.f;
    Vector3::new(s.x2, s.f, x3_dot)
}

/// Time derivative of the velocity along the curve.
pub fn acceleration_field(s: &DriftState) -> Vector3<f64> {
    let x3_dot = s.fx1 * s.x2 + s.fx2 * s.f;
    let third = s.fx1x1 * s.x2 * s.x2
        + 2.0 * s.fx1x2 * s.x2 * s.f
        + s.fx1 * s.f
        + s.fx2x2 * s.f * s.f
        + s.fx2 * x3_dot;
    Vector3::new(s.f, x3_dot, third)
}

/// Tangent basis vectors E1 = (1, 0, f_x1), E2 = (0, 1, f_x2).
pub fn tangent_basis(s: &DriftState) -> (Vector3<f64>, Vector3<f64>) {
    (
        Vector3::new(1.0, 0.0, s.fx1),
        Vector3::new(0.0, 1.0, s.fx2),
    )
}

/// Least-squares projection of dV/dt onto the tangent plane.
///
/// The normal matrix X^T X = I + g g^T with g = (f_x1, f_x2) has
/// eigenvalues 1 and 1 + |g|^2, so the 2x2 solve never degenerates.
pub fn covariant_derivative(s: &DriftState) -> (Vector2<f64>, Vector3<f64>) {
    let dvdt = acceleration_field(s);
    let (e1, e2) = tangent_basis(s);
    let g1 = s.fx1;
    let g2 = s.fx2;
    let xtx = Matrix2::new(1.0 + g1 * g1, g1 * g2, g1 * g2, 1.0 + g2 * g2);
    let rhs = Vector2::new(e1.dot(&dvdt), e2.dot(&dvdt));
    let det = xtx[(0, 0)] * xtx[(1, 1)] - xtx[(0, 1)] * xtx[(1, 0)];
    let beta = Vector2::new(
        (xtx[(1, 1)] * rhs[0] - xtx[(0, 1)] * rhs[1]) / det,
        (xtx[(0, 0)] * rhs[1] - xtx[(1, 0)] * rhs[0]) / det,
    );
    let nabla_v = e1 * beta[0] + e2 * beta[1];
    (beta, nabla_v)
}

/// Whether the covariant-derivative norm is within tolerance of zero;
/// the boundary is inclusive.
pub fn geodesic_flag(norm_nabla_v: f64, tol: f64) -> Result<bool> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    if !norm_nabla_v.is_finite() {
        return Err(Error::invalid("norm must be finite"));
    }
    Ok(norm_nabla_v <= tol)
}

/// Compose the full geometric sample from a filtered state estimate.
pub fn geometry_sample(state: &StateEstimate, tol: f64) -> Result<GeometrySample> {
    let s = DriftState::from_state(state)?;
    let v = velocity_field(&s);
    let dvdt = acceleration_field(&s);
    let (beta, nabla_v) = covariant_derivative(&s);
    let norm_v = v.norm();
    let norm_nabla_v = nabla_v.norm();
    let geodesic = geodesic_flag(norm_nabla_v, tol)?;
    Ok(GeometrySample {
        v,
        dvdt,
        beta,
        nabla_v,
        norm_v,
        norm_nabla_v,
        geodesic,
        time_index: state.time_index,
    })
}

/// Default geodesic tolerance: a small fraction of the median
/// covariant-derivative norm over the series.
pub fn median_fraction_tol(norms: &[f64], fraction: f64) -> Result<f64> {
    if norms.is_empty() {
        return Err(Error::invalid("cannot take a median of an empty series"));
    }
    if !(fraction > 0.0 && fraction.is_finite()) {
        return Err(Error::invalid("fraction must be positive"));
    }
    let mut sorted: Vec<f64> = norms.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    let tol = fraction * median;
    if tol > 0.0 {
        Ok(tol)
    } else {
        // degenerate all-zero series: any positive tolerance flags all
        // points as geodesic, which is the correct reading
        Ok(f64::MIN_POSITIVE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::npf::{StateCov, StateVector};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn drift_state(vals: [f64; 8]) -> DriftState {
        DriftState {
            x1: vals[0],
            x2: vals[1],
            f: vals[2],
            fx1: vals[3],
            fx2: vals[4],
            fx1x1: vals[5],
            fx1x2: vals[6],
            fx2x2: vals[7],
        }
    }

    fn random_drift_state(rng: &mut ChaCha12Rng) -> DriftState {
        let mut vals = [0.0f64; 8];
        for v in vals.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        drift_state(vals)
    }

    #[test]
    fn velocity_examples() {
        let s = drift_state([0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let v = velocity_field(&s);
        assert_eq!(v, Vector3::new(0.1, 0.0, 0.0));
        assert_relative_eq!(v.norm(), 0.1);

        let s = drift_state([0.0, 1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        let v = velocity_field(&s);
        assert_eq!(v, Vector3::new(1.0, -1.0, -1.0));
        assert_relative_eq!(v.norm(), 3f64.sqrt(), epsilon = 1e-15);

        let s = drift_state([0.0; 8]);
        assert_eq!(velocity_field(&s), Vector3::zeros());
    }

    #[test]
    fn acceleration_examples() {
        let s = drift_state([0.0; 8]);
        assert_eq!(acceleration_field(&s), Vector3::zeros());

        // fx1 = 1, x2 = 1, rest 0
        let s = drift_state([0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(acceleration_field(&s), Vector3::new(0.0, 1.0, 0.0));

        // linear drift: x2 = 1, f = -1, fx1 = -1, fx2 = 0
        let s = drift_state([0.0, 1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(acceleration_field(&s), Vector3::new(-1.0, -1.0, 1.0));
    }

    #[test]
    fn covariant_derivative_orthonormal_tangent() {
        // flat surface: projection keeps the first two components
        let s = drift_state([0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let (beta, nabla) = covariant_derivative(&s);
        assert_relative_eq!(beta[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(beta[1], 0.0, epsilon = 1e-14);
        assert_eq!(nabla, Vector3::new(2.0, 0.0, 0.0));
        assert_relative_eq!(nabla.norm(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn covariant_derivative_hand_least_squares() {
        // fx1 = 1, x2 = 1, everything else 0: dV/dt = (0, 1, 0),
        // X^T X = diag(2, 1), beta = (0, 1)
        let s = drift_state([0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let (beta, nabla) = covariant_derivative(&s);
        assert_relative_eq!(beta[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(beta[1], 1.0, epsilon = 1e-14);
        assert_eq!(nabla, Vector3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn residual_orthogonal_to_tangent_plane() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..500 {
            let s = random_drift_state(&mut rng);
            let dvdt = acceleration_field(&s);
            let (_, nabla) = covariant_derivative(&s);
            let resid = dvdt - nabla;
            let (e1, e2) = tangent_basis(&s);
            let scale = dvdt.norm().max(1.0);
            assert!(resid.dot(&e1).abs() <= 1e-10 * scale);
            assert!(resid.dot(&e2).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn projection_is_idempotent_and_contractive() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..500 {
            let s = random_drift_state(&mut rng);
            let dvdt = acceleration_field(&s);
            let (beta, nabla) = covariant_derivative(&s);
            assert!(nabla.norm() <= dvdt.norm() + 1e-12);

            // projecting an in-plane vector returns it unchanged
            let (e1, e2) = tangent_basis(&s);
            let g1 = s.fx1;
            let g2 = s.fx2;
            let xtx = Matrix2::new(1.0 + g1 * g1, g1 * g2, g1 * g2, 1.0 + g2 * g2);
            let rhs = Vector2::new(e1.dot(&nabla), e2.dot(&nabla));
            let beta2 = xtx
                .lu()
                .solve(&rhs)
                .expect("normal matrix is nonsingular");
            let reproj = e1 * beta2[0] + e2 * beta2[1];
            assert!((reproj - nabla).norm() <= 1e-10 * nabla.norm().max(1.0));
            let _ = beta;
        }
    }

    #[test]
    fn linear_drift_closed_form_beta() {
        // For f = a x1 + b x2 the projection has a Sherman-Morrison
        // closed form: beta = w - g (g . w) / (1 + |g|^2), w = X^T dV/dt.
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..500 {
            let a = rng.random_range(-2.0..2.0);
            let b = rng.random_range(-2.0..2.0);
            let x1 = rng.random_range(-2.0..2.0);
            let x2 = rng.random_range(-2.0..2.0);
            let f = a * x1 + b * x2;
            let s = drift_state([x1, x2, f, a, b, 0.0, 0.0, 0.0]);
            let dvdt = acceleration_field(&s);
            let (e1, e2) = tangent_basis(&s);
            let w = Vector2::new(e1.dot(&dvdt), e2.dot(&dvdt));
            let gsq = a * a + b * b;
            let gw = a * w[0] + b * w[1];
            let closed = Vector2::new(w[0] - a * gw / (1.0 + gsq), w[1] - b * gw / (1.0 + gsq));
            let (beta, _) = covariant_derivative(&s);
            assert!((beta - closed).norm() <= 1e-12 * closed.norm().max(1.0));
        }
    }

    #[test]
    fn geodesic_flag_conventions() {
        assert!(geodesic_flag(0.0, 0.5).unwrap());
        assert!(!geodesic_flag(0.5, 0.1).unwrap());
        assert!(geodesic_flag(0.1, 0.1).unwrap()); // inclusive boundary
        assert!(geodesic_flag(0.1, 0.0).is_err());
        assert!(geodesic_flag(0.1, -1.0).is_err());
    }

    #[test]
    fn sample_from_state_composes() {
        let xi = StateVector::from_row_slice(&[0.0, 1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        let state = StateEstimate::new(xi, StateCov::identity(), StateKind::Filtered, 7);
        let sample = geometry_sample(&state, 1e-6).unwrap();
        assert_relative_eq!(sample.norm_v, 3f64.sqrt(), epsilon = 1e-14);
        assert_eq!(sample.time_index, 7);

        let zero = StateEstimate::new(StateVector::zeros(), StateCov::identity(), StateKind::Filtered, 0);
        let sample = geometry_sample(&zero, 1e-6).unwrap();
        assert_eq!(sample.norm_v, 0.0);
        assert!(sample.geodesic);
    }

    #[test]
    fn norm_identity_against_components() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..200 {
            let mut xi = StateVector::zeros();
            for i in 0..8 {
                xi[i] = rng.random_range(-1.0..1.0);
            }
            let state = StateEstimate::new(xi, StateCov::identity(), StateKind::Filtered, 0);
            let sample = geometry_sample(&state, 1.0).unwrap();
            let x3dot = xi[3] * xi[1] + xi[4] * xi[2];
            let expect = xi[1] * xi[1] + xi[2] * xi[2] + x3dot * x3dot;
            assert!((sample.norm_v * sample.norm_v - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn median_tolerance() {
        let tol = median_fraction_tol(&[1.0, 2.0, 3.0], 0.01).unwrap();
        assert_relative_eq!(tol, 0.02, epsilon = 1e-15);
        let tol = median_fraction_tol(&[1.0, 2.0, 3.0, 4.0], 0.01).unwrap();
        assert_relative_eq!(tol, 0.025, epsilon = 1e-15);
        assert!(median_fraction_tol(&[], 0.01).is_err());
        assert!(median_fraction_tol(&[0.0, 0.0], 0.01).unwrap() > 0.0);
    }
}
