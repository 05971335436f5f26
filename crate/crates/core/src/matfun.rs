//! Small dense-matrix special functions: matrix exponential, the phi
//! functions phi1/phi2 and the discretized process-noise covariance.
//!
//! All routines target matrices of dimension <= 8. phi1/phi2 are evaluated
//! through an augmented block exponential so they stay defined when the
//! input is singular; the noise covariance uses the Van Loan construction.

use nalgebra::{DMatrix, Matrix2};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 8;

fn check_square_finite(a: &DMatrix<f64>) -> Result<usize> {
    let (r, c) = a.shape();
    if r != c {
        return Err(Error::invalid(format!("matrix must be square, got {r}x{c}")));
    }
    if r == 0 || r > MAX_DIM {
        return Err(Error::invalid(format!(
            "matrix dimension {r} outside supported range 1..={MAX_DIM}"
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    Ok(r)
}

/// Matrix exponential by scaling and squaring with a diagonal Pade
/// approximant (orders 3/5/7/9/13, Higham's theta thresholds).
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_finite(a)?;
    Ok(expm_unchecked(a))
}

const THETA_3: f64 = 1.495_585_217_958_292e-2;
const THETA_5: f64 = 2.539_398_330_063_23e-1;
const THETA_7: f64 = 9.504_178_996_162_932e-1;
const THETA_9: f64 = 2.097_847_961_257_068e0;
const THETA_13: f64 = 5.371_920_351_148_152e0;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const PADE_9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Pade approximant of order m given precomputed even powers of A.
/// Returns (U, V) with r_m(A) = (V - U)^-1 (V + U).
fn pade_uv(a: &DMatrix<f64>, coeffs: &[f64], powers: &[DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut u_poly = DMatrix::<f64>::zeros(n, n);
    let mut v = DMatrix::<f64>::zeros(n, n);
    // powers[k] = A^(2k), k = 0.. ; odd coefficients build U, even build V.
    for (k, p) in powers.iter().enumerate() {
        let c_odd = coeffs[2 * k + 1];
        let c_even = coeffs[2 * k];
        u_poly += p * c_odd;
        v += p * c_even;
    }
    let u = a * u_poly;
    (u, v)
}

fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    let p = &v + &u;
    let q = &v - &u;
    q.lu().solve(&p).expect("Pade denominator is singular")
}

fn expm_unchecked(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let norm = one_norm(a);

    if norm <= THETA_9 {
        let a2 = a * a;
        if norm <= THETA_3 {
            return pade_solve_with(a, &id, &PADE_3, &[&a2]);
        }
        let a4 = &a2 * &a2;
        if norm <= THETA_5 {
            return pade_solve_with(a, &id, &PADE_5, &[&a2, &a4]);
        }
        let a6 = &a4 * &a2;
        if norm <= THETA_7 {
            return pade_solve_with(a, &id, &PADE_7, &[&a2, &a4, &a6]);
        }
        let a8 = &a6 * &a2;
        return pade_solve_with(a, &id, &PADE_9, &[&a2, &a4, &a6, &a8]);
    }

    // Order 13 with scaling and squaring.
    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as i32;
    let scaled = a / 2f64.powi(s);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let c = &PADE_13;
    // U = A (A6 (c13 A6 + c11 A4 + c9 A2) + c7 A6 + c5 A4 + c3 A2 + c1 I)
    let w1 = &a6 * c[13] + &a4 * c[11] + &a2 * c[9];
    let w2 = &a6 * &w1 + &a6 * c[7] + &a4 * c[5] + &a2 * c[3] + &id * c[1];
    let u = &scaled * &w2;
    // V = A6 (c12 A6 + c10 A4 + c8 A2) + c6 A6 + c4 A4 + c2 A2 + c0 I
    let z1 = &a6 * c[12] + &a4 * c[10] + &a2 * c[8];
    let v = &a6 * &z1 + &a6 * c[6] + &a4 * c[4] + &a2 * c[2] + &id * c[0];
    let mut r = pade_solve(u, v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn pade_solve_with(
    a: &DMatrix<f64>,
    id: &DMatrix<f64>,
    coeffs: &[f64],
    even_powers: &[&DMatrix<f64>],
) -> DMatrix<f64> {
    let mut powers: Vec<DMatrix<f64>> = Vec::with_capacity(even_powers.len() + 1);
    powers.push(id.clone());
    for p in even_powers {
        powers.push((*p).clone());
    }
    let (u, v) = pade_uv(a, coeffs, &powers);
    pade_solve(u, v)
}

/// Both phi blocks from one augmented exponential.
///
/// exp of the 3n x 3n block matrix [[A, I, 0], [0, 0, I], [0, 0, 0]] * dt
/// carries exp(A dt) in block (1,1), phi1(A, dt) in (1,2) and phi2(A, dt)
/// in (1,3), so no inverse of A is ever formed.
fn phi_blocks(a: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut aug = DMatrix::<f64>::zeros(3 * n, 3 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    for i in 0..n {
        aug[(i, n + i)] = dt;
        aug[(n + i, 2 * n + i)] = dt;
    }
    let e = expm_unchecked(&aug);
    let phi1 = e.view((0, n), (n, n)).into_owned();
    let phi2 = e.view((0, 2 * n), (n, n)).into_owned();
    (phi1, phi2)
}

fn check_phi_args(a: &DMatrix<f64>, dt: f64) -> Result<()> {
    check_square_finite(a)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive and finite, got {dt}")));
    }
    Ok(())
}

/// phi1(A, dt) = A^-1 (exp(A dt) - I), extended by its power series at
/// singular A. Satisfies exp(A dt) = I + A phi1(A, dt).
pub fn phi1(a: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    check_phi_args(a, dt)?;
    Ok(phi_blocks(a, dt).0)
}

/// phi2(A, dt) = A^-2 (exp(A dt) - I - A dt), extended by its power series
/// at singular A. Satisfies phi1(A, dt) = dt I + A phi2(A, dt).
pub fn phi2(a: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    check_phi_args(a, dt)?;
    Ok(phi_blocks(a, dt).1)
}

/// phi1 and phi2 of a 2x2 matrix in one augmented exponential.
pub fn phi_pair_2x2(j: &Matrix2<f64>, dt: f64) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    let a = DMatrix::from_fn(2, 2, |r, c| j[(r, c)]);
    check_phi_args(&a, dt)?;
    let (p1, p2) = phi_blocks(&a, dt);
    Ok((
        Matrix2::new(p1[(0, 0)], p1[(0, 1)], p1[(1, 0)], p1[(1, 1)]),
        Matrix2::new(p2[(0, 0)], p2[(0, 1)], p2[(1, 0)], p2[(1, 1)]),
    ))
}

/// Discretized process-noise covariance
/// Q = int_0^dt exp(J s) diag(sigma1^2, sigma2^2) exp(J^T s) ds
/// via the Van Loan block-exponential construction. The result is
/// symmetrized before returning.
pub fn noise_covariance(j: &Matrix2<f64>, sigma1: f64, sigma2: f64, dt: f64) -> Result<Matrix2<f64>> {
    if !(sigma1 >= 0.0 && sigma1.is_finite() && sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid(format!(
            "diffusion coefficients must be nonnegative, got ({sigma1}, {sigma2})"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive and finite, got {dt}")));
    }
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }

    // C = [[-J, D], [0, J^T]] dt; exp(C) = [[.., M12], [0, M22]] with
    // M22 = exp(J^T dt), and Q = M22^T M12.
    let d1 = sigma1 * sigma1;
    let d2 = sigma2 * sigma2;
    let mut c = DMatrix::<f64>::zeros(4, 4);
    for r in 0..2 {
        for s in 0..2 {
            c[(r, s)] = -j[(r, s)] * dt;
            c[(2 + r, 2 + s)] = j[(s, r)] * dt;
        }
    }
    c[(0, 2)] = d1 * dt;
    c[(1, 3)] = d2 * dt;
    let e = expm_unchecked(&c);
    let m12 = e.view((0, 2), (2, 2)).into_owned();
    let m22 = e.view((2, 2), (2, 2)).into_owned();
    let q = m22.transpose() * m12;
    let q = Matrix2::new(
        q[(0, 0)],
        0.5 * (q[(0, 1)] + q[(1, 0)]),
        0.5 * (q[(0, 1)] + q[(1, 0)]),
        q[(1, 1)],
    );
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rand_matrix(rng: &mut ChaCha12Rng, n: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) * scale)
    }

    /// 30-term Taylor series, the independent oracle for small matrices.
    fn expm_series(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut sum = DMatrix::<f64>::identity(n, n);
        let mut term = DMatrix::<f64>::identity(n, n);
        for k in 1..=30 {
            term = &term * a / k as f64;
            sum += &term;
        }
        sum
    }

    fn phi1_series(a: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
        // sum_{k>=0} A^k dt^{k+1} / (k+1)!
        let n = a.nrows();
        let mut sum = DMatrix::<f64>::zeros(n, n);
        let mut term = DMatrix::<f64>::identity(n, n) * dt;
        for k in 0..30 {
            sum += &term;
            term = &term * a * dt / (k + 2) as f64;
        }
        sum
    }

    fn phi2_series(a: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
        // sum_{k>=0} A^k dt^{k+2} / (k+2)!
        let n = a.nrows();
        let mut sum = DMatrix::<f64>::zeros(n, n);
        let mut term = DMatrix::<f64>::identity(n, n) * (dt * dt / 2.0);
        for k in 0..30 {
            sum += &term;
            term = &term * a * dt / (k + 3) as f64;
        }
        sum
    }

    #[test]
    fn expm_zero_is_identity() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let e = expm(&a).unwrap();
        assert_relative_eq!(e, DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn expm_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        let e = expm(&a).unwrap();
        assert_relative_eq!(e[(0, 0)], 1f64.exp(), epsilon = 1e-14);
        assert_relative_eq!(e[(1, 1)], (-1f64).exp(), epsilon = 1e-14);
        assert!(e[(0, 1)].abs() < 1e-15 && e[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn expm_matches_series_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..200 {
            let a = rand_matrix(&mut rng, 2, 0.5);
            let e = expm(&a).unwrap();
            let s = expm_series(&a);
            assert!((e - s).norm() <= 1e-12, "expm vs series mismatch");
        }
    }

    #[test]
    fn expm_large_norm_accuracy() {
        // rotation by a known angle exercises the scaling path
        let t = 8.0f64;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
        let e = expm(&a).unwrap();
        assert_relative_eq!(e[(0, 0)], t.cos(), epsilon = 1e-12);
        assert_relative_eq!(e[(1, 0)], t.sin(), epsilon = 1e-12);
    }

    #[test]
    fn expm_rejects_bad_input() {
        assert!(expm(&DMatrix::<f64>::zeros(2, 3)).is_err());
        let mut a = DMatrix::<f64>::zeros(2, 2);
        a[(0, 0)] = f64::NAN;
        assert!(expm(&a).is_err());
        assert!(expm(&DMatrix::<f64>::zeros(9, 9)).is_err());
    }

    #[test]
    fn phi1_zero_matrix() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let p = phi1(&a, 0.3).unwrap();
        assert_relative_eq!(p, DMatrix::identity(2, 2) * 0.3, epsilon = 1e-14);
    }

    #[test]
    fn phi1_scalar_case() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.7, -1.3]));
        let dt = 0.5;
        let p = phi1(&a, dt).unwrap();
        for (i, &v) in [0.7, -1.3].iter().enumerate() {
            let expect = ((v * dt).exp() - 1.0) / v;
            assert_relative_eq!(p[(i, i)], expect, epsilon = 1e-13);
        }
    }

    #[test]
    fn phi1_nilpotent_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let p = phi1(&a, 1.0).unwrap();
        // series terminates: I + A/2
        let expect = DMatrix::identity(2, 2) + &a * 0.5;
        assert_relative_eq!(p, expect, epsilon = 1e-14);
    }

    #[test]
    fn phi2_zero_matrix() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let p = phi2(&a, 0.4).unwrap();
        assert_relative_eq!(p, DMatrix::identity(2, 2) * (0.4 * 0.4 / 2.0), epsilon = 1e-14);
    }

    #[test]
    fn phi2_scalar_case() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.9]));
        let dt = 0.7;
        let p = phi2(&a, dt).unwrap();
        let v: f64 = 0.9;
        let expect = ((v * dt).exp() - 1.0 - v * dt) / (v * v);
        assert_relative_eq!(p[(0, 0)], expect, epsilon = 1e-13);
    }

    #[test]
    fn phi_functions_match_series() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = rand_matrix(&mut rng, 2, 0.5);
            let dt = rng.random_range(0.1..1.0);
            let p1 = phi1(&a, dt).unwrap();
            let p2 = phi2(&a, dt).unwrap();
            assert!((&p1 - phi1_series(&a, dt)).norm() <= 1e-10);
            assert!((&p2 - phi2_series(&a, dt)).norm() <= 1e-10);
        }
    }

    #[test]
    fn phi_identities() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..500 {
            let a = rand_matrix(&mut rng, 2, 1.0);
            let dt = rng.random_range(0.05..1.0);
            let e = expm(&(&a * dt)).unwrap();
            let p1 = phi1(&a, dt).unwrap();
            let p2 = phi2(&a, dt).unwrap();
            let id = DMatrix::<f64>::identity(2, 2);
            let lhs = (&e - (&id + &a * &p1)).norm();
            assert!(lhs <= 1e-10 * e.norm().max(1.0), "phi1 identity violated: {lhs}");
            let lhs2 = (&p1 - (&id * dt + &a * &p2)).norm();
            assert!(lhs2 <= 1e-10, "phi2 identity violated: {lhs2}");
        }
    }

    #[test]
    fn noise_covariance_zero_drift() {
        let j = Matrix2::zeros();
        let q = noise_covariance(&j, 0.3, 0.7, 0.5).unwrap();
        assert_relative_eq!(q[(0, 0)], 0.5 * 0.09, epsilon = 1e-12);
        assert_relative_eq!(q[(1, 1)], 0.5 * 0.49, epsilon = 1e-12);
        assert!(q[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn noise_covariance_zero_sigma() {
        let j = Matrix2::new(0.0, 1.0, -1.0, -0.5);
        let q = noise_covariance(&j, 0.0, 0.0, 1.0).unwrap();
        assert!(q.norm() < 1e-14);
    }

    #[test]
    fn noise_covariance_rejects_bad_args() {
        let j = Matrix2::zeros();
        assert!(noise_covariance(&j, -0.1, 0.1, 1.0).is_err());
        assert!(noise_covariance(&j, 0.1, 0.1, 0.0).is_err());
    }

    /// Adaptive Simpson quadrature of the covariance integrand, entrywise.
    fn quad_noise_cov(j: &Matrix2<f64>, s1: f64, s2: f64, dt: f64) -> Matrix2<f64> {
        let d = Matrix2::new(s1 * s1, 0.0, 0.0, s2 * s2);
        let f = |s: f64| -> Matrix2<f64> {
            let a = DMatrix::from_fn(2, 2, |r, c| j[(r, c)] * s);
            let e = expm(&a).unwrap();
            let e2 = Matrix2::new(e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]);
            e2 * d * e2.transpose()
        };
        // fixed-depth Simpson with 256 panels is plenty for smooth integrands
        let n = 256;
        let h = dt / n as f64;
        let mut acc = Matrix2::zeros();
        for i in 0..n {
            let a = i as f64 * h;
            acc += (f(a) + f(a + 0.5 * h) * 4.0 + f(a + h)) * (h / 6.0);
        }
        acc
    }

    #[test]
    fn noise_covariance_matches_quadrature() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..25 {
            // random stable J
            let j = Matrix2::new(
                -rng.random_range(0.1..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                -rng.random_range(0.1..1.0),
            );
            let s1 = rng.random_range(0.0..1.0);
            let s2 = rng.random_range(0.0..1.0);
            let dt = rng.random_range(0.1..1.0);
            let q = noise_covariance(&j, s1, s2, dt).unwrap();
            let oracle = quad_noise_cov(&j, s1, s2, dt);
            let denom = oracle.norm().max(1e-12);
            assert!(
                (q - oracle).norm() / denom <= 1e-8,
                "covariance vs quadrature relative error too large"
            );
        }
    }

    #[test]
    fn noise_covariance_additivity() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..50 {
            let j = Matrix2::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let s1 = rng.random_range(0.0..1.0);
            let s2 = rng.random_range(0.0..1.0);
            let dt = rng.random_range(0.05..0.5);
            let q1 = noise_covariance(&j, s1, s2, dt).unwrap();
            let q2 = noise_covariance(&j, s1, s2, 2.0 * dt).unwrap();
            let a = DMatrix::from_fn(2, 2, |r, c| j[(r, c)] * dt);
            let e = expm(&a).unwrap();
            let e2 = Matrix2::new(e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]);
            let composed = e2 * q1 * e2.transpose() + q1;
            assert!((q2 - composed).norm() <= 1e-8 * q2.norm().max(1.0));
        }
    }

    #[test]
    fn noise_covariance_psd_and_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        for _ in 0..100 {
            let j = Matrix2::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let q = noise_covariance(&j, rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.3).unwrap();
            assert_eq!(q[(0, 1)], q[(1, 0)]);
            let eig = q.symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12));
        }
    }
}
