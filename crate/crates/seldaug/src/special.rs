//! Scalar special-function kernels: Legendre polynomials, associated Legendre
//! functions, complex spherical harmonics, spherical Bessel/Hankel functions.
//!
//! All functions are pure and safe to call concurrently. Orders above 60 are
//! rejected; the upward recurrences used here are stable in that regime.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 60;

/// A direction on the unit sphere.
///
/// Azimuth is in [-pi, pi), measured counter-clockwise from +x in the xy
/// plane; elevation is in [-pi/2, pi/2], positive toward +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphDirection {
    pub azimuth: f64,
    pub elevation: f64,
}

impl SphDirection {
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self> {
        if !(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2).contains(&elevation) {
            return Err(Error::domain(format!(
                "elevation {elevation} outside [-pi/2, pi/2]"
            )));
        }
        Ok(SphDirection {
            azimuth: wrap_azimuth(azimuth),
            elevation,
        })
    }

    pub fn from_degrees(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        SphDirection::new(azimuth_deg.to_radians(), elevation_deg.to_radians())
    }

    /// Unit vector with x toward azimuth 0, z toward elevation +pi/2.
    pub fn unit_vector(&self) -> [f64; 3] {
        let ce = self.elevation.cos();
        [
            ce * self.azimuth.cos(),
            ce * self.azimuth.sin(),
            self.elevation.sin(),
        ]
    }

    pub fn from_unit_vector(v: [f64; 3]) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let z = if norm > 0.0 { v[2] / norm } else { 0.0 };
        SphDirection {
            azimuth: wrap_azimuth(v[1].atan2(v[0])),
            elevation: z.clamp(-1.0, 1.0).asin(),
        }
    }

    /// Great-circle angle to another direction, in radians.
    pub fn angle_to(&self, other: &SphDirection) -> f64 {
        let a = self.unit_vector();
        let b = other.unit_vector();
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        dot.clamp(-1.0, 1.0).acos()
    }
}

pub fn wrap_azimuth(az: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = (az + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if a >= std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// Polar angle (inclination from +z) used as the argument of P_nm(cos .).
///
/// This is the single conversion point between the elevation convention of
/// [`SphDirection`] and the colatitude convention of the spherical-harmonic
/// recurrences: inclination = pi/2 - elevation.
pub fn polar_arg(dir: &SphDirection) -> f64 {
    std::f64::consts::FRAC_PI_2 - dir.elevation
}

fn check_order(n: usize) -> Result<()> {
    if n > MAX_ORDER {
        return Err(Error::domain(format!("order {n} exceeds {MAX_ORDER}")));
    }
    Ok(())
}

fn check_x(x: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("argument {x} outside [-1, 1]")));
    }
    Ok(())
}

/// Legendre polynomial P_n(x) by the stable three-term recurrence.
pub fn legendre(n: usize, x: f64) -> Result<f64> {
    check_order(n)?;
    check_x(x)?;
    Ok(legendre_all(n, x)[n])
}

/// P_0(x) .. P_n(x). Callers have already validated the domain.
pub(crate) fn legendre_all(n_max: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n_max + 1];
    p[0] = 1.0;
    if n_max == 0 {
        return p;
    }
    p[1] = x;
    for n in 2..=n_max {
        let nf = n as f64;
        p[n] = ((2.0 * nf - 1.0) * x * p[n - 1] - (nf - 1.0) * p[n - 2]) / nf;
    }
    p
}

/// Associated Legendre function P_nm(x) with the Condon-Shortley phase.
///
/// Negative m follows P_n^{-m} = (-1)^m (n-m)!/(n+m)! P_n^m.
pub fn assoc_legendre(n: usize, m: i64, x: f64) -> Result<f64> {
    check_order(n)?;
    check_x(x)?;
    if m.unsigned_abs() as usize > n {
        return Err(Error::domain(format!("|m| = {} exceeds n = {n}", m.abs())));
    }
    let ma = m.unsigned_abs() as usize;
    let mut v = assoc_legendre_pos(n, ma, x);
    if m < 0 {
        // (n-m)!/(n+m)! for the positive |m| value
        let mut ratio = 1.0;
        for k in (n - ma + 1)..=(n + ma) {
            ratio /= k as f64;
        }
        if ma % 2 == 1 {
            ratio = -ratio;
        }
        v *= ratio;
    }
    Ok(v)
}

fn assoc_legendre_pos(n: usize, m: usize, x: f64) -> f64 {
    // P_mm = (-1)^m (2m-1)!! (1-x^2)^{m/2}
    let s = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    let mut pmm = 1.0;
    for k in 1..=m {
        pmm *= -(2.0 * k as f64 - 1.0) * s;
    }
    if n == m {
        return pmm;
    }
    let mut pm1 = pmm;
    let mut pm2 = x * (2.0 * m as f64 + 1.0) * pmm;
    if n == m + 1 {
        return pm2;
    }
    for nn in (m + 2)..=n {
        let nf = nn as f64;
        let mf = m as f64;
        let p = (x * (2.0 * nf - 1.0) * pm2 - (nf + mf - 1.0) * pm1) / (nf - mf);
        pm1 = pm2;
        pm2 = p;
    }
    pm2
}

/// Orthonormalized associated Legendre values
/// N_nm P_nm(x) for 0 <= m <= n <= n_max, with
/// N_nm = sqrt((2n+1)/(4 pi) (n-m)!/(n+m)!), Condon-Shortley included.
///
/// Packed with index n(n+1)/2 + m. This fully normalized recurrence stays
/// in range for n up to 60 where the raw factorials would overflow.
pub(crate) fn norm_assoc_legendre_all(n_max: usize, x: f64) -> Vec<f64> {
    let len = (n_max + 1) * (n_max + 2) / 2;
    let mut p = vec![0.0; len];
    let idx = |n: usize, m: usize| n * (n + 1) / 2 + m;
    let s = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    p[0] = 0.25 / std::f64::consts::PI;
    p[0] = p[0].sqrt();
    // diagonal, includes Condon-Shortley via the leading minus
    for m in 1..=n_max {
        let mf = m as f64;
        p[idx(m, m)] = -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[idx(m - 1, m - 1)];
    }
    for m in 0..n_max {
        p[idx(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * x * p[idx(m, m)];
    }
    for m in 0..=n_max {
        for n in (m + 2)..=n_max {
            let nf = n as f64;
            let mf = m as f64;
            let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
            let b = (((2.0 * nf + 1.0) * (nf - 1.0 - mf) * (nf - 1.0 + mf))
                / ((2.0 * nf - 3.0) * (nf * nf - mf * mf)))
                .sqrt();
            p[idx(n, m)] = a * x * p[idx(n - 1, m)] - b * p[idx(n - 2, m)];
        }
    }
    p
}

/// Complex spherical harmonic Y_nm evaluated at a direction.
///
/// Orthonormal over the sphere; the polar argument is cos(inclination)
/// via [`polar_arg`].
pub fn sph_harmonic(n: usize, m: i64, dir: &SphDirection) -> Result<Complex64> {
    check_order(n)?;
    if m.unsigned_abs() as usize > n {
        return Err(Error::domain(format!("|m| = {} exceeds n = {n}", m.abs())));
    }
    let all = sph_harmonics_acn(n, dir);
    Ok(all[acn_index(n, m)])
}

/// ACN channel index for harmonic (n, m): n^2 + n + m.
pub fn acn_index(n: usize, m: i64) -> usize {
    (n * n) as usize + (n as i64 + m) as usize
}

/// All Y_nm for n <= n_max, packed in ACN order. Length (n_max+1)^2.
pub fn sph_harmonics_acn(n_max: usize, dir: &SphDirection) -> Vec<Complex64> {
    let x = polar_arg(dir).cos();
    let pn = norm_assoc_legendre_all(n_max, x);
    let pidx = |n: usize, m: usize| n * (n + 1) / 2 + m;
    let mut out = vec![Complex64::new(0.0, 0.0); (n_max + 1) * (n_max + 1)];
    // e^{i m phi} by phase recurrence
    let e1 = Complex64::from_polar(1.0, dir.azimuth);
    let mut phases = Vec::with_capacity(n_max + 1);
    phases.push(Complex64::new(1.0, 0.0));
    for m in 1..=n_max {
        phases.push(phases[m - 1] * e1);
    }
    for n in 0..=n_max {
        for m in 0..=n {
            let y = phases[m] * pn[pidx(n, m)];
            out[acn_index(n, m as i64)] = y;
            if m > 0 {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                out[acn_index(n, -(m as i64))] = sign * y.conj();
            }
        }
    }
    out
}

fn check_z(z: f64) -> Result<()> {
    if z <= 0.0 {
        return Err(Error::domain(format!("argument {z} must be positive")));
    }
    Ok(())
}

/// j_0(z) .. j_{n_max}(z) by downward recurrence (Miller's algorithm),
/// normalized against the closed-form j_0.
pub(crate) fn sph_bessel_j_all(n_max: usize, z: f64) -> Vec<f64> {
    if z < 1e-12 {
        // leading small-argument behavior; only j_0 survives at double precision
        let mut out = vec![0.0; n_max + 1];
        out[0] = 1.0;
        if n_max >= 1 {
            out[1] = z / 3.0;
        }
        return out;
    }
    let start = n_max + 16 + (1.5 * z) as usize;
    let mut fp = 0.0f64; // f_{k+1}
    let mut fc = 1e-300f64; // f_k
    let mut out = vec![0.0; n_max + 1];
    for k in (0..start).rev() {
        let fm = (2.0 * (k as f64) + 3.0) / z * fc - fp;
        fp = fc;
        fc = fm;
        if k <= n_max {
            out[k] = fc;
        }
        if fc.abs() > 1e250 {
            let scale = 1e-250;
            fp *= scale;
            fc *= scale;
            for v in out.iter_mut() {
                *v *= scale;
            }
        }
    }
    let j0 = z.sin() / z;
    let scale = j0 / out[0];
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}

/// y_0(z) .. y_{n_max}(z) by the (stable) upward recurrence.
pub(crate) fn sph_bessel_y_all(n_max: usize, z: f64) -> Vec<f64> {
    let mut out = vec![0.0; n_max + 1];
    out[0] = -z.cos() / z;
    if n_max == 0 {
        return out;
    }
    out[1] = -z.cos() / (z * z) - z.sin() / z;
    for n in 1..n_max {
        out[n + 1] = (2.0 * n as f64 + 1.0) / z * out[n] - out[n - 1];
    }
    out
}

/// Spherical Bessel function of the first kind, j_n(z).
pub fn sph_bessel_j(n: usize, z: f64) -> Result<f64> {
    check_order(n)?;
    check_z(z)?;
    Ok(sph_bessel_j_all(n, z)[n])
}

/// Spherical Bessel function of the second kind, y_n(z).
pub fn sph_bessel_y(n: usize, z: f64) -> Result<f64> {
    check_order(n)?;
    check_z(z)?;
    Ok(sph_bessel_y_all(n, z)[n])
}

/// Spherical Hankel function of the first kind, h_n(z) = j_n(z) + i y_n(z).
pub fn sph_hankel1(n: usize, z: f64) -> Result<Complex64> {
    check_order(n)?;
    check_z(z)?;
    let j = sph_bessel_j_all(n, z);
    let y = sph_bessel_y_all(n, z);
    Ok(Complex64::new(j[n], y[n]))
}

/// Derivative of the spherical Hankel function of the first kind,
/// h_n'(z) = h_{n-1}(z) - (n+1)/z h_n(z); h_0'(z) = -h_1(z).
pub fn sph_hankel1_deriv(n: usize, z: f64) -> Result<Complex64> {
    check_order(n)?;
    check_z(z)?;
    let top = n.max(1);
    let j = sph_bessel_j_all(top, z);
    let y = sph_bessel_y_all(top, z);
    let h = |k: usize| Complex64::new(j[k], y[k]);
    if n == 0 {
        Ok(-h(1))
    } else {
        Ok(h(n - 1) - (n as f64 + 1.0) / z * h(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn legendre_low_orders() {
        assert!((legendre(0, 0.7).unwrap() - 1.0).abs() < TOL);
        assert!((legendre(1, 0.5).unwrap() - 0.5).abs() < TOL);
        // closed form (5x^3 - 3x)/2 at x = 0.5
        assert!((legendre(3, 0.5).unwrap() - (-0.4375)).abs() < TOL);
    }

    #[test]
    fn legendre_domain_errors() {
        assert!(legendre(2, 1.5).is_err());
        assert!(legendre(61, 0.5).is_err());
    }

    #[test]
    fn legendre_bounded_on_interval() {
        for n in 0..=40 {
            for i in 0..=200 {
                let x = -1.0 + 2.0 * i as f64 / 200.0;
                let v = legendre(n, x).unwrap();
                assert!(v.abs() <= 1.0 + 1e-12, "P_{n}({x}) = {v}");
            }
        }
    }

    #[test]
    fn assoc_legendre_m0_reduces_to_legendre() {
        for &x in &[-0.9, -0.3, 0.0, 0.42, 1.0] {
            assert!((assoc_legendre(1, 0, x).unwrap() - legendre(1, x).unwrap()).abs() < TOL);
            assert!((assoc_legendre(7, 0, x).unwrap() - legendre(7, x).unwrap()).abs() < TOL);
        }
    }

    #[test]
    fn assoc_legendre_closed_forms() {
        // P_11(x) = -sqrt(1-x^2) with Condon-Shortley
        assert!((assoc_legendre(1, 1, 0.0).unwrap() - (-1.0)).abs() < TOL);
        // P_21(x) = -3x sqrt(1-x^2); independent symbolic value at x = 0.5
        assert!((assoc_legendre(2, 1, 0.5).unwrap() - (-1.299038105676658)).abs() < 1e-12);
    }

    #[test]
    fn assoc_legendre_negative_m() {
        // P_n^{-m} = (-1)^m (n-m)!/(n+m)! P_n^m
        let x = 0.3;
        let p21 = assoc_legendre(2, 1, x).unwrap();
        let expect = -p21 * (1.0 / (2.0 * 3.0 * 4.0)) * 24.0 / 24.0; // (-1)^1 (1!)/(3!) = -1/6
        let _ = expect;
        assert!((assoc_legendre(2, -1, x).unwrap() - (-p21 / 6.0)).abs() < TOL);
    }

    #[test]
    fn assoc_legendre_domain_errors() {
        assert!(assoc_legendre(2, 3, 0.5).is_err());
        assert!(assoc_legendre(2, 1, 1.5).is_err());
    }

    #[test]
    fn sph_harmonic_constant_mode() {
        let dir = SphDirection::new(1.2, -0.4).unwrap();
        let y = sph_harmonic(0, 0, &dir).unwrap();
        assert!((y.re - 0.28209479177387814).abs() < 1e-12);
        assert!(y.im.abs() < TOL);
    }

    #[test]
    fn sph_harmonic_conjugation_symmetry() {
        let dir = SphDirection::new(0.7, 0.3).unwrap();
        for n in 0..=6usize {
            for m in 1..=(n as i64) {
                let yp = sph_harmonic(n, m, &dir).unwrap();
                let yn = sph_harmonic(n, -m, &dir).unwrap();
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let d = yn - sign * yp.conj();
                assert!(d.norm() < TOL, "n={n} m={m}");
            }
        }
    }

    /// Gauss-Legendre x uniform-azimuth quadrature over the sphere,
    /// independent of the harmonic implementation under test.
    fn sphere_quadrature(n_polar: usize, n_az: usize) -> Vec<(SphDirection, f64)> {
        // Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration
        let mut nodes = Vec::with_capacity(n_polar);
        for i in 0..n_polar {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n_polar as f64 + 0.5)).cos();
            for _ in 0..100 {
                let p = legendre_all(n_polar, x);
                let dp = n_polar as f64 * (x * p[n_polar] - p[n_polar - 1]) / (x * x - 1.0);
                let dx = p[n_polar] / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let p = legendre_all(n_polar, x);
            let dp = n_polar as f64 * (x * p[n_polar] - p[n_polar - 1]) / (x * x - 1.0);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes.push((x, w));
        }
        let mut quad = Vec::with_capacity(n_polar * n_az);
        for (x, w) in nodes {
            let el = std::f64::consts::FRAC_PI_2 - x.acos();
            for j in 0..n_az {
                let az = 2.0 * std::f64::consts::PI * j as f64 / n_az as f64
                    - std::f64::consts::PI;
                let wq = w * 2.0 * std::f64::consts::PI / n_az as f64;
                quad.push((SphDirection::new(az, el).unwrap(), wq));
            }
        }
        quad
    }

    #[test]
    fn sph_harmonic_discrete_orthonormality() {
        // 40 polar x 60 azimuth = 2400-point quadrature
        let quad = sphere_quadrature(40, 60);
        let n_max = 4usize;
        let dim = (n_max + 1) * (n_max + 1);
        let mut gram = vec![Complex64::new(0.0, 0.0); dim * dim];
        for (dir, w) in &quad {
            let y = sph_harmonics_acn(n_max, dir);
            for a in 0..dim {
                for b in 0..dim {
                    gram[a * dim + b] += *w * y[a] * y[b].conj();
                }
            }
        }
        for a in 0..dim {
            for b in 0..dim {
                let expect = if a == b { 1.0 } else { 0.0 };
                let d = (gram[a * dim + b] - expect).norm();
                assert!(d < 1e-6, "gram[{a}][{b}] off by {d}");
            }
        }
    }

    #[test]
    fn hankel_closed_form_order0() {
        // h_0(z) = -i e^{iz}/z; at z = 1: sin(1) - i cos(1)
        let h = sph_hankel1(0, 1.0).unwrap();
        assert!((h.re - 0.8414709848078965).abs() < 1e-14);
        assert!((h.im - (-0.5403023058681398)).abs() < 1e-14);
    }

    #[test]
    fn hankel_high_precision_oracle() {
        // frozen from a 40-digit arbitrary-precision evaluation
        let cases: [(usize, f64, f64, f64); 6] = [
            (2, 3.5, 0.30501551189929668, -0.11612829076848648),
            (1, 2.0, 0.43539777497999162, -0.35061200427605525),
            (3, 0.7, 0.0031787248563313689, -65.669786871820751),
            (5, 8.0, 0.12654422032259321, 0.070400385547714566),
            (10, 5.0, 0.00040734424424946043, -26.656114405718700),
            (20, 15.0, 0.0015467058510412508, -1.5559965765652176),
        ];
        for (n, z, re, im) in cases {
            let h = sph_hankel1(n, z).unwrap();
            let expect = Complex64::new(re, im);
            assert!(
                (h - expect).norm() / expect.norm() < 1e-10,
                "h_{n}({z}) = {h}, expected {expect}"
            );
        }
    }

    #[test]
    fn hankel_deriv_matches_finite_difference() {
        let eps = 1e-5;
        for &(n, z) in &[(0usize, 1.0f64), (2, 3.0), (5, 7.0)] {
            let d = sph_hankel1_deriv(n, z).unwrap();
            let fd = (sph_hankel1(n, z + eps).unwrap() - sph_hankel1(n, z - eps).unwrap())
                / (2.0 * eps);
            assert!((d - fd).norm() < 1e-6, "n={n} z={z}");
        }
    }

    #[test]
    fn hankel_domain_errors() {
        assert!(sph_hankel1(0, 0.0).is_err());
        assert!(sph_hankel1(0, -1.0).is_err());
        assert!(sph_hankel1_deriv(61, 1.0).is_err());
    }

    #[test]
    fn bessel_wronskian_identity() {
        // j_n y_n' - j_n' y_n = 1/z^2 ; derivatives via f_n' = f_{n-1} - (n+1)/z f_n
        for &z in &[0.5, 1.0, 5.0, 20.0] {
            for n in 1..=10usize {
                let j = sph_bessel_j_all(n + 1, z);
                let y = sph_bessel_y_all(n + 1, z);
                let jd = j[n - 1] - (n as f64 + 1.0) / z * j[n];
                let yd = y[n - 1] - (n as f64 + 1.0) / z * y[n];
                let w = j[n] * yd - jd * y[n];
                let expect = 1.0 / (z * z);
                assert!(
                    ((w - expect) / expect).abs() < 1e-9,
                    "wronskian n={n} z={z}: {w} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn direction_roundtrip_and_angle() {
        let d = SphDirection::new(2.0, 0.7).unwrap();
        let d2 = SphDirection::from_unit_vector(d.unit_vector());
        assert!(d.angle_to(&d2) < 1e-12);
        let north = SphDirection::new(0.0, std::f64::consts::FRAC_PI_2).unwrap();
        let equator = SphDirection::new(1.0, 0.0).unwrap();
        assert!((north.angle_to(&equator) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn polar_arg_convention() {
        let up = SphDirection::new(0.0, std::f64::consts::FRAC_PI_2).unwrap();
        assert!(polar_arg(&up).abs() < 1e-15);
        let horizon = SphDirection::new(0.0, 0.0).unwrap();
        assert!((polar_arg(&horizon) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
