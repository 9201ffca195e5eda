//! Rigid-sphere microphone array model: plane-wave responses, radial
//! functions, and the spherical-harmonic encoding that turns discrete
//! microphone spectra into Ambisonics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::linalg::CMat;
use crate::error::{Error, Result};
use crate::special::{
    acn_index, legendre_all, sph_harmonics_acn, sph_hankel1_deriv, SphDirection, MAX_ORDER,
};

/// Below this kR the radial function falls back to its analytic
/// small-argument limit instead of evaluating Hankel functions near 0.
pub const KR_FLOOR: f64 = 1e-6;

/// Rigid-sphere array geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArraySpec {
    /// Sphere radius in meters.
    pub radius: f64,
    /// Microphone directions (radial orientations), length M.
    pub mic_dirs: Vec<SphDirection>,
    pub sample_rate: u32,
    pub name: String,
}

impl ArraySpec {
    pub fn new(
        radius: f64,
        mic_dirs: Vec<SphDirection>,
        sample_rate: u32,
        name: impl Into<String>,
    ) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::config("array radius must be positive"));
        }
        if mic_dirs.is_empty() {
            return Err(Error::config("array needs at least one microphone"));
        }
        for (i, a) in mic_dirs.iter().enumerate() {
            for b in mic_dirs.iter().skip(i + 1) {
                if a.angle_to(b) < 1e-9 {
                    return Err(Error::config(format!(
                        "mic directions {i} and another coincide"
                    )));
                }
            }
        }
        Ok(ArraySpec {
            radius,
            mic_dirs,
            sample_rate,
            name: name.into(),
        })
    }

    pub fn mic_count(&self) -> usize {
        self.mic_dirs.len()
    }

    /// The 32-microphone 4.2 cm rigid sphere layout shipped with the crate.
    pub fn default_em32() -> ArraySpec {
        crate::io::geometry::parse_geometry_str(
            include_str!("../data/em32.txt"),
            24000,
            "em32",
        )
        .expect("bundled geometry is valid")
    }

    /// Largest kR at the Nyquist frequency (sets series truncation needs).
    pub fn max_kr(&self, speed_of_sound: f64) -> f64 {
        std::f64::consts::PI * self.sample_rate as f64 / speed_of_sound * self.radius
    }
}

/// Spherical-harmonic encoding settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Spherical-harmonic order N; N = 1 is FOA.
    pub order: usize,
    /// Cap on the per-order inverse radial gain, in dB relative to the
    /// order-0 path at the same frequency.
    pub reg_max_gain_db: f64,
    /// Series truncation for plane-wave sums; `None` selects
    /// ceil(kR) + 10 capped at 60.
    pub trunc_order: Option<usize>,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            order: 1,
            reg_max_gain_db: 20.0,
            trunc_order: None,
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self, array: &ArraySpec) -> Result<()> {
        let needed = (self.order + 1) * (self.order + 1);
        if needed > array.mic_count() {
            return Err(Error::config(format!(
                "order {} needs {needed} channels but array has {} mics",
                self.order,
                array.mic_count()
            )));
        }
        if !self.reg_max_gain_db.is_finite() {
            return Err(Error::config("reg_max_gain_db must be finite"));
        }
        Ok(())
    }

    pub fn trunc_for(&self, kr: f64) -> usize {
        self.trunc_order
            .unwrap_or_else(|| (kr.ceil() as usize + 10).min(MAX_ORDER))
    }
}

/// Microphone spectra at one wave number.
#[derive(Debug, Clone)]
pub struct MicSpectrum {
    pub values: Vec<Complex64>,
    /// Wave number in 1/m.
    pub k: f64,
}

/// Spherical-harmonic spectra at one wave number, ACN channel order,
/// orthonormal (N3D) complex representation.
#[derive(Debug, Clone)]
pub struct ShSpectrum {
    pub values: Vec<Complex64>,
    pub k: f64,
}

fn double_factorial(n: i64) -> f64 {
    let mut acc = 1.0;
    let mut k = n;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

/// Radial function of a rigid baffle array,
/// b_n(kR) = i / ((kR)^2 h_n'(kR)).
///
/// For kR at or below [`KR_FLOOR`] (and whenever the Hankel evaluation
/// overflows), returns the analytic small-argument limit
/// (kR)^n / ((n+1)(2n-1)!!).
pub fn radial_fn(n: usize, kr: f64) -> Complex64 {
    debug_assert!(kr >= 0.0);
    if kr > KR_FLOOR {
        if let Ok(hd) = sph_hankel1_deriv(n, kr) {
            let denom = kr * kr * hd;
            if denom.is_finite() && denom.norm() > 0.0 {
                let b = Complex64::new(0.0, 1.0) / denom;
                if b.is_finite() {
                    return b;
                }
            }
        }
    }
    // leading-order behavior as kR -> 0
    let log_mag = n as f64 * kr.max(1e-300).ln()
        - ((n as f64 + 1.0) * double_factorial(2 * n as i64 - 1)).ln();
    Complex64::new(log_mag.exp(), 0.0)
}

/// b_0(kR) .. b_{n_max}(kR) in one pass, sharing the Bessel recurrences.
/// Orders whose Hankel derivative overflows fall back to the analytic
/// small-argument limit, matching [`radial_fn`].
pub fn radial_all(n_max: usize, kr: f64) -> Vec<Complex64> {
    if kr <= KR_FLOOR {
        return (0..=n_max).map(|n| radial_fn(n, kr)).collect();
    }
    let top = n_max + 1;
    let j = crate::special::sph_bessel_j_all(top, kr);
    let y = crate::special::sph_bessel_y_all(top, kr);
    let h = |k: usize| Complex64::new(j[k], y[k]);
    (0..=n_max)
        .map(|n| {
            let hd = if n == 0 {
                -h(1)
            } else {
                h(n - 1) - (n as f64 + 1.0) / kr * h(n)
            };
            let denom = kr * kr * hd;
            if denom.is_finite() && denom.norm() > 0.0 {
                let b = Complex64::new(0.0, 1.0) / denom;
                if b.is_finite() {
                    return b;
                }
            }
            let log_mag = n as f64 * kr.ln()
                - ((n as f64 + 1.0) * double_factorial(2 * n as i64 - 1)).ln();
            Complex64::new(log_mag.exp(), 0.0)
        })
        .collect()
}

/// Plane-wave pressure response on a rigid sphere of the given radius, at
/// angle `psi` between the wave DOA and the microphone orientation.
pub fn plane_wave_response(k: f64, psi: f64, array_radius: f64, trunc: usize) -> Complex64 {
    let kr = k * array_radius;
    let p = legendre_all(trunc.min(MAX_ORDER), psi.cos());
    let mut acc = Complex64::new(0.0, 0.0);
    let mut i_pow = Complex64::new(1.0, 0.0);
    for (n, pn) in p.iter().enumerate() {
        acc += i_pow * (2.0 * n as f64 + 1.0) * radial_fn(n, kr) * pn;
        i_pow *= Complex64::new(0.0, 1.0);
    }
    acc
}

/// Matrix of spherical harmonics sampled at the microphone directions:
/// row m holds y(Omega_m)^T in ACN order, shape M x (N+1)^2.
pub fn sh_matrix(array: &ArraySpec, order: usize) -> CMat {
    let dim = (order + 1) * (order + 1);
    let mut m = CMat::zeros(array.mic_count(), dim);
    for (r, dir) in array.mic_dirs.iter().enumerate() {
        let y = sph_harmonics_acn(order, dir);
        for c in 0..dim {
            *m.at_mut(r, c) = y[c];
        }
    }
    m
}

/// Precomputed encoder for one (array, order) pair; reusable across bins.
pub struct Encoder {
    pub array: ArraySpec,
    pub cfg: EncodingConfig,
    pinv: CMat,
}

impl Encoder {
    pub fn new(array: &ArraySpec, cfg: &EncodingConfig) -> Result<Encoder> {
        cfg.validate(array)?;
        let y = sh_matrix(array, cfg.order);
        let pinv = y.pseudo_inverse()?;
        Ok(Encoder {
            array: array.clone(),
            cfg: cfg.clone(),
            pinv,
        })
    }

    /// Per-order regularized inverse radial gains 1/b_n at a wave number.
    ///
    /// The literal inverse diverges as kR -> 0 for n >= 1; each order's gain
    /// magnitude is soft-limited to reg_max_gain_db above the order-0 gain.
    pub fn inverse_radial_gains(&self, k: f64) -> Vec<Complex64> {
        let kr = (k * self.array.radius).max(KR_FLOOR);
        let max_ratio = 10f64.powf(self.cfg.reg_max_gain_db / 20.0);
        let g0 = 1.0 / radial_fn(0, kr);
        let cap = max_ratio * g0.norm();
        (0..=self.cfg.order)
            .map(|n| {
                let g = 1.0 / radial_fn(n, kr);
                if g.norm() > cap {
                    g * (cap / g.norm())
                } else {
                    g
                }
            })
            .collect()
    }

    /// Encode one bin of microphone spectra into SH coefficients:
    /// a(k) = B_reg(k)^{-1} Y^dagger x(k).
    pub fn encode(&self, x: &MicSpectrum) -> Result<ShSpectrum> {
        if x.values.len() != self.array.mic_count() {
            return Err(Error::domain(format!(
                "expected {} mic values, got {}",
                self.array.mic_count(),
                x.values.len()
            )));
        }
        let mut a = self.pinv.mul_vec(&x.values);
        let gains = self.inverse_radial_gains(x.k);
        for n in 0..=self.cfg.order {
            for m in -(n as i64)..=(n as i64) {
                a[acn_index(n, m)] *= gains[n];
            }
        }
        Ok(ShSpectrum { values: a, k: x.k })
    }
}

/// Convenience wrapper building a fresh [`Encoder`] per call.
pub fn encode_sh(x: &MicSpectrum, array: &ArraySpec, cfg: &EncodingConfig) -> Result<ShSpectrum> {
    Encoder::new(array, cfg)?.encode(x)
}

/// Convert complex orthonormal (N3D) ACN coefficients to the real-valued
/// SN3D/ACN convention used by FOA datasets (ambix-style).
///
/// Removes the 4 pi i^n plane-wave factor so that a unit-amplitude plane
/// wave from direction Omega encodes exactly to the real SN3D harmonics
/// evaluated at Omega (W = 1).
pub fn complex_acn_to_real_sn3d(a: &[Complex64], order: usize) -> Vec<Complex64> {
    assert_eq!(a.len(), (order + 1) * (order + 1));
    let four_pi = 4.0 * std::f64::consts::PI;
    let sqrt2_inv = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = vec![Complex64::new(0.0, 0.0); a.len()];
    let mut i_pow = Complex64::new(1.0, 0.0);
    for n in 0..=order {
        // N3D -> SN3D combined with removal of the 4 pi i^n factor and the
        // orthonormal 1/sqrt(4 pi) baseline: per-order scale
        let scale = (four_pi / (2.0 * n as f64 + 1.0)).sqrt() / (four_pi * i_pow);
        out[acn_index(n, 0)] = a[acn_index(n, 0)] * scale;
        for m in 1..=(n as i64) {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let ap = a[acn_index(n, m)];
            let an = a[acn_index(n, -m)];
            out[acn_index(n, m)] = (an + sign * ap) * sqrt2_inv * scale;
            out[acn_index(n, -m)] =
                Complex64::new(0.0, 1.0) * (sign * ap - an) * sqrt2_inv * scale;
        }
        i_pow *= Complex64::new(0.0, 1.0);
    }
    out
}

/// Real SN3D spherical harmonics in ACN order at a direction (the encoding
/// a unit plane wave should produce after [`complex_acn_to_real_sn3d`]).
pub fn real_sn3d_harmonics(order: usize, dir: &SphDirection) -> Vec<f64> {
    let y = sph_harmonics_acn(order, dir);
    let four_pi = 4.0 * std::f64::consts::PI;
    let mut out = vec![0.0; y.len()];
    for n in 0..=order {
        let scale = (four_pi / (2.0 * n as f64 + 1.0)).sqrt();
        out[acn_index(n, 0)] = y[acn_index(n, 0)].re * scale;
        for m in 1..=(n as i64) {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            out[acn_index(n, m)] =
                sign * std::f64::consts::SQRT_2 * y[acn_index(n, m)].re * scale;
            out[acn_index(n, -m)] =
                sign * std::f64::consts::SQRT_2 * y[acn_index(n, m)].im * scale;
        }
    }
    out
}

/// Direction of the acoustic intensity vector from FOA frames in real
/// SN3D/ACN order (W, Y, Z, X). Accepts any number of frames or bins;
/// contributions are summed.
pub fn intensity_doa(foa: &[[Complex64; 4]]) -> SphDirection {
    let mut ix = 0.0;
    let mut iy = 0.0;
    let mut iz = 0.0;
    for frame in foa {
        let w = frame[0];
        iy += (w.conj() * frame[1]).re;
        iz += (w.conj() * frame[2]).re;
        ix += (w.conj() * frame[3]).re;
    }
    SphDirection::from_unit_vector([ix, iy, iz])
}

/// Intensity DOA from real time-domain FOA samples (W, Y, Z, X order).
pub fn intensity_doa_time(w: &[f64], y: &[f64], z: &[f64], x: &[f64]) -> SphDirection {
    let mut ix = 0.0;
    let mut iy = 0.0;
    let mut iz = 0.0;
    for i in 0..w.len() {
        ix += w[i] * x[i];
        iy += w[i] * y[i];
        iz += w[i] * z[i];
    }
    SphDirection::from_unit_vector([ix, iy, iz])
}

/// Band-limited intensity DOA from real time-domain FOA samples
/// (W, Y, Z, X order). Only spectral bins inside [f_lo, f_hi] Hz
/// contribute, which keeps spatial-aliasing products above the valid
/// first-order band out of the estimate.
pub fn intensity_doa_banded(
    w: &[f64],
    y: &[f64],
    z: &[f64],
    x: &[f64],
    sample_rate: u32,
    f_lo: f64,
    f_hi: f64,
) -> SphDirection {
    let n = crate::dsp::fft::next_pow2(w.len());
    let spec = |s: &[f64]| {
        let mut padded = s.to_vec();
        padded.resize(n, 0.0);
        crate::dsp::fft::real_fft(&padded)
    };
    let (sw, sy, sz, sx) = (spec(w), spec(y), spec(z), spec(x));
    let bin_hz = sample_rate as f64 / n as f64;
    let lo = (f_lo / bin_hz).ceil() as usize;
    let hi = ((f_hi / bin_hz).floor() as usize).min(sw.len() - 1);
    let frames: Vec<[Complex64; 4]> = (lo..=hi)
        .map(|b| [sw[b], sy[b], sz[b], sx[b]])
        .collect();
    intensity_doa(&frames)
}

/// Simulate the microphone spectra a unit plane wave from `doa` produces on
/// the array at wave number k.
pub fn simulate_plane_wave(
    array: &ArraySpec,
    doa: &SphDirection,
    k: f64,
    cfg: &EncodingConfig,
) -> MicSpectrum {
    let kr = k * array.radius;
    let trunc = cfg.trunc_for(kr);
    let values = array
        .mic_dirs
        .iter()
        .map(|mic| plane_wave_response(k, mic.angle_to(doa), array.radius, trunc))
        .collect();
    MicSpectrum { values, k }
}
