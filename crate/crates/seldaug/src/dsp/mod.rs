//! Shared signal plumbing: STFT/iSTFT, FFT convolution, per-bin spatial
//! covariance, normalized eigenvalues, and the small dense complex linear
//! algebra the beamformer and encoder need.

pub mod fft;
pub mod linalg;
pub mod stft;

use num_complex::Complex64;

use crate::error::{Error, Result};
use linalg::CMat;
pub use stft::{istft, stft, Spectrogram};

/// Per-frequency-bin Hermitian spatial covariance matrices.
#[derive(Debug, Clone)]
pub struct CovariancePerBin {
    /// One C x C Hermitian matrix per bin.
    pub mats: Vec<CMat>,
    /// Number of frames accumulated.
    pub frame_count: usize,
}

/// Per-bin spatial covariance (1/|T|) sum_t x_tf x_tf^H over a frame range.
pub fn spatial_covariance(
    spec: &Spectrogram,
    frames: std::ops::Range<usize>,
) -> Result<CovariancePerBin> {
    if frames.is_empty() || frames.end > spec.frames {
        return Err(Error::domain("empty or out-of-range frame range"));
    }
    let c = spec.channels;
    let count = frames.len();
    let mut mats = vec![CMat::zeros(c, c); spec.bins];
    for f in 0..spec.bins {
        let m = &mut mats[f];
        for t in frames.clone() {
            for a in 0..c {
                let xa = spec.at(a, t, f);
                for b in 0..c {
                    *m.at_mut(a, b) += xa * spec.at(b, t, f).conj();
                }
            }
        }
        let scale = 1.0 / count as f64;
        m.scale_inplace(scale);
        m.symmetrize_hermitian();
    }
    Ok(CovariancePerBin { mats, frame_count: count })
}

/// Eigenvalues of a Hermitian PSD matrix, sorted descending and divided by
/// the largest one. An all-zero matrix yields all zeros.
pub fn normalized_eigenvalues(cov: &CMat) -> Vec<f64> {
    let mut ev = cov.hermitian_eigenvalues();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let max = ev[0];
    if max <= 0.0 {
        return vec![0.0; ev.len()];
    }
    let mut out: Vec<f64> = ev.iter().map(|v| v / max).collect();
    out[0] = 1.0;
    out
}

/// Linear convolution of a mono signal with each channel of a multichannel
/// impulse response. Output length is S + L - 1 per channel.
pub fn fft_convolve(signal: &[f64], ir: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if ir.is_empty() {
        return Vec::new();
    }
    let s = signal.len();
    let l = ir.iter().map(|c| c.len()).max().unwrap_or(0);
    if s == 0 || l == 0 {
        return ir.iter().map(|_| Vec::new()).collect();
    }
    let out_len = s + l - 1;
    let n = fft::next_pow2(out_len);
    let mut sig_fd: Vec<Complex64> = signal
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n)
        .collect();
    fft::fft_inplace(&mut sig_fd);
    ir.iter()
        .map(|chan| {
            let mut buf: Vec<Complex64> = chan
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
                .take(n)
                .collect();
            fft::fft_inplace(&mut buf);
            for (b, s) in buf.iter_mut().zip(sig_fd.iter()) {
                *b *= s;
            }
            fft::ifft_inplace(&mut buf);
            buf[..out_len].iter().map(|v| v.re).collect()
        })
        .collect()
}
