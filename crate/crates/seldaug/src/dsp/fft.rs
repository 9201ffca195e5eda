//! Thin wrappers over rustfft with a thread-local plan cache.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan_forward(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn plan_inverse(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// In-place forward DFT (unnormalized).
pub fn fft_inplace(buf: &mut [Complex64]) {
    plan_forward(buf.len()).process(buf);
}

/// In-place inverse DFT, normalized by 1/N.
pub fn ifft_inplace(buf: &mut [Complex64]) {
    let n = buf.len();
    plan_inverse(n).process(buf);
    let scale = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Forward DFT of a real signal, returning the n/2 + 1 nonnegative bins.
pub fn real_fft(signal: &[f64]) -> Vec<Complex64> {
    let n = signal.len();
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_inplace(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}

/// Inverse DFT from the n/2 + 1 nonnegative bins of a length-n real signal.
/// Hermitian symmetry is enforced, so the output is exactly real.
pub fn real_ifft(half: &[Complex64], n: usize) -> Vec<f64> {
    assert_eq!(half.len(), n / 2 + 1, "half-spectrum length mismatch");
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[0] = Complex64::new(half[0].re, 0.0);
    for k in 1..half.len() {
        buf[k] = half[k];
    }
    if n % 2 == 0 {
        buf[n / 2] = Complex64::new(half[n / 2].re, 0.0);
    }
    for k in 1..n.div_ceil(2) {
        buf[n - k] = half[k].conj();
    }
    ifft_inplace(&mut buf);
    buf.into_iter().map(|v| v.re).collect()
}
