//! STFT/iSTFT with a periodic Hann analysis window and weighted overlap-add
//! reconstruction.

use num_complex::Complex64;

use super::fft;
use crate::error::{Error, Result};

/// Complex time-frequency tensor, indexed [channel][frame][bin].
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub values: Vec<Complex64>,
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    #[inline]
    pub fn at(&self, c: usize, t: usize, f: usize) -> Complex64 {
        self.values[(c * self.frames + t) * self.bins + f]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, t: usize, f: usize) -> &mut Complex64 {
        &mut self.values[(c * self.frames + t) * self.bins + f]
    }

    /// Center frequency of a bin in Hz.
    pub fn bin_freq(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate as f64 / self.frame_len as f64
    }

    /// Bin index closest to a frequency in Hz.
    pub fn freq_bin(&self, hz: f64) -> usize {
        ((hz * self.frame_len as f64 / self.sample_rate as f64).round() as usize)
            .min(self.bins - 1)
    }
}

fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Short-time Fourier transform of a multichannel signal.
pub fn stft(
    signal: &[Vec<f64>],
    frame_len: usize,
    hop: usize,
    sample_rate: u32,
) -> Result<Spectrogram> {
    if signal.is_empty() {
        return Err(Error::domain("no channels"));
    }
    if hop == 0 || hop > frame_len {
        return Err(Error::domain("hop must be in 1..=frame_len"));
    }
    let len = signal[0].len();
    if signal.iter().any(|c| c.len() != len) {
        return Err(Error::domain("channel length mismatch"));
    }
    if len < frame_len {
        return Err(Error::domain(format!(
            "signal of {len} samples shorter than one frame ({frame_len})"
        )));
    }
    let frames = (len - frame_len) / hop + 1;
    let bins = frame_len / 2 + 1;
    let window = hann_periodic(frame_len);
    let channels = signal.len();
    let mut values = vec![Complex64::new(0.0, 0.0); channels * frames * bins];
    let mut buf = vec![0.0; frame_len];
    for (c, chan) in signal.iter().enumerate() {
        for t in 0..frames {
            let start = t * hop;
            for i in 0..frame_len {
                buf[i] = chan[start + i] * window[i];
            }
            let half = fft::real_fft(&buf);
            let base = (c * frames + t) * bins;
            values[base..base + bins].copy_from_slice(&half);
        }
    }
    Ok(Spectrogram {
        values,
        channels,
        frames,
        bins,
        frame_len,
        hop,
        sample_rate,
    })
}

/// Inverse STFT by weighted overlap-add; reconstructs interior samples
/// exactly for any COLA-satisfying hop.
pub fn istft(spec: &Spectrogram) -> Vec<Vec<f64>> {
    let n = spec.frame_len;
    let window = hann_periodic(n);
    let out_len = (spec.frames - 1) * spec.hop + n;
    let mut wsum = vec![0.0; out_len];
    for t in 0..spec.frames {
        for i in 0..n {
            wsum[t * spec.hop + i] += window[i] * window[i];
        }
    }
    let mut out = vec![vec![0.0; out_len]; spec.channels];
    let mut half = vec![Complex64::new(0.0, 0.0); spec.bins];
    for c in 0..spec.channels {
        for t in 0..spec.frames {
            let base = (c * spec.frames + t) * spec.bins;
            half.copy_from_slice(&spec.values[base..base + spec.bins]);
            let frame = fft::real_ifft(&half, n);
            let start = t * spec.hop;
            for i in 0..n {
                out[c][start + i] += frame[i] * window[i];
            }
        }
    }
    for chan in out.iter_mut() {
        for (v, w) in chan.iter_mut().zip(&wsum) {
            if *w > 1e-12 {
                *v /= *w;
            }
        }
    }
    out
}
