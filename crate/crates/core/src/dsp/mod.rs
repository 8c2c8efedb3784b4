//! Time-frequency front-end: radix-2 FFT, short-time Fourier transform and
//! the magnitude/phase split fed to the spatial branches.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("fft length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("hop must be at least 1")]
    Hop,
    #[error("window of {win} samples exceeds padded length {padded}")]
    WindowTooLong { win: usize, padded: usize },
    #[error("empty input")]
    Empty,
}

/// In-place iterative radix-2 FFT, `X[k] = Σ x[n]·e^{−j2πkn/N}`, unnormalized.
pub fn fft_in_place(x: &mut [Complex64]) -> Result<(), DspError> {
    let n = x.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(DspError::NotPowerOfTwo(n));
    }
    let bits = n.trailing_zeros();
    if bits > 0 {
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                x.swap(i, j);
            }
        }
    }
    let mut len = 2;
    while len <= n {
        let step = Complex64::from_polar(1.0, -2.0 * PI / len as f64);
        let half = len / 2;
        // twiddles computed directly rather than by repeated multiplication
        let tw: Vec<Complex64> = (0..half).map(|k| if k == 0 { Complex64::new(1.0, 0.0) } else { step.powu(k as u32) }).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = x[start + k];
                let b = x[start + k + half] * tw[k];
                x[start + k] = a + b;
                x[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    Ok(())
}

pub fn fft(x: &[Complex64]) -> Result<Vec<Complex64>, DspError> {
    let mut out = x.to_vec();
    fft_in_place(&mut out)?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub win: usize,
    pub hop: usize,
    pub window: Window,
    /// Zero-pad `win/2` samples on each side before framing.
    pub centered: bool,
}

impl StftConfig {
    /// 128-point FFT, hop 1, centered: 1024 samples give 65×1025.
    pub fn faithful() -> Self {
        Self { win: 128, hop: 1, window: Window::Hann, centered: true }
    }

    pub fn bins(&self) -> usize {
        self.win / 2 + 1
    }

    fn padded_len(&self, len: usize) -> usize {
        if self.centered {
            len + 2 * (self.win / 2)
        } else {
            len
        }
    }

    /// `(bins, frames)` for an input of `len` samples.
    pub fn output_shape(&self, len: usize) -> Result<(usize, usize), DspError> {
        if self.hop == 0 {
            return Err(DspError::Hop);
        }
        if !self.win.is_power_of_two() {
            return Err(DspError::NotPowerOfTwo(self.win));
        }
        let padded = self.padded_len(len);
        if self.win > padded {
            return Err(DspError::WindowTooLong { win: self.win, padded });
        }
        Ok((self.bins(), (padded - self.win) / self.hop + 1))
    }
}

/// One-sided complex STFT, stored bin-major (`bins × frames`).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTf {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<Complex64>,
}

impl ComplexTf {
    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }
}

pub fn stft(x: &[Complex64], cfg: &StftConfig) -> Result<ComplexTf, DspError> {
    if x.is_empty() {
        return Err(DspError::Empty);
    }
    let (bins, frames) = cfg.output_shape(x.len())?;
    let offset = if cfg.centered { cfg.win / 2 } else { 0 };
    let w = cfg.window.coefficients(cfg.win);
    let zero = Complex64::new(0.0, 0.0);
    let mut data = vec![zero; bins * frames];
    let mut buf = vec![zero; cfg.win];
    for f in 0..frames {
        let start = (f * cfg.hop) as isize - offset as isize;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            *slot = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] * w[i] } else { zero };
        }
        fft_in_place(&mut buf)?;
        for (b, v) in buf.iter().take(bins).enumerate() {
            data[b * frames + f] = *v;
        }
    }
    Ok(ComplexTf { bins, frames, data })
}

/// Magnitude and phase planes of a TF map, both `bins × frames`.
#[derive(Clone, Debug, PartialEq)]
pub struct TfMap {
    pub bins: usize,
    pub frames: usize,
    pub magnitude: Vec<f64>,
    /// Radians in `(−π, π]`; zero-magnitude cells carry phase 0.
    pub phase: Vec<f64>,
}

pub fn split_mag_phase(tf: &ComplexTf) -> TfMap {
    let mut magnitude = Vec::with_capacity(tf.data.len());
    let mut phase = Vec::with_capacity(tf.data.len());
    for z in &tf.data {
        let (m, p) = polar(*z);
        magnitude.push(m);
        phase.push(p);
    }
    TfMap { bins: tf.bins, frames: tf.frames, magnitude, phase }
}

fn polar(z: Complex64) -> (f64, f64) {
    let m = z.norm();
    if m == 0.0 {
        return (0.0, 0.0);
    }
    let p = z.im.atan2(z.re);
    (m, if p == -PI { PI } else { p })
}

/// STFT followed by the magnitude/phase split.
pub fn tf_map(x: &[Complex64], cfg: &StftConfig) -> Result<TfMap, DspError> {
    Ok(split_mag_phase(&stft(x, cfg)?))
}
