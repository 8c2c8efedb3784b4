use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;

/// Receiver sample rate, 66.67 MS/s.
pub const SAMPLE_RATE: f64 = 200e6 / 3.0;
pub const CAPTURE_CENTER_HZ: f64 = 2.414e9;
pub const WIFI_CARRIER_HZ: f64 = 2.447e9;
pub const BT_HOP_RATE: f64 = 1600.0;
pub const BT_CHANNELS: usize = 79;
pub const BT_FIRST_CHANNEL_HZ: f64 = 2.402e9;

pub const OFDM_RATE: f64 = 20e6;
pub const OFDM_FFT: usize = 64;
pub const OFDM_CP: usize = 16;
pub const OFDM_PREAMBLE_SYMBOLS: usize = 2;
const OFDM_SYMBOL: usize = OFDM_FFT + OFDM_CP;

pub const GFSK_SYMBOL_RATE: f64 = 1e6;
pub const GFSK_INDEX: f64 = 0.32;
pub const GFSK_BT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Wifi,
    Bt,
}

impl Protocol {
    pub const ALL: [Protocol; 2] = [Protocol::Wifi, Protocol::Bt];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Wifi => "wifi",
            Protocol::Bt => "bt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wifi" => Some(Protocol::Wifi),
            "bt" => Some(Protocol::Bt),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurstSpec {
    pub protocol: Protocol,
    /// Receiver tuning frequency.
    pub center_freq: f64,
    pub sample_rate: f64,
    pub length: usize,
    pub hop_rate: f64,
}

impl BurstSpec {
    pub fn new(protocol: Protocol, length: usize) -> Self {
        Self { protocol, center_freq: CAPTURE_CENTER_HZ, sample_rate: SAMPLE_RATE, length, hop_rate: BT_HOP_RATE }
    }

    pub fn dwell(&self) -> usize {
        (self.sample_rate / self.hop_rate).round() as usize
    }
}

/// Wraps a frequency into `[−fs/2, fs/2)`, the alias seen by a complex sampler.
pub fn alias(freq: f64, fs: f64) -> f64 {
    (freq + fs / 2.0).rem_euclid(fs) - fs / 2.0
}

fn ofdm_bins() -> impl Iterator<Item = i32> {
    (-26..=26).filter(|&k| k != 0)
}

fn qpsk(rng: &mut ChaCha8Rng) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(if rng.random_bool(0.5) { s } else { -s }, if rng.random_bool(0.5) { s } else { -s })
}

fn ofdm_symbol(data: &[Complex64]) -> Vec<Complex64> {
    let mut bins = vec![Complex64::new(0.0, 0.0); OFDM_FFT];
    for (k, &v) in ofdm_bins().zip(data) {
        bins[k.rem_euclid(OFDM_FFT as i32) as usize] = v;
    }
    // inverse DFT through the forward transform of the conjugate
    let conj: Vec<Complex64> = bins.iter().map(|v| v.conj()).collect();
    let time = crate::dsp::fft(&conj).expect("64 is a power of two");
    let scale = 1.0 / (OFDM_FFT as f64).sqrt();
    let body: Vec<Complex64> = time.iter().map(|v| v.conj() * scale).collect();
    let mut out = body[OFDM_FFT - OFDM_CP..].to_vec();
    out.extend_from_slice(&body);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Payload {
    Random(u64),
    /// All data subcarriers zero; only the preamble is transmitted.
    Zero,
}

/// 20 MS/s baseband: two known preamble symbols then `data_symbols` QPSK symbols.
pub fn ofdm_baseband(data_symbols: usize, payload: Payload) -> Vec<Complex64> {
    let mut known = ChaCha8Rng::seed_from_u64(0x0fd3);
    let mut out = Vec::with_capacity((OFDM_PREAMBLE_SYMBOLS + data_symbols) * OFDM_SYMBOL);
    for _ in 0..OFDM_PREAMBLE_SYMBOLS {
        let d: Vec<Complex64> = (0..52).map(|_| qpsk(&mut known)).collect();
        out.extend(ofdm_symbol(&d));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(match payload {
        Payload::Random(s) => s,
        Payload::Zero => 0,
    });
    for _ in 0..data_symbols {
        let d: Vec<Complex64> = match payload {
            Payload::Random(_) => (0..52).map(|_| qpsk(&mut rng)).collect(),
            Payload::Zero => vec![Complex64::new(0.0, 0.0); 52],
        };
        out.extend(ofdm_symbol(&d));
    }
    out
}

const SINC_HALF: isize = 16;

/// Band-limited interpolation of `x` (rate `fs_in`) onto `n_out` samples at `fs_out`
/// using a Hann-windowed sinc.
pub fn resample(x: &[Complex64], fs_in: f64, fs_out: f64, n_out: usize) -> Vec<Complex64> {
    let ratio = fs_in / fs_out;
    let cutoff = (fs_out / fs_in).min(1.0);
    (0..n_out)
        .map(|m| {
            let u = m as f64 * ratio;
            let c = u.floor() as isize;
            let mut acc = Complex64::new(0.0, 0.0);
            for k in (c - SINC_HALF + 1)..=(c + SINC_HALF) {
                if k < 0 || k as usize >= x.len() {
                    continue;
                }
                let t = u - k as f64;
                let w = 0.5 + 0.5 * (PI * t / SINC_HALF as f64).cos();
                let arg = PI * t * cutoff;
                let s = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
                acc += x[k as usize] * (cutoff * s * w);
            }
            acc
        })
        .collect()
}

fn normalize(x: &mut [Complex64]) {
    let p = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64;
    if p > 0.0 {
        let s = 1.0 / p.sqrt();
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// Output samples spanned by one OFDM symbol at rate `fs`.
pub fn ofdm_symbol_len(fs: f64) -> usize {
    (OFDM_SYMBOL as f64 * fs / OFDM_RATE).ceil() as usize
}

/// OFDM burst at `offset_hz` from the receiver center, normalized to unit power.
pub fn ofdm_waveform(length: usize, sample_rate: f64, offset_hz: f64, payload: Payload) -> Result<Vec<Complex64>, SynthError> {
    if length < ofdm_symbol_len(sample_rate) {
        return Err(SynthError::TooShort { needed: ofdm_symbol_len(sample_rate), got: length });
    }
    let n_in = (length as f64 * OFDM_RATE / sample_rate).ceil() as usize + SINC_HALF as usize;
    let symbols = n_in.div_ceil(OFDM_SYMBOL).saturating_sub(OFDM_PREAMBLE_SYMBOLS).max(1);
    let base = ofdm_baseband(symbols, payload);
    let mut out = resample(&base, OFDM_RATE, sample_rate, length);
    let step = 2.0 * PI * offset_hz / sample_rate;
    for (n, v) in out.iter_mut().enumerate() {
        *v *= Complex64::from_polar(1.0, step * n as f64);
    }
    normalize(&mut out);
    Ok(out)
}

pub fn gen_ofdm_burst(spec: &BurstSpec, payload_seed: u64) -> Result<Vec<Complex64>, SynthError> {
    ofdm_waveform(spec.length, spec.sample_rate, alias(WIFI_CARRIER_HZ - spec.center_freq, spec.sample_rate), Payload::Random(payload_seed))
}

/// One dwell period of a hopping burst.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hop {
    pub start: usize,
    pub channel: usize,
    /// Aliased carrier offset from the receiver center.
    pub offset_hz: f64,
}

pub fn bt_channel_offset(channel: usize, center: f64, fs: f64) -> f64 {
    alias(BT_FIRST_CHANNEL_HZ + channel as f64 * 1e6 - center, fs)
}

/// Gaussian-filtered unit rectangle of one symbol, time in symbols.
fn gfsk_pulse(t: f64) -> f64 {
    let k = PI * GFSK_BT * (2.0 / std::f64::consts::LN_2).sqrt();
    0.5 * (libm::erf(k * (t + 0.5)) - libm::erf(k * (t - 0.5)))
}

/// Frequency-hopped GFSK with unit envelope. The first hop boundary falls at a
/// random point so bursts need not start on a hop edge.
pub fn gen_fhss_burst(spec: &BurstSpec, hop_seed: u64) -> Result<(Vec<Complex64>, Vec<Hop>), SynthError> {
    let sps = spec.sample_rate / GFSK_SYMBOL_RATE;
    let dwell = spec.dwell();
    if (dwell as f64) < sps {
        return Err(SynthError::TooShort { needed: sps.ceil() as usize, got: dwell });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hop_seed);
    let mut hops = Vec::new();
    let mut start = 0usize;
    let mut next = rng.random_range(1..=dwell);
    while start < spec.length {
        let channel = rng.random_range(0..BT_CHANNELS);
        hops.push(Hop { start, channel, offset_hz: bt_channel_offset(channel, spec.center_freq, spec.sample_rate) });
        start = next;
        next += dwell;
    }

    let n_sym = (spec.length as f64 / sps).ceil() as usize + 4;
    let bits: Vec<f64> = (0..n_sym).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let dev = GFSK_INDEX * GFSK_SYMBOL_RATE / 2.0;
    let mut phase = rng.random_range(0.0..2.0 * PI);
    let mut out = Vec::with_capacity(spec.length);
    let mut hop = 0;
    for n in 0..spec.length {
        while hop + 1 < hops.len() && hops[hop + 1].start <= n {
            hop += 1;
        }
        out.push(Complex64::from_polar(1.0, phase));
        // symbol k is centered at (k + 0.5)·T; pulses span ±2 symbols
        let t = n as f64 / sps;
        let k0 = (t - 2.5).floor().max(0.0) as usize;
        let k1 = ((t + 2.5).ceil() as usize).min(n_sym - 1);
        let f: f64 = (k0..=k1).map(|k| bits[k] * gfsk_pulse(t - k as f64 - 0.5)).sum::<f64>() * dev;
        phase += 2.0 * PI * (f + hops[hop].offset_hz) / spec.sample_rate;
        phase = phase.rem_euclid(2.0 * PI);
    }
    Ok((out, hops))
}
