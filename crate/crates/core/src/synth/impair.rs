use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SynthError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ComboChipA,
    ComboChipB,
}

/// Raw impairment parameters; validated into a [`DeviceProfile`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub device_id: u32,
    pub iq_gain: f64,
    pub iq_phase: f64,
    pub cfo_ppm: f64,
    pub pa_a1: Complex64,
    pub pa_a3: Complex64,
    pub dc_offset: Complex64,
    pub family: Family,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviceProfile(DeviceParams);

impl DeviceProfile {
    pub fn new(p: DeviceParams) -> Result<Self, SynthError> {
        let finite = [p.iq_gain, p.iq_phase, p.cfo_ppm, p.pa_a1.re, p.pa_a1.im, p.pa_a3.re, p.pa_a3.im, p.dc_offset.re, p.dc_offset.im]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(SynthError::Profile("non-finite parameter".into()));
        }
        if p.iq_gain <= 0.0 {
            return Err(SynthError::Profile(format!("iq gain {} must be positive", p.iq_gain)));
        }
        if p.iq_phase.abs() >= PI / 4.0 {
            return Err(SynthError::Profile(format!("iq phase {} outside (-pi/4, pi/4)", p.iq_phase)));
        }
        if p.cfo_ppm.abs() > 50.0 {
            return Err(SynthError::Profile(format!("cfo {} ppm exceeds 50", p.cfo_ppm)));
        }
        if p.pa_a1.norm() == 0.0 || p.pa_a3.norm() > 0.3 * p.pa_a1.norm() {
            return Err(SynthError::Profile("pa polynomial outside the weakly nonlinear regime".into()));
        }
        Ok(Self(p))
    }

    pub fn ideal(device_id: u32, family: Family) -> Self {
        Self(DeviceParams {
            device_id,
            iq_gain: 1.0,
            iq_phase: 0.0,
            cfo_ppm: 0.0,
            pa_a1: Complex64::new(1.0, 0.0),
            pa_a3: Complex64::new(0.0, 0.0),
            dc_offset: Complex64::new(0.0, 0.0),
            family,
        })
    }

    pub fn params(&self) -> &DeviceParams {
        &self.0
    }

    pub fn device_id(&self) -> u32 {
        self.0.device_id
    }

    /// Carrier offset in Hz at a given carrier frequency.
    pub fn cfo_hz(&self, carrier_hz: f64) -> f64 {
        self.0.cfo_ppm * 1e-6 * carrier_hz
    }
}

/// PA polynomial, then IQ imbalance, then CFO rotation, then DC offset.
/// Deterministic; the ideal profile is the identity.
pub fn apply_impairments(x: &[Complex64], d: &DeviceProfile, carrier_hz: f64, sample_rate: f64) -> Vec<Complex64> {
    let p = &d.0;
    let iq = Complex64::from_polar(p.iq_gain, p.iq_phase) * Complex64::i();
    let ideal_iq = p.iq_gain == 1.0 && p.iq_phase == 0.0;
    let df = d.cfo_hz(carrier_hz);
    let step = 2.0 * PI * df / sample_rate;
    x.iter()
        .enumerate()
        .map(|(n, &s)| {
            let mut y = if p.pa_a3.re == 0.0 && p.pa_a3.im == 0.0 { p.pa_a1 * s } else { p.pa_a1 * s + p.pa_a3 * s * s.norm_sqr() };
            if !ideal_iq {
                y = Complex64::new(y.re, 0.0) + iq * y.im;
            }
            if df != 0.0 {
                y *= Complex64::from_polar(1.0, step * n as f64);
            }
            y + p.dc_offset
        })
        .collect()
}

/// Multipath FIR plus AWGN. `snr_db = ∞` disables noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    taps: Vec<Complex64>,
    pub snr_db: f64,
    pub seed: u64,
}

impl ChannelProfile {
    pub fn new(taps: Vec<Complex64>, snr_db: f64, seed: u64) -> Result<Self, SynthError> {
        match taps.first() {
            None => Err(SynthError::Channel("at least one tap required".into())),
            Some(t) if t.norm() == 0.0 => Err(SynthError::Channel("leading tap must be nonzero".into())),
            _ if snr_db.is_nan() => Err(SynthError::Channel("snr is NaN".into())),
            _ => Ok(Self { taps, snr_db, seed }),
        }
    }

    pub fn identity() -> Self {
        Self { taps: vec![Complex64::new(1.0, 0.0)], snr_db: f64::INFINITY, seed: 0 }
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }
}

fn fir(x: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    if taps.len() == 1 && taps[0] == Complex64::new(1.0, 0.0) {
        return x.to_vec();
    }
    (0..x.len())
        .map(|n| taps.iter().enumerate().take(n + 1).map(|(k, &h)| h * x[n - k]).sum())
        .collect()
}

fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
    }
}

/// Noise power is set relative to the filtered signal's mean power.
pub fn apply_channel(x: &[Complex64], ch: &ChannelProfile) -> Vec<Complex64> {
    let y = fir(x, &ch.taps);
    let p = mean_power(&y);
    add_noise(y, ch, p)
}

/// Like [`apply_channel`] with an explicit reference power, used when the
/// input contains idle gaps that should not dilute the SNR reference.
pub fn apply_channel_with_reference(x: &[Complex64], ch: &ChannelProfile, reference_power: f64) -> Vec<Complex64> {
    add_noise(fir(x, &ch.taps), ch, reference_power)
}

fn add_noise(mut y: Vec<Complex64>, ch: &ChannelProfile, reference_power: f64) -> Vec<Complex64> {
    if ch.snr_db.is_infinite() && ch.snr_db > 0.0 {
        return y;
    }
    let sigma = (reference_power / 10f64.powf(ch.snr_db / 10.0) / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(ch.seed);
    for v in &mut y {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(re * sigma, im * sigma);
    }
    y
}
