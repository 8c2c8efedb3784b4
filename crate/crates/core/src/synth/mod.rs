//! Synthetic surrogate captures: OFDM and frequency-hopped GFSK bursts passed
//! through per-device hardware impairments and a per-scenario multipath channel.

mod impair;
mod waveform;

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use impair::{apply_channel, apply_channel_with_reference, apply_impairments, ChannelProfile, DeviceParams, DeviceProfile, Family};
pub use waveform::{
    alias, bt_channel_offset, gen_fhss_burst, gen_ofdm_burst, ofdm_baseband, ofdm_symbol_len, ofdm_waveform, resample, BurstSpec, Hop,
    Payload, Protocol, BT_CHANNELS, BT_FIRST_CHANNEL_HZ, BT_HOP_RATE, CAPTURE_CENTER_HZ, GFSK_BT, GFSK_INDEX, GFSK_SYMBOL_RATE,
    OFDM_CP, OFDM_FFT, OFDM_PREAMBLE_SYMBOLS, OFDM_RATE, SAMPLE_RATE, WIFI_CARRIER_HZ,
};

use crate::io::{self, CaptureMeta, DatasetManifest, FRAME_LEN};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid device profile: {0}")]
    Profile(String),
    #[error("invalid channel: {0}")]
    Channel(String),
    #[error("burst needs at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("zero frames requested")]
    NoFrames,
    #[error("no devices requested")]
    NoDevices,
    #[error("no scenario seeds given")]
    NoScenarios,
    #[error("duplicate device id {0}")]
    DuplicateDevice(u32),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
}

/// SplitMix64 finalizer folded over the parts; decorrelates derived streams.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Nominal value and uniform half-width of one impairment parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub nominal: f64,
    pub spread: f64,
}

impl Spread {
    pub const fn new(nominal: f64, spread: f64) -> Self {
        Self { nominal, spread }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.spread == 0.0 {
            self.nominal
        } else {
            self.nominal + rng.random_range(-self.spread..=self.spread)
        }
    }
}

/// Per-family impairment distribution. Devices of one family share nominal
/// values and differ by small uniform deltas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyModel {
    pub iq_gain: Spread,
    pub iq_phase: Spread,
    pub cfo_ppm: Spread,
    /// Magnitude of `a3` relative to `a1`; its angle is uniform.
    pub pa_a3: Spread,
    pub dc_offset: Spread,
}

impl FamilyModel {
    pub fn combo_chip_a() -> Self {
        Self {
            iq_gain: Spread::new(1.0, 0.08),
            iq_phase: Spread::new(0.0, 0.08),
            cfo_ppm: Spread::new(0.0, 20.0),
            pa_a3: Spread::new(0.05, 0.04),
            dc_offset: Spread::new(0.03, 0.03),
        }
    }

    pub fn combo_chip_b() -> Self {
        Self {
            iq_gain: Spread::new(1.05, 0.08),
            iq_phase: Spread::new(0.05, 0.08),
            cfo_ppm: Spread::new(0.0, 20.0),
            pa_a3: Spread::new(0.12, 0.05),
            dc_offset: Spread::new(0.05, 0.03),
        }
    }

    pub fn draw(&self, device_id: u32, family: Family, rng: &mut ChaCha8Rng) -> Result<DeviceProfile, SynthError> {
        let a3 = self.pa_a3.draw(rng).abs().min(0.3);
        let dc = self.dc_offset.draw(rng).abs();
        DeviceProfile::new(DeviceParams {
            device_id,
            iq_gain: self.iq_gain.draw(rng),
            iq_phase: self.iq_phase.draw(rng),
            cfo_ppm: self.cfo_ppm.draw(rng).clamp(-50.0, 50.0),
            pa_a1: Complex64::new(1.0, 0.0),
            pa_a3: Complex64::from_polar(a3, rng.random_range(0.0..2.0 * PI)),
            dc_offset: Complex64::from_polar(dc, rng.random_range(0.0..2.0 * PI)),
            family,
        })
    }
}

/// Per-scenario environment: each (scenario, device) pair gets its own taps,
/// SNR and a small CFO drift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Number of echo taps after the direct path, one sample apart.
    pub echoes: usize,
    /// Upper bound on echo magnitude relative to the direct path.
    pub max_echo: f64,
    pub snr_db: (f64, f64),
    /// Standard deviation of the per-scenario CFO drift, ppm.
    pub cfo_drift_ppm: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self { echoes: 3, max_echo: 0.4, snr_db: (15.0, 25.0), cfo_drift_ppm: 0.5 }
    }
}

impl ChannelModel {
    fn draw(&self, scenario: u64, device: u32, rng_seed: u64) -> Result<(ChannelProfile, f64), SynthError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[rng_seed, 0xc4a2, scenario, device as u64]));
        let mut taps = vec![Complex64::new(1.0, 0.0)];
        for k in 1..=self.echoes {
            let mag = rng.random_range(0.0..=self.max_echo) / k as f64;
            taps.push(Complex64::from_polar(mag, rng.random_range(0.0..2.0 * PI)));
        }
        let norm = taps.iter().map(|t| t.norm_sqr()).sum::<f64>().sqrt();
        taps.iter_mut().for_each(|t| *t /= norm);
        let (lo, hi) = self.snr_db;
        let snr = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let drift = if self.cfo_drift_ppm > 0.0 {
            Normal::new(0.0, self.cfo_drift_ppm).expect("positive std").sample(&mut rng)
        } else {
            0.0
        };
        Ok((ChannelProfile::new(taps, snr, 0)?, drift))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub devices_a: usize,
    pub devices_b: usize,
    /// Frames per device, per protocol, per scenario.
    pub frames: usize,
    pub scenario_seeds: Vec<u64>,
    pub protocols: Vec<Protocol>,
    /// Seed for device profile draws.
    pub seed: u64,
    pub family_a: FamilyModel,
    pub family_b: FamilyModel,
    pub channel: ChannelModel,
    pub wifi_frames_per_burst: usize,
    pub bt_frames_per_burst: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            devices_a: 8,
            devices_b: 2,
            frames: 100,
            scenario_seeds: vec![0],
            protocols: Protocol::ALL.to_vec(),
            seed: 0,
            family_a: FamilyModel::combo_chip_a(),
            family_b: FamilyModel::combo_chip_b(),
            channel: ChannelModel::default(),
            wifi_frames_per_burst: 2,
            bt_frames_per_burst: 1,
        }
    }
}

impl SynthConfig {
    /// Family A devices take ids `0..devices_a`, family B the ids after them.
    pub fn draw_devices(&self) -> Result<Vec<DeviceProfile>, SynthError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, 0xde71ce]));
        let mut out = Vec::with_capacity(self.devices_a + self.devices_b);
        for i in 0..self.devices_a + self.devices_b {
            let (model, family) = if i < self.devices_a { (&self.family_a, Family::ComboChipA) } else { (&self.family_b, Family::ComboChipB) };
            out.push(model.draw(i as u32, family, &mut rng)?);
        }
        Ok(out)
    }
}

/// Mean carrier used for the CFO of hopping bursts.
const BT_MID_CARRIER_HZ: f64 = BT_FIRST_CHANNEL_HZ + 39e6;

/// One capture's worth of samples with the frame offsets that hold signal.
#[derive(Clone, Debug)]
pub struct SynthCapture {
    pub samples: Vec<Complex64>,
    pub burst_offsets: Vec<usize>,
    pub channel: ChannelProfile,
}

/// Bursts separated by one idle frame, aligned to the frame grid, with the
/// idle frames carrying only receiver noise.
pub fn synth_capture(
    device: &DeviceProfile,
    protocol: Protocol,
    scenario: u64,
    cfg: &SynthConfig,
) -> Result<SynthCapture, SynthError> {
    let (mut channel, drift) = cfg.channel.draw(scenario, device.device_id(), cfg.seed)?;
    let mut p = device.params().clone();
    p.cfo_ppm = (p.cfo_ppm + drift).clamp(-50.0, 50.0);
    let device = DeviceProfile::new(p)?;

    let per_burst = match protocol {
        Protocol::Wifi => cfg.wifi_frames_per_burst,
        Protocol::Bt => cfg.bt_frames_per_burst,
    }
    .max(1);
    let stream = derive_seed(&[cfg.seed, scenario, device.device_id() as u64, protocol as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let n_bursts = cfg.frames.div_ceil(per_burst);
    let total = (cfg.frames + n_bursts + 1) * FRAME_LEN;
    let mut samples = vec![Complex64::new(0.0, 0.0); total];
    let mut offsets = Vec::with_capacity(cfg.frames);
    let mut pos = FRAME_LEN;
    let mut remaining = cfg.frames;
    let mut burst_power = 0.0;
    let mut burst_samples = 0usize;
    while remaining > 0 {
        let k = remaining.min(per_burst);
        let spec = BurstSpec::new(protocol, k * FRAME_LEN);
        let seed = rng.random::<u64>();
        let (clean, carrier) = match protocol {
            Protocol::Wifi => (gen_ofdm_burst(&spec, seed)?, WIFI_CARRIER_HZ),
            Protocol::Bt => (gen_fhss_burst(&spec, seed)?.0, BT_MID_CARRIER_HZ),
        };
        let tx = apply_impairments(&clean, &device, carrier, spec.sample_rate);
        let rx_phase = Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
        for (i, v) in tx.iter().enumerate() {
            let y = v * rx_phase;
            burst_power += y.norm_sqr();
            samples[pos + i] = y;
        }
        burst_samples += tx.len();
        for f in 0..k {
            offsets.push(pos + f * FRAME_LEN);
        }
        pos += (k + 1) * FRAME_LEN;
        remaining -= k;
    }
    channel.seed = derive_seed(&[stream, 0x4015e]);
    let samples = apply_channel_with_reference(&samples, &channel, burst_power / burst_samples as f64);
    Ok(SynthCapture { samples, burst_offsets: offsets, channel })
}

pub fn capture_name(scenario: u64, device_id: u32, protocol: Protocol) -> String {
    format!("s{scenario}_d{device_id:03}_{}", protocol.as_str())
}

fn write_one(root: &Path, device: &DeviceProfile, protocol: Protocol, scenario_index: usize, scenario: u64, cfg: &SynthConfig) -> Result<PathBuf, SynthError> {
    let cap = synth_capture(device, protocol, scenario, cfg)?;
    let stem = root.join(capture_name(scenario, device.device_id(), protocol));
    let mut extensions = serde_json::Map::new();
    extensions.insert("xdom:family".into(), serde_json::to_value(device.params().family).expect("enum serializes"));
    extensions.insert("xdom:snr_db".into(), cap.channel.snr_db.into());
    extensions.insert("xdom:volatile".into(), serde_json::json!(["datetime"]));
    let meta = CaptureMeta {
        sample_rate: SAMPLE_RATE,
        center_frequency: CAPTURE_CENTER_HZ,
        datatype: io::DATATYPE.into(),
        datetime: format!("2021-01-{:02}T00:00:00Z", 1 + scenario_index % 28),
        device_id: device.device_id(),
        protocol,
        scenario_seed: scenario,
        extensions,
    };
    let samples: Vec<Complex32> = cap.samples.iter().map(|v| Complex32::new(v.re as f32, v.im as f32)).collect();
    io::write_capture(&samples, &meta, &stem)?;
    Ok(stem)
}

/// Writes one capture per (device, protocol, scenario) under `root`, plus
/// `devices.json` and `manifest.json`.
pub fn synth_dataset(cfg: &SynthConfig, root: &Path) -> Result<DatasetManifest, SynthError> {
    let devices = cfg.draw_devices()?;
    synth_dataset_with_devices(cfg, &devices, root)
}

pub fn synth_dataset_with_devices(cfg: &SynthConfig, devices: &[DeviceProfile], root: &Path) -> Result<DatasetManifest, SynthError> {
    if cfg.frames == 0 {
        return Err(SynthError::NoFrames);
    }
    if devices.is_empty() || cfg.protocols.is_empty() {
        return Err(SynthError::NoDevices);
    }
    if cfg.scenario_seeds.is_empty() {
        return Err(SynthError::NoScenarios);
    }
    let mut ids: Vec<u32> = devices.iter().map(|d| d.device_id()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(SynthError::DuplicateDevice(w[0]));
    }
    fs::create_dir_all(root).map_err(|source| SynthError::Fs { path: root.to_path_buf(), source })?;

    let mut jobs = Vec::new();
    for (si, &s) in cfg.scenario_seeds.iter().enumerate() {
        for d in devices {
            for &p in &cfg.protocols {
                jobs.push((si, s, d, p));
            }
        }
    }
    let stems = jobs
        .par_iter()
        .map(|&(si, s, d, p)| write_one(root, d, p, si, s, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let params: Vec<&DeviceParams> = devices.iter().map(|d| d.params()).collect();
    let dev_path = root.join("devices.json");
    let json = serde_json::to_string_pretty(&serde_json::json!({ "config": cfg, "devices": params })).expect("plain data serializes");
    fs::write(&dev_path, json + "\n").map_err(|source| SynthError::Fs { path: dev_path, source })?;

    Ok(io::build_manifest(&stems, &root.join(io::MANIFEST_FILE), FRAME_LEN, io::DEFAULT_GATE_DB)?)
}
