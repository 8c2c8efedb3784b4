//! The xDom network, a reference CNN baseline, and the per-frame feature
//! preparation both consume.

mod baseline;
mod xdom;

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::{Baseline, BaselineConfig};
pub use xdom::{TauMode, XDom, XDomConfig, XDomTrace};

use crate::dsp::{self, DspError, StftConfig, Window};
use crate::tensor::{ParamStore, Real, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("frame has {got} samples, model expects at least {want}")]
    FrameLength { want: usize, got: usize },
    #[error("multi-task mode needs a protocol head")]
    NoProtocolHead,
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 1024-sample frames, hop-1 STFT, 2×132 GRU.
    Faithful,
    /// 64-sample frames, hop-8 STFT, 2×8 GRU. Not faithful; sized for CI.
    Reduced,
}

impl Profile {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "faithful" => Some(Profile::Faithful),
            "reduced" => Some(Profile::Reduced),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Faithful => "faithful",
            Profile::Reduced => "reduced",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    SingleTask,
    MultiTask,
}

/// How model inputs are derived from raw IQ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    /// Leading samples of each frame fed to the network.
    pub input_len: usize,
    pub stft: StftConfig,
    /// Scale each frame to unit mean power before anything else.
    pub normalize_power: bool,
    /// Feed `ln(1e-3 + |X|)` instead of `|X|`.
    pub log_magnitude: bool,
}

impl InputConfig {
    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Faithful => Self { input_len: 1024, stft: StftConfig::faithful(), normalize_power: true, log_magnitude: false },
            Profile::Reduced => Self {
                input_len: 64,
                stft: StftConfig { win: 128, hop: 8, window: Window::Hann, centered: true },
                normalize_power: true,
                log_magnitude: false,
            },
        }
    }

    pub fn tf_shape(&self) -> Result<(usize, usize)> {
        Ok(self.stft.output_shape(self.input_len)?)
    }
}

/// Network-ready views of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Features<T> {
    /// `2×L`, rows I and Q.
    pub iq: Tensor<T>,
    /// `L×2`, one step per sample.
    pub seq: Tensor<T>,
    /// `1×bins×frames`.
    pub magnitude: Tensor<T>,
    /// `1×bins×frames`, radians.
    pub phase: Tensor<T>,
}

impl<T: Real> Features<T> {
    pub fn from_frame(samples: &[Complex32], cfg: &InputConfig) -> Result<Self> {
        if samples.len() < cfg.input_len || cfg.input_len == 0 {
            return Err(ModelError::FrameLength { want: cfg.input_len.max(1), got: samples.len() });
        }
        let mut x: Vec<Complex64> = samples[..cfg.input_len].iter().map(|v| Complex64::new(v.re as f64, v.im as f64)).collect();
        if cfg.normalize_power {
            let p = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64;
            if p > 0.0 {
                let s = 1.0 / p.sqrt();
                x.iter_mut().for_each(|v| *v *= s);
            }
        }
        let l = x.len();
        let mut iq = Vec::with_capacity(2 * l);
        iq.extend(x.iter().map(|v| T::cst(v.re)));
        iq.extend(x.iter().map(|v| T::cst(v.im)));
        let seq: Vec<T> = x.iter().flat_map(|v| [T::cst(v.re), T::cst(v.im)]).collect();

        let map = dsp::tf_map(&x, &cfg.stft)?;
        let norm = cfg.stft.window.coefficients(cfg.stft.win).iter().map(|w| w * w).sum::<f64>().sqrt();
        let magnitude = map
            .magnitude
            .iter()
            .map(|m| {
                let m = m / norm;
                T::cst(if cfg.log_magnitude { (1e-3 + m).ln() } else { m })
            })
            .collect();
        let phase = map.phase.iter().map(|&p| T::cst(p)).collect();
        let tf = [1, map.bins, map.frames];
        Ok(Self {
            iq: Tensor::new(&[2, l], iq)?,
            seq: Tensor::new(&[l, 2], seq)?,
            magnitude: Tensor::new(&tf, magnitude)?,
            phase: Tensor::new(&tf, phase)?,
        })
    }
}

/// Class-probability outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Heads {
    pub fingerprint: Var,
    pub protocol: Option<Var>,
}

/// Common surface of xDom and the baseline.
pub trait Network: Send + Sync {
    fn input_config(&self) -> &InputConfig;
    fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: &Features<T>, mode: TaskMode) -> Result<Heads>;
    fn has_protocol_head(&self) -> bool;
    fn name(&self) -> &'static str;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Xdom,
    Baseline,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "xdom" => Some(ModelKind::Xdom),
            "baseline" => Some(ModelKind::Baseline),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Xdom => "xdom",
            ModelKind::Baseline => "baseline",
        }
    }
}

/// Either network behind one type, so callers can pick at runtime.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Xdom(XDom),
    Baseline(Baseline),
}

impl AnyModel {
    pub fn build<T: Real>(
        kind: ModelKind,
        profile: Profile,
        fingerprint_classes: usize,
        protocol_classes: Option<usize>,
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self> {
        Ok(match kind {
            ModelKind::Xdom => AnyModel::Xdom(XDom::new(XDomConfig::for_profile(profile, fingerprint_classes, protocol_classes), store, seed)?),
            ModelKind::Baseline => {
                AnyModel::Baseline(Baseline::new(BaselineConfig::for_profile(profile, fingerprint_classes, protocol_classes), store, seed)?)
            }
        })
    }
}

impl Network for AnyModel {
    fn input_config(&self) -> &InputConfig {
        match self {
            AnyModel::Xdom(m) => m.input_config(),
            AnyModel::Baseline(m) => m.input_config(),
        }
    }

    fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: &Features<T>, mode: TaskMode) -> Result<Heads> {
        match self {
            AnyModel::Xdom(m) => m.forward(tape, x, mode),
            AnyModel::Baseline(m) => m.forward(tape, x, mode),
        }
    }

    fn has_protocol_head(&self) -> bool {
        match self {
            AnyModel::Xdom(m) => m.has_protocol_head(),
            AnyModel::Baseline(m) => m.has_protocol_head(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            AnyModel::Xdom(m) => m.name(),
            AnyModel::Baseline(m) => m.name(),
        }
    }
}

/// Total number of scalar parameters.
pub fn count_params<T: Real>(store: &ParamStore<T>) -> usize {
    store.count()
}
