use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Features, Heads, InputConfig, ModelError, Network, Profile, Result, TaskMode};
use crate::tensor::nn::{Conv1d, Conv2d, Gru, Linear};
use crate::tensor::{ParamStore, Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauMode {
    /// `tau` is appended to the fused vector.
    Concat,
    /// `tau ⊙ x_h` is appended instead.
    Scale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XDomConfig {
    pub input: InputConfig,
    pub conv1d_kernels: Vec<usize>,
    pub conv1d_filters: usize,
    pub conv2d_filters: Vec<usize>,
    pub conv2d_kernel: usize,
    pub conv2d_stride: usize,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub attention_dim: usize,
    pub head_width: usize,
    pub fingerprint_classes: usize,
    pub protocol_classes: Option<usize>,
    pub tau_mode: TauMode,
}

impl XDomConfig {
    pub fn for_profile(profile: Profile, fingerprint_classes: usize, protocol_classes: Option<usize>) -> Self {
        let hidden = match profile {
            Profile::Faithful => 132,
            Profile::Reduced => 8,
        };
        Self {
            input: InputConfig::for_profile(profile),
            conv1d_kernels: vec![3, 7],
            conv1d_filters: 32,
            conv2d_filters: vec![16, 32],
            conv2d_kernel: 3,
            conv2d_stride: 2,
            gru_layers: 2,
            gru_hidden: hidden,
            attention_dim: 2 * hidden,
            head_width: 128,
            fingerprint_classes,
            protocol_classes,
            tau_mode: TauMode::Concat,
        }
    }

    pub fn x_h_dim(&self) -> usize {
        2 * self.gru_hidden
    }

    /// Width of the fused vector `[x1_iq, x2_iq, x3_phase, x4_mag, tau]`.
    pub fn fused_dim(&self) -> usize {
        let spatial = self.conv1d_kernels.len() * self.conv1d_filters + 2 * self.conv2d_filters.last().copied().unwrap_or(0);
        spatial + self.attention_dim
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.attention_dim != self.x_h_dim() {
            return bad("attention_dim must equal 2 × gru_hidden");
        }
        if self.conv1d_kernels.is_empty() || self.conv1d_kernels.iter().any(|k| k % 2 == 0) {
            return bad("conv1d kernels must be odd for same padding");
        }
        if self.conv2d_filters.is_empty() || self.conv2d_kernel == 0 || self.conv2d_stride == 0 {
            return bad("conv2d stack must be non-empty with positive kernel and stride");
        }
        if self.gru_layers == 0 || self.gru_hidden == 0 || self.head_width == 0 || self.conv1d_filters == 0 {
            return bad("layer widths must be positive");
        }
        if self.fingerprint_classes == 0 || self.protocol_classes == Some(0) {
            return bad("class counts must be positive");
        }
        self.input.tf_shape()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Head {
    hidden: Linear,
    out: Linear,
}

impl Head {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, input: usize, width: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { hidden: Linear::new(store, &format!("{name}.fc1"), input, width, rng), out: Linear::new(store, &format!("{name}.fc2"), width, classes, rng) }
    }

    fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, x)?;
        let h = tape.relu(h)?;
        let z = self.out.forward(tape, h)?;
        Ok(tape.softmax(z)?)
    }
}

/// Intermediate nodes of one xDom forward pass.
#[derive(Clone, Debug)]
pub struct XDomTrace {
    /// `[x1_iq, x2_iq, x3_phase, x4_mag]`.
    pub spatial: Vec<Var>,
    pub x_o: Var,
    pub h: Var,
    pub x_h: Var,
    pub tau: Var,
    pub a_xdom: Var,
    pub heads: Heads,
}

#[derive(Clone, Debug)]
pub struct XDom {
    pub cfg: XDomConfig,
    iq_convs: Vec<Conv1d>,
    mag_convs: Vec<Conv2d>,
    phase_convs: Vec<Conv2d>,
    gru: Gru,
    attention: Linear,
    fingerprint: Head,
    protocol: Option<Head>,
}

impl XDom {
    pub fn new<T: Real>(cfg: XDomConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let iq_convs = cfg
            .conv1d_kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| Conv1d::new(store, &format!("iq{}", i + 1), 2, cfg.conv1d_filters, k, 1, k / 2, &mut rng))
            .collect();
        let k = cfg.conv2d_kernel;
        let mut stack = |name: &str, rng: &mut ChaCha8Rng| -> Vec<Conv2d> {
            let mut c_in = 1;
            cfg.conv2d_filters
                .iter()
                .enumerate()
                .map(|(i, &f)| {
                    let s = cfg.conv2d_stride;
                    let layer = Conv2d::new(store, &format!("{name}.conv{}", i + 1), c_in, f, (k, k), (s, s), (k / 2, k / 2), rng);
                    c_in = f;
                    layer
                })
                .collect()
        };
        let phase_convs = stack("phase", &mut rng);
        let mag_convs = stack("mag", &mut rng);
        let gru = Gru::new(store, "gru", 2, cfg.gru_hidden, cfg.gru_layers, &mut rng);
        let attention = Linear::new(store, "attention", cfg.x_h_dim(), cfg.attention_dim, &mut rng);
        let fused = cfg.fused_dim();
        let fingerprint = Head::new(store, "fingerprint", fused, cfg.head_width, cfg.fingerprint_classes, &mut rng);
        let protocol = cfg.protocol_classes.map(|c| Head::new(store, "protocol", fused, cfg.head_width, c, &mut rng));
        Ok(Self { cfg, iq_convs, mag_convs, phase_convs, gru, attention, fingerprint, protocol })
    }

    fn conv2d_branch<T: Real>(tape: &mut Tape<'_, T>, layers: &[Conv2d], x: Var) -> Result<Var> {
        let mut h = x;
        for l in layers {
            h = l.forward(tape, h)?;
            h = tape.relu(h)?;
        }
        Ok(tape.global_avg_pool(h)?)
    }

    /// Forward pass exposing every intermediate of the dimension chain.
    pub fn forward_traced<T: Real>(&self, tape: &mut Tape<'_, T>, x: &Features<T>, mode: TaskMode) -> Result<XDomTrace> {
        let l = self.cfg.input.input_len;
        let (bins, frames) = self.cfg.input.tf_shape()?;
        if x.iq.shape() != [2, l] || x.seq.shape() != [l, 2] || x.magnitude.shape() != [1, bins, frames] || x.phase.shape() != [1, bins, frames] {
            return Err(ModelError::Config(format!(
                "features iq {:?}, seq {:?}, tf {:?} do not match input length {l} and map {bins}×{frames}",
                x.iq.shape(),
                x.seq.shape(),
                x.magnitude.shape()
            )));
        }
        if mode == TaskMode::MultiTask && self.protocol.is_none() {
            return Err(ModelError::NoProtocolHead);
        }

        // spatial
        let iq = tape.input(x.iq.clone())?;
        let mut spatial = Vec::with_capacity(4);
        for conv in &self.iq_convs {
            let c = conv.forward(tape, iq)?;
            let c = tape.relu(c)?;
            spatial.push(tape.global_avg_pool(c)?);
        }
        let phase = tape.input(x.phase.clone())?;
        spatial.push(Self::conv2d_branch(tape, &self.phase_convs, phase)?);
        let mag = tape.input(x.magnitude.clone())?;
        spatial.push(Self::conv2d_branch(tape, &self.mag_convs, mag)?);

        // temporal
        let seq = tape.input(x.seq.clone())?;
        let g = self.gru.forward(tape, seq, None)?;
        let x_o = g.out_last;
        let h = tape.row(g.h_final, self.cfg.gru_layers - 1)?;
        let x_h = tape.concat(&[x_o, h])?;

        // attention and fusion
        let score = self.attention.forward(tape, x_h)?;
        let score = tape.tanh(score)?;
        let tau = tape.softmax(score)?;
        let tail = match self.cfg.tau_mode {
            TauMode::Concat => tau,
            TauMode::Scale => tape.mul(tau, x_h)?,
        };
        let mut parts = spatial.clone();
        parts.push(tail);
        let a_xdom = tape.concat(&parts)?;

        let fingerprint = self.fingerprint.forward(tape, a_xdom)?;
        let protocol = match (mode, &self.protocol) {
            (TaskMode::MultiTask, Some(head)) => Some(head.forward(tape, a_xdom)?),
            _ => None,
        };
        Ok(XDomTrace { spatial, x_o, h, x_h, tau, a_xdom, heads: Heads { fingerprint, protocol } })
    }
}

impl Network for XDom {
    fn input_config(&self) -> &InputConfig {
        &self.cfg.input
    }

    fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: &Features<T>, mode: TaskMode) -> Result<Heads> {
        Ok(self.forward_traced(tape, x, mode)?.heads)
    }

    fn has_protocol_head(&self) -> bool {
        self.protocol.is_some()
    }

    fn name(&self) -> &'static str {
        "xdom"
    }
}
