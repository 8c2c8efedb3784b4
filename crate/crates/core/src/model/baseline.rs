use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Features, Heads, InputConfig, ModelError, Network, Profile, Result, TaskMode};
use crate::tensor::nn::{Conv1d, Linear};
use crate::tensor::{ParamStore, Real, Tape};

/// Raw-IQ reference CNN: conv(64, k7) → pool 2 → conv(128, k7) → pool 2 →
/// dense 256 → one softmax head per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub input: InputConfig,
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub dense: usize,
    pub fingerprint_classes: usize,
    pub protocol_classes: Option<usize>,
}

impl BaselineConfig {
    pub fn for_profile(profile: Profile, fingerprint_classes: usize, protocol_classes: Option<usize>) -> Self {
        Self {
            input: InputConfig::for_profile(profile),
            filters: vec![64, 128],
            kernel: 7,
            pool: 2,
            dense: 256,
            fingerprint_classes,
            protocol_classes,
        }
    }

    /// Length of the flattened conv output.
    pub fn flat_dim(&self) -> usize {
        let mut len = self.input.input_len;
        for _ in &self.filters {
            len /= self.pool;
        }
        len * self.filters.last().copied().unwrap_or(2)
    }
}

#[derive(Clone, Debug)]
pub struct Baseline {
    pub cfg: BaselineConfig,
    convs: Vec<Conv1d>,
    dense: Linear,
    fingerprint: Linear,
    protocol: Option<Linear>,
}

impl Baseline {
    pub fn new<T: Real>(cfg: BaselineConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        if cfg.filters.is_empty() || cfg.kernel.is_multiple_of(2) || cfg.pool == 0 || cfg.flat_dim() == 0 || cfg.fingerprint_classes == 0 {
            return Err(ModelError::Config("baseline needs conv layers, an odd kernel and room to pool".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c_in = 2;
        let convs = cfg
            .filters
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let c = Conv1d::new(store, &format!("conv{}", i + 1), c_in, f, cfg.kernel, 1, cfg.kernel / 2, &mut rng);
                c_in = f;
                c
            })
            .collect();
        let dense = Linear::new(store, "dense", cfg.flat_dim(), cfg.dense, &mut rng);
        let fingerprint = Linear::new(store, "fingerprint", cfg.dense, cfg.fingerprint_classes, &mut rng);
        let protocol = cfg.protocol_classes.map(|c| Linear::new(store, "protocol", cfg.dense, c, &mut rng));
        Ok(Self { cfg, convs, dense, fingerprint, protocol })
    }
}

impl Network for Baseline {
    fn input_config(&self) -> &InputConfig {
        &self.cfg.input
    }

    fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: &Features<T>, mode: TaskMode) -> Result<Heads> {
        if x.iq.shape() != [2, self.cfg.input.input_len] {
            return Err(ModelError::Config(format!("iq {:?} does not match input length {}", x.iq.shape(), self.cfg.input.input_len)));
        }
        if mode == TaskMode::MultiTask && self.protocol.is_none() {
            return Err(ModelError::NoProtocolHead);
        }
        let mut h = tape.input(x.iq.clone())?;
        for c in &self.convs {
            h = c.forward(tape, h)?;
            h = tape.relu(h)?;
            h = tape.max_pool1d(h, self.cfg.pool)?;
        }
        let flat = tape.reshape(h, &[1, self.cfg.flat_dim()])?;
        let d = self.dense.forward(tape, flat)?;
        let d = tape.relu(d)?;
        let zf = self.fingerprint.forward(tape, d)?;
        let fingerprint = tape.softmax(zf)?;
        let protocol = match (mode, &self.protocol) {
            (TaskMode::MultiTask, Some(head)) => {
                let zp = head.forward(tape, d)?;
                Some(tape.softmax(zp)?)
            }
            _ => None,
        };
        Ok(Heads { fingerprint, protocol })
    }

    fn has_protocol_head(&self) -> bool {
        self.protocol.is_some()
    }

    fn name(&self) -> &'static str {
        "baseline"
    }
}
