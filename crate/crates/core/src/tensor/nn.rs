//! Parameterized layers built from tape primitives.
//!
//! Weights are initialized uniformly in `±1/√fan_in`; GRU weights use the
//! hidden width as fan-in.

use rand::Rng;

use super::{Real, Result, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

fn bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// `y = xW + b` with `W: in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let k = bound(in_dim);
        let w = store.add_uniform(format!("{name}.weight"), &[in_dim, out_dim], k, rng);
        let b = store.add_uniform(format!("{name}.bias"), &[out_dim], k, rng);
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.w)?;
        let b = tape.param(self.b)?;
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let k = bound(c_in * kernel);
        let w = store.add_uniform(format!("{name}.weight"), &[c_out, c_in, kernel], k, rng);
        let b = store.add_uniform(format!("{name}.bias"), &[c_out], k, rng);
        Self { w, b, stride, padding }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.w)?;
        let b = tape.param(self.b)?;
        tape.conv1d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let k = bound(c_in * kernel.0 * kernel.1);
        let w = store.add_uniform(format!("{name}.weight"), &[c_out, c_in, kernel.0, kernel.1], k, rng);
        let b = store.add_uniform(format!("{name}.bias"), &[c_out], k, rng);
        Self { w, b, stride, padding }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.w)?;
        let b = tape.param(self.b)?;
        tape.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct GruLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

/// Stacked GRU used as a many-to-one encoder.
///
/// Gates: `z = σ(W_z x + U_z h + b)`, `r = σ(W_r x + U_r h + b)`,
/// `n = tanh(W_n x + b_wn + r ⊙ (U_n h + b_un))`, `h' = (1−z) ⊙ n + z ⊙ h`.
#[derive(Clone, Debug)]
pub struct Gru {
    pub layers: Vec<GruLayer>,
    pub input: usize,
    pub hidden: usize,
}

/// Output of [`Gru::forward`].
#[derive(Clone, Copy, Debug)]
pub struct GruOutput {
    /// Top layer's state at the final step, `1×H`.
    pub out_last: Var,
    /// Final state of every layer, `layers×H`.
    pub h_final: Var,
}

impl Gru {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let k = bound(hidden);
        let layers = (0..layers)
            .map(|l| {
                let d = if l == 0 { input } else { hidden };
                GruLayer {
                    w_ih: store.add_uniform(format!("{name}.l{l}.w_ih"), &[d, 3 * hidden], k, rng),
                    w_hh: store.add_uniform(format!("{name}.l{l}.w_hh"), &[hidden, 3 * hidden], k, rng),
                    b_ih: store.add_uniform(format!("{name}.l{l}.b_ih"), &[3 * hidden], k, rng),
                    b_hh: store.add_uniform(format!("{name}.l{l}.b_hh"), &[3 * hidden], k, rng),
                }
            })
            .collect();
        Self { layers, input, hidden }
    }

    /// Builds the `T×D` input node from row-major step data, rejecting an
    /// empty sequence.
    pub fn sequence<T: Real>(&self, tape: &mut Tape<'_, T>, steps: &[T]) -> Result<Var> {
        if steps.is_empty() {
            return Err(TensorError::Empty("gru sequence"));
        }
        let t = Tensor::new(&[steps.len() / self.input, self.input], steps.to_vec())?;
        tape.input(t)
    }

    /// Runs every layer over `x: T×D`. `h0` is `layers×H`; zeros when absent.
    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, h0: Option<Var>) -> Result<GruOutput> {
        let h0 = match h0 {
            Some(h) => h,
            None => tape.input(Tensor::zeros(&[self.layers.len(), self.hidden]))?,
        };
        let mut seq = x;
        let mut finals = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let h_init = tape.row(h0, l)?;
            let w_ih = tape.param(layer.w_ih)?;
            let w_hh = tape.param(layer.w_hh)?;
            let b_ih = tape.param(layer.b_ih)?;
            let b_hh = tape.param(layer.b_hh)?;
            seq = tape.gru_layer(seq, h_init, w_ih, w_hh, b_ih, b_hh)?;
            let steps = tape.shape(seq)[0];
            finals.push(tape.row(seq, steps - 1)?);
        }
        let out_last = *finals.last().ok_or(TensorError::Empty("gru layers"))?;
        let h_final = tape.stack_rows(&finals)?;
        Ok(GruOutput { out_last, h_final })
    }
}
