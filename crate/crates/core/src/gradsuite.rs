//! Finite-difference checks over every tape primitive and the assembled
//! networks, as one callable suite.

use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{AnyModel, Features, ModelError, ModelKind, Network, Profile, TaskMode};
use crate::synth::derive_seed;
use crate::tensor::nn::Gru;
use crate::tensor::{grad_check, grad_check_objective, Objective, ParamStore, Real, Result, Tape, Tensor, Var};

/// Tolerance for single primitives in `f64`.
pub const LAYER_TOL: f64 = 1e-6;
/// Tolerance for whole networks.
pub const NETWORK_TOL: f64 = 1e-4;

const EPS: f64 = 1e-5;
const NETWORK_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Magnitudes in [0.1, 1) so no relu kink is within reach of a probe.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(0.1..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// `Σ c_i y_i` with fixed weights in [0.5, 1.5].
fn weighted_sum(tape: &mut Tape<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(y).to_vec();
    let n = shape.iter().product();
    let c = tape.input(Tensor::new(&shape, (0..n).map(|_| rng.random_range(0.5..1.5)).collect())?)?;
    let p = tape.mul(y, c)?;
    tape.sum(p)
}

struct Suite {
    rng: ChaCha8Rng,
    out: Vec<CheckResult>,
}

impl Suite {
    fn record(&mut self, name: &str, err: f64) {
        match self.out.iter_mut().find(|c| c.name == name) {
            Some(c) => c.max_rel_err = c.max_rel_err.max(err),
            None => self.out.push(CheckResult { name: name.into(), max_rel_err: err, tolerance: LAYER_TOL }),
        }
    }

    /// Checks `op` with respect to each of `args` in turn, the others held fixed.
    fn each_arg(&mut self, name: &str, args: &[Tensor<f64>], op: impl Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>) -> Result<()> {
        for k in 0..args.len() {
            let err = grad_check(
                |t, v| {
                    let vars = args.iter().enumerate().map(|(j, a)| if j == k { Ok(v) } else { t.input(a.clone()) }).collect::<Result<Vec<_>>>()?;
                    let y = op(t, &vars)?;
                    weighted_sum(t, y, k as u64 + 1)
                },
                &args[k],
                EPS,
            )?;
            self.record(name, err);
        }
        Ok(())
    }

    fn t(&mut self, shape: &[usize]) -> Tensor<f64> {
        rand_tensor(&mut self.rng, shape)
    }

    /// [`Suite::each_arg`] on fresh random arguments of the given shapes.
    fn shaped(&mut self, name: &str, shapes: &[&[usize]], op: impl Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>) -> Result<()> {
        let args: Vec<Tensor<f64>> = shapes.iter().map(|sh| self.t(sh)).collect();
        self.each_arg(name, &args, op)
    }
}

/// Every primitive the models are built from, checked in `f64` against
/// central differences with tolerance [`LAYER_TOL`].
pub fn layer_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut s = Suite { rng: ChaCha8Rng::seed_from_u64(seed), out: Vec::new() };

    for (m, k, n) in [(1, 3, 2), (4, 5, 3)] {
        s.shaped("matmul", &[&[m, k], &[k, n]], |t, v| t.matmul(v[0], v[1]))?;
        s.shaped("linear", &[&[m, k], &[k, n], &[n]], |t, v| t.linear(v[0], v[1], v[2]))?;
    }
    for (c_in, len, c_out, k, stride, pad) in [(1, 6, 2, 3, 1, 1), (2, 9, 3, 4, 2, 0), (3, 12, 2, 7, 1, 3)] {
        s.shaped("conv1d", &[&[c_in, len], &[c_out, c_in, k], &[c_out]], |t, v| t.conv1d(v[0], v[1], v[2], stride, pad))?;
    }
    for (c_in, h, w, c_out, kh, kw, stride, pad) in [(1, 5, 6, 2, 3, 3, (2, 2), (1, 1)), (2, 4, 4, 2, 2, 3, (1, 1), (0, 1))] {
        s.shaped("conv2d", &[&[c_in, h, w], &[c_out, c_in, kh, kw], &[c_out]], |t, v| t.conv2d(v[0], v[1], v[2], stride, pad))?;
    }

    let x = [s.t(&[3, 4])];
    s.each_arg("tanh", &x, |t, v| t.tanh(v[0]))?;
    s.each_arg("sigmoid", &x, |t, v| t.sigmoid(v[0]))?;
    s.shaped("softmax", &[&[1, 6]], |t, v| t.softmax(v[0]))?;
    s.shaped("mul", &[&[2, 3], &[2, 3]], |t, v| t.mul(v[0], v[1]))?;
    s.shaped("add", &[&[2, 3], &[2, 3]], |t, v| t.add(v[0], v[1]))?;
    s.shaped("add_row", &[&[3, 4], &[4]], |t, v| t.add_row(v[0], v[1]))?;
    s.each_arg("scale", &x, |t, v| t.scale(v[0], -2.5))?;
    s.shaped("concat", &[&[1, 2], &[1, 5]], |t, v| t.concat(&[v[0], v[1], v[0]]))?;
    s.shaped("stack_rows", &[&[1, 3], &[1, 3]], |t, v| t.stack_rows(&[v[1], v[0]]))?;
    s.shaped("row", &[&[4, 3]], |t, v| t.row(v[0], 2))?;
    s.shaped("reshape", &[&[2, 6]], |t, v| t.reshape(v[0], &[3, 4]))?;
    s.shaped("global_avg_pool", &[&[3, 4, 5]], |t, v| t.global_avg_pool(v[0]))?;
    let kinked = [rand_away_from_zero(&mut s.rng, &[3, 5])];
    s.each_arg("relu", &kinked, |t, v| t.relu(v[0]))?;
    s.shaped("max_pool1d", &[&[2, 9]], |t, v| t.max_pool1d(v[0], 2))?;
    for label in 0..4 {
        let logits = s.t(&[1, 4]);
        let err = grad_check(
            |t, v| {
                let p = t.softmax(v)?;
                t.cross_entropy(p, label)
            },
            &logits,
            EPS,
        )?;
        s.record("cross_entropy", err);
    }

    for (steps, input, hidden) in [(3, 2, 4), (5, 3, 2)] {
        let h = hidden;
        s.shaped("gru_layer", &[&[1, input], &[1, h], &[input, 3 * h], &[h, 3 * h], &[3 * h], &[3 * h]], |t, v| t.gru_layer(v[0], v[1], v[2], v[3], v[4], v[5]))?;

        let mut store = ParamStore::<f64>::new();
        let gru = Gru::new(&mut store, "gru", input, hidden, 2, &mut s.rng);
        let obj = GruStack { gru, x: s.t(&[steps, input]), h0: s.t(&[2, hidden]) };
        for c in grad_check_objective(&store, &obj, 1e-7, None, 0)? {
            s.record("gru_stack", c.max_rel_err);
        }
    }
    Ok(s.out)
}

/// Two-layer GRU read out through both its last output and final state.
/// Parameter gradients deep in the recurrence can be small enough that an
/// `f64` difference quotient is mostly rounding, so this one goes through
/// the extended-precision reference.
struct GruStack {
    gru: Gru,
    x: Tensor<f64>,
    h0: Tensor<f64>,
}

fn weighted_sum_t<T: Real>(tape: &mut Tape<'_, T>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(y).to_vec();
    let c: Vec<f64> = (0..shape.iter().product()).map(|_| rng.random_range(0.5..1.5)).collect();
    let c = tape.input(Tensor::from_f64(&shape, &c)?)?;
    let p = tape.mul(y, c)?;
    tape.sum(p)
}

impl Objective for GruStack {
    fn loss<T: Real>(&self, tape: &mut Tape<'_, T>) -> Result<Var> {
        let x = tape.input(Tensor::from_f64(self.x.shape(), self.x.data())?)?;
        let h0 = tape.input(Tensor::from_f64(self.h0.shape(), self.h0.data())?)?;
        let out = self.gru.forward(tape, x, Some(h0))?;
        let a = weighted_sum_t(tape, out.out_last, 8)?;
        let b = weighted_sum_t(tape, out.h_final, 9)?;
        tape.add(a, b)
    }
}

/// Fingerprint plus half-weighted protocol cross-entropy on one fixed frame.
struct MtlLoss<'a> {
    model: &'a AnyModel,
    frame: Vec<Complex32>,
}

impl Objective for MtlLoss<'_> {
    fn loss<T: Real>(&self, tape: &mut Tape<'_, T>) -> Result<Var> {
        let f = Features::<T>::from_frame(&self.frame, self.model.input_config()).expect("frame validated on construction");
        let h = match self.model.forward(tape, &f, TaskMode::MultiTask) {
            Ok(h) => h,
            Err(ModelError::Tensor(e)) => return Err(e),
            Err(e) => panic!("network built for multi-task input: {e}"),
        };
        let lf = tape.cross_entropy(h.fingerprint, 1)?;
        let lp = tape.cross_entropy(h.protocol.expect("built with a protocol head"), 0)?;
        let lp = tape.scale(lp, T::cst(0.5))?;
        tape.add(lf, lp)
    }
}

/// End-to-end multi-task loss gradients of both networks. `per_param`
/// coordinates are sampled from every parameter tensor.
pub fn network_checks(profile: Profile, per_param: usize, seed: u64) -> Result<Vec<CheckResult>, ModelError> {
    let mut out = Vec::new();
    for kind in [ModelKind::Xdom, ModelKind::Baseline] {
        let mut store = ParamStore::<f64>::new();
        let model = AnyModel::build(kind, profile, 4, Some(2), &mut store, derive_seed(&[seed, 1]))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 2]));
        let len = model.input_config().input_len;
        let frame: Vec<Complex32> = (0..len).map(|_| Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        Features::<f64>::from_frame(&frame, model.input_config())?;
        let obj = MtlLoss { model: &model, frame };
        for c in grad_check_objective(&store, &obj, NETWORK_EPS, Some(per_param), derive_seed(&[seed, 3]))? {
            out.push(CheckResult { name: format!("{}/{}", kind.as_str(), c.name), max_rel_err: c.max_rel_err, tolerance: NETWORK_TOL });
        }
    }
    Ok(out)
}

/// Layer checks followed by network checks.
pub fn gradient_suite(profile: Profile, seed: u64) -> Result<Vec<CheckResult>, ModelError> {
    let mut all = layer_checks(seed)?;
    all.extend(network_checks(profile, 8, seed)?);
    Ok(all)
}
