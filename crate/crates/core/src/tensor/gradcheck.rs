//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dd, ParamId, ParamStore, Real, Result, Tape, Tensor, Var};

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<'_, f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.variable(x.clone())?;
    let out = f(&mut tape, v)?;
    Ok(tape.value(out)[0])
}

/// Compares the tape gradient of the scalar `f(x)` against central
/// differences `(f(x+eps) − f(x−eps)) / 2eps`, returning the largest
/// per-element relative error.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'_, f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.variable(x.clone())?;
    let out = f(&mut tape, v)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(relative_error(a, (fp - fm) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Worst relative error found for one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Finite-difference check of every parameter in `store` for the scalar
/// built by `f` on a tape bound to the store. With `per_param = Some(k)`
/// at most `k` seeded-random elements of each tensor are probed.
pub fn grad_check_params<F>(store: &ParamStore<f64>, f: F, eps: f64, per_param: Option<usize>, seed: u64) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::with_params(store);
        let out = f(&mut tape)?;
        tape.backward(out)?.param_grads()
    };
    let eval_store = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::with_params(s);
        let out = f(&mut tape)?;
        Ok(tape.value(out)[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let mut report = Vec::with_capacity(store.len());
    for (pi, p) in store.iter().enumerate() {
        let n = p.tensor.numel();
        let idx: Vec<usize> = match per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for &i in &idx {
            let id = ParamId(pi);
            let orig = probe.get(id).tensor.data()[i];
            probe.get_mut(id).tensor.data_mut()[i] = orig + eps;
            let fp = eval_store(&probe)?;
            probe.get_mut(id).tensor.data_mut()[i] = orig - eps;
            let fm = eval_store(&probe)?;
            probe.get_mut(id).tensor.data_mut()[i] = orig;
            worst = worst.max(relative_error(analytic.0[pi][i], (fp - fm) / (2.0 * eps)));
        }
        report.push(ParamCheck { name: p.name.clone(), checked: idx.len(), max_rel_err: worst });
    }
    Ok(report)
}

/// A scalar loss that can be built on a tape of any element type.
pub trait Objective {
    fn loss<T: Real>(&self, tape: &mut Tape<'_, T>) -> Result<Var>;
}

/// Like [`grad_check_params`], but the central differences are taken in
/// double-double arithmetic. The analytic side stays in `f64`.
///
/// Deep networks have parameters whose gradients sit near 1e-7; an `f64`
/// difference quotient loses most of its digits to rounding there, while a
/// larger `eps` starts stepping over relu kinks. Evaluating the reference in
/// ~106-bit precision lets `eps` stay small without the rounding floor.
pub fn grad_check_objective<O: Objective>(store: &ParamStore<f64>, obj: &O, eps: f64, per_param: Option<usize>, seed: u64) -> Result<Vec<ParamCheck>> {
    let analytic = {
        let mut tape = Tape::with_params(store);
        let out = obj.loss(&mut tape)?;
        tape.backward(out)?.param_grads()
    };
    let eval = |s: &ParamStore<Dd>| -> Result<Dd> {
        let mut tape = Tape::with_params(s);
        let out = obj.loss(&mut tape)?;
        Ok(tape.value(out)[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe: ParamStore<Dd> = store.cast();
    let step = Dd::new(eps);
    let mut report = Vec::with_capacity(store.len());
    for (pi, p) in store.iter().enumerate() {
        let n = p.tensor.numel();
        let idx: Vec<usize> = match per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let id = ParamId(pi);
        let mut worst = 0.0f64;
        for &i in &idx {
            let orig = probe.get(id).tensor.data()[i];
            probe.get_mut(id).tensor.data_mut()[i] = orig + step;
            let fp = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[i] = orig - step;
            let fm = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = ((fp - fm) / (step + step)).to_f64();
            worst = worst.max(relative_error(analytic.0[pi][i], numeric));
        }
        report.push(ParamCheck { name: p.name.clone(), checked: idx.len(), max_rel_err: worst });
    }
    Ok(report)
}
