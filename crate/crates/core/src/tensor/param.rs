use rand::Rng;

use super::{dim_err, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor together with its gradient accumulator and momentum
/// buffer. The velocity starts at zero.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub grad: Vec<T>,
    pub velocity: Vec<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        let n = tensor.numel();
        Self { name: name.into(), tensor, grad: vec![T::zero(); n], velocity: vec![T::zero(); n] }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.params.push(Parameter::new(name, tensor));
        ParamId(self.params.len() - 1)
    }

    /// Adds a parameter initialized uniformly in `±bound`.
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut R) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::cst(rng.random_range(-bound..=bound))).collect();
        let tensor = Tensor::new(shape, data).expect("shape matches generated data");
        self.add(name, tensor)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zeros_like_grads(&self) -> ParamGrads<T> {
        ParamGrads(self.params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect())
    }

    /// Adds `scale * g` into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &ParamGrads<T>, scale: T) -> Result<()> {
        if grads.0.len() != self.params.len() {
            return dim_err("accumulate", format!("{} gradient buffers for {} parameters", grads.0.len(), self.params.len()));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            for (a, &b) in p.grad.iter_mut().zip(g) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Converts element type, dropping gradient and momentum state.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| {
                    let data = p.tensor.data().iter().map(|v| U::cst(v.to_f64_lossy())).collect();
                    Parameter::new(p.name.clone(), Tensor::new(p.tensor.shape(), data).expect("same shape"))
                })
                .collect(),
        }
    }
}

/// Per-parameter gradient buffers, indexed like the owning [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T>(pub Vec<Vec<T>>);

impl<T: Real> ParamGrads<T> {
    pub fn add_assign(&mut self, other: &ParamGrads<T>) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.0[id.0]
    }
}

/// Classical momentum: `v ← mu·v + g`, `p ← p − lr·v`, then gradients are zeroed.
pub fn sgd_momentum_step<T: Real>(params: &mut ParamStore<T>, lr: T, mu: T) {
    for p in params.iter_mut() {
        for ((w, v), g) in p.tensor.data_mut().iter_mut().zip(p.velocity.iter_mut()).zip(p.grad.iter_mut()) {
            *v = mu * *v + *g;
            *w -= lr * *v;
            *g = T::zero();
        }
    }
}
