//! Minimal reverse-mode automatic differentiation.
//!
//! Values live on a define-by-run [`Tape`]: every forward op appends a node
//! holding its output and the rule needed to push gradients back to its
//! inputs. Trainable weights are kept in a [`ParamStore`] and borrowed onto
//! the tape for each forward pass, so the store can be shared by many tapes
//! at once (one per example in a mini-batch).

mod checkpoint;
mod dd;
mod gradcheck;
mod kernels;
pub mod nn;
mod param;
mod tape;

use std::fmt::Debug;

use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, CheckpointRecord, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use dd::Dd;
pub use gradcheck::{grad_check, grad_check_objective, grad_check_params, relative_error, Objective, ParamCheck};
pub use kernels::{conv1d_out_len, conv_out_len};
pub use param::{sgd_momentum_step, ParamGrads, ParamId, Parameter, ParamStore};
pub use tape::{Gradients, Tape, Var};

/// Floating point element type usable on the tape.
///
/// Implemented for `f32` (training), `f64` (analytic gradients in checks)
/// and [`Dd`] (finite-difference reference values).
pub trait Real:
    Copy
    + PartialOrd
    + Debug
    + Default
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    fn cst(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    fn neg_infinity() -> Self {
        Self::cst(f64::NEG_INFINITY)
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

macro_rules! float_real {
    ($t:ty) => {
        impl Real for $t {
            fn cst(v: f64) -> Self {
                v as $t
            }
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            fn zero() -> Self {
                0.0
            }
            fn one() -> Self {
                1.0
            }
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            fn min(self, other: Self) -> Self {
                <$t>::min(self, other)
            }
        }
    };
}

float_real!(f32);
float_real!(f64);

impl Real for Dd {
    fn cst(v: f64) -> Self {
        Dd::new(v)
    }
    fn to_f64_lossy(self) -> f64 {
        self.to_f64()
    }
    fn exp(self) -> Self {
        Dd::exp(self)
    }
    fn ln(self) -> Self {
        Dd::ln(self)
    }
    fn tanh(self) -> Self {
        Dd::tanh(self)
    }
    fn sqrt(self) -> Self {
        Dd::sqrt(self)
    }
    fn abs(self) -> Self {
        Dd::abs(self)
    }
    fn is_finite(self) -> bool {
        Dd::is_finite(self)
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("tape has no parameter store bound")]
    NoParams,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn dim_err<V>(op: &'static str, detail: impl Into<String>) -> Result<V> {
    Err(TensorError::Dimension { op, detail: detail.into() })
}

/// A dense row-major array. This is the plain value type; tape nodes own or
/// borrow one of these.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return dim_err(
                "tensor",
                format!("shape {shape:?} holds {n} elements but data has {}", data.len()),
            );
        }
        if shape.contains(&0) {
            return dim_err("tensor", format!("zero-sized dimension in {shape:?}"));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn row(data: Vec<T>) -> Self {
        Self { shape: vec![1, data.len()], data }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::cst(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
