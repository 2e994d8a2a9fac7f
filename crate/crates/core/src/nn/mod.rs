//! Minimal convolutional layers with explicit backward passes.
//!
//! Layers are plain structs holding [`Param`]s. A gradient accumulator is a
//! value of the same type obtained from [`Parameterized::zeros_like`]; every
//! `backward` takes `Option<&mut Self>` for it, where `None` means the layer is
//! frozen and only the input gradient is propagated.

mod attention;
mod conv;
mod resample;

pub use attention::{ChannelAttention, ChannelAttentionCache, Linear};
pub use conv::{Conv2d, ResBlock, ResBlockCache};
pub use resample::{bicubic_resize, bicubic_resize_backward, pixel_shuffle, pixel_unshuffle};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Negative slope of the leaky rectifier used throughout.
pub const LEAKY_SLOPE: f64 = 0.1;

/// A learnable tensor with a logical shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Anything that owns an ordered list of named parameters.
pub trait Parameterized<T: Scalar> {
    /// Parameters with their canonical dotted names, in a fixed order.
    fn params(&self) -> Vec<(String, &Param<T>)>;

    /// Same parameters and order as [`Parameterized::params`].
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut g = self.clone();
        for p in g.params_mut() {
            p.data.iter_mut().for_each(|v| *v = T::zero());
        }
        g
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|(_, p)| p.data.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn prefixed<'a, T>(prefix: &str, inner: Vec<(String, &'a Param<T>)>) -> Vec<(String, &'a Param<T>)> {
    inner
        .into_iter()
        .map(|(n, p)| (format!("{prefix}.{n}"), p))
        .collect()
}

#[inline]
pub fn leaky<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        v
    } else {
        v * T::of(LEAKY_SLOPE)
    }
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(leaky)
}

/// Multiplies `grad` by the rectifier's derivative at pre-activation `pre`.
pub fn leaky_relu_backward<T: Scalar>(pre: &Tensor<T>, grad: &mut Tensor<T>) {
    let slope = T::of(LEAKY_SLOPE);
    for (g, &p) in grad.data_mut().iter_mut().zip(pre.data()) {
        if p < T::zero() {
            *g *= slope;
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}
