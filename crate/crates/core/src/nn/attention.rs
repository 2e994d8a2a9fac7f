use rand::Rng;

use super::{leaky, prefixed, sigmoid, Param, Parameterized, LEAKY_SLOPE};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Dense layer on vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `(outputs, inputs)`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: Param::uniform(&[outputs, inputs], bound, rng),
            bias: Param::uniform(&[outputs], bound, rng),
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weight.data[o * self.inputs..(o + 1) * self.inputs];
                row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + self.bias.data[o]
            })
            .collect()
    }

    pub fn backward(&self, x: &[T], grad_out: &[T], grad: Option<&mut Self>) -> Vec<T> {
        if let Some(g) = grad {
            for (o, &go) in grad_out.iter().enumerate() {
                g.bias.data[o] += go;
                let row = &mut g.weight.data[o * self.inputs..(o + 1) * self.inputs];
                for (w, &v) in row.iter_mut().zip(x) {
                    *w += go * v;
                }
            }
        }
        let mut gx = vec![T::zero(); self.inputs];
        for (o, &go) in grad_out.iter().enumerate() {
            let row = &self.weight.data[o * self.inputs..(o + 1) * self.inputs];
            for (g, &w) in gx.iter_mut().zip(row) {
                *g += go * w;
            }
        }
        gx
    }
}

impl<T: Scalar> Parameterized<T> for Linear<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Squeeze-and-excitation gating: each feature channel is scaled by
/// `sigmoid(W2 act(W1 mean(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttention<T> {
    pub squeeze: Linear<T>,
    pub excite: Linear<T>,
}

pub struct ChannelAttentionCache<T> {
    input: Tensor<T>,
    pooled: Vec<T>,
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
    scales: Vec<T>,
}

impl<T: Scalar> ChannelAttention<T> {
    pub fn new(width: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        let hidden = (width / reduction).max(1);
        Self {
            squeeze: Linear::new(width, hidden, rng),
            excite: Linear::new(hidden, width, rng),
        }
    }

    fn pool(x: &Tensor<T>) -> Vec<T> {
        let n = T::of(x.plane_len() as f64);
        (0..x.channels())
            .map(|c| x.plane(c).iter().copied().sum::<T>() / n)
            .collect()
    }

    /// The per-channel gates in (0, 1).
    pub fn scales(&self, x: &Tensor<T>) -> Vec<T> {
        let hidden: Vec<T> = self.squeeze.forward(&Self::pool(x)).into_iter().map(leaky).collect();
        self.excite.forward(&hidden).into_iter().map(sigmoid).collect()
    }

    fn apply(x: &Tensor<T>, scales: &[T]) -> Tensor<T> {
        let mut y = x.clone();
        for (c, &s) in scales.iter().enumerate() {
            y.plane_mut(c).iter_mut().for_each(|v| *v *= s);
        }
        y
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        Self::apply(x, &self.scales(x))
    }

    pub fn forward_train(&self, x: Tensor<T>) -> (Tensor<T>, ChannelAttentionCache<T>) {
        let pooled = Self::pool(&x);
        let hidden_pre = self.squeeze.forward(&pooled);
        let hidden: Vec<T> = hidden_pre.iter().copied().map(leaky).collect();
        let scales: Vec<T> = self.excite.forward(&hidden).into_iter().map(sigmoid).collect();
        let y = Self::apply(&x, &scales);
        (
            y,
            ChannelAttentionCache {
                input: x,
                pooled,
                hidden_pre,
                hidden,
                scales,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &ChannelAttentionCache<T>,
        grad_out: &Tensor<T>,
        mut grad: Option<&mut Self>,
    ) -> Tensor<T> {
        let x = &cache.input;
        let n = T::of(x.plane_len() as f64);
        let mut gx = grad_out.clone();
        let mut g_pre_sigmoid = Vec::with_capacity(x.channels());
        for (c, &s) in cache.scales.iter().enumerate() {
            let dot: T = grad_out.plane(c).iter().zip(x.plane(c)).map(|(&g, &v)| g * v).sum();
            g_pre_sigmoid.push(dot * s * (T::one() - s));
            gx.plane_mut(c).iter_mut().for_each(|v| *v *= s);
        }
        let mut g_hidden = self
            .excite
            .backward(&cache.hidden, &g_pre_sigmoid, grad.as_mut().map(|g| &mut g.excite));
        let slope = T::of(LEAKY_SLOPE);
        for (g, &p) in g_hidden.iter_mut().zip(&cache.hidden_pre) {
            if p < T::zero() {
                *g *= slope;
            }
        }
        let g_pooled = self
            .squeeze
            .backward(&cache.pooled, &g_hidden, grad.as_mut().map(|g| &mut g.squeeze));
        for (c, &gp) in g_pooled.iter().enumerate() {
            let add = gp / n;
            gx.plane_mut(c).iter_mut().for_each(|v| *v += add);
        }
        gx
    }
}

impl<T: Scalar> Parameterized<T> for ChannelAttention<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut v = prefixed("squeeze", self.squeeze.params());
        v.extend(prefixed("excite", self.excite.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.squeeze.params_mut();
        v.extend(self.excite.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn saturated_gate_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ca = ChannelAttention::<f64>::new(8, 4, &mut rng);
        ca.excite.bias.data.iter_mut().for_each(|b| *b = 20.0);
        let x = Tensor::from_fn(8, 5, 5, |c, y, xx| ((c + y * 3 + xx) % 7) as f64 / 7.0);
        let y = ca.forward(&x);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-300) + 1e-12);
        }
    }

    #[test]
    fn zero_features_stay_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ca = ChannelAttention::<f32>::new(8, 4, &mut rng);
        let y = ca.forward(&Tensor::zeros(8, 3, 3));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scales_lie_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ca = ChannelAttention::<f64>::new(16, 4, &mut rng);
        let x = Tensor::from_fn(16, 4, 4, |c, y, xx| (c as f64 - 8.0) * (y + xx) as f64);
        assert!(ca.scales(&x).iter().all(|&s| s > 0.0 && s < 1.0));
    }
}
