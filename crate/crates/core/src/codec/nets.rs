use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu, leaky_relu_backward, prefixed, ChannelAttention, ChannelAttentionCache, Conv2d, Param, Parameterized,
    ResBlock, ResBlockCache,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::FRAME_CHANNELS;

fn block_params<T: Scalar>(blocks: &[ResBlock<T>]) -> Vec<(String, &Param<T>)> {
    blocks
        .iter()
        .enumerate()
        .flat_map(|(i, b)| prefixed(&format!("blocks.{i}"), b.params()))
        .collect()
}

fn block_params_mut<T: Scalar>(blocks: &mut [ResBlock<T>]) -> Vec<&mut Param<T>> {
    blocks.iter_mut().flat_map(|b| b.params_mut()).collect()
}

/// Runs `blocks` in sequence keeping caches.
fn blocks_train<T: Scalar>(blocks: &[ResBlock<T>], mut h: Tensor<T>) -> (Tensor<T>, Vec<ResBlockCache<T>>) {
    let mut caches = Vec::with_capacity(blocks.len());
    for b in blocks {
        let (y, c) = b.forward_train(h);
        caches.push(c);
        h = y;
    }
    (h, caches)
}

fn blocks_backward<T: Scalar>(
    blocks: &[ResBlock<T>],
    caches: &[ResBlockCache<T>],
    mut g: Tensor<T>,
    mut grads: Option<&mut Vec<ResBlock<T>>>,
) -> Tensor<T> {
    for (i, (b, c)) in blocks.iter().zip(caches).enumerate().rev() {
        g = b.backward(c, &g, grads.as_mut().map(|gs| &mut gs[i]));
    }
    g
}

/// Residual denoiser `x + out(blocks(act(in(x))))` with a zero-initialized
/// output convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct CleaningNet<T> {
    pub input: Conv2d<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub output: Conv2d<T>,
}

pub struct CleanPassCache<T> {
    x: Tensor<T>,
    pre: Tensor<T>,
    blocks: Vec<ResBlockCache<T>>,
    hidden: Tensor<T>,
}

/// Caches of every pass of one [`CleaningNet::clean_train`] call.
pub struct CleanTrace<T> {
    passes: Vec<CleanPassCache<T>>,
}

impl<T: Scalar> CleaningNet<T> {
    pub fn new(width: usize, blocks: usize, rng: &mut impl Rng) -> Self {
        Self {
            input: Conv2d::new(FRAME_CHANNELS, width, 3, 1.0, rng),
            blocks: (0..blocks).map(|_| ResBlock::new(width, rng)).collect(),
            output: Conv2d::zeros(width, FRAME_CHANNELS, 3),
        }
    }

    fn check(frame: &Tensor<T>) -> Result<()> {
        if frame.channels() != FRAME_CHANNELS {
            return Err(Error::shape(format!(
                "cleaning expects {FRAME_CHANNELS} channels, got {}",
                frame.channels()
            )));
        }
        Ok(())
    }

    fn pass(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = leaky_relu(&self.input.forward(x));
        for b in &self.blocks {
            h = b.forward(&h);
        }
        let mut y = self.output.forward(&h);
        y.add_assign(x);
        y
    }

    /// Applies the denoiser `iterations` times, feeding each output into the next pass.
    pub fn clean(&self, frame: &Tensor<T>, iterations: usize) -> Result<Tensor<T>> {
        Self::check(frame)?;
        let mut x = frame.clone();
        for _ in 0..iterations {
            x = self.pass(&x);
        }
        Ok(x)
    }

    pub fn clean_train(&self, frame: &Tensor<T>, iterations: usize) -> Result<(Tensor<T>, CleanTrace<T>)> {
        Self::check(frame)?;
        let mut x = frame.clone();
        let mut passes = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let pre = self.input.forward(&x);
            let (hidden, blocks) = blocks_train(&self.blocks, leaky_relu(&pre));
            let mut y = self.output.forward(&hidden);
            y.add_assign(&x);
            passes.push(CleanPassCache { x, pre, blocks, hidden });
            x = y;
        }
        Ok((x, CleanTrace { passes }))
    }

    pub fn clean_backward(&self, trace: &CleanTrace<T>, grad_out: &Tensor<T>, mut grad: Option<&mut Self>) -> Tensor<T> {
        let mut g = grad_out.clone();
        for c in trace.passes.iter().rev() {
            let (gi, gb, go) = match grad.as_mut() {
                Some(a) => (Some(&mut a.input), Some(&mut a.blocks), Some(&mut a.output)),
                None => (None, None, None),
            };
            let g_hidden = self.output.backward(&c.hidden, &g, go);
            let mut gh = blocks_backward(&self.blocks, &c.blocks, g_hidden, gb);
            leaky_relu_backward(&c.pre, &mut gh);
            let mut gx = self.input.backward(&c.x, &gh, gi);
            gx.add_assign(&g);
            g = gx;
        }
        g
    }
}

impl<T: Scalar> Parameterized<T> for CleaningNet<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut v = prefixed("input", self.input.params());
        v.extend(block_params(&self.blocks));
        v.extend(prefixed("output", self.output.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.input.params_mut();
        v.extend(block_params_mut(&mut self.blocks));
        v.extend(self.output.params_mut());
        v
    }
}

/// Shared layout of the group encoder and decoder: 3x3 input conv, residual
/// blocks, 1x1 channel mixing, channel attention, 3x3 output conv, plus a
/// learned linear 1x1 shortcut from input to output.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvCoder<T> {
    pub input: Conv2d<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub mix: Conv2d<T>,
    pub attention: ChannelAttention<T>,
    pub output: Conv2d<T>,
    pub shortcut: Conv2d<T>,
}

pub type GroupEncoder<T> = ConvCoder<T>;
pub type GroupDecoder<T> = ConvCoder<T>;

pub struct CoderCache<T> {
    x: Tensor<T>,
    pre: Tensor<T>,
    blocks: Vec<ResBlockCache<T>>,
    hidden: Tensor<T>,
    mix_pre: Tensor<T>,
    attention: ChannelAttentionCache<T>,
    attended: Tensor<T>,
}

impl<T: Scalar> ConvCoder<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        width: usize,
        blocks: usize,
        reduction: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            input: Conv2d::new(in_channels, width, 3, 1.0, rng),
            blocks: (0..blocks).map(|_| ResBlock::new(width, rng)).collect(),
            mix: Conv2d::new(width, width, 1, 1.0, rng),
            attention: ChannelAttention::new(width, reduction, rng),
            output: Conv2d::new(width, out_channels, 3, 0.1, rng),
            shortcut: Conv2d::new(in_channels, out_channels, 1, 0.1, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.input.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.output.out_channels
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_channels() {
            return Err(Error::shape(format!(
                "expected {} input channels, got {}",
                self.in_channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let mut h = leaky_relu(&self.input.forward(x));
        for b in &self.blocks {
            h = b.forward(&h);
        }
        let m = leaky_relu(&self.mix.forward(&h));
        let mut y = self.output.forward(&self.attention.forward(&m));
        y.add_assign(&self.shortcut.forward(x));
        Ok(y)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, CoderCache<T>)> {
        self.check(x)?;
        let pre = self.input.forward(x);
        let (hidden, blocks) = blocks_train(&self.blocks, leaky_relu(&pre));
        let mix_pre = self.mix.forward(&hidden);
        let (attended, attention) = self.attention.forward_train(leaky_relu(&mix_pre));
        let mut y = self.output.forward(&attended);
        y.add_assign(&self.shortcut.forward(x));
        Ok((
            y,
            CoderCache {
                x: x.clone(),
                pre,
                blocks,
                hidden,
                mix_pre,
                attention,
                attended,
            },
        ))
    }

    pub fn backward(&self, cache: &CoderCache<T>, grad_out: &Tensor<T>, grad: Option<&mut Self>) -> Tensor<T> {
        let (gi, gb, gm, ga, go, gs) = match grad {
            Some(a) => (
                Some(&mut a.input),
                Some(&mut a.blocks),
                Some(&mut a.mix),
                Some(&mut a.attention),
                Some(&mut a.output),
                Some(&mut a.shortcut),
            ),
            None => (None, None, None, None, None, None),
        };
        let g_att = self.output.backward(&cache.attended, grad_out, go);
        let mut g_mix = self.attention.backward(&cache.attention, &g_att, ga);
        leaky_relu_backward(&cache.mix_pre, &mut g_mix);
        let g_hidden = self.mix.backward(&cache.hidden, &g_mix, gm);
        let mut gh = blocks_backward(&self.blocks, &cache.blocks, g_hidden, gb);
        leaky_relu_backward(&cache.pre, &mut gh);
        let mut gx = self.input.backward(&cache.x, &gh, gi);
        gx.add_assign(&self.shortcut.backward(&cache.x, grad_out, gs));
        gx
    }
}

impl<T: Scalar> Parameterized<T> for ConvCoder<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut v = prefixed("input", self.input.params());
        v.extend(block_params(&self.blocks));
        v.extend(prefixed("mix", self.mix.params()));
        v.extend(prefixed("attention", self.attention.params()));
        v.extend(prefixed("output", self.output.params()));
        v.extend(prefixed("shortcut", self.shortcut.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.input.params_mut();
        v.extend(block_params_mut(&mut self.blocks));
        v.extend(self.mix.params_mut());
        v.extend(self.attention.params_mut());
        v.extend(self.output.params_mut());
        v.extend(self.shortcut.params_mut());
        v
    }
}
