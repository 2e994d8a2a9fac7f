//! Frame-group autoencoder.
//!
//! Low-resolution frames are cleaned, stacked into a channel cube, sliced into
//! overlapping groups and each group is encoded (with optical-flow
//! conditioning) into one latent frame. After super-resolution the latents are
//! decoded back into groups, merged with frame averaging and color-corrected
//! against the input frames.

mod nets;

pub use nets::{CleanTrace, CleaningNet, CoderCache, ConvCoder, GroupDecoder, GroupEncoder};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{conditioning_channels, group_flows, FlowMethod};
use crate::nn::{prefixed, Param, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::{
    check_frame_aligned, extract_groups, merge_backward, merge_tensors, plan_groups, stack, unstack, GroupingPlan, VideoSequence,
    FRAME_CHANNELS,
};

/// Channels of a latent frame; latents look like ordinary RGB frames to a backbone.
pub const LATENT_CHANNELS: usize = 3;

/// Lower bound on the standard deviation divided by in [`color_correct`].
pub const COLOR_EPS: f64 = 1e-6;

/// Flow channels (in pixels) are multiplied by this on entry to the encoder so
/// they sit in roughly the same range as pixel values.
pub const FLOW_INPUT_SCALE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub group_size: usize,
    pub overlap: usize,
    pub cleaning_width: usize,
    pub cleaning_blocks: usize,
    pub cleaning_iterations: usize,
    pub coder_width: usize,
    pub coder_blocks: usize,
    pub reduction: usize,
    pub flow: FlowMethod,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            group_size: 9,
            overlap: 3,
            cleaning_width: 64,
            cleaning_blocks: 5,
            cleaning_iterations: 3,
            coder_width: 64,
            coder_blocks: 2,
            reduction: 4,
            flow: FlowMethod::default(),
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        check_frame_aligned(self.group_size, self.overlap)?;
        plan_groups(self.group_size.max(FRAME_CHANNELS), self.group_size, self.overlap)?;
        if self.cleaning_width == 0 || self.coder_width == 0 {
            return Err(Error::param("network widths must be positive"));
        }
        if self.reduction == 0 || self.reduction > self.coder_width {
            return Err(Error::param(format!(
                "attention reduction {} must be in 1..={}",
                self.reduction, self.coder_width
            )));
        }
        self.flow.validate()
    }

    pub fn plan(&self, frames: usize) -> Result<GroupingPlan> {
        plan_groups(frames * FRAME_CHANNELS, self.group_size, self.overlap)
    }

    pub fn encoder_inputs(&self) -> usize {
        self.group_size + conditioning_channels(self.group_size)
    }
}

/// Cleaning network, group encoder and group decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Codec<T> {
    pub config: CodecConfig,
    pub cleaning: CleaningNet<T>,
    pub encoder: GroupEncoder<T>,
    pub decoder: GroupDecoder<T>,
}

impl<T: Scalar> Codec<T> {
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cleaning = CleaningNet::new(config.cleaning_width, config.cleaning_blocks, &mut rng);
        let encoder = ConvCoder::new(
            config.encoder_inputs(),
            LATENT_CHANNELS,
            config.coder_width,
            config.coder_blocks,
            config.reduction,
            &mut rng,
        );
        let decoder = ConvCoder::new(
            LATENT_CHANNELS,
            config.group_size,
            config.coder_width,
            config.coder_blocks,
            config.reduction,
            &mut rng,
        );
        Ok(Self {
            config,
            cleaning,
            encoder,
            decoder,
        })
    }

    pub fn clean(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        self.cleaning.clean(frame, self.config.cleaning_iterations)
    }

    pub fn compress(&self, lr: &VideoSequence<T>) -> Result<LatentSequence<T>> {
        compress_sequence(lr, self)
    }

    pub fn decompress(
        &self,
        sr_latents: &[Tensor<T>],
        plan: &GroupingPlan,
        lr: &VideoSequence<T>,
        scale: usize,
    ) -> Result<VideoSequence<T>> {
        decompress_sequence(sr_latents, plan, lr, &self.decoder, scale)
    }

    pub fn cast<U: Scalar>(&self) -> Codec<U> {
        let mut out = Codec::<U>::new(self.config.clone(), 0).expect("config already validated");
        for (dst, (_, src)) in out.params_mut().into_iter().zip(self.params()) {
            dst.data = src.data.iter().map(|v| U::of(v.to_f64_lossy())).collect();
        }
        out
    }
}

impl<T: Scalar> Parameterized<T> for Codec<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut v = prefixed("cleaning", self.cleaning.params());
        v.extend(prefixed("encoder", self.encoder.params()));
        v.extend(prefixed("decoder", self.decoder.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.cleaning.params_mut();
        v.extend(self.encoder.params_mut());
        v.extend(self.decoder.params_mut());
        v
    }
}

/// The K latent frames of a clip plus what is needed to undo the grouping.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence<T> {
    pub latents: Vec<Tensor<T>>,
    pub plan: GroupingPlan,
    pub lr_reference: VideoSequence<T>,
}

impl<T: Scalar> LatentSequence<T> {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

fn stats_f64<T: Scalar>(x: &Tensor<T>, c: usize) -> (f64, f64) {
    let p = x.plane(c);
    let n = p.len() as f64;
    let mean = p.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    let var = p.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn check_color_pair<T: Scalar>(sr: &Tensor<T>, reference: &Tensor<T>) -> Result<()> {
    if sr.channels() != FRAME_CHANNELS || reference.channels() != FRAME_CHANNELS {
        return Err(Error::shape(format!(
            "color correction needs RGB frames, got {} and {} channels",
            sr.channels(),
            reference.channels()
        )));
    }
    Ok(())
}

/// Re-normalizes each channel of `sr` to the mean and population standard
/// deviation of the same channel of `reference`:
/// `(x - mean) / max(std, COLOR_EPS) * ref_std + ref_mean`.
pub fn color_correct<T: Scalar>(sr: &Tensor<T>, reference: &Tensor<T>) -> Result<Tensor<T>> {
    check_color_pair(sr, reference)?;
    let mut out = sr.clone();
    for c in 0..FRAME_CHANNELS {
        let (mu, sigma) = stats_f64(sr, c);
        let (mu_r, sigma_r) = stats_f64(reference, c);
        let gain = sigma_r / sigma.max(COLOR_EPS);
        out.plane_mut(c)
            .iter_mut()
            .for_each(|v| *v = T::of((v.to_f64_lossy() - mu) * gain + mu_r));
    }
    Ok(out)
}

/// Gradient of [`color_correct`] with respect to `sr` (the reference is a constant).
pub fn color_correct_backward<T: Scalar>(sr: &Tensor<T>, reference: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut gx = grad_out.clone();
    let n = sr.plane_len() as f64;
    for c in 0..FRAME_CHANNELS {
        let (mu, sigma) = stats_f64(sr, c);
        let (_, sigma_r) = stats_f64(reference, c);
        let d = sigma.max(COLOR_EPS);
        let gain = sigma_r / d;
        let g = grad_out.plane(c);
        let x = sr.plane(c);
        let g_mean = g.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
        let g_dot: f64 = g
            .iter()
            .zip(x)
            .map(|(a, b)| a.to_f64_lossy() * (b.to_f64_lossy() - mu))
            .sum();
        let k = if sigma > COLOR_EPS { sigma_r / (d * d) * g_dot / (n * sigma) } else { 0.0 };
        for (o, (&gi, &xi)) in gx.plane_mut(c).iter_mut().zip(g.iter().zip(x)) {
            let xhat = xi.to_f64_lossy() - mu;
            *o = T::of(gain * (gi.to_f64_lossy() - g_mean) - k * xhat);
        }
    }
    gx
}

fn encoder_input<T: Scalar>(group: &Tensor<T>, flows: &Tensor<T>) -> Result<Tensor<T>> {
    let k = T::of(FLOW_INPUT_SCALE);
    Tensor::concat(&[group, &flows.map(|v| v * k)])
}

/// Encodes one `S`-channel group with its flow conditioning into a latent frame.
pub fn encode_group<T: Scalar>(group: &Tensor<T>, flows: &Tensor<T>, encoder: &GroupEncoder<T>) -> Result<Tensor<T>> {
    let expected = encoder.in_channels() - flows.channels();
    if group.channels() != expected || flows.channels() != conditioning_channels(group.channels()) {
        return Err(Error::shape(format!(
            "encoder takes {} channels; got a {}-channel group with {} flow channels",
            encoder.in_channels(),
            group.channels(),
            flows.channels()
        )));
    }
    encoder.forward(&encoder_input(group, flows)?)
}

/// Decodes a latent frame into an `S`-channel group at the latent's spatial size.
pub fn decode_group<T: Scalar>(latent: &Tensor<T>, decoder: &GroupDecoder<T>) -> Result<Tensor<T>> {
    decoder.forward(latent)
}

fn cleaned_cube<T: Scalar>(frames: Vec<Tensor<T>>, frame_rate: f64) -> Result<crate::video::FrameCube<T>> {
    Ok(stack(&VideoSequence::new(frames, frame_rate)?))
}

pub fn compress_sequence<T: Scalar>(lr: &VideoSequence<T>, codec: &Codec<T>) -> Result<LatentSequence<T>> {
    let cleaned = lr.frames().iter().map(|f| codec.clean(f)).collect::<Result<Vec<_>>>()?;
    let cube = cleaned_cube(cleaned, lr.frame_rate())?;
    let plan = codec.config.plan(lr.len())?;
    let latents = extract_groups(&cube, &plan)?
        .iter()
        .map(|g| encode_group(&g.data, &group_flows(&g.data, codec.config.flow)?, &codec.encoder))
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentSequence {
        latents,
        plan,
        lr_reference: lr.clone(),
    })
}

fn check_decode_inputs<T: Scalar>(
    sr_latents: &[Tensor<T>],
    plan: &GroupingPlan,
    lr: &VideoSequence<T>,
    scale: usize,
) -> Result<()> {
    if sr_latents.len() != plan.group_count {
        return Err(Error::shape(format!(
            "plan has {} groups but {} latents were given",
            plan.group_count,
            sr_latents.len()
        )));
    }
    if lr.len() * FRAME_CHANNELS != plan.total_channels {
        return Err(Error::shape(format!(
            "plan covers {} frames, reference has {}",
            plan.total_channels / FRAME_CHANNELS,
            lr.len()
        )));
    }
    let want = (lr.height() * scale, lr.width() * scale);
    for l in sr_latents {
        if l.spatial() != want {
            return Err(Error::shape(format!(
                "latent is {:?}, expected {want:?} for scale {scale}",
                l.spatial()
            )));
        }
    }
    Ok(())
}

pub fn decompress_sequence<T: Scalar>(
    sr_latents: &[Tensor<T>],
    plan: &GroupingPlan,
    lr: &VideoSequence<T>,
    decoder: &GroupDecoder<T>,
    scale: usize,
) -> Result<VideoSequence<T>> {
    check_decode_inputs(sr_latents, plan, lr, scale)?;
    let groups = sr_latents
        .iter()
        .map(|l| decode_group(l, decoder))
        .collect::<Result<Vec<_>>>()?;
    let merged = unstack(&merge_tensors(&groups.iter().collect::<Vec<_>>(), plan)?, lr.frame_rate())?;
    let frames = merged
        .frames()
        .iter()
        .zip(lr.frames())
        .map(|(f, r)| color_correct(f, r))
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames, lr.frame_rate())
}

/// Forward state of [`compress_train`] needed for backpropagation.
pub struct CompressTrace<T> {
    cleaning: Vec<CleanTrace<T>>,
    encoder: Vec<CoderCache<T>>,
    plan: GroupingPlan,
    frame_shape: (usize, usize, usize),
}

pub fn compress_train<T: Scalar>(
    lr: &VideoSequence<T>,
    codec: &Codec<T>,
) -> Result<(LatentSequence<T>, CompressTrace<T>)> {
    let mut cleaned = Vec::with_capacity(lr.len());
    let mut cleaning = Vec::with_capacity(lr.len());
    for f in lr.frames() {
        let (c, t) = codec.cleaning.clean_train(f, codec.config.cleaning_iterations)?;
        cleaned.push(c);
        cleaning.push(t);
    }
    let cube = cleaned_cube(cleaned, lr.frame_rate())?;
    let plan = codec.config.plan(lr.len())?;
    let mut latents = Vec::with_capacity(plan.group_count);
    let mut encoder = Vec::with_capacity(plan.group_count);
    for g in extract_groups(&cube, &plan)? {
        let flows = group_flows(&g.data, codec.config.flow)?;
        let (l, c) = codec.encoder.forward_train(&encoder_input(&g.data, &flows)?)?;
        latents.push(l);
        encoder.push(c);
    }
    let frame_shape = lr.frames()[0].shape();
    Ok((
        LatentSequence {
            latents,
            plan: plan.clone(),
            lr_reference: lr.clone(),
        },
        CompressTrace {
            cleaning,
            encoder,
            plan,
            frame_shape,
        },
    ))
}

/// Backpropagates latent gradients into the encoder and cleaning network.
/// Flow conditioning is treated as a constant input.
pub fn compress_backward<T: Scalar>(
    codec: &Codec<T>,
    trace: &CompressTrace<T>,
    grad_latents: &[Tensor<T>],
    cleaning_grad: Option<&mut CleaningNet<T>>,
    mut encoder_grad: Option<&mut GroupEncoder<T>>,
) -> Result<()> {
    if grad_latents.len() != trace.encoder.len() {
        return Err(Error::shape("one gradient per latent is required"));
    }
    let plan = &trace.plan;
    let (c, h, w) = trace.frame_shape;
    let mut frame_grads = vec![Tensor::<T>::zeros(c, h, w); plan.total_channels / FRAME_CHANNELS];
    let last_frame = plan.total_channels - FRAME_CHANNELS;
    for ((cache, g), range) in trace.encoder.iter().zip(grad_latents).zip(&plan.group_ranges) {
        let gin = codec.encoder.backward(cache, g, encoder_grad.as_deref_mut());
        if cleaning_grad.is_none() {
            continue;
        }
        for (local, ch) in range.clone().enumerate() {
            let src = if ch < plan.total_channels {
                ch
            } else {
                last_frame + (ch - plan.total_channels) % FRAME_CHANNELS
            };
            let dst = frame_grads[src / FRAME_CHANNELS].plane_mut(src % FRAME_CHANNELS);
            for (d, &s) in dst.iter_mut().zip(gin.plane(local)) {
                *d += s;
            }
        }
    }
    if let Some(acc) = cleaning_grad {
        for (t, g) in trace.cleaning.iter().zip(&frame_grads) {
            codec.cleaning.clean_backward(t, g, Some(acc));
        }
    }
    Ok(())
}

/// Forward state of [`decompress_train`].
pub struct DecompressTrace<T> {
    decoder: Vec<CoderCache<T>>,
    merged: Vec<Tensor<T>>,
    references: Vec<Tensor<T>>,
    plan: GroupingPlan,
}

pub fn decompress_train<T: Scalar>(
    sr_latents: &[Tensor<T>],
    plan: &GroupingPlan,
    lr: &VideoSequence<T>,
    decoder: &GroupDecoder<T>,
    scale: usize,
) -> Result<(VideoSequence<T>, DecompressTrace<T>)> {
    check_decode_inputs(sr_latents, plan, lr, scale)?;
    let mut groups = Vec::with_capacity(sr_latents.len());
    let mut caches = Vec::with_capacity(sr_latents.len());
    for l in sr_latents {
        let (g, c) = decoder.forward_train(l)?;
        groups.push(g);
        caches.push(c);
    }
    let merged = unstack(&merge_tensors(&groups.iter().collect::<Vec<_>>(), plan)?, lr.frame_rate())?.into_frames();
    let frames = merged
        .iter()
        .zip(lr.frames())
        .map(|(f, r)| color_correct(f, r))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        VideoSequence::new(frames, lr.frame_rate())?,
        DecompressTrace {
            decoder: caches,
            merged,
            references: lr.frames().to_vec(),
            plan: plan.clone(),
        },
    ))
}

/// Backpropagates output-frame gradients through color correction, frame
/// averaging and the decoder; returns the gradient for every SR latent.
pub fn decompress_backward<T: Scalar>(
    decoder: &GroupDecoder<T>,
    trace: &DecompressTrace<T>,
    grad_frames: &[Tensor<T>],
    mut decoder_grad: Option<&mut GroupDecoder<T>>,
) -> Result<Vec<Tensor<T>>> {
    if grad_frames.len() != trace.merged.len() {
        return Err(Error::shape("one gradient per output frame is required"));
    }
    let pre: Vec<Tensor<T>> = trace
        .merged
        .iter()
        .zip(&trace.references)
        .zip(grad_frames)
        .map(|((m, r), g)| color_correct_backward(m, r, g))
        .collect();
    let cube = Tensor::concat(&pre.iter().collect::<Vec<_>>())?;
    Ok(merge_backward(&cube, &trace.plan)
        .iter()
        .zip(&trace.decoder)
        .map(|(g, c)| decoder.backward(c, g, decoder_grad.as_deref_mut()))
        .collect())
}
