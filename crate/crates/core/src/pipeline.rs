//! End-to-end inference and the reference baselines it is measured against.

use crate::backbone::{super_resolve, Backbone, IdentityBackbone};
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::metrics::psnr_y;
use crate::nn::bicubic_resize;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::{check_frame_aligned, extract_groups, merge_tensors, plan_groups, stack, unstack, VideoSequence, FRAME_CHANNELS};

/// Exact matches are scored as this many dB when averaging.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Compress, super-resolve the latents, decode, merge and color-correct.
pub fn run_pipeline<T: Scalar>(
    codec: &Codec<T>,
    backbone: &dyn Backbone<T>,
    lr: &VideoSequence<T>,
    scale: usize,
) -> Result<VideoSequence<T>> {
    let latents = codec.compress(lr)?;
    let sr = super_resolve(&latents, backbone, scale)?;
    codec.decompress(&sr, &latents.plan, lr, scale)
}

/// The codec's own reconstruction at input resolution.
pub fn roundtrip<T: Scalar>(codec: &Codec<T>, lr: &VideoSequence<T>) -> Result<VideoSequence<T>> {
    run_pipeline(codec, &IdentityBackbone, lr, 1)
}

/// Grouping without learning: every group becomes its mean frame repeated
/// `S/3` times, then groups are merged with overlap averaging.
pub fn group_mean_baseline<T: Scalar>(lr: &VideoSequence<T>, group_size: usize, overlap: usize) -> Result<VideoSequence<T>> {
    check_frame_aligned(group_size, overlap)?;
    let plan = plan_groups(lr.len() * FRAME_CHANNELS, group_size, overlap)?;
    let groups: Vec<Tensor<T>> = extract_groups(&stack(lr), &plan)?
        .iter()
        .map(|g| group_mean_replicated(&g.data))
        .collect::<Result<_>>()?;
    unstack(&merge_tensors(&groups.iter().collect::<Vec<_>>(), &plan)?, lr.frame_rate())
}

/// The channelwise mean frame of an `S`-channel group, repeated to `S` channels.
pub fn group_mean_replicated<T: Scalar>(group: &Tensor<T>) -> Result<Tensor<T>> {
    let s = group.channels();
    if s == 0 || s % FRAME_CHANNELS != 0 {
        return Err(Error::shape(format!("group of {s} channels is not whole frames")));
    }
    let f = s / FRAME_CHANNELS;
    let k = T::of(f as f64);
    let mean = Tensor::from_fn(FRAME_CHANNELS, group.height(), group.width(), |c, y, x| {
        (0..f).map(|i| group.at(i * FRAME_CHANNELS + c, y, x)).sum::<T>() / k
    });
    Tensor::concat(&vec![&mean; f])
}

/// Bicubic upsampling of every frame.
pub fn bicubic_sequence<T: Scalar>(lr: &VideoSequence<T>, scale: usize) -> Result<VideoSequence<T>> {
    let (h, w) = (lr.height() * scale, lr.width() * scale);
    VideoSequence::new(lr.frames().iter().map(|f| bicubic_resize(f, h, w)).collect(), lr.frame_rate())
}

/// Mean luma PSNR over frames, exact matches counted as [`PSNR_CAP_DB`].
pub fn mean_psnr<T: Scalar>(pred: &VideoSequence<T>, gt: &VideoSequence<T>) -> Result<f64> {
    crate::metrics::mean_psnr_y(pred.frames(), gt.frames(), PSNR_CAP_DB)
}

/// Mean of [`mean_psnr`] over several clips.
pub fn mean_over_clips(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Luma PSNR of one group reconstruction against the group itself.
pub fn group_psnr<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    pred.ensure_same_shape(gt, "group psnr")?;
    let f = gt.channels() / FRAME_CHANNELS;
    let mut total = 0.0;
    for i in 0..f {
        let (a, b) = (i * FRAME_CHANNELS, (i + 1) * FRAME_CHANNELS);
        total += psnr_y(&pred.slice_channels(a, b), &gt.slice_channels(a, b))?.min(PSNR_CAP_DB);
    }
    Ok(total / f as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BicubicBackbone;
    use crate::codec::CodecConfig;
    use crate::flow::FlowMethod;
    use crate::synth::synth_clip;

    #[test]
    fn static_clip_baseline_is_exact() {
        let f = synth_clip::<f64>(1, 1, 16).unwrap().frames()[0].clone();
        let lr = VideoSequence::new(vec![f; 5], 1.0).unwrap();
        let b = group_mean_baseline(&lr, 9, 3).unwrap();
        for (a, b) in b.frames().iter().zip(lr.frames()) {
            assert!(a.max_abs_diff(b) < 1e-9);
        }
    }

    #[test]
    fn mean_replication_layout() {
        let g = Tensor::<f64>::from_fn(6, 2, 2, |c, _, _| c as f64);
        let m = group_mean_replicated(&g).unwrap();
        assert_eq!(m.at(0, 0, 0), 1.5);
        assert_eq!(m.at(5, 1, 1), 3.5);
        assert!(group_mean_replicated(&Tensor::<f64>::zeros(4, 2, 2)).is_err());
    }

    #[test]
    fn pipeline_shapes() {
        let cfg = CodecConfig {
            cleaning_width: 4,
            cleaning_blocks: 1,
            coder_width: 8,
            coder_blocks: 1,
            flow: FlowMethod::Zero,
            ..CodecConfig::default()
        };
        let codec = Codec::<f32>::new(cfg, 1).unwrap();
        let lr = synth_clip::<f32>(2, 7, 12).unwrap();
        let sr = run_pipeline(&codec, &BicubicBackbone { scale: 4 }, &lr, 4).unwrap();
        assert_eq!(sr.len(), 7);
        assert_eq!(sr.frames()[0].shape(), (3, 48, 48));
        assert_eq!(roundtrip(&codec, &lr).unwrap().frames()[0].shape(), (3, 12, 12));
        assert!(run_pipeline(&codec, &BicubicBackbone { scale: 2 }, &lr, 4).is_err());
        assert_eq!(bicubic_sequence(&lr, 2).unwrap().width(), 24);
        assert_eq!(mean_psnr(&lr, &lr).unwrap(), PSNR_CAP_DB);
    }
}
