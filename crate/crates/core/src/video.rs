//! Frame stacking and overlapped channel grouping.
//!
//! A sequence of `N` RGB frames is stacked into a cube of `3N` channels. The
//! cube is then cut into `K` windows of `S` channels where neighbouring
//! windows share `O` channels. Windows start at multiples of `S - O`; when the
//! last window would run past the end of the cube, the final frame is
//! replicated until it fits. Merging divides each channel by the number of
//! windows that contain it.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Color channels per frame.
pub const FRAME_CHANNELS: usize = 3;

/// Ordered frames sharing one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence<T> {
    frames: Vec<Tensor<T>>,
    frame_rate: f64,
}

impl<T: Scalar> VideoSequence<T> {
    pub fn new(frames: Vec<Tensor<T>>, frame_rate: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::input("a video sequence needs at least one frame"))?;
        if first.channels() != FRAME_CHANNELS {
            return Err(Error::shape(format!(
                "frames must have {FRAME_CHANNELS} channels, got {}",
                first.channels()
            )));
        }
        let shape = first.shape();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != shape) {
            return Err(Error::shape(format!(
                "frame {i} has shape {:?}, expected {shape:?}",
                f.shape()
            )));
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn frames(&self) -> &[Tensor<T>] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Tensor<T>> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn cast<U: Scalar>(&self) -> VideoSequence<U> {
        VideoSequence {
            frames: self.frames.iter().map(Tensor::cast).collect(),
            frame_rate: self.frame_rate,
        }
    }

    /// Applies `f` to every frame; the results must again form a sequence.
    pub fn try_map(&self, mut f: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>) -> Result<Self> {
        let frames = self.frames.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Self::new(frames, self.frame_rate)
    }
}

/// Frames concatenated along the channel axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameCube<T> {
    channels: Tensor<T>,
    source_frames: usize,
}

impl<T: Scalar> FrameCube<T> {
    pub fn new(channels: Tensor<T>) -> Result<Self> {
        if channels.channels() == 0 || channels.channels() % FRAME_CHANNELS != 0 {
            return Err(Error::shape(format!(
                "cube channel count {} is not a positive multiple of {FRAME_CHANNELS}",
                channels.channels()
            )));
        }
        let source_frames = channels.channels() / FRAME_CHANNELS;
        Ok(Self {
            channels,
            source_frames,
        })
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.channels
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.channels()
    }

    pub fn source_frames(&self) -> usize {
        self.source_frames
    }
}

/// Window layout over a stacked cube.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingPlan {
    pub group_size: usize,
    pub overlap: usize,
    pub group_count: usize,
    pub group_ranges: Vec<Range<usize>>,
    /// Replicated trailing channels appended to the cube before slicing.
    pub pad_channels: usize,
    /// How many windows contain each (padded) channel.
    pub encode_counts: Vec<usize>,
    /// Channel count of the unpadded cube.
    pub total_channels: usize,
}

impl GroupingPlan {
    pub fn padded_channels(&self) -> usize {
        self.total_channels + self.pad_channels
    }

    pub fn frames_per_group(&self) -> usize {
        self.group_size / FRAME_CHANNELS
    }
}

/// Rejects group sizes and overlaps that would split a frame.
pub fn check_frame_aligned(group_size: usize, overlap: usize) -> Result<()> {
    if group_size % FRAME_CHANNELS != 0 || overlap % FRAME_CHANNELS != 0 {
        return Err(Error::param(format!(
            "group size {group_size} and overlap {overlap} must be multiples of {FRAME_CHANNELS}"
        )));
    }
    Ok(())
}

/// Lays out `S`-channel windows with `O` shared channels over `total_channels`.
/// Any channel counts are accepted; video callers also need
/// [`check_frame_aligned`].
pub fn plan_groups(total_channels: usize, group_size: usize, overlap: usize) -> Result<GroupingPlan> {
    if group_size <= overlap {
        return Err(Error::param(format!(
            "group size {group_size} must exceed overlap {overlap}"
        )));
    }
    if total_channels < FRAME_CHANNELS {
        return Err(Error::input(format!(
            "channel count {total_channels} is below one frame ({FRAME_CHANNELS})"
        )));
    }
    let stride = group_size - overlap;
    let group_count = if total_channels <= group_size {
        1
    } else {
        (total_channels - group_size).div_ceil(stride) + 1
    };
    let padded = (group_count - 1) * stride + group_size;
    let group_ranges: Vec<Range<usize>> = (0..group_count)
        .map(|k| k * stride..k * stride + group_size)
        .collect();
    let mut encode_counts = vec![0usize; padded];
    for r in &group_ranges {
        for c in r.clone() {
            encode_counts[c] += 1;
        }
    }
    Ok(GroupingPlan {
        group_size,
        overlap,
        group_count,
        group_ranges,
        pad_channels: padded - total_channels,
        encode_counts,
        total_channels,
    })
}

/// One window of a cube.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelGroup<T> {
    pub data: Tensor<T>,
    pub plan_index: usize,
    /// Source frame indices covered, after clamping padded frames to the last real one.
    pub frame_indices: Range<usize>,
}

/// Concatenates frames along the channel axis.
pub fn stack<T: Scalar>(seq: &VideoSequence<T>) -> FrameCube<T> {
    let parts: Vec<&Tensor<T>> = seq.frames().iter().collect();
    let channels = Tensor::concat(&parts).expect("sequence frames share a shape");
    FrameCube {
        channels,
        source_frames: seq.len(),
    }
}

/// Splits a cube back into frames.
pub fn unstack<T: Scalar>(cube: &FrameCube<T>, frame_rate: f64) -> Result<VideoSequence<T>> {
    let t = cube.data();
    if t.channels() % FRAME_CHANNELS != 0 {
        return Err(Error::shape(format!(
            "{} channels do not form whole frames",
            t.channels()
        )));
    }
    let frames = (0..t.channels() / FRAME_CHANNELS)
        .map(|i| t.slice_channels(i * FRAME_CHANNELS, (i + 1) * FRAME_CHANNELS))
        .collect();
    VideoSequence::new(frames, frame_rate)
}

/// Slices a cube into the windows of `plan`, replicating the last frame as padding.
pub fn extract_groups<T: Scalar>(
    cube: &FrameCube<T>,
    plan: &GroupingPlan,
) -> Result<Vec<ChannelGroup<T>>> {
    if cube.channel_count() != plan.total_channels {
        return Err(Error::shape(format!(
            "plan was built for {} channels, cube has {}",
            plan.total_channels,
            cube.channel_count()
        )));
    }
    let t = cube.data();
    let n = t.plane_len();
    let last_frame = plan.total_channels - FRAME_CHANNELS;
    let source = |c: usize| -> usize {
        if c < plan.total_channels {
            c
        } else {
            last_frame + (c - plan.total_channels) % FRAME_CHANNELS
        }
    };
    let frame_count = plan.total_channels / FRAME_CHANNELS;
    Ok(plan
        .group_ranges
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let mut data = Vec::with_capacity(plan.group_size * n);
            for c in r.clone() {
                data.extend_from_slice(t.plane(source(c)));
            }
            let first = (r.start / FRAME_CHANNELS).min(frame_count - 1);
            let last = (r.end / FRAME_CHANNELS).min(frame_count);
            ChannelGroup {
                data: Tensor::from_vec(plan.group_size, t.height(), t.width(), data)
                    .expect("group buffer sized from plan"),
                plan_index: k,
                frame_indices: first..last,
            }
        })
        .collect())
}

/// Reassembles windows into a cube, averaging channels covered more than once.
///
/// Groups may have a different spatial size than the cube they were cut from
/// (they are merged again after super-resolution); all groups must agree.
pub fn merge_groups<T: Scalar>(groups: &[ChannelGroup<T>], plan: &GroupingPlan) -> Result<FrameCube<T>> {
    let tensors: Vec<&Tensor<T>> = groups.iter().map(|g| &g.data).collect();
    merge_tensors(&tensors, plan)
}

pub(crate) fn merge_tensors<T: Scalar>(groups: &[&Tensor<T>], plan: &GroupingPlan) -> Result<FrameCube<T>> {
    if groups.len() != plan.group_count {
        return Err(Error::shape(format!(
            "expected {} groups, got {}",
            plan.group_count,
            groups.len()
        )));
    }
    let (h, w) = groups[0].spatial();
    for g in groups {
        if g.shape() != (plan.group_size, h, w) {
            return Err(Error::shape(format!(
                "group shape {:?} does not match ({}, {h}, {w})",
                g.shape(),
                plan.group_size
            )));
        }
    }
    let mut out = Tensor::zeros(plan.total_channels, h, w);
    // running mean, so identical copies merge back bit for bit
    let mut seen = vec![0usize; plan.total_channels];
    for (g, r) in groups.iter().zip(&plan.group_ranges) {
        for (local, c) in r.clone().enumerate() {
            if c >= plan.total_channels {
                continue;
            }
            let src = g.plane(local);
            seen[c] += 1;
            if seen[c] == 1 {
                out.plane_mut(c).copy_from_slice(src);
            } else {
                let k = T::of(seen[c] as f64);
                for (o, &s) in out.plane_mut(c).iter_mut().zip(src) {
                    *o += (s - *o) / k;
                }
            }
        }
    }
    FrameCube::new(out)
}

/// Gradient of [`merge_tensors`]: routes each channel's gradient to every
/// window copy, divided by its encode count.
pub(crate) fn merge_backward<T: Scalar>(grad_cube: &Tensor<T>, plan: &GroupingPlan) -> Vec<Tensor<T>> {
    let (h, w) = grad_cube.spatial();
    plan.group_ranges
        .iter()
        .map(|r| {
            let mut g = Tensor::zeros(plan.group_size, h, w);
            for (local, c) in r.clone().enumerate() {
                if c >= plan.total_channels {
                    continue;
                }
                let k = T::of(plan.encode_counts[c] as f64);
                for (o, &s) in g.plane_mut(local).iter_mut().zip(grad_cube.plane(c)) {
                    *o = s / k;
                }
            }
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_frame(v: f64, h: usize, w: usize) -> Tensor<f64> {
        Tensor::filled(3, h, w, v)
    }

    fn ramp_sequence(n: usize, h: usize, w: usize) -> VideoSequence<f64> {
        let frames = (0..n)
            .map(|t| Tensor::from_fn(3, h, w, |c, y, x| ((t * 31 + c * 7 + y * 3 + x) % 97) as f64 / 97.0))
            .collect();
        VideoSequence::new(frames, 25.0).unwrap()
    }

    #[test]
    fn stack_shapes_and_order() {
        let seq = ramp_sequence(7, 64, 64);
        assert_eq!(stack(&seq).data().shape(), (21, 64, 64));

        let one = ramp_sequence(1, 5, 4);
        assert_eq!(stack(&one).data(), &one.frames()[0]);

        let two = VideoSequence::new(vec![constant_frame(0.0, 2, 2), constant_frame(1.0, 2, 2)], 1.0).unwrap();
        let cube = stack(&two);
        for c in 0..3 {
            assert!(cube.data().plane(c).iter().all(|&v| v == 0.0));
            assert!(cube.data().plane(c + 3).iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn mismatched_frames_rejected() {
        let err = VideoSequence::new(vec![constant_frame(0.0, 2, 2), constant_frame(0.0, 2, 3)], 1.0);
        assert!(matches!(err, Err(Error::Shape(_))));
        assert!(matches!(VideoSequence::<f64>::new(vec![], 1.0), Err(Error::Input(_))));
    }

    #[test]
    fn plan_default_seven_frames() {
        let p = plan_groups(21, 9, 3).unwrap();
        assert_eq!(p.group_ranges, vec![0..9, 6..15, 12..21]);
        assert_eq!(p.group_count, 3);
        assert_eq!(p.pad_channels, 0);
        for (c, &n) in p.encode_counts.iter().enumerate() {
            let expected = if (6..9).contains(&c) || (12..15).contains(&c) { 2 } else { 1 };
            assert_eq!(n, expected, "channel {c}");
        }
    }

    #[test]
    fn plan_single_and_exact_fit() {
        let p = plan_groups(9, 9, 3).unwrap();
        assert_eq!(p.group_ranges, vec![0..9]);
        let p = plan_groups(27, 9, 3).unwrap();
        assert_eq!(p.group_ranges, vec![0..9, 6..15, 12..21, 18..27]);
        assert_eq!(p.pad_channels, 0);
    }

    #[test]
    fn plan_pads_non_divisible_lengths() {
        let p = plan_groups(24, 9, 3).unwrap();
        assert_eq!(p.pad_channels, 3);
        assert_eq!(p.group_count, 4);
        assert_eq!(p.group_ranges.last().unwrap().end, 27);
        // shorter than one window
        let p = plan_groups(3, 9, 3).unwrap();
        assert_eq!((p.group_count, p.pad_channels), (1, 6));
    }

    #[test]
    fn plan_parameter_errors() {
        assert!(matches!(plan_groups(21, 9, 9), Err(Error::Parameter(_))));
        assert!(matches!(plan_groups(21, 6, 9), Err(Error::Parameter(_))));
        assert!(matches!(check_frame_aligned(8, 2), Err(Error::Parameter(_))));
        assert!(check_frame_aligned(9, 3).is_ok());
        assert!(matches!(plan_groups(0, 9, 3), Err(Error::Input(_))));
        assert!(matches!(plan_groups(2, 9, 3), Err(Error::Input(_))));
        let p = plan_groups(20, 8, 2).unwrap();
        assert_eq!(p.group_ranges, vec![0..8, 6..14, 12..20]);
    }

    #[test]
    fn extract_slices_and_pads() {
        let seq = ramp_sequence(7, 4, 5);
        let cube = stack(&seq);
        let plan = plan_groups(21, 9, 3).unwrap();
        let groups = extract_groups(&cube, &plan).unwrap();
        assert_eq!(groups.len(), 3);
        for c in 6..9 {
            assert_eq!(groups[1].data.plane(c - 6), cube.data().plane(c));
            assert_eq!(groups[0].data.plane(c), groups[1].data.plane(c - 6));
        }
        assert_eq!(groups[1].frame_indices, 2..5);

        let single = plan_groups(9, 9, 3).unwrap();
        let cube3 = stack(&ramp_sequence(3, 4, 5));
        assert_eq!(extract_groups(&cube3, &single).unwrap()[0].data, *cube3.data());

        let cube8 = stack(&ramp_sequence(8, 4, 5));
        let padded = plan_groups(24, 9, 3).unwrap();
        let g = extract_groups(&cube8, &padded).unwrap();
        let last = g.last().unwrap();
        for c in 0..3 {
            assert_eq!(last.data.plane(6 + c), cube8.data().plane(21 + c));
        }
        assert_eq!(last.frame_indices, 6..8);

        assert!(extract_groups(&cube8, &plan).is_err());
    }

    #[test]
    fn merge_averages_overlaps() {
        let plan = plan_groups(21, 9, 3).unwrap();
        let mut groups: Vec<ChannelGroup<f64>> = (0..3)
            .map(|k| ChannelGroup {
                data: Tensor::filled(9, 2, 2, 0.7),
                plan_index: k,
                frame_indices: 0..1,
            })
            .collect();
        groups[0].data.plane_mut(6).fill(0.4);
        groups[1].data.plane_mut(0).fill(0.6);
        let cube = merge_groups(&groups, &plan).unwrap();
        assert!((cube.data().at(6, 0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(cube.data().at(0, 0, 0), 0.7);
        assert_eq!(cube.data().at(7, 1, 1), 0.7);
        assert!(merge_groups(&groups[..2], &plan).is_err());
    }

    #[test]
    fn merge_drops_padding() {
        let seq = ramp_sequence(8, 3, 3);
        let plan = plan_groups(24, 9, 3).unwrap();
        let groups = extract_groups(&stack(&seq), &plan).unwrap();
        let merged = merge_groups(&groups, &plan).unwrap();
        assert_eq!(merged.channel_count(), 24);
        assert_eq!(unstack(&merged, 25.0).unwrap(), seq);
    }

    #[test]
    fn unstack_errors_and_identity() {
        let seq = ramp_sequence(7, 3, 3);
        let back = unstack(&stack(&seq), 25.0).unwrap();
        assert_eq!(back.len(), 7);
        assert_eq!(back, seq);
        assert!(FrameCube::new(Tensor::<f64>::zeros(4, 2, 2)).is_err());
    }

    #[test]
    fn merge_backward_is_adjoint() {
        // <merge(g), c> == <g, merge_backward(c)>
        let plan = plan_groups(24, 9, 3).unwrap();
        let groups: Vec<Tensor<f64>> = (0..plan.group_count)
            .map(|k| Tensor::from_fn(9, 2, 3, |c, y, x| ((k * 13 + c * 5 + y * 2 + x) % 11) as f64 - 5.0))
            .collect();
        let refs: Vec<&Tensor<f64>> = groups.iter().collect();
        let merged = merge_tensors(&refs, &plan).unwrap().into_tensor();
        let probe = Tensor::from_fn(24, 2, 3, |c, y, x| ((c * 7 + y + x * 3) % 5) as f64 - 2.0);
        let lhs: f64 = merged.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let back = merge_backward(&probe, &plan);
        let rhs: f64 = groups
            .iter()
            .zip(&back)
            .map(|(g, b)| g.data().iter().zip(b.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
