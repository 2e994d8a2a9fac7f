//! Procedural video clips: drifting colored sinusoid textures with soft moving
//! shapes on top. Every clip is a pure function of its seed.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::{make_lr, mix_dataset, Compressor, DegradeConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::VideoSequence;

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: [f64; 3],
}

struct Blob {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    radius: f64,
    softness: f64,
    square: bool,
    color: [f64; 3],
}

/// One `frames`-frame clip of `size x size` pixels.
pub fn synth_clip<T: Scalar>(seed: u64, frames: usize, size: usize) -> Result<VideoSequence<T>> {
    if frames == 0 || size == 0 {
        return Err(Error::param("clip needs at least one frame and one pixel"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let base: [f64; 3] = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
    let waves: Vec<Wave> = (0..3)
        .map(|_| {
            let period = rng.gen_range(0.18..0.6) * s;
            let angle = rng.gen_range(0.0..TAU);
            Wave {
                fx: angle.cos() / period,
                fy: angle.sin() / period,
                phase: rng.gen_range(0.0..TAU),
                amp: [rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12)],
            }
        })
        .collect();
    let drift = (rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0));
    let blobs: Vec<Blob> = (0..rng.gen_range(2..4))
        .map(|_| Blob {
            cx: rng.gen_range(0.15..0.85) * s,
            cy: rng.gen_range(0.15..0.85) * s,
            vx: rng.gen_range(-10.0..10.0),
            vy: rng.gen_range(-10.0..10.0),
            radius: rng.gen_range(0.08..0.22) * s,
            softness: rng.gen_range(0.8..2.5),
            square: rng.gen_bool(0.4),
            color: [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)],
        })
        .collect();
    let out = (0..frames)
        .map(|t| {
            let t = t as f64;
            let mut f = Tensor::from_fn(3, size, size, |c, y, x| {
                let (px, py) = (x as f64 - drift.0 * t, y as f64 - drift.1 * t);
                base[c]
                    + waves
                        .iter()
                        .map(|w| w.amp[c] * (TAU * (w.fx * px + w.fy * py) + w.phase).sin())
                        .sum::<f64>()
            });
            for b in &blobs {
                let (cx, cy) = (b.cx + b.vx * t, b.cy + b.vy * t);
                for y in 0..size {
                    for x in 0..size {
                        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                        let d = if b.square { dx.abs().max(dy.abs()) } else { dx.hypot(dy) };
                        let alpha = 1.0 / (1.0 + ((d - b.radius) / b.softness).exp());
                        for c in 0..3 {
                            let v = f.at(c, y, x);
                            f.set(c, y, x, v * (1.0 - alpha) + b.color[c] * alpha);
                        }
                    }
                }
            }
            f.map(|v| v.clamp(0.0, 1.0)).cast::<T>()
        })
        .collect();
    VideoSequence::new(out, 25.0)
}

/// A training or evaluation sample.
#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub id: String,
    pub hr: VideoSequence<T>,
    /// Degraded input (blurred, decimated, possibly compressed).
    pub lr: VideoSequence<T>,
    /// Blurred and decimated only.
    pub lr_clean: VideoSequence<T>,
    pub crf: u32,
}

#[derive(Clone, Debug)]
pub struct CorpusSpec {
    pub clips: usize,
    pub frames: usize,
    pub size: usize,
    pub degrade: DegradeConfig,
    pub fraction_compressed: f64,
    pub crf_set: Vec<u32>,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            clips: 16,
            frames: 7,
            size: 64,
            degrade: DegradeConfig {
                compressor: Compressor::DctProxy,
                ..DegradeConfig::default()
            },
            fraction_compressed: 0.5,
            crf_set: vec![15, 25, 35],
            seed: 0,
        }
    }
}

/// Generates clips and degrades them with a seeded CRF mix.
pub fn synth_corpus<T: Scalar>(spec: &CorpusSpec) -> Result<Vec<Sample<T>>> {
    let clips = (0..spec.clips)
        .map(|i| {
            let id = format!("synth-{:04}-{i:03}", spec.seed);
            let hr = synth_clip::<T>(spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64), spec.frames, spec.size)?;
            Ok((id, hr))
        })
        .collect::<Result<Vec<_>>>()?;
    degrade_clips(clips, &spec.degrade, spec.fraction_compressed, &spec.crf_set, spec.seed)
}

/// Turns high-resolution clips into samples, compressing a seeded fraction of
/// them at CRFs drawn from `crf_set`. `degrade.crf` is ignored.
pub fn degrade_clips<T: Scalar>(
    clips: Vec<(String, VideoSequence<T>)>,
    degrade: &DegradeConfig,
    fraction_compressed: f64,
    crf_set: &[u32],
    seed: u64,
) -> Result<Vec<Sample<T>>> {
    let ids: Vec<String> = clips.iter().map(|(id, _)| id.clone()).collect();
    let mix = mix_dataset(&ids, fraction_compressed, crf_set, seed)?;
    clips
        .into_iter()
        .zip(mix)
        .map(|((id, hr), m)| {
            let cfg = DegradeConfig {
                crf: m.crf,
                ..degrade.clone()
            };
            let d = make_lr(&hr, &cfg)?;
            Ok(Sample {
                id,
                hr,
                lr: d.sequence,
                lr_clean: d.uncompressed,
                crf: m.crf,
            })
        })
        .collect()
}
