//! Inference latency with and without frame compression.
//!
//! Each cell times the whole path a user would run: raw frames straight into
//! the backbone (off), or compress, backbone on latents, decompress (on).
//! Runs are strictly serial; on and off repetitions of the same cell are
//! interleaved so slow drift in machine load hits both equally.

use std::cell::Cell;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{backbone_invocation_count, Backbone, BackboneSpec, ToyConfig};
use crate::codec::{Codec, CodecConfig};
use crate::error::{Error, Result};
use crate::pipeline::run_pipeline;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::{VideoSequence, FRAME_CHANNELS};

/// IQR over median above which a cell is flagged unstable.
pub const UNSTABLE_RATIO: f64 = 0.2;

pub const PROTOCOL: &str = "single worker, cells run serially; 1 untimed warm-up per mode, then R timed \
repetitions with on/off interleaved; monotonic clock around the full path; uniform-noise input clips; \
median and interquartile range reported";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchScenario {
    pub frame_counts: Vec<usize>,
    /// Square input side lengths in pixels.
    pub resolutions: Vec<usize>,
    pub repetitions: usize,
    pub backbone: BackboneSpec,
    pub toy: ToyConfig,
    pub codec: CodecConfig,
    /// Which modes to time: `true` is compression on.
    pub compression: Vec<bool>,
    pub seed: u64,
    /// Cells whose estimated working set exceeds this are recorded as failed
    /// instead of run.
    pub memory_limit_mb: usize,
}

impl Default for BenchScenario {
    fn default() -> Self {
        Self {
            frame_counts: vec![10, 50, 100, 200],
            resolutions: vec![64, 96, 128, 160, 192, 224],
            repetitions: 5,
            backbone: BackboneSpec::new("toy", 4),
            toy: ToyConfig::default(),
            codec: CodecConfig::default(),
            compression: vec![false, true],
            seed: 0,
            memory_limit_mb: 2048,
        }
    }
}

impl BenchScenario {
    pub fn validate(&self) -> Result<()> {
        if self.frame_counts.is_empty() || self.resolutions.is_empty() || self.compression.is_empty() {
            return Err(Error::param("bench grid has an empty axis"));
        }
        if self.frame_counts.contains(&0) || self.resolutions.contains(&0) {
            return Err(Error::param("frame counts and resolutions must be positive"));
        }
        if self.repetitions < 3 {
            return Err(Error::param(format!("need at least 3 repetitions, got {}", self.repetitions)));
        }
        self.backbone.validate()?;
        self.codec.validate()
    }

    /// Rough peak bytes for one run of a cell at 4-byte scalars.
    pub fn estimated_bytes(&self, frames: usize, resolution: usize, compression: bool) -> usize {
        let px = resolution * resolution;
        let hr = px * self.backbone.scale * self.backbone.scale;
        let width = self.toy.width.max(self.codec.coder_width).max(self.codec.cleaning_width);
        let per_frame = FRAME_CHANNELS * (px + 2 * hr) + if compression { 4 * hr } else { 0 };
        4 * (frames * per_frame + 4 * width * hr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Unstable,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub frames: usize,
    pub resolution: usize,
    pub compression: bool,
    pub median_ms: f64,
    pub iqr_ms: f64,
    pub invocations: usize,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchResults {
    pub protocol: String,
    pub cells: Vec<BenchCell>,
}

impl BenchResults {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frames,resolution,compression,median_ms,iqr_ms,invocations,status\n");
        for c in &self.cells {
            let status = match c.status {
                CellStatus::Ok => "ok",
                CellStatus::Unstable => "unstable",
                CellStatus::Failed => "failed",
            };
            let _ = writeln!(
                out,
                "{},{},{},{:.3},{:.3},{},{}",
                c.frames,
                c.resolution,
                if c.compression { "on" } else { "off" },
                c.median_ms,
                c.iqr_ms,
                c.invocations,
                status
            );
        }
        out
    }

    pub fn cell(&self, frames: usize, resolution: usize, compression: bool) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.frames == frames && c.resolution == resolution && c.compression == compression)
    }
}

/// Median and interquartile range with linear interpolation between order statistics.
pub fn median_iqr(samples: &[f64]) -> (f64, f64) {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        if v.is_empty() {
            return f64::NAN;
        }
        let pos = p * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    (q(0.5), q(0.75) - q(0.25))
}

/// Counts frames passed through the wrapped backbone.
struct Counting<'a, T: Scalar> {
    inner: &'a dyn Backbone<T>,
    calls: Cell<usize>,
}

impl<T: Scalar> Backbone<T> for Counting<'_, T> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn scale(&self) -> usize {
        self.inner.scale()
    }

    fn upscale_frame(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.upscale_frame(frame)
    }
}

pub fn noise_clip<T: Scalar>(frames: usize, resolution: usize, seed: u64) -> Result<VideoSequence<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..frames)
        .map(|_| {
            let data = (0..FRAME_CHANNELS * resolution * resolution).map(|_| T::of(rng.gen())).collect();
            Tensor::from_vec(FRAME_CHANNELS, resolution, resolution, data)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(out, 25.0)
}

fn run_once<T: Scalar>(
    codec: &Codec<T>,
    backbone: &Counting<'_, T>,
    clip: &VideoSequence<T>,
    compression: bool,
) -> Result<(f64, usize)> {
    backbone.calls.set(0);
    let scale = backbone.scale();
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        let start = Instant::now();
        let out = if compression {
            run_pipeline(codec, backbone, clip, scale)?
        } else {
            VideoSequence::new(
                clip.frames().iter().map(|f| backbone.upscale_frame(f)).collect::<Result<_>>()?,
                clip.frame_rate(),
            )?
        };
        let ms = start.elapsed().as_secs_f64() * 1e3;
        if out.len() != clip.len() {
            return Err(Error::Shape(format!("{} frames in, {} out", clip.len(), out.len())));
        }
        Ok(ms)
    }));
    match outcome {
        Ok(r) => r.map(|ms| (ms, backbone.calls.get())),
        Err(_) => Err(Error::External("cell panicked".into())),
    }
}

/// Times every cell of the grid. Cell failures are recorded and the grid
/// continues; `progress` is called after each (frames, resolution) pair.
pub fn run_latency_grid<T: Scalar>(
    scenario: &BenchScenario,
    codec: &Codec<T>,
    backbone: &dyn Backbone<T>,
    mut progress: impl FnMut(&[BenchCell]),
) -> Result<BenchResults> {
    scenario.validate()?;
    if backbone.scale() != scenario.backbone.scale {
        return Err(Error::param(format!(
            "backbone scale {} differs from scenario scale {}",
            backbone.scale(),
            scenario.backbone.scale
        )));
    }
    if codec.config != scenario.codec {
        return Err(Error::param("codec does not match the scenario codec config"));
    }
    let counting = Counting {
        inner: backbone,
        calls: Cell::new(0),
    };
    let mut results = BenchResults {
        protocol: PROTOCOL.to_string(),
        cells: Vec::new(),
    };
    let limit = scenario.memory_limit_mb * 1024 * 1024;
    for &frames in &scenario.frame_counts {
        for &res in &scenario.resolutions {
            let modes = &scenario.compression;
            let mut samples: Vec<Vec<f64>> = vec![Vec::new(); modes.len()];
            let mut counts = vec![0usize; modes.len()];
            let mut errors: Vec<Option<String>> = modes
                .iter()
                .map(|&on| {
                    let need = scenario.estimated_bytes(frames, res, on);
                    (need > limit).then(|| format!("estimated {} MB exceeds the {} MB limit", need >> 20, limit >> 20))
                })
                .collect();
            let clip = noise_clip::<T>(frames, res, scenario.seed ^ ((frames as u64) << 32) ^ res as u64)?;
            for rep in 0..=scenario.repetitions {
                for (i, &on) in modes.iter().enumerate() {
                    if errors[i].is_some() {
                        continue;
                    }
                    match run_once(codec, &counting, &clip, on) {
                        Ok((ms, calls)) => {
                            counts[i] = calls;
                            if rep > 0 {
                                samples[i].push(ms);
                            }
                        }
                        Err(e) => errors[i] = Some(e.to_string()),
                    }
                }
            }
            let start = results.cells.len();
            for (i, &on) in modes.iter().enumerate() {
                let expected = if on {
                    backbone_invocation_count(frames, scenario.codec.group_size, scenario.codec.overlap)?
                } else {
                    frames
                };
                let cell = match errors[i].take() {
                    Some(e) => BenchCell {
                        frames,
                        resolution: res,
                        compression: on,
                        median_ms: f64::NAN,
                        iqr_ms: f64::NAN,
                        invocations: expected,
                        status: CellStatus::Failed,
                        error: Some(e),
                    },
                    None => {
                        if counts[i] != expected {
                            return Err(Error::Shape(format!(
                                "{frames} frames made {} backbone calls, plan says {expected}",
                                counts[i]
                            )));
                        }
                        let (median_ms, iqr_ms) = median_iqr(&samples[i]);
                        BenchCell {
                            frames,
                            resolution: res,
                            compression: on,
                            median_ms,
                            iqr_ms,
                            invocations: counts[i],
                            status: if iqr_ms / median_ms > UNSTABLE_RATIO {
                                CellStatus::Unstable
                            } else {
                                CellStatus::Ok
                            },
                            error: None,
                        }
                    }
                };
                results.cells.push(cell);
            }
            progress(&results.cells[start..]);
        }
    }
    Ok(results)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub frames: usize,
    pub resolution: usize,
    pub off_ms: Option<f64>,
    pub on_ms: Option<f64>,
    pub speedup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    pub resolution: usize,
    /// Frame counts in increasing order with their speedups.
    pub series: Vec<(usize, f64)>,
    pub non_decreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub protocol: String,
    pub rows: Vec<SpeedupRow>,
    pub monotonicity: Vec<Monotonicity>,
    /// False when any cell lacked a usable on/off pair.
    pub complete: bool,
}

/// Off-over-on ratio per cell and, per resolution, whether the ratio never
/// drops as the frame count grows.
pub fn speedup_report(results: &BenchResults) -> SpeedupReport {
    let mut keys: Vec<(usize, usize)> = results.cells.iter().map(|c| (c.resolution, c.frames)).collect();
    keys.sort_unstable();
    keys.dedup();
    let usable = |c: Option<&BenchCell>| c.filter(|c| c.status != CellStatus::Failed).map(|c| c.median_ms);
    let mut rows = Vec::new();
    let mut complete = true;
    for &(res, frames) in &keys {
        let off = usable(results.cell(frames, res, false));
        let on = usable(results.cell(frames, res, true));
        let (speedup, flag) = match (off, on) {
            (Some(a), Some(b)) if b > 0.0 => (Some(a / b), None),
            (Some(_), Some(_)) => (None, Some("zero on-time".to_string())),
            (None, _) => (None, Some("missing compression-off cell".to_string())),
            (_, None) => (None, Some("missing compression-on cell".to_string())),
        };
        complete &= speedup.is_some();
        rows.push(SpeedupRow {
            frames,
            resolution: res,
            off_ms: off,
            on_ms: on,
            speedup,
            flag,
        });
    }
    let mut resolutions: Vec<usize> = keys.iter().map(|k| k.0).collect();
    resolutions.dedup();
    let monotonicity = resolutions
        .into_iter()
        .map(|res| {
            let series: Vec<(usize, f64)> = rows
                .iter()
                .filter(|r| r.resolution == res)
                .filter_map(|r| r.speedup.map(|s| (r.frames, s)))
                .collect();
            let non_decreasing = series.windows(2).all(|w| w[1].1 >= w[0].1);
            Monotonicity {
                resolution: res,
                series,
                non_decreasing,
            }
        })
        .collect();
    SpeedupReport {
        protocol: results.protocol.clone(),
        rows,
        monotonicity,
        complete,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BicubicBackbone;
    use crate::flow::FlowMethod;

    fn cell(frames: usize, compression: bool, ms: f64) -> BenchCell {
        BenchCell {
            frames,
            resolution: 8,
            compression,
            median_ms: ms,
            iqr_ms: 0.0,
            invocations: 0,
            status: CellStatus::Ok,
            error: None,
        }
    }

    #[test]
    fn quartiles() {
        assert_eq!(median_iqr(&[3.0, 1.0, 2.0]), (2.0, 1.0));
        assert_eq!(median_iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]), (3.0, 2.0));
        assert_eq!(median_iqr(&[7.0; 4]), (7.0, 0.0));
    }

    #[test]
    fn speedup_ratios() {
        let r = BenchResults {
            protocol: String::new(),
            cells: vec![cell(10, false, 5.0), cell(10, true, 5.0), cell(20, false, 100.0), cell(20, true, 50.0)],
        };
        let s = speedup_report(&r);
        assert_eq!(s.rows[0].speedup, Some(1.0));
        assert_eq!(s.rows[1].speedup, Some(2.0));
        assert!(s.complete && s.monotonicity[0].non_decreasing);

        let partial = BenchResults {
            protocol: String::new(),
            cells: vec![cell(10, false, 5.0), cell(20, false, 5.0), cell(20, true, 6.0)],
        };
        let s = speedup_report(&partial);
        assert!(!s.complete);
        assert!(s.rows[0].flag.as_deref().unwrap().contains("on"));
        assert_eq!(s.monotonicity[0].series.len(), 1);
    }

    fn small_scenario() -> BenchScenario {
        BenchScenario {
            frame_counts: vec![7],
            resolutions: vec![8],
            repetitions: 3,
            backbone: BackboneSpec::new("bicubic", 2),
            codec: CodecConfig {
                cleaning_width: 4,
                cleaning_blocks: 1,
                coder_width: 4,
                coder_blocks: 1,
                flow: FlowMethod::Zero,
                ..CodecConfig::default()
            },
            ..BenchScenario::default()
        }
    }

    #[test]
    fn smoke_grid_counts_invocations() {
        let sc = small_scenario();
        let codec = Codec::<f32>::new(sc.codec.clone(), 0).unwrap();
        let mut seen = 0;
        let r = run_latency_grid(&sc, &codec, &BicubicBackbone { scale: 2 }, |c| seen += c.len()).unwrap();
        assert_eq!(seen, 2);
        assert_eq!(r.cell(7, 8, false).unwrap().invocations, 7);
        assert_eq!(r.cell(7, 8, true).unwrap().invocations, 3);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("frames,resolution,compression,median_ms,iqr_ms,invocations,status"));
    }

    #[test]
    fn over_budget_cells_fail_without_stopping() {
        let sc = BenchScenario {
            frame_counts: vec![4, 5],
            memory_limit_mb: 0,
            ..small_scenario()
        };
        let codec = Codec::<f32>::new(sc.codec.clone(), 0).unwrap();
        let r = run_latency_grid(&sc, &codec, &BicubicBackbone { scale: 2 }, |_| ()).unwrap();
        assert_eq!(r.cells.len(), 4);
        assert!(r.cells.iter().all(|c| c.status == CellStatus::Failed && c.error.is_some()));
        assert!(!speedup_report(&r).complete);
    }

    #[test]
    fn scenario_validation() {
        let mut sc = small_scenario();
        sc.repetitions = 2;
        assert!(sc.validate().is_err());
        let codec = Codec::<f32>::new(small_scenario().codec, 0).unwrap();
        let sc = small_scenario();
        assert!(run_latency_grid(&sc, &codec, &BicubicBackbone { scale: 3 }, |_| ()).is_err());
    }
}
