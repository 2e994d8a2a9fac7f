//! Low-resolution, compressed input synthesis.
//!
//! High-resolution frames are Gaussian-blurred, point-decimated and then
//! optionally compressed, in that order. Compression either shells out to an
//! H.264 encoder or, when none is available (or requested), runs a
//! deterministic 8x8 block-DCT quantizer whose step grows with the CRF.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::VideoSequence;

/// CRF values accepted by [`compress_crf`]; 0 means "leave uncompressed".
pub const ALLOWED_CRF: [u32; 4] = [0, 15, 25, 35];

/// Environment variable naming the encoder binary (default `ffmpeg`).
pub const ENCODER_ENV: &str = "GROUPSR_FFMPEG";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compressor {
    ExternalEncoder,
    DctProxy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeConfig {
    pub blur_sigma: f64,
    pub scale: usize,
    pub crf: u32,
    pub compressor: Compressor,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 1.5,
            scale: 4,
            crf: 0,
            compressor: Compressor::DctProxy,
        }
    }
}

impl DegradeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale < 1 {
            return Err(Error::param("downsample factor must be at least 1"));
        }
        if !(self.blur_sigma > 0.0) {
            return Err(Error::param(format!("blur sigma must be positive, got {}", self.blur_sigma)));
        }
        check_crf(self.crf)
    }
}

fn check_crf(crf: u32) -> Result<()> {
    if ALLOWED_CRF.contains(&crf) {
        Ok(())
    } else {
        Err(Error::param(format!("crf {crf} not in {ALLOWED_CRF:?}")))
    }
}

/// Normalized 1-D Gaussian taps over `[-ceil(4 sigma), ceil(4 sigma)]`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::param(format!("blur sigma must be positive, got {sigma}")));
    }
    let r = (4.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / s).collect())
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur<T: Scalar>(frame: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    let k: Vec<T> = gaussian_kernel(sigma)?.into_iter().map(T::of).collect();
    let r = (k.len() / 2) as isize;
    let (c, h, w) = frame.shape();
    let mut tmp = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = frame.plane(ch);
        let dst = tmp.plane_mut(ch);
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                dst[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, &kv)| kv * row[reflect(x as isize + i as isize - r, w)])
                    .sum();
            }
        }
    }
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = tmp.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, &kv)| kv * src[reflect(y as isize + i as isize - r, h) * w + x])
                    .sum();
            }
        }
    }
    Ok(out)
}

/// Keeps every `factor`-th pixel starting at the origin. Sizes that are not a
/// multiple of `factor` are cropped first; the flag reports whether that happened.
pub fn downsample<T: Scalar>(frame: &Tensor<T>, factor: usize) -> Result<(Tensor<T>, bool)> {
    if factor < 1 {
        return Err(Error::param("downsample factor must be at least 1"));
    }
    let (c, h, w) = frame.shape();
    let (oh, ow) = (h / factor, w / factor);
    if oh == 0 || ow == 0 {
        return Err(Error::input(format!("{h}x{w} frame is smaller than factor {factor}")));
    }
    let cropped = h % factor != 0 || w % factor != 0;
    Ok((
        Tensor::from_fn(c, oh, ow, |ch, y, x| frame.at(ch, y * factor, x * factor)),
        cropped,
    ))
}

/// Quantizer step of the DCT proxy on the 0..255 scale.
pub fn dct_step(crf: u32) -> f64 {
    2f64.powf((crf as f64 - 12.0) / 6.0).max(1.0)
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut b = [[0.0; 8]; 8];
    for (k, row) in b.iter_mut().enumerate() {
        let alpha = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = alpha * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
        }
    }
    b
}

/// Block-DCT quantization of one frame: orthonormal 8x8 DCT on the 0..255
/// scale, uniform rounding to multiples of `step`, inverse transform. Partial
/// edge blocks are filled by edge replication and cropped afterwards.
pub fn dct_proxy_frame<T: Scalar>(frame: &Tensor<T>, step: f64) -> Tensor<T> {
    let basis = dct_basis();
    let (c, h, w) = frame.shape();
    let mut out = frame.clone();
    let mut block = [[0.0f64; 8]; 8];
    let mut tmp = [[0.0f64; 8]; 8];
    for ch in 0..c {
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                for (i, row) in block.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let y = (by + i).min(h - 1);
                        let x = (bx + j).min(w - 1);
                        *v = frame.at(ch, y, x).to_f64_lossy() * 255.0;
                    }
                }
                // forward: B * X * B^T
                for k in 0..8 {
                    for j in 0..8 {
                        tmp[k][j] = (0..8).map(|n| basis[k][n] * block[n][j]).sum();
                    }
                }
                for k in 0..8 {
                    for l in 0..8 {
                        let coeff: f64 = (0..8).map(|n| tmp[k][n] * basis[l][n]).sum();
                        block[k][l] = (coeff / step).round() * step;
                    }
                }
                // inverse: B^T * Q * B
                for n in 0..8 {
                    for l in 0..8 {
                        tmp[n][l] = (0..8).map(|k| basis[k][n] * block[k][l]).sum();
                    }
                }
                for i in 0..8 {
                    for j in 0..8 {
                        let (y, x) = (by + i, bx + j);
                        if y < h && x < w {
                            let v: f64 = (0..8).map(|l| tmp[i][l] * basis[l][j]).sum();
                            out.set(ch, y, x, T::of((v / 255.0).clamp(0.0, 1.0)));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Result of a compression pass.
#[derive(Clone, Debug)]
pub struct Compressed<T> {
    pub sequence: VideoSequence<T>,
    pub compressor_used: Compressor,
    /// Set when the external encoder was requested but could not be used.
    pub warning: Option<String>,
}

pub fn compress_crf<T: Scalar>(seq: &VideoSequence<T>, crf: u32, compressor: Compressor) -> Result<Compressed<T>> {
    check_crf(crf)?;
    if crf == 0 {
        return Ok(Compressed {
            sequence: seq.clone(),
            compressor_used: compressor,
            warning: None,
        });
    }
    let proxy = |seq: &VideoSequence<T>| {
        let step = dct_step(crf);
        seq.try_map(|f| Ok(dct_proxy_frame(f, step)))
    };
    match compressor {
        Compressor::DctProxy => Ok(Compressed {
            sequence: proxy(seq)?,
            compressor_used: Compressor::DctProxy,
            warning: None,
        }),
        Compressor::ExternalEncoder => match external_roundtrip(seq, crf) {
            Ok(sequence) => Ok(Compressed {
                sequence,
                compressor_used: Compressor::ExternalEncoder,
                warning: None,
            }),
            Err(e) => {
                log::warn!("external encoder unavailable, using dct proxy: {e}");
                Ok(Compressed {
                    sequence: proxy(seq)?,
                    compressor_used: Compressor::DctProxy,
                    warning: Some(format!("external encoder unavailable ({e}); fell back to dct-proxy")),
                })
            }
        },
    }
}

fn encoder_binary() -> String {
    std::env::var(ENCODER_ENV).unwrap_or_else(|_| "ffmpeg".to_string())
}

fn to_rgb24<T: Scalar>(frame: &Tensor<T>) -> Vec<u8> {
    let (h, w) = frame.spatial();
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(quantize_u8(frame.at(c, y, x)));
            }
        }
    }
    out
}

/// Rounds a [0, 1] value to 8 bits.
pub fn quantize_u8<T: Scalar>(v: T) -> u8 {
    (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// H.264 round trip through the external encoder (`-crf`, preset `medium`, yuv420p).
fn external_roundtrip<T: Scalar>(seq: &VideoSequence<T>, crf: u32) -> Result<VideoSequence<T>> {
    let bin = encoder_binary();
    let (h, w) = (seq.height(), seq.width());
    let mut path = std::env::temp_dir();
    let unique = format!(
        "groupsr-{}-{}.mp4",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    );
    path.push(unique);
    let cleanup = TempFile(path.clone());

    let mut enc = Command::new(&bin)
        .args(["-v", "error", "-y", "-f", "rawvideo", "-pix_fmt", "rgb24", "-s"])
        .arg(format!("{w}x{h}"))
        .arg("-r")
        .arg(format!("{}", seq.frame_rate().max(1.0)))
        .args(["-i", "-", "-c:v", "libx264", "-preset", "medium", "-crf"])
        .arg(crf.to_string())
        .args(["-pix_fmt", "yuv420p"])
        .arg(&cleanup.0)
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::External(format!("cannot start {bin}: {e}")))?;
    {
        let stdin = enc.stdin.as_mut().expect("piped stdin");
        for f in seq.frames() {
            stdin
                .write_all(&to_rgb24(f))
                .map_err(|e| Error::External(format!("writing frames to {bin}: {e}")))?;
        }
    }
    drop(enc.stdin.take());
    let out = enc
        .wait_with_output()
        .map_err(|e| Error::External(format!("{bin} failed: {e}")))?;
    if !out.status.success() {
        return Err(Error::External(format!(
            "{bin} encode exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }

    let mut dec = Command::new(&bin)
        .args(["-v", "error", "-i"])
        .arg(&cleanup.0)
        .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::External(format!("cannot start {bin}: {e}")))?;
    let mut raw = Vec::new();
    dec.stdout
        .as_mut()
        .expect("piped stdout")
        .read_to_end(&mut raw)
        .map_err(|e| Error::External(format!("reading decoded frames: {e}")))?;
    let status = dec.wait().map_err(|e| Error::External(e.to_string()))?;
    if !status.success() {
        return Err(Error::External(format!("{bin} decode exited with {status}")));
    }
    let frame_bytes = h * w * 3;
    if raw.len() < frame_bytes * seq.len() {
        return Err(Error::External(format!(
            "decoder returned {} bytes, expected {}",
            raw.len(),
            frame_bytes * seq.len()
        )));
    }
    let frames = raw
        .chunks_exact(frame_bytes)
        .take(seq.len())
        .map(|bytes| Tensor::from_fn(3, h, w, |c, y, x| T::of(bytes[(y * w + x) * 3 + c] as f64 / 255.0)))
        .collect();
    VideoSequence::new(frames, seq.frame_rate())
}

struct TempFile(PathBuf);

impl Drop for TempFile {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

/// A degraded clip together with what happened on the way.
#[derive(Clone, Debug)]
pub struct Degraded<T> {
    pub sequence: VideoSequence<T>,
    /// Blur and decimation only, before compression.
    pub uncompressed: VideoSequence<T>,
    pub cropped: bool,
    pub compressor_used: Compressor,
    pub warning: Option<String>,
}

/// Blur, decimate, compress.
pub fn make_lr<T: Scalar>(hr: &VideoSequence<T>, cfg: &DegradeConfig) -> Result<Degraded<T>> {
    cfg.validate()?;
    let mut cropped = false;
    let uncompressed = hr.try_map(|f| {
        let (d, c) = downsample(&gaussian_blur(f, cfg.blur_sigma)?, cfg.scale)?;
        cropped |= c;
        Ok(d)
    })?;
    let compressed = compress_crf(&uncompressed, cfg.crf, cfg.compressor)?;
    Ok(Degraded {
        sequence: compressed.sequence,
        uncompressed,
        cropped,
        compressor_used: compressed.compressor_used,
        warning: compressed.warning,
    })
}

/// CRF assignment for one clip of a mixed dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixAssignment {
    pub clip_id: String,
    pub crf: u32,
    /// Per-clip seed derived from the dataset seed.
    pub seed: u64,
}

/// Marks `round(fraction * n)` clips as compressed (chosen by a seeded
/// shuffle), each with a CRF drawn uniformly from `crf_set`.
pub fn mix_dataset(clips: &[String], fraction_compressed: f64, crf_set: &[u32], seed: u64) -> Result<Vec<MixAssignment>> {
    if clips.is_empty() {
        return Err(Error::input("cannot mix an empty clip list"));
    }
    if !(0.0..=1.0).contains(&fraction_compressed) {
        return Err(Error::param(format!("fraction {fraction_compressed} outside [0, 1]")));
    }
    let n_compressed = (fraction_compressed * clips.len() as f64).round() as usize;
    if n_compressed > 0 && crf_set.is_empty() {
        return Err(Error::param("crf set is empty"));
    }
    for &c in crf_set {
        check_crf(c)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.shuffle(&mut rng);
    let mut crf = vec![0u32; clips.len()];
    for &i in &order[..n_compressed] {
        crf[i] = crf_set[rng.gen_range(0..crf_set.len())];
    }
    Ok(clips
        .iter()
        .zip(crf)
        .enumerate()
        .map(|(i, (id, crf))| MixAssignment {
            clip_id: id.clone(),
            crf,
            seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64),
        })
        .collect())
}

/// One line of a degraded-dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradeManifestEntry {
    pub clip_id: String,
    pub source_path: PathBuf,
    pub degraded_path: PathBuf,
    pub crf: u32,
    pub seed: u64,
    pub compressor: Compressor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DegradeManifest {
    pub entries: Vec<DegradeManifestEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize, phase: f64) -> Tensor<f64> {
        Tensor::from_fn(3, h, w, |c, y, x| {
            0.5 + 0.2 * ((x as f64 * 0.7 + phase + c as f64).sin() + (y as f64 * 0.45 - c as f64 * 0.3).cos()) * 0.5
                + 0.15 * (((x * 13 + y * 7 + c * 3) % 11) as f64 / 11.0 - 0.5)
        })
    }

    #[test]
    fn blur_preserves_constants() {
        for sigma in [0.5, 1.5, 3.0] {
            let f = Tensor::<f64>::filled(3, 9, 13, 0.5);
            let b = gaussian_blur(&f, sigma).unwrap();
            assert!(b.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
        }
        assert!(gaussian_blur(&Tensor::<f64>::zeros(3, 4, 4), 0.0).is_err());
    }

    #[test]
    fn blur_impulse_matches_kernel_center() {
        // oracle: Gaussian taps straight from the formula
        let sigma = 1.5f64;
        let taps: Vec<f64> = (-6..=6).map(|i: i32| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let center = taps[6] / taps.iter().sum::<f64>();
        let mut f = Tensor::<f64>::zeros(3, 31, 31);
        f.set(1, 15, 15, 1.0);
        let b = gaussian_blur(&f, sigma).unwrap();
        assert!((b.at(1, 15, 15) - center * center).abs() < 1e-15);
        // interior impulse keeps its mass
        assert!((b.plane(1).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn blur_preserves_sum_with_constant_border() {
        let mut f = Tensor::<f64>::filled(3, 40, 40, 0.25);
        for y in 15..25 {
            for x in 12..28 {
                f.set(0, y, x, ((x * y) % 7) as f64 / 7.0);
            }
        }
        let b = gaussian_blur(&f, 1.5).unwrap();
        assert!((b.plane(0).iter().sum::<f64>() - f.plane(0).iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn reflect_handles_tiny_planes() {
        assert_eq!(reflect(-1, 3), 1);
        assert_eq!(reflect(3, 3), 1);
        assert_eq!(reflect(-7, 2), 1);
        assert_eq!(reflect(5, 1), 0);
        let f = Tensor::<f64>::filled(3, 2, 3, 0.7);
        assert!(gaussian_blur(&f, 1.5).unwrap().data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn decimation_picks_grid_points() {
        let f = Tensor::<f64>::from_fn(3, 8, 8, |c, y, x| (c * 100 + y * 10 + x) as f64);
        let (d, cropped) = downsample(&f, 4).unwrap();
        assert!(!cropped);
        assert_eq!(d.shape(), (3, 2, 2));
        assert_eq!(
            (d.at(0, 0, 0), d.at(0, 0, 1), d.at(0, 1, 0), d.at(0, 1, 1)),
            (0.0, 4.0, 40.0, 44.0)
        );
        assert_eq!(downsample(&f, 1).unwrap().0, f);
        let (_, cropped) = downsample(&Tensor::<f64>::zeros(3, 9, 8), 4).unwrap();
        assert!(cropped);
        assert!(downsample(&f, 0).is_err());

        let c = Tensor::<f64>::filled(3, 16, 16, 0.4);
        let (lr, _) = downsample(&gaussian_blur(&c, 1.5).unwrap(), 4).unwrap();
        assert!(lr.data().iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn crf_zero_is_identity() {
        let seq = VideoSequence::new(vec![textured(16, 16, 0.0)], 25.0).unwrap();
        for comp in [Compressor::DctProxy, Compressor::ExternalEncoder] {
            assert_eq!(compress_crf(&seq, 0, comp).unwrap().sequence, seq);
        }
        assert!(compress_crf(&seq, 20, Compressor::DctProxy).is_err());
    }

    #[test]
    fn dct_proxy_constant_blocks() {
        for crf in [15, 25, 35] {
            let step = dct_step(crf);
            // DC coefficient of a constant block is 8 * 255 * v
            let exact = 3.0 * step / (8.0 * 255.0);
            let f = Tensor::<f64>::filled(3, 8, 8, exact);
            let q = dct_proxy_frame(&f, step);
            assert!(q.max_abs_diff(&f) < 1e-9, "crf {crf}");

            let g = Tensor::<f64>::filled(3, 8, 8, 0.4321);
            let q = dct_proxy_frame(&g, step);
            assert!(q.max_abs_diff(&g) * 255.0 < step / 2.0);
        }
    }

    #[test]
    fn dct_proxy_handles_partial_blocks() {
        let f = textured(13, 10, 0.3);
        let q = dct_proxy_frame(&f, dct_step(15));
        assert_eq!(q.shape(), f.shape());
        assert!(q.max_abs_diff(&f) < 0.05);
    }

    #[test]
    fn make_lr_chains_stages() {
        let hr = VideoSequence::new(vec![textured(32, 32, 0.0), textured(32, 32, 0.5)], 25.0).unwrap();
        let cfg = DegradeConfig::default();
        let out = make_lr(&hr, &cfg).unwrap();
        assert_eq!(out.sequence.frames()[0].shape(), (3, 8, 8));
        assert_eq!(out.sequence, out.uncompressed);
        let manual = downsample(&gaussian_blur(&hr.frames()[1], 1.5).unwrap(), 4).unwrap().0;
        assert_eq!(out.sequence.frames()[1], manual);

        let cfg35 = DegradeConfig { crf: 35, ..cfg.clone() };
        let a = make_lr(&hr, &cfg35).unwrap();
        let b = make_lr(&hr, &cfg35).unwrap();
        assert_eq!(a.sequence, b.sequence);
        assert_ne!(a.sequence, a.uncompressed);

        let bad = DegradeConfig { scale: 0, ..cfg };
        assert!(make_lr(&hr, &bad).is_err());
    }

    #[test]
    fn external_mode_falls_back_when_binary_missing() {
        std::env::set_var(ENCODER_ENV, "/nonexistent/encoder-binary");
        let seq = VideoSequence::new(vec![textured(16, 16, 0.0)], 25.0).unwrap();
        let out = compress_crf(&seq, 25, Compressor::ExternalEncoder).unwrap();
        std::env::remove_var(ENCODER_ENV);
        assert_eq!(out.compressor_used, Compressor::DctProxy);
        assert!(out.warning.is_some());
        let proxy = compress_crf(&seq, 25, Compressor::DctProxy).unwrap();
        assert_eq!(out.sequence, proxy.sequence);
    }

    #[test]
    fn mixing_is_seeded_and_exact() {
        let clips: Vec<String> = (0..10).map(|i| format!("clip{i}")).collect();
        let a = mix_dataset(&clips, 0.5, &[15, 25, 35], 7).unwrap();
        let b = mix_dataset(&clips, 0.5, &[15, 25, 35], 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|m| m.crf != 0).count(), 5);
        assert!(mix_dataset(&clips, 0.0, &[15], 1).unwrap().iter().all(|m| m.crf == 0));
        assert!(mix_dataset(&clips, 1.0, &[25], 1).unwrap().iter().all(|m| m.crf == 25));
        assert!(mix_dataset(&[], 0.5, &[15], 1).is_err());
        assert!(mix_dataset(&clips, 1.5, &[15], 1).is_err());
    }
}
