//! Luma PSNR and SSIM.
//!
//! Both metrics run on BT.601 studio-range luma. No border is cropped.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::VideoSequence;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// `Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255` for RGB in [0, 1].
pub fn rgb_to_y<T: Scalar>(frame: &Tensor<T>) -> Result<Tensor<T>> {
    if frame.channels() != 3 {
        return Err(Error::shape(format!("luma needs 3 channels, got {}", frame.channels())));
    }
    let (r, g, b) = (frame.plane(0), frame.plane(1), frame.plane(2));
    let (kr, kg, kb) = (T::of(65.481), T::of(128.553), T::of(24.966));
    let (off, scale) = (T::of(16.0), T::of(255.0));
    let data = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| (kr * r + kg * g + kb * b + off) / scale)
        .collect();
    Tensor::from_vec(1, frame.height(), frame.width(), data)
}

fn luma_f64<T: Scalar>(frame: &Tensor<T>) -> Result<Vec<f64>> {
    Ok(rgb_to_y(&frame.cast::<f64>())?.into_vec())
}

/// Luma PSNR with peak 1.0. Identical inputs give `f64::INFINITY`.
pub fn psnr_y<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.ensure_same_shape(b, "psnr")?;
    let (ya, yb) = (luma_f64(a)?, luma_f64(b)?);
    let mse = ya.iter().zip(&yb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ya.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

pub(crate) fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM on luma with an 11x11 Gaussian window (sigma 1.5) and dynamic range 1.
pub fn ssim_y<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    let (h, w) = a.spatial();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "ssim needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let (ya, yb) = (luma_f64(a)?, luma_f64(b)?);
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let prod: Vec<f64> = ya.iter().zip(&yb).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&ya, h, w, &k);
    let mu_b = filter_valid(&yb, h, w, &k);
    let e_aa = filter_valid(&sq(&ya), h, w, &k);
    let e_bb = filter_valid(&sq(&yb), h, w, &k);
    let e_ab = filter_valid(&prod, h, w, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

/// Formats a PSNR value, writing infinity as `inf`.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub frame: usize,
    #[serde(serialize_with = "serialize_db")]
    pub psnr_y: f64,
    pub ssim_y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub frames: Vec<FrameMetrics>,
    /// Mean over frames with finite PSNR; `inf` when there are none.
    #[serde(serialize_with = "serialize_db")]
    pub mean_psnr_y: f64,
    pub mean_ssim_y: f64,
    /// Frames left out of the PSNR mean because they matched exactly.
    pub infinite_psnr_frames: usize,
}

impl MetricsReport {
    /// CSV rows `clip,frame,psnr_y,ssim_y` with a header line.
    pub fn to_csv(&self, clip: &str) -> String {
        let mut out = String::from("clip,frame,psnr_y,ssim_y\n");
        out.push_str(&self.csv_rows(clip));
        out
    }

    pub fn csv_rows(&self, clip: &str) -> String {
        self.frames
            .iter()
            .map(|f| format!("{clip},{},{},{:.6}\n", f.frame, format_db(f.psnr_y), f.ssim_y))
            .collect()
    }
}

pub fn sequence_metrics<T: Scalar>(pred: &VideoSequence<T>, gt: &VideoSequence<T>) -> Result<MetricsReport> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!(
            "sequence lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let frames = pred
        .frames()
        .iter()
        .zip(gt.frames())
        .enumerate()
        .map(|(i, (p, g))| {
            Ok(FrameMetrics {
                frame: i,
                psnr_y: psnr_y(p, g)?,
                ssim_y: ssim_y(p, g)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let finite: Vec<f64> = frames.iter().map(|f| f.psnr_y).filter(|v| v.is_finite()).collect();
    let mean_psnr_y = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    let mean_ssim_y = frames.iter().map(|f| f.ssim_y).sum::<f64>() / frames.len() as f64;
    Ok(MetricsReport {
        infinite_psnr_frames: frames.len() - finite.len(),
        frames,
        mean_psnr_y,
        mean_ssim_y,
    })
}

/// Mean luma PSNR over corresponding frames, treating exact matches as `cap` dB.
pub fn mean_psnr_y<T: Scalar>(pred: &[Tensor<T>], gt: &[Tensor<T>], cap: f64) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape("frame lists must be non-empty and equally long"));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        total += psnr_y(p, g)?.min(cap);
    }
    Ok(total / pred.len() as f64)
}
