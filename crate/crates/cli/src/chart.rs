//! Minimal line chart of median latency against frame count, one image per
//! resolution: compression off in red, on in blue, axes in grey. No text.

use groupsr_core::bench::{BenchResults, CellStatus};
use image::{Rgb, RgbImage};

const W: u32 = 480;
const H: u32 = 320;
const MARGIN: f64 = 30.0;

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
            if (0..W as i64).contains(&px) && (0..H as i64).contains(&py) {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

/// `None` when the resolution has fewer than two usable points per mode.
pub fn render(results: &BenchResults, resolution: usize) -> Option<RgbImage> {
    let series = |on: bool| -> Vec<(f64, f64)> {
        let mut s: Vec<(f64, f64)> = results
            .cells
            .iter()
            .filter(|c| c.resolution == resolution && c.compression == on && c.status != CellStatus::Failed)
            .map(|c| (c.frames as f64, c.median_ms))
            .collect();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        s
    };
    let (off, on) = (series(false), series(true));
    if off.len() < 2 && on.len() < 2 {
        return None;
    }
    let all: Vec<&(f64, f64)> = off.iter().chain(&on).collect();
    let x_max = all.iter().map(|p| p.0).fold(1.0, f64::max);
    let y_max = all.iter().map(|p| p.1).fold(1e-9, f64::max);
    let map = |(x, y): (f64, f64)| {
        (
            MARGIN + x / x_max * (W as f64 - 2.0 * MARGIN),
            H as f64 - MARGIN - y / y_max * (H as f64 - 2.0 * MARGIN),
        )
    };
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let grey = Rgb([120, 120, 120]);
    line(&mut img, map((0.0, 0.0)), map((x_max, 0.0)), grey);
    line(&mut img, map((0.0, 0.0)), map((0.0, y_max)), grey);
    for (s, color) in [(&off, Rgb([200, 30, 30])), (&on, Rgb([30, 60, 200]))] {
        for w in s.windows(2) {
            line(&mut img, map(w[0]), map(w[1]), color);
        }
    }
    Some(img)
}
