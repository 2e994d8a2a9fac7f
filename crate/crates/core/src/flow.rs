//! Dense optical flow used as encoder conditioning.
//!
//! Convention: `estimate_flow(reference, target)` returns `d` such that
//! `target(x + d) ≈ reference(x)`, and `warp(target, d)` samples `target` at
//! `x + d`, so warping the target with its flow lands it on the reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::rgb_to_y;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::FRAME_CHANNELS;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FlowMethod {
    Zero,
    HornSchunckPyramid { levels: usize, iterations: usize, smoothness: f64 },
}

impl Default for FlowMethod {
    fn default() -> Self {
        FlowMethod::HornSchunckPyramid {
            levels: 3,
            iterations: 100,
            smoothness: 0.1,
        }
    }
}

impl FlowMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FlowMethod::Zero => Ok(()),
            FlowMethod::HornSchunckPyramid {
                levels,
                iterations,
                smoothness,
            } => {
                if levels == 0 || iterations == 0 || !(smoothness > 0.0) {
                    Err(Error::param(format!(
                        "horn-schunck needs levels, iterations and smoothness > 0 (got {levels}, {iterations}, {smoothness})"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Two-channel displacement field: channel 0 is dx, channel 1 is dy, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T> {
    field: Tensor<T>,
}

impl<T: Scalar> FlowField<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            field: Tensor::zeros(2, height, width),
        }
    }

    pub fn from_tensor(field: Tensor<T>) -> Result<Self> {
        if field.channels() != 2 {
            return Err(Error::shape(format!("flow needs 2 channels, got {}", field.channels())));
        }
        if !field.is_finite() {
            return Err(Error::input("flow contains non-finite values"));
        }
        Ok(Self { field })
    }

    /// Constant displacement everywhere.
    pub fn uniform(height: usize, width: usize, dx: T, dy: T) -> Self {
        Self {
            field: Tensor::from_fn(2, height, width, |c, _, _| if c == 0 { dx } else { dy }),
        }
    }

    pub fn dx(&self) -> &[T] {
        self.field.plane(0)
    }

    pub fn dy(&self) -> &[T] {
        self.field.plane(1)
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.field.spatial()
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.field
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.field
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = self.field.plane_len() as f64;
        self.dx()
            .iter()
            .zip(self.dy())
            .map(|(&x, &y)| x.to_f64_lossy().hypot(y.to_f64_lossy()))
            .sum::<f64>()
            / n
    }
}

/// Bilinear sample with coordinates clamped to the plane.
fn sample(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Bilinear backward warp with border clamping: `out(x) = frame(x + flow(x))`.
pub fn warp<T: Scalar>(frame: &Tensor<T>, flow: &FlowField<T>) -> Result<Tensor<T>> {
    let (h, w) = frame.spatial();
    if flow.spatial() != (h, w) {
        return Err(Error::shape(format!(
            "flow {:?} does not match frame {h}x{w}",
            flow.spatial()
        )));
    }
    let (dx, dy) = (flow.dx(), flow.dy());
    let mut out = Tensor::zeros(frame.channels(), h, w);
    for c in 0..frame.channels() {
        let plane: Vec<f64> = frame.plane(c).iter().map(|v| v.to_f64_lossy()).collect();
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let sx = x as f64 + dx[i].to_f64_lossy();
                let sy = y as f64 + dy[i].to_f64_lossy();
                dst[i] = T::of(sample(&plane, h, w, sx, sy));
            }
        }
    }
    Ok(out)
}

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    /// 2x2 box average; odd trailing rows/columns are dropped.
    fn halve(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = (2 * y, 2 * x);
                data.push(
                    0.25 * (self.data[sy * self.w + sx]
                        + self.data[sy * self.w + sx + 1]
                        + self.data[(sy + 1) * self.w + sx]
                        + self.data[(sy + 1) * self.w + sx + 1]),
                );
            }
        }
        Plane { h, w, data }
    }

    /// Horn-Schunck neighbourhood average (1/6 edge, 1/12 corner neighbours).
    fn hs_average(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let edge = self.at(y - 1, x) + self.at(y + 1, x) + self.at(y, x - 1) + self.at(y, x + 1);
                let corner =
                    self.at(y - 1, x - 1) + self.at(y - 1, x + 1) + self.at(y + 1, x - 1) + self.at(y + 1, x + 1);
                out.push(edge / 6.0 + corner / 12.0);
            }
        }
        out
    }
}

/// Resizes a flow component to `(h, w)` bilinearly and rescales the displacement.
fn upsample_flow(p: &Plane, h: usize, w: usize, factor: f64) -> Plane {
    let sy = p.h as f64 / h as f64;
    let sx = p.w as f64 / w as f64;
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let fy = (y as f64 + 0.5) * sy - 0.5;
            let fx = (x as f64 + 0.5) * sx - 0.5;
            data.push(sample(&p.data, p.h, p.w, fx, fy) * factor);
        }
    }
    Plane { h, w, data }
}

fn horn_schunck(reference: &Plane, target: &Plane, levels: usize, iterations: usize, smoothness: f64) -> (Plane, Plane) {
    let mut refs = vec![reference.clone()];
    let mut tgts = vec![target.clone()];
    while refs.len() < levels {
        let last = refs.last().expect("non-empty");
        if last.h < 8 || last.w < 8 {
            break;
        }
        refs.push(last.halve());
        tgts.push(tgts.last().expect("non-empty").halve());
    }
    let alpha2 = smoothness * smoothness;
    let coarse = refs.last().expect("non-empty");
    let zero = |p: &Plane| Plane {
        h: p.h,
        w: p.w,
        data: vec![0.0; p.h * p.w],
    };
    let mut u = zero(coarse);
    let mut v = zero(coarse);
    for level in (0..refs.len()).rev() {
        let (r, t) = (&refs[level], &tgts[level]);
        if u.h != r.h || u.w != r.w {
            let factor = r.w as f64 / u.w as f64;
            u = upsample_flow(&u, r.h, r.w, factor);
            v = upsample_flow(&v, r.h, r.w, r.h as f64 / v.h as f64);
        }
        let (h, w) = (r.h, r.w);
        // linearize around the current estimate
        let warped = Plane {
            h,
            w,
            data: (0..h * w)
                .map(|i| sample(&t.data, h, w, (i % w) as f64 + u.data[i], (i / w) as f64 + v.data[i]))
                .collect(),
        };
        let mut ix = vec![0.0; h * w];
        let mut iy = vec![0.0; h * w];
        let mut it = vec![0.0; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = y as usize * w + x as usize;
                let gx = |p: &Plane| 0.5 * (p.at(y, x + 1) - p.at(y, x - 1));
                let gy = |p: &Plane| 0.5 * (p.at(y + 1, x) - p.at(y - 1, x));
                ix[i] = 0.5 * (gx(r) + gx(&warped));
                iy[i] = 0.5 * (gy(r) + gy(&warped));
                it[i] = warped.data[i] - r.data[i];
            }
        }
        let mut du = zero(r);
        let mut dv = zero(r);
        for _ in 0..iterations {
            // smoothness acts on the full field, data term on the increment
            let total_u = Plane {
                h,
                w,
                data: u.data.iter().zip(&du.data).map(|(a, b)| a + b).collect(),
            };
            let total_v = Plane {
                h,
                w,
                data: v.data.iter().zip(&dv.data).map(|(a, b)| a + b).collect(),
            };
            let ub = total_u.hs_average();
            let vb = total_v.hs_average();
            for i in 0..h * w {
                let dub = ub[i] - u.data[i];
                let dvb = vb[i] - v.data[i];
                let k = (ix[i] * dub + iy[i] * dvb + it[i]) / (alpha2 + ix[i] * ix[i] + iy[i] * iy[i]);
                du.data[i] = dub - ix[i] * k;
                dv.data[i] = dvb - iy[i] * k;
            }
        }
        for i in 0..h * w {
            u.data[i] += du.data[i];
            v.data[i] += dv.data[i];
        }
    }
    (u, v)
}

fn luma_plane<T: Scalar>(frame: &Tensor<T>) -> Result<Plane> {
    let y = rgb_to_y(&frame.cast::<f64>())?;
    let (h, w) = y.spatial();
    Ok(Plane { h, w, data: y.into_vec() })
}

/// Flow from `reference` to `target` on luma.
pub fn estimate_flow<T: Scalar>(reference: &Tensor<T>, target: &Tensor<T>, method: FlowMethod) -> Result<FlowField<T>> {
    reference.ensure_same_shape(target, "flow")?;
    method.validate()?;
    let (h, w) = reference.spatial();
    match method {
        FlowMethod::Zero => {
            if reference.channels() != FRAME_CHANNELS {
                return Err(Error::shape(format!("flow needs RGB frames, got {} channels", reference.channels())));
            }
            Ok(FlowField::zeros(h, w))
        }
        FlowMethod::HornSchunckPyramid {
            levels,
            iterations,
            smoothness,
        } => {
            let (u, v) = horn_schunck(&luma_plane(reference)?, &luma_plane(target)?, levels, iterations, smoothness);
            let data = u.data.into_iter().chain(v.data).map(T::of).collect();
            FlowField::from_tensor(Tensor::from_vec(2, h, w, data)?)
        }
    }
}

/// Number of conditioning channels produced for a group of `group_size` channels.
pub fn conditioning_channels(group_size: usize) -> usize {
    2 * (group_size / FRAME_CHANNELS - 1)
}

/// Flows from the group's center frame to every other frame, concatenated in
/// frame order as `(dx, dy)` pairs: `2 (F - 1)` channels.
pub fn group_flows<T: Scalar>(group: &Tensor<T>, method: FlowMethod) -> Result<Tensor<T>> {
    let s = group.channels();
    if s == 0 || s % FRAME_CHANNELS != 0 {
        return Err(Error::shape(format!("group of {s} channels is not whole frames")));
    }
    let f = s / FRAME_CHANNELS;
    let (h, w) = group.spatial();
    if f == 1 {
        return Ok(Tensor::zeros(0, h, w));
    }
    let frame = |i: usize| group.slice_channels(i * FRAME_CHANNELS, (i + 1) * FRAME_CHANNELS);
    let center = f / 2;
    let reference = frame(center);
    let flows = (0..f)
        .filter(|&i| i != center)
        .map(|i| {
            if matches!(method, FlowMethod::Zero) {
                method.validate()?;
                Ok(FlowField::zeros(h, w).into_tensor())
            } else {
                Ok(estimate_flow(&reference, &frame(i), method)?.into_tensor())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat(&flows.iter().collect::<Vec<_>>())
}
