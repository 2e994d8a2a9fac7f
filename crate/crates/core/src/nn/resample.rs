use crate::scalar::Scalar;
use crate::tensor::Tensor;

const CUBIC_A: f64 = -0.75;

fn cubic_weights(t: f64) -> [f64; 4] {
    let a = CUBIC_A;
    let near = |x: f64| ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    let far = |x: f64| ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    [far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)]
}

/// Source taps for each output coordinate of a half-pixel-centred bicubic resize.
fn taps<T: Scalar>(src_len: usize, dst_len: usize) -> Vec<[(usize, T); 4]> {
    let ratio = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let s = (d as f64 + 0.5) * ratio - 0.5;
            let i0 = s.floor();
            let w = cubic_weights(s - i0);
            let mut out = [(0usize, T::zero()); 4];
            for (j, slot) in out.iter_mut().enumerate() {
                let idx = (i0 as isize - 1 + j as isize).clamp(0, src_len as isize - 1) as usize;
                *slot = (idx, T::of(w[j]));
            }
            out
        })
        .collect()
}

/// Bicubic resize (a = -0.75, half-pixel centres, clamped borders).
pub fn bicubic_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (c, h, w) = x.shape();
    let tx = taps::<T>(w, out_w);
    let ty = taps::<T>(h, out_h);
    let mut rows: Tensor<T> = Tensor::zeros(c, h, out_w);
    for ch in 0..c {
        let src = x.plane(ch);
        let dst = rows.plane_mut(ch);
        for y in 0..h {
            let s = &src[y * w..(y + 1) * w];
            for (ox, t) in tx.iter().enumerate() {
                dst[y * out_w + ox] = t.iter().map(|&(i, wt)| s[i] * wt).sum();
            }
        }
    }
    let mut out: Tensor<T> = Tensor::zeros(c, out_h, out_w);
    for ch in 0..c {
        let src = rows.plane(ch);
        let dst = out.plane_mut(ch);
        for (oy, t) in ty.iter().enumerate() {
            let d = &mut dst[oy * out_w..(oy + 1) * out_w];
            for &(i, wt) in t {
                for (o, &s) in d.iter_mut().zip(&src[i * out_w..(i + 1) * out_w]) {
                    *o += s * wt;
                }
            }
        }
    }
    out
}

/// Adjoint of [`bicubic_resize`] from an `(c, out_h, out_w)` gradient back to `(c, h, w)`.
pub fn bicubic_resize_backward<T: Scalar>(grad: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (c, out_h, out_w) = grad.shape();
    let tx = taps::<T>(w, out_w);
    let ty = taps::<T>(h, out_h);
    let mut rows: Tensor<T> = Tensor::zeros(c, h, out_w);
    for ch in 0..c {
        let src = grad.plane(ch);
        let dst = rows.plane_mut(ch);
        for (oy, t) in ty.iter().enumerate() {
            let g = &src[oy * out_w..(oy + 1) * out_w];
            for &(i, wt) in t {
                for (d, &s) in dst[i * out_w..(i + 1) * out_w].iter_mut().zip(g) {
                    *d += s * wt;
                }
            }
        }
    }
    let mut out: Tensor<T> = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = rows.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..h {
            let g = &src[y * out_w..(y + 1) * out_w];
            for (ox, t) in tx.iter().enumerate() {
                for &(i, wt) in t {
                    dst[y * w + i] += g[ox] * wt;
                }
            }
        }
    }
    out
}

/// `(c*s*s, h, w) -> (c, h*s, w*s)`
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Tensor<T> {
    let (cin, h, w) = x.shape();
    assert!(cin % (s * s) == 0, "channels not divisible by scale^2");
    let c = cin / (s * s);
    let mut out = Tensor::zeros(c, h * s, w * s);
    for ch in 0..c {
        for i in 0..s {
            for j in 0..s {
                let src = x.plane(ch * s * s + i * s + j);
                let dst = out.plane_mut(ch);
                for y in 0..h {
                    for xx in 0..w {
                        dst[(y * s + i) * w * s + xx * s + j] = src[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`pixel_shuffle`]; also its adjoint.
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Tensor<T> {
    let (c, hs, ws) = x.shape();
    let (h, w) = (hs / s, ws / s);
    let mut out = Tensor::zeros(c * s * s, h, w);
    for ch in 0..c {
        let src = x.plane(ch);
        for i in 0..s {
            for j in 0..s {
                let dst = out.plane_mut(ch * s * s + i * s + j);
                for y in 0..h {
                    for xx in 0..w {
                        dst[y * w + xx] = src[(y * s + i) * ws + xx * s + j];
                    }
                }
            }
        }
    }
    out
}
