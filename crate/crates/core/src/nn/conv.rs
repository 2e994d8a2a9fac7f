use rand::Rng;

use super::{leaky_relu, leaky_relu_backward, prefixed, Param, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stride-1 convolution with an odd square kernel and zero "same" padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `(out, in, k, k)`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-uniform weights scaled by `gain`, zero bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, gain: f64, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = gain * (6.0 / fan_in).sqrt();
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::uniform(&[out_channels, in_channels, kernel, kernel], bound, rng),
            bias: Param::zeros(&[out_channels]),
        }
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: Param::zeros(&[out_channels]),
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Unfolds `x` into a `(in*k*k, h*w)` matrix; `k == 1` needs no copy.
    fn im2col<'a>(&self, x: &'a Tensor<T>) -> std::borrow::Cow<'a, [T]> {
        if self.kernel == 1 {
            return std::borrow::Cow::Borrowed(x.data());
        }
        let (h, w) = x.spatial();
        let k = self.kernel as isize;
        let r = k / 2;
        let hw = h * w;
        let mut col = vec![T::zero(); self.patch_len() * hw];
        for ci in 0..self.in_channels {
            let plane = x.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci as isize * k + ky) * k + kx) as usize;
                    let dst = &mut col[row * hw..(row + 1) * hw];
                    let dy = ky - r;
                    let dx = kx - r;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let sx0 = (x0 as isize + dx) as usize;
                        dst[y * w + x0..y * w + x1].copy_from_slice(&src_row[sx0..sx0 + (x1 - x0)]);
                    }
                }
            }
        }
        std::borrow::Cow::Owned(col)
    }

    fn col2im(&self, col: &[T], h: usize, w: usize) -> Tensor<T> {
        let k = self.kernel as isize;
        let r = k / 2;
        let hw = h * w;
        let mut out = Tensor::zeros(self.in_channels, h, w);
        for ci in 0..self.in_channels {
            let plane = out.plane_mut(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci as isize * k + ky) * k + kx) as usize;
                    let src = &col[row * hw..(row + 1) * hw];
                    let dy = ky - r;
                    let dx = kx - r;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sx0 = (x0 as isize + dx) as usize;
                        let dst = &mut plane[sy as usize * w + sx0..sy as usize * w + sx0 + (x1 - x0)];
                        for (d, &s) in dst.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                            *d += s;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels(), self.in_channels, "conv input channels");
        let (h, w) = x.spatial();
        let hw = h * w;
        let mut out = Tensor::zeros(self.out_channels, h, w);
        for (o, &b) in self.bias.data.iter().enumerate() {
            out.plane_mut(o).fill(b);
        }
        let col = self.im2col(x);
        let kk = self.patch_len();
        T::gemm(
            self.out_channels,
            kk,
            hw,
            T::one(),
            &self.weight.data,
            kk as isize,
            1,
            &col,
            hw as isize,
            1,
            T::one(),
            out.data_mut(),
            hw as isize,
            1,
        );
        out
    }

    /// Accumulates parameter gradients into `grad` (if any) and returns the
    /// input gradient.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, grad: Option<&mut Self>) -> Tensor<T> {
        let (h, w) = x.spatial();
        let hw = h * w;
        let kk = self.patch_len();
        if let Some(g) = grad {
            let col = self.im2col(x);
            // dW += dY * col^T
            T::gemm(
                self.out_channels,
                hw,
                kk,
                T::one(),
                grad_out.data(),
                hw as isize,
                1,
                &col,
                1,
                hw as isize,
                T::one(),
                &mut g.weight.data,
                kk as isize,
                1,
            );
            for (o, b) in g.bias.data.iter_mut().enumerate() {
                *b += grad_out.plane(o).iter().copied().sum::<T>();
            }
        }
        // dcol = W^T * dY
        let mut dcol = vec![T::zero(); kk * hw];
        T::gemm(
            kk,
            self.out_channels,
            hw,
            T::one(),
            &self.weight.data,
            1,
            kk as isize,
            grad_out.data(),
            hw as isize,
            1,
            T::zero(),
            &mut dcol,
            hw as isize,
            1,
        );
        if self.kernel == 1 {
            Tensor::from_vec(self.in_channels, h, w, dcol).expect("sized")
        } else {
            self.col2im(&dcol, h, w)
        }
    }
}

impl<T: Scalar> Parameterized<T> for Conv2d<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// `x + conv2(act(conv1(x)))` with 3x3 convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

pub struct ResBlockCache<T> {
    input: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
}

impl<T: Scalar> ResBlock<T> {
    pub fn new(width: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv1: Conv2d::new(width, width, 3, 1.0, rng),
            // small residual branch keeps deep stacks near identity at init
            conv2: Conv2d::new(width, width, 3, 0.1, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.conv2.forward(&leaky_relu(&self.conv1.forward(x)));
        y.add_assign(x);
        y
    }

    pub fn forward_train(&self, x: Tensor<T>) -> (Tensor<T>, ResBlockCache<T>) {
        let pre = self.conv1.forward(&x);
        let act = leaky_relu(&pre);
        let mut y = self.conv2.forward(&act);
        y.add_assign(&x);
        (y, ResBlockCache { input: x, pre, act })
    }

    pub fn backward(&self, cache: &ResBlockCache<T>, grad_out: &Tensor<T>, mut grad: Option<&mut Self>) -> Tensor<T> {
        let mut g_act = self
            .conv2
            .backward(&cache.act, grad_out, grad.as_mut().map(|g| &mut g.conv2));
        leaky_relu_backward(&cache.pre, &mut g_act);
        let mut gx = self
            .conv1
            .backward(&cache.input, &g_act, grad.as_mut().map(|g| &mut g.conv1));
        gx.add_assign(grad_out);
        gx
    }
}

impl<T: Scalar> Parameterized<T> for ResBlock<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut v = prefixed("conv1", self.conv1.params());
        v.extend(prefixed("conv2", self.conv2.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        v
    }
}
