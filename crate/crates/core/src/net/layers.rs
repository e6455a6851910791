//! Differentiable building blocks over single `C x H x W` feature maps.
//!
//! Each layer has a `forward` that returns its output plus whatever it needs
//! for the reverse pass, and a `backward` that accumulates parameter
//! gradients into a flat buffer and returns the gradient w.r.t. its input.
//! Parameters live in one flat slice owned by the model; layers only hold
//! offsets into it.

use super::real::{gemm, Real};

/// Spatial geometry of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// 2-D convolution with reflection padding `(k - 1) / 2` and optional stride.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub input: Dims,
    pub output: Dims,
    pub kernel: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
    /// For each `(ky, kx, out_pixel)` the source pixel in the input plane.
    gather: Vec<u32>,
}

impl Conv2d {
    pub fn new(input: Dims, out_channels: usize, kernel: usize, stride: usize, offset: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let pad = (kernel - 1) / 2;
        let out_h = (input.height + 2 * pad - kernel) / stride + 1;
        let out_w = (input.width + 2 * pad - kernel) / stride + 1;
        let output = Dims::new(out_channels, out_h, out_w);
        let pointwise = kernel == 1 && stride == 1;
        let gather = if pointwise {
            Vec::new()
        } else {
            let mut g = Vec::with_capacity(kernel * kernel * out_h * out_w);
            for ky in 0..kernel {
                for kx in 0..kernel {
                    for oy in 0..out_h {
                        let iy = reflect((oy * stride + ky) as isize - pad as isize, input.height);
                        for ox in 0..out_w {
                            let ix = reflect((ox * stride + kx) as isize - pad as isize, input.width);
                            g.push((iy * input.width + ix) as u32);
                        }
                    }
                }
            }
            g
        };
        let weights = out_channels * input.channels * kernel * kernel;
        Self { input, output, kernel, weight_offset: offset, bias_offset: offset + weights, gather }
    }

    pub fn param_count(&self) -> usize {
        self.output.channels * (self.input.channels * self.kernel * self.kernel + 1)
    }

    fn fan_in(&self) -> usize {
        self.input.channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.gather.is_empty()
    }

    /// Uniform `±1/sqrt(fan_in)` for weights and bias.
    pub fn init(&self, params: &mut [f64], mut uniform: impl FnMut() -> f64) {
        let bound = 1.0 / (self.fan_in() as f64).sqrt();
        let end = self.bias_offset + self.output.channels;
        for p in &mut params[self.weight_offset..end] {
            *p = (2.0 * uniform() - 1.0) * bound;
        }
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let kk = self.kernel * self.kernel;
        let in_plane = self.input.plane();
        let out_plane = self.output.plane();
        let mut col = vec![T::zero(); self.input.channels * kk * out_plane];
        for (c, dst) in col.chunks_exact_mut(kk * out_plane).enumerate() {
            let src = &x[c * in_plane..(c + 1) * in_plane];
            for (d, &g) in dst.iter_mut().zip(&self.gather) {
                *d = src[g as usize];
            }
        }
        col
    }

    fn col2im<T: Real>(&self, col: &[T]) -> Vec<T> {
        let kk = self.kernel * self.kernel;
        let in_plane = self.input.plane();
        let out_plane = self.output.plane();
        let mut x = vec![T::zero(); self.input.len()];
        for (c, src) in col.chunks_exact(kk * out_plane).enumerate() {
            let dst = &mut x[c * in_plane..(c + 1) * in_plane];
            for (&s, &g) in src.iter().zip(&self.gather) {
                dst[g as usize] += s;
            }
        }
        x
    }

    /// Returns the output and the unfolded input (or the input itself for 1x1).
    pub fn forward<T: Real>(&self, params: &[T], x: &[T]) -> (Vec<T>, Vec<T>) {
        debug_assert_eq!(x.len(), self.input.len());
        let col = if self.is_pointwise() { x.to_vec() } else { self.im2col(x) };
        let out_plane = self.output.plane();
        let cout = self.output.channels;
        let mut y = vec![T::zero(); cout * out_plane];
        for (o, row) in y.chunks_exact_mut(out_plane).enumerate() {
            let b = params[self.bias_offset + o];
            row.iter_mut().for_each(|v| *v = b);
        }
        let w = &params[self.weight_offset..self.bias_offset];
        gemm(cout, self.fan_in(), out_plane, T::one(), w, false, &col, false, T::one(), &mut y);
        (y, col)
    }

    pub fn backward<T: Real>(&self, params: &[T], col: &[T], grad_out: &[T], grads: &mut [T]) -> Vec<T> {
        let out_plane = self.output.plane();
        let cout = self.output.channels;
        let fan_in = self.fan_in();
        gemm(
            cout,
            out_plane,
            fan_in,
            T::one(),
            grad_out,
            false,
            col,
            true,
            T::one(),
            &mut grads[self.weight_offset..self.bias_offset],
        );
        for (o, row) in grad_out.chunks_exact(out_plane).enumerate() {
            grads[self.bias_offset + o] += row.iter().copied().sum::<T>();
        }
        let w = &params[self.weight_offset..self.bias_offset];
        let mut gcol = vec![T::zero(); fan_in * out_plane];
        gemm(fan_in, cout, out_plane, T::one(), w, true, grad_out, false, T::zero(), &mut gcol);
        if self.is_pointwise() {
            gcol
        } else {
            self.col2im(&gcol)
        }
    }
}

/// Per-channel normalization with statistics over the spatial plane of the
/// single image, followed by a learned affine map.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub dims: Dims,
    pub gamma_offset: usize,
    pub beta_offset: usize,
}

pub struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

const NORM_EPS: f64 = 1e-5;

impl BatchNorm {
    pub fn new(dims: Dims, offset: usize) -> Self {
        Self { dims, gamma_offset: offset, beta_offset: offset + dims.channels }
    }

    pub fn param_count(&self) -> usize {
        2 * self.dims.channels
    }

    pub fn init(&self, params: &mut [f64]) {
        let c = self.dims.channels;
        params[self.gamma_offset..self.gamma_offset + c].fill(1.0);
        params[self.beta_offset..self.beta_offset + c].fill(0.0);
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &[T]) -> (Vec<T>, NormCache<T>) {
        let plane = self.dims.plane();
        let count = T::lit(plane as f64);
        let eps = T::lit(NORM_EPS);
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(self.dims.channels);
        for (c, (src, (dst, xh))) in x
            .chunks_exact(plane)
            .zip(y.chunks_exact_mut(plane).zip(xhat.chunks_exact_mut(plane)))
            .enumerate()
        {
            let mean = src.iter().copied().sum::<T>() / count;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let is = (var + eps).sqrt().recip();
            let (g, b) = (params[self.gamma_offset + c], params[self.beta_offset + c]);
            for ((d, h), &v) in dst.iter_mut().zip(xh.iter_mut()).zip(src) {
                *h = (v - mean) * is;
                *d = g * *h + b;
            }
            inv_std.push(is);
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward<T: Real>(&self, params: &[T], cache: &NormCache<T>, grad_out: &[T], grads: &mut [T]) -> Vec<T> {
        let plane = self.dims.plane();
        let count = T::lit(plane as f64);
        let mut gx = vec![T::zero(); grad_out.len()];
        for (c, ((gy, xh), dst)) in grad_out
            .chunks_exact(plane)
            .zip(cache.xhat.chunks_exact(plane))
            .zip(gx.chunks_exact_mut(plane))
            .enumerate()
        {
            let sum_gy = gy.iter().copied().sum::<T>();
            let sum_gy_xhat = gy.iter().zip(xh).map(|(&g, &h)| g * h).sum::<T>();
            grads[self.gamma_offset + c] += sum_gy_xhat;
            grads[self.beta_offset + c] += sum_gy;
            let scale = params[self.gamma_offset + c] * cache.inv_std[c] / count;
            for ((d, &g), &h) in dst.iter_mut().zip(gy).zip(xh) {
                *d = scale * (count * g - sum_gy - h * sum_gy_xhat);
            }
        }
        gx
    }
}

pub fn leaky_relu<T: Real>(x: &[T], slope: f64) -> Vec<T> {
    let s = T::lit(slope);
    x.iter().map(|&v| if v > T::zero() { v } else { s * v }).collect()
}

/// `grad_out` scaled by the slope where the forward input was non-positive.
pub fn leaky_relu_backward<T: Real>(input: &[T], grad_out: &[T], slope: f64) -> Vec<T> {
    let s = T::lit(slope);
    input.iter().zip(grad_out).map(|(&v, &g)| if v > T::zero() { g } else { s * g }).collect()
}

pub fn sigmoid<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| (T::one() + (-v).exp()).recip()).collect()
}

pub fn sigmoid_backward<T: Real>(output: &[T], grad_out: &[T]) -> Vec<T> {
    output.iter().zip(grad_out).map(|(&y, &g)| g * y * (T::one() - y)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    #[default]
    Bilinear,
    Nearest,
}

/// 1-D interpolation taps for doubling a length-`n` axis
/// (half-pixel centres, edge-clamped).
fn upsample_taps(n: usize, mode: UpsampleMode) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| match mode {
            UpsampleMode::Nearest => (o / 2, o / 2, 0.0),
            UpsampleMode::Bilinear => {
                let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(n - 1);
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, src - i0 as f64)
            }
        })
        .collect()
}

/// Factor-2 spatial upsampling. A linear map, so backward is its transpose.
#[derive(Debug, Clone)]
pub struct Upsample {
    pub input: Dims,
    pub output: Dims,
    rows: Vec<(usize, usize, f64)>,
    cols: Vec<(usize, usize, f64)>,
}

impl Upsample {
    pub fn new(input: Dims, mode: UpsampleMode) -> Self {
        Self {
            input,
            output: Dims::new(input.channels, 2 * input.height, 2 * input.width),
            rows: upsample_taps(input.height, mode),
            cols: upsample_taps(input.width, mode),
        }
    }

    pub fn forward<T: Real>(&self, x: &[T]) -> Vec<T> {
        let (iw, ow) = (self.input.width, self.output.width);
        let mut y = vec![T::zero(); self.output.len()];
        for (src, dst) in x.chunks_exact(self.input.plane()).zip(y.chunks_exact_mut(self.output.plane())) {
            for (oy, &(r0, r1, ly)) in self.rows.iter().enumerate() {
                let (wy0, wy1) = (T::lit(1.0 - ly), T::lit(ly));
                for (ox, &(c0, c1, lx)) in self.cols.iter().enumerate() {
                    let (wx0, wx1) = (T::lit(1.0 - lx), T::lit(lx));
                    dst[oy * ow + ox] = wy0 * (wx0 * src[r0 * iw + c0] + wx1 * src[r0 * iw + c1])
                        + wy1 * (wx0 * src[r1 * iw + c0] + wx1 * src[r1 * iw + c1]);
                }
            }
        }
        y
    }

    pub fn backward<T: Real>(&self, grad_out: &[T]) -> Vec<T> {
        let (iw, ow) = (self.input.width, self.output.width);
        let mut gx = vec![T::zero(); self.input.len()];
        for (gy, dst) in grad_out.chunks_exact(self.output.plane()).zip(gx.chunks_exact_mut(self.input.plane())) {
            for (oy, &(r0, r1, ly)) in self.rows.iter().enumerate() {
                let (wy0, wy1) = (T::lit(1.0 - ly), T::lit(ly));
                for (ox, &(c0, c1, lx)) in self.cols.iter().enumerate() {
                    let (wx0, wx1) = (T::lit(1.0 - lx), T::lit(lx));
                    let g = gy[oy * ow + ox];
                    dst[r0 * iw + c0] += g * wy0 * wx0;
                    dst[r0 * iw + c1] += g * wy0 * wx1;
                    dst[r1 * iw + c0] += g * wy1 * wx0;
                    dst[r1 * iw + c1] += g * wy1 * wx1;
                }
            }
        }
        gx
    }
}
