//! Layer primitives: channel-major tensors, 2-D convolution, max
//! pooling, spatial batch normalization, fully-connected layers and
//! ReLU, each with an analytic backward pass.

use crate::imaging::NormalizedImage;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A (channels, height, width) f64 tensor, channel-major row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_data(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    /// Interleaved HWC [0,1] image to channel-major tensor.
    pub fn from_normalized(img: &NormalizedImage) -> Self {
        let (h, w) = (img.height(), img.width());
        let mut t = Tensor3::zeros(3, h, w);
        for ch in 0..3 {
            for r in 0..h {
                for c in 0..w {
                    t.data[(ch * h + r) * w + c] = img.get(r, c, ch) as f64;
                }
            }
        }
        t
    }

    #[inline]
    pub fn at(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.data[(ch * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, ch: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(ch * self.h + y) * self.w + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// In-place per-channel standardization: `(v - mean[c]) / std[c]`.
    pub fn standardize_channels(&mut self, mean: &[f64; 3], std: &[f64; 3]) {
        debug_assert_eq!(self.c, 3);
        let plane = self.h * self.w;
        for ch in 0..self.c.min(3) {
            let (m, s) = (mean[ch], std[ch]);
            for v in &mut self.data[ch * plane..(ch + 1) * plane] {
                *v = (*v - m) / s;
            }
        }
    }
}

/// He-uniform draw: uniform in [-sqrt(6/fan_in), sqrt(6/fan_in)).
fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

/// 2-D convolution with zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out_c][in_c][k][k]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn init(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_c * k * k;
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight: he_uniform(rng, fan_in, out_c * fan_in),
            bias: vec![0.0; out_c],
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad).saturating_sub(self.k) / self.stride + 1;
        let ow = (w + 2 * self.pad).saturating_sub(self.k) / self.stride + 1;
        if h + 2 * self.pad < self.k || w + 2 * self.pad < self.k {
            (0, 0)
        } else {
            (oh, ow)
        }
    }

    #[inline]
    fn w_at(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((oc * self.in_c + ic) * self.k + ky) * self.k + kx]
    }

    pub fn forward(&self, x: &Tensor3) -> Tensor3 {
        debug_assert_eq!(x.c, self.in_c);
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut out = Tensor3::zeros(self.out_c, oh, ow);
        for oc in 0..self.out_c {
            let b = self.bias[oc];
            for oy in 0..oh {
                for ox in 0..ow {
                    *out.at_mut(oc, oy, ox) = b;
                }
            }
        }
        let (s, p, k) = (self.stride as i64, self.pad as i64, self.k as i64);
        for oc in 0..self.out_c {
            for ic in 0..self.in_c {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.w_at(oc, ic, ky as usize, kx as usize);
                        if wv == 0.0 {
                            continue;
                        }
                        // valid oy range: 0 <= oy*s + ky - p < h
                        let oy_lo = ((p - ky + s - 1).max(0) / s) as usize;
                        let oy_hi = (((x.h as i64 - 1 - ky + p) / s).min(oh as i64 - 1)).max(-1);
                        let ox_lo = ((p - kx + s - 1).max(0) / s) as usize;
                        let ox_hi = (((x.w as i64 - 1 - kx + p) / s).min(ow as i64 - 1)).max(-1);
                        if oy_hi < oy_lo as i64 || ox_hi < ox_lo as i64 {
                            continue;
                        }
                        for oy in oy_lo..=(oy_hi as usize) {
                            let iy = (oy as i64 * s + ky - p) as usize;
                            for ox in ox_lo..=(ox_hi as usize) {
                                let ix = (ox as i64 * s + kx - p) as usize;
                                *out.at_mut(oc, oy, ox) += wv * x.at(ic, iy, ix);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(
        &self,
        x: &Tensor3,
        grad_out: &Tensor3,
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Tensor3 {
        let (oh, ow) = (grad_out.h, grad_out.w);
        let mut gx = Tensor3::zeros(x.c, x.h, x.w);
        for (oc, gb) in grad_b.iter_mut().enumerate().take(self.out_c) {
            let mut acc = 0.0;
            for oy in 0..oh {
                for ox in 0..ow {
                    acc += grad_out.at(oc, oy, ox);
                }
            }
            *gb += acc;
        }
        let (s, p, k) = (self.stride as i64, self.pad as i64, self.k as i64);
        for oc in 0..self.out_c {
            for ic in 0..self.in_c {
                for ky in 0..k {
                    for kx in 0..k {
                        let oy_lo = ((p - ky + s - 1).max(0) / s) as usize;
                        let oy_hi = (((x.h as i64 - 1 - ky + p) / s).min(oh as i64 - 1)).max(-1);
                        let ox_lo = ((p - kx + s - 1).max(0) / s) as usize;
                        let ox_hi = (((x.w as i64 - 1 - kx + p) / s).min(ow as i64 - 1)).max(-1);
                        if oy_hi < oy_lo as i64 || ox_hi < ox_lo as i64 {
                            continue;
                        }
                        let widx =
                            ((oc * self.in_c + ic) * self.k + ky as usize) * self.k + kx as usize;
                        let wv = self.weight[widx];
                        let mut gw = 0.0;
                        for oy in oy_lo..=(oy_hi as usize) {
                            let iy = (oy as i64 * s + ky - p) as usize;
                            for ox in ox_lo..=(ox_hi as usize) {
                                let ix = (ox as i64 * s + kx - p) as usize;
                                let go = grad_out.at(oc, oy, ox);
                                gw += go * x.at(ic, iy, ix);
                                *gx.at_mut(ic, iy, ix) += go * wv;
                            }
                        }
                        grad_w[widx] += gw;
                    }
                }
            }
        }
        gx
    }
}

/// Max pooling; ties resolve to the first maximum in row-major scan order.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool2d {
    pub k: usize,
    pub stride: usize,
}

/// Flat input index of the selected maximum for every output element.
pub struct PoolCache {
    argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        if h < self.k || w < self.k {
            return (0, 0);
        }
        (
            (h - self.k) / self.stride + 1,
            (w - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Tensor3) -> (Tensor3, PoolCache) {
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut out = Tensor3::zeros(x.c, oh, ow);
        let mut argmax = vec![0usize; x.c * oh * ow];
        for c in 0..x.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..self.k {
                        let iy = oy * self.stride + ky;
                        for kx in 0..self.k {
                            let ix = ox * self.stride + kx;
                            let v = x.at(c, iy, ix);
                            if v > best {
                                best = v;
                                best_idx = (c * x.h + iy) * x.w + ix;
                            }
                        }
                    }
                    *out.at_mut(c, oy, ox) = best;
                    argmax[(c * oh + oy) * ow + ox] = best_idx;
                }
            }
        }
        (out, PoolCache { argmax })
    }

    pub fn backward(&self, x: &Tensor3, cache: &PoolCache, grad_out: &Tensor3) -> Tensor3 {
        let mut gx = Tensor3::zeros(x.c, x.h, x.w);
        for (o, &src) in cache.argmax.iter().enumerate() {
            gx.data[src] += grad_out.data[o];
        }
        gx
    }
}

/// Spatial batch normalization over a single image: each channel is
/// normalized with its own mean/variance over the spatial extent, then
/// scaled and shifted by learned gamma/beta. This is the batch-size-1
/// behavior of conventional batch norm and keeps forward passes pure.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

pub struct BnCache {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn init(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor3) -> (Tensor3, BnCache) {
        let n = (x.h * x.w) as f64;
        let mut out = Tensor3::zeros(x.c, x.h, x.w);
        let mut means = vec![0.0; x.c];
        let mut inv_stds = vec![0.0; x.c];
        for c in 0..x.c {
            let slice = &x.data[c * x.h * x.w..(c + 1) * x.h * x.w];
            let mean = slice.iter().sum::<f64>() / n;
            let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv_std = 1.0 / (var + self.eps).sqrt();
            means[c] = mean;
            inv_stds[c] = inv_std;
            let (g, b) = (self.gamma[c], self.beta[c]);
            let dst = &mut out.data[c * x.h * x.w..(c + 1) * x.h * x.w];
            for (o, v) in dst.iter_mut().zip(slice) {
                *o = g * (v - mean) * inv_std + b;
            }
        }
        (
            out,
            BnCache {
                mean: means,
                inv_std: inv_stds,
            },
        )
    }

    pub fn backward(
        &self,
        x: &Tensor3,
        cache: &BnCache,
        grad_out: &Tensor3,
        grad_gamma: &mut [f64],
        grad_beta: &mut [f64],
    ) -> Tensor3 {
        let n = (x.h * x.w) as f64;
        let mut gx = Tensor3::zeros(x.c, x.h, x.w);
        for c in 0..x.c {
            let span = c * x.h * x.w..(c + 1) * x.h * x.w;
            let xs = &x.data[span.clone()];
            let gos = &grad_out.data[span.clone()];
            let (mean, inv_std, g) = (cache.mean[c], cache.inv_std[c], self.gamma[c]);

            let mut sum_go = 0.0;
            let mut sum_go_xhat = 0.0;
            for (&go, &xv) in gos.iter().zip(xs) {
                let xhat = (xv - mean) * inv_std;
                sum_go += go;
                sum_go_xhat += go * xhat;
            }
            grad_beta[c] += sum_go;
            grad_gamma[c] += sum_go_xhat;

            let dst = &mut gx.data[span];
            for ((o, &go), &xv) in dst.iter_mut().zip(gos).zip(xs) {
                let xhat = (xv - mean) * inv_std;
                *o = g * inv_std / n * (n * go - sum_go - xhat * sum_go_xhat);
            }
        }
        gx
    }
}

/// Fully-connected layer, weights `[out][in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn init(in_f: usize, out_f: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            in_f,
            out_f,
            weight: he_uniform(rng, in_f, out_f * in_f),
            bias: vec![0.0; out_f],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_f);
        let mut out = Vec::with_capacity(self.out_f);
        for o in 0..self.out_f {
            let row = &self.weight[o * self.in_f..(o + 1) * self.in_f];
            let mut acc = self.bias[o];
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            out.push(acc);
        }
        out
    }

    pub fn backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Vec<f64> {
        let mut gx = vec![0.0; self.in_f];
        for o in 0..self.out_f {
            let go = grad_out[o];
            grad_b[o] += go;
            if go == 0.0 {
                continue;
            }
            let row = &self.weight[o * self.in_f..(o + 1) * self.in_f];
            let grow = &mut grad_w[o * self.in_f..(o + 1) * self.in_f];
            for i in 0..self.in_f {
                grow[i] += go * x[i];
                gx[i] += go * row[i];
            }
        }
        gx
    }
}

pub fn relu_tensor(x: &Tensor3) -> Tensor3 {
    Tensor3::from_data(
        x.c,
        x.h,
        x.w,
        x.data().iter().map(|&v| v.max(0.0)).collect(),
    )
}

/// ReLU gradient gate; the subgradient at exactly zero is zero.
pub fn relu_backward_tensor(x: &Tensor3, grad_out: &Tensor3) -> Tensor3 {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor3::from_data(x.c, x.h, x.w, data)
}

pub fn relu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn relu_backward_vec(x: &[f64], grad_out: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(grad_out)
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor3 {
        Tensor3::from_data(
            c,
            h,
            w,
            (0..c * h * w)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    /// Brute-force convolution for oracle comparison.
    fn conv_naive(conv: &Conv2d, x: &Tensor3) -> Tensor3 {
        let (oh, ow) = conv.out_hw(x.h, x.w);
        let mut out = Tensor3::zeros(conv.out_c, oh, ow);
        for oc in 0..conv.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias[oc];
                    for ic in 0..conv.in_c {
                        for ky in 0..conv.k {
                            for kx in 0..conv.k {
                                let iy =
                                    oy as i64 * conv.stride as i64 + ky as i64 - conv.pad as i64;
                                let ix =
                                    ox as i64 * conv.stride as i64 + kx as i64 - conv.pad as i64;
                                if iy < 0 || ix < 0 || iy >= x.h as i64 || ix >= x.w as i64 {
                                    continue;
                                }
                                acc +=
                                    conv.w_at(oc, ic, ky, kx) * x.at(ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    *out.at_mut(oc, oy, ox) = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_forward_matches_naive_oracle() {
        let mut r = rng(1);
        for (stride, pad, k) in [(1usize, 1usize, 3usize), (2, 1, 3), (1, 2, 5), (4, 2, 11)] {
            let conv = Conv2d::init(2, 3, k, stride, pad, &mut r);
            let x = random_tensor(2, 13, 17, &mut r);
            if conv.out_hw(x.h, x.w) == (0, 0) {
                continue;
            }
            let fast = conv.forward(&x);
            let slow = conv_naive(&conv, &x);
            assert_eq!(fast.c, slow.c);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad} k {k}");
            }
        }
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let mut r = rng(2);
        let mut conv = Conv2d::init(1, 1, 3, 1, 1, &mut r);
        conv.weight = vec![0.0; 9];
        conv.weight[4] = 1.0; // center tap
        conv.bias = vec![0.0];
        let x = random_tensor(1, 6, 8, &mut r);
        let y = conv.forward(&x);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn pool_takes_window_max_with_first_tie() {
        let mut x = Tensor3::zeros(1, 4, 4);
        for i in 0..16 {
            x.data[i] = (i % 7) as f64;
        }
        let pool = MaxPool2d { k: 2, stride: 2 };
        let (y, cache) = pool.forward(&x);
        assert_eq!((y.h, y.w), (2, 2));
        for oy in 0..2 {
            for ox in 0..2 {
                let window = [
                    x.at(0, oy * 2, ox * 2),
                    x.at(0, oy * 2, ox * 2 + 1),
                    x.at(0, oy * 2 + 1, ox * 2),
                    x.at(0, oy * 2 + 1, ox * 2 + 1),
                ];
                let max = window.iter().cloned().fold(f64::MIN, f64::max);
                assert_eq!(y.at(0, oy, ox), max);
            }
        }
        // backward routes gradient to the argmax only
        let mut go = Tensor3::zeros(1, 2, 2);
        go.data.fill(1.0);
        let gx = pool.backward(&x, &cache, &go);
        assert_eq!(gx.data().iter().filter(|&&v| v != 0.0).count(), 4);
    }

    #[test]
    fn batchnorm_normalizes_each_channel() {
        let mut r = rng(3);
        let bn = BatchNorm2d::init(2);
        let x = random_tensor(2, 5, 7, &mut r);
        let (y, _) = bn.forward(&x);
        for c in 0..2 {
            let slice = &y.data()[c * 35..(c + 1) * 35];
            let mean: f64 = slice.iter().sum::<f64>() / 35.0;
            let var: f64 = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 35.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // eps slightly shrinks it
        }
    }

    #[test]
    fn linear_forward_matches_hand_computation() {
        let fc = Linear {
            in_f: 2,
            out_f: 2,
            weight: vec![1.0, 2.0, -0.5, 0.25],
            bias: vec![0.5, -1.0],
        };
        let y = fc.forward(&[3.0, 4.0]);
        assert_eq!(y, vec![0.5 + 3.0 + 8.0, -1.0 - 1.5 + 1.0]);
    }

    /// Central-difference oracle for a scalar function of one layer input.
    fn numerical_input_grad<F: Fn(&Tensor3) -> f64>(x: &Tensor3, f: F, eps: f64) -> Vec<f64> {
        let mut g = Vec::with_capacity(x.data().len());
        let mut probe = x.clone();
        for i in 0..x.data().len() {
            let orig = probe.data[i];
            probe.data[i] = orig + eps;
            let up = f(&probe);
            probe.data[i] = orig - eps;
            let down = f(&probe);
            probe.data[i] = orig;
            g.push((up - down) / (2.0 * eps));
        }
        g
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut r = rng(4);
        let conv = Conv2d::init(2, 2, 3, 2, 1, &mut r);
        let x = random_tensor(2, 6, 8, &mut r);
        // scalar objective: sum of outputs
        let objective = |inp: &Tensor3| conv.forward(inp).data().iter().sum::<f64>();
        let (oh, ow) = conv.out_hw(x.h, x.w);
        let mut go = Tensor3::zeros(conv.out_c, oh, ow);
        go.data.fill(1.0);
        let mut gw = vec![0.0; conv.weight.len()];
        let mut gb = vec![0.0; conv.bias.len()];
        let gx = conv.backward(&x, &go, &mut gw, &mut gb);
        let gx_num = numerical_input_grad(&x, objective, 1e-5);
        for (a, b) in gx.data().iter().zip(&gx_num) {
            assert!((a - b).abs() < 1e-6, "analytic {a} vs numeric {b}");
        }
        // weight gradient via finite differences on a few coordinates
        let mut conv_probe = conv.clone();
        for widx in [0usize, 5, 17, conv.weight.len() - 1] {
            let orig = conv_probe.weight[widx];
            conv_probe.weight[widx] = orig + 1e-5;
            let up: f64 = conv_probe.forward(&x).data().iter().sum();
            conv_probe.weight[widx] = orig - 1e-5;
            let down: f64 = conv_probe.forward(&x).data().iter().sum();
            conv_probe.weight[widx] = orig;
            let num = (up - down) / 2e-5;
            assert!((gw[widx] - num).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut r = rng(5);
        let bn = BatchNorm2d::init(2);
        let x = random_tensor(2, 4, 5, &mut r);
        // weighted-sum objective so the gradient is non-uniform
        let weights: Vec<f64> = (0..x.data().len())
            .map(|i| ((i % 5) as f64) - 2.0)
            .collect();
        let objective = |inp: &Tensor3| {
            bn.forward(inp)
                .0
                .data()
                .iter()
                .zip(&weights)
                .map(|(v, w)| v * w)
                .sum::<f64>()
        };
        let (_, cache) = bn.forward(&x);
        let go = Tensor3::from_data(2, 4, 5, weights.clone());
        let mut gg = vec![0.0; 2];
        let mut gbeta = vec![0.0; 2];
        let gx = bn.backward(&x, &cache, &go, &mut gg, &mut gbeta);
        let gx_num = numerical_input_grad(&x, objective, 1e-6);
        for (a, b) in gx.data().iter().zip(&gx_num) {
            assert!((a - b).abs() < 1e-5, "analytic {a} vs numeric {b}");
        }
    }

    #[test]
    fn relu_zero_input_has_zero_gradient() {
        let x = Tensor3::from_data(1, 1, 3, vec![-1.0, 0.0, 2.0]);
        let go = Tensor3::from_data(1, 1, 3, vec![5.0, 5.0, 5.0]);
        let gx = relu_backward_tensor(&x, &go);
        assert_eq!(gx.data(), &[0.0, 0.0, 5.0]);
    }
}
