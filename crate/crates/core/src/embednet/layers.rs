//! Layers of the embedding network with exact backward passes.
//!
//! Convolutions are lowered through [`im2col`], whose invalid entries are 0,
//! so a "same" convolution sees zero padding at the border. The backward
//! pass returns through [`col2im_scatter`].

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{col2im_scatter, im2col, FeatureMap, WindowSpec};

/// A stride-1, same-size 2-D convolution.
///
/// Weights are laid out `[out][kernel row][kernel col][in]`, matching the
/// K ordering of the column matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub ksize: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, ksize: usize) -> Self {
        assert!(ksize % 2 == 1, "kernel size must be odd");
        Conv2d {
            in_channels,
            out_channels,
            ksize,
            weight: vec![0.0; out_channels * ksize * ksize * in_channels],
            bias: vec![0.0; out_channels],
        }
    }

    /// Fan-in scaled normal weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn he_normal(in_channels: usize, out_channels: usize, ksize: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, ksize);
        let fan_in = (ksize * ksize * in_channels) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        conv.weight.iter_mut().for_each(|w| *w = normal.sample(rng));
        conv
    }

    fn row_len(&self) -> usize {
        self.ksize * self.ksize * self.in_channels
    }

    fn window(&self) -> WindowSpec {
        WindowSpec::dense(self.ksize).expect("odd kernel")
    }

    fn check_input(&self, x: &FeatureMap) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        self.check_input(x)?;
        let cols = im2col(x, &self.window());
        let row_len = self.row_len();
        let mut y = FeatureMap::zeros(x.height(), x.width(), self.out_channels);
        for p in 0..x.num_pixels() {
            let col = &cols.values()[p * row_len..(p + 1) * row_len];
            for (o, out) in y.pixel_mut(p).iter_mut().enumerate() {
                let w = &self.weight[o * row_len..(o + 1) * row_len];
                *out = self.bias[o] + w.iter().zip(col).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(y)
    }

    /// Returns the input gradient and the parameter gradients (as a
    /// `Conv2d` of the same shape).
    pub fn backward(&self, x: &FeatureMap, grad_y: &FeatureMap) -> Result<(FeatureMap, Conv2d)> {
        self.check_input(x)?;
        if grad_y.shape() != (x.height(), x.width(), self.out_channels) {
            return Err(Error::shape("conv backward: upstream gradient has the wrong shape"));
        }
        let w = self.window();
        let cols = im2col(x, &w);
        let row_len = self.row_len();
        let mut grads = Conv2d::zeros(self.in_channels, self.out_channels, self.ksize);
        let mut grad_cols = cols.zeros_like();
        for p in 0..x.num_pixels() {
            let col = &cols.values()[p * row_len..(p + 1) * row_len];
            let gcol = &mut grad_cols.values_mut()[p * row_len..(p + 1) * row_len];
            for (o, &g) in grad_y.pixel(p).iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grads.bias[o] += g;
                let gw = &mut grads.weight[o * row_len..(o + 1) * row_len];
                for (a, b) in gw.iter_mut().zip(col) {
                    *a += g * b;
                }
                let wrow = &self.weight[o * row_len..(o + 1) * row_len];
                for (a, b) in gcol.iter_mut().zip(wrow) {
                    *a += g * b;
                }
            }
        }
        let grad_x = col2im_scatter(&grad_cols, &w, x.shape())?;
        Ok((grad_x, grads))
    }
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Passes the gradient where the pre-activation was positive.
pub fn relu_backward(pre: &FeatureMap, grad_y: &FeatureMap) -> FeatureMap {
    let mut g = grad_y.clone();
    for (v, &x) in g.data_mut().iter_mut().zip(pre.data()) {
        if x <= 0.0 {
            *v = 0.0;
        }
    }
    g
}

/// 2×2 max pooling with stride 2. Odd trailing rows/columns form partial
/// windows. Also returns, per output value, the flat input index that won
/// (first maximum in scan order).
pub fn max_pool2(x: &FeatureMap) -> (FeatureMap, Vec<usize>) {
    let (h, w, c) = x.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut y = FeatureMap::zeros(oh, ow, c);
    let mut argmax = vec![0usize; oh * ow * c];
    for r in 0..oh {
        for col in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for rr in 2 * r..(2 * r + 2).min(h) {
                    for cc in 2 * col..(2 * col + 2).min(w) {
                        let idx = (rr * w + cc) * c + ch;
                        if x.data()[idx] > best {
                            best = x.data()[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (r * ow + col) * c + ch;
                y.data_mut()[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (y, argmax)
}

pub fn max_pool2_backward(input_shape: (usize, usize, usize), argmax: &[usize], grad_y: &FeatureMap) -> FeatureMap {
    let (h, w, c) = input_shape;
    let mut g = FeatureMap::zeros(h, w, c);
    for (&idx, &v) in argmax.iter().zip(grad_y.data()) {
        g.data_mut()[idx] += v;
    }
    g
}

/// Linear interpolation taps `(lo, hi, weight_lo, weight_hi)` mapping an
/// output coordinate to the input grid (half-pixel centers, edge clamped).
fn interp_taps(input: usize, output: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            let t = src - lo as f64;
            (lo, hi, 1.0 - t, t)
        })
        .collect()
}

/// Fixed-weight bilinear resize to `height × width`.
pub fn upsample_bilinear(x: &FeatureMap, height: usize, width: usize) -> FeatureMap {
    let c = x.channels();
    let rows = interp_taps(x.height(), height);
    let cols = interp_taps(x.width(), width);
    let mut y = FeatureMap::zeros(height, width, c);
    for (r, &(r0, r1, wr0, wr1)) in rows.iter().enumerate() {
        for (col, &(c0, c1, wc0, wc1)) in cols.iter().enumerate() {
            let out = y.pixel_mut(r * width + col);
            for (ri, wr) in [(r0, wr0), (r1, wr1)] {
                for (ci, wc) in [(c0, wc0), (c1, wc1)] {
                    let wgt = wr * wc;
                    if wgt == 0.0 {
                        continue;
                    }
                    for (o, v) in out.iter_mut().zip(x.at(ri, ci)) {
                        *o += wgt * v;
                    }
                }
            }
        }
    }
    y
}

/// Adjoint of [`upsample_bilinear`].
pub fn upsample_bilinear_backward(input_shape: (usize, usize, usize), grad_y: &FeatureMap) -> FeatureMap {
    let (h, w, c) = input_shape;
    let rows = interp_taps(h, grad_y.height());
    let cols = interp_taps(w, grad_y.width());
    let mut g = FeatureMap::zeros(h, w, c);
    for (r, &(r0, r1, wr0, wr1)) in rows.iter().enumerate() {
        for (col, &(c0, c1, wc0, wc1)) in cols.iter().enumerate() {
            let up = grad_y.pixel(r * grad_y.width() + col);
            for (ri, wr) in [(r0, wr0), (r1, wr1)] {
                for (ci, wc) in [(c0, wc0), (c1, wc1)] {
                    let wgt = wr * wc;
                    if wgt == 0.0 {
                        continue;
                    }
                    for (o, v) in g.pixel_mut(ri * w + ci).iter_mut().zip(up) {
                        *o += wgt * v;
                    }
                }
            }
        }
    }
    g
}

/// Channel-wise concatenation of equally sized maps.
pub fn concat_channels(parts: &[&FeatureMap]) -> Result<FeatureMap> {
    let first = parts.first().ok_or_else(|| Error::shape("nothing to concatenate"))?;
    if parts.iter().any(|p| !p.same_spatial(first)) {
        return Err(Error::shape("concatenated maps must share height and width"));
    }
    let total: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(first.num_pixels() * total);
    for i in 0..first.num_pixels() {
        for p in parts {
            data.extend_from_slice(p.pixel(i));
        }
    }
    FeatureMap::new(first.height(), first.width(), total, data)
}

/// Splits a concatenated map back into pieces of the given channel counts.
pub fn split_channels(x: &FeatureMap, sizes: &[usize]) -> Vec<FeatureMap> {
    assert_eq!(sizes.iter().sum::<usize>(), x.channels());
    let mut offset = 0;
    sizes
        .iter()
        .map(|&n| {
            let mut part = FeatureMap::zeros(x.height(), x.width(), n);
            for i in 0..x.num_pixels() {
                part.pixel_mut(i).copy_from_slice(&x.pixel(i)[offset..offset + n]);
            }
            offset += n;
            part
        })
        .collect()
}
