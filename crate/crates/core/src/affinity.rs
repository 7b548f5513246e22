//! Dense local embedding distances and exponential affinity masks.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{ColumnMatrix, FeatureMap, WindowSpec};

/// Vector norm used for the distance between two embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceNorm {
    /// Sum of absolute channel differences.
    #[default]
    L1,
    /// Euclidean distance.
    L2,
}

impl DistanceNorm {
    #[inline]
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceNorm::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            DistanceNorm::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    }

    /// Adds `scale * d(dist)/d(a)` into `out`. The derivative w.r.t. `b` is
    /// the negation.
    #[inline]
    fn accumulate_grad(self, a: &[f64], b: &[f64], dist: f64, scale: f64, out: &mut [f64]) {
        match self {
            DistanceNorm::L1 => {
                for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                    let d = x - y;
                    if d > 0.0 {
                        *o += scale;
                    } else if d < 0.0 {
                        *o -= scale;
                    }
                }
            }
            DistanceNorm::L2 => {
                if dist > 0.0 {
                    let s = scale / dist;
                    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                        *o += s * (x - y);
                    }
                }
            }
        }
    }
}

impl fmt::Display for DistanceNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceNorm::L1 => "l1",
            DistanceNorm::L2 => "l2",
        })
    }
}

impl FromStr for DistanceNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(DistanceNorm::L1),
            "l2" => Ok(DistanceNorm::L2),
            other => Err(Error::param(format!("unknown norm {other:?}, expected l1 or l2"))),
        }
    }
}

/// Mask hardness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    lambda: f64,
}

impl MaskParams {
    /// Hardness used for learned-embedding masks.
    pub const EMBEDDING_LAMBDA: f64 = 30.0;

    /// `lambda = 0` is accepted and yields the uniform (box) mask.
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::param(format!("mask hardness must be finite and >= 0, got {lambda}")));
        }
        Ok(MaskParams { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams { lambda: Self::EMBEDDING_LAMBDA }
    }
}

/// Distance between each center embedding and every neighbor in its window.
pub fn im2dist(e: &FeatureMap, w: &WindowSpec, norm: DistanceNorm) -> ColumnMatrix {
    let mut cols = ColumnMatrix::for_source(*w, e.height(), e.width(), 1);
    fill_im2dist(e, norm, &mut cols);
    cols
}

/// [`im2dist`] into preallocated columns.
pub fn im2dist_into(e: &FeatureMap, w: &WindowSpec, norm: DistanceNorm, cols: &mut ColumnMatrix) -> Result<()> {
    cols.check_source(w, e.height(), e.width(), "im2dist_into")?;
    if cols.depth() != 1 {
        return Err(Error::shape("im2dist_into: distance columns must have depth 1"));
    }
    fill_im2dist(e, norm, cols);
    Ok(())
}

fn fill_im2dist(e: &FeatureMap, norm: DistanceNorm, cols: &mut ColumnMatrix) {
    let k = cols.k();
    let out_w = cols.out_width();
    let stride = cols.window().stride();
    let width = e.width();
    let (offsets, valid, values) = cols.parts_mut();
    values.par_chunks_mut(out_w * k).enumerate().for_each(|(orow, row)| {
        let r = (orow * stride) as isize;
        for ocol in 0..out_w {
            let c = (ocol * stride) as isize;
            let center = e.pixel(r as usize * width + c as usize);
            let base = ocol * k;
            for (q, &(dr, dc)) in offsets.iter().enumerate() {
                row[base + q] = if valid[(orow * out_w + ocol) * k + q] {
                    let j = (r + dr) as usize * width + (c + dc) as usize;
                    norm.distance(center, e.pixel(j))
                } else {
                    0.0
                };
            }
        }
    });
}

/// Gradient of a scalar loss w.r.t. the embeddings, given its gradient
/// w.r.t. the distance columns. Each pair contributes to both endpoints.
pub fn im2dist_backward(
    e: &FeatureMap,
    w: &WindowSpec,
    norm: DistanceNorm,
    grad_out: &ColumnMatrix,
) -> Result<FeatureMap> {
    grad_out.check_source(w, e.height(), e.width(), "im2dist_backward")?;
    if grad_out.depth() != 1 {
        return Err(Error::shape("im2dist_backward: gradient columns must have depth 1"));
    }
    let channels = e.channels();
    let mut grad = FeatureMap::zeros(e.height(), e.width(), channels);
    let mut pair = vec![0.0; channels];
    for p in 0..grad_out.num_outputs() {
        let i = grad_out.center_source(p);
        for q in 0..grad_out.k() {
            let g = grad_out.value(p, q);
            if g == 0.0 {
                continue;
            }
            let Some(j) = grad_out.neighbor(p, q) else { continue };
            if i == j {
                continue;
            }
            let (ei, ej) = (e.pixel(i), e.pixel(j));
            let d = norm.distance(ei, ej);
            pair.fill(0.0);
            norm.accumulate_grad(ei, ej, d, g, &mut pair);
            for (dst, v) in grad.pixel_mut(i).iter_mut().zip(&pair) {
                *dst += v;
            }
            for (dst, v) in grad.pixel_mut(j).iter_mut().zip(&pair) {
                *dst -= v;
            }
        }
    }
    Ok(grad)
}

/// `exp(-lambda * d)` on valid entries, 0 elsewhere. Distances are clamped
/// at 0 first.
pub fn mask_from_dist(d: &ColumnMatrix, p: MaskParams) -> ColumnMatrix {
    let lambda = p.lambda;
    d.map_valid(|v| (-lambda * v.max(0.0)).exp())
}

/// Gradients of the mask w.r.t. the distances and the hardness.
///
/// `grad_lambda` is accumulated in pixel-then-K order.
pub fn mask_backward(d: &ColumnMatrix, p: MaskParams, grad_out: &ColumnMatrix) -> Result<(ColumnMatrix, f64)> {
    d.check_layout(grad_out, "mask_backward")?;
    let lambda = p.lambda;
    let mut grad_d = d.zeros_like();
    let mut grad_lambda = 0.0;
    let k = d.k();
    for pixel in 0..d.num_outputs() {
        for q in 0..k {
            if !d.is_valid(pixel, q) {
                continue;
            }
            let g = grad_out.value(pixel, q);
            let dist = d.value(pixel, q);
            if dist < 0.0 {
                // clamped region: the mask is constant there
                continue;
            }
            let m = (-lambda * dist).exp();
            grad_d.set_value(pixel, q, -lambda * m * g);
            grad_lambda += -dist * m * g;
        }
    }
    Ok((grad_d, grad_lambda))
}
