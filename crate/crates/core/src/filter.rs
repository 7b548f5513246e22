//! Convolutional application of affinity masks.
//!
//! Each output is `sum_q m(i,q) x_j`, optionally divided by `sum_q m(i,q)`.
//! The same mask weight multiplies every channel of `x_j`.

use rayon::prelude::*;

use crate::affinity::{im2dist, mask_from_dist, DistanceNorm, MaskParams};
use crate::error::{Error, Result};
use crate::tensor::{ColumnMatrix, FeatureMap, WindowSpec};

/// Normalizers at or below this value are rejected.
pub const NORMALIZER_EPS: f64 = 1e-12;

fn check_mask(x: &FeatureMap, m: &ColumnMatrix, w: &WindowSpec, what: &str) -> Result<()> {
    m.check_source(w, x.height(), x.width(), what)?;
    if m.depth() != 1 {
        return Err(Error::shape(format!("{what}: mask must have depth 1, got {}", m.depth())));
    }
    Ok(())
}

/// Applies the mask `m` to `x` over the window `w`.
pub fn masked_filter(x: &FeatureMap, m: &ColumnMatrix, w: &WindowSpec, normalize: bool) -> Result<FeatureMap> {
    check_mask(x, m, w, "masked_filter")?;
    let mut y = FeatureMap::zeros(m.out_height(), m.out_width(), x.channels());
    filter_rows(x, m, normalize, &mut y)?;
    Ok(y)
}

/// [`masked_filter`] into a preallocated output map.
pub fn masked_filter_into(
    x: &FeatureMap,
    m: &ColumnMatrix,
    w: &WindowSpec,
    normalize: bool,
    y: &mut FeatureMap,
) -> Result<()> {
    check_mask(x, m, w, "masked_filter_into")?;
    if y.shape() != (m.out_height(), m.out_width(), x.channels()) {
        return Err(Error::shape("masked_filter_into: output has the wrong shape"));
    }
    filter_rows(x, m, normalize, y)
}

fn filter_rows(x: &FeatureMap, m: &ColumnMatrix, normalize: bool, y: &mut FeatureMap) -> Result<()> {
    let channels = x.channels();
    let out_w = m.out_width();
    let k = m.k();
    let stride = m.window().stride();
    let width = x.width();
    let offsets = m.offsets();
    let valid = m.valid_flags();
    let weights = m.values();
    let data = x.data();
    y.data_mut().par_chunks_mut(out_w * channels).enumerate().try_for_each(|(orow, row)| {
        let r = (orow * stride) as isize;
        for ocol in 0..out_w {
            let c = (ocol * stride) as isize;
            let acc = &mut row[ocol * channels..(ocol + 1) * channels];
            let base = (orow * out_w + ocol) * k;
            let i = (r as usize * width + c as usize) * channels;
            let center = &data[i..i + channels];
            let mut total = 0.0;
            for (q, &(dr, dc)) in offsets.iter().enumerate() {
                if !valid[base + q] {
                    continue;
                }
                let wq = weights[base + q];
                let j = ((r + dr) as usize * width + (c + dc) as usize) * channels;
                let neighbor = &data[j..j + channels];
                if normalize {
                    // centered form: constant inputs come back bit-exact
                    for ((a, v), x0) in acc.iter_mut().zip(neighbor).zip(center) {
                        *a += wq * (v - x0);
                    }
                } else {
                    for (a, v) in acc.iter_mut().zip(neighbor) {
                        *a += wq * v;
                    }
                }
                total += wq;
            }
            if normalize {
                if total <= NORMALIZER_EPS {
                    return Err(Error::DegenerateNormalizer { row: orow, col: ocol });
                }
                let inv = 1.0 / total;
                for (a, x0) in acc.iter_mut().zip(center) {
                    *a = x0 + *a * inv;
                }
            }
        }
        Ok(())
    })
}

/// Gradients of [`masked_filter`] w.r.t. the signal and the mask.
pub fn masked_filter_backward(
    x: &FeatureMap,
    m: &ColumnMatrix,
    w: &WindowSpec,
    normalize: bool,
    grad_y: &FeatureMap,
) -> Result<(FeatureMap, ColumnMatrix)> {
    check_mask(x, m, w, "masked_filter_backward")?;
    let channels = x.channels();
    if grad_y.shape() != (m.out_height(), m.out_width(), channels) {
        return Err(Error::shape(format!(
            "masked_filter_backward: upstream gradient is {:?}, expected {:?}",
            grad_y.shape(),
            (m.out_height(), m.out_width(), channels)
        )));
    }
    let y = if normalize { Some(masked_filter(x, m, w, true)?) } else { None };
    let mut grad_x = FeatureMap::zeros(x.height(), x.width(), channels);
    let mut grad_m = m.zeros_like();
    let k = m.k();
    for p in 0..m.num_outputs() {
        let g = grad_y.pixel(p);
        let (scale, yi) = match &y {
            Some(y) => {
                let total: f64 = (0..k).filter(|&q| m.is_valid(p, q)).map(|q| m.value(p, q)).sum();
                (1.0 / total, Some(y.pixel(p)))
            }
            None => (1.0, None),
        };
        for q in 0..k {
            let Some(j) = m.neighbor(p, q) else { continue };
            let wq = m.value(p, q);
            let xj = x.pixel(j);
            // d y_i / d m_q = (x_j - y_i) / Z for the normalized form, x_j otherwise
            let dm: f64 = match yi {
                Some(yi) => xj.iter().zip(yi).zip(g).map(|((a, b), gc)| (a - b) * gc).sum::<f64>() * scale,
                None => xj.iter().zip(g).map(|(a, gc)| a * gc).sum(),
            };
            grad_m.set_value(p, q, dm);
            let coeff = wq * scale;
            for (dst, gc) in grad_x.pixel_mut(j).iter_mut().zip(g) {
                *dst += coeff * gc;
            }
        }
    }
    Ok((grad_x, grad_m))
}

/// Applies a precomputed mask `times` times with normalization.
pub fn repeat_with_mask(x: &FeatureMap, m: &ColumnMatrix, w: &WindowSpec, times: usize) -> Result<FeatureMap> {
    if times == 0 {
        return Err(Error::param("repeat count must be at least 1"));
    }
    if w.stride() != 1 {
        return Err(Error::param("repeated filtering needs stride 1"));
    }
    let mut y = masked_filter(x, m, w, true)?;
    for _ in 1..times {
        y = masked_filter(&y, m, w, true)?;
    }
    Ok(y)
}

/// Builds the mask from the embeddings `e` once and applies it `times`
/// times to `x`. The embeddings are not recomputed between passes.
pub fn repeat_filter(
    x: &FeatureMap,
    e: &FeatureMap,
    w: &WindowSpec,
    p: MaskParams,
    norm: DistanceNorm,
    times: usize,
) -> Result<FeatureMap> {
    if !x.same_spatial(e) {
        return Err(Error::shape(format!(
            "repeat_filter: signal is {}x{} but embeddings are {}x{}",
            x.height(),
            x.width(),
            e.height(),
            e.width()
        )));
    }
    let m = mask_from_dist(&im2dist(e, w, norm), p);
    repeat_with_mask(x, &m, w, times)
}

/// Range-only bilateral filter: the mask is `exp(-lambda * |x_i - x_j|_2)`
/// computed from `x` itself.
pub fn bilateral_reference(x: &FeatureMap, lambda: f64, w: &WindowSpec) -> Result<FeatureMap> {
    if w.stride() != 1 {
        return Err(Error::param("bilateral filtering needs stride 1"));
    }
    let m = mask_from_dist(&im2dist(x, w, DistanceNorm::L2), MaskParams::new(lambda)?);
    masked_filter(x, &m, w, true)
}
