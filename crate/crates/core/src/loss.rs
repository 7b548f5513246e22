//! Label parity columns and the pairwise hinge embedding loss.
//!
//! A same-label pair pays `max(d - alpha, 0)`, a different-label pair pays
//! `max(beta - d, 0)`. Pairs touching the ignore label, out-of-bounds pairs
//! and the self-pair do not contribute.

use crate::affinity::DistanceNorm;
use crate::error::{Error, Result};
use crate::tensor::{ColumnMatrix, FeatureMap, LabelMap, WindowSpec};

/// Near (`alpha`) and far (`beta`) hinge thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    alpha: f64,
    beta: f64,
}

impl LossParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) || alpha < 0.0 || alpha >= beta {
            return Err(Error::param(format!(
                "loss thresholds need 0 <= alpha < beta, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(LossParams { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    #[inline]
    fn hinge(&self, d: f64, same: bool) -> f64 {
        if same {
            (d - self.alpha).max(0.0)
        } else {
            (self.beta - d).max(0.0)
        }
    }

    /// Subgradient of [`hinge`](Self::hinge); 0 at the thresholds.
    #[inline]
    fn hinge_grad(&self, d: f64, same: bool) -> f64 {
        if same {
            if d > self.alpha {
                1.0
            } else {
                0.0
            }
        } else if d < self.beta {
            -1.0
        } else {
            0.0
        }
    }
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams { alpha: 0.5, beta: 2.0 }
    }
}

/// 1 where the neighbor shares the center's label, 0 otherwise. Entries
/// touching an ignored pixel are invalid.
pub fn im2parity(l: &LabelMap, w: &WindowSpec) -> ColumnMatrix {
    let mut cols = ColumnMatrix::for_source(*w, l.height(), l.width(), 1);
    let labels = l.labels();
    for p in 0..cols.num_outputs() {
        let i = cols.center_source(p);
        for q in 0..cols.k() {
            let Some(j) = cols.neighbor(p, q) else { continue };
            if l.is_ignored(i) || l.is_ignored(j) {
                cols.invalidate(p, q);
            } else if labels[i] == labels[j] {
                cols.set_value(p, q, 1.0);
            }
        }
    }
    cols
}

/// Per-pair hinge losses and their sum.
#[derive(Debug, Clone)]
pub struct PairLoss {
    /// Unnormalized sum over contributing pairs.
    pub total: f64,
    pub per_pair: ColumnMatrix,
    /// Number of contributing pairs.
    pub pairs: usize,
}

fn contributing(d: &ColumnMatrix, parity: &ColumnMatrix, p: usize, q: usize) -> bool {
    d.is_valid(p, q) && parity.is_valid(p, q) && Some(q) != d.window().center_index()
}

fn check_pair_inputs(d: &ColumnMatrix, parity: &ColumnMatrix, what: &str) -> Result<()> {
    d.check_layout(parity, what)?;
    if d.depth() != 1 {
        return Err(Error::shape(format!("{what}: distance columns must have depth 1")));
    }
    Ok(())
}

pub fn pair_loss(d: &ColumnMatrix, parity: &ColumnMatrix, params: LossParams) -> Result<PairLoss> {
    check_pair_inputs(d, parity, "pair_loss")?;
    let mut per_pair = d.zeros_like();
    let mut total = 0.0;
    let mut pairs = 0;
    for p in 0..d.num_outputs() {
        for q in 0..d.k() {
            if !contributing(d, parity, p, q) {
                continue;
            }
            let l = params.hinge(d.value(p, q), parity.value(p, q) == 1.0);
            per_pair.set_value(p, q, l);
            total += l;
            pairs += 1;
        }
    }
    Ok(PairLoss { total, per_pair, pairs })
}

/// Derivative of the unnormalized total w.r.t. each distance.
pub fn pair_loss_backward(d: &ColumnMatrix, parity: &ColumnMatrix, params: LossParams) -> Result<ColumnMatrix> {
    check_pair_inputs(d, parity, "pair_loss_backward")?;
    let mut grad = d.zeros_like();
    for p in 0..d.num_outputs() {
        for q in 0..d.k() {
            if contributing(d, parity, p, q) {
                grad.set_value(p, q, params.hinge_grad(d.value(p, q), parity.value(p, q) == 1.0));
            }
        }
    }
    Ok(grad)
}

/// Result of [`embedding_loss`].
#[derive(Debug, Clone)]
pub struct EmbeddingLoss {
    /// Sum of pair losses divided by the number of contributing pairs.
    pub total: f64,
    pub unnormalized: f64,
    pub pairs: usize,
    /// Gradient of `total` w.r.t. the embeddings.
    pub grad: FeatureMap,
}

/// Fused distance, hinge loss and gradient over all windows of `e`.
pub fn embedding_loss(
    e: &FeatureMap,
    l: &LabelMap,
    w: &WindowSpec,
    norm: DistanceNorm,
    params: LossParams,
) -> Result<EmbeddingLoss> {
    if e.height() != l.height() || e.width() != l.width() {
        return Err(Error::shape(format!(
            "embedding_loss: embeddings are {}x{} but labels are {}x{}",
            e.height(),
            e.width(),
            l.height(),
            l.width()
        )));
    }
    let (height, width, channels) = e.shape();
    let r = w.radius() as isize;
    let stride = w.stride();
    let labels = l.labels();
    let mut grad = FeatureMap::zeros(height, width, channels);
    let mut pair = vec![0.0; channels];
    let mut total = 0.0;
    let mut pairs = 0usize;

    for cr in (0..height).step_by(stride) {
        for cc in (0..width).step_by(stride) {
            let i = cr * width + cc;
            if l.is_ignored(i) {
                continue;
            }
            for dr in -r..=r {
                let nr = cr as isize + dr;
                if nr < 0 || nr >= height as isize {
                    continue;
                }
                for dc in -r..=r {
                    let nc = cc as isize + dc;
                    if (dr == 0 && dc == 0) || nc < 0 || nc >= width as isize {
                        continue;
                    }
                    let j = nr as usize * width + nc as usize;
                    if l.is_ignored(j) {
                        continue;
                    }
                    let same = labels[i] == labels[j];
                    let (ei, ej) = (e.pixel(i), e.pixel(j));
                    let dist = norm.distance(ei, ej);
                    total += params.hinge(dist, same);
                    pairs += 1;
                    let g = params.hinge_grad(dist, same);
                    if g == 0.0 {
                        continue;
                    }
                    pair.fill(0.0);
                    match norm {
                        DistanceNorm::L1 => {
                            for ((o, a), b) in pair.iter_mut().zip(ei).zip(ej) {
                                *o = g * (a - b).signum() * f64::from((a - b) != 0.0);
                            }
                        }
                        DistanceNorm::L2 => {
                            if dist > 0.0 {
                                for ((o, a), b) in pair.iter_mut().zip(ei).zip(ej) {
                                    *o = g * (a - b) / dist;
                                }
                            }
                        }
                    }
                    for (dst, v) in grad.pixel_mut(i).iter_mut().zip(&pair) {
                        *dst += v;
                    }
                    for (dst, v) in grad.pixel_mut(j).iter_mut().zip(&pair) {
                        *dst -= v;
                    }
                }
            }
        }
    }

    if pairs == 0 {
        return Ok(EmbeddingLoss { total: 0.0, unnormalized: 0.0, pairs: 0, grad });
    }
    let inv = 1.0 / pairs as f64;
    grad.data_mut().iter_mut().for_each(|v| *v *= inv);
    Ok(EmbeddingLoss { total: total * inv, unnormalized: total, pairs, grad })
}
