use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Eigenvalues below `RANK_TOL * largest` count as zero variance.
const RANK_TOL: f64 = 1e-12;

/// Principal axes of the per-pixel channel vectors.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Variances along each axis, descending.
    pub variances: Vec<f64>,
    /// Unit axes, one per row, matching `variances`. Zero rows stand in for
    /// directions without variance.
    pub axes: Vec<Vec<f64>>,
}

/// Fits the top `k` principal axes of `e`'s channel covariance.
pub fn pca_fit(e: &FeatureMap, k: usize) -> Result<Pca> {
    let c = e.channels();
    if k == 0 || k > c {
        return Err(Error::param(format!("cannot take {k} components of {c} channels")));
    }
    let n = e.num_pixels() as f64;
    let mut mean = vec![0.0; c];
    for i in 0..e.num_pixels() {
        for (m, v) in mean.iter_mut().zip(e.pixel(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::<f64>::zeros(c, c);
    for i in 0..e.num_pixels() {
        let px = e.pixel(i);
        for a in 0..c {
            let da = px[a] - mean[a];
            for b in a..c {
                cov[(a, b)] += da * (px[b] - mean[b]);
            }
        }
    }
    for a in 0..c {
        for b in a..c {
            let v = cov[(a, b)] / n;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);

    let mut variances = Vec::with_capacity(k);
    let mut axes = Vec::with_capacity(k);
    for &j in order.iter().take(k) {
        let lambda = eig.eigenvalues[j];
        if top == 0.0 || lambda <= RANK_TOL * top {
            variances.push(0.0);
            axes.push(vec![0.0; c]);
            continue;
        }
        let mut axis: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        // fix the sign so the largest-magnitude coordinate is positive
        let pivot = axis.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        variances.push(lambda);
        axes.push(axis);
    }
    Ok(Pca { mean, variances, axes })
}

impl Pca {
    /// Centered coordinates of every pixel along the fitted axes.
    pub fn project(&self, e: &FeatureMap) -> Result<FeatureMap> {
        if e.channels() != self.mean.len() {
            return Err(Error::shape(format!("PCA was fitted on {} channels, got {}", self.mean.len(), e.channels())));
        }
        let k = self.axes.len();
        let mut out = FeatureMap::zeros(e.height(), e.width(), k);
        for i in 0..e.num_pixels() {
            let px = e.pixel(i);
            for (o, axis) in out.pixel_mut(i).iter_mut().zip(&self.axes) {
                *o = axis.iter().zip(px).zip(&self.mean).map(|((a, v), m)| a * (v - m)).sum();
            }
        }
        Ok(out)
    }
}

/// Projects onto the top `k` principal axes.
pub fn pca_project(e: &FeatureMap, k: usize) -> Result<FeatureMap> {
    pca_fit(e, k)?.project(e)
}

/// Three-channel false-color image of an embedding map: the top three
/// principal components, each min-max rescaled to `[0, 1]`. Components
/// without variance come out as 0.
pub fn pca_visualize(e: &FeatureMap) -> Result<FeatureMap> {
    if e.channels() < 3 {
        return Err(Error::shape(format!("visualization needs at least 3 channels, got {}", e.channels())));
    }
    let mut p = pca_project(e, 3)?;
    for ch in 0..3 {
        let vals = p.data().iter().skip(ch).step_by(3);
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        for v in p.data_mut().iter_mut().skip(ch).step_by(3) {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
    Ok(p)
}
