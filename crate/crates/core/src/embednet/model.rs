use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    concat_channels, max_pool2, max_pool2_backward, relu, relu_backward, split_channels, upsample_bilinear,
    upsample_bilinear_backward, Conv2d,
};
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Channel counts of the three tapped stages.
pub const TAP_CHANNELS: [usize; 3] = [16, 16, 32];

/// Default output embedding width.
pub const DEFAULT_EMBED_DIM: usize = 16;

/// A small multi-scale embedding network:
///
/// ```text
/// image -> conv1 3x3 -> relu = tap1
///       -> conv2 3x3 -> relu = tap2
///       -> maxpool 2 -> conv3 3x3 -> relu = tap3 (half resolution)
/// [tap1, tap2, upsample(tap3)] -> fuse 1x1 -> final embedding
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
    pub fuse: Conv2d,
}

impl EmbeddingModel {
    /// He-initialized weights and zero biases from a fixed seed.
    pub fn new(in_channels: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3] = TAP_CHANNELS;
        EmbeddingModel {
            conv1: Conv2d::he_normal(in_channels, c1, 3, &mut rng),
            conv2: Conv2d::he_normal(c1, c2, 3, &mut rng),
            conv3: Conv2d::he_normal(c2, c3, 3, &mut rng),
            fuse: Conv2d::he_normal(c1 + c2 + c3, embed_dim, 1, &mut rng),
        }
    }

    pub fn zeros(in_channels: usize, embed_dim: usize) -> Self {
        let [c1, c2, c3] = TAP_CHANNELS;
        EmbeddingModel {
            conv1: Conv2d::zeros(in_channels, c1, 3),
            conv2: Conv2d::zeros(c1, c2, 3),
            conv3: Conv2d::zeros(c2, c3, 3),
            fuse: Conv2d::zeros(c1 + c2 + c3, embed_dim, 1),
        }
    }

    /// Same architecture, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_channels(), self.embed_dim())
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels
    }

    pub fn embed_dim(&self) -> usize {
        self.fuse.out_channels
    }

    fn layers(&self) -> [(&'static str, &Conv2d); 4] {
        [("conv1", &self.conv1), ("conv2", &self.conv2), ("conv3", &self.conv3), ("fuse", &self.fuse)]
    }

    fn layers_mut(&mut self) -> [(&'static str, &mut Conv2d); 4] {
        [("conv1", &mut self.conv1), ("conv2", &mut self.conv2), ("conv3", &mut self.conv3), ("fuse", &mut self.fuse)]
    }

    /// Named parameter tensors with their on-disk shapes. Weights are
    /// `[out, k, k, in]`, biases `[out]`.
    pub fn params(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::with_capacity(8);
        for (name, l) in self.layers() {
            out.push((
                format!("{name}.weight"),
                vec![l.out_channels, l.ksize, l.ksize, l.in_channels],
                l.weight.as_slice(),
            ));
            out.push((format!("{name}.bias"), vec![l.out_channels], l.bias.as_slice()));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::with_capacity(8);
        for (name, l) in self.layers_mut() {
            out.push((format!("{name}.weight"), &mut l.weight));
            out.push((format!("{name}.bias"), &mut l.bias));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, _, p)| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|(_, _, p)| p.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, parameter by parameter.
    pub fn add_scaled(&mut self, other: &EmbeddingModel, scale: f64) {
        for ((_, dst), (_, _, src)) in self.params_mut().into_iter().zip(other.params()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn forward(&self, image: &FeatureMap) -> Result<Forward> {
        Ok(self.forward_cached(image)?.into_forward())
    }

    pub(crate) fn forward_cached(&self, image: &FeatureMap) -> Result<Cache> {
        if image.channels() != self.in_channels() {
            return Err(Error::shape(format!(
                "model expects {} input channels, got {}",
                self.in_channels(),
                image.channels()
            )));
        }
        let pre1 = self.conv1.forward(image)?;
        let tap1 = relu(&pre1);
        let pre2 = self.conv2.forward(&tap1)?;
        let tap2 = relu(&pre2);
        let (pooled, pool_argmax) = max_pool2(&tap2);
        let pre3 = self.conv3.forward(&pooled)?;
        let tap3 = relu(&pre3);
        let up3 = upsample_bilinear(&tap3, image.height(), image.width());
        let fused_in = concat_channels(&[&tap1, &tap2, &up3])?;
        let embedding = self.fuse.forward(&fused_in)?;
        Ok(Cache { pre1, tap1, pre2, tap2, pooled, pool_argmax, pre3, tap3, fused_in, embedding })
    }

    /// Parameter gradients given upstream gradients on the final embedding
    /// and on each tap (any of which may be `None`).
    pub(crate) fn backward_cached(
        &self,
        image: &FeatureMap,
        cache: &Cache,
        grad_final: Option<&FeatureMap>,
        grad_taps: [Option<&FeatureMap>; 3],
    ) -> Result<EmbeddingModel> {
        let (h, w) = (image.height(), image.width());
        let [c1, c2, c3] = TAP_CHANNELS;
        let mut grads = self.zeros_like();
        let check = |g: &FeatureMap, like: &FeatureMap, what: &str| -> Result<()> {
            if g.shape() != like.shape() {
                return Err(Error::shape(format!("{what} gradient is {:?}, expected {:?}", g.shape(), like.shape())));
            }
            Ok(())
        };

        let mut g_tap1 = FeatureMap::zeros(h, w, c1);
        let mut g_tap2 = FeatureMap::zeros(h, w, c2);
        let mut g_tap3 = FeatureMap::zeros(cache.tap3.height(), cache.tap3.width(), c3);

        if let Some(gf) = grad_final {
            check(gf, &cache.embedding, "final embedding")?;
            let (g_in, g_fuse) = self.fuse.backward(&cache.fused_in, gf)?;
            grads.fuse = g_fuse;
            let parts = split_channels(&g_in, &[c1, c2, c3]);
            accumulate(&mut g_tap1, &parts[0]);
            accumulate(&mut g_tap2, &parts[1]);
            accumulate(&mut g_tap3, &upsample_bilinear_backward(cache.tap3.shape(), &parts[2]));
        }
        for (g, (acc, like, name)) in grad_taps.into_iter().zip([
            (&mut g_tap1, &cache.tap1, "tap1"),
            (&mut g_tap2, &cache.tap2, "tap2"),
            (&mut g_tap3, &cache.tap3, "tap3"),
        ]) {
            if let Some(g) = g {
                check(g, like, name)?;
                accumulate(acc, g);
            }
        }

        let g_pre3 = relu_backward(&cache.pre3, &g_tap3);
        let (g_pooled, g_conv3) = self.conv3.backward(&cache.pooled, &g_pre3)?;
        grads.conv3 = g_conv3;
        accumulate(&mut g_tap2, &max_pool2_backward(cache.tap2.shape(), &cache.pool_argmax, &g_pooled));

        let g_pre2 = relu_backward(&cache.pre2, &g_tap2);
        let (g_tap1_from2, g_conv2) = self.conv2.backward(&cache.tap1, &g_pre2)?;
        grads.conv2 = g_conv2;
        accumulate(&mut g_tap1, &g_tap1_from2);

        let g_pre1 = relu_backward(&cache.pre1, &g_tap1);
        let (_, g_conv1) = self.conv1.backward(image, &g_pre1)?;
        grads.conv1 = g_conv1;
        Ok(grads)
    }
}

fn accumulate(dst: &mut FeatureMap, src: &FeatureMap) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

/// Output of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Intermediate embeddings at their own resolutions.
    pub taps: Vec<FeatureMap>,
    /// Final embedding at input resolution.
    pub embedding: FeatureMap,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Cache {
    pre1: FeatureMap,
    pub tap1: FeatureMap,
    pre2: FeatureMap,
    pub tap2: FeatureMap,
    pooled: FeatureMap,
    pool_argmax: Vec<usize>,
    pre3: FeatureMap,
    pub tap3: FeatureMap,
    fused_in: FeatureMap,
    pub embedding: FeatureMap,
}

impl Cache {
    fn into_forward(self) -> Forward {
        Forward { taps: vec![self.tap1, self.tap2, self.tap3], embedding: self.embedding }
    }
}

pub fn forward(model: &EmbeddingModel, image: &FeatureMap) -> Result<Forward> {
    model.forward(image)
}

/// Exact parameter gradients for upstream gradients on the final embedding
/// and the three taps.
pub fn backward(
    model: &EmbeddingModel,
    image: &FeatureMap,
    grad_final: &FeatureMap,
    grad_taps: &[FeatureMap],
) -> Result<EmbeddingModel> {
    if grad_taps.len() != 3 {
        return Err(Error::shape(format!("expected 3 tap gradients, got {}", grad_taps.len())));
    }
    let cache = model.forward_cached(image)?;
    model.backward_cached(
        image,
        &cache,
        Some(grad_final),
        [Some(&grad_taps[0]), Some(&grad_taps[1]), Some(&grad_taps[2])],
    )
}
