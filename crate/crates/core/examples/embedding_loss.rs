//! The pairwise hinge loss on a labelled map: same-label pairs are pulled
//! within `alpha`, different-label pairs pushed beyond `beta`.

use pixel_affinity::{
    embedding_loss, im2dist, im2parity, pair_loss, DistanceNorm, FeatureMap, LabelMap, LossParams, WindowSpec,
};

fn main() -> pixel_affinity::Result<()> {
    let labels = LabelMap::from_fn(8, 8, |_, c| u32::from(c >= 4))?;
    let w = WindowSpec::new(5, 1, false)?;
    let params = LossParams::default();
    let parity = im2parity(&labels, &w);

    // embeddings separated by `gap` along one axis
    for gap in [0.0, 1.0, 2.0, 3.0] {
        let e = FeatureMap::from_fn(8, 8, 2, |_, c, ch| if ch == 0 && c >= 4 { gap } else { 0.0 })?;
        let pl = pair_loss(&im2dist(&e, &w, DistanceNorm::L1), &parity, params)?;
        let el = embedding_loss(&e, &labels, &w, DistanceNorm::L1, params)?;
        println!(
            "gap {gap:.1}: pair-loss sum {:.3}, mean over {} pairs {:.4}, |grad|_max {:.3}",
            pl.total,
            el.pairs,
            el.total,
            el.grad.data().iter().fold(0.0f64, |m, g| m.max(g.abs()))
        );
    }
    Ok(())
}
