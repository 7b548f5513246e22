//! Range-only bilateral filtering of a noisy step image, compared with a
//! plain box filter of the same window.

use pixel_affinity::{bilateral_reference, masked_filter, ColumnMatrix, FeatureMap, WindowSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rmse(a: &FeatureMap, b: &FeatureMap) -> f64 {
    let n = a.data().len() as f64;
    (a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt()
}

fn main() -> pixel_affinity::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clean = FeatureMap::from_fn(32, 32, 1, |r, c, _| if r + c < 32 { 0.2 } else { 0.8 })?;
    let noisy = FeatureMap::from_fn(32, 32, 1, |r, c, ch| clean.get(r, c, ch) + rng.random_range(-0.05..0.05))?;
    let w = WindowSpec::dense(5)?;

    let bilateral = bilateral_reference(&noisy, 20.0, &w)?;
    let ones = ColumnMatrix::from_fn(w, 32, 32, 1, |_, _, _| 1.0);
    let boxed = masked_filter(&noisy, &ones, &w, true)?;

    println!("rmse noisy     {:.4}", rmse(&noisy, &clean));
    println!("rmse box       {:.4}", rmse(&boxed, &clean));
    println!("rmse bilateral {:.4}", rmse(&bilateral, &clean));
    // across the edge the box filter blurs, the bilateral filter does not
    println!(
        "at the edge (15, 16): clean {:.3} box {:.3} bilateral {:.3}",
        clean.get(15, 16, 0),
        boxed.get(15, 16, 0),
        bilateral.get(15, 16, 0)
    );
    Ok(())
}
