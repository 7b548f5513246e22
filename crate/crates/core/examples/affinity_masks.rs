//! Embedding distances and affinity masks around one pixel.
//!
//! A 6x6 map with two flat regions: neighbors across the edge get a
//! near-zero mask, neighbors on the same side get 1.

use pixel_affinity::{im2dist, mask_from_dist, DistanceNorm, FeatureMap, MaskParams, WindowSpec};

fn main() -> pixel_affinity::Result<()> {
    let e = FeatureMap::from_fn(6, 6, 2, |_, c, ch| if c < 3 { 0.0 } else { [0.3, -0.2][ch] })?;
    let w = WindowSpec::dense(3)?;

    for norm in [DistanceNorm::L1, DistanceNorm::L2] {
        let d = im2dist(&e, &w, norm);
        let m = mask_from_dist(&d, MaskParams::default());
        // pixel (2, 2) sits just left of the edge
        let p = 2 * 6 + 2;
        println!("{norm:?} around (2, 2):");
        for row in 0..3 {
            let cells: Vec<String> = (0..3)
                .map(|col| format!("d={:.3} m={:.4}", d.value(p, row * 3 + col), m.value(p, row * 3 + col)))
                .collect();
            println!("  {}", cells.join("  "));
        }
    }

    // corner pixels only see part of the window
    let d = im2dist(&e, &w, DistanceNorm::L1);
    let valid = (0..d.k()).filter(|&q| d.is_valid(0, q)).count();
    println!("valid neighbors at (0, 0): {valid} of {}", d.k());
    Ok(())
}
