//! Masks from a boundary map: neighbors on the far side of a contour get
//! low weight, so filtering does not leak across it.

use pixel_affinity::filter::repeat_with_mask;
use pixel_affinity::{bresenham, im2interv, interv_mask, BoundaryMap, FeatureMap, WindowSpec};

fn main() -> pixel_affinity::Result<()> {
    println!("line (0,0) -> (5,3): {:?}", bresenham((0, 0), (5, 3)));

    let (h, w) = (16, 16);
    // a vertical contour on column 8
    let b = BoundaryMap::new(h, w, (0..h * w).map(|i| if i % w == 8 { 0.9 } else { 0.0 }).collect())?;
    let win = WindowSpec::dense(9)?;
    let interv = im2interv(&b, &win);
    let m = interv_mask(&interv, 5.0)?;

    let p = 8 * w + 6;
    let row: Vec<String> = (36..45).map(|q| format!("{:.3}", m.value(p, q))).collect();
    println!("mask row through the center of (8, 6): {}", row.join(" "));

    // a hard step in the scores survives seven passes
    let x = FeatureMap::from_fn(h, w, 1, |_, c, _| if c < 8 { 0.0 } else { 1.0 })?;
    let y = repeat_with_mask(&x, &m, &win, 7)?;
    println!(
        "after 7 passes: (8, 6) {:.3}  (8, 7) {:.3}  (8, 8) {:.3}  (8, 9) {:.3}",
        y.get(8, 6, 0),
        y.get(8, 7, 0),
        y.get(8, 8, 0),
        y.get(8, 9, 0)
    );
    Ok(())
}
