//! Round-trips maps through the on-disk formats: TNS1 tensors for
//! scores and embeddings, PGM for labels, PPM for images.

use pixel_affinity::io::{read_feature_map, read_image, read_label_map, write_feature_map, write_label_map, write_ppm};
use pixel_affinity::{FeatureMap, LabelMap};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("pixel-affinity-io");
    std::fs::create_dir_all(&dir)?;

    let scores = FeatureMap::from_fn(4, 5, 3, |r, c, ch| (r + 2 * c + ch) as f64 / 20.0)?;
    write_feature_map(dir.join("scores.tns"), &scores)?;
    let back = read_feature_map(dir.join("scores.tns"))?;
    // values are stored as f32
    println!("tensor round trip: shape {:?}, max error {:e}", back.shape(), back.max_abs_diff(&scores));

    let labels =
        LabelMap::from_fn(4, 5, |r, c| if r == 0 && c == 0 { LabelMap::DEFAULT_IGNORE } else { (c / 2) as u32 })?;
    write_label_map(dir.join("labels.pgm"), &labels)?;
    let lb = read_label_map(dir.join("labels.pgm"), LabelMap::DEFAULT_IGNORE)?;
    println!("labels round trip equal: {}, (0,0) ignored: {}", lb == labels, lb.is_ignored(0));

    write_ppm(dir.join("image.ppm"), &scores)?;
    let img = read_image(dir.join("image.ppm"))?;
    println!("ppm round trip: max error {:.4} (8-bit)", img.max_abs_diff(&scores));
    Ok(())
}
