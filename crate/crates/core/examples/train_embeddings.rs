//! Trains the embedding network on synthetic shapes, saves a checkpoint
//! and writes PCA visualizations.
//!
//! Usage: `cargo run --release --example train_embeddings [out_dir] [steps]`

use std::path::PathBuf;

use pixel_affinity::embednet::{
    evaluate, load_checkpoint, pca_visualize, save_checkpoint, synth_dataset, train, EmbeddingModel, TrainConfig,
    TrainState,
};
use pixel_affinity::io::write_ppm;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("pixel-affinity-train"));
    let steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);

    let data = synth_dataset(0, 8, 32)?;
    let cfg = TrainConfig { steps, ..TrainConfig::default() };
    let mut state = TrainState::new(EmbeddingModel::new(3, 16, cfg.seed));
    let before = evaluate(&state.model, &data, &cfg)?;
    let history = train(&mut state, &data, &cfg)?;
    let after = evaluate(&state.model, &data, &cfg)?;
    println!("mean loss {before:.4} -> {after:.4} over {} steps", history.steps.len());

    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("loss.csv"), history.to_csv())?;
    save_checkpoint(out.join("checkpoint"), &state.model, &[("steps".into(), steps.to_string())])?;
    let (reloaded, _) = load_checkpoint(out.join("checkpoint"))?;
    // parameters are stored as f32
    let err = reloaded
        .params()
        .iter()
        .zip(state.model.params())
        .flat_map(|((_, _, a), (_, _, b))| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0f64, f64::max);
    println!("checkpoint round trip: max parameter error {err:e}");

    for (i, s) in data.iter().take(2).enumerate() {
        write_ppm(out.join(format!("image_{i}.ppm")), &s.image)?;
        let e = state.model.forward(&s.image)?.embedding;
        write_ppm(out.join(format!("embedding_{i}.ppm")), &pca_visualize(&e)?)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
