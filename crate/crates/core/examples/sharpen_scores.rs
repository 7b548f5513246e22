//! Sharpens blurred, noisy class scores with masks from learned
//! embeddings and reports accuracy and mean IoU before and after.

use pixel_affinity::embednet::synth::corrupt_scores;
use pixel_affinity::embednet::{synth_dataset, train, EmbeddingModel, TrainConfig, TrainState};
use pixel_affinity::metrics::{argmax_labels, mean_iou, pixel_accuracy};
use pixel_affinity::{repeat_filter, DistanceNorm, MaskParams, WindowSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NUM_CLASSES: usize = 5;

fn main() -> pixel_affinity::Result<()> {
    let data = synth_dataset(1, 16, 32)?;
    let cfg = TrainConfig { steps: 600, seed: 1, ..TrainConfig::default() };
    let mut state = TrainState::new(EmbeddingModel::new(3, 16, 1));
    train(&mut state, &data, &cfg)?;

    let held = synth_dataset(1000, 5, 32)?;
    let w = WindowSpec::dense(9)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (i, s) in held.iter().enumerate() {
        let x = corrupt_scores(&s.labels, NUM_CLASSES, 2.0, 0.1, &mut rng)?;
        let e = state.model.forward(&s.image)?.embedding;
        let y = repeat_filter(&x, &e, &w, MaskParams::default(), DistanceNorm::L1, 7)?;
        let (before, after) = (argmax_labels(&x), argmax_labels(&y));
        println!(
            "image {i}: accuracy {:.4} -> {:.4}, mIoU {:.4} -> {:.4}",
            pixel_accuracy(&before, &s.labels)?,
            pixel_accuracy(&after, &s.labels)?,
            mean_iou(&before, &s.labels, NUM_CLASSES)?.mean,
            mean_iou(&after, &s.labels, NUM_CLASSES)?.mean
        );
    }
    Ok(())
}
