use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::EmbeddingModel;
use super::synth::Sample;
use crate::affinity::DistanceNorm;
use crate::error::{Error, Result};
use crate::loss::{embedding_loss, LossParams};
use crate::tensor::{FeatureMap, LabelMap, WindowSpec};

/// Hyperparameters of the SGD trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    pub seed: u64,
    pub window: WindowSpec,
    pub loss_params: LossParams,
    pub norm: DistanceNorm,
    /// Weight on the summed tap losses; the final embedding has weight 1.
    pub per_layer_loss_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            steps: 200,
            seed: 0,
            window: WindowSpec::new(9, 2, true).expect("valid window"),
            loss_params: LossParams::default(),
            norm: DistanceNorm::L1,
            per_layer_loss_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.steps == 0 {
            return Err(Error::param("steps must be at least 1"));
        }
        if !(self.per_layer_loss_weight >= 0.0 && self.per_layer_loss_weight.is_finite()) {
            return Err(Error::param(format!(
                "per-layer loss weight must be non-negative, got {}",
                self.per_layer_loss_weight
            )));
        }
        Ok(())
    }
}

/// Loss breakdown of one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    /// `final + per_layer_loss_weight * sum(taps)`.
    pub total: f64,
    pub final_loss: f64,
    pub taps: [f64; 3],
}

/// Model parameters plus the momentum buffer.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: EmbeddingModel,
    pub velocity: EmbeddingModel,
}

impl TrainState {
    pub fn new(model: EmbeddingModel) -> Self {
        let velocity = model.zeros_like();
        TrainState { model, velocity }
    }
}

/// Total loss and its exact parameter gradient for one labelled image.
pub fn loss_and_grads(
    model: &EmbeddingModel,
    image: &FeatureMap,
    labels: &LabelMap,
    cfg: &TrainConfig,
) -> Result<(StepLoss, EmbeddingModel)> {
    let cache = model.forward_cached(image)?;
    let fin = embedding_loss(&cache.embedding, labels, &cfg.window, cfg.norm, cfg.loss_params)?;
    let mut tap_losses = [0.0; 3];
    let mut tap_grads = Vec::with_capacity(3);
    for (k, tap) in [&cache.tap1, &cache.tap2, &cache.tap3].into_iter().enumerate() {
        let l = labels.resize_nearest(tap.height(), tap.width());
        let mut out = embedding_loss(tap, &l, &cfg.window, cfg.norm, cfg.loss_params)?;
        tap_losses[k] = out.total;
        out.grad.data_mut().iter_mut().for_each(|g| *g *= cfg.per_layer_loss_weight);
        tap_grads.push(out.grad);
    }
    let total = fin.total + cfg.per_layer_loss_weight * tap_losses.iter().sum::<f64>();
    let grads = model.backward_cached(
        image,
        &cache,
        Some(&fin.grad),
        [Some(&tap_grads[0]), Some(&tap_grads[1]), Some(&tap_grads[2])],
    )?;
    let loss = StepLoss { total, final_loss: fin.total, taps: tap_losses };
    Ok((loss, grads))
}

/// Loss only, without the backward pass.
pub fn evaluate_loss(
    model: &EmbeddingModel,
    image: &FeatureMap,
    labels: &LabelMap,
    cfg: &TrainConfig,
) -> Result<StepLoss> {
    let out = model.forward(image)?;
    let fin = embedding_loss(&out.embedding, labels, &cfg.window, cfg.norm, cfg.loss_params)?.total;
    let mut taps = [0.0; 3];
    for (k, tap) in out.taps.iter().enumerate() {
        let l = labels.resize_nearest(tap.height(), tap.width());
        taps[k] = embedding_loss(tap, &l, &cfg.window, cfg.norm, cfg.loss_params)?.total;
    }
    Ok(StepLoss { total: fin + cfg.per_layer_loss_weight * taps.iter().sum::<f64>(), final_loss: fin, taps })
}

/// Mean total loss over a dataset.
pub fn evaluate(model: &EmbeddingModel, data: &[Sample], cfg: &TrainConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::param("cannot evaluate on an empty dataset"));
    }
    let mut sum = 0.0;
    for s in data {
        sum += evaluate_loss(model, &s.image, &s.labels, cfg)?.total;
    }
    Ok(sum / data.len() as f64)
}

/// One SGD-with-momentum step: `v = mu * v - lr * g; theta += v`.
/// Returns the loss measured before the update.
pub fn train_step(
    state: &mut TrainState,
    image: &FeatureMap,
    labels: &LabelMap,
    cfg: &TrainConfig,
) -> Result<StepLoss> {
    let (loss, grads) = loss_and_grads(&state.model, image, labels, cfg)?;
    if !loss.total.is_finite() {
        return Err(Error::Diverged(loss.total, 0));
    }
    for ((_, v), (_, _, g)) in state.velocity.params_mut().into_iter().zip(grads.params()) {
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = cfg.momentum * *vi - cfg.learning_rate * gi;
        }
    }
    let velocity = &state.velocity;
    state.model.add_scaled(velocity, 1.0);
    Ok(loss)
}

/// Per-step losses of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub steps: Vec<StepLoss>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,total,final,tap1,tap2,tap3\n");
        for (i, l) in self.steps.iter().enumerate() {
            // `{:e}` round-trips f64 exactly, so equal CSVs mean equal runs.
            let _ = writeln!(s, "{i},{:e},{:e},{:e},{:e},{:e}", l.total, l.final_loss, l.taps[0], l.taps[1], l.taps[2]);
        }
        s
    }
}

/// Trains for `cfg.steps` single-image steps. Each pass over `data` visits
/// the images in a fresh order drawn from `cfg.seed`.
pub fn train(state: &mut TrainState, data: &[Sample], cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = History::default();
    for step in 0..cfg.steps {
        if step % data.len() == 0 {
            order.shuffle(&mut rng);
        }
        let s = &data[order[step % data.len()]];
        let loss = train_step(state, &s.image, &s.labels, cfg).map_err(|e| match e {
            Error::Diverged(v, _) => Error::Diverged(v, step),
            // parameters overflowed on the previous step
            Error::NonFinite(_) => Error::Diverged(f64::NAN, step),
            other => other,
        })?;
        if !state.model.is_finite() {
            return Err(Error::Diverged(f64::NAN, step));
        }
        history.steps.push(loss);
    }
    Ok(history)
}
