//! Pretraining and adapter training with plain seeded SGD.
//!
//! Determinism contract: (seed, data, config) fully determine every output.
//! Initialization and batch shuffling draw from separate ChaCha streams of
//! the same seed, so adding epochs never changes the starting point.
//!
//! `train_augmented` pairs one clean batch with one adversarial batch per
//! step and weights their gradients `alpha` / `1 - alpha`. Its two shuffle
//! generators are seeded exactly like `train_adapter`'s, so at `alpha = 1`
//! (or `0`, with equally sized sets) the parameter trajectory is bit-identical
//! to training on the clean (or adversarial) set alone.

use rand::prelude::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{
    adapter_gradient, backbone_gradient, example_loss, tokenize, AdapterDelta, BackboneParams,
    ModelDims, TokenSeq, DEFAULT_MAX_LEN,
};

/// Hyperparameters for every training entry point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight on the clean loss in `train_augmented`; ignored elsewhere.
    pub alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 150,
            batch_size: 16,
            seed: 0,
            alpha: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0,1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Mean training loss per epoch, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    pub epoch_mean_loss: Vec<f64>,
}

// Stream ids for the per-seed ChaCha generators. Initialization and batch
// order must never share a stream: trajectory-equality tests rely on the
// shuffle stream being consumed identically across entry points.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn tokenize_all(dataset: &LabeledDataset, vocab: usize) -> Vec<(TokenSeq, usize)> {
    dataset
        .items
        .iter()
        .map(|it| (tokenize(&it.text, vocab, DEFAULT_MAX_LEN), it.label))
        .collect()
}

/// Shuffled index order for one epoch.
fn epoch_order(n: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Cycling batch source: yields index batches, reshuffling on wraparound.
struct BatchCycle {
    order: Vec<usize>,
    pos: usize,
}

impl BatchCycle {
    fn new(n: usize, rng: &mut ChaCha20Rng) -> Self {
        BatchCycle {
            order: epoch_order(n, rng),
            pos: 0,
        }
    }

    fn next(&mut self, batch_size: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order = epoch_order(self.order.len(), rng);
            self.pos = 0;
        }
        let end = (self.pos + batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// Random backbone initialization: uniform weights scaled per layer, zero
/// biases. Drawn entirely from the init stream of `seed`.
pub fn init_backbone(dims: &ModelDims, seed: u64) -> BackboneParams {
    let mut rng = rng_for(seed, STREAM_INIT);
    let mut b = BackboneParams::zeros(dims);
    let fill = |m: &mut Mat, scale: f64, rng: &mut ChaCha20Rng| {
        for v in m.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    };
    let hidden_scale = 1.0 / (dims.hidden as f64).sqrt();
    fill(&mut b.embedding, 0.1, &mut rng);
    fill(&mut b.layer1, hidden_scale, &mut rng);
    fill(&mut b.layer2, hidden_scale, &mut rng);
    fill(&mut b.head, 0.1, &mut rng);
    b
}

/// Near-zero adapter initialization: bottleneck weights and biases uniform in
/// ±1e-3, head delta exactly zero. Drawn from the init stream of `seed`.
pub fn init_adapter(dims: &ModelDims, seed: u64, tag: &str) -> AdapterDelta {
    let mut rng = rng_for(seed, STREAM_INIT);
    let mut a = AdapterDelta::zeros(dims, tag);
    let fill = |m: &mut Mat, rng: &mut ChaCha20Rng| {
        for v in m.data_mut() {
            *v = rng.random_range(-1e-3..1e-3);
        }
    };
    for block in [&mut a.block1, &mut a.block2] {
        fill(&mut block.down, &mut rng);
        for v in &mut block.down_bias {
            *v = rng.random_range(-1e-3..1e-3);
        }
        fill(&mut block.up, &mut rng);
        for v in &mut block.up_bias {
            *v = rng.random_range(-1e-3..1e-3);
        }
    }
    // head_delta and head_bias_delta stay exactly zero.
    a
}

fn check_dataset(dataset: &LabeledDataset, classes: usize) -> Result<()> {
    dataset.validate(classes)
}

/// Train every backbone parameter from a random initialization.
pub fn pretrain_backbone(
    dims: &ModelDims,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<BackboneParams> {
    pretrain_backbone_with_stats(dims, dataset, cfg).map(|(b, _)| b)
}

pub fn pretrain_backbone_with_stats(
    dims: &ModelDims,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(BackboneParams, TrainStats)> {
    dims.validate()?;
    cfg.validate()?;
    check_dataset(dataset, dims.classes)?;
    let init = init_backbone(dims, cfg.seed);
    finetune_backbone_with_stats(&init, dataset, cfg)
}

/// Continue full-model SGD from existing weights. Used by the full
/// fine-tuning baseline; `pretrain_backbone` is this plus a fresh init.
pub fn finetune_backbone(
    init: &BackboneParams,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<BackboneParams> {
    finetune_backbone_with_stats(init, dataset, cfg).map(|(b, _)| b)
}

pub fn finetune_backbone_with_stats(
    init: &BackboneParams,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(BackboneParams, TrainStats)> {
    cfg.validate()?;
    check_dataset(dataset, init.classes())?;
    let examples = tokenize_all(dataset, init.vocab());
    let mut params = init.clone();
    let mut shuffle_rng = rng_for(cfg.seed, STREAM_SHUFFLE);
    let mut stats = TrainStats {
        epoch_mean_loss: Vec::with_capacity(cfg.epochs),
    };
    let dims = init.dims();
    for epoch in 0..cfg.epochs {
        let order = epoch_order(examples.len(), &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad = BackboneParams::zeros(&dims);
            let mut batch_loss = 0.0;
            for &i in batch {
                let (tokens, label) = &examples[i];
                let (loss, g) = backbone_gradient(&params, tokens, *label)
                    .map_err(|e| train_err(epoch, batch_idx, e))?;
                batch_loss += loss;
                grad.add_scaled(&g, 1.0);
            }
            let inv = 1.0 / batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Train {
                    epoch,
                    batch: batch_idx,
                    detail: format!("non-finite batch loss {batch_loss}"),
                });
            }
            epoch_loss += batch_loss;
            params.add_scaled(&grad, -cfg.learning_rate * inv);
        }
        stats.epoch_mean_loss.push(epoch_loss / examples.len() as f64);
    }
    Ok((params, stats))
}

fn train_err(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::Train { .. } => e,
        other => Error::Train {
            epoch,
            batch,
            detail: other.to_string(),
        },
    }
}

/// Train an adapter against a frozen backbone. The backbone is borrowed
/// immutably and never copied into the optimizer state: it cannot change.
pub fn train_adapter(
    backbone: &BackboneParams,
    dims: &ModelDims,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    tag: &str,
) -> Result<AdapterDelta> {
    train_adapter_with_stats(backbone, dims, dataset, cfg, tag).map(|(a, _)| a)
}

pub fn train_adapter_with_stats(
    backbone: &BackboneParams,
    dims: &ModelDims,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    tag: &str,
) -> Result<(AdapterDelta, TrainStats)> {
    dims.validate()?;
    let start = init_adapter(dims, cfg.seed, tag);
    train_adapter_loop(backbone, dims, start, dataset, cfg)
}

/// Continue adapter training from an existing adapter instead of the
/// near-zero init — the usual recipe for adversarial fine-tuning, which
/// starts from the clean solution rather than from scratch.
pub fn train_adapter_warm(
    backbone: &BackboneParams,
    dims: &ModelDims,
    init: &AdapterDelta,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    tag: &str,
) -> Result<AdapterDelta> {
    dims.validate()?;
    let mut start = init.clone();
    start.tag = tag.to_string();
    train_adapter_loop(backbone, dims, start, dataset, cfg).map(|(a, _)| a)
}

fn train_adapter_loop(
    backbone: &BackboneParams,
    dims: &ModelDims,
    start: AdapterDelta,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(AdapterDelta, TrainStats)> {
    cfg.validate()?;
    check_dims_match(backbone, dims)?;
    check_dataset(dataset, backbone.classes())?;
    let examples = tokenize_all(dataset, backbone.vocab());
    let mut adapter = start;
    let mut shuffle_rng = rng_for(cfg.seed, STREAM_SHUFFLE);
    let mut stats = TrainStats {
        epoch_mean_loss: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let order = epoch_order(examples.len(), &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = batch_adapter_gradient(backbone, &adapter, &examples, batch)
                .map_err(|e| train_err(epoch, batch_idx, e))?;
            epoch_loss += loss * batch.len() as f64;
            adapter.add_scaled(&grad, -cfg.learning_rate);
        }
        stats.epoch_mean_loss.push(epoch_loss / examples.len() as f64);
    }
    Ok((adapter, stats))
}

/// Mean loss and mean gradient over one batch of pre-tokenized examples.
fn batch_adapter_gradient(
    backbone: &BackboneParams,
    adapter: &AdapterDelta,
    examples: &[(TokenSeq, usize)],
    batch: &[usize],
) -> Result<(f64, AdapterDelta)> {
    let dims = ModelDims {
        vocab: backbone.vocab(),
        hidden: adapter.hidden(),
        bottleneck: adapter.bottleneck(),
        classes: adapter.classes(),
    };
    let mut grad = AdapterDelta::zeros(&dims, "");
    let mut total_loss = 0.0;
    for &i in batch {
        let (tokens, label) = &examples[i];
        let (loss, g) = adapter_gradient(backbone, adapter, tokens, *label)?;
        total_loss += loss;
        grad.add_scaled(&g, 1.0);
    }
    if !total_loss.is_finite() {
        return Err(Error::NonFinite {
            location: "batch loss",
        });
    }
    let inv = 1.0 / batch.len() as f64;
    grad.scale_in_place(inv);
    Ok((total_loss * inv, grad))
}

/// Adversarial training: each step draws one clean batch and one adversarial
/// batch and descends `alpha * grad_clean + (1 - alpha) * grad_adv`.
///
/// Epoch length follows the clean set; the adversarial side cycles with
/// reshuffling. At `alpha` exactly 1 (or exactly 0, when the two sets have
/// equal sizes) the update reduces to the single-set gradient with no
/// floating-point residue from the other side.
pub fn train_augmented(
    backbone: &BackboneParams,
    dims: &ModelDims,
    clean: &LabeledDataset,
    adv: &LabeledDataset,
    cfg: &TrainConfig,
    tag: &str,
) -> Result<AdapterDelta> {
    train_augmented_with_stats(backbone, dims, clean, adv, cfg, tag).map(|(a, _)| a)
}

pub fn train_augmented_with_stats(
    backbone: &BackboneParams,
    dims: &ModelDims,
    clean: &LabeledDataset,
    adv: &LabeledDataset,
    cfg: &TrainConfig,
    tag: &str,
) -> Result<(AdapterDelta, TrainStats)> {
    dims.validate()?;
    cfg.validate()?;
    check_dims_match(backbone, dims)?;
    check_dataset(clean, backbone.classes())?;
    check_dataset(adv, backbone.classes())?;
    let clean_ex = tokenize_all(clean, backbone.vocab());
    let adv_ex = tokenize_all(adv, backbone.vocab());
    let mut adapter = init_adapter(dims, cfg.seed, tag);
    // Both sides get their own shuffle generator, each seeded exactly like
    // train_adapter's, so either endpoint of alpha replays a one-set run.
    let mut clean_rng = rng_for(cfg.seed, STREAM_SHUFFLE);
    let mut adv_rng = rng_for(cfg.seed, STREAM_SHUFFLE);
    let mut stats = TrainStats {
        epoch_mean_loss: Vec::with_capacity(cfg.epochs),
    };
    let mut adv_cycle = BatchCycle::new(adv_ex.len(), &mut adv_rng);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(clean_ex.len(), &mut clean_rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss_c, grad_c) = batch_adapter_gradient(backbone, &adapter, &clean_ex, batch)
                .map_err(|e| train_err(epoch, batch_idx, e))?;
            let adv_batch = adv_cycle.next(cfg.batch_size, &mut adv_rng);
            let (loss_a, grad_a) =
                batch_adapter_gradient(backbone, &adapter, &adv_ex, &adv_batch)
                    .map_err(|e| train_err(epoch, batch_idx, e))?;
            if cfg.alpha == 1.0 {
                adapter.add_scaled(&grad_c, -cfg.learning_rate);
            } else if cfg.alpha == 0.0 {
                adapter.add_scaled(&grad_a, -cfg.learning_rate);
            } else {
                adapter.add_scaled(&grad_c, -cfg.learning_rate * cfg.alpha);
                adapter.add_scaled(&grad_a, -cfg.learning_rate * (1.0 - cfg.alpha));
            }
            epoch_loss +=
                (cfg.alpha * loss_c + (1.0 - cfg.alpha) * loss_a) * batch.len() as f64;
        }
        stats.epoch_mean_loss.push(epoch_loss / clean_ex.len() as f64);
    }
    Ok((adapter, stats))
}

fn check_dims_match(backbone: &BackboneParams, dims: &ModelDims) -> Result<()> {
    if backbone.vocab() != dims.vocab
        || backbone.hidden() != dims.hidden
        || backbone.classes() != dims.classes
    {
        return Err(Error::DimMismatch(format!(
            "backbone (V={}, d={}, K={}) does not match requested dims (V={}, d={}, K={})",
            backbone.vocab(),
            backbone.hidden(),
            backbone.classes(),
            dims.vocab,
            dims.hidden,
            dims.classes
        )));
    }
    Ok(())
}

/// Mean cross-entropy of a dataset under fixed parameters.
pub fn dataset_loss(
    backbone: &BackboneParams,
    adapter: Option<&AdapterDelta>,
    dataset: &LabeledDataset,
) -> Result<f64> {
    let mut total = 0.0;
    for it in &dataset.items {
        let tokens = tokenize(&it.text, backbone.vocab(), DEFAULT_MAX_LEN);
        total += example_loss(backbone, adapter, &tokens, it.label)?;
    }
    Ok(total / dataset.items.len() as f64)
}
