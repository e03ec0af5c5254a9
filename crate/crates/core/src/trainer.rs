//! Weakly- and fully-supervised training loops.
//!
//! Every random draw is derived from the run seed: model initialisation,
//! the scenes of iteration `n` (one stream per batch slot), positive
//! sampling and flip augmentation. Runs are bit-reproducible on one thread.

use serde::{Deserialize, Serialize};

use crate::decode::upsample_matrix;
use crate::encoders::{encode_images, encode_texts, similarity, Leaves, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::objectives::{dice, soft_margin};
use crate::optim::{poly_lr, sgd_step, AdamState, AdamW};
use crate::pooling::{image_text_scores, Mechanism, PoolingConfig};
use crate::rng;
use crate::synth::{build_batch, generate_scene, tfidf_labels, FirewallGuard, Split, SynthConfig, SynthScene};
use crate::tensor::Tensor;

const STREAM_INIT: u64 = 1;
const STREAM_SCENES: u64 = 2;
const STREAM_BATCH: u64 = 3;
const STREAM_FLIP: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Weak,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    AdamW,
}

/// Ground-truth pairing used by the weak loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelMode {
    /// 1 when the pooled expression is present in the image, else 0.
    Identity,
    /// Best tf-idf cosine to any expression present in the image.
    TfIdf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub pooling: PoolingConfig,
    pub optimizer: Optimizer,
    pub base_lr: f64,
    pub total_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub positives_mean: f64,
    pub labels: LabelMode,
    pub augment: bool,
    pub model: ModelConfig,
    pub synth: SynthConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Weak,
            pooling: PoolingConfig::default(),
            optimizer: Optimizer::AdamW,
            base_lr: 3e-3,
            total_iters: 2000,
            batch_size: 8,
            seed: 0,
            weight_decay: 1e-4,
            positives_mean: 3.0,
            labels: LabelMode::Identity,
            augment: true,
            model: ModelConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Weakly-supervised defaults for `mechanism`.
    pub fn weak(mechanism: Mechanism) -> Self {
        Self {
            pooling: PoolingConfig::with_mechanism(mechanism),
            ..Self::default()
        }
    }

    /// Fully-supervised defaults.
    pub fn full() -> Self {
        Self {
            mode: Mode::Full,
            optimizer: Optimizer::AdamW,
            base_lr: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if self.total_iters == 0 {
            return bad("total_iters must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.positives_mean > 0.0) {
            return bad("positives_mean must be positive");
        }
        if self.model.image_size != self.synth.image_size || self.model.patch_size != self.synth.patch_size {
            return bad("model and generator disagree on image or patch size");
        }
        self.pooling.validate()?;
        self.model.validate()?;
        self.synth.validate()
    }
}

/// Parameters and history of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub iteration: usize,
    pub losses: Vec<f64>,
}

/// Scenes seen at iteration `n`, before augmentation.
pub fn training_scenes(cfg: &TrainConfig, n: usize) -> Result<Vec<SynthScene>> {
    (0..cfg.batch_size)
        .map(|b| {
            let seed = rng::derive_seed(cfg.seed, &[STREAM_SCENES, n as u64, b as u64]);
            generate_scene(seed, &cfg.synth, Split::Train)
        })
        .collect()
}

fn flip_coin(cfg: &TrainConfig, n: usize, b: usize) -> bool {
    cfg.augment && rng::derive_seed(cfg.seed, &[STREAM_FLIP, n as u64, b as u64]) & 1 == 1
}

/// Runs the loop selected by `cfg.mode`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    match cfg.mode {
        Mode::Weak => train_weak(cfg),
        Mode::Full => train_full(cfg),
    }
}

fn init_model(cfg: &TrainConfig) -> Result<Model> {
    Model::init(&cfg.model, rng::derive_seed(cfg.seed, &[STREAM_INIT]))
}

fn check_finite(loss: f64, iteration: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { iteration, loss })
    }
}

/// Weakly-supervised training: image-level soft-margin loss over the pooled
/// expressions of each batch, poly-decayed updates with `cfg.optimizer`.
pub fn train_weak(cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.mode != Mode::Weak {
        return Err(Error::Config("train_weak needs mode = weak".into()));
    }
    cfg.validate()?;
    let _firewall = FirewallGuard::engage();
    let mut model = init_model(cfg)?;
    let mut updater = Updater::new(cfg, &model);
    let mut losses = Vec::with_capacity(cfg.total_iters);
    for n in 0..cfg.total_iters {
        let examples: Vec<_> = training_scenes(cfg, n)?
            .iter()
            .enumerate()
            .map(|(b, scene)| {
                let mut ex = scene.weak_view();
                if flip_coin(cfg, n, b) {
                    ex.image = ex.image.hflip();
                }
                ex
            })
            .collect();
        let batch = build_batch(
            &examples,
            rng::derive_seed(cfg.seed, &[STREAM_BATCH, n as u64]),
            cfg.positives_mean,
        )?;
        let labels = match cfg.labels {
            LabelMode::Identity => batch.labels.clone(),
            LabelMode::TfIdf => tfidf_labels(&batch),
        };

        let mut g = Graph::new();
        let m = model.bind(&mut g);
        let images: Vec<_> = examples.iter().map(|e| &e.image).collect();
        let x = encode_images(&mut g, &m, &cfg.model, &images)?;
        let texts: Vec<&[usize]> = batch.pool.iter().map(|e| e.tokens.as_slice()).collect();
        let y = encode_texts(&mut g, &m, &cfg.model, &texts)?;
        let s_all = similarity(&mut g, &m.proj, x, y)?;
        let patches = cfg.model.num_patches();
        let mut per_image = Vec::with_capacity(examples.len());
        for (b, label) in labels.iter().enumerate() {
            let s = g.slice(s_all, 0, b * patches, patches)?;
            let pooled = image_text_scores(&mut g, s, &cfg.pooling)?;
            per_image.push(soft_margin(&mut g, pooled.z, label)?);
        }
        let loss = mean_of(&mut g, &per_image)?;
        let value = g.value(loss).item()?;
        check_finite(value, n)?;
        losses.push(value);

        let grads = m.gradients(&g.backward(loss)?);
        updater.step(&mut model, &grads, poly_lr(cfg.base_lr, n, cfg.total_iters)?)?;
    }
    Ok(TrainOutcome {
        model,
        iteration: cfg.total_iters,
        losses,
    })
}

/// Fully-supervised training: Dice loss between `σ(U·S)` and ground-truth
/// masks over each image's sampled positives, poly-decayed updates with
/// `cfg.optimizer`.
pub fn train_full(cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.mode != Mode::Full {
        return Err(Error::Config("train_full needs mode = full".into()));
    }
    cfg.validate()?;
    let mut model = init_model(cfg)?;
    let mut updater = Updater::new(cfg, &model);
    let grid = cfg.model.grid();
    let side = cfg.model.image_size;
    let upsample = upsample_matrix(grid, grid, side, side);
    let mut losses = Vec::with_capacity(cfg.total_iters);
    for n in 0..cfg.total_iters {
        let scenes: Vec<_> = training_scenes(cfg, n)?
            .iter()
            .enumerate()
            .map(|(b, s)| crate::synth::hflip_augment(s, flip_coin(cfg, n, b)))
            .collect();
        let examples: Vec<_> = scenes.iter().map(SynthScene::weak_view).collect();
        let batch = build_batch(
            &examples,
            rng::derive_seed(cfg.seed, &[STREAM_BATCH, n as u64]),
            cfg.positives_mean,
        )?;

        let mut g = Graph::new();
        let m = model.bind(&mut g);
        let images: Vec<_> = scenes.iter().map(|s| &s.image).collect();
        let x = encode_images(&mut g, &m, &cfg.model, &images)?;
        let texts: Vec<&[usize]> = batch.pool.iter().map(|e| e.tokens.as_slice()).collect();
        let y = encode_texts(&mut g, &m, &cfg.model, &texts)?;
        let s_all = similarity(&mut g, &m.proj, x, y)?;
        let u = g.constant(upsample.clone());
        let patches = cfg.model.num_patches();
        let mut per_image = Vec::with_capacity(scenes.len());
        for (b, scene) in scenes.iter().enumerate() {
            let s = g.slice(s_all, 0, b * patches, patches)?;
            let cols = batch.sampled[b]
                .iter()
                .map(|&j| g.slice(s, 1, j, 1))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let s = if cols.len() == 1 { cols[0] } else { g.concat(&cols, 1)? };
            let pixels = g.matmul(u, s)?;
            let probs = g.sigmoid(pixels)?;
            let target = positive_targets(scene, &batch.pool, &batch.sampled[b])?;
            per_image.push(dice(&mut g, probs, &target)?);
        }
        let loss = mean_of(&mut g, &per_image)?;
        let value = g.value(loss).item()?;
        check_finite(value, n)?;
        losses.push(value);

        let grads = m.gradients(&g.backward(loss)?);
        updater.step(&mut model, &grads, poly_lr(cfg.base_lr, n, cfg.total_iters)?)?;
    }
    Ok(TrainOutcome {
        model,
        iteration: cfg.total_iters,
        losses,
    })
}

/// `(H·W) × k` binary targets, one column per sampled pool expression.
fn positive_targets(
    scene: &SynthScene,
    pool: &[crate::synth::Expression],
    sampled: &[usize],
) -> Result<Tensor> {
    let gt = scene.gt_masks();
    let masks = sampled
        .iter()
        .map(|&j| {
            scene
                .expression_index(&pool[j].tokens)
                .map(|i| &gt[i])
                .ok_or_else(|| crate::error::invalid("train_full", "sampled expression missing from scene"))
        })
        .collect::<Result<Vec<_>>>()?;
    let pixels = scene.image.height * scene.image.width;
    let k = masks.len();
    Ok(Tensor::from_fn(&[pixels, k], |i| {
        f64::from(u8::from(masks[i % k].data[i / k]))
    }))
}

fn mean_of(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(g.scale(total, 1.0 / terms.len() as f64)?)
}

struct Updater {
    optimizer: Optimizer,
    weight_decay: f64,
    adam: AdamW,
    state: Vec<AdamState>,
}

impl Updater {
    fn new(cfg: &TrainConfig, model: &Model) -> Self {
        let state = match cfg.optimizer {
            Optimizer::Sgd => Vec::new(),
            Optimizer::AdamW => model.named().iter().map(|(_, t)| AdamState::new(t)).collect(),
        };
        Self {
            optimizer: cfg.optimizer,
            weight_decay: cfg.weight_decay,
            adam: AdamW {
                weight_decay: cfg.weight_decay,
                ..AdamW::default()
            },
            state,
        }
    }

    fn step(&mut self, model: &mut Model, grads: &Model, lr: f64) -> Result<()> {
        match self.optimizer {
            Optimizer::Sgd => apply(model, grads, |p, g| sgd_step(p, g, lr, self.weight_decay)),
            Optimizer::AdamW => {
                let mut slot = 0;
                let (adam, state) = (&self.adam, &mut self.state);
                apply(model, grads, |p, g| {
                    let r = adam.step(p, g, &mut state[slot], lr);
                    slot += 1;
                    r
                })
            }
        }
    }
}

/// Applies `update` to every parameter with its gradient, in traversal order.
fn apply(
    model: &mut Model,
    grads: &Model,
    mut update: impl FnMut(&mut Tensor, &Tensor) -> Result<()>,
) -> Result<()> {
    let flat: Vec<Tensor> = grads.named().into_iter().map(|(_, t)| t).collect();
    let mut i = 0;
    let mut result = Ok(());
    model.visit_mut("", &mut |_, p| {
        if result.is_ok() {
            result = update(p, &flat[i]);
        }
        i += 1;
    });
    result
}
