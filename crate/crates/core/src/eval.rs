//! Mask prediction for whole scenes and mIoU reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::{bilinear_upsample, decode_cam, decode_mpa, decode_spa, PixelMasks, CAM_THRESHOLD};
use crate::encoders::{encode_images, encode_texts, similarity, Model, ModelConfig};
use crate::error::Result;
use crate::graph::Graph;
use crate::image::{Image, Mask};
use crate::pnm;
use crate::metrics::{mean_iou, record, EvalRecord};
use crate::pooling::{mpa_mask_matrix, score_matrix, spa_mask_matrix, Mechanism, PoolingConfig};
use crate::rng;
use crate::synth::{generate_scene, Split, SynthConfig, SynthScene};
use crate::tensor::Tensor;
use crate::trainer::{Mode, TrainConfig};

/// How a similarity matrix becomes pixel masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decoder {
    /// Normalized class-activation map thresholded at `beta` (GAP, GMP).
    Cam { beta: f64 },
    /// Single-label patch assignment, argmax per pixel.
    Spa { background: f64 },
    /// Multi-label patch assignment, each mask thresholded at 0.5.
    Mpa { background: f64 },
    /// `σ(upsampled S) > 0.5`, the fully-supervised read-out.
    Direct,
}

impl Decoder {
    pub fn for_config(cfg: &TrainConfig) -> Self {
        match cfg.mode {
            Mode::Full => Decoder::Direct,
            Mode::Weak => Self::for_mechanism(&cfg.pooling),
        }
    }

    pub fn for_mechanism(p: &PoolingConfig) -> Self {
        match p.mechanism {
            Mechanism::Gap | Mechanism::Gmp => Decoder::Cam { beta: CAM_THRESHOLD },
            Mechanism::Spa => Decoder::Spa {
                background: p.background,
            },
            Mechanism::Mpa => Decoder::Mpa {
                background: p.background,
            },
        }
    }
}

/// Evaluation scenes `0..count` of `split`, derived from `seed`.
pub fn eval_scenes(seed: u64, config: &SynthConfig, split: Split, count: usize) -> Result<Vec<SynthScene>> {
    (0..count)
        .map(|i| generate_scene(rng::derive_seed(seed, &[0xe7a1, i as u64]), config, split))
        .collect()
}

/// `N × L` similarity between the patches of `image` and `expressions`.
pub fn scene_similarity(model: &Model, config: &ModelConfig, image: &Image, expressions: &[&[usize]]) -> Result<Tensor> {
    let mut g = Graph::new();
    let m = model.bind_frozen(&mut g);
    let x = encode_images(&mut g, &m, config, &[image])?;
    let y = encode_texts(&mut g, &m, config, expressions)?;
    let s = similarity(&mut g, &m.proj, x, y)?;
    Ok(g.value(s).clone())
}

/// One pixel mask per column of `s`.
pub fn decode_similarity(s: &Tensor, decoder: Decoder, height: usize, width: usize) -> Result<Vec<PixelMasks>> {
    match decoder {
        Decoder::Cam { beta } => decode_cam(s, beta, height, width),
        Decoder::Spa { background } => decode_spa(&spa_mask_matrix(s, background)?.values, height, width),
        Decoder::Mpa { background } => decode_mpa(&mpa_mask_matrix(s, background)?.values, height, width),
        Decoder::Direct => {
            let (n, l) = s.dims2()?;
            let side = (n as f64).sqrt().round() as usize;
            (0..l)
                .map(|j| {
                    let up = bilinear_upsample(&s.column(j), side, side, height, width)?;
                    let soft: Vec<f64> = up.iter().map(|&v| crate::graph::sigmoid(v)).collect();
                    let binary = Mask {
                        height,
                        width,
                        data: soft.iter().map(|&v| v > 0.5).collect(),
                    };
                    Ok(PixelMasks {
                        expression: j,
                        soft,
                        binary,
                    })
                })
                .collect()
        }
    }
}

/// Image-level scores of each column under `pooling` (used to flag absent
/// expressions).
pub fn expression_scores(s: &Tensor, pooling: &PoolingConfig) -> Result<Vec<f64>> {
    Ok(score_matrix(s, pooling)?.0.z)
}

/// Predicted masks for every expression of a scene, queried jointly.
pub fn predict_scene(model: &Model, config: &ModelConfig, scene: &SynthScene, decoder: Decoder) -> Result<Vec<PixelMasks>> {
    let texts: Vec<&[usize]> = scene.expressions.iter().map(|e| e.tokens.as_slice()).collect();
    let s = scene_similarity(model, config, &scene.image, &texts)?;
    decode_similarity(&s, decoder, scene.image.height, scene.image.width)
}

/// IoU records for every (scene, expression) pair.
pub fn evaluate(model: &Model, config: &ModelConfig, scenes: &[SynthScene], decoder: Decoder) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for scene in scenes {
        let pred = predict_scene(model, config, scene, decoder)?;
        for ((e, p), gt) in scene.expressions.iter().zip(&pred).zip(scene.gt_masks()) {
            out.push(record(scene.seed, e.text(), e.kind, &p.binary, gt)?);
        }
    }
    Ok(out)
}

/// Writes each binary mask as `{prefix}_{j:02}.pgm` under `dir`.
pub fn write_masks(dir: &Path, prefix: &str, masks: &[PixelMasks]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    masks
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let path = dir.join(format!("{prefix}_{j:02}.pgm"));
            pnm::write(&path, &pnm::encode_mask(&m.binary))?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub pairs: usize,
    pub miou: f64,
}

/// Evaluation summary written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub mechanism: Mechanism,
    pub split: Split,
    pub eval_seed: u64,
    pub train_seed: u64,
    pub config_hash: String,
    pub pairs: usize,
    pub miou: f64,
    pub by_kind: BTreeMap<String, KindSummary>,
}

impl EvalReport {
    pub fn new(cfg: &TrainConfig, config_hash: String, split: Split, eval_seed: u64, records: &[EvalRecord]) -> Result<Self> {
        let mut by_kind: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
        for r in records {
            by_kind.entry(r.kind.label().to_string()).or_default().push(r.clone());
        }
        let by_kind = by_kind
            .into_iter()
            .map(|(k, rs)| {
                let miou = mean_iou(&rs)?;
                Ok((k, KindSummary { pairs: rs.len(), miou }))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            mode: cfg.mode,
            mechanism: cfg.pooling.mechanism,
            split,
            eval_seed,
            train_seed: cfg.seed,
            config_hash,
            pairs: records.len(),
            miou: mean_iou(records)?,
            by_kind,
        })
    }
}
