//! Toy dual encoders and the temperature-scaled patch–text similarity matrix.
//!
//! Both encoders are pre-norm transformers sharing [`Block`]. The image side
//! splits an image into `P×P` patches, projects them linearly and adds learned
//! position embeddings. The text side embeds `[BOS] w₁ … wₖ [EOS]` and keeps
//! the contextualized `[BOS]` token. Both outputs are projected into a common
//! space and L2-normalized; similarities are divided by `τ = exp(log_τ)`.
//!
//! Parameter containers are generic over their leaf type so that the same
//! structure holds tensors (`T = Tensor`), graph handles (`T = Var`) or
//! optimizer state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::image::Image;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub bos: usize,
    pub eos: usize,
    pub init_temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 3,
            patch_size: 8,
            image_dim: 64,
            text_dim: 64,
            embed_dim: 64,
            layers: 1,
            heads: 4,
            mlp_dim: 128,
            vocab_size: crate::synth::Vocab::SIZE,
            max_text_len: 8,
            bos: crate::synth::Vocab::BOS,
            eos: crate::synth::Vocab::EOS,
            init_temperature: 0.07,
        }
    }
}

impl ModelConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::PatchSize {
                height: self.image_size,
                width: self.image_size,
                patch: self.patch_size,
            });
        }
        if self.heads == 0 || self.image_dim % self.heads != 0 || self.text_dim % self.heads != 0 {
            return bad("model dims must be divisible by heads");
        }
        if self.bos == self.eos || self.bos >= self.vocab_size || self.eos >= self.vocab_size {
            return bad("BOS/EOS ids must be distinct and inside the vocabulary");
        }
        if !(self.init_temperature > 0.0) {
            return bad("temperature must be positive");
        }
        Ok(())
    }
}

/// Affine map `x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: Option<T>,
}

/// Per-feature gain and shift applied after layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm<T> {
    pub gain: T,
    pub shift: T,
}

/// One pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub norm1: Norm<T>,
    pub qkv: Linear<T>,
    pub attn_out: Linear<T>,
    pub norm2: Norm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoderParams<T> {
    pub patch_embed: Linear<T>,
    pub pos_embed: T,
    pub blocks: Vec<Block<T>>,
    pub norm: Norm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderParams<T> {
    pub token_embed: T,
    pub pos_embed: T,
    pub blocks: Vec<Block<T>>,
    pub norm: Norm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams<T> {
    pub image: T,
    pub text: T,
    pub log_temperature: T,
}

/// All learnable parameters of the dual encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = Tensor> {
    pub image: ImageEncoderParams<T>,
    pub text: TextEncoderParams<T>,
    pub proj: ProjectionParams<T>,
}

/// Structure-preserving traversal of parameter leaves in a fixed order.
pub trait Leaves<T> {
    type Mapped<U>;
    fn map_leaves<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> Self::Mapped<U>;
    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T));
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T> Leaves<T> for Linear<T> {
    type Mapped<U> = Linear<U>;
    fn map_leaves<U>(&self, p: &str, f: &mut impl FnMut(&str, &T) -> U) -> Linear<U> {
        Linear {
            weight: f(&join(p, "weight"), &self.weight),
            bias: self.bias.as_ref().map(|b| f(&join(p, "bias"), b)),
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&join(p, "weight"), &mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            f(&join(p, "bias"), b);
        }
    }
}

impl<T> Leaves<T> for Norm<T> {
    type Mapped<U> = Norm<U>;
    fn map_leaves<U>(&self, p: &str, f: &mut impl FnMut(&str, &T) -> U) -> Norm<U> {
        Norm {
            gain: f(&join(p, "gain"), &self.gain),
            shift: f(&join(p, "shift"), &self.shift),
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&join(p, "gain"), &mut self.gain);
        f(&join(p, "shift"), &mut self.shift);
    }
}

impl<T> Leaves<T> for Block<T> {
    type Mapped<U> = Block<U>;
    fn map_leaves<U>(&self, p: &str, f: &mut impl FnMut(&str, &T) -> U) -> Block<U> {
        Block {
            norm1: self.norm1.map_leaves(&join(p, "norm1"), f),
            qkv: self.qkv.map_leaves(&join(p, "qkv"), f),
            attn_out: self.attn_out.map_leaves(&join(p, "attn_out"), f),
            norm2: self.norm2.map_leaves(&join(p, "norm2"), f),
            fc1: self.fc1.map_leaves(&join(p, "fc1"), f),
            fc2: self.fc2.map_leaves(&join(p, "fc2"), f),
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(&str, &mut T)) {
        self.norm1.visit_mut(&join(p, "norm1"), f);
        self.qkv.visit_mut(&join(p, "qkv"), f);
        self.attn_out.visit_mut(&join(p, "attn_out"), f);
        self.norm2.visit_mut(&join(p, "norm2"), f);
        self.fc1.visit_mut(&join(p, "fc1"), f);
        self.fc2.visit_mut(&join(p, "fc2"), f);
    }
}

fn map_blocks<T, U>(blocks: &[Block<T>], p: &str, f: &mut impl FnMut(&str, &T) -> U) -> Vec<Block<U>> {
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| b.map_leaves(&join(p, &format!("blocks.{i}")), f))
        .collect()
}

fn visit_blocks<T>(blocks: &mut [Block<T>], p: &str, f: &mut impl FnMut(&str, &mut T)) {
    for (i, b) in blocks.iter_mut().enumerate() {
        b.visit_mut(&join(p, &format!("blocks.{i}")), f);
    }
}

impl<T> Leaves<T> for ImageEncoderParams<T> {
    type Mapped<U> = ImageEncoderParams<U>;
    fn map_leaves<U>(&self, p: &str, f: &mut impl FnMut(&str, &T) -> U) -> ImageEncoderParams<U> {
        ImageEncoderParams {
            patch_embed: self.patch_embed.map_leaves(&join(p, "patch_embed"), f),
            pos_embed: f(&join(p, "pos_embed"), &self.pos_embed),
            blocks: map_blocks(&self.blocks, p, f),
            norm: self.norm.map_leaves(&join(p, "norm"), f),
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(&str, &mut T)) {
        self.patch_embed.visit_mut(&join(p, "patch_embed"), f);
        f(&join(p, "pos_embed"), &mut self.pos_embed);
        visit_blocks(&mut self.blocks, p, f);
        self.norm.visit_mut(&join(p, "norm"), f);
    }
}

impl<T> Leaves<T> for TextEncoderParams<T> {
    type Mapped<U> = TextEncoderParams<U>;
    fn map_leaves<U>(&self, p: &str, f: &mut impl FnMut(&str, &T) -> U) -> TextEncoderParams<U> {
        TextEncoderParams {
            token_embed: f(&join(p, "token_embed"), &self.token_embed),
            pos_embed: f(&join(p, "pos_embed"), &self.pos_embed),
            blocks: map_blocks(&self.blocks, p, f),
            norm: self.norm.map_leaves(&join(p, "norm"), f),
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&join(p, "token_embed"), &mut self.token_embed);
        f(&join(p, "pos_embed"), &mut self.pos_embed);
        visit_blocks(&mut self.blocks, p, f);
        self.norm.visit_mut(&join(p, "norm"), f);
    }
}

impl<T> Leaves<T> for ProjectionParams<T> {
    type Mapped<U> = ProjectionParams<U>;
    fn map_leaves<U>(&self, p: &str, f: &mut impl FnMut(&str, &T) -> U) -> ProjectionParams<U> {
        ProjectionParams {
            image: f(&join(p, "image"), &self.image),
            text: f(&join(p, "text"), &self.text),
            log_temperature: f(&join(p, "log_temperature"), &self.log_temperature),
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&join(p, "image"), &mut self.image);
        f(&join(p, "text"), &mut self.text);
        f(&join(p, "log_temperature"), &mut self.log_temperature);
    }
}

impl<T> Leaves<T> for Model<T> {
    type Mapped<U> = Model<U>;
    fn map_leaves<U>(&self, p: &str, f: &mut impl FnMut(&str, &T) -> U) -> Model<U> {
        Model {
            image: self.image.map_leaves(&join(p, "image"), f),
            text: self.text.map_leaves(&join(p, "text"), f),
            proj: self.proj.map_leaves(&join(p, "proj"), f),
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(&str, &mut T)) {
        self.image.visit_mut(&join(p, "image"), f);
        self.text.visit_mut(&join(p, "text"), f);
        self.proj.visit_mut(&join(p, "proj"), f);
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("positive std");
        Tensor::from_fn(shape, |_| dist.sample(&mut self.rng))
    }

    fn linear(&mut self, fan_in: usize, fan_out: usize, bias: bool) -> Linear<Tensor> {
        let std = (1.0 / fan_in as f64).sqrt();
        Linear {
            weight: self.normal(&[fan_in, fan_out], std),
            bias: bias.then(|| Tensor::zeros(&[1, fan_out])),
        }
    }

    fn norm(&mut self, dim: usize) -> Norm<Tensor> {
        Norm {
            gain: Tensor::ones(&[1, dim]),
            shift: Tensor::zeros(&[1, dim]),
        }
    }

    fn block(&mut self, dim: usize, mlp: usize) -> Block<Tensor> {
        Block {
            norm1: self.norm(dim),
            qkv: self.linear(dim, 3 * dim, true),
            attn_out: self.linear(dim, dim, true),
            norm2: self.norm(dim),
            fc1: self.linear(dim, mlp, true),
            fc2: self.linear(mlp, dim, true),
        }
    }
}

impl Model<Tensor> {
    /// Randomly initialized parameters for `config`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let c = config;
        let patch_in = c.patch_size * c.patch_size * c.channels;
        let image = ImageEncoderParams {
            patch_embed: init.linear(patch_in, c.image_dim, true),
            pos_embed: init.normal(&[c.num_patches(), c.image_dim], 0.02),
            blocks: (0..c.layers).map(|_| init.block(c.image_dim, c.mlp_dim)).collect(),
            norm: init.norm(c.image_dim),
        };
        let text = TextEncoderParams {
            token_embed: init.normal(&[c.vocab_size, c.text_dim], 1.0),
            pos_embed: init.normal(&[c.max_text_len, c.text_dim], 0.02),
            blocks: (0..c.layers).map(|_| init.block(c.text_dim, c.mlp_dim)).collect(),
            norm: init.norm(c.text_dim),
        };
        let proj = ProjectionParams {
            image: init.linear(c.image_dim, c.embed_dim, false).weight,
            text: init.linear(c.text_dim, c.embed_dim, false).weight,
            log_temperature: Tensor::scalar(c.init_temperature.ln()),
        };
        Ok(Model { image, text, proj })
    }

    /// Registers every parameter as a gradient-receiving leaf.
    pub fn bind(&self, g: &mut Graph) -> Model<Var> {
        self.map_leaves("", &mut |_, t| g.param(t.clone()))
    }

    /// Registers every parameter as a constant (inference).
    pub fn bind_frozen(&self, g: &mut Graph) -> Model<Var> {
        self.map_leaves("", &mut |_, t| g.constant(t.clone()))
    }

    /// Named parameters in traversal order.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.map_leaves("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn temperature(&self) -> f64 {
        self.proj.log_temperature.data()[0].exp()
    }
}

impl Model<Var> {
    /// Gradients of a bound model, zeros for unreachable leaves.
    pub fn gradients(&self, grads: &Gradients) -> Model<Tensor> {
        self.map_leaves("", &mut |_, v| grads.get_or_zeros(*v))
    }
}

fn linear(g: &mut Graph, layer: &Linear<Var>, x: Var) -> Result<Var> {
    let y = g.matmul(x, layer.weight)?;
    Ok(match layer.bias {
        Some(b) => g.add_b(y, b)?,
        None => y,
    })
}

fn norm(g: &mut Graph, n: &Norm<Var>, x: Var) -> Result<Var> {
    let y = g.layer_norm(x, 1e-5)?;
    let y = g.mul_b(y, n.gain)?;
    Ok(g.add_b(y, n.shift)?)
}

/// Runs one pre-norm block over stacked rows. Attention only mixes rows
/// inside the same `(start, len)` segment.
fn block_forward(
    g: &mut Graph,
    block: &Block<Var>,
    x: Var,
    segments: &[(usize, usize)],
    heads: usize,
) -> Result<Var> {
    let dim = g.shape(x)[1];
    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let h = norm(g, &block.norm1, x)?;
    let qkv = linear(g, &block.qkv, h)?;
    let mut seg_outputs = Vec::with_capacity(segments.len());
    for &(start, len) in segments {
        let rows = g.slice(qkv, 0, start, len)?;
        let mut head_outputs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let q = g.slice(rows, 1, hd * head_dim, head_dim)?;
            let k = g.slice(rows, 1, dim + hd * head_dim, head_dim)?;
            let v = g.slice(rows, 1, 2 * dim + hd * head_dim, head_dim)?;
            let kt = g.transpose(k)?;
            let logits = g.matmul(q, kt)?;
            let logits = g.scale(logits, scale)?;
            let att = g.softmax(logits, 1)?;
            head_outputs.push(g.matmul(att, v)?);
        }
        seg_outputs.push(if heads == 1 { head_outputs[0] } else { g.concat(&head_outputs, 1)? });
    }
    let attended = if seg_outputs.len() == 1 { seg_outputs[0] } else { g.concat(&seg_outputs, 0)? };
    let attended = linear(g, &block.attn_out, attended)?;
    let x = g.add(x, attended)?;

    let h = norm(g, &block.norm2, x)?;
    let h = linear(g, &block.fc1, h)?;
    let h = g.gelu(h)?;
    let h = linear(g, &block.fc2, h)?;
    Ok(g.add(x, h)?)
}

/// Flattens an image into `N × (P·P·C)` patch rows in row-major patch order.
pub fn patchify(image: &Image, patch: usize) -> Result<Tensor> {
    if patch == 0 || image.height % patch != 0 || image.width % patch != 0 {
        return Err(Error::PatchSize {
            height: image.height,
            width: image.width,
            patch,
        });
    }
    let (gh, gw, c) = (image.height / patch, image.width / patch, image.channels);
    let mut data = Vec::with_capacity(image.data.len());
    for py in 0..gh {
        for px in 0..gw {
            for dy in 0..patch {
                let y = py * patch + dy;
                let row = (y * image.width + px * patch) * c;
                data.extend_from_slice(&image.data[row..row + patch * c]);
            }
        }
    }
    Ok(Tensor::new(vec![gh * gw, patch * patch * c], data)?)
}

/// Encodes a batch of images into stacked `(B·N) × D_I` patch tokens.
pub fn encode_images(
    g: &mut Graph,
    model: &Model<Var>,
    config: &ModelConfig,
    images: &[&Image],
) -> Result<Var> {
    let n = config.num_patches();
    let mut rows = Vec::new();
    for image in images {
        if image.height != config.image_size || image.width != config.image_size {
            return Err(Error::PatchSize {
                height: image.height,
                width: image.width,
                patch: config.patch_size,
            });
        }
        rows.extend(patchify(image, config.patch_size)?.into_data());
    }
    let b = images.len();
    let patch_dim = config.patch_size * config.patch_size * config.channels;
    let patches = g.constant(Tensor::new(vec![b * n, patch_dim], rows)?);
    let tokens = linear(g, &model.image.patch_embed, patches)?;
    let pos = g.broadcast_to(model.image.pos_embed, &[b, n, config.image_dim])?;
    let pos = g.reshape(pos, &[b * n, config.image_dim])?;
    let mut x = g.add(tokens, pos)?;
    let segments: Vec<_> = (0..b).map(|i| (i * n, n)).collect();
    for block in &model.image.blocks {
        x = block_forward(g, block, x, &segments, config.heads)?;
    }
    norm(g, &model.image.norm, x)
}

/// Encodes expressions (content token ids, without BOS/EOS) into `L × D_T`.
pub fn encode_texts(
    g: &mut Graph,
    model: &Model<Var>,
    config: &ModelConfig,
    expressions: &[&[usize]],
) -> Result<Var> {
    let mut ids = Vec::new();
    let mut positions = Vec::new();
    let mut segments = Vec::with_capacity(expressions.len());
    for expr in expressions {
        if expr.is_empty() {
            return Err(Error::EmptySequence);
        }
        if expr.len() + 2 > config.max_text_len {
            return Err(Error::Config(format!(
                "expression of {} tokens exceeds max_text_len {}",
                expr.len(),
                config.max_text_len
            )));
        }
        if let Some(&id) = expr.iter().find(|&&id| id >= config.vocab_size) {
            return Err(Error::UnknownToken {
                id,
                vocab: config.vocab_size,
            });
        }
        segments.push((ids.len(), expr.len() + 2));
        ids.push(config.bos);
        ids.extend_from_slice(expr);
        ids.push(config.eos);
        positions.extend(0..expr.len() + 2);
    }
    let tok = g.embedding(model.text.token_embed, &ids)?;
    let pos = g.embedding(model.text.pos_embed, &positions)?;
    let mut x = g.add(tok, pos)?;
    for block in &model.text.blocks {
        x = block_forward(g, block, x, &segments, config.heads)?;
    }
    let bos_rows = segments
        .iter()
        .map(|&(start, _)| g.slice(x, 0, start, 1))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let y = if bos_rows.len() == 1 { bos_rows[0] } else { g.concat(&bos_rows, 0)? };
    norm(g, &model.text.norm, y)
}

/// L2-normalizes every row, rejecting rows with norm below 1e-12.
pub fn normalize_rows(g: &mut Graph, x: Var) -> Result<Var> {
    let sq = g.mul(x, x)?;
    let ss = g.sum_axis(sq, 1)?;
    if let Some(row) = g.value(ss).data().iter().position(|&v| v < 1e-24) {
        return Err(Error::ZeroNorm { row });
    }
    let inv = g.powf(ss, -0.5)?;
    Ok(g.mul_b(x, inv)?)
}

/// Projects both sides, normalizes, and returns `S = X̂·Ŷᵀ / τ`.
pub fn similarity(
    g: &mut Graph,
    proj: &ProjectionParams<Var>,
    patches: Var,
    texts: Var,
) -> Result<Var> {
    let x = g.matmul(patches, proj.image)?;
    let x = normalize_rows(g, x)?;
    let y = g.matmul(texts, proj.text)?;
    let y = normalize_rows(g, y)?;
    cosine_over_temperature(g, x, y, proj.log_temperature)
}

/// `X̂·Ŷᵀ · exp(−log_τ)` for already normalized rows.
pub fn cosine_over_temperature(g: &mut Graph, x: Var, y: Var, log_temperature: Var) -> Result<Var> {
    let yt = g.transpose(y)?;
    let cos = g.matmul(x, yt)?;
    let neg = g.neg(log_temperature)?;
    let inv_tau = g.exp(neg)?;
    Ok(g.mul_b(cos, inv_tau)?)
}

/// Contextualized patch tokens (`N × D_I`) of a single image.
pub fn encode_image(image: &Image, model: &Model, config: &ModelConfig) -> Result<Tensor> {
    let mut g = Graph::new();
    let m = model.bind_frozen(&mut g);
    let x = encode_images(&mut g, &m, config, &[image])?;
    Ok(g.value(x).clone())
}

/// Contextualized `[BOS]` embedding (`D_T`) of one expression.
pub fn encode_text(tokens: &[usize], model: &Model, config: &ModelConfig) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let m = model.bind_frozen(&mut g);
    let y = encode_texts(&mut g, &m, config, &[tokens])?;
    Ok(g.value(y).data().to_vec())
}

/// Similarity matrix (`N × L`) from already encoded tokens.
pub fn similarity_matrix(x: &Tensor, y: &Tensor, proj: &ProjectionParams<Tensor>) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = proj.map_leaves("", &mut |_, t| g.constant(t.clone()));
    let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
    let s = similarity(&mut g, &p, xv, yv)?;
    Ok(g.value(s).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            image_size: 32,
            image_dim: 16,
            text_dim: 16,
            embed_dim: 8,
            mlp_dim: 32,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn image_tokens_have_one_row_per_patch() {
        let cfg = small();
        let model = Model::init(&cfg, 0).unwrap();
        let img = Image::new(32, 32, 3);
        let x = encode_image(&img, &model, &cfg).unwrap();
        assert_eq!(x.shape(), &[16, 16]);
    }

    #[test]
    fn rejects_indivisible_image() {
        let img = Image::new(30, 32, 3);
        assert!(matches!(patchify(&img, 8), Err(Error::PatchSize { .. })));
    }

    #[test]
    fn text_errors() {
        let cfg = small();
        let model = Model::init(&cfg, 0).unwrap();
        assert!(matches!(encode_text(&[], &model, &cfg), Err(Error::EmptySequence)));
        assert!(matches!(
            encode_text(&[cfg.vocab_size], &model, &cfg),
            Err(Error::UnknownToken { .. })
        ));
    }

    #[test]
    fn leaf_names_are_unique_and_ordered() {
        let model = Model::init(&small(), 0).unwrap();
        let names: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names[0], "image.patch_embed.weight");
        assert_eq!(names.last().unwrap(), "proj.log_temperature");
    }

    #[test]
    fn initial_temperature() {
        let model = Model::init(&small(), 0).unwrap();
        assert!((model.temperature() - 0.07).abs() < 1e-12);
    }
}
